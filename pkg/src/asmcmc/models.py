"""Target models: Gaussian prior times a likelihood split into tempering stages.

Every model exposes ``log_likelihood_stages(theta)``, the cumulative
log-likelihoods ``log l_{1:t}`` for ``t = 0..T`` in one evaluation, so samplers
can move between tempered targets without re-evaluating the likelihood.
"""

import numpy as np

from .core import as_generator
from .subspace import LOG_2PI, Gaussian

TEMPERING_MODES = ("data", "anneal")


def stage_boundaries(n, num_stages):
    """Cumulative data counts ``[0, m_1, ..., n]`` for equal blocks of size ceil(n/T)."""
    size = -(-n // num_stages)
    return np.minimum(np.arange(num_stages + 1) * size, n)


class TargetModel:
    """Base class for models with a Gaussian prior and staged likelihood.

    Subclasses implement ``pointwise_log_likelihood`` (one column per datum) or
    override ``block_log_likelihoods`` with something cheaper.

    Parameters
    ----------
    prior_mean, prior_cov : array_like
        Gaussian prior on theta.
    data : array_like
        Observations y, in the order used for data tempering.
    num_stages : int
        Number of likelihood factors T.
    tempering : {"data", "anneal"}
        ``data`` splits y into T blocks; ``anneal`` uses ``l^(t/T)``.
    """

    name = "model"

    def __init__(self, prior_mean, prior_cov, data, num_stages=6, tempering="data"):
        if tempering not in TEMPERING_MODES:
            raise ValueError(f"unknown tempering mode {tempering!r}")
        if num_stages < 1:
            raise ValueError("need at least one stage")
        self.prior = Gaussian(prior_mean, prior_cov)
        self.data = np.asarray(data, dtype=float).ravel()
        self.num_stages = int(num_stages)
        self.tempering = tempering
        self.boundaries = stage_boundaries(self.data.size, self.num_stages)

    @property
    def d(self):
        return self.prior.dim

    def log_prior(self, theta):
        return self.prior.logpdf(theta)

    def pointwise_log_likelihood(self, theta):
        raise NotImplementedError

    def block_log_likelihoods(self, theta):
        """Log-likelihood of each data block, shape ``(..., T)``."""
        pw = self.pointwise_log_likelihood(theta)
        cs = np.concatenate([np.zeros(pw.shape[:-1] + (1,)), np.cumsum(pw, axis=-1)], axis=-1)
        return np.diff(cs[..., self.boundaries], axis=-1)

    def log_likelihood_stages(self, theta):
        """Cumulative log-likelihoods ``log l_{1:t}``, t = 0..T, shape ``(..., T+1)``."""
        theta = np.asarray(theta, dtype=float)
        if self.tempering == "data":
            blocks = self.block_log_likelihoods(theta)
            out = np.zeros(blocks.shape[:-1] + (self.num_stages + 1,))
            np.cumsum(blocks, axis=-1, out=out[..., 1:])
            return out
        full = self.full_log_likelihood(theta)
        eta = np.arange(self.num_stages + 1) / self.num_stages
        return np.asarray(full)[..., None] * eta

    def full_log_likelihood(self, theta):
        return np.sum(self.block_log_likelihoods(np.asarray(theta, dtype=float)), axis=-1)

    def log_likelihood(self, theta, t=None):
        """``log l_{1:t}(theta)``; ``t=None`` means the full likelihood."""
        if t is None or t == self.num_stages:
            return self.full_log_likelihood(theta)
        if not 0 <= t <= self.num_stages:
            raise ValueError(f"stage {t} outside 0..{self.num_stages}")
        return self.log_likelihood_stages(theta)[..., t]

    def grad_log_likelihood(self, theta):
        """Central finite differences; analytic models override this."""
        return finite_difference_gradient(self.full_log_likelihood, theta)


def finite_difference_gradient(f, theta, rel_step=1e-5):
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.shape[-1]):
        h = rel_step * (1.0 + np.abs(theta[..., j]))
        up, down = theta.copy(), theta.copy()
        up[..., j] += h
        down[..., j] -= h
        grad[..., j] = (f(up) - f(down)) / (2.0 * h)
    return grad


class ScalarObservationModel(TargetModel):
    """``y_j ~ N(f(theta), noise_var)`` for a scalar mean function ``f``.

    The likelihood only touches the data through per-block counts, sums and
    sums of squares.
    """

    def __init__(self, prior_mean, prior_cov, data, noise_var=1.0, **kwargs):
        super().__init__(prior_mean, prior_cov, data, **kwargs)
        self.noise_var = float(noise_var)
        b = self.boundaries
        csum = np.concatenate([[0.0], np.cumsum(self.data)])
        csq = np.concatenate([[0.0], np.cumsum(self.data ** 2)])
        self._m = np.diff(b).astype(float)
        self._sy = np.diff(csum[b])
        self._syy = np.diff(csq[b])

    def mean_function(self, theta):
        raise NotImplementedError

    def mean_gradient(self, theta):
        raise NotImplementedError

    def pointwise_log_likelihood(self, theta):
        f = np.asarray(self.mean_function(theta))[..., None]
        return -0.5 * (LOG_2PI + np.log(self.noise_var)) - 0.5 * (self.data - f) ** 2 / self.noise_var

    def block_log_likelihoods(self, theta):
        f = np.asarray(self.mean_function(theta))[..., None]
        quad = self._syy - 2.0 * f * self._sy + self._m * f * f
        return -0.5 * self._m * (LOG_2PI + np.log(self.noise_var)) - 0.5 * quad / self.noise_var

    def grad_log_likelihood(self, theta):
        f = np.asarray(self.mean_function(theta))
        score = (self.data.sum() - self.data.size * f) / self.noise_var
        return score[..., None] * self.mean_gradient(theta)


class ConjugateGaussianModel(ScalarObservationModel):
    """Linear-Gaussian model ``y_j ~ N(c^T theta, noise_var)``; closed-form posterior."""

    name = "conjugate"

    def __init__(self, c, data, noise_var=1.0, prior_mean=None, prior_cov=None, **kwargs):
        c = np.asarray(c, dtype=float)
        d = c.shape[0]
        prior_mean = np.zeros(d) if prior_mean is None else prior_mean
        prior_cov = np.eye(d) if prior_cov is None else prior_cov
        super().__init__(prior_mean, prior_cov, data, noise_var=noise_var, **kwargs)
        self.c = c

    def mean_function(self, theta):
        return np.asarray(theta, dtype=float) @ self.c

    def mean_gradient(self, theta):
        return np.broadcast_to(self.c, np.shape(theta)).copy()

    def posterior(self, n_data=None):
        """Posterior mean and covariance of theta given the first ``n_data`` points."""
        y = self.data if n_data is None else self.data[:n_data]
        P0 = np.linalg.inv(self.prior.cov)
        P = P0 + np.outer(self.c, self.c) * y.size / self.noise_var
        cov = np.linalg.inv(P)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (P0 @ self.prior.mean + self.c * y.sum() / self.noise_var)
        return mean, cov

    def log_marginal(self, n_data=None):
        y = self.data if n_data is None else self.data[:n_data]
        mean = float(self.c @ self.prior.mean)
        var = float(self.c @ self.prior.cov @ self.c)
        return gaussian_scalar_marginal(y, mean, var, self.noise_var)

    def log_marginal_given_active(self, a, factorization, t=None):
        """Exact ``log l_{1:t,a}(a)``: the likelihood integrated over ``p_{i|a}``."""
        split = factorization.split
        cond = factorization.inactive_given_active
        g = split.B_i.T @ self.c
        mean = float(self.c @ (split.B_a @ np.asarray(a, dtype=float)) + g @ cond.mean(a))
        var = float(g @ cond.cov @ g)
        n = self.data.size if t is None else int(self.boundaries[t])
        return gaussian_scalar_marginal(self.data[:n], mean, var, self.noise_var)

    def conditional_active_posterior(self, i, factorization):
        """Gaussian ``pi(a | i, y)`` (mean, cov) under the split in ``factorization``."""
        split = factorization.split
        cond = factorization.active_given_inactive
        i = np.asarray(i, dtype=float)
        ca = split.B_a.T @ self.c
        offset = float(self.c @ (split.B_i @ i))
        P0 = np.linalg.inv(cond.cov)
        n = self.data.size
        P = P0 + np.outer(ca, ca) * n / self.noise_var
        cov = np.linalg.inv(P)
        mean = cov @ (P0 @ cond.mean(i) + ca * (self.data.sum() - n * offset) / self.noise_var)
        return mean, cov


def conjugate_log_marginal(model):
    return model.log_marginal()


def gaussian_scalar_marginal(y, mean, var, noise_var):
    """log N(y; mean 1, var 11^T + noise_var I) via Sherman-Morrison."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        return 0.0
    if noise_var <= 0 or var < 0:
        raise ValueError("singular marginal covariance")
    r = y - mean
    denom = noise_var + n * var
    quad = (r @ r - var * r.sum() ** 2 / denom) / noise_var
    log_det = (n - 1) * np.log(noise_var) + np.log(denom)
    return float(-0.5 * (n * LOG_2PI + log_det + quad))


class PlaneModel(ConjugateGaussianModel):
    """``y ~ N(sum(theta), 1)`` with an isotropic prior; the likelihood is flat on hyperplanes."""

    name = "plane"

    def __init__(self, data, d=25, prior_var=5000.0, **kwargs):
        super().__init__(np.ones(d), data, noise_var=1.0, prior_mean=np.zeros(d),
                         prior_cov=prior_var * np.eye(d), **kwargs)
        self.prior_var = float(prior_var)


class BananaModel(ScalarObservationModel):
    """``y ~ N(sum(theta) + b * sum_{j<=k} theta_j^2, 1)``; the plane bent along k axes."""

    name = "banana"

    def __init__(self, data, d=25, k=3, b=0.001, prior_var=5000.0, **kwargs):
        if not 1 <= k <= d:
            raise ValueError("curvature count k must lie in [1, d]")
        super().__init__(np.zeros(d), prior_var * np.eye(d), data, noise_var=1.0, **kwargs)
        self.k = int(k)
        self.b = float(b)
        self.prior_var = float(prior_var)

    def mean_function(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta.sum(axis=-1) + self.b * np.sum(theta[..., : self.k] ** 2, axis=-1)

    def mean_gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        g = np.ones_like(theta)
        g[..., : self.k] += 2.0 * self.b * theta[..., : self.k]
        return g


class MixtureModel(TargetModel):
    """``y ~ 0.5 N(theta_1 + theta_2, 1) + 0.5 N(theta_3 + theta_4, 1)``."""

    name = "mixture"

    def __init__(self, data, prior_var=25.0, **kwargs):
        super().__init__(np.zeros(4), prior_var * np.eye(4), data, **kwargs)
        self.prior_var = float(prior_var)

    def _component_terms(self, theta):
        theta = np.asarray(theta, dtype=float)
        m1 = (theta[..., 0] + theta[..., 1])[..., None]
        m2 = (theta[..., 2] + theta[..., 3])[..., None]
        c = np.log(0.5) - 0.5 * LOG_2PI
        return c - 0.5 * (self.data - m1) ** 2, c - 0.5 * (self.data - m2) ** 2, m1, m2

    def pointwise_log_likelihood(self, theta):
        l1, l2, _, _ = self._component_terms(theta)
        return np.logaddexp(l1, l2)

    def grad_log_likelihood(self, theta):
        l1, l2, m1, m2 = self._component_terms(theta)
        r1 = np.exp(l1 - np.logaddexp(l1, l2))
        g1 = np.sum(r1 * (self.data - m1), axis=-1)
        g2 = np.sum((1.0 - r1) * (self.data - m2), axis=-1)
        return np.stack([g1, g1, g2, g2], axis=-1)


class ConstantModel(TargetModel):
    """Likelihood that ignores theta: ``log l_s = log_c[s]`` for each stage."""

    name = "constant"

    def __init__(self, d, log_c=0.0, num_stages=1, prior_var=1.0, prior_mean=None):
        prior_mean = np.zeros(d) if prior_mean is None else prior_mean
        super().__init__(prior_mean, prior_var * np.eye(d), np.zeros(0), num_stages=num_stages)
        self.log_c = np.broadcast_to(np.asarray(log_c, dtype=float), (num_stages,)).copy()

    def block_log_likelihoods(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.broadcast_to(self.log_c, theta.shape[:-1] + (self.num_stages,)).copy()

    def grad_log_likelihood(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))


class CountingModel:
    """Proxy that counts likelihood evaluations, one per point evaluated."""

    def __init__(self, model):
        self.model = model
        self.evaluations = 0

    def __getattr__(self, name):
        return getattr(self.model, name)

    def _count(self, theta):
        theta = np.asarray(theta)
        self.evaluations += int(np.prod(theta.shape[:-1], dtype=int))

    def log_likelihood_stages(self, theta):
        self._count(theta)
        return self.model.log_likelihood_stages(theta)

    def log_likelihood(self, theta, t=None):
        self._count(theta)
        return self.model.log_likelihood(theta, t)

    def full_log_likelihood(self, theta):
        self._count(theta)
        return self.model.full_log_likelihood(theta)


def counted(model):
    return model if isinstance(model, CountingModel) else CountingModel(model)


def generate_dataset(kind, n=100, seed=0):
    """Synthetic observations: N(0, 1) for plane/banana, 0.5N(-5,1) + 0.5N(5,1) for mixture."""
    rng = as_generator(seed)
    if kind in ("plane", "banana", "conjugate"):
        return rng.standard_normal(n)
    if kind == "mixture":
        signs = np.where(rng.random(n) < 0.5, -5.0, 5.0)
        return signs + rng.standard_normal(n)
    raise ValueError(f"no data generator for model {kind!r}")


def save_dataset(y, path):
    np.savetxt(path, np.asarray(y, dtype=float), fmt="%.17g")


def load_dataset(path):
    return np.atleast_1d(np.loadtxt(path, dtype=float))


MODEL_CLASSES = {
    "plane": PlaneModel,
    "banana": BananaModel,
    "mixture": MixtureModel,
}


def build_model(name, data, **params):
    try:
        cls = MODEL_CLASSES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_CLASSES)}") from None
    return cls(data, **params)
