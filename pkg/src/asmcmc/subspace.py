"""Active subspace identification and the (active, inactive) reparameterisation.

The parameter is written ``theta = B_a a + B_i i`` with ``[B_a, B_i]``
orthonormal, so the change of variables has unit Jacobian and a Gaussian prior
on ``theta`` factorises exactly into ``p_a(a) p_{i|a}(i | a)``.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import as_generator

LOG_2PI = np.log(2.0 * np.pi)


class SubspaceError(ValueError):
    pass


class Gaussian:
    """Multivariate normal with cached Cholesky factor.

    ``logpdf`` and ``sample`` broadcast over leading axes.
    """

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (self.dim, self.dim):
            raise SubspaceError(f"covariance shape {cov.shape} does not match mean length {self.dim}")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise SubspaceError("covariance is not symmetric")
        self.cov = 0.5 * (cov + cov.T)
        try:
            self.chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise SubspaceError("covariance is not symmetric positive definite") from exc
        self.log_det = 2.0 * np.sum(np.log(np.diag(self.chol)))

    @property
    def dim(self):
        return self.mean.shape[0]

    def logpdf(self, x, mean=None):
        mean = self.mean if mean is None else mean
        r = np.asarray(x, dtype=float) - mean
        flat = r.reshape(-1, self.dim)
        z = solve_triangular(self.chol, flat.T, lower=True).T
        out = -0.5 * (np.sum(z * z, axis=-1) + self.dim * LOG_2PI + self.log_det)
        return out.reshape(r.shape[:-1]) if r.ndim > 1 else float(out[0])

    def sample(self, rng, size=None, mean=None):
        mean = self.mean if mean is None else mean
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        eps = rng.standard_normal(shape + (self.dim,))
        return mean + eps @ self.chol.T


class GaussianConditional:
    """``x2 | x1 ~ N(m2 + G (x1 - m1), S)`` for jointly Gaussian blocks."""

    def __init__(self, m1, m2, gain, cov):
        self.m1 = np.asarray(m1, dtype=float)
        self.m2 = np.asarray(m2, dtype=float)
        self.gain = np.asarray(gain, dtype=float)
        self.noise = Gaussian(np.zeros_like(self.m2), cov)

    @property
    def cov(self):
        return self.noise.cov

    def mean(self, x1):
        return self.m2 + (np.asarray(x1, dtype=float) - self.m1) @ self.gain.T

    def logpdf(self, x2, x1):
        return self.noise.logpdf(np.asarray(x2, dtype=float) - self.mean(x1))

    def sample(self, x1, rng, size=None):
        return self.noise.sample(rng, size, mean=self.mean(x1))


@dataclass(frozen=True)
class SubspaceSplit:
    """Orthonormal split of R^d into active and inactive directions.

    Attributes
    ----------
    B_a : ndarray, shape (d, d_a)
    B_i : ndarray, shape (d, d_i)
    eigenvalues : ndarray, shape (d,)
        Nonincreasing spectrum the split was cut from.
    """

    B_a: np.ndarray
    B_i: np.ndarray
    eigenvalues: np.ndarray

    @property
    def d(self):
        return self.B_a.shape[0]

    @property
    def d_a(self):
        return self.B_a.shape[1]

    @property
    def d_i(self):
        return self.B_i.shape[1]

    @property
    def basis(self):
        return np.hstack([self.B_a, self.B_i])

    def to_theta(self, a, i):
        a = np.asarray(a, dtype=float)
        i = np.asarray(i, dtype=float)
        if a.shape[-1] != self.d_a or i.shape[-1] != self.d_i:
            raise SubspaceError(
                f"expected active/inactive lengths ({self.d_a}, {self.d_i}), "
                f"got ({a.shape[-1]}, {i.shape[-1]})"
            )
        return a @ self.B_a.T + i @ self.B_i.T

    def from_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.d:
            raise SubspaceError(f"expected theta of length {self.d}, got {theta.shape[-1]}")
        return theta @ self.B_a, theta @ self.B_i

    def swapped(self):
        """The same split with active and inactive roles exchanged."""
        return SubspaceSplit(self.B_i, self.B_a, self.eigenvalues)

    def with_active_dim(self, d_a):
        basis = self.basis
        _check_active_dim(d_a, self.d)
        return SubspaceSplit(basis[:, :d_a].copy(), basis[:, d_a:].copy(), self.eigenvalues)

    def to_dict(self):
        return {
            "d": self.d,
            "d_a": self.d_a,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            # column-major: column j of [B_a, B_i] is entries [j*d:(j+1)*d]
            "basis_column_major": [float(v) for v in self.basis.T.ravel()],
        }

    @classmethod
    def from_dict(cls, data):
        d, d_a = int(data["d"]), int(data["d_a"])
        basis = np.asarray(data["basis_column_major"], dtype=float).reshape(d, d).T
        return cls(basis[:, :d_a].copy(), basis[:, d_a:].copy(),
                   np.asarray(data["eigenvalues"], dtype=float))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _check_active_dim(d_a, d):
    if not 1 <= d_a <= d - 1:
        raise SubspaceError(f"active dimension must lie in [1, {d - 1}], got {d_a}")


def estimate_gradient_matrix(model, n_samples, rng=None):
    """Monte Carlo estimate of E_prior[grad log l grad log l^T].

    Gradients are taken at ``n_samples`` i.i.d. prior draws. A non-finite
    gradient raises with the offending point in the message.
    """
    if n_samples < 1:
        raise SubspaceError("need at least one gradient sample")
    rng = as_generator(rng)
    theta = model.prior.sample(rng, n_samples)
    grads = np.atleast_2d(model.grad_log_likelihood(theta))
    bad = ~np.all(np.isfinite(grads), axis=1)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SubspaceError(f"non-finite gradient at sample {k}: theta={theta[k].tolist()}")
    C = grads.T @ grads / n_samples
    return 0.5 * (C + C.T)


def split_from_matrix(C, d_a):
    """Cut the eigendecomposition of ``C`` into the top ``d_a`` directions and the rest."""
    C = np.asarray(C, dtype=float)
    d = C.shape[0]
    _check_active_dim(d_a, d)
    evals, evecs = np.linalg.eigh(0.5 * (C + C.T))
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = 1e-10 * max(1.0, abs(evals[0]))
    if evals[-1] < -tol:
        raise SubspaceError(f"matrix has eigenvalue {evals[-1]:.3e}; gradients look broken")
    evals = np.where(evals < 0.0, 0.0, evals)
    return SubspaceSplit(evecs[:, :d_a].copy(), evecs[:, d_a:].copy(), evals)


def axis_split(d, d_a):
    """Split along coordinate axes: the first ``d_a`` axes are active."""
    _check_active_dim(d_a, d)
    eye = np.eye(d)
    return SubspaceSplit(eye[:, :d_a].copy(), eye[:, d_a:].copy(), np.zeros(d))


def split_from_direction(v, d=None):
    """One-dimensional active subspace spanned by ``v``, completed by QR."""
    v = np.asarray(v, dtype=float)
    d = v.shape[0] if d is None else d
    M = np.eye(d)
    M[:, 0] = v / np.linalg.norm(v)
    Q, _ = np.linalg.qr(M)
    Q[:, 0] *= np.sign(Q[:, 0] @ v)
    return SubspaceSplit(Q[:, :1].copy(), Q[:, 1:].copy(), np.zeros(d))


class GaussianPriorFactorization:
    """Gaussian prior expressed in (a, i) coordinates.

    Provides ``p_a``, ``p_{i|a}`` and, for the inverted samplers, ``p_i`` and
    ``p_{a|i}``; all are evaluable pointwise and samplable.
    """

    def __init__(self, mean, cov, split):
        self.split = split
        self.prior = mean if isinstance(mean, Gaussian) else Gaussian(mean, cov)
        B = split.basis
        m = B.T @ self.prior.mean
        S = B.T @ self.prior.cov @ B
        S = 0.5 * (S + S.T)
        ka = split.d_a
        m_a, m_i = m[:ka], m[ka:]
        S_aa, S_ai, S_ii = S[:ka, :ka], S[:ka, ka:], S[ka:, ka:]
        self.active = Gaussian(m_a, S_aa)
        self.inactive = Gaussian(m_i, S_ii)
        gain_ia = np.linalg.solve(S_aa, S_ai).T
        gain_ai = np.linalg.solve(S_ii, S_ai.T).T
        self.inactive_given_active = GaussianConditional(m_a, m_i, gain_ia, S_ii - gain_ia @ S_ai)
        self.active_given_inactive = GaussianConditional(m_i, m_a, gain_ai, S_aa - gain_ai @ S_ai.T)

    # short aliases
    def log_p_a(self, a):
        return self.active.logpdf(a)

    def log_p_i_given_a(self, i, a):
        return self.inactive_given_active.logpdf(i, a)

    def log_joint(self, a, i):
        return self.log_p_a(a) + self.log_p_i_given_a(i, a)

    def swapped(self):
        """Factorisation with the roles of active and inactive exchanged."""
        return GaussianPriorFactorization(self.prior, None, self.split.swapped())


def factorize_gaussian_prior(mean, cov, split):
    return GaussianPriorFactorization(mean, cov, split)
