"""SMC samplers over one block of coordinates with the other block held fixed.

``run_inactive_smc`` estimates the marginal likelihood of an active point by
moving inactive particles through ``p_{i|a}(i|a) l_{1:s}(B_a a + B_i i)``,
``s = 0..t``. ``run_conditional_smc`` is the particle-Gibbs kernel on active
coordinates: one retained trajectory is carried through unchanged while the
remaining particles are simulated around it.

Particles cache the full vector of cumulative stage log-likelihoods at their
current position, so each particle costs one likelihood evaluation at
initialisation and one per MH move.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import DegenerateWeightsError, as_generator, log_sum_exp_mean, normalize_log_weights
from .estimators import WeightedParticleSet, ess

RW_SCALE = 2.38


class DegenerateSmcError(DegenerateWeightsError):
    def __init__(self, stage):
        super().__init__(f"all particle weights are zero at stage {stage}")
        self.stage = stage


def stratified_resample(normalized, n, rng):
    """Ancestor indices from stratified resampling: one uniform per stratum."""
    w = np.asarray(normalized, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("stratified_resample needs a normalised weight vector")
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = (np.arange(n) + rng.random(n)) / n
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


def multinomial_resample(normalized, n, rng):
    w = np.asarray(normalized, dtype=float)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), w.size - 1)


@dataclass
class BlockTarget:
    """Tempered targets on one coordinate block: ``prior(x) l_{1:s}(embed(x))``.

    ``prior`` is a Gaussian with ``sample(rng, size)`` and ``logpdf(x)``;
    ``log_lik_stages`` maps ``(n, k)`` points to ``(n, T+1)`` cumulative
    log-likelihoods.
    """

    prior: object
    log_lik_stages: object

    @property
    def dim(self):
        return self.prior.dim


class _ShiftedPrior:
    """Gaussian conditional frozen at a value of the other block."""

    def __init__(self, cond, given):
        self.cond = cond
        self.mean = cond.mean(given)

    @property
    def dim(self):
        return self.cond.noise.dim

    def sample(self, rng, size):
        return self.cond.noise.sample(rng, size, mean=self.mean)

    def logpdf(self, x):
        return self.cond.noise.logpdf(np.asarray(x) - self.mean)


def inactive_target(a, model, factorization):
    split = factorization.split
    a = np.asarray(a, dtype=float)
    return BlockTarget(
        _ShiftedPrior(factorization.inactive_given_active, a),
        lambda x: model.log_likelihood_stages(split.to_theta(a, x)),
    )


def active_target(i, model, factorization):
    split = factorization.split
    i = np.asarray(i, dtype=float)
    return BlockTarget(
        _ShiftedPrior(factorization.active_given_inactive, i),
        lambda x: model.log_likelihood_stages(split.to_theta(x, i)),
    )


@dataclass
class Trajectory:
    """One particle's path through the stages of an SMC run.

    ``states[s]`` is the particle position used to weight stage ``s + 1``;
    ``states[t]`` repeats ``states[t-1]`` because the final stage has no move.
    ``log_lik[s]`` caches the cumulative stage log-likelihoods at ``states[s]``
    and is ``None`` when they must be recomputed (e.g. the fixed block changed).
    """

    states: np.ndarray
    log_weights: np.ndarray
    log_lik: np.ndarray = None

    @property
    def endpoint(self):
        return self.states[-1]


@dataclass
class SmcRunRecord:
    history: list
    log_z_estimate: float
    log_z_increments: np.ndarray
    resampled: np.ndarray
    acceptance_rates: np.ndarray
    paths: np.ndarray
    path_log_lik: np.ndarray
    log_weights: np.ndarray
    ess_history: np.ndarray = field(default=None)

    @property
    def final(self):
        return self.history[-1]

    @property
    def particles(self):
        return self.history[-1].points

    @property
    def normalized(self):
        return self.history[-1].normalized

    def trajectory(self, n):
        return Trajectory(self.paths[n].copy(), self.log_weights[:, n].copy(),
                          self.path_log_lik[n].copy())

    def final_log_likelihood(self):
        """Full log-likelihood at each particle's final position."""
        return self.path_log_lik[:, -1, -1]


def weighted_covariance(x, w):
    mean = w @ x
    r = x - mean
    return (r * w[:, None]).T @ r


def rw_mh_move(x, ll, stage, target, cov, rng):
    """One Gaussian random-walk MH step per particle targeting ``prior * l_{1:stage}``.

    Returns the updated points, cached stage log-likelihoods and acceptance flags.
    """
    n, k = x.shape
    chol = np.linalg.cholesky(cov)
    prop = x + rng.standard_normal((n, k)) @ chol.T
    ll_prop = target.log_lik_stages(prop)
    log_alpha = (ll_prop[:, stage] + target.prior.logpdf(prop)) - (ll[:, stage] + target.prior.logpdf(x))
    acc = np.log(rng.random(n)) < log_alpha
    x = np.where(acc[:, None], prop, x)
    ll = np.where(acc[:, None], ll_prop, ll)
    return x, ll, acc


def _move_covariance(x, w, move_cov, jitter=1e-10):
    if move_cov is not None:
        return np.atleast_2d(move_cov)
    k = x.shape[1]
    return (RW_SCALE ** 2 / k) * weighted_covariance(x, w) + jitter * np.eye(k)


def run_smc(target, t, n_particles, rng=None, resample_threshold=0.5, n_moves=1,
            move_cov=None, retained=None):
    """SMC sampler over ``target`` up to stage ``t``.

    With ``retained`` given this is conditional SMC: particle 0 follows the
    retained trajectory, is never resampled and never moved.

    Parameters
    ----------
    target : BlockTarget
    t : int
        Final stage (``1 <= t <= T``).
    n_particles : int
    resample_threshold : float
        Resample when ESS < threshold * N.
    n_moves : int
        MH moves per particle per stage.
    move_cov : ndarray, optional
        Fixed random-walk covariance; by default ``2.38^2/k`` times the
        weighted covariance of the current particles.
    retained : Trajectory, optional
    """
    rng = as_generator(rng)
    n = int(n_particles)
    k = target.dim
    if t < 1:
        raise ValueError("SMC needs at least one stage")
    if n < 1:
        raise ValueError("need at least one particle")
    cond = retained is not None
    if cond:
        if n < 2:
            raise ValueError("conditional SMC needs at least two particles")
        if retained.states.shape[0] < t + 1:
            raise ValueError("retained trajectory is shorter than the number of stages")
        ret_states = retained.states
        ret_ll = retained.log_lik
        if ret_ll is None:
            stored = target.log_lik_stages(ret_states[:t])
            ret_ll = np.vstack([stored, stored[-1:]])
    free = slice(1, None) if cond else slice(None)

    x = np.empty((n, k))
    x[free] = target.prior.sample(rng, n - 1 if cond else n)
    ll_free = target.log_lik_stages(x[free])
    ll = np.empty((n, ll_free.shape[1]))
    ll[free] = ll_free
    if cond:
        x[0] = ret_states[0]
        ll[0] = ret_ll[0]

    paths = np.empty((n, t + 1, k))
    path_ll = np.empty((n, t + 1, ll.shape[1]))
    paths[:, 0], path_ll[:, 0] = x, ll
    log_wt = np.empty((t + 1, n))
    log_wt[0] = -np.log(n)
    history = [WeightedParticleSet(x.copy(), log_wt[0].copy(), np.full(n, 1.0 / n))]
    increments = np.empty(t)
    resampled = np.zeros(t, dtype=bool)
    acc_rates = np.full(t, np.nan)
    ess_hist = np.empty(t + 1)
    ess_hist[0] = n

    log_w_prev = np.full(n, -np.log(n))
    uniform = True
    for s in range(1, t + 1):
        log_g = ll[:, s] - ll[:, s - 1]
        if uniform:
            # equal previous weights: plain IS average, matching is_marginal_likelihood
            increments[s - 1] = log_sum_exp_mean(log_g)
            lw = log_g - np.log(n)
        else:
            lw = log_w_prev + log_g
            increments[s - 1] = np.logaddexp.reduce(lw)
        if increments[s - 1] == -np.inf:
            raise DegenerateSmcError(s)
        W, _ = normalize_log_weights(log_g if uniform else lw)
        log_wt[s] = lw
        history.append(WeightedParticleSet(x.copy(), lw, W, increments[: s].copy()))
        ess_hist[s] = ess(W)
        if s == t:
            break

        if ess_hist[s] < resample_threshold * n:
            resampled[s - 1] = True
            if cond:
                idx = np.concatenate([[0], multinomial_resample(W, n - 1, rng)])
            else:
                idx = stratified_resample(W, n, rng)
            x, ll, paths, path_ll = x[idx], ll[idx], paths[idx], path_ll[idx]
            W = np.full(n, 1.0 / n)
            log_w_prev = np.full(n, -np.log(n))
            uniform = True
        else:
            with np.errstate(divide="ignore"):
                log_w_prev = np.log(W)
            uniform = False

        n_acc = 0
        for _ in range(n_moves):
            cov = _move_covariance(x, W, move_cov)
            x_new, ll_new, acc = rw_mh_move(x[free], ll[free], s, target, cov, rng)
            x[free], ll[free] = x_new, ll_new
            n_acc += acc.sum()
        if n_moves:
            acc_rates[s - 1] = n_acc / (n_moves * acc.size)
        if cond:
            x[0], ll[0] = ret_states[s], ret_ll[s]
        paths[:, s], path_ll[:, s] = x, ll

    paths[:, t], path_ll[:, t] = x, ll
    return SmcRunRecord(
        history=history,
        log_z_estimate=float(np.sum(increments)),
        log_z_increments=increments,
        resampled=resampled,
        acceptance_rates=acc_rates,
        paths=paths,
        path_log_lik=path_ll,
        log_weights=log_wt,
        ess_history=ess_hist,
    )


def run_inactive_smc(a, t, model, factorization, n_inactive, rng=None, resample_threshold=0.5,
                     n_moves=1, move_cov=None):
    """SMC over inactive variables for a fixed active point; estimates ``l_{t,a}(a)``."""
    target = inactive_target(a, model, factorization)
    return run_smc(target, t, n_inactive, rng, resample_threshold, n_moves, move_cov)


def run_active_smc(i, t, model, factorization, n_active, rng=None, resample_threshold=0.5,
                   n_moves=1, move_cov=None):
    """Unconditional SMC over active variables for a fixed inactive point."""
    target = active_target(i, model, factorization)
    return run_smc(target, t, n_active, rng, resample_threshold, n_moves, move_cov)


def run_conditional_smc(i, retained, t, model, factorization, n_active, rng=None,
                        resample_threshold=0.5, n_moves=1, move_cov=None):
    """Conditional SMC on active variables around a retained trajectory."""
    if n_active < 2:
        raise ValueError("conditional SMC needs at least two particles")
    target = active_target(i, model, factorization)
    return run_smc(target, t, n_active, rng, resample_threshold, n_moves, move_cov,
                   retained=retained)
