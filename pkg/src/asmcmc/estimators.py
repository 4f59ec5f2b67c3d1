"""Marginal-likelihood estimators over inactive variables and posterior expectations."""

from dataclasses import dataclass, field

import numpy as np

from .core import as_generator, log_sum_exp_mean, normalize_log_weights
from .subspace import GaussianPriorFactorization


class EstimatorError(ValueError):
    pass


@dataclass
class WeightedParticleSet:
    points: np.ndarray
    log_weights: np.ndarray
    normalized: np.ndarray
    log_z_increments: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_log_weights(cls, points, log_weights, log_z_increments=()):
        normalized, _ = normalize_log_weights(log_weights)
        return cls(np.asarray(points), np.asarray(log_weights, dtype=float), normalized,
                   np.asarray(log_z_increments, dtype=float))

    def __len__(self):
        return len(self.log_weights)


@dataclass
class MarginalLikelihoodEstimate:
    log_value: float
    particles: WeightedParticleSet
    ess: float
    log_weight_variance: float
    # full log-likelihood at each particle, reused by samplers
    log_likelihoods: np.ndarray = None


class PriorConditionalProposal:
    """``q_i(. | a) = p_{i|a}(. | a)``, optionally with the covariance inflated by ``scale**2``."""

    def __init__(self, factorization, scale=1.0):
        self.cond = factorization.inactive_given_active
        self.scale = float(scale)

    def sample(self, a, rng, size):
        z = self.cond.noise.sample(rng, size)
        return self.cond.mean(a) + self.scale * z

    def logpdf(self, i, a):
        z = (np.asarray(i) - self.cond.mean(a)) / self.scale
        return self.cond.noise.logpdf(z) - self.cond.noise.dim * np.log(self.scale)


def ess(normalized):
    """Effective sample size ``1 / sum(w^2)`` of normalised weights."""
    w = np.asarray(normalized, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise EstimatorError("weights must be a non-empty 1-d array")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise EstimatorError(f"weights are not normalised (sum={w.sum()!r})")
    return float(1.0 / np.sum(w * w))


def _log_weight_variance(log_w):
    finite = log_w[np.isfinite(log_w)]
    return float(np.var(finite, ddof=1)) if finite.size > 1 else 0.0


def is_marginal_likelihood(a, model, factorization, n_inactive, rng=None, proposal=None):
    """Importance-sampling estimate of ``l_a(a) = E_{p_{i|a}}[l(B_a a + B_i i)]``.

    With ``proposal=None`` the inactive points are drawn from ``p_{i|a}`` and
    the log weights are exactly the log-likelihoods.

    Parameters
    ----------
    a : ndarray, shape (d_a,)
    model : TargetModel
    factorization : GaussianPriorFactorization
    n_inactive : int
    rng : Generator, RngStream, int or None
    proposal : object with ``sample(a, rng, size)`` and ``logpdf(i, a)``, optional

    Returns
    -------
    MarginalLikelihoodEstimate
    """
    if n_inactive < 1:
        raise EstimatorError("need at least one inactive point")
    rng = as_generator(rng)
    a = np.asarray(a, dtype=float)
    split = factorization.split
    if proposal is None:
        pts = factorization.inactive_given_active.sample(a, rng, n_inactive)
        ll = model.full_log_likelihood(split.to_theta(a, pts))
        log_w = np.asarray(ll, dtype=float)
    else:
        pts = proposal.sample(a, rng, n_inactive)
        log_q = proposal.logpdf(pts, a)
        if np.any(~np.isfinite(log_q)):
            raise EstimatorError("proposal density is zero at a sampled inactive point")
        ll = model.full_log_likelihood(split.to_theta(a, pts))
        log_w = ll + (factorization.log_p_i_given_a(pts, a) - log_q)
    log_value = log_sum_exp_mean(log_w)
    if log_value == -np.inf:
        parts = WeightedParticleSet(pts, log_w, np.full(n_inactive, np.nan))
        return MarginalLikelihoodEstimate(-np.inf, parts, 0.0, np.nan, np.asarray(ll))
    parts = WeightedParticleSet.from_log_weights(pts, log_w, [log_value])
    return MarginalLikelihoodEstimate(
        log_value, parts, ess(parts.normalized), _log_weight_variance(log_w), np.asarray(ll)
    )


def _select(trace, burn_in):
    start = int(burn_in)
    if len(trace) == 0 or start >= len(trace):
        raise EstimatorError("trace has no samples to average")
    return start


def _apply(g, theta):
    if g is None:
        return theta
    out = np.asarray(g(theta), dtype=float)
    return out.reshape(theta.shape[:-1] + (-1,))


def estimate_expectation_single(trace, g=None, burn_in=0):
    """Average ``g`` over the one selected theta per iteration.

    ``g`` maps an array of thetas ``(..., d)`` to ``(..., k)``; identity by default.
    """
    start = _select(trace, burn_in)
    return _apply(g, trace.theta[start:]).mean(axis=0)


def estimate_expectation_weighted(trace, g=None, burn_in=0):
    """Average ``g`` over every weighted particle of every iteration."""
    start = _select(trace, burn_in)
    if trace.weights is None:
        raise EstimatorError(f"{trace.algorithm} traces carry no weighted particle sets")
    thetas = trace.particle_theta()[start:]
    vals = _apply(g, thetas)
    w = trace.weights[start:]
    return np.einsum("mn,mnk->k", w, vals) / w.shape[0]


def ess_vs_dimension_curve(model, split, n_inactive=10_000, a=None, rng=None, active_dims=None):
    """ESS of the prior-proposal IS estimator as the active dimension varies.

    ``split`` supplies the full eigenbasis; each candidate keeps its first
    ``d_a`` columns active. Rows are dicts with keys ``d_a``, ``d_i``,
    ``ess_percent`` and ``logw_variance``.
    """
    rng = as_generator(rng)
    d = split.d
    active_dims = range(1, d) if active_dims is None else active_dims
    rows = []
    for d_a in active_dims:
        sub = split.with_active_dim(d_a)
        fact = GaussianPriorFactorization(model.prior, None, sub)
        a_ref = np.zeros(d_a) if a is None else np.asarray(a, dtype=float)[:d_a]
        est = is_marginal_likelihood(a_ref, model, fact, n_inactive, rng)
        rows.append({
            "d_a": d_a,
            "d_i": d - d_a,
            "ess_percent": 100.0 * est.ess / n_inactive,
            "logw_variance": est.log_weight_variance,
        })
    return rows


def select_active_dimension(curve, ess_threshold=50.0):
    """Smallest active dimension whose ESS percentage exceeds the threshold."""
    for row in sorted(curve, key=lambda r: r["d_a"]):
        if row["ess_percent"] > ess_threshold:
            return row["d_a"]
    return None
