"""MCMC drivers: plain MH and the active-subspace samplers built on it.

All drivers return a :class:`ChainTrace` holding the initial state plus one
record per iteration (or sweep). Likelihood evaluations are counted by
wrapping the model, one per point at which the likelihood is evaluated.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .core import as_generator
from .estimators import PriorConditionalProposal, is_marginal_likelihood
from .models import counted
from .smc import RW_SCALE, multinomial_resample, run_active_smc, run_conditional_smc, run_inactive_smc
from .subspace import SubspaceSplit

ALGORITHMS = ("mh", "as_mh", "as_pmmh", "as_pmmh_i", "as_mwg", "as_mwpg")


class SamplerError(ValueError):
    pass


@dataclass
class ProposalSpec:
    """Proposal description.

    ``random_walk`` is a Gaussian random walk with ``covariance``;
    ``prior_conditional`` draws inactive points from ``p_{i|a}`` (its
    covariance inflated by ``scale**2``).
    """

    family: str = "random_walk"
    covariance: np.ndarray = None
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("random_walk", "prior_conditional"):
            raise SamplerError(f"unknown proposal family {self.family!r}")
        if self.covariance is not None:
            cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
            if not np.allclose(cov, cov.T):
                raise SamplerError("proposal covariance must be symmetric")
            if np.any(np.linalg.eigvalsh(cov) < -1e-12 * max(1.0, np.abs(cov).max())):
                raise SamplerError("proposal covariance must be positive semi-definite")
            self.covariance = cov


@dataclass
class ChainTrace:
    """Per-iteration sampler output; row 0 is the initial state.

    ``theta`` is the reconstructed parameter ``B_a a^m + B_i i^{u^m, m}``.
    ``particles``/``weights`` hold the weighted particle set of each row over
    the block named by ``particle_block``.
    """

    algorithm: str
    theta: np.ndarray
    active: np.ndarray = None
    inactive: np.ndarray = None
    selected: np.ndarray = None
    log_estimate: np.ndarray = None
    accepted: np.ndarray = None
    accept_prob: np.ndarray = None
    accepted_inactive: np.ndarray = None
    accept_prob_inactive: np.ndarray = None
    particles: np.ndarray = None
    weights: np.ndarray = None
    particle_block: str = None
    split: SubspaceSplit = None
    evaluations: int = 0
    runtime: float = 0.0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.theta.shape[0]

    @property
    def n_iterations(self):
        return len(self) - 1

    def particle_theta(self):
        if self.particles is None:
            raise SamplerError(f"{self.algorithm} trace has no particle sets")
        if self.particle_block == "inactive":
            return self.split.to_theta(self.active[:, None, :], self.particles)
        return self.split.to_theta(self.particles, self.inactive[:, None, :])

    def acceptance_rate(self):
        return float(np.mean(self.accepted[1:])) if len(self) > 1 else float("nan")

    def summary(self):
        out = {
            "algorithm": self.algorithm,
            "iterations": self.n_iterations,
            "acceptance_rate": self.acceptance_rate(),
            "likelihood_evaluations": int(self.evaluations),
            "runtime_seconds": self.runtime,
        }
        if self.accepted_inactive is not None and len(self) > 1:
            out["inactive_acceptance_rate"] = float(np.mean(self.accepted_inactive[1:]))
        out.update(self.info)
        return out

    def to_csv(self, path):
        cols = ["iteration"]
        blocks = [np.arange(len(self))[:, None]]
        if self.active is not None:
            cols += [f"a{j}" for j in range(self.active.shape[1])]
            blocks.append(self.active)
        cols += [f"theta{j}" for j in range(self.theta.shape[1])]
        blocks.append(self.theta)
        cols.append("log_estimate")
        blocks.append((self.log_estimate if self.log_estimate is not None
                       else np.full(len(self), np.nan))[:, None])
        cols.append("accepted")
        blocks.append(self.accepted[:, None].astype(float))
        if self.accepted_inactive is not None:
            cols.append("accepted_inactive")
            blocks.append(self.accepted_inactive[:, None].astype(float))
        data = np.hstack(blocks)
        fmt = ["%d"] + ["%.17g"] * (data.shape[1] - 1)
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt=fmt)


def _rw_chol(cov, dim):
    if cov is None:
        raise SamplerError("random-walk proposal needs a covariance")
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (dim, dim):
        raise SamplerError(f"proposal covariance shape {cov.shape} != ({dim}, {dim})")
    w, V = np.linalg.eigh(cov)
    # eigen square root tolerates the zero-covariance (frozen chain) case
    return V * np.sqrt(np.clip(w, 0.0, None))


def _cov_of(q):
    return q.covariance if isinstance(q, ProposalSpec) else q


def _check_init(logp, what):
    if not np.isfinite(logp):
        raise SamplerError(f"initial {what} has zero prior density")


def run_mh(model, proposal_cov, n_steps, init=None, rng=None):
    """Random-walk Metropolis-Hastings on theta targeting ``p(theta) l(theta)``."""
    rng = as_generator(rng)
    cm = counted(model)
    d = model.d
    L = _rw_chol(_cov_of(proposal_cov), d)
    t0 = time.perf_counter()
    theta = model.prior.sample(rng) if init is None else np.asarray(init, dtype=float).copy()
    lp = model.log_prior(theta)
    _check_init(lp, "theta")
    ll = float(cm.full_log_likelihood(theta))
    out = np.empty((n_steps + 1, d))
    acc = np.zeros(n_steps + 1, dtype=bool)
    alpha = np.full(n_steps + 1, np.nan)
    lls = np.empty(n_steps + 1)
    out[0], lls[0] = theta, ll
    noise = rng.standard_normal((n_steps, d)) @ L.T
    log_u = np.log(rng.random(n_steps))
    for m in range(1, n_steps + 1):
        prop = theta + noise[m - 1]
        lp_p = model.log_prior(prop)
        ll_p = float(cm.full_log_likelihood(prop))
        log_a = (lp_p + ll_p) - (lp + ll)
        alpha[m] = min(1.0, np.exp(min(log_a, 0.0)))
        if log_u[m - 1] < log_a:
            theta, lp, ll = prop, lp_p, ll_p
            acc[m] = True
        out[m], lls[m] = theta, ll
    return ChainTrace("mh", out, accepted=acc, accept_prob=alpha, log_estimate=lls,
                      evaluations=cm.evaluations, runtime=time.perf_counter() - t0)


def _store_particles(n_iter, n, k):
    return np.empty((n_iter + 1, n, k)), np.empty((n_iter + 1, n))


def run_as_mh(model, factorization, q_a, n_inactive, n_iter, init=None, rng=None, q_i=None):
    """Active-subspace pseudo-marginal MH with an IS marginal-likelihood estimate.

    The estimate at the proposed active point is fresh every iteration; the
    current point keeps the estimate it was accepted with.

    Parameters
    ----------
    model : TargetModel
    factorization : GaussianPriorFactorization
    q_a : ProposalSpec or ndarray
        Random-walk covariance on the active coordinates.
    n_inactive : int
        Importance points per estimate.
    n_iter : int
    init : ndarray, optional
        Initial active point; drawn from ``p_a`` when omitted.
    q_i : ProposalSpec or proposal object, optional
        IS proposal; ``p_{i|a}`` by default.
    """
    if n_inactive < 1:
        raise SamplerError("AS-MH needs at least one inactive point")
    rng = as_generator(rng)
    cm = counted(model)
    split = factorization.split
    L = _rw_chol(_cov_of(q_a), split.d_a)
    if isinstance(q_i, ProposalSpec):
        q_i = None if q_i.scale == 1.0 else PriorConditionalProposal(factorization, q_i.scale)
    t0 = time.perf_counter()

    a = factorization.active.sample(rng) if init is None else np.asarray(init, dtype=float).copy()
    lp = factorization.log_p_a(a)
    _check_init(lp, "active point")
    est = is_marginal_likelihood(a, cm, factorization, n_inactive, rng, q_i)
    if not np.isfinite(est.log_value):
        raise SamplerError("marginal-likelihood estimate at the initial point is zero")
    u = int(multinomial_resample(est.particles.normalized, 1, rng)[0])

    A = np.empty((n_iter + 1, split.d_a))
    I_sel = np.empty((n_iter + 1, split.d_i))
    sel = np.zeros(n_iter + 1, dtype=int)
    logl = np.empty(n_iter + 1)
    acc = np.zeros(n_iter + 1, dtype=bool)
    alpha = np.full(n_iter + 1, np.nan)
    P, Wt = _store_particles(n_iter, n_inactive, split.d_i)

    def record(m):
        A[m], sel[m], logl[m] = a, u, est.log_value
        P[m], Wt[m] = est.particles.points, est.particles.normalized
        I_sel[m] = est.particles.points[u]

    record(0)
    for m in range(1, n_iter + 1):
        a_prop = a + L @ rng.standard_normal(split.d_a)
        lp_p = factorization.log_p_a(a_prop)
        est_p = is_marginal_likelihood(a_prop, cm, factorization, n_inactive, rng, q_i)
        if np.isfinite(est_p.log_value):
            log_a = (lp_p + est_p.log_value) - (lp + est.log_value)
            alpha[m] = min(1.0, np.exp(min(log_a, 0.0)))
            u_p = int(multinomial_resample(est_p.particles.normalized, 1, rng)[0])
            if np.log(rng.random()) < log_a:
                a, lp, est, u = a_prop, lp_p, est_p, u_p
                acc[m] = True
        else:
            alpha[m] = 0.0
        record(m)
    theta = split.to_theta(A, I_sel)
    return ChainTrace("as_mh", theta, active=A, inactive=I_sel, selected=sel, log_estimate=logl,
                      accepted=acc, accept_prob=alpha, particles=P, weights=Wt,
                      particle_block="inactive", split=split, evaluations=cm.evaluations,
                      runtime=time.perf_counter() - t0)


@dataclass
class SmcConfig:
    """Settings of the inner SMC sampler (per particle-marginal estimate)."""

    n_particles: int = 10
    resample_threshold: float = 0.5
    n_moves: int = 1
    move_cov: np.ndarray = None

    def evaluations_per_run(self, num_stages):
        return self.n_particles * (1 + (num_stages - 1) * self.n_moves)


def run_as_pmmh(model, factorization, q_a, smc, n_iter, init=None, rng=None, algorithm="as_pmmh"):
    """Active-subspace particle marginal MH: an SMC estimate replaces the IS one.

    ``smc`` is an :class:`SmcConfig`; the SMC runs all ``model.num_stages``
    stages for each proposed active point.
    """
    if smc.n_particles < 1 or model.num_stages < 1:
        raise SamplerError("AS-PMMH needs at least one particle and one stage")
    rng = as_generator(rng)
    cm = counted(model)
    split = factorization.split
    T = model.num_stages
    L = _rw_chol(_cov_of(q_a), split.d_a)
    t0 = time.perf_counter()

    def estimate(a):
        try:
            return run_inactive_smc(a, T, cm, factorization, smc.n_particles, rng,
                                    smc.resample_threshold, smc.n_moves, smc.move_cov)
        except ValueError:
            return None

    a = factorization.active.sample(rng) if init is None else np.asarray(init, dtype=float).copy()
    lp = factorization.log_p_a(a)
    _check_init(lp, "active point")
    rec = estimate(a)
    if rec is None:
        raise SamplerError("SMC estimate at the initial point degenerated")
    u = int(multinomial_resample(rec.normalized, 1, rng)[0])

    N = smc.n_particles
    A = np.empty((n_iter + 1, split.d_a))
    I_sel = np.empty((n_iter + 1, split.d_i))
    sel = np.zeros(n_iter + 1, dtype=int)
    logl = np.empty(n_iter + 1)
    acc = np.zeros(n_iter + 1, dtype=bool)
    alpha = np.full(n_iter + 1, np.nan)
    P, Wt = _store_particles(n_iter, N, split.d_i)
    resample_count = 0

    def record(m):
        A[m], sel[m], logl[m] = a, u, rec.log_z_estimate
        P[m], Wt[m] = rec.particles, rec.normalized
        I_sel[m] = rec.particles[u]

    record(0)
    for m in range(1, n_iter + 1):
        a_prop = a + L @ rng.standard_normal(split.d_a)
        lp_p = factorization.log_p_a(a_prop)
        rec_p = estimate(a_prop)
        if rec_p is None:
            alpha[m] = 0.0
        else:
            resample_count += int(rec_p.resampled.sum())
            log_a = (lp_p + rec_p.log_z_estimate) - (lp + rec.log_z_estimate)
            alpha[m] = min(1.0, np.exp(min(log_a, 0.0)))
            u_p = int(multinomial_resample(rec_p.normalized, 1, rng)[0])
            if np.log(rng.random()) < log_a:
                a, lp, rec, u = a_prop, lp_p, rec_p, u_p
                acc[m] = True
        record(m)
    theta = split.to_theta(A, I_sel)
    return ChainTrace(algorithm, theta, active=A, inactive=I_sel, selected=sel, log_estimate=logl,
                      accepted=acc, accept_prob=alpha, particles=P, weights=Wt,
                      particle_block="inactive", split=split, evaluations=cm.evaluations,
                      runtime=time.perf_counter() - t0,
                      info={"smc_resampling_events": resample_count})


def run_as_pmmh_inverted(model, factorization, q_i, smc, n_iter, init=None, rng=None):
    """AS-PMMH with the blocks exchanged: MH on inactive, SMC over active coordinates.

    ``q_i`` is the random-walk covariance on the inactive coordinates and
    ``init`` an initial inactive point.
    """
    tr = run_as_pmmh(model, factorization.swapped(), q_i, smc, n_iter, init, rng,
                     algorithm="as_pmmh_i")
    tr.active, tr.inactive = tr.inactive, tr.active
    tr.particle_block = "active"
    tr.split = factorization.split
    return tr


def _inactive_step(cm, factorization, a, i, ll, q_i, rng, L_i, log_lik):
    """One MH update of i given a; returns (i, ll, accepted, alpha)."""
    cond = factorization.inactive_given_active
    if q_i.family == "prior_conditional":
        if q_i.scale == 1.0:
            i_prop = cond.sample(a, rng)
            ll_p = log_lik(a, i_prop)
            # prior and proposal densities cancel
            log_a = ll_p - ll
        else:
            q = PriorConditionalProposal(factorization, q_i.scale)
            i_prop = q.sample(a, rng, None)
            ll_p = log_lik(a, i_prop)
            log_a = ((cond.logpdf(i_prop, a) + ll_p + q.logpdf(i, a))
                     - (cond.logpdf(i, a) + ll + q.logpdf(i_prop, a)))
    else:
        i_prop = i + L_i @ rng.standard_normal(i.shape[0])
        ll_p = log_lik(a, i_prop)
        log_a = (cond.logpdf(i_prop, a) + ll_p) - (cond.logpdf(i, a) + ll)
    alpha = min(1.0, np.exp(min(log_a, 0.0)))
    if np.log(rng.random()) < log_a:
        return i_prop, ll_p, True, alpha
    return i, ll, False, alpha


def _prop_spec(q, default_family):
    if q is None:
        return ProposalSpec(default_family)
    if isinstance(q, ProposalSpec):
        return q
    return ProposalSpec("random_walk", q)


def run_as_mwg(model, factorization, q_a, n_sweeps, q_i=None, init=None, rng=None):
    """Active-subspace Metropolis-within-Gibbs.

    Each sweep updates i given a (``q_i`` defaults to ``p_{i|a}``), then a
    given i with a random walk. The a-update uses the joint prior density
    ``p_a(a) p_{i|a}(i|a)``, which reduces to ``p_a`` when the blocks are
    a priori independent.

    ``init`` is an optional ``(a, i)`` pair.
    """
    rng = as_generator(rng)
    cm = counted(model)
    split = factorization.split
    q_i = _prop_spec(q_i, "prior_conditional")
    L_a = _rw_chol(_cov_of(q_a), split.d_a)
    L_i = _rw_chol(q_i.covariance, split.d_i) if q_i.family == "random_walk" else None
    t0 = time.perf_counter()

    def log_lik(a, i):
        return float(cm.full_log_likelihood(split.to_theta(a, i)))

    if init is None:
        a = factorization.active.sample(rng)
        i = factorization.inactive_given_active.sample(a, rng)
    else:
        a, i = (np.asarray(v, dtype=float).copy() for v in init)
    lp = factorization.log_joint(a, i)
    _check_init(lp, "state")
    ll = log_lik(a, i)

    A = np.empty((n_sweeps + 1, split.d_a))
    I = np.empty((n_sweeps + 1, split.d_i))
    acc_a = np.zeros(n_sweeps + 1, dtype=bool)
    acc_i = np.zeros(n_sweeps + 1, dtype=bool)
    al_a = np.full(n_sweeps + 1, np.nan)
    al_i = np.full(n_sweeps + 1, np.nan)
    lls = np.empty(n_sweeps + 1)
    A[0], I[0], lls[0] = a, i, ll
    for m in range(1, n_sweeps + 1):
        i, ll, acc_i[m], al_i[m] = _inactive_step(cm, factorization, a, i, ll, q_i, rng, L_i, log_lik)
        lp = factorization.log_joint(a, i)
        a_prop = a + L_a @ rng.standard_normal(split.d_a)
        lp_p = factorization.log_joint(a_prop, i)
        ll_p = log_lik(a_prop, i)
        log_a = (lp_p + ll_p) - (lp + ll)
        al_a[m] = min(1.0, np.exp(min(log_a, 0.0)))
        if np.log(rng.random()) < log_a:
            a, ll = a_prop, ll_p
            acc_a[m] = True
        A[m], I[m], lls[m] = a, i, ll
    return ChainTrace("as_mwg", split.to_theta(A, I), active=A, inactive=I,
                      selected=np.zeros(n_sweeps + 1, dtype=int), log_estimate=lls,
                      accepted=acc_a, accept_prob=al_a, accepted_inactive=acc_i,
                      accept_prob_inactive=al_i, split=split, evaluations=cm.evaluations,
                      runtime=time.perf_counter() - t0)


def run_as_mwpg(model, factorization, smc, n_sweeps, q_i=None, init=None, rng=None):
    """Active-subspace Metropolis within particle Gibbs.

    Each sweep updates i given the retained trajectory's endpoint, then runs
    conditional SMC on the active coordinates around the retained trajectory,
    draws an index from the final weights and promotes that trajectory.

    Parameters
    ----------
    smc : SmcConfig
        ``n_particles`` is the number of active particles (>= 2); ``move_cov``
        fixes the random-walk covariance of the active moves.
    q_i : ProposalSpec, optional
        Inactive proposal, ``p_{i|a}`` by default.
    init : ndarray, optional
        Initial inactive point; drawn from ``p_i`` when omitted.
    """
    N = smc.n_particles
    if N < 2:
        raise SamplerError("AS-MwPG needs at least two active particles")
    rng = as_generator(rng)
    cm = counted(model)
    split = factorization.split
    T = model.num_stages
    q_i = _prop_spec(q_i, "prior_conditional")
    L_i = _rw_chol(q_i.covariance, split.d_i) if q_i.family == "random_walk" else None
    t0 = time.perf_counter()

    def log_lik(a, i):
        return float(cm.full_log_likelihood(split.to_theta(a, i)))

    i = factorization.inactive.sample(rng) if init is None else np.asarray(init, dtype=float).copy()
    _check_init(factorization.inactive.logpdf(i), "inactive point")
    rec = run_active_smc(i, T, cm, factorization, N, rng, smc.resample_threshold,
                         smc.n_moves, smc.move_cov)
    u = int(multinomial_resample(rec.normalized, 1, rng)[0])
    retained = rec.trajectory(u)

    A = np.empty((n_sweeps + 1, split.d_a))
    I = np.empty((n_sweeps + 1, split.d_i))
    sel = np.zeros(n_sweeps + 1, dtype=int)
    logz = np.empty(n_sweeps + 1)
    acc_i = np.zeros(n_sweeps + 1, dtype=bool)
    al_i = np.full(n_sweeps + 1, np.nan)
    moved = np.zeros(n_sweeps + 1, dtype=bool)
    P, Wt = _store_particles(n_sweeps, N, split.d_a)

    def record(m):
        A[m], I[m], sel[m], logz[m] = retained.endpoint, i, u, rec.log_z_estimate
        P[m], Wt[m] = rec.particles, rec.normalized

    record(0)
    for m in range(1, n_sweeps + 1):
        a_end = retained.endpoint
        ll = float(retained.log_lik[-1, -1])
        i, ll, acc_i[m], al_i[m] = _inactive_step(cm, factorization, a_end, i, ll, q_i, rng, L_i, log_lik)
        if acc_i[m]:
            # cached stage log-likelihoods were computed under the old i
            retained.log_lik = None
        rec = run_conditional_smc(i, retained, T, cm, factorization, N, rng,
                                  smc.resample_threshold, smc.n_moves, smc.move_cov)
        u = int(multinomial_resample(rec.normalized, 1, rng)[0])
        moved[m] = not np.array_equal(rec.paths[u, -1], a_end)
        retained = rec.trajectory(u)
        record(m)
    return ChainTrace("as_mwpg", split.to_theta(A, I), active=A, inactive=I, selected=sel,
                      log_estimate=logz, accepted=moved, accepted_inactive=acc_i,
                      accept_prob_inactive=al_i, particles=P, weights=Wt, particle_block="active",
                      split=split, evaluations=cm.evaluations, runtime=time.perf_counter() - t0)


def adaptive_pilot(model, n_steps=10_000, burn_in=0.2, init=None, rng=None, adapt_every=100):
    """Adaptive random-walk MH pilot used to estimate the posterior covariance.

    Starts from ``(2.38^2/d) I``; a Robbins-Monro scale targets 0.234
    acceptance and the covariance is refreshed from the chain history every
    ``adapt_every`` steps. Returns the post-burn-in samples and their covariance.
    """
    rng = as_generator(rng)
    d = model.d
    theta = model.prior.mean.copy() if init is None else np.asarray(init, dtype=float).copy()
    lp = model.log_prior(theta) + float(model.full_log_likelihood(theta))
    cov = np.eye(d)
    log_scale = np.log(RW_SCALE ** 2 / d)
    L = np.linalg.cholesky(cov)
    out = np.empty((n_steps, d))
    for m in range(n_steps):
        prop = theta + np.exp(0.5 * log_scale) * (L @ rng.standard_normal(d))
        lp_p = model.log_prior(prop) + float(model.full_log_likelihood(prop))
        log_a = lp_p - lp
        if np.log(rng.random()) < log_a:
            theta, lp = prop, lp_p
        log_scale += (min(1.0, np.exp(min(log_a, 0.0))) - 0.234) / (1.0 + m) ** 0.6
        out[m] = theta
        if m >= 5 * d and (m + 1) % adapt_every == 0:
            emp = np.cov(out[m // 2: m + 1].T).reshape(d, d)
            scale = np.trace(emp) / d
            try:
                L = np.linalg.cholesky(emp + 1e-10 * max(scale, 1e-300) * np.eye(d))
                cov = emp
            except np.linalg.LinAlgError:
                pass
    kept = out[int(burn_in * n_steps):]
    emp = np.atleast_2d(np.cov(kept.T))
    return kept, emp
