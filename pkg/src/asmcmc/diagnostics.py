"""Run-quality diagnostics: spectra, autocorrelation, errors against references, mode occupancy."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import as_generator
from .models import BananaModel, ConjugateGaussianModel


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    gap_ratios: np.ndarray
    candidates: list
    dominant: int = None

    def rows(self):
        out = []
        for j, lam in enumerate(self.eigenvalues, start=1):
            ratio = self.gap_ratios[j - 1] if j <= len(self.gap_ratios) else np.nan
            out.append({"index": j, "eigenvalue": float(lam), "gap_ratio": float(ratio),
                        "candidate": j in self.candidates})
        return out


def spectrum_report(C, gap_threshold=10.0, rel_tol=1e-12):
    """Sorted spectrum of ``C`` with gap ratios ``lambda_j / lambda_{j+1}``.

    Eigenvalues below ``rel_tol * lambda_1`` count as zero. A ratio whose
    denominator is zero is infinite when the numerator is nonzero and
    undefined (nan) otherwise. Candidates are the ``j`` whose ratio exceeds
    ``gap_threshold``; ``dominant`` is the candidate with the largest ratio.
    """
    C = np.asarray(C, dtype=float)
    lam = np.sort(np.linalg.eigvalsh(0.5 * (C + C.T)))[::-1]
    top = lam[0] if lam.size else 0.0
    lam = np.where(lam <= rel_tol * max(top, 0.0), 0.0, lam)
    num, den = lam[:-1], lam[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                          np.where(num > 0, np.inf, np.nan))
    cand = [j + 1 for j, r in enumerate(ratios) if r > gap_threshold]
    dominant = None
    if cand:
        dominant = max(cand, key=lambda j: (ratios[j - 1], -j))
    return SpectrumReport(lam, ratios, cand, dominant)


def posterior_mean_error(estimate, reference):
    """Euclidean distance between a posterior-mean estimate and its reference."""
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimate.shape != reference.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {reference.shape}")
    return float(np.linalg.norm(estimate - reference))


def mode_occupancy(samples, functional=None, burn_in=0):
    """Fractions of samples with ``functional < 0`` and ``> 0``.

    ``samples`` is a trace (its ``theta`` is used) or an array of thetas; the
    default functional is ``theta_1 + theta_2``.
    """
    theta = np.asarray(getattr(samples, "theta", samples), dtype=float)[int(burn_in):]
    if theta.shape[0] == 0:
        raise ValueError("no samples to classify")
    f = theta[:, 0] + theta[:, 1] if functional is None else np.asarray(functional(theta))
    return float(np.mean(f < 0)), float(np.mean(f > 0))


def integrated_autocorr_time(x, c=5.0):
    """Integrated autocorrelation time with Sokal's adaptive window (``inf`` for a constant series)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return 1.0
    r = x - x.mean()
    if not np.any(r):
        return np.inf
    f = np.fft.rfft(r, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 2.0 * np.cumsum(acf) - 1.0
    for w in range(1, n):
        if w >= c * tau[w]:
            return float(max(tau[w], 1.0))
    return float(max(tau[-1], 1.0))


def mcmc_standard_error(x):
    """Autocorrelation-adjusted standard error of the mean of each column."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        tau = integrated_autocorr_time(x[:, j])
        out[j] = np.sqrt(np.var(x[:, j], ddof=1) * tau / x.shape[0])
    return out


def thin_by_autocorrelation(x):
    """Keep every ceil(tau)-th sample so the remainder is roughly independent."""
    x = np.asarray(x, dtype=float)
    tau = integrated_autocorr_time(x if x.ndim == 1 else x[:, 0])
    step = int(np.ceil(tau)) if np.isfinite(tau) else x.shape[0]
    return x[::max(step, 1)]


def ks_against_normal(x, mean, sd):
    """Kolmogorov-Smirnov p-value of autocorrelation-thinned samples vs N(mean, sd^2)."""
    thinned = thin_by_autocorrelation(np.asarray(x, dtype=float).ravel())
    return float(stats.kstest(thinned, "norm", args=(mean, sd)).pvalue), thinned.size


def chi2_against_normal(x, mean, sd, n_bins=20):
    """Chi-squared goodness-of-fit p-value on equiprobable bins after thinning."""
    thinned = thin_by_autocorrelation(np.asarray(x, dtype=float).ravel())
    edges = stats.norm.ppf(np.linspace(0, 1, n_bins + 1), loc=mean, scale=sd)
    counts = np.histogram(thinned, bins=edges)[0]
    expected = np.full(n_bins, thinned.size / n_bins)
    return float(stats.chisquare(counts, expected).pvalue), thinned.size


def reference_posterior_moments(model, method="auto", n_nodes=60, n_steps=10_000_000,
                                n_chains=1000, proposal_cov=None, seed=0):
    """Reference posterior mean and covariance.

    ``auto`` picks the exact conjugate formula for linear-Gaussian models,
    Gauss-Hermite quadrature for the banana model (the d - k uncurved
    coordinates are integrated analytically) and a long multi-chain MH run
    otherwise. Returns ``(mean, cov, info)`` where ``info`` records the method.
    """
    if method == "auto":
        if isinstance(model, ConjugateGaussianModel):
            method = "conjugate"
        elif isinstance(model, BananaModel) and model.k < model.d:
            method = "quadrature"
        else:
            method = "mh"
    if method == "conjugate":
        if not isinstance(model, ConjugateGaussianModel):
            raise ValueError(f"no conjugate posterior for model {model.name!r}")
        mean, cov = model.posterior()
        return mean, cov, {"method": "conjugate"}
    if method == "quadrature":
        if not (isinstance(model, BananaModel) and model.k < model.d):
            raise ValueError("quadrature reference needs a banana model with k < d")
        mean, cov = _banana_quadrature_moments(model, n_nodes)
        return mean, cov, {"method": "quadrature", "nodes": n_nodes}
    if method == "mh":
        mean, cov = reference_mh_moments(model, n_steps, n_chains, proposal_cov, seed)
        return mean, cov, {"method": "mh", "steps": int(n_steps), "chains": int(n_chains), "seed": seed}
    raise ValueError(f"unknown reference method {method!r}")


def reference_posterior_mean(model, method="auto", **kwargs):
    """Reference posterior mean; see :func:`reference_posterior_moments`."""
    mean, _, info = reference_posterior_moments(model, method, **kwargs)
    return mean, info


def _banana_quadrature_moments(model, n_nodes):
    """Posterior mean and covariance of the banana model by k-dimensional quadrature.

    With R = d - k uncurved coordinates z, their sum S is a priori
    N(0, R sigma^2) and enters the likelihood only through ``q(x) + S``, so it
    integrates out in closed form. Given S, z is the prior conditioned on its
    sum: mean S/R per coordinate, covariance sigma^2 (I - 11'/R).
    """
    d, k, b = model.d, model.k, model.b
    var = model.prior_var
    y = model.data
    n, ybar = y.size, y.mean()
    R = d - k
    prior_S = R * var
    V = prior_S + model.noise_var / n
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    grids = np.meshgrid(*([z * np.sqrt(var)] * k), indexing="ij")
    x = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.prod(np.stack(np.meshgrid(*([w] * k), indexing="ij"), axis=-1).reshape(-1, k), axis=1)
    q = x.sum(axis=1) + b * np.sum(x * x, axis=1)
    r = ybar - q
    logf = -0.5 * r * r / V
    f = wts * np.exp(logf - logf.max())
    f /= f.sum()
    # S | x, y is Gaussian
    m_S = (prior_S / V) * r
    v_S = prior_S - prior_S ** 2 / V

    mean_x = f @ x
    mean_S = f @ m_S
    mean = np.concatenate([mean_x, np.full(R, mean_S / R)])
    second = np.empty((d, d))
    second[:k, :k] = (x * f[:, None]).T @ x
    cross = (x * (f * m_S)[:, None]).sum(axis=0) / R
    second[:k, k:] = cross[:, None]
    second[k:, :k] = cross[None, :]
    ones = np.ones((R, R))
    second[k:, k:] = (f @ (m_S ** 2) + v_S) / R ** 2 * ones + var * (np.eye(R) - ones / R)
    cov = second - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def reference_mh_moments(model, n_steps=10_000_000, n_chains=1000, proposal_cov=None, seed=0,
                         burn_in=0.2):
    """Posterior mean and covariance from ``n_chains`` vectorised random-walk chains, ``n_steps`` in total."""
    rng = as_generator(seed)
    d = model.d
    per_chain = max(int(n_steps) // n_chains, 2)
    cov = (2.38 ** 2 / d) * np.eye(d) if proposal_cov is None else np.asarray(proposal_cov)
    L = np.linalg.cholesky(cov)
    theta = model.prior.sample(rng, n_chains)
    lp = model.log_prior(theta) + model.full_log_likelihood(theta)
    start = int(burn_in * per_chain)
    total = np.zeros(d)
    outer = np.zeros((d, d))
    for m in range(per_chain):
        prop = theta + rng.standard_normal((n_chains, d)) @ L.T
        lp_p = model.log_prior(prop) + model.full_log_likelihood(prop)
        acc = np.log(rng.random(n_chains)) < lp_p - lp
        theta = np.where(acc[:, None], prop, theta)
        lp = np.where(acc, lp_p, lp)
        if m >= start:
            total += theta.sum(axis=0)
            outer += theta.T @ theta
    count = (per_chain - start) * n_chains
    mean = total / count
    return mean, outer / count - np.outer(mean, mean)


@dataclass
class ComparisonReport:
    """Per-seed posterior-mean errors of several algorithms on one problem."""

    reference: np.ndarray
    errors: dict = field(default_factory=dict)
    evaluations: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    def add(self, algorithm, seed, estimate, evaluations):
        self.errors.setdefault(algorithm, []).append(posterior_mean_error(estimate, self.reference))
        self.evaluations.setdefault(algorithm, []).append(int(evaluations))
        if seed not in self.seeds:
            self.seeds.append(seed)

    def median_errors(self):
        return {alg: float(np.median(v)) for alg, v in self.errors.items()}

    def rmse(self):
        return {alg: float(np.sqrt(np.mean(np.square(v)))) for alg, v in self.errors.items()}

    def long_rows(self):
        rows = []
        for alg, errs in self.errors.items():
            for seed, e, ev in zip(self.seeds, errs, self.evaluations[alg]):
                rows.append({"seed": seed, "algorithm": alg, "metric": "posterior_mean_error", "value": e})
                rows.append({"seed": seed, "algorithm": alg, "metric": "likelihood_evaluations", "value": ev})
        return rows

    def summary(self):
        return {
            "reference": [float(v) for v in self.reference],
            "median_error": self.median_errors(),
            "rmse": self.rmse(),
            "mean_evaluations": {a: float(np.mean(v)) for a, v in self.evaluations.items()},
            "n_seeds": len(self.seeds),
        }
