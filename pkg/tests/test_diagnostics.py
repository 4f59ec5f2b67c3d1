import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from asmcmc.diagnostics import (
    ComparisonReport,
    chi2_against_normal,
    integrated_autocorr_time,
    ks_against_normal,
    mcmc_standard_error,
    mode_occupancy,
    posterior_mean_error,
    reference_mh_moments,
    reference_posterior_mean,
    reference_posterior_moments,
    spectrum_report,
)
from asmcmc.models import BananaModel, MixtureModel, PlaneModel, generate_dataset


def test_spectrum_single_gap():
    rep = spectrum_report(np.diag([100.0, 1.0, 1.0]))
    np.testing.assert_allclose(rep.eigenvalues, [100, 1, 1])
    assert rep.candidates == [1] and rep.dominant == 1
    rows = rep.rows()
    assert rows[0]["gap_ratio"] == pytest.approx(100.0) and np.isnan(rows[-1]["gap_ratio"])


def test_spectrum_zero_eigenvalues():
    rep = spectrum_report(np.diag([5.0, 0.0, 0.0]))
    assert np.isinf(rep.gap_ratios[0]) and np.isnan(rep.gap_ratios[1])
    assert rep.candidates == [1]
    empty = spectrum_report(np.zeros((3, 3)))
    assert empty.candidates == [] and empty.dominant is None


@given(st.lists(st.floats(0.01, 100.0), min_size=2, max_size=6))
def test_spectrum_is_sorted_and_rotation_invariant(vals):
    rng = np.random.default_rng(len(vals))
    q, _ = np.linalg.qr(rng.standard_normal((len(vals), len(vals))))
    rep = spectrum_report(q @ np.diag(vals) @ q.T)
    np.testing.assert_allclose(rep.eigenvalues, sorted(vals, reverse=True), rtol=1e-8, atol=1e-10)


def test_posterior_mean_error():
    assert posterior_mean_error([3.0, 4.0], [0.0, 0.0]) == 5.0
    with pytest.raises(ValueError):
        posterior_mean_error([1.0, 2.0], [1.0])


def test_mode_occupancy():
    theta = np.array([[1.0, 1.0, 0.0], [-2.0, 0.5, 0.0], [-1.0, -1.0, 0.0], [0.5, -0.5, 9.0]])
    assert mode_occupancy(theta) == (0.5, 0.25)
    assert mode_occupancy(theta, burn_in=2) == (0.5, 0.0)
    assert mode_occupancy(theta, functional=lambda t: t[:, 2] - 1) == (0.75, 0.25)
    with pytest.raises(ValueError):
        mode_occupancy(theta, burn_in=4)


def test_autocorrelation_time_iid_and_ar1():
    rng = np.random.default_rng(0)
    assert integrated_autocorr_time(rng.standard_normal(50_000)) == pytest.approx(1.0, abs=0.1)
    phi = 0.8
    x = np.empty(200_000)
    x[0] = 0.0
    e = rng.standard_normal(x.size)
    for t in range(1, x.size):
        x[t] = phi * x[t - 1] + e[t]
    assert integrated_autocorr_time(x) == pytest.approx((1 + phi) / (1 - phi), rel=0.1)
    assert integrated_autocorr_time(np.ones(10)) == np.inf
    se = mcmc_standard_error(x)
    assert se[0] == pytest.approx(np.sqrt(9 / (1 - phi ** 2) / x.size), rel=0.15)


def test_goodness_of_fit_p_values():
    # calibrated tests reject a true null at roughly the nominal rate
    ks, chi = [], []
    for seed in range(200):
        x = np.random.default_rng(seed).normal(2.0, 0.5, 4000)
        p, n = ks_against_normal(x, 2.0, 0.5)
        ks.append(p)
        chi.append(chi2_against_normal(x, 2.0, 0.5)[0])
    assert n > 1000
    assert np.mean(np.array(ks) < 0.05) < 0.1
    assert np.mean(np.array(chi) < 0.05) < 0.1
    x = np.random.default_rng(0).normal(2.0, 0.5, 4000)
    assert ks_against_normal(x, 2.3, 0.5)[0] < 1e-6
    assert chi2_against_normal(x, 2.0, 0.8)[0] < 1e-6


def test_banana_quadrature_without_curvature_is_the_plane_posterior():
    y = generate_dataset("banana", 100, 1)
    banana = BananaModel(y, d=6, k=2, b=0.0)
    plane = PlaneModel(y, d=6)
    mean, cov, info = reference_posterior_moments(banana)
    assert info["method"] == "quadrature"
    pm, pc = plane.posterior()
    np.testing.assert_allclose(mean, pm, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(cov, pc, rtol=1e-7, atol=1e-7 * np.abs(pc).max())


def test_banana_quadrature_agrees_with_mh_on_small_problem():
    y = generate_dataset("banana", 100, 1)
    m = BananaModel(y, d=3, k=1, b=0.2, prior_var=1.0)
    mean, cov, _ = reference_posterior_moments(m, method="quadrature")
    mh_mean, mh_cov = reference_mh_moments(m, n_steps=400_000, n_chains=200,
                                          proposal_cov=0.5 * cov, seed=1)
    np.testing.assert_allclose(mh_mean, mean, atol=0.03)
    np.testing.assert_allclose(mh_cov, cov, atol=0.05)


def test_reference_method_dispatch():
    y = generate_dataset("plane", 100, 1)
    plane = PlaneModel(y, d=3)
    mean, info = reference_posterior_mean(plane)
    assert info["method"] == "conjugate"
    np.testing.assert_allclose(mean, plane.posterior()[0])
    with pytest.raises(ValueError):
        reference_posterior_moments(plane, method="quadrature")
    with pytest.raises(ValueError):
        reference_posterior_moments(MixtureModel(generate_dataset("mixture", 100, 1)),
                                    method="conjugate")


def test_comparison_report():
    rep = ComparisonReport(np.zeros(2))
    for seed in range(3):
        rep.add("a", seed, [seed, 0.0], 10)
        rep.add("b", seed, [0.0, 2.0 * seed], 20)
    assert rep.median_errors() == {"a": 1.0, "b": 2.0}
    assert rep.rmse()["a"] == pytest.approx(np.sqrt(5 / 3))
    assert len(rep.long_rows()) == 12
    s = rep.summary()
    assert s["n_seeds"] == 3 and s["mean_evaluations"] == {"a": 10.0, "b": 20.0}
