import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from asmcmc.estimators import (
    EstimatorError,
    PriorConditionalProposal,
    ess,
    ess_vs_dimension_curve,
    estimate_expectation_single,
    estimate_expectation_weighted,
    is_marginal_likelihood,
    select_active_dimension,
)
from asmcmc.models import ConjugateGaussianModel, ConstantModel, PlaneModel, generate_dataset
from asmcmc.samplers import ChainTrace
from asmcmc.subspace import axis_split, factorize_gaussian_prior, split_from_direction


def conjugate_setup():
    m = ConjugateGaussianModel(np.array([1.0, 0.5]), generate_dataset("conjugate", 20, 4))
    f = factorize_gaussian_prior(m.prior.mean, m.prior.cov, axis_split(2, 1))
    return m, f


def quadrature_log_marginal(m, f, a):
    shift = -m.full_log_likelihood(np.array([a[0], 0.0]))
    g = lambda i: np.exp(f.log_p_i_given_a(np.array([i]), a) + m.full_log_likelihood(np.array([a[0], i])) + shift)
    val, _ = integrate.quad(g, -12, 12, limit=200)
    return np.log(val) - shift


@pytest.mark.invariant
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0.0, 1e6)).filter(lambda w: w.sum() > 0))
def test_ess_lies_between_one_and_n(w):
    w = w / w.sum()
    e = ess(w)
    assert 1.0 - 1e-9 <= e <= w.size + 1e-9


def test_ess_extremes():
    assert ess(np.full(8, 0.125)) == pytest.approx(8.0)
    assert ess(np.eye(5)[2]) == 1.0
    with pytest.raises(EstimatorError):
        ess(np.array([0.5, 0.6]))
    with pytest.raises(EstimatorError):
        ess(np.array([]))


def test_ideal_subspace_gives_exact_estimate():
    m = ConstantModel(3, log_c=-2.5)
    f = factorize_gaussian_prior(m.prior.mean, m.prior.cov, axis_split(3, 1))
    est = is_marginal_likelihood(np.array([0.4]), m, f, 25, 0)
    assert est.log_value == -2.5
    assert est.ess == pytest.approx(25.0)
    assert est.log_weight_variance == 0.0


def test_is_estimate_unbiased_against_quadrature():
    m, f = conjugate_setup()
    a = np.array([0.3])
    truth = quadrature_log_marginal(m, f, a)
    assert truth == pytest.approx(m.log_marginal_given_active(a, f), abs=1e-8)
    rng = np.random.default_rng(0)
    ratios = np.array([np.exp(is_marginal_likelihood(a, m, f, 10, rng).log_value - truth)
                       for _ in range(10_000)])
    se = ratios.std(ddof=1) / np.sqrt(ratios.size)
    assert abs(ratios.mean() - 1.0) < 3 * se


def test_inflated_proposal_stays_unbiased():
    m, f = conjugate_setup()
    a = np.array([-0.2])
    truth = m.log_marginal_given_active(a, f)
    q = PriorConditionalProposal(f, scale=1.5)
    rng = np.random.default_rng(1)
    ratios = np.array([np.exp(is_marginal_likelihood(a, m, f, 5, rng, q).log_value - truth)
                       for _ in range(5000)])
    se = ratios.std(ddof=1) / np.sqrt(ratios.size)
    assert abs(ratios.mean() - 1.0) < 3 * se


def test_zero_likelihood_everywhere_gives_minus_infinity():
    m = ConstantModel(2, log_c=-np.inf)
    f = factorize_gaussian_prior(m.prior.mean, m.prior.cov, axis_split(2, 1))
    est = is_marginal_likelihood(np.zeros(1), m, f, 4, 0)
    assert est.log_value == -np.inf
    assert est.ess == 0.0


def test_needs_inactive_points():
    m, f = conjugate_setup()
    with pytest.raises(EstimatorError):
        is_marginal_likelihood(np.zeros(1), m, f, 0)


def _toy_trace():
    split = axis_split(2, 1)
    active = np.array([[1.0], [2.0], [3.0]])
    particles = np.array([[[0.0], [10.0]], [[1.0], [3.0]], [[2.0], [2.0]]])
    weights = np.array([[0.5, 0.5], [0.25, 0.75], [1.0, 0.0]])
    selected = np.array([1, 0, 0])
    inactive = particles[np.arange(3), selected]
    theta = split.to_theta(active, inactive)
    return ChainTrace("as_mh", theta, active=active, inactive=inactive, selected=selected,
                      accepted=np.ones(3, bool), particles=particles, weights=weights,
                      particle_block="inactive", split=split)


def test_single_and_weighted_expectations():
    tr = _toy_trace()
    np.testing.assert_allclose(estimate_expectation_single(tr), [2.0, (10 + 1 + 2) / 3])
    np.testing.assert_allclose(estimate_expectation_weighted(tr), [2.0, (5 + 2.5 + 2) / 3])
    np.testing.assert_allclose(estimate_expectation_single(tr, burn_in=1), [2.5, 1.5])
    sq = estimate_expectation_single(tr, g=lambda th: th[..., :1] ** 2)
    np.testing.assert_allclose(sq, [(1 + 4 + 9) / 3])
    with pytest.raises(EstimatorError):
        estimate_expectation_single(tr, burn_in=3)


def test_flat_likelihood_curve_is_full_everywhere():
    m = ConstantModel(5, log_c=1.0)
    rows = ess_vs_dimension_curve(m, axis_split(5, 1), n_inactive=200, rng=0)
    assert [r["d_a"] for r in rows] == [1, 2, 3, 4]
    assert all(r["ess_percent"] == pytest.approx(100.0) for r in rows)
    assert select_active_dimension(rows) == 1


def test_plane_curve_is_high_with_one_active_direction():
    m = PlaneModel(generate_dataset("plane", 100, 1), d=25)
    split = split_from_direction(np.ones(25))
    rows = ess_vs_dimension_curve(m, split, n_inactive=2000, rng=0, active_dims=[1])
    assert rows[0]["ess_percent"] > 50.0


def test_selection_returns_none_when_nothing_qualifies():
    assert select_active_dimension([{"d_a": 1, "ess_percent": 10.0}]) is None
