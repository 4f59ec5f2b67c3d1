import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from asmcmc.models import PlaneModel, generate_dataset
from asmcmc.subspace import (
    Gaussian,
    SubspaceError,
    SubspaceSplit,
    axis_split,
    estimate_gradient_matrix,
    factorize_gaussian_prior,
    split_from_direction,
    split_from_matrix,
)

from conftest import random_orthonormal, random_spd


def _split_case(seed, d, d_a):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    return split_from_matrix(A @ A.T, d_a), rng


dims = st.integers(2, 8).flatmap(lambda d: st.tuples(st.just(d), st.integers(1, d - 1)))


def test_diagonal_matrix_gives_first_axis():
    s = split_from_matrix(np.diag([3.0, 2.0, 1.0]), 1)
    np.testing.assert_allclose(np.abs(s.B_a[:, 0]), [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(s.eigenvalues, [3.0, 2.0, 1.0])


def test_degenerate_spectrum_still_orthonormal():
    s = split_from_matrix(np.eye(3), 1)
    np.testing.assert_allclose(s.basis.T @ s.basis, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(s.eigenvalues, 1.0)


@pytest.mark.parametrize("d_a", [0, 3, -1])
def test_active_dimension_out_of_range(d_a):
    with pytest.raises(SubspaceError):
        split_from_matrix(np.eye(3), d_a)


def test_indefinite_matrix_is_rejected():
    with pytest.raises(SubspaceError):
        split_from_matrix(np.diag([1.0, -1.0]), 1)


@pytest.mark.invariant
@given(st.integers(0, 10_000), dims)
def test_split_is_orthonormal_and_sorted(seed, dd):
    d, d_a = dd
    s, _ = _split_case(seed, d, d_a)
    np.testing.assert_allclose(s.basis.T @ s.basis, np.eye(d), atol=1e-10)
    assert np.all(np.diff(s.eigenvalues) <= 1e-12 * max(1.0, s.eigenvalues[0]))
    assert np.all(s.eigenvalues >= -1e-10)
    assert s.d_a + s.d_i == d


@pytest.mark.invariant
@given(st.integers(0, 10_000), dims)
def test_reparameterisation_round_trip(seed, dd):
    d, d_a = dd
    s, rng = _split_case(seed, d, d_a)
    theta = rng.standard_normal((4, d)) * 10
    a, i = s.from_theta(theta)
    np.testing.assert_allclose(s.to_theta(a, i), theta, atol=1e-9)
    a2 = rng.standard_normal(d_a)
    i2 = rng.standard_normal(d - d_a)
    b, j = s.from_theta(s.to_theta(a2, i2))
    np.testing.assert_allclose(b, a2, atol=1e-10)
    np.testing.assert_allclose(j, i2, atol=1e-10)


def test_shape_mismatch_is_an_error():
    s = axis_split(3, 1)
    with pytest.raises(SubspaceError):
        s.to_theta(np.zeros(2), np.zeros(2))
    with pytest.raises(SubspaceError):
        s.from_theta(np.zeros(4))


def test_split_serialisation_round_trip(tmp_path):
    s, _ = _split_case(3, 5, 2)
    s.save(tmp_path / "split.json")
    t = SubspaceSplit.load(tmp_path / "split.json")
    np.testing.assert_array_equal(t.B_a, s.B_a)
    np.testing.assert_array_equal(t.B_i, s.B_i)
    np.testing.assert_array_equal(t.eigenvalues, s.eigenvalues)


def test_swapped_and_resized_splits():
    s, _ = _split_case(4, 5, 2)
    w = s.swapped()
    np.testing.assert_array_equal(w.B_a, s.B_i)
    r = s.with_active_dim(3)
    np.testing.assert_array_equal(r.basis, s.basis)
    assert r.d_a == 3


def test_direction_split_spans_vector():
    v = np.array([1.0, 2.0, -1.0])
    s = split_from_direction(v)
    np.testing.assert_allclose(s.B_a[:, 0], v / np.linalg.norm(v))
    np.testing.assert_allclose(s.basis.T @ s.basis, np.eye(3), atol=1e-12)


def test_isotropic_prior_factorises_into_isotropic_blocks():
    s, _ = _split_case(0, 4, 1)
    f = factorize_gaussian_prior(np.zeros(4), 2.5 * np.eye(4), s)
    np.testing.assert_allclose(f.active.cov, 2.5 * np.eye(1), atol=1e-12)
    np.testing.assert_allclose(f.inactive_given_active.cov, 2.5 * np.eye(3), atol=1e-12)
    for a in ([0.0], [3.0], [-7.0]):
        np.testing.assert_allclose(f.inactive_given_active.mean(np.array(a)), 0.0, atol=1e-12)


def test_independent_coordinates_give_constant_conditional():
    f = factorize_gaussian_prior(np.zeros(2), np.diag([1.0, 4.0]), axis_split(2, 1))
    for a in (-2.0, 0.0, 5.0):
        assert f.inactive_given_active.mean(np.array([a]))[0] == pytest.approx(0.0)
    assert f.inactive_given_active.cov[0, 0] == pytest.approx(4.0)


@pytest.mark.invariant
@given(st.integers(0, 10_000), dims)
def test_prior_density_factorises_both_ways(seed, dd):
    d, d_a = dd
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, d)
    mean = rng.standard_normal(d)
    s = SubspaceSplit(*np.split(random_orthonormal(rng, d), [d_a], axis=1), np.zeros(d))
    f = factorize_gaussian_prior(mean, cov, s)
    theta = mean + rng.standard_normal((3, d))
    a, i = s.from_theta(theta)
    ref = multivariate_normal(mean, cov).logpdf(theta)
    np.testing.assert_allclose(f.log_p_a(a) + f.log_p_i_given_a(i, a), ref, rtol=1e-8, atol=1e-8)
    rev = f.inactive.logpdf(i) + f.active_given_inactive.logpdf(a, i)
    np.testing.assert_allclose(rev, ref, rtol=1e-8, atol=1e-8)
    g = f.swapped()
    np.testing.assert_allclose(g.log_joint(i, a), ref, rtol=1e-8, atol=1e-8)


def test_gaussian_matches_scipy(rng):
    cov = random_spd(rng, 3)
    g = Gaussian(np.ones(3), cov)
    x = rng.standard_normal((5, 3))
    np.testing.assert_allclose(g.logpdf(x), multivariate_normal(np.ones(3), cov).logpdf(x))
    assert isinstance(g.logpdf(x[0]), float)
    draws = g.sample(rng, 20_000)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.1 * np.abs(cov).max())


def test_gradient_matrix_of_plane_is_rank_one():
    m = PlaneModel(generate_dataset("plane", 100, 1), d=5)
    C = estimate_gradient_matrix(m, 500, 0)
    s = split_from_matrix(C, 1)
    assert abs(s.B_a[:, 0] @ np.ones(5) / np.sqrt(5)) == pytest.approx(1.0, abs=1e-8)
    assert s.eigenvalues[1] < 1e-8 * s.eigenvalues[0]


def test_non_finite_gradient_is_reported():
    class Broken(PlaneModel):
        def grad_log_likelihood(self, theta):
            g = super().grad_log_likelihood(theta)
            g[..., 0] = np.nan
            return g

    with pytest.raises(SubspaceError, match="non-finite gradient"):
        estimate_gradient_matrix(Broken(np.zeros(3), d=2), 4, 0)
