import numpy as np
import pytest

from src.core.errors import NonFiniteSample, NotPositiveDefinite, ShapeMismatch
from src.core.numerics import (
    MomentEstimate,
    RngStream,
    accumulate,
    gaussian_matrix,
    independence_pvalue,
    paired_z,
    spd_solve,
)


def test_rng_stream_is_reproducible():
    a = gaussian_matrix(RngStream(42, 7), 5, 3)
    b = gaussian_matrix(RngStream(42, 7), 5, 3)

    assert a.shape == (5, 3)
    assert np.array_equal(a, b)


def test_distinct_streams_are_independent():
    a = gaussian_matrix(RngStream(42, 0), 200, 50).ravel()
    b = gaussian_matrix(RngStream(42, 1), 200, 50).ravel()

    assert not np.array_equal(a, b)
    assert independence_pvalue(a, b) > 1e-4


def test_at_and_fork_derive_new_streams():
    base = RngStream(3)

    assert base.at(2) == RngStream(3, 2)
    assert base.fork(1, 2) == base.fork(1, 2)
    assert base.fork(1, 2) != base.fork(2, 1)


def test_rng_stream_rejects_negative_seed():
    with pytest.raises(ValueError):
        RngStream(-1)


def test_spd_solve_matches_direct_solution():
    H = np.array([[2.0, 1.0], [1.0, 2.0]])
    B = np.array([[1.0], [0.0]])

    X = spd_solve(H, B)

    assert np.allclose(X, [[2.0 / 3.0], [-1.0 / 3.0]], atol=1e-12)


def test_spd_solve_rejects_singular_matrix():
    with pytest.raises(NotPositiveDefinite):
        spd_solve(np.ones((2, 2)), np.ones((2, 1)))


def test_spd_solve_jitter_rescues_singular_matrix():
    X = spd_solve(np.ones((2, 2)), np.ones((2, 1)), jitter=1.0)

    # (11ᵀ + I)x = 1 → x = 1/3
    assert np.allclose(X, 1.0 / 3.0)


def test_spd_solve_rejects_bad_shapes():
    with pytest.raises(ShapeMismatch):
        spd_solve(np.eye(3), np.ones((2, 1)))
    with pytest.raises(ShapeMismatch):
        spd_solve(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones((2, 1)))


def test_moment_estimate_from_samples():
    estimate = MomentEstimate.from_samples(np.array([1.0, 2.0, 3.0, 4.0]))

    assert estimate.n_samples == 4
    assert estimate.mean == pytest.approx(2.5)
    assert estimate.second_central_moment == pytest.approx(1.25)
    assert estimate.stderr_of_mean == pytest.approx(np.sqrt(1.25 / 4))


def test_moment_estimate_merge_equals_pooled_estimate():
    samples = np.random.default_rng(0).normal(size=1001)
    left = MomentEstimate.from_samples(samples[:400])
    right = MomentEstimate.from_samples(samples[400:])
    pooled = MomentEstimate.from_samples(samples)

    merged = left.merge(right)

    assert merged.n_samples == pooled.n_samples
    assert merged.mean == pytest.approx(pooled.mean, rel=1e-12)
    assert merged.second_central_moment == pytest.approx(pooled.second_central_moment, rel=1e-12)
    assert MomentEstimate.empty().merge(left) == left


def test_accumulate_matches_batch_estimate():
    samples = [0.5, -1.0, 3.0, 2.0]
    estimate = MomentEstimate.empty()
    for value in samples:
        estimate = accumulate(estimate, value)

    batch = MomentEstimate.from_samples(np.array(samples))
    assert estimate.mean == pytest.approx(batch.mean)
    assert estimate.second_central_moment == pytest.approx(batch.second_central_moment)


def test_non_finite_samples_are_rejected():
    with pytest.raises(NonFiniteSample):
        MomentEstimate.from_samples(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteSample):
        accumulate(MomentEstimate.empty(), float("inf"))


def test_paired_z_uses_rounding_floor():
    differences = np.full(100, 1e-16)

    _, stderr, z = paired_z(differences, scale=1.0)

    assert stderr == pytest.approx(0.0, abs=1e-30)
    assert abs(z) < 1e-5


def test_paired_z_detects_shift():
    differences = np.random.default_rng(1).normal(1.0, 1.0, size=10_000)

    mean, stderr, z = paired_z(differences)

    assert mean == pytest.approx(1.0, abs=0.05)
    assert z > 50


def test_gaussian_matrix_has_unit_moments():
    values = gaussian_matrix(RngStream(8), 1000, 1000)

    assert abs(values.mean()) < 4e-3
    assert values.var() == pytest.approx(1.0, rel=0.01)


def test_spd_solve_simple_systems():
    B = np.arange(6.0).reshape(3, 2)

    assert np.allclose(spd_solve(np.eye(3), B), B)
    assert np.allclose(spd_solve(2.0 * np.eye(3), np.eye(3)), 0.5 * np.eye(3))


def test_spd_solve_matches_dense_solver_on_random_spd():
    generator = np.random.default_rng(9)
    A = generator.normal(size=(8, 8))
    H = A @ A.T + np.eye(8)
    B = generator.normal(size=(8, 3))

    assert np.allclose(spd_solve(H, B), np.linalg.solve(H, B), rtol=0.0, atol=1e-10)


def test_moment_estimate_small_sample_and_merge():
    estimate = MomentEstimate.from_samples(np.array([1.0, 2.0, 3.0]))
    merged = MomentEstimate.from_samples(np.array([1.0, 2.0])).merge(MomentEstimate.from_samples(np.array([3.0])))

    assert estimate.mean == pytest.approx(2.0)
    assert estimate.second_central_moment == pytest.approx(2.0 / 3.0)
    assert merged.mean == pytest.approx(estimate.mean)
    assert merged.second_central_moment == pytest.approx(estimate.second_central_moment)
