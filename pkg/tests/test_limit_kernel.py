import math

import numpy as np
import pytest

from src.core.errors import InvalidSpec, ZeroInput
from src.core.limit_kernel import (
    BivariateCov,
    GaussMap,
    input_cov,
    jacot_recursion,
    limit_contributions,
    limit_gram,
    limit_kernel,
    limit_state,
    mc_gauss_oracle,
    ntk_limit_densenet,
    ntk_limit_resnet,
    ntk_limit_vanilla,
    relu_cov_map,
    relu_dot_map,
)
from src.core.net_core import ArchitectureSpec, KernelScope, WeightIndex, reduce
from src.core.ntk_exact import avg_ntk_gram
from src.core.numerics import RngStream

ONE = np.array([1.0])


def pair(dim: int, seed: int):
    generator = np.random.default_rng(seed)
    x, y = generator.normal(size=(2, dim))
    return x / np.linalg.norm(x), y / np.linalg.norm(y)


def test_relu_maps_closed_form_values():
    assert relu_cov_map(BivariateCov(1.0, 1.0, 1.0)).c == pytest.approx(1.0)
    assert relu_cov_map(BivariateCov(1.0, 1.0, 0.0)).c == pytest.approx(1.0 / math.pi)
    assert relu_dot_map(BivariateCov(1.0, 1.0, 1.0)) == pytest.approx(1.0)
    assert relu_dot_map(BivariateCov(1.0, 1.0, 0.0)) == pytest.approx(0.5)
    assert relu_dot_map(BivariateCov(1.0, 1.0, -1.0)) == pytest.approx(0.0, abs=1e-12)


def test_relu_cov_map_preserves_diagonals():
    out = relu_cov_map(BivariateCov(1.0, 2.0, 0.6 * math.sqrt(2.0)))

    assert out.a == 1.0
    assert out.b == 2.0
    assert abs(out.c) <= math.sqrt(out.a * out.b)


def test_bivariate_cov_rejects_impossible_correlation():
    with pytest.raises(ValueError):
        BivariateCov(1.0, 1.0, 1.5)
    assert BivariateCov(1.0, 1.0, 1.0 + 1e-13).c == 1.0


@pytest.mark.parametrize(
    "cov, map_kind",
    [
        (BivariateCov(1.0, 2.0, 0.6 * math.sqrt(2.0)), GaussMap.COV),
        (BivariateCov(1.0, 1.0, 1.0), GaussMap.COV),
        (BivariateCov(1.0, 1.0, 0.0), GaussMap.DOT),
        (BivariateCov(1.0, 1.0, 0.8), GaussMap.DOT),
    ],
)
def test_closed_maps_agree_with_monte_carlo(cov, map_kind):
    estimate = mc_gauss_oracle(cov, map_kind, 1_000_000, RngStream(17))
    expected = relu_cov_map(cov).c if map_kind is GaussMap.COV else relu_dot_map(cov)

    stderr = max(estimate.stderr_of_mean, 1e-12)
    assert abs(estimate.mean - expected) <= 4 * stderr


def test_oracle_requires_enough_samples():
    with pytest.raises(ValueError):
        mc_gauss_oracle(BivariateCov(1.0, 1.0, 0.0), GaussMap.DOT, 100, RngStream(0))


def test_input_covariance_divides_by_input_dimension():
    cov = input_cov(np.array([1.0, 1.0]), np.array([1.0, -1.0]))

    assert (cov.a, cov.b, cov.c) == (1.0, 1.0, 0.0)
    with pytest.raises(ZeroInput):
        input_cov(np.zeros(2), np.ones(2))


def test_vanilla_diagonal_grows_linearly():
    for L in range(5):
        assert ntk_limit_vanilla(ONE, ONE, L) == pytest.approx(L + 1)


def test_vanilla_depth_zero_is_input_product():
    x, y = np.array([0.6]), np.array([-2.0])

    assert ntk_limit_vanilla(x, y, 0) == pytest.approx(-1.2)


@pytest.mark.parametrize("L", [1, 2, 5])
def test_vanilla_contribution_sum_matches_recursion(L):
    x, y = pair(6, L)

    assert ntk_limit_vanilla(x, y, L) == pytest.approx(jacot_recursion(x, y, L), rel=1e-12)


def test_resnet_single_block_diagonal():
    spec = ArchitectureSpec.resnet(1, 1, 1, alphas=(0.3,))

    assert ntk_limit_resnet(ONE, ONE, spec) == pytest.approx(0.6)


@pytest.mark.parametrize("m", [2, 3])
def test_resnet_closed_sum_matches_adjoint_form(m):
    spec = ArchitectureSpec.resnet(6, 4, 1, alphas=(0.3, 0.1, 0.7, 0.2), branch_depth=m)
    x, y = pair(6, 3)

    for scope in KernelScope:
        closed = ntk_limit_resnet(x, y, spec, scope, method="closed")
        adjoint = ntk_limit_resnet(x, y, spec, scope, method="adjoint")
        assert closed == pytest.approx(adjoint, rel=1e-12)


def test_densenet_unit_alpha_diagonal_is_harmonic():
    spec = ArchitectureSpec.densenet(1, 5, 1, alpha=1.0)

    expected = sum(1.0 / l for l in range(1, 6))
    assert ntk_limit_densenet(ONE, ONE, spec) == pytest.approx(expected, rel=1e-12)


def test_densenet_depth_one_is_base_case():
    spec = ArchitectureSpec.densenet(4, 1, 1, alpha=0.5)
    x, y = pair(4, 5)
    state = limit_state(spec, x, y)

    assert ntk_limit_densenet(x, y, spec) == pytest.approx(0.5 * state.sigma[(0, 0)].c, rel=1e-12)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_densenet_recursion_matches_closed_sum(alpha):
    spec = ArchitectureSpec.densenet(6, 6, 1, alpha=alpha)
    x, y = pair(6, 7)

    for scope in KernelScope:
        recursion = ntk_limit_densenet(x, y, spec, scope, method="recursion")
        closed = ntk_limit_densenet(x, y, spec, scope, method="closed")
        assert recursion == pytest.approx(closed, rel=1e-12)


def test_limit_kernel_rejects_reduced_spec():
    spec = reduce(ArchitectureSpec.resnet(3, 2, 4), WeightIndex(1, 1))

    with pytest.raises(InvalidSpec):
        ntk_limit_resnet(*pair(3, 0), spec)


def test_contributions_sum_to_kernel():
    spec = ArchitectureSpec.densenet(5, 3, 1, alpha=0.5)
    x, y = pair(5, 9)

    contributions = limit_contributions(spec, x, y, KernelScope.FULL)

    assert sum(contributions.values()) == pytest.approx(limit_kernel(spec, x, y, KernelScope.FULL), rel=1e-12)
    assert set(contributions) >= {WeightIndex.initial(), WeightIndex.final()}


def test_limit_gram_matches_pairwise_kernel():
    spec = ArchitectureSpec.resnet(4, 3, 1, alphas=(0.2, 0.4, 0.1))
    X = np.stack([pair(4, s)[0] for s in range(4)])

    gram = limit_gram(spec, X, KernelScope.FULL)

    for i in range(4):
        for j in range(4):
            expected = limit_kernel(spec, X[i], X[j], KernelScope.FULL)
            assert gram.entries[i, j] == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize(
    "spec",
    [
        ArchitectureSpec.vanilla(8, 2, 256),
        ArchitectureSpec.resnet(8, 2, 256, alphas=(0.3, 0.3)),
        ArchitectureSpec.densenet(8, 3, 256, alpha=0.5),
    ],
)
def test_empirical_kernel_approaches_limit(spec):
    x, y = pair(8, 11)
    X = np.stack([x, y])

    limit = limit_gram(spec, X, KernelScope.FULL).entries
    empirical = avg_ntk_gram(spec, X, RngStream(23), 100, KernelScope.FULL).entries

    assert np.max(np.abs(empirical - limit)) / limit[0, 0] < 0.1


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["vanilla", "resnet", "densenet"])
@pytest.mark.parametrize("L", [2, 3])
def test_empirical_kernel_converges_at_acceptance_scale(kind, L):
    builders = {
        "vanilla": lambda: ArchitectureSpec.vanilla(8, L, 512),
        "resnet": lambda: ArchitectureSpec.resnet(8, L, 512, alphas=(0.3,) * L),
        "densenet": lambda: ArchitectureSpec.densenet(8, L, 512, alpha=0.5),
    }
    spec = builders[kind]()
    X = np.stack([v for s in range(5) for v in pair(8, 100 + s)])

    limit = limit_gram(spec, X, KernelScope.FULL).entries
    empirical = avg_ntk_gram(spec, X, RngStream(29), 200, KernelScope.FULL).entries

    for p in range(5):
        i, j = 2 * p, 2 * p + 1
        block = np.abs(empirical[np.ix_([i, j], [i, j])] - limit[np.ix_([i, j], [i, j])])
        assert np.max(block) / limit[i, i] < 0.05
