import numpy as np
import pytest

from src.core import worker_manager
from src.core.errors import TraceMismatch
from src.core.net_core import (
    ArchitectureSpec,
    KernelScope,
    WeightIndex,
    WeightSet,
    forward,
    reduce,
    sample_weights,
    weight_keys,
)
from src.core.ntk_exact import (
    avg_ntk_gram,
    backward,
    f_complement,
    f_through,
    gradients,
    jacobian_norm_sq,
    ntk_contributions,
    ntk_entry,
    ntk_gram,
)
from src.core.numerics import RngStream

ARCHS = {
    "vanilla": ArchitectureSpec.vanilla(5, 4, 8),
    "resnet": ArchitectureSpec.resnet(5, 4, 8, alphas=(0.3, 0.2, 0.5, 0.1)),
    "densenet": ArchitectureSpec.densenet(5, 4, 8, alpha=0.7),
}


@pytest.fixture
def fresh_workers():
    yield worker_manager.configure_workers
    worker_manager.configure_workers()


def unit(dim: int, seed: int = 0) -> np.ndarray:
    x = np.random.default_rng(seed).normal(size=dim)
    return x / np.linalg.norm(x)


def finite_difference(spec, w: WeightSet, x: np.ndarray, k: WeightIndex, eps: float = 1e-6) -> np.ndarray:
    """Diferencias centrales de f respecto a cada entrada de W^k, en un solo forward por lado"""
    W = w.get(k)
    rows, cols = W.shape
    count = rows * cols
    tiled = WeightSet(
        np.broadcast_to(w.initial, (count,) + w.initial.shape),
        {key: np.broadcast_to(value, (count,) + value.shape) for key, value in w.body.items()},
        np.broadcast_to(w.final, (count,) + w.final.shape),
    )
    bumps = eps * np.eye(count).reshape(count, rows, cols)
    plus = forward(spec, tiled.with_matrix(k, W[None] + bumps), x).outputs[:, 0]
    minus = forward(spec, tiled.with_matrix(k, W[None] - bumps), x).outputs[:, 0]
    return ((plus - minus) / (2 * eps)).reshape(rows, cols)


@pytest.mark.parametrize("name", sorted(ARCHS))
@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(name, seed):
    spec = ARCHS[name]
    w = sample_weights(spec, RngStream(seed, 11))
    x = unit(spec.input_dim, seed)
    _, grads = gradients(spec, w, x)

    errors, scale = [], 0.0
    for k in weight_keys(spec):
        exact = grads.matrix(k)
        errors.append(np.max(np.abs(exact - finite_difference(spec, w, x, k))))
        scale = max(scale, np.max(np.abs(exact)))

    assert max(errors) / scale < 1e-5


def test_backward_of_reduced_network_matches_finite_differences():
    spec = reduce(ARCHS["densenet"], WeightIndex(3, 1))
    w = sample_weights(spec, RngStream(8))
    x = unit(spec.input_dim, 3)
    _, grads = gradients(spec, w, x)

    for k in weight_keys(spec):
        assert np.allclose(grads.matrix(k), finite_difference(spec, w, x, k), atol=1e-6)
    # W[2,0] queda podada
    assert not np.any(grads.matrix(WeightIndex(2, 0)))


def test_backward_rejects_foreign_trace():
    spec = ARCHS["vanilla"]
    other = ArchitectureSpec.vanilla(5, 3, 8)
    trace = forward(other, sample_weights(other, RngStream(0)), unit(5))

    with pytest.raises(TraceMismatch):
        backward(spec, sample_weights(spec, RngStream(0)), trace)


@pytest.mark.parametrize("name", sorted(ARCHS))
def test_ntk_entry_is_sum_of_jacobian_inner_products(name):
    spec = ARCHS[name]
    w = sample_weights(spec, RngStream(2))
    x, x_prime = unit(5, 0), unit(5, 1)
    _, grads_x = gradients(spec, w, x)
    _, grads_y = gradients(spec, w, x_prime)

    expected = sum(float(np.sum(grads_x.matrix(k) * grads_y.matrix(k))) for k in weight_keys(spec))
    contributions = ntk_contributions(spec, w, x, x_prime)

    assert ntk_entry(spec, w, x, x_prime) == pytest.approx(expected, rel=1e-10)
    assert sum(contributions.values()) == pytest.approx(expected, rel=1e-10)
    assert ntk_entry(spec, w, x, x) == pytest.approx(
        sum(jacobian_norm_sq(grads_x, k) for k in weight_keys(spec)), rel=1e-10
    )


def test_ntk_gram_is_symmetric_positive_semidefinite():
    spec = ARCHS["resnet"]
    w = sample_weights(spec, RngStream(3))
    X = [unit(5, s) for s in range(6)]

    gram = ntk_gram(spec, w, X)

    assert gram.size == 6
    assert np.array_equal(gram.entries, gram.entries.T)
    assert gram.min_eigenvalue() > -1e-10 * gram.trace


def test_kernel_scopes_partition_the_full_kernel():
    spec = ARCHS["densenet"]
    w = sample_weights(spec, RngStream(4))
    x, x_prime = unit(5, 2), unit(5, 3)
    contributions = ntk_contributions(spec, w, x, x_prime)

    full = ntk_entry(spec, w, x, x_prime, KernelScope.FULL)
    body = ntk_entry(spec, w, x, x_prime, KernelScope.BODY)
    no_input = ntk_entry(spec, w, x, x_prime, KernelScope.NO_INPUT)

    assert full - no_input == pytest.approx(contributions[WeightIndex.initial()], rel=1e-9, abs=1e-12)
    assert no_input - body == pytest.approx(contributions[WeightIndex.final()], rel=1e-9, abs=1e-12)


def test_path_sums_through_every_vanilla_layer_equal_output():
    spec = ARCHS["vanilla"]
    w = sample_weights(spec, RngStream(5))
    trace, grads = gradients(spec, w, unit(5, 4))

    for k in weight_keys(spec):
        assert f_through(spec, w, trace, grads, k) == pytest.approx(trace.output, rel=1e-10)
        assert f_complement(spec, w, trace, grads, k) == pytest.approx(0.0, abs=1e-10)


def test_resnet_path_sums_split_the_output():
    spec = ARCHS["resnet"]
    w = sample_weights(spec, RngStream(6))
    trace, grads = gradients(spec, w, unit(5, 5))
    k = WeightIndex(2, 1)

    through = f_through(spec, w, trace, grads, k)
    complement = f_complement(spec, w, trace, grads, k)

    assert through + complement == pytest.approx(trace.output, rel=1e-12)
    assert f_through(spec, w, trace, grads, WeightIndex.final()) == pytest.approx(trace.output, rel=1e-10)
    # el skip del bloque 2 aporta caminos que no pasan por W[2,1]
    assert abs(complement) > 1e-8


def test_avg_ntk_gram_single_draw_matches_ntk_gram():
    spec = ARCHS["resnet"]
    X = [unit(5, s) for s in range(3)]
    base = RngStream(9)

    averaged = avg_ntk_gram(spec, X, base, 1)
    direct = ntk_gram(spec, sample_weights(spec, base.at(1)), X)

    assert np.allclose(averaged.entries, direct.entries, rtol=1e-12, atol=0.0)


def test_avg_ntk_gram_does_not_depend_on_thread_count(fresh_workers):
    spec = ARCHS["densenet"]
    X = [unit(5, s) for s in range(3)]

    fresh_workers(threads=1, float_budget=5_000)
    serial = avg_ntk_gram(spec, X, RngStream(10), 12)
    fresh_workers(threads=4, float_budget=5_000)
    parallel = avg_ntk_gram(spec, X, RngStream(10), 12)

    assert np.array_equal(serial.entries, parallel.entries)


def test_avg_ntk_gram_rejects_zero_draws():
    with pytest.raises(ValueError):
        avg_ntk_gram(ARCHS["vanilla"], [unit(5)], RngStream(0), 0)


def test_densenet_last_layer_path_sums_add_up_to_output():
    spec = ARCHS["densenet"]
    w = sample_weights(spec, RngStream(12))
    trace, grads = gradients(spec, w, unit(5, 6))

    total = sum(f_through(spec, w, trace, grads, WeightIndex(spec.depth, h)) for h in range(spec.depth))

    assert total == pytest.approx(trace.output, rel=1e-10)


def test_single_block_resnet_path_sum_is_branch_output():
    spec = ArchitectureSpec.resnet(5, 1, 8, alphas=(0.4,))
    w = sample_weights(spec, RngStream(13))
    trace, grads = gradients(spec, w, unit(5, 7))

    skip_only = (w.final @ trace.block_outputs[0][0])[0] / np.sqrt(8)

    assert f_through(spec, w, trace, grads, WeightIndex(1, 1)) == pytest.approx(trace.output - skip_only, rel=1e-10)


def test_ntk_entry_symmetry_and_small_grams():
    spec = ARCHS["vanilla"]
    w = sample_weights(spec, RngStream(14))
    x, x_prime = unit(5, 8), unit(5, 9)

    assert ntk_entry(spec, w, x, x_prime) == pytest.approx(ntk_entry(spec, w, x_prime, x), rel=1e-12)
    single = ntk_gram(spec, w, [x])
    assert single.size == 1
    assert single.entries[0, 0] == pytest.approx(ntk_entry(spec, w, x, x), rel=1e-12)
    duplicated = ntk_gram(spec, w, [x, x, x_prime])
    assert np.allclose(duplicated.entries[0], duplicated.entries[1], rtol=1e-12)
