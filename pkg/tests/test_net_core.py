import math

import numpy as np
import pytest

from src.core.errors import InvalidIndex, InvalidSpec, ShapeMismatch, ZeroInput
from src.core.net_core import (
    ArchitectureSpec,
    ArchKind,
    KernelScope,
    WeightIndex,
    WeightSet,
    build_arch,
    dense_inputs,
    forward,
    parameter_count,
    reduce,
    sample_weight_batch,
    sample_weights,
    validate_index,
    weight_keys,
)
from src.core.numerics import RngStream


def unit(dim: int, seed: int = 0) -> np.ndarray:
    x = np.random.default_rng(seed).normal(size=dim)
    return x / np.linalg.norm(x)


def test_build_arch_rejects_invalid_specs():
    with pytest.raises(InvalidSpec) as excinfo:
        build_arch(ArchitectureSpec(ArchKind.RESNET, 3, 2, 4, branch_depth=1, alphas=(0.1, 0.1)))
    assert excinfo.value.field == "branch_depth"

    with pytest.raises(InvalidSpec):
        build_arch(ArchitectureSpec(ArchKind.RESNET, 3, 3, 4, alphas=(0.1, 0.1)))
    with pytest.raises(InvalidSpec):
        ArchitectureSpec.resnet(3, 2, 4, alphas=(0.1, -0.1))
    with pytest.raises(InvalidSpec):
        ArchitectureSpec.densenet(3, 2, 4, alpha=0.0)
    with pytest.raises(InvalidSpec):
        ArchitectureSpec.vanilla(3, -1, 4)
    with pytest.raises(InvalidSpec):
        ArchitectureSpec.densenet(3, 0, 4)
    with pytest.raises(InvalidSpec):
        ArchitectureSpec.vanilla(3, 2, 0)


def test_resnet_default_alphas_scale_with_depth():
    spec = ArchitectureSpec.resnet(4, 5, 8, alpha_scale=0.5)

    assert spec.alphas == pytest.approx((0.1,) * 5)
    assert ArchitectureSpec.resnet(4, 3, 8, alphas=(0.3, 0.3, 0.3)).alpha_summary() == "0.3x3"


def test_from_dict_accepts_scalar_densenet_alpha():
    spec = ArchitectureSpec.from_dict({"kind": "densenet", "input_dim": 3, "depth": 4, "width": 8, "alphas": 0.5})

    assert spec.kind is ArchKind.DENSENET
    assert spec.alpha == 0.5
    assert ArchitectureSpec.from_dict(spec.to_dict()) == spec


def test_weight_index_parse():
    assert WeightIndex.parse("2,1") == WeightIndex(2, 1)
    assert WeightIndex.parse("3") == WeightIndex(3, 0)
    assert WeightIndex.parse("final") == WeightIndex.final()
    assert WeightIndex.parse("initial").label == "W0"
    with pytest.raises(InvalidIndex):
        WeightIndex.parse("capa")


def test_validate_index_per_architecture():
    vanilla = ArchitectureSpec.vanilla(3, 3, 4)
    resnet = ArchitectureSpec.resnet(3, 2, 4)
    densenet = ArchitectureSpec.densenet(3, 3, 4)

    assert validate_index(vanilla, WeightIndex(2, 7)) == WeightIndex(2, 0)
    assert validate_index(resnet, WeightIndex(2, 2)) == WeightIndex(2, 2)
    assert validate_index(densenet, WeightIndex(3, 0)) == WeightIndex(3, 0)
    with pytest.raises(InvalidIndex):
        validate_index(vanilla, WeightIndex(4, 0))
    with pytest.raises(InvalidIndex):
        validate_index(resnet, WeightIndex(1, 3))
    with pytest.raises(InvalidIndex):
        validate_index(densenet, WeightIndex(2, 2))


def test_weight_keys_and_parameter_count():
    vanilla = ArchitectureSpec.vanilla(5, 3, 4)
    densenet = ArchitectureSpec.densenet(5, 3, 4)

    assert parameter_count(vanilla) == 4 * 5 + 3 * 16 + 4
    # DenseNet: 1 + 2 + 3 matrices de cuerpo
    assert len(weight_keys(densenet)) == 2 + 6


def test_kernel_scope_membership():
    body = WeightIndex(1, 0)

    assert KernelScope.FULL.includes(WeightIndex.initial())
    assert not KernelScope.BODY.includes(WeightIndex.final())
    assert KernelScope.BODY.includes(body)
    assert KernelScope.NO_INPUT.includes(WeightIndex.final())
    assert not KernelScope.NO_INPUT.includes(WeightIndex.initial())


def test_sample_weights_is_deterministic():
    spec = ArchitectureSpec.resnet(3, 2, 4)
    a = sample_weights(spec, RngStream(5))
    b = sample_weights(spec, RngStream(5))

    for (key_a, value_a), (key_b, value_b) in zip(a.items(), b.items()):
        assert key_a == key_b
        assert np.array_equal(value_a, value_b)


def test_vanilla_depth_zero_is_linear_model():
    spec = ArchitectureSpec.vanilla(3, 0, 4)
    w = sample_weights(spec, RngStream(1))
    x = unit(3)

    expected = (w.final @ w.initial @ x)[0] / math.sqrt(4 * 3)

    assert forward(spec, w, x).output == pytest.approx(expected, rel=1e-12)


def test_vanilla_forward_uses_scaled_relu():
    spec = ArchitectureSpec.vanilla(3, 1, 4)
    w = sample_weights(spec, RngStream(2))
    x = unit(3, 1)

    y0 = w.initial @ x / math.sqrt(3)
    u = w.body[WeightIndex(1, 0)] @ y0 / 2.0
    y1 = math.sqrt(2.0) * np.maximum(u, 0.0)
    expected = (w.final @ y1)[0] / 2.0

    trace = forward(spec, w, x)
    assert trace.output == pytest.approx(expected, rel=1e-12)
    assert np.array_equal(trace.masks[(1, 0)], (u > 0)[None, :])


def test_forward_batches_draws_and_inputs():
    spec = ArchitectureSpec.densenet(3, 3, 4)
    w = sample_weight_batch(spec, RngStream(3).generator(), 6)
    X = np.stack([unit(3, 0), unit(3, 1)])

    batched = forward(spec, w, X)
    single = forward(spec, w.draw(4), X[1])

    assert batched.outputs.shape == (6, 2)
    assert batched.outputs[4, 1] == pytest.approx(single.output, rel=1e-12)


def test_resnet_reduction_drops_skip_of_block():
    spec = ArchitectureSpec.resnet(3, 1, 4, alphas=(0.4,))
    reduced = reduce(spec, WeightIndex(1, 2))
    w = sample_weights(spec, RngStream(4))
    x = unit(3, 2)

    full = forward(spec, w, x)
    pruned = forward(reduced, w, x)

    branch = full.block_outputs[1] - full.block_outputs[0]
    assert np.allclose(pruned.block_outputs[1], branch, atol=1e-14)


def test_reduce_keeps_vanilla_and_projections():
    vanilla = ArchitectureSpec.vanilla(3, 2, 4)
    resnet = ArchitectureSpec.resnet(3, 2, 4)

    assert reduce(vanilla, WeightIndex(1, 0)) == vanilla
    assert reduce(resnet, WeightIndex.final()) == resnet
    assert reduce(resnet, WeightIndex(2, 1)).is_reduced


def test_densenet_reduction_prunes_connections():
    spec = reduce(ArchitectureSpec.densenet(3, 4, 4), WeightIndex(3, 1))

    assert dense_inputs(spec, 1) == [0]
    assert dense_inputs(spec, 2) is None
    assert dense_inputs(spec, 3) == [1]
    assert dense_inputs(spec, 4) == [3]


def test_forward_validates_inputs():
    spec = ArchitectureSpec.vanilla(3, 1, 4)
    w = sample_weights(spec, RngStream(0))

    with pytest.raises(ZeroInput):
        forward(spec, w, np.zeros(3))
    with pytest.raises(ShapeMismatch):
        forward(spec, w, np.ones(4))
    with pytest.raises(ShapeMismatch):
        forward(spec, WeightSet(w.initial[:, :2], w.body, w.final), np.ones(3))


@pytest.mark.parametrize(
    "spec",
    [
        ArchitectureSpec.vanilla(4, 8, 256),
        ArchitectureSpec.resnet(4, 8, 256, alpha_scale=0.5),
        ArchitectureSpec.densenet(4, 8, 256, alpha=1.0),
    ],
)
def test_hidden_norms_stay_at_scale_across_depth(spec):
    w = sample_weight_batch(spec, RngStream(12).generator(), 20)
    trace = forward(spec, w, unit(4, 7))

    def mean_norm(l: int) -> float:
        y = trace.block_outputs[l]
        return float(np.mean(np.sum(y * y, axis=-1))) / spec.width

    reference = mean_norm(1)
    for l in range(2, 9):
        assert 0.5 <= mean_norm(l) / reference <= 2.0


def test_weight_shapes_of_small_vanilla():
    spec = ArchitectureSpec.vanilla(3, 2, 4)
    w = sample_weights(spec, RngStream(0))

    assert w.initial.shape == (4, 3)
    assert w.final.shape == (1, 4)
    assert sorted(w.body, key=WeightIndex.sort_key) == [WeightIndex(1, 0), WeightIndex(2, 0)]
    assert all(matrix.shape == (4, 4) for matrix in w.body.values())


def test_densenet_body_keys():
    keys = {k for k in weight_keys(ArchitectureSpec.densenet(3, 3, 4)) if not k.is_projection}

    assert keys == {WeightIndex(1, 0), WeightIndex(2, 0), WeightIndex(2, 1),
                    WeightIndex(3, 0), WeightIndex(3, 1), WeightIndex(3, 2)}


def test_resnet_with_zero_branches_is_skip_only():
    spec = ArchitectureSpec.resnet(3, 2, 4, alphas=(0.3, 0.3))
    w = sample_weights(spec, RngStream(6))
    zeros = WeightSet(w.initial, {k: np.zeros_like(v) for k, v in w.body.items()}, w.final)
    x = unit(3, 5)

    trace = forward(spec, zeros, x)

    assert np.allclose(trace.final_hidden, trace.block_outputs[0])
    assert trace.output == pytest.approx((w.final @ trace.block_outputs[0][0])[0] / 2.0, rel=1e-12)
