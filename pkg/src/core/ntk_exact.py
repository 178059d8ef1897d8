#!/usr/bin/env python3
"""
NTK empírico a ancho finito: backprop manual sobre la traza del forward,
Jacobianos por matriz de pesos, entradas y matrices de Gram del NTK,
promedio sobre draws y la proyección por caminos f_k = ⟨W^k, J^k⟩.

Cada Jacobiano J^k = s_k·δ·aᵀ es de rango 1 por entrada, así que se guarda
factorizado (escala, adjunto δ, entrada a) y nunca se materializa para
calcular productos internos:
    ⟨J^k(x), J^k(x')⟩ = s_k²·(δ·δ')·(a·a')
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils import logger
from .errors import ShapeMismatch, TraceMismatch
from .net_core import (
    ACT_GAIN,
    ArchitectureSpec,
    ArchKind,
    ForwardTrace,
    KernelScope,
    WeightIndex,
    WeightSet,
    body_keys,
    dense_inputs,
    forward,
    sample_weights,
    validate_index,
    weight_keys,
    weight_scale,
    weight_shape,
)
from .montecarlo import draw_footprint
from .numerics import RngStream
from .worker_manager import get_worker_manager


@dataclass(frozen=True)
class GradFactor:
    """J^k = scale · adjoint ⊗ inputs, por entrada (eje P)"""
    scale: float
    adjoint: np.ndarray  # (..., P, filas)
    inputs: np.ndarray   # (..., P, cols)

    def matrix(self) -> np.ndarray:
        return self.scale * np.einsum("...pi,...pj->...pij", self.adjoint, self.inputs)

    def norm_sq(self) -> np.ndarray:
        return self.scale ** 2 * np.sum(self.adjoint ** 2, axis=-1) * np.sum(self.inputs ** 2, axis=-1)

    def gram(self) -> np.ndarray:
        left = self.adjoint @ np.swapaxes(self.adjoint, -1, -2)
        right = self.inputs @ np.swapaxes(self.inputs, -1, -2)
        return self.scale ** 2 * left * right


@dataclass(frozen=True)
class GradientSet:
    """Gradiente de f respecto a cada matriz de pesos"""
    spec: ArchitectureSpec
    factors: Dict[WeightIndex, GradFactor]
    single_input: bool = True

    def _squeeze(self, value: np.ndarray) -> np.ndarray:
        if self.single_input:
            return value[..., 0, :, :] if value.ndim >= 3 else value
        return value

    def matrix(self, k: WeightIndex) -> np.ndarray:
        """J^k materializado con la misma forma que W^k (más ejes de batch/entrada)"""
        k = validate_index(self.spec, k)
        return self._squeeze(self.factors[k].matrix())

    @property
    def d_initial(self) -> np.ndarray:
        return self.matrix(WeightIndex.initial())

    @property
    def d_final(self) -> np.ndarray:
        return self.matrix(WeightIndex.final())

    @property
    def d_body(self) -> Dict[WeightIndex, np.ndarray]:
        return {k: self.matrix(k) for k in body_keys(self.spec)}

    def keys(self, scope: KernelScope = KernelScope.FULL) -> List[WeightIndex]:
        return [k for k in weight_keys(self.spec) if scope.includes(k)]

    def norm_sq(self, k: WeightIndex) -> np.ndarray:
        """‖J^k(x)‖² por entrada, forma (..., P)"""
        return self.factors[validate_index(self.spec, k)].norm_sq()


def _back_linear(g: np.ndarray, W: np.ndarray, scale: float) -> np.ndarray:
    return scale * (g @ W)


def _check_trace(spec: ArchitectureSpec, w: WeightSet, trace: ForwardTrace) -> None:
    if trace.spec != spec:
        raise TraceMismatch("la traza se generó con otra arquitectura")
    if len(trace.block_outputs) != spec.depth + 1:
        raise TraceMismatch(
            f"la traza tiene {len(trace.block_outputs)} bloques, se esperaban {spec.depth + 1}"
        )
    if trace.inputs.shape[-1] != spec.input_dim:
        raise TraceMismatch("dimensión de entrada distinta de input_dim")
    if tuple(trace.outputs.shape[:-1]) != w.batch_shape:
        raise TraceMismatch(
            f"batch de la traza {trace.outputs.shape[:-1]} != batch de los pesos {w.batch_shape}"
        )
    final_hidden = trace.block_outputs[-1]
    if final_hidden is None or final_hidden.shape[-1] != spec.width:
        raise TraceMismatch("la última capa de la traza no tiene el ancho de la arquitectura")


def backward(spec: ArchitectureSpec, w: WeightSet, trace: ForwardTrace) -> GradientSet:
    """
    Gradiente exacto en modo reverso. Las máscaras son constantes
    (subgradiente 0 en preactivación 0). Los adjuntos se suman a través
    de los skips (ResNet) y de todas las aristas de fan-out (DenseNet).
    """
    _check_trace(spec, w, trace)
    n = spec.width
    inv_n = 1.0 / math.sqrt(n)
    outputs = trace.block_outputs
    y_last = outputs[-1]
    factors: Dict[WeightIndex, GradFactor] = {}

    final_scale = weight_scale(spec, WeightIndex.final())
    factors[WeightIndex.final()] = GradFactor(final_scale, np.ones(y_last.shape[:-1] + (1,)), y_last)
    g = np.broadcast_to(final_scale * w.final[..., 0:1, :], y_last.shape)

    if spec.kind is ArchKind.VANILLA:
        for l in range(spec.depth, 0, -1):
            key = WeightIndex(l, 0)
            gu = g * ACT_GAIN * trace.masks[(l, 0)]
            factors[key] = GradFactor(inv_n, gu, outputs[l - 1])
            g = _back_linear(gu, w.body[key], inv_n)

    elif spec.kind is ArchKind.RESNET:
        skipless = spec.reduction.layer if spec.reduction is not None else None
        m = spec.branch_depth
        for l in range(spec.depth, 0, -1):
            gb = math.sqrt(spec.alphas[l - 1]) * g
            for h in range(m, 0, -1):
                key = WeightIndex(l, h)
                source = outputs[l - 1] if h == 1 else trace.activations[(l, h - 1)]
                factors[key] = GradFactor(inv_n, gb, source)
                g_in = _back_linear(gb, w.body[key], inv_n)
                if h > 1:
                    gb = g_in * ACT_GAIN * trace.masks[(l, h - 1)]
            g = g_in if l == skipless else g + g_in

    else:
        g_q: Dict[int, np.ndarray] = {}
        for l in range(spec.depth, 0, -1):
            inputs = dense_inputs(spec, l)
            if inputs is None:
                continue
            if l < spec.depth:
                upstream = g_q.get(l)
                delta = (
                    np.zeros_like(outputs[l]) if upstream is None
                    else upstream * ACT_GAIN * trace.masks[(l, 0)]
                )
            else:
                delta = g
            scale = weight_scale(spec, WeightIndex(l, 0))
            for h in inputs:
                key = WeightIndex(l, h)
                factors[key] = GradFactor(scale, delta, trace.activations[(h, 0)])
                contribution = _back_linear(delta, w.body[key], scale)
                g_q[h] = contribution if h not in g_q else g_q[h] + contribution
        g = g_q[0] * ACT_GAIN * trace.masks[(0, 0)]

    factors[WeightIndex.initial()] = GradFactor(
        weight_scale(spec, WeightIndex.initial()), g, trace.inputs
    )

    # Matrices podadas en una red reducida: gradiente nulo
    lead = y_last.shape[:-1]
    for key in body_keys(spec):
        if key not in factors:
            rows, cols = weight_shape(spec, key)
            factors[key] = GradFactor(
                weight_scale(spec, key), np.zeros(lead + (rows,)), np.zeros(lead + (cols,))
            )
    return GradientSet(spec, factors, trace.single_input)


def gradients(spec: ArchitectureSpec, w: WeightSet, x: np.ndarray) -> Tuple[ForwardTrace, GradientSet]:
    """forward + backward en una llamada"""
    trace = forward(spec, w, x)
    return trace, backward(spec, w, trace)


def gram_values(grads: GradientSet, scope: KernelScope = KernelScope.FULL) -> np.ndarray:
    """Gram del NTK por draw, forma (..., P, P), sumada bloque a bloque"""
    total: Optional[np.ndarray] = None
    for key in grads.keys(scope):
        block = grads.factors[key].gram()
        total = block if total is None else total + block
    if total is None:
        raise ValueError("el alcance del kernel no incluye ninguna matriz")
    return 0.5 * (total + np.swapaxes(total, -1, -2))


@dataclass(frozen=True)
class GramMatrix:
    """Matriz de Gram simétrica del NTK (empírico, promediado o límite)"""
    entries: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.entries, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeMismatch(f"la Gram debe ser cuadrada, recibido {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ShapeMismatch("la Gram contiene valores no finitos")
        object.__setattr__(self, "entries", values)

    @property
    def size(self) -> int:
        return int(self.entries.shape[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def to_dict(self) -> Dict[str, object]:
        return {"size": self.size, "entries": self.entries.tolist()}


def _as_input_matrix(X: Sequence[np.ndarray]) -> np.ndarray:
    matrix = np.asarray(X, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2:
        raise ShapeMismatch(f"se esperaba una lista de vectores, recibido {matrix.shape}")
    return matrix


def ntk_gram(
    spec: ArchitectureSpec,
    w: WeightSet,
    X: Sequence[np.ndarray],
    scope: KernelScope = KernelScope.FULL,
) -> GramMatrix:
    """Un backward por entrada (todas a la vez) y todos los productos internos"""
    _, grads = gradients(spec, w, _as_input_matrix(X))
    return GramMatrix(gram_values(grads, scope))


def ntk_entry(
    spec: ArchitectureSpec,
    w: WeightSet,
    x: np.ndarray,
    x_prime: np.ndarray,
    scope: KernelScope = KernelScope.FULL,
) -> float:
    """𝒢(x, x'; w) = Σ_k ⟨J^k(x), J^k(x')⟩"""
    gram = ntk_gram(spec, w, [np.asarray(x, dtype=np.float64), np.asarray(x_prime, dtype=np.float64)], scope)
    return float(gram.entries[0, 1])


def ntk_contributions(
    spec: ArchitectureSpec,
    w: WeightSet,
    x: np.ndarray,
    x_prime: np.ndarray,
    scope: KernelScope = KernelScope.FULL,
) -> Dict[WeightIndex, float]:
    """Descomposición por matriz ⟨J^k(x), J^k(x')⟩"""
    _, grads = gradients(spec, w, _as_input_matrix([x, x_prime]))
    return {key: float(grads.factors[key].gram()[0, 1]) for key in grads.keys(scope)}


def jacobian_norm_sq(grads: GradientSet, k: WeightIndex):
    """‖J^k(x)‖²; escalar para un único draw y una única entrada"""
    values = grads.norm_sq(k)
    if grads.single_input:
        values = values[..., 0]
    return float(values) if np.ndim(values) == 0 else values


def _stack_weight_sets(sets: List[WeightSet]) -> WeightSet:
    first = sets[0]
    return WeightSet(
        np.stack([s.initial for s in sets]),
        {key: np.stack([s.body[key] for s in sets]) for key in first.body},
        np.stack([s.final for s in sets]),
    )


def avg_ntk_gram(
    spec: ArchitectureSpec,
    X: Sequence[np.ndarray],
    rng_base: RngStream,
    T: int,
    scope: KernelScope = KernelScope.FULL,
) -> GramMatrix:
    """
    𝒢_T = (1/T)·Σ_i 𝒢(·,·; w_i); el draw i (1..T) usa el flujo rng_base.at(i).
    Los draws se agrupan en chunks y se suman en orden fijo.
    """
    if T < 1:
        raise ValueError(f"T debe ser >= 1: {T}")
    inputs = _as_input_matrix(X)
    manager = get_worker_manager()
    floats_per_draw = draw_footprint(spec, inputs.shape[0])
    sizes = manager.plan(T, floats_per_draw)
    tasks: List[Tuple[int, int]] = []
    start = 1
    for size in sizes:
        tasks.append((start, size))
        start += size

    def run(task: Tuple[int, int]) -> np.ndarray:
        first, count = task
        batch = _stack_weight_sets([sample_weights(spec, rng_base.at(first + i)) for i in range(count)])
        _, grads = gradients(spec, batch, inputs)
        return gram_values(grads, scope).sum(axis=0)

    partial = manager.map_ordered("avg_ntk_gram", run, tasks)
    total = partial[0]
    for block in partial[1:]:
        total = total + block
    logger.debug(f"avg_ntk_gram: {T} draws en {len(tasks)} chunks ({spec.kind.value}, n={spec.width})")
    return GramMatrix(total / T)


def f_through(
    spec: ArchitectureSpec,
    w: WeightSet,
    trace: ForwardTrace,
    grads: GradientSet,
    k: WeightIndex,
):
    """
    f_k(x; w) = ⟨W^k, J^k⟩: suma de los caminos que atraviesan W^k
    (identidad de Euler: cada camino es lineal en las entradas de W^k).
    """
    k = validate_index(spec, k)
    if grads.spec != spec:
        raise TraceMismatch("el gradiente se calculó con otra arquitectura")
    factor = grads.factors[k]
    value = factor.scale * np.einsum("...pi,...ij,...pj->...p", factor.adjoint, w.get(k), factor.inputs)
    if trace.single_input:
        value = value[..., 0]
    return float(value) if np.ndim(value) == 0 else value


def f_complement(
    spec: ArchitectureSpec,
    w: WeightSet,
    trace: ForwardTrace,
    grads: GradientSet,
    k: WeightIndex,
):
    """f^c_k = f − f_k: caminos que rodean a W^k"""
    through = f_through(spec, w, trace, grads, k)
    return trace.output - through
