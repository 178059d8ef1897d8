#!/usr/bin/env python3
"""
Kernels de ancho infinito (NNGP y NTK) para redes ReLU.

Mapas gaussianos cerrados (arco-coseno) para √2·φ:
    cov:  2E[φ(u)φ(v)]   = (√(ab)/π)·(√(1−ρ²) + (π − arccos ρ)·ρ)
    dot:  2E[φ̇(u)φ̇(v)]  = (π − arccos ρ)/π

Sobre ellos se propagan las covarianzas capa a capa (Λ, Σ, Σ̇) y se obtiene
el NTK límite como suma de contribuciones por matriz de pesos:
    término(k) = covarianza de la entrada de W^k × norma límite del adjunto.
El adjunto límite se propaga hacia atrás igual que en el backprop finito
(los términos cruzados entre matrices independientes se anulan).

Todas las funciones internas trabajan sobre arrays (a, b, c) para evaluar
Grams completas de una vez.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidSpec, ShapeMismatch, ZeroInput
from .net_core import ArchitectureSpec, ArchKind, KernelScope, WeightIndex, build_arch
from .ntk_exact import GramMatrix
from .numerics import MomentEstimate, RngStream

_Triple = Tuple[np.ndarray, np.ndarray, np.ndarray]

# Muestras por bloque en el oráculo Monte Carlo
_ORACLE_BLOCK = 1_000_000


@dataclass(frozen=True)
class BivariateCov:
    """Covarianza 2×2 de (u, v): a = Var u, b = Var v, c = Cov(u, v)"""
    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"varianzas negativas: a={self.a}, b={self.b}")
        bound = math.sqrt(self.a * self.b)
        if self.c * self.c > self.a * self.b * (1.0 + 1e-9) + 1e-12:
            raise ValueError(f"c={self.c} incompatible con a={self.a}, b={self.b}")
        # deriva de redondeo: se recorta a |c| ≤ √(ab)
        object.__setattr__(self, "c", float(min(max(self.c, -bound), bound)))

    @property
    def rho(self) -> float:
        root = math.sqrt(self.a * self.b)
        return 0.0 if root == 0 else max(-1.0, min(1.0, self.c / root))

    def as_arrays(self) -> _Triple:
        return np.float64(self.a), np.float64(self.b), np.float64(self.c)

    @classmethod
    def from_arrays(cls, triple: _Triple) -> "BivariateCov":
        a, b, c = triple
        return cls(float(a), float(b), float(c))


class GaussMap(Enum):
    """Esperanza gaussiana a estimar"""
    COV = "cov"
    DOT = "dot"


def _rho(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    root = np.sqrt(a * b)
    safe = np.where(root > 0, root, 1.0)
    rho = np.where(root > 0, c / safe, 0.0)
    return root, np.clip(rho, -1.0, 1.0)


def _cov_map(a, b, c) -> _Triple:
    root, rho = _rho(a, b, c)
    theta = np.arccos(rho)
    out = root / math.pi * (np.sqrt(1.0 - rho * rho) + (math.pi - theta) * rho)
    return a, b, out


def _dot_map(a, b, c) -> np.ndarray:
    _, rho = _rho(a, b, c)
    return (math.pi - np.arccos(rho)) / math.pi


def relu_cov_map(cov: BivariateCov) -> BivariateCov:
    """Covarianza de (√2φ(u), √2φ(v)); conserva las diagonales exactamente"""
    return BivariateCov.from_arrays(_cov_map(*cov.as_arrays()))


def relu_dot_map(cov: BivariateCov) -> float:
    """Σ̇ = 2E[φ̇(u)φ̇(v)] ∈ [0, 1]"""
    return float(_dot_map(*cov.as_arrays()))


def mc_gauss_oracle(cov: BivariateCov, map_kind: GaussMap, n_samples: int, rng: RngStream) -> MomentEstimate:
    """Estimación Monte Carlo de los mapas cerrados (oráculo de validación)"""
    if n_samples < 10_000:
        raise ValueError(f"n_samples debe ser >= 10^4: {n_samples}")
    map_kind = GaussMap(map_kind)
    generator = rng.generator()
    a, b, c = cov.a, cov.b, cov.c
    scale_u = math.sqrt(a)
    mix = c / scale_u if scale_u > 0 else 0.0
    rest = math.sqrt(max(b - mix * mix, 0.0))

    estimate = MomentEstimate.empty()
    remaining = int(n_samples)
    while remaining > 0:
        count = min(remaining, _ORACLE_BLOCK)
        z = generator.standard_normal((2, count))
        u = scale_u * z[0]
        v = mix * z[0] + rest * z[1]
        if map_kind is GaussMap.COV:
            values = 2.0 * np.maximum(u, 0.0) * np.maximum(v, 0.0)
        else:
            values = 2.0 * ((u > 0) & (v > 0))
        estimate = estimate.merge(MomentEstimate.from_samples(values))
        remaining -= count
    return estimate


@dataclass
class LimitKernelState:
    """Cantidades de la propagación NNGP y el NTK acumulado"""
    spec: ArchitectureSpec
    sigma: Dict[Tuple[int, int], BivariateCov] = field(default_factory=dict)
    sigma_dot: Dict[Tuple[int, int], float] = field(default_factory=dict)
    lambdas: List[BivariateCov] = field(default_factory=list)
    contributions: Dict[WeightIndex, float] = field(default_factory=dict)
    ntk: float = 0.0


@dataclass
class _Pass:
    """Propagación vectorizada: Σ/Σ̇ por sitio, Λ por bloque, entradas de cada W^k"""
    lambdas: List[_Triple]
    sigma: Dict[Tuple[int, int], _Triple]
    sigma_dot: Dict[Tuple[int, int], np.ndarray]
    weight_inputs: Dict[WeightIndex, np.ndarray]


def input_cov(x: np.ndarray, x_prime: np.ndarray) -> BivariateCov:
    """Λ⁰(x, x') = covarianza de y⁰ = W⁰x/√n₀: (‖x‖², ‖x'‖², x·x') / n₀"""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.ndim != 1 or x.shape != x_prime.shape:
        raise ShapeMismatch(f"entradas incompatibles: {x.shape} y {x_prime.shape}")
    a, b = float(x @ x), float(x_prime @ x_prime)
    if a == 0 or b == 0:
        raise ZeroInput("la entrada tiene norma cero")
    n0 = x.shape[0]
    return BivariateCov(a / n0, b / n0, float(x @ x_prime) / n0)


def _scale(triple: _Triple, factor: float) -> _Triple:
    return tuple(factor * part for part in triple)  # type: ignore[return-value]


def _add(left: _Triple, right: _Triple) -> _Triple:
    return tuple(p + q for p, q in zip(left, right))  # type: ignore[return-value]


def _propagate(spec: ArchitectureSpec, lam0: _Triple) -> _Pass:
    L = spec.depth
    lambdas: List[_Triple] = [lam0]
    sigma: Dict[Tuple[int, int], _Triple] = {}
    sigma_dot: Dict[Tuple[int, int], np.ndarray] = {}
    inputs: Dict[WeightIndex, np.ndarray] = {WeightIndex.initial(): lam0[2]}

    if spec.kind is ArchKind.VANILLA:
        for l in range(1, L + 1):
            prev = lambdas[-1]
            inputs[WeightIndex(l, 0)] = prev[2]
            sigma[(l, 0)] = _cov_map(*prev)
            sigma_dot[(l, 0)] = _dot_map(*prev)
            lambdas.append(sigma[(l, 0)])

    elif spec.kind is ArchKind.RESNET:
        for l in range(1, L + 1):
            current = lambdas[-1]
            inputs[WeightIndex(l, 1)] = current[2]
            for h in range(1, spec.branch_depth):
                sigma[(l - 1, h)] = _cov_map(*current)
                sigma_dot[(l - 1, h)] = _dot_map(*current)
                current = sigma[(l - 1, h)]
                inputs[WeightIndex(l, h + 1)] = current[2]
            lambdas.append(_add(lambdas[-1], _scale(current, spec.alphas[l - 1])))

    else:
        alpha = spec.alpha
        for l in range(0, L + 1):
            if l > 0:
                total = sigma[(0, 0)]
                for h in range(1, l):
                    total = _add(total, sigma[(h, 0)])
                lambdas.append(_scale(total, alpha / l))
            if l < L:
                sigma[(l, 0)] = _cov_map(*lambdas[l])
                sigma_dot[(l, 0)] = _dot_map(*lambdas[l])
        for l in range(1, L + 1):
            for h in range(l):
                inputs[WeightIndex(l, h)] = sigma[(h, 0)][2]

    inputs[WeightIndex.final()] = lambdas[-1][2]
    return _Pass(lambdas, sigma, sigma_dot, inputs)


def _contributions(spec: ArchitectureSpec, state: _Pass) -> Dict[WeightIndex, np.ndarray]:
    """Términos límite por matriz: entrada(W^k) × norma límite del adjunto de su salida"""
    L = spec.depth
    ins = state.weight_inputs
    terms: Dict[WeightIndex, np.ndarray] = {WeightIndex.final(): ins[WeightIndex.final()]}
    one = np.ones_like(ins[WeightIndex.initial()])

    if spec.kind is ArchKind.VANILLA:
        adjoint = one
        for l in range(L, 0, -1):
            adjoint = adjoint * state.sigma_dot[(l, 0)]
            terms[WeightIndex(l, 0)] = ins[WeightIndex(l, 0)] * adjoint
        terms[WeightIndex.initial()] = ins[WeightIndex.initial()] * adjoint

    elif spec.kind is ArchKind.RESNET:
        adjoint = one
        m = spec.branch_depth
        for l in range(L, 0, -1):
            branch = spec.alphas[l - 1] * adjoint
            for h in range(m, 0, -1):
                terms[WeightIndex(l, h)] = ins[WeightIndex(l, h)] * branch
                if h > 1:
                    branch = branch * state.sigma_dot[(l - 1, h - 1)]
            adjoint = adjoint + branch
        terms[WeightIndex.initial()] = ins[WeightIndex.initial()] * adjoint

    else:
        alpha = spec.alpha
        adjoints: Dict[int, np.ndarray] = {L: one}
        for l in range(L - 1, -1, -1):
            fan_in = sum((alpha / j) * adjoints[j] for j in range(l + 1, L + 1))
            adjoints[l] = state.sigma_dot[(l, 0)] * fan_in
        for l in range(1, L + 1):
            for h in range(l):
                terms[WeightIndex(l, h)] = (alpha / l) * ins[WeightIndex(l, h)] * adjoints[l]
        terms[WeightIndex.initial()] = ins[WeightIndex.initial()] * adjoints[0]
    return terms


def _sum_scope(terms: Dict[WeightIndex, np.ndarray], scope: KernelScope) -> np.ndarray:
    total = None
    for key, value in terms.items():
        if scope.includes(key):
            total = value if total is None else total + value
    if total is None:
        raise ValueError("el alcance del kernel no incluye ninguna matriz")
    return total


def _resnet_closed_sum(spec: ArchitectureSpec, state: _Pass) -> np.ndarray:
    """K_L^R como suma cerrada sobre (l, h) con Σ^{l−1,0} = Λ^{l−1}"""
    L, m = spec.depth, spec.branch_depth

    def sigma(l_minus_1: int, h: int) -> np.ndarray:
        return state.lambdas[l_minus_1][2] if h == 0 else state.sigma[(l_minus_1, h)][2]

    def block_gain(l_prime: int) -> np.ndarray:
        # α_{l'+1}·Π_{h'} Σ̇^{l',h'} + 1
        product = 1.0
        for h in range(1, m):
            product = product * state.sigma_dot[(l_prime, h)]
        return spec.alphas[l_prime] * product + 1.0

    total = 0.0
    for l in range(1, L + 1):
        downstream = 1.0
        for l_prime in range(l, L):
            downstream = downstream * block_gain(l_prime)
        for h in range(1, m + 1):
            path = sigma(l - 1, h - 1)
            for h_prime in range(h, m):
                path = path * state.sigma_dot[(l - 1, h_prime)]
            total = total + spec.alphas[l - 1] * path * downstream
    return total


def _densenet_recursion(spec: ArchitectureSpec, state: _Pass) -> np.ndarray:
    """K_l = K_{l−1}·(αΣ̇^{l−1}/l + (l−1)/l) + αΣ^{l−1}/l, con K_1 = αΣ⁰"""
    alpha = spec.alpha
    kernel = alpha * state.sigma[(0, 0)][2]
    for l in range(2, spec.depth + 1):
        kernel = kernel * (alpha * state.sigma_dot[(l - 1, 0)] / l + (l - 1) / l) \
            + alpha * state.sigma[(l - 1, 0)][2] / l
    return kernel


def _arrays(cov: BivariateCov) -> _Triple:
    return cov.as_arrays()


def _check_kind(spec: ArchitectureSpec, kind: ArchKind) -> ArchitectureSpec:
    spec = build_arch(spec)
    if spec.kind is not kind:
        raise InvalidSpec("kind", f"se esperaba {kind.value}, recibido {spec.kind.value}")
    if spec.is_reduced:
        raise InvalidSpec("reduction", "el kernel límite se define para la red completa")
    return spec


def ntk_limit_vanilla(
    x: np.ndarray,
    x_prime: np.ndarray,
    L: int,
    scope: KernelScope = KernelScope.NO_INPUT,
) -> float:
    """
    NTK límite de la red vanilla (recursión estándar):
    Θ⁰ = Λ⁰, Θ^l = Θ^{l−1}·Σ̇^l + Σ^l. Con NO_INPUT coincide con la
    suma de contribuciones de W^1..W^L y de la proyección final.
    """
    lam0 = input_cov(x, x_prime)
    spec = ArchitectureSpec.vanilla(len(np.asarray(x)), L, 1)
    state = _propagate(spec, _arrays(lam0))
    return float(_sum_scope(_contributions(spec, state), scope))


def jacot_recursion(x: np.ndarray, x_prime: np.ndarray, L: int) -> float:
    """Θ^L por la recursión explícita (sin W⁰)"""
    lam0 = input_cov(x, x_prime)
    spec = ArchitectureSpec.vanilla(len(np.asarray(x)), L, 1)
    state = _propagate(spec, _arrays(lam0))
    theta = state.lambdas[0][2]
    for l in range(1, L + 1):
        theta = theta * state.sigma_dot[(l, 0)] + state.sigma[(l, 0)][2]
    return float(theta)


def ntk_limit_resnet(
    x: np.ndarray,
    x_prime: np.ndarray,
    spec: ArchitectureSpec,
    scope: KernelScope = KernelScope.BODY,
    method: str = "closed",
) -> float:
    """K_L^R: suma cerrada (method='closed') o adjunto límite (method='adjoint')"""
    spec = _check_kind(spec, ArchKind.RESNET)
    state = _propagate(spec, _arrays(input_cov(x, x_prime)))
    terms = _contributions(spec, state)
    if method == "adjoint":
        return float(_sum_scope(terms, scope))
    if method != "closed":
        raise ValueError(f"método desconocido: {method}")
    extra = _sum_scope(terms, scope) - _sum_scope(terms, KernelScope.BODY) if scope is not KernelScope.BODY else 0.0
    return float(_resnet_closed_sum(spec, state) + extra)


def ntk_limit_densenet(
    x: np.ndarray,
    x_prime: np.ndarray,
    spec: ArchitectureSpec,
    scope: KernelScope = KernelScope.BODY,
    method: str = "recursion",
) -> float:
    """K_L^D por la recursión de capas (method='recursion') o la suma cerrada (method='closed')"""
    spec = _check_kind(spec, ArchKind.DENSENET)
    state = _propagate(spec, _arrays(input_cov(x, x_prime)))
    terms = _contributions(spec, state)
    if method == "closed":
        return float(_sum_scope(terms, scope))
    if method != "recursion":
        raise ValueError(f"método desconocido: {method}")
    extra = _sum_scope(terms, scope) - _sum_scope(terms, KernelScope.BODY) if scope is not KernelScope.BODY else 0.0
    return float(_densenet_recursion(spec, state) + extra)


def default_scope(spec: ArchitectureSpec) -> KernelScope:
    return KernelScope.NO_INPUT if spec.kind is ArchKind.VANILLA else KernelScope.BODY


def limit_kernel(
    spec: ArchitectureSpec,
    x: np.ndarray,
    x_prime: np.ndarray,
    scope: Optional[KernelScope] = None,
) -> float:
    """Despacha al kernel límite de la arquitectura"""
    scope = scope or default_scope(spec)
    if spec.kind is ArchKind.VANILLA:
        return ntk_limit_vanilla(x, x_prime, spec.depth, scope)
    if spec.kind is ArchKind.RESNET:
        return ntk_limit_resnet(x, x_prime, spec, scope)
    return ntk_limit_densenet(x, x_prime, spec, scope)


def limit_contributions(
    spec: ArchitectureSpec,
    x: np.ndarray,
    x_prime: np.ndarray,
    scope: KernelScope = KernelScope.FULL,
) -> Dict[WeightIndex, float]:
    """Término límite de cada matriz de pesos; su suma es el kernel"""
    spec = build_arch(spec)
    state = _propagate(spec, _arrays(input_cov(x, x_prime)))
    return {k: float(v) for k, v in _contributions(spec, state).items() if scope.includes(k)}


def limit_state(
    spec: ArchitectureSpec,
    x: np.ndarray,
    x_prime: np.ndarray,
    scope: Optional[KernelScope] = None,
) -> LimitKernelState:
    """Estado completo de la propagación (Σ, Σ̇, Λ) y el NTK acumulado"""
    spec = build_arch(spec)
    scope = scope or default_scope(spec)
    state = _propagate(spec, _arrays(input_cov(x, x_prime)))
    terms = _contributions(spec, state)
    contributions = {k: float(v) for k, v in terms.items() if scope.includes(k)}
    return LimitKernelState(
        spec=spec,
        sigma={key: BivariateCov.from_arrays(value) for key, value in state.sigma.items()},
        sigma_dot={key: float(value) for key, value in state.sigma_dot.items()},
        lambdas=[BivariateCov.from_arrays(value) for value in state.lambdas],
        contributions=contributions,
        ntk=float(sum(contributions.values())),
    )


def limit_gram(
    spec: ArchitectureSpec,
    X: Sequence[np.ndarray],
    scope: Optional[KernelScope] = None,
) -> GramMatrix:
    """Gram del kernel límite sobre todas las parejas de entradas (vectorizado)"""
    spec = build_arch(spec)
    scope = scope or default_scope(spec)
    inputs = np.asarray(X, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"entradas de forma {inputs.shape}, input_dim = {spec.input_dim}")
    norms = np.einsum("ij,ij->i", inputs, inputs)
    if np.any(norms == 0):
        raise ZeroInput("alguna entrada tiene norma cero")
    n0 = inputs.shape[1]
    a = np.broadcast_to(norms[:, None] / n0, (len(norms), len(norms)))
    b = np.broadcast_to(norms[None, :] / n0, (len(norms), len(norms)))
    cross = inputs @ inputs.T / n0
    bound = np.sqrt(a * b)
    c = np.clip(cross, -bound, bound)
    state = _propagate(spec, (a, b, c))
    values = _sum_scope(_contributions(spec, state), scope)
    return GramMatrix(0.5 * (values + values.T))
