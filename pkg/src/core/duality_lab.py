#!/usr/bin/env python3
"""
Verificación estadística de las dualidades entre la salida y los Jacobianos.

- Igualdad de momentos: E[f_(k)^m] = E[f_k^m] (red reducida frente a la
  proyección por caminos sobre la red completa, mismos draws).
- Sándwich de Jacobianos: E[‖J^k‖²] = E[f_(k)²] y
  E[f_(k)⁴]/3 ≤ E[‖J^k‖⁴] ≤ E[f_(k)⁴].
- Recursiones de momentos de normas en cadenas vanilla (ReLU y lineal).
- Esperanzas sign-flip E[w^p·z] de un peso que alimenta una ReLU.

Todas las comparaciones son emparejadas (mismo WeightSet para ambos lados)
y se deciden con z-scores contra compuertas fijas.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np

from ..utils import logger
from ..utils.constants import (
    EQUALITY_GATE,
    MIN_FOURTH_MOMENT_DRAWS,
    MIN_MOMENT_DRAWS,
    RECURSION_GATE,
)
from .errors import InvalidIndex
from .montecarlo import draw_footprint, simulate
from .net_core import (
    ArchitectureSpec,
    ArchKind,
    WeightIndex,
    build_arch,
    forward,
    reduce,
    sample_weight_batch,
    validate_index,
)
from .ntk_exact import backward, f_through
from .numerics import MomentEstimate, RngStream, paired_z

# c_p = E[w^p] para w ~ N(0, 1)
GAUSSIAN_MOMENTS = {1: 0.0, 2: 1.0, 4: 3.0}


@dataclass(frozen=True)
class DualityReport:
    """Resultado de una comprobación de dualidad"""
    check: str
    spec: ArchitectureSpec
    k: WeightIndex
    moment_order: int
    lhs: MomentEstimate
    rhs: MomentEstimate
    passed: bool
    z_score: float
    stderr: float
    sandwich_lower: Optional[float] = None
    item1: Optional["DualityReport"] = None

    def csv_row(self) -> Dict[str, Any]:
        k_layer, k_sublayer = self.k.csv_fields()
        return {
            "arch": self.spec.kind.value,
            "n": self.spec.width,
            "L": self.spec.depth,
            "k_layer": k_layer,
            "k_sublayer": k_sublayer,
            "order": self.moment_order,
            "lhs_mean": self.lhs.mean,
            "rhs_mean": self.rhs.mean,
            "stderr": self.stderr,
            "z": self.z_score,
            "pass": self.passed,
        }

    def to_record(self) -> Dict[str, Any]:
        record = dict(self.csv_row())
        record.update({
            "check": self.check,
            "k": self.k.label,
            "draws": self.lhs.n_samples,
            "lhs_stderr": self.lhs.stderr_of_mean,
            "rhs_stderr": self.rhs.stderr_of_mean,
            "alphas": self.spec.alpha_summary(),
        })
        if self.sandwich_lower is not None:
            record["sandwich_lower"] = self.sandwich_lower
        if self.item1 is not None:
            record["item1"] = self.item1.to_record()
        return record


class ChainKind(Enum):
    """Cadena vanilla para las recursiones de normas"""
    RELU = "relu"
    LINEAR = "linear"


@dataclass(frozen=True)
class MomentRecursionReport:
    """Cociente E[‖y^l‖^p] / E[‖y^{l−1}‖^p] observado frente al predicho"""
    kind: ChainKind
    n: int
    layer: int
    order: int
    observed_ratio: MomentEstimate
    predicted_ratio: float
    passed: bool
    z_score: float

    def csv_row(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "n": self.n,
            "layer": self.layer,
            "order": self.order,
            "observed": self.observed_ratio.mean,
            "stderr": self.observed_ratio.stderr_of_mean,
            "predicted": self.predicted_ratio,
            "z": self.z_score,
            "pass": self.passed,
        }

    def to_record(self) -> Dict[str, Any]:
        record = dict(self.csv_row())
        record["draws"] = self.observed_ratio.n_samples
        return record


@dataclass(frozen=True)
class SignFlipReport:
    """E[w^p·z] estimado frente a c_p/2"""
    spec: ArchitectureSpec
    layer: int
    power: int
    estimate: MomentEstimate
    predicted: float
    passed: bool
    z_score: float

    def to_record(self) -> Dict[str, Any]:
        return {
            "arch": self.spec.kind.value,
            "n": self.spec.width,
            "L": self.spec.depth,
            "layer": self.layer,
            "power": self.power,
            "mean": self.estimate.mean,
            "stderr": self.estimate.stderr_of_mean,
            "predicted": self.predicted,
            "z": self.z_score,
            "pass": self.passed,
        }


def _check_order(order: int) -> None:
    if order < 0 or order % 2:
        raise ValueError(f"el orden del momento debe ser par y >= 0: {order}")


def _check_draws(draws: int, minimum: int) -> None:
    if draws < minimum:
        raise ValueError(f"se necesitan al menos {minimum} draws, recibido {draws}")


def _sample_paths(spec: ArchitectureSpec, x: np.ndarray, k: WeightIndex, draws: int, rng: RngStream, label: str) -> Dict[str, np.ndarray]:
    """Por draw: f, f_(k) (red reducida), f_k (caminos por W^k) y ‖J^k‖²"""
    reduced = reduce(spec, k)
    x = np.asarray(x, dtype=np.float64)

    def sampler(generator: np.random.Generator, count: int) -> Dict[str, np.ndarray]:
        w = sample_weight_batch(spec, generator, count)
        trace = forward(spec, w, x)
        grads = backward(spec, w, trace)
        reduced_trace = forward(reduced, w, x)
        return {
            "f": trace.outputs[..., 0],
            "f_reduced": reduced_trace.outputs[..., 0],
            "f_through": np.asarray(f_through(spec, w, trace, grads, k)),
            "jacobian_sq": grads.norm_sq(k)[..., 0],
        }

    return simulate(label, draws, rng, 2 * draw_footprint(spec), sampler)


def estimate_output_moments(spec: ArchitectureSpec, x: np.ndarray, order: int, draws: int, rng: RngStream) -> MomentEstimate:
    """E[f(x; w)^order] sobre WeightSets independientes"""
    _check_order(order)
    _check_draws(draws, MIN_MOMENT_DRAWS)
    if order == 0:
        return MomentEstimate(int(draws), 1.0, 0.0)
    spec = build_arch(spec)
    x = np.asarray(x, dtype=np.float64)

    def sampler(generator: np.random.Generator, count: int) -> Dict[str, np.ndarray]:
        w = sample_weight_batch(spec, generator, count)
        return {"f": forward(spec, w, x).outputs[..., 0]}

    samples = simulate("output_moments", draws, rng, draw_footprint(spec), sampler)
    return MomentEstimate.from_samples(samples["f"] ** order)


def estimate_jacobian_moments(
    spec: ArchitectureSpec,
    x: np.ndarray,
    k: WeightIndex,
    power: int,
    draws: int,
    rng: RngStream,
) -> MomentEstimate:
    """E[‖J^k‖^power] para power ∈ {2, 4}"""
    if power not in (2, 4):
        raise ValueError(f"power debe ser 2 o 4: {power}")
    _check_draws(draws, MIN_MOMENT_DRAWS)
    spec = build_arch(spec)
    k = validate_index(spec, k)
    samples = _sample_paths(spec, x, k, draws, rng, "jacobian_moments")
    return MomentEstimate.from_samples(samples["jacobian_sq"] ** (power // 2))


def _paired(lhs: np.ndarray, rhs: np.ndarray):
    scale = float(np.mean(np.abs(lhs)) + np.mean(np.abs(rhs)))
    return paired_z(lhs - rhs, scale)


def check_thm3(
    spec: ArchitectureSpec,
    x: np.ndarray,
    k: WeightIndex,
    order: int,
    draws: int,
    rng: RngStream,
) -> DualityReport:
    """E[f_(k)^m] = E[f_k^m]: red reducida frente a ⟨W^k, J^k⟩ en la red completa"""
    _check_order(order)
    _check_draws(draws, MIN_MOMENT_DRAWS)
    spec = build_arch(spec)
    k = validate_index(spec, k)
    samples = _sample_paths(spec, x, k, draws, rng, "thm3")
    lhs_values = samples["f_reduced"] ** order
    rhs_values = samples["f_through"] ** order
    _, stderr, z = _paired(lhs_values, rhs_values)
    report = DualityReport(
        check="moment_equality",
        spec=spec,
        k=k,
        moment_order=order,
        lhs=MomentEstimate.from_samples(lhs_values),
        rhs=MomentEstimate.from_samples(rhs_values),
        passed=bool(abs(z) <= EQUALITY_GATE),
        z_score=float(z),
        stderr=float(stderr),
    )
    logger.debug(f"thm3 {spec.kind.value} {k.label} orden {order}: z = {z:.3f}")
    return report


def check_thm4(spec: ArchitectureSpec, x: np.ndarray, k: WeightIndex, draws: int, rng: RngStream) -> DualityReport:
    """
    Item 1: E[‖J^k‖²] = E[f_(k)²].
    Item 2: E[f_(k)⁴]/3 ≤ E[‖J^k‖⁴] ≤ E[f_(k)⁴], con holgura de la compuerta
    a cada lado. El z del informe es el peor de los tres.
    """
    _check_draws(draws, MIN_FOURTH_MOMENT_DRAWS)
    spec = build_arch(spec)
    k = validate_index(spec, k)
    samples = _sample_paths(spec, x, k, draws, rng, "thm4")
    jacobian_sq = samples["jacobian_sq"]
    reduced_sq = samples["f_reduced"] ** 2

    _, stderr1, z1 = _paired(jacobian_sq, reduced_sq)
    item1 = DualityReport(
        check="jacobian_second_moment",
        spec=spec,
        k=k,
        moment_order=2,
        lhs=MomentEstimate.from_samples(jacobian_sq),
        rhs=MomentEstimate.from_samples(reduced_sq),
        passed=bool(abs(z1) <= EQUALITY_GATE),
        z_score=float(z1),
        stderr=float(stderr1),
    )

    jacobian_4 = jacobian_sq ** 2
    reduced_4 = reduced_sq ** 2
    # z > 0 indica violación de la cota correspondiente
    _, stderr_upper, z_upper = _paired(jacobian_4, reduced_4)
    _, stderr_lower, z_lower = _paired(reduced_4 / 3.0, jacobian_4)
    rhs = MomentEstimate.from_samples(reduced_4)
    worst = max(abs(z1), z_upper, z_lower)
    passed = item1.passed and z_upper <= EQUALITY_GATE and z_lower <= EQUALITY_GATE
    logger.debug(
        f"thm4 {spec.kind.value} {k.label}: z1={z1:.3f} z_sup={z_upper:.3f} z_inf={z_lower:.3f}"
    )
    return DualityReport(
        check="jacobian_sandwich",
        spec=spec,
        k=k,
        moment_order=4,
        lhs=MomentEstimate.from_samples(jacobian_4),
        rhs=rhs,
        passed=bool(passed),
        z_score=float(worst),
        stderr=float(max(stderr_upper, stderr_lower)),
        sandwich_lower=rhs.mean / 3.0,
        item1=item1,
    )


def predicted_norm_ratio(kind: ChainKind, n: int, order: int) -> float:
    """(n+5)/n (ReLU) o (n+2)/n (lineal) para el cuarto momento; 1 para el segundo"""
    if order == 2:
        return 1.0
    if order == 4:
        return (n + 5) / n if ChainKind(kind) is ChainKind.RELU else (n + 2) / n
    raise ValueError(f"orden no soportado: {order}")


def _ratio_estimate(numerator: np.ndarray, denominator: np.ndarray) -> MomentEstimate:
    """Cociente de medias con error estándar por el método delta"""
    count = numerator.size
    top, bottom = float(numerator.mean()), float(denominator.mean())
    ratio = top / bottom
    if np.all(denominator == denominator[0]):
        stderr = float(numerator.std() / math.sqrt(count)) / abs(bottom)
    else:
        covariance = np.cov(numerator, denominator, bias=True)
        variance = (
            covariance[0, 0] / bottom ** 2
            + top ** 2 * covariance[1, 1] / bottom ** 4
            - 2.0 * top * covariance[0, 1] / bottom ** 3
        )
        stderr = math.sqrt(max(float(variance), 0.0) / count)
    return MomentEstimate.from_mean_stderr(count, ratio, stderr)


def check_norm_recursion(kind: ChainKind, n: int, L: int, draws: int, rng: RngStream) -> List[MomentRecursionReport]:
    """
    Cadena vanilla de ancho constante desde y⁰ = 1ₙ; por capa compara los
    cocientes de los momentos 2 y 4 de ‖y^l‖ con los predichos.
    """
    kind = ChainKind(kind)
    if n < 4:
        raise ValueError(f"n debe ser >= 4: {n}")
    if L < 1:
        raise ValueError(f"L debe ser >= 1: {L}")
    _check_draws(draws, MIN_MOMENT_DRAWS)
    inv_n = 1.0 / math.sqrt(n)

    def sampler(generator: np.random.Generator, count: int) -> Dict[str, np.ndarray]:
        y = np.ones((count, n))
        norms = {"norm_sq_0": np.einsum("bi,bi->b", y, y)}
        for l in range(1, L + 1):
            W = generator.standard_normal((count, n, n))
            u = inv_n * np.einsum("bij,bj->bi", W, y)
            y = math.sqrt(2.0) * np.maximum(u, 0.0) if kind is ChainKind.RELU else u
            norms[f"norm_sq_{l}"] = np.einsum("bi,bi->b", y, y)
        return norms

    samples = simulate(f"norm_recursion_{kind.value}", draws, rng, 2 * L * n * n, sampler)
    reports: List[MomentRecursionReport] = []
    for l in range(1, L + 1):
        previous, current = samples[f"norm_sq_{l - 1}"], samples[f"norm_sq_{l}"]
        for order in (2, 4):
            power = order // 2
            observed = _ratio_estimate(current ** power, previous ** power)
            predicted = predicted_norm_ratio(kind, n, order)
            stderr = observed.stderr_of_mean
            z = (observed.mean - predicted) / stderr if stderr > 0 else 0.0
            reports.append(MomentRecursionReport(
                kind=kind,
                n=n,
                layer=l,
                order=order,
                observed_ratio=observed,
                predicted_ratio=predicted,
                passed=bool(abs(z) <= RECURSION_GATE),
                z_score=float(z),
            ))
    return reports


def sign_flip_site(spec: ArchitectureSpec, layer: int) -> List[WeightIndex]:
    """Matrices que alimentan el sitio ReLU de la capa dada"""
    if spec.kind is ArchKind.VANILLA:
        if not 1 <= layer <= spec.depth:
            raise InvalidIndex(f"capa {layer} fuera de [1, {spec.depth}]")
        return [WeightIndex(layer, 0)]
    if spec.kind is ArchKind.RESNET:
        if not 1 <= layer <= spec.depth:
            raise InvalidIndex(f"bloque {layer} fuera de [1, {spec.depth}]")
        return [WeightIndex(layer, 1)]
    if not 1 <= layer <= spec.depth - 1:
        raise InvalidIndex(f"capa {layer} fuera de [1, {spec.depth - 1}] (la última capa no tiene ReLU)")
    return [WeightIndex(layer, h) for h in range(layer)]


def check_sign_flip(
    spec: ArchitectureSpec,
    x: np.ndarray,
    layer: int,
    draws: int,
    rng: RngStream,
    power: int = 2,
) -> MomentEstimate:
    """
    E[w^p·z] para un peso w elegido al azar que alimenta la neurona i de la
    capa y su máscara z_i. Predicción: c_p/2.
    """
    if power not in GAUSSIAN_MOMENTS:
        raise ValueError(f"power debe ser uno de {sorted(GAUSSIAN_MOMENTS)}: {power}")
    spec = build_arch(spec)
    candidates = sign_flip_site(spec, layer)
    mask_key = (layer, 1) if spec.kind is ArchKind.RESNET else (layer, 0)
    x = np.asarray(x, dtype=np.float64)
    n = spec.width

    def sampler(generator: np.random.Generator, count: int) -> Dict[str, np.ndarray]:
        w = sample_weight_batch(spec, generator, count)
        trace = forward(spec, w, x)
        rows = generator.integers(0, n, size=count)
        cols = generator.integers(0, n, size=count)
        choice = generator.integers(0, len(candidates), size=count)
        draws_index = np.arange(count)
        weight = np.empty(count)
        for position, key in enumerate(candidates):
            selected = choice == position
            matrices = w.body[key]
            weight[selected] = matrices[draws_index[selected], rows[selected], cols[selected]]
        mask = trace.masks[mask_key][draws_index, 0, rows]
        return {"value": weight ** power * mask}

    samples = simulate("sign_flip", draws, rng, draw_footprint(spec), sampler)
    return MomentEstimate.from_samples(samples["value"])


def sign_flip_report(
    spec: ArchitectureSpec,
    x: np.ndarray,
    layer: int,
    draws: int,
    rng: RngStream,
    power: int = 2,
) -> SignFlipReport:
    """check_sign_flip con predicción c_p/2 y compuerta de 3 errores estándar"""
    estimate = check_sign_flip(spec, x, layer, draws, rng, power)
    predicted = GAUSSIAN_MOMENTS[power] / 2.0
    stderr = estimate.stderr_of_mean
    z = (estimate.mean - predicted) / stderr if stderr > 0 else 0.0
    return SignFlipReport(
        spec=build_arch(spec),
        layer=layer,
        power=power,
        estimate=estimate,
        predicted=predicted,
        passed=bool(abs(z) <= RECURSION_GATE),
        z_score=float(z),
    )
