#!/usr/bin/env python3
"""
Varianza normalizada del NTK a ancho finito.

V(𝒢) = Var(𝒢)/E[𝒢]² y η = E[𝒢²]/E[𝒢]² = V + 1 estimados por Monte Carlo
sobre draws independientes, con error estándar jackknife (delete-1).
Incluye barridos profundidad × ancho, las envolventes ξ de las cotas
para ResNet y DenseNet, y utilidades de análisis de tendencias.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from ..utils import logger
from ..utils.constants import DEGENERATE_MEAN, EXPERIMENT_DEFAULTS, MIN_VARIANCE_DRAWS
from .errors import DegenerateMean, InvalidSpec
from .montecarlo import draw_footprint, simulate
from .net_core import ArchitectureSpec, ArchKind, KernelScope, build_arch, sample_weight_batch
from .ntk_exact import gradients, gram_values
from .numerics import MomentEstimate, RngStream

OFF_DIAGONAL_NOTE = "empirical extension"

_DEFAULTS = EXPERIMENT_DEFAULTS["VARIANCE"]


@dataclass(frozen=True)
class VarianceReport:
    """V(𝒢) y η para una celda (arquitectura, diagonal u off-diagonal)"""
    spec: ArchitectureSpec
    diag: bool
    n_draws: int
    mean_g: MomentEstimate
    normalized_variance: float
    normalized_variance_stderr: float
    eta: float
    note: str = ""

    @property
    def var_g(self) -> float:
        return self.mean_g.second_central_moment

    def csv_row(self) -> Dict[str, Any]:
        return {
            "kind": self.spec.kind.value,
            "n": self.spec.width,
            "L": self.spec.depth,
            "m": self.spec.branch_depth if self.spec.kind is ArchKind.RESNET else "",
            "alpha_summary": self.spec.alpha_summary(),
            "diag": self.diag,
            "draws": self.n_draws,
            "mean_g": self.mean_g.mean,
            "var_g": self.var_g,
            "normalized_variance": self.normalized_variance,
            "nv_stderr": self.normalized_variance_stderr,
            "eta": self.eta,
        }

    def to_record(self) -> Dict[str, Any]:
        record = dict(self.csv_row())
        record["mean_stderr"] = self.mean_g.stderr_of_mean
        if self.note:
            record["note"] = self.note
        return record


def gen_inputs(input_dim: int, rng: RngStream) -> Tuple[np.ndarray, np.ndarray]:
    """x ∝ 𝒩(0.5, 1)^d y x' ∝ 𝒩(−0.5, 1)^d, ambos normalizados a norma 1"""
    if input_dim < 1:
        raise ValueError(f"input_dim debe ser >= 1: {input_dim}")
    generator = rng.generator()
    x_hat = generator.normal(0.5, 1.0, input_dim)
    x_hat_prime = generator.normal(-0.5, 1.0, input_dim)
    return x_hat / np.linalg.norm(x_hat), x_hat_prime / np.linalg.norm(x_hat_prime)


def normalized_variance(values: np.ndarray) -> Tuple[float, float]:
    """
    (V, error estándar jackknife) con varianza poblacional.
    Las réplicas delete-1 se obtienen de sumas centradas sin recorrer los datos.
    """
    g = np.asarray(values, dtype=np.float64).ravel()
    count = g.size
    mean = float(g.mean())
    if abs(mean) < DEGENERATE_MEAN:
        raise DegenerateMean(f"|media| = {abs(mean):.3g} < {DEGENERATE_MEAN:g}")
    d = g - mean
    s2 = float(np.sum(d * d))
    value = (s2 / count) / mean ** 2

    shift = d / (count - 1)
    means = mean - shift
    variances = (s2 - d * d) / (count - 1) - shift * shift
    replicas = variances / means ** 2
    spread = float(np.sum((replicas - replicas.mean()) ** 2))
    return value, math.sqrt(spread * (count - 1) / count)


def _report(spec: ArchitectureSpec, values: np.ndarray, diag: bool) -> VarianceReport:
    value, stderr = normalized_variance(values)
    return VarianceReport(
        spec=spec,
        diag=diag,
        n_draws=int(values.size),
        mean_g=MomentEstimate.from_samples(values),
        normalized_variance=value,
        normalized_variance_stderr=stderr,
        eta=value + 1.0,
        note="" if diag else OFF_DIAGONAL_NOTE,
    )


def sample_ntk_entries(
    spec: ArchitectureSpec,
    x: np.ndarray,
    x_prime: np.ndarray,
    draws: int,
    rng: RngStream,
    scope: KernelScope = KernelScope.FULL,
) -> Dict[str, np.ndarray]:
    """𝒢(x,x), 𝒢(x',x') y 𝒢(x,x') por draw, todos de los mismos pesos"""
    inputs = np.stack([np.asarray(x, dtype=np.float64), np.asarray(x_prime, dtype=np.float64)])

    def sampler(generator: np.random.Generator, count: int) -> Dict[str, np.ndarray]:
        w = sample_weight_batch(spec, generator, count)
        _, grads = gradients(spec, w, inputs)
        gram = gram_values(grads, scope)
        return {"diag": gram[:, 0, 0], "diag_prime": gram[:, 1, 1], "off": gram[:, 0, 1]}

    return simulate("ntk_variance", draws, rng, draw_footprint(spec, 2), sampler)


def estimate_pair(
    spec: ArchitectureSpec,
    x: np.ndarray,
    x_prime: np.ndarray,
    draws: int,
    rng: RngStream,
) -> Tuple[VarianceReport, VarianceReport]:
    """Informes diagonal 𝒢(x,x) y off-diagonal 𝒢(x,x') de una sola pasada Monte Carlo"""
    if draws < MIN_VARIANCE_DRAWS:
        raise ValueError(f"draws debe ser >= {MIN_VARIANCE_DRAWS}: {draws}")
    spec = build_arch(spec)
    samples = sample_ntk_entries(spec, x, x_prime, draws, rng)
    return _report(spec, samples["diag"], True), _report(spec, samples["off"], False)


def estimate_normalized_variance(
    spec: ArchitectureSpec,
    x: np.ndarray,
    x_prime: np.ndarray,
    draws: int,
    rng: RngStream,
) -> VarianceReport:
    """V(𝒢(x,x'; w)) sobre `draws` WeightSets; diagonal cuando x == x'"""
    diag_report, off_report = estimate_pair(spec, x, x_prime, draws, rng)
    if np.array_equal(np.asarray(x), np.asarray(x_prime)):
        return diag_report
    return off_report


def _cell_spec(
    kind: ArchKind,
    width: int,
    depth: int,
    input_dim: int,
    alpha_scale: float,
    dense_alpha: float,
    branch_depth: int,
) -> ArchitectureSpec:
    if kind is ArchKind.VANILLA:
        return ArchitectureSpec.vanilla(input_dim, depth, width)
    if kind is ArchKind.RESNET:
        return ArchitectureSpec.resnet(input_dim, depth, width, branch_depth=branch_depth, alpha_scale=alpha_scale)
    return ArchitectureSpec.densenet(input_dim, depth, width, alpha=dense_alpha)


def sweep(
    kinds: Sequence[ArchKind],
    depths: Sequence[int],
    widths: Sequence[int],
    draws: int,
    rng: RngStream,
    input_dim: int = _DEFAULTS["input_dim"],
    alpha_scale: float = _DEFAULTS["alpha_scale"],
    dense_alpha: float = _DEFAULTS["dense_alpha"],
    branch_depth: int = _DEFAULTS["branch_depth"],
) -> List[VarianceReport]:
    """
    Rejilla factorial tipo × ancho × profundidad. Cada celda c usa un par de
    entradas nuevo del flujo rng.fork(1, c) y sus draws de rng.fork(2, c);
    devuelve el informe diagonal y el off-diagonal de cada celda.
    """
    if not kinds or not depths or not widths:
        raise ValueError("kinds, depths y widths no pueden estar vacíos")
    reports: List[VarianceReport] = []
    cell = 0
    for kind in kinds:
        kind = ArchKind(kind)
        for width in widths:
            for depth in depths:
                spec = _cell_spec(kind, width, depth, input_dim, alpha_scale, dense_alpha, branch_depth)
                x, x_prime = gen_inputs(input_dim, rng.fork(1, cell))
                diag_report, off_report = estimate_pair(spec, x, x_prime, draws, rng.fork(2, cell))
                logger.info(
                    f"{kind.value} n={width} L={depth}: V_diag = {diag_report.normalized_variance:.4g} "
                    f"± {diag_report.normalized_variance_stderr:.2g}"
                )
                reports.extend([diag_report, off_report])
                cell += 1
    return reports


@dataclass(frozen=True)
class BoundParams:
    """Constantes de las cotas (el usuario las fija; solo su existencia está probada)"""
    constant_c: float = 1.0
    constants_c1_c2: Tuple[float, float] = (1.0, 1.0)
    rho_exponent: Optional[float] = None

    def __post_init__(self):
        values = [self.constant_c, *self.constants_c1_c2]
        if self.rho_exponent is not None:
            values.append(self.rho_exponent)
        if any(not math.isfinite(v) or v <= 0 for v in values):
            raise ValueError(f"todas las constantes deben ser > 0: {values}")

    @classmethod
    def for_width(cls, n: int, m: int, constant_c: float = 1.0,
                  constants_c1_c2: Tuple[float, float] = (1.0, 1.0)) -> "BoundParams":
        """ρ = (1 + 5/n)^{m/2}"""
        return cls(constant_c, tuple(constants_c1_c2), (1.0 + 5.0 / n) ** (m / 2.0))


def dense_c2_preset(alpha: float) -> float:
    """C₂ = 5α²·Σ_{l≥1}(l+α−1)⁻² = 5α²·ψ₁(α)"""
    if alpha <= 0:
        raise ValueError(f"α debe ser > 0: {alpha}")
    return float(5.0 * alpha ** 2 * special.polygamma(1, alpha))


def beta_factors(spec: ArchitectureSpec) -> List[float]:
    """β_l = 1 + 2α_l(1 + 2/n) + α_l²(1 + 5/n)^m por bloque ResNet"""
    spec = build_arch(spec)
    if spec.kind is not ArchKind.RESNET:
        raise InvalidSpec("kind", "los factores β solo existen para ResNet")
    n, m = spec.width, spec.branch_depth
    return [1.0 + 2.0 * a * (1.0 + 2.0 / n) + a * a * (1.0 + 5.0 / n) ** m for a in spec.alphas]


def bound_xi(spec: ArchitectureSpec, params: BoundParams) -> Tuple[float, float]:
    """(inferior, superior) de η evaluadas con las constantes dadas, sin el factor (1 + O(1/n))"""
    spec = build_arch(spec)
    n = spec.width
    if spec.kind is ArchKind.RESNET:
        alphas = np.asarray(spec.alphas)
        xi = math.exp(5.0 * spec.branch_depth / n + params.constant_c / n * float(np.sum(alphas / (1.0 + alphas))))
        ratio = float(np.sum(alphas ** 2) / np.sum(alphas) ** 2)
        return max(1.0, ratio * xi), xi
    if spec.kind is ArchKind.DENSENET:
        c1, c2 = params.constants_c1_c2
        xi = math.exp(c2 / n)
        L = spec.depth
        if L < 2:
            return 1.0, xi
        return max(1.0, c1 / (L * math.log(L) ** 2) * xi), xi
    raise InvalidSpec("kind", "no hay cota ξ para redes vanilla")


@dataclass(frozen=True)
class DepthTrend:
    """Pendiente de log V frente a L"""
    slope: float
    stderr: float
    t_statistic: float
    pvalue: float
    depths: Tuple[int, ...] = field(default_factory=tuple)


def depth_trend(reports: Sequence[VarianceReport]) -> DepthTrend:
    """Regresión lineal de log(V) sobre L con estadístico t de la pendiente"""
    depths = np.array([r.spec.depth for r in reports], dtype=np.float64)
    values = np.array([r.normalized_variance for r in reports], dtype=np.float64)
    if len(reports) < 3:
        raise ValueError("se necesitan al menos 3 profundidades")
    if np.any(values <= 0):
        raise DegenerateMean("V no positiva: no se puede tomar el logaritmo")
    fit = stats.linregress(depths, np.log(values))
    t_statistic = fit.slope / fit.stderr if fit.stderr > 0 else math.inf
    return DepthTrend(float(fit.slope), float(fit.stderr), float(t_statistic), float(fit.pvalue),
                      tuple(int(d) for d in depths))


def diag_offdiag_spearman(reports: Sequence[VarianceReport]) -> float:
    """Correlación de rangos entre V diagonal y off-diagonal de las mismas celdas"""
    diag: Dict[Tuple[str, int, int], float] = {}
    off: Dict[Tuple[str, int, int], float] = {}
    for report in reports:
        key = (report.spec.kind.value, report.spec.width, report.spec.depth)
        (diag if report.diag else off)[key] = report.normalized_variance
    keys = sorted(set(diag) & set(off))
    if len(keys) < 3:
        raise ValueError("se necesitan al menos 3 celdas con ambos informes")
    correlation, _ = stats.spearmanr([diag[k] for k in keys], [off[k] for k in keys])
    return float(correlation)


def variance_ratio(numerator: VarianceReport, denominator: VarianceReport) -> Tuple[float, float]:
    """V_a / V_b con error estándar por el método delta (informes independientes)"""
    a, b = numerator.normalized_variance, denominator.normalized_variance
    if b == 0:
        raise DegenerateMean("V del denominador es cero")
    ratio = a / b
    relative = math.hypot(
        numerator.normalized_variance_stderr / a if a else 0.0,
        denominator.normalized_variance_stderr / b,
    )
    return ratio, abs(ratio) * relative
