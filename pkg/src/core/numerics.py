#!/usr/bin/env python3
"""
Primitivas numéricas compartidas por todo el laboratorio.

- RngStream: flujos aleatorios reproducibles identificados por (seed, stream_id),
  construidos sobre SeedSequence + Philox para que cada flujo sea independiente
  y se pueda paralelizar por índice de draw.
- gaussian_matrix: matrices N(0, 1) deterministas dado el flujo.
- spd_solve: resolución de sistemas simétricos definidos positivos por Cholesky
  con jitter explícito.
- MomentEstimate: estimador de media/varianza en una pasada con merge asociativo.

Todo el punto flotante es float64.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import linalg, stats

from ..utils.constants import ROUNDING_FLOOR
from .errors import NonFiniteSample, NotPositiveDefinite, ShapeMismatch

_UINT64_LIMIT = 2 ** 64


@dataclass(frozen=True)
class RngStream:
    """Flujo aleatorio reproducible: misma (seed, stream_id) → mismos draws"""
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) < _UINT64_LIMIT:
                raise ValueError(f"{name} debe ser un entero de 64 bits sin signo: {value}")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))

    def generator(self) -> np.random.Generator:
        """Generador Philox (counter-based) para este flujo"""
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def at(self, offset: int) -> "RngStream":
        """Flujo hermano con stream_id desplazado"""
        return RngStream(self.seed, (int(self.stream_id) + int(offset)) % _UINT64_LIMIT)

    def fork(self, *tags: int) -> "RngStream":
        """Deriva una semilla nueva e independiente a partir de etiquetas enteras"""
        sequence = np.random.SeedSequence(
            int(self.seed), spawn_key=(int(self.stream_id),) + tuple(int(t) for t in tags)
        )
        derived = int(sequence.generate_state(1, dtype=np.uint64)[0])
        return RngStream(derived, 0)


def gaussian_matrix(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    """Matriz rows×cols de normales estándar i.i.d., determinista dado rng"""
    return rng.generator().standard_normal((rows, cols))


def spd_solve(H: np.ndarray, B: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """
    Resuelve (H + jitter·I)·X = B con factorización de Cholesky.

    Lanza NotPositiveDefinite si la factorización falla o si algún pivote
    queda por debajo del ruido de redondeo (matriz numéricamente singular).
    """
    H = np.asarray(H, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ShapeMismatch(f"H debe ser cuadrada, recibido {H.shape}")
    if B.shape[0] != H.shape[0]:
        raise ShapeMismatch(f"B tiene {B.shape[0]} filas, H tiene {H.shape[0]}")
    if jitter < 0:
        raise ValueError(f"jitter debe ser >= 0: {jitter}")
    scale = max(float(np.max(np.abs(H))), 1.0)
    if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12 * scale):
        raise ShapeMismatch("H no es simétrica")

    size = H.shape[0]
    A = 0.5 * (H + H.T) + jitter * np.eye(size)
    try:
        factor, lower = linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(jitter, str(exc)) from exc

    pivots = np.diag(factor) ** 2
    if pivots.min() <= size * np.finfo(np.float64).eps * pivots.max():
        raise NotPositiveDefinite(jitter, "pivote numéricamente nulo")
    return linalg.cho_solve((factor, lower), B, check_finite=False)


@dataclass(frozen=True)
class MomentEstimate:
    """Estimación Monte Carlo: media, segundo momento central (poblacional) y error estándar"""
    n_samples: int
    mean: float
    second_central_moment: float

    @property
    def stderr_of_mean(self) -> float:
        if self.n_samples < 1:
            return float("nan")
        return float(np.sqrt(max(self.second_central_moment, 0.0) / self.n_samples))

    @property
    def variance(self) -> float:
        return self.second_central_moment

    @classmethod
    def empty(cls) -> "MomentEstimate":
        return cls(0, 0.0, 0.0)

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "MomentEstimate":
        """Estimación directa (dos pasadas) a partir de un vector de muestras"""
        values = np.asarray(samples, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise NonFiniteSample("muestra no finita en el estimador")
        if values.size == 0:
            return cls.empty()
        mean = float(values.mean())
        return cls(int(values.size), mean, float(np.mean((values - mean) ** 2)))

    @classmethod
    def from_mean_stderr(cls, n_samples: int, mean: float, stderr: float) -> "MomentEstimate":
        """Construye una estimación derivada (p. ej. un cociente) con su error estándar"""
        return cls(int(n_samples), float(mean), float(stderr) ** 2 * int(n_samples))

    def merge(self, other: "MomentEstimate") -> "MomentEstimate":
        """Merge asociativo de dos estimaciones parciales (Chan et al.)"""
        if other.n_samples == 0:
            return self
        if self.n_samples == 0:
            return other
        total = self.n_samples + other.n_samples
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n_samples / total
        m2 = (
            self.second_central_moment * self.n_samples
            + other.second_central_moment * other.n_samples
            + delta * delta * self.n_samples * other.n_samples / total
        )
        return MomentEstimate(total, mean, m2 / total)


def accumulate(estimate: MomentEstimate, sample: float) -> MomentEstimate:
    """Actualización de Welford con una muestra"""
    value = float(sample)
    if not np.isfinite(value):
        raise NonFiniteSample(f"muestra no finita: {value}")
    count = estimate.n_samples + 1
    delta = value - estimate.mean
    mean = estimate.mean + delta / count
    m2 = estimate.second_central_moment * estimate.n_samples + delta * (value - mean)
    return MomentEstimate(count, mean, m2 / count)


def independence_pvalue(a: np.ndarray, b: np.ndarray, bins: int = 8) -> float:
    """
    p-valor chi-cuadrado de independencia entre dos muestras normales
    emparejadas, discretizadas en cuantiles de N(0, 1).
    """
    edges = stats.norm.ppf(np.linspace(0.0, 1.0, bins + 1)[1:-1])
    rows = np.digitize(np.asarray(a).ravel(), edges)
    cols = np.digitize(np.asarray(b).ravel(), edges)
    table = np.zeros((bins, bins))
    np.add.at(table, (rows, cols), 1.0)
    _, pvalue, _, _ = stats.chi2_contingency(table)
    return float(pvalue)


def paired_z(differences: np.ndarray, scale: float = 0.0) -> Tuple[float, float, float]:
    """
    z-score de una diferencia emparejada: (media, error estándar, z).

    El error estándar se completa con un piso de redondeo proporcional a
    `scale` para que diferencias idénticas salvo por aritmética den z ≈ 0.
    """
    values = np.asarray(differences, dtype=np.float64).ravel()
    if not np.all(np.isfinite(values)):
        raise NonFiniteSample("diferencia no finita")
    mean = float(values.mean())
    stderr = float(values.std() / np.sqrt(values.size))
    floor = ROUNDING_FLOOR * abs(scale)
    effective = float(np.hypot(stderr, floor))
    if effective == 0.0:
        return mean, stderr, 0.0 if mean == 0.0 else float("inf") * np.sign(mean)
    return mean, stderr, mean / effective
