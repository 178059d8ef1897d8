#!/usr/bin/env python3
"""
Regresión por kernel sobre features de gradiente aleatorias.

g(x) = (𝒢_T(x, x₁), …, 𝒢_T(x, x_m))·(H_T + jitter·I)⁻¹·Y con Y one-hot.
El kernel puede ser el NTK empírico promediado sobre T draws o cualquiera
de los kernels límite. Incluye ingestión de CSV, datasets sintéticos,
partición train/test y el experimento completo por rejilla.
"""

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils import logger
from ..utils.constants import DEFAULT_JITTER_FACTOR, EXPERIMENT_DEFAULTS, REFERENCE_DEPTH, TRAIN_FRACTION
from .errors import ParseError, ShapeMismatch, ZeroRow
from .limit_kernel import limit_gram
from .net_core import ArchitectureSpec, ArchKind, KernelScope
from .ntk_exact import GramMatrix, avg_ntk_gram
from .numerics import RngStream, spd_solve

_DEFAULTS = EXPERIMENT_DEFAULTS["REGRESS"]


@dataclass(frozen=True)
class Dataset:
    """Features con filas de norma 1 y etiquetas densas en [0, class_count)"""
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    label_names: Tuple[str, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != labels.shape[0]:
            raise ShapeMismatch(f"features {features.shape} y labels {labels.shape} incompatibles")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ShapeMismatch(f"etiquetas fuera de [0, {self.class_count})")
        norms = np.linalg.norm(features, axis=1)
        if not np.allclose(norms, 1.0, rtol=0.0, atol=1e-10):
            raise ShapeMismatch("las filas de features deben tener norma 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.class_count, self.label_names)


def _normalize_rows(features: np.ndarray) -> np.ndarray:
    return features / np.linalg.norm(features, axis=1, keepdims=True)


def load_csv_dataset(path: Union[str, Path], label_column: str) -> Dataset:
    """
    CSV con cabecera; la columna de etiqueta puede ser cualquier texto y el
    resto debe ser numérico. Las etiquetas se numeran por orden de aparición.
    """
    rows: List[List[float]] = []
    labels: List[int] = []
    names: Dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ParseError(1, None, "archivo vacío")
        header = [column.strip() for column in header]
        if label_column not in header:
            raise ParseError(1, label_column, "la columna de etiqueta no existe en la cabecera")
        label_position = header.index(label_column)
        feature_columns = [(i, name) for i, name in enumerate(header) if i != label_position]
        if not feature_columns:
            raise ParseError(1, None, "no hay columnas de features")

        for record in reader:
            line = reader.line_num
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise ParseError(line, None, f"se esperaban {len(header)} columnas, hay {len(record)}")
            values = []
            for position, name in feature_columns:
                cell = record[position].strip()
                try:
                    value = float(cell)
                except ValueError as exc:
                    raise ParseError(line, name, f"valor no numérico '{cell}'") from exc
                if not math.isfinite(value):
                    raise ParseError(line, name, f"valor no finito '{cell}'")
                values.append(value)
            if not any(values):
                raise ZeroRow(line)
            label = record[label_position].strip()
            labels.append(names.setdefault(label, len(names)))
            rows.append(values)

    if not rows:
        raise ParseError(1, None, "el archivo no contiene filas de datos")
    features = _normalize_rows(np.asarray(rows, dtype=np.float64))
    logger.info(f"Dataset {Path(path).name}: {len(rows)} filas, {features.shape[1]} features, {len(names)} clases")
    return Dataset(features, np.asarray(labels), len(names), tuple(names))


def gen_synthetic(classes: int, dim: int, per_class: int, separation: float, rng: RngStream) -> Dataset:
    """
    Clase c ~ 𝒩(μ_c, I) con μ_c = (separation·√dim/√2)·e_c, de modo que las
    medias están a distancia separation·√dim dos a dos. Filas normalizadas.
    """
    if classes < 2:
        raise ValueError(f"classes debe ser >= 2: {classes}")
    if dim < classes:
        raise ValueError(f"dim ({dim}) debe ser >= classes ({classes})")
    if per_class < 1:
        raise ValueError(f"per_class debe ser >= 1: {per_class}")
    generator = rng.generator()
    offset = separation * math.sqrt(dim) / math.sqrt(2.0)
    blocks = []
    for c in range(classes):
        mean = np.zeros(dim)
        mean[c] = offset
        blocks.append(mean + generator.standard_normal((per_class, dim)))
    features = _normalize_rows(np.vstack(blocks))
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(features, labels, classes, tuple(str(c) for c in range(classes)))


def split_indices(size: int, rng: RngStream, train_fraction: float = TRAIN_FRACTION) -> Tuple[np.ndarray, np.ndarray]:
    """Índices (train, test) ordenados de una permutación con semilla; ambos lados no vacíos"""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction debe estar en (0, 1): {train_fraction}")
    if size < 2:
        raise ValueError("se necesitan al menos 2 muestras para partir")
    order = rng.generator().permutation(size)
    cut = min(max(int(round(train_fraction * size)), 1), size - 1)
    return np.sort(order[:cut]), np.sort(order[cut:])


def split_dataset(dataset: Dataset, rng: RngStream, train_fraction: float = TRAIN_FRACTION) -> Tuple[Dataset, Dataset]:
    train_index, test_index = split_indices(dataset.size, rng, train_fraction)
    return dataset.subset(train_index), dataset.subset(test_index)


def one_hot(labels: Sequence[int], class_count: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    matrix = np.zeros((labels.size, class_count))
    matrix[np.arange(labels.size), labels] = 1.0
    return matrix


class KernelSourceKind(Enum):
    """Origen del kernel de un modelo"""
    EMPIRICAL = "empirical"
    LIMIT_VANILLA = "limit_vanilla"
    LIMIT_RESNET = "limit_resnet"
    LIMIT_DENSENET = "limit_densenet"

    @classmethod
    def limit_for(cls, kind: ArchKind) -> "KernelSourceKind":
        return {
            ArchKind.VANILLA: cls.LIMIT_VANILLA,
            ArchKind.RESNET: cls.LIMIT_RESNET,
            ArchKind.DENSENET: cls.LIMIT_DENSENET,
        }[kind]


@dataclass(frozen=True)
class KernelSource:
    kind: KernelSourceKind
    draws: int = 0
    seed: Optional[int] = None


@dataclass(frozen=True)
class RegressionModel:
    """Pesos duales H⁻¹Y sobre el conjunto de entrenamiento"""
    train_size: int
    class_count: int
    dual_weights: np.ndarray
    jitter: float
    kernel_source: KernelSource = field(default_factory=lambda: KernelSource(KernelSourceKind.EMPIRICAL))


def default_jitter(gram: np.ndarray) -> float:
    """1e-8 · traza(H) / m"""
    return DEFAULT_JITTER_FACTOR * float(np.trace(gram)) / gram.shape[0]


def _entries(gram: Union[GramMatrix, np.ndarray]) -> np.ndarray:
    return gram.entries if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=np.float64)


def fit(
    gram_train: Union[GramMatrix, np.ndarray],
    labels: Sequence[int],
    class_count: int,
    jitter: Optional[float] = None,
    kernel_source: Optional[KernelSource] = None,
) -> RegressionModel:
    """Resuelve (H + jitter·I)·A = Y; NotPositiveDefinite sugiere subir el jitter"""
    H = _entries(gram_train)
    labels = np.asarray(labels, dtype=np.int64)
    if H.ndim != 2 or H.shape[0] != labels.size:
        raise ShapeMismatch(f"Gram de forma {H.shape} para {labels.size} etiquetas")
    if jitter is None:
        jitter = default_jitter(H)
        logger.debug(f"jitter relativo: {jitter:.3g} (1e-8·traza/m)")
    dual = spd_solve(H, one_hot(labels, class_count), jitter)
    return RegressionModel(
        train_size=int(labels.size),
        class_count=int(class_count),
        dual_weights=dual,
        jitter=float(jitter),
        kernel_source=kernel_source or KernelSource(KernelSourceKind.EMPIRICAL),
    )


def scores(model: RegressionModel, gram_cross: Union[GramMatrix, np.ndarray]) -> np.ndarray:
    cross = _entries(gram_cross)
    if cross.ndim == 1:
        cross = cross[None, :]
    if cross.ndim != 2 or cross.shape[1] != model.train_size:
        raise ShapeMismatch(f"Gram cruzada {cross.shape}, entrenamiento de {model.train_size} muestras")
    return cross @ model.dual_weights


def predict(model: RegressionModel, gram_cross: Union[GramMatrix, np.ndarray]) -> np.ndarray:
    """argmax por fila; en empate gana la clase de menor id"""
    return np.argmax(scores(model, gram_cross), axis=1)


def accuracy(predicted: Sequence[int], labels: Sequence[int]) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ShapeMismatch(f"predicciones {predicted.shape} y etiquetas {labels.shape}")
    return float(np.mean(predicted == labels))


def evaluate_gram(full_gram: np.ndarray, train_index: np.ndarray, test_index: np.ndarray,
                  train_labels: np.ndarray, test_labels: np.ndarray, class_count: int,
                  jitter: Optional[float], source: KernelSource) -> float:
    """Ajusta sobre el bloque train×train y mide accuracy en test×train"""
    model = fit(full_gram[np.ix_(train_index, train_index)], train_labels, class_count, jitter, source)
    return accuracy(predict(model, full_gram[np.ix_(test_index, train_index)]), test_labels)


@dataclass(frozen=True)
class RegressionRow:
    """Accuracy media y desviación de una celda (kind, n, L, T)"""
    kind: ArchKind
    width: Optional[int]
    depth: int
    draws: int
    accuracies: Tuple[float, ...]
    relative_accuracy: Optional[float] = None

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def is_limit(self) -> bool:
        return self.width is None

    def csv_row(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "n": "inf" if self.width is None else self.width,
            "L": self.depth,
            "T": self.draws,
            "repeat_count": len(self.accuracies),
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
        }

    def to_record(self) -> Dict[str, Any]:
        record = dict(self.csv_row())
        record["accuracies"] = list(self.accuracies)
        if self.relative_accuracy is not None:
            record["relative_accuracy"] = self.relative_accuracy
        return record


@dataclass(frozen=True)
class ExperimentReport:
    rows: List[RegressionRow]
    dataset_size: int
    train_size: int
    class_count: int
    jitter: Optional[float]

    def summary_lines(self) -> List[str]:
        jitter = "1e-8·traza/m" if self.jitter is None else f"{self.jitter:g}"
        lines = [f"Dataset: {self.dataset_size} muestras ({self.train_size} train), "
                 f"{self.class_count} clases, jitter {jitter}"]
        for row in self.rows:
            width = "inf" if row.is_limit else str(row.width)
            relative = f"  rel(L={REFERENCE_DEPTH}) {row.relative_accuracy:.3f}" if row.relative_accuracy is not None else ""
            lines.append(
                f"  {row.kind.value:<9} n={width:<5} L={row.depth:<3} T={row.draws:<4} "
                f"acc {row.mean_accuracy:.4f} ± {row.std_accuracy:.4f}{relative}"
            )
        return lines


def _load_dataset(config: Mapping[str, Any], rng: RngStream) -> Dataset:
    source = config.get("dataset") or {}
    if source.get("path"):
        return load_csv_dataset(source["path"], source.get("label_column", "label"))
    synthetic = source.get("synthetic", {}) if isinstance(source, Mapping) else {}
    return gen_synthetic(
        int(synthetic.get("classes", _DEFAULTS["classes"])),
        int(synthetic.get("dim", _DEFAULTS["input_dim"])),
        int(synthetic.get("per_class", _DEFAULTS["samples"] // _DEFAULTS["classes"])),
        float(synthetic.get("separation", _DEFAULTS["separation"])),
        rng,
    )


def _grid_spec(kind: ArchKind, input_dim: int, depth: int, width: int, arch: Mapping[str, Any]) -> ArchitectureSpec:
    if kind is ArchKind.VANILLA:
        return ArchitectureSpec.vanilla(input_dim, depth, width)
    if kind is ArchKind.RESNET:
        return ArchitectureSpec.resnet(
            input_dim, depth, width,
            branch_depth=int(arch.get("branch_depth", 2)),
            alpha_scale=float(arch.get("alpha_scale", 0.1)),
        )
    return ArchitectureSpec.densenet(input_dim, depth, width, alpha=float(arch.get("dense_alpha", 0.5)))


def _with_relative(rows: List[RegressionRow]) -> List[RegressionRow]:
    reference = {
        (row.kind, row.width): row.mean_accuracy for row in rows if row.depth == REFERENCE_DEPTH
    }
    result = []
    for row in rows:
        base = reference.get((row.kind, row.width))
        relative = row.mean_accuracy / base if base else None
        result.append(RegressionRow(row.kind, row.width, row.depth, row.draws, row.accuracies, relative))
    return result


def run_experiment(config: Mapping[str, Any]) -> ExperimentReport:
    """
    Rejilla tipo × ancho × profundidad con `repeats` muestreos de pesos
    independientes por celda, más una fila de kernel límite por (tipo, L).
    Todo se deriva de la semilla maestra: misma config, mismo informe.
    """
    master = RngStream(int(config.get("seed", 0)))
    dataset = _load_dataset(config, master.fork(10))
    train_fraction = float(config.get("split", TRAIN_FRACTION))
    train_index, test_index = split_indices(dataset.size, master.fork(11), train_fraction)
    train_labels, test_labels = dataset.labels[train_index], dataset.labels[test_index]

    arch = config.get("arch", {})
    kinds = [ArchKind(k) for k in arch.get("kinds", _DEFAULTS["kinds"])]
    widths = [int(n) for n in arch.get("widths", _DEFAULTS["widths"])]
    depths = [int(L) for L in arch.get("depths", _DEFAULTS["depths"])]
    draws = int(config.get("T", _DEFAULTS["draws"]))
    repeats = int(config.get("repeats", _DEFAULTS["repeats"]))
    jitter = config.get("jitter")
    jitter = None if jitter is None else float(jitter)
    include_limit = bool(config.get("include_limit", True))
    if draws < 1 or repeats < 1:
        raise ValueError("T y repeats deben ser >= 1")

    rows: List[RegressionRow] = []
    cell = 0
    for kind in kinds:
        for width in widths:
            for depth in depths:
                spec = _grid_spec(kind, dataset.dim, depth, width, arch)
                accuracies = []
                for repeat in range(repeats):
                    stream = master.fork(20, cell, repeat)
                    gram = avg_ntk_gram(spec, dataset.features, stream, draws, KernelScope.FULL)
                    source = KernelSource(KernelSourceKind.EMPIRICAL, draws, stream.seed)
                    accuracies.append(evaluate_gram(gram.entries, train_index, test_index, train_labels,
                                                    test_labels, dataset.class_count, jitter, source))
                rows.append(RegressionRow(kind, width, depth, draws, tuple(accuracies)))
                logger.info(f"{kind.value} n={width} L={depth}: accuracy {np.mean(accuracies):.4f}")
                cell += 1
        if include_limit:
            for depth in depths:
                spec = _grid_spec(kind, dataset.dim, depth, 1, arch)
                gram = limit_gram(spec, dataset.features, KernelScope.FULL)
                source = KernelSource(KernelSourceKind.limit_for(kind))
                value = evaluate_gram(gram.entries, train_index, test_index, train_labels,
                                      test_labels, dataset.class_count, jitter, source)
                rows.append(RegressionRow(kind, None, depth, 0, (value,)))

    return ExperimentReport(
        rows=_with_relative(rows),
        dataset_size=dataset.size,
        train_size=int(train_index.size),
        class_count=dataset.class_count,
        jitter=jitter,
    )
