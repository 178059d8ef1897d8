#!/usr/bin/env python3
"""
Ejecución de cada subcomando a partir de una RunConfig validada.

Cada comando devuelve un CommandResult con las filas CSV, los registros
JSON-lines, las líneas de resumen y si alguna comprobación falló.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Sequence

import numpy as np

from ..core.duality_lab import ChainKind, check_norm_recursion, check_thm3, check_thm4, sign_flip_report
from ..core.errors import DegenerateMean, UsageError
from ..core.kreg import run_experiment
from ..core.limit_kernel import limit_gram
from ..core.net_core import ArchitectureSpec, ArchKind, KernelScope, WeightIndex, weight_keys
from ..core.ntk_exact import GramMatrix, avg_ntk_gram
from ..core.numerics import RngStream
from ..core.variance_lab import (
    BoundParams,
    VarianceReport,
    bound_xi,
    dense_c2_preset,
    depth_trend,
    diag_offdiag_spearman,
    gen_inputs,
    sweep,
)
from ..utils import logger
from ..utils.constants import (
    DUALITY_COLUMNS,
    KERNEL_COLUMNS,
    MOMENT_COLUMNS,
    REGRESSION_COLUMNS,
    SIGN_FLIP_COLUMNS,
    VARIANCE_COLUMNS,
)
from ..utils.exporters import gram_to_csv, gram_to_json
from ..utils.run_config import RunConfig
from . import formatters


@dataclass
class CommandResult:
    columns: Sequence[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    records: List[Dict[str, Any]] = field(default_factory=list)
    summary: List[str] = field(default_factory=list)
    failed: bool = False


def _as_list(value: Any) -> List[Any]:
    if value is None:
        return []
    return list(value) if isinstance(value, (list, tuple)) else [value]


def arch_spec(section: Mapping[str, Any]) -> ArchitectureSpec:
    """ArchitectureSpec desde una sección con arch, width, depth, m, alphas, alpha"""
    try:
        kind = ArchKind(str(section["arch"]).lower())
    except ValueError as exc:
        raise UsageError(f"arquitectura desconocida: {section['arch']}") from exc
    input_dim, depth, width = int(section["input_dim"]), int(section["depth"]), int(section["width"])
    if kind is ArchKind.VANILLA:
        return ArchitectureSpec.vanilla(input_dim, depth, width)
    if kind is ArchKind.RESNET:
        alphas = section.get("alphas")
        return ArchitectureSpec.resnet(
            input_dim, depth, width,
            alphas=tuple(float(a) for a in alphas) if alphas else None,
            branch_depth=int(section["m"]),
            alpha_scale=float(section["alpha_scale"]),
        )
    return ArchitectureSpec.densenet(input_dim, depth, width, alpha=float(section["alpha"]))


def run_variance(config: RunConfig) -> CommandResult:
    section = config.section
    rng = RngStream(int(config.common["seed"]))
    kinds = [ArchKind(str(k).lower()) for k in _as_list(section["arch"])]
    reports = sweep(
        kinds,
        [int(d) for d in section["depths"]],
        [int(n) for n in section["widths"]],
        int(section["draws"]),
        rng,
        input_dim=int(section["input_dim"]),
        alpha_scale=float(section["alpha_scale"]),
        dense_alpha=float(section["alpha"]),
        branch_depth=int(section["m"]),
    )
    c2 = section.get("bound_c2")
    constants = (float(section["bound_c1"]), float(c2) if c2 is not None else dense_c2_preset(float(section["alpha"])))

    records = []
    for report in reports:
        record = report.to_record()
        if report.diag and report.spec.kind is not ArchKind.VANILLA:
            params = BoundParams.for_width(report.spec.width, report.spec.branch_depth,
                                           float(section["bound_c"]), constants)
            lower, upper = bound_xi(report.spec, params)
            record.update({"bound_lower": lower, "bound_upper": upper})
        records.append(record)

    return CommandResult(
        columns=VARIANCE_COLUMNS,
        rows=[report.csv_row() for report in reports],
        records=records,
        summary=formatters.variance_summary(reports) + _variance_trends(reports),
    )


def _variance_trends(reports: Sequence[VarianceReport]) -> List[str]:
    lines = []
    groups: Dict[Any, List[VarianceReport]] = {}
    for report in reports:
        if report.diag:
            groups.setdefault((report.spec.kind.value, report.spec.width), []).append(report)
    for (kind, width), group in groups.items():
        if len(group) < 3:
            continue
        try:
            trend = depth_trend(group)
        except DegenerateMean as e:
            logger.warn(f"Sin tendencia para {kind} n={width}: {e}")
            continue
        lines.append(formatters.trend_line(kind, width, trend))
    if len({(r.spec.kind, r.spec.width, r.spec.depth) for r in reports}) >= 3:
        lines.append(f"Spearman(V diag, V off-diag) = {diag_offdiag_spearman(reports):.3f}")
    return lines


def _duality_indices(section: Mapping[str, Any], spec: ArchitectureSpec, rng: RngStream) -> List[WeightIndex]:
    given = _as_list(section.get("k"))
    if given:
        return [WeightIndex.parse(str(text)) for text in given]
    keys = weight_keys(spec)
    count = min(int(section["indices"]), len(keys))
    chosen = rng.generator().choice(len(keys), size=count, replace=False)
    return sorted((keys[i] for i in chosen), key=WeightIndex.sort_key)


def run_duality(config: RunConfig) -> CommandResult:
    section = config.section
    rng = RngStream(int(config.common["seed"]))
    spec = arch_spec(section)
    x, _ = gen_inputs(spec.input_dim, rng.fork(1))
    draws = int(section["draws"])
    check = section["check"]

    if check == "sign_flip":
        report = sign_flip_report(spec, x, int(section["layer"]), draws, rng.fork(4), power=int(section["order"]))
        record = report.to_record()
        return CommandResult(
            columns=SIGN_FLIP_COLUMNS,
            rows=[record],
            records=[record],
            summary=[formatters.sign_flip_line(report)],
            failed=not report.passed,
        )
    if check not in ("thm3", "thm4"):
        raise UsageError(f"comprobación desconocida: {check} (thm3, thm4 o sign_flip)")

    reports = []
    for position, k in enumerate(_duality_indices(section, spec, rng.fork(2))):
        stream = rng.fork(3, position)
        if check == "thm3":
            reports.append(check_thm3(spec, x, k, int(section["order"]), draws, stream))
        else:
            reports.append(check_thm4(spec, x, k, draws, stream))
    return CommandResult(
        columns=DUALITY_COLUMNS,
        rows=[report.csv_row() for report in reports],
        records=[report.to_record() for report in reports],
        summary=[formatters.duality_line(report) for report in reports],
        failed=any(not report.passed for report in reports),
    )


def run_moments(config: RunConfig) -> CommandResult:
    section = config.section
    rng = RngStream(int(config.common["seed"]))
    reports = []
    cell = 0
    for chain in _as_list(section["chain"]):
        kind = ChainKind(str(chain).lower())
        for width in section["widths"]:
            reports.extend(check_norm_recursion(kind, int(width), int(section["depth"]),
                                                int(section["draws"]), rng.fork(cell)))
            cell += 1
    return CommandResult(
        columns=MOMENT_COLUMNS,
        rows=[report.csv_row() for report in reports],
        records=[report.to_record() for report in reports],
        summary=[formatters.moment_line(report) for report in reports],
        failed=any(not report.passed for report in reports),
    )


def _export_gram(base: str, suffix: str, gram: GramMatrix) -> None:
    path = Path(base)
    target = path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")
    if target.suffix == ".json":
        gram_to_json(target, gram)
    else:
        gram_to_csv(target, gram)
    logger.info(f"Gram {suffix} exportada a {target}")


def run_kernel(config: RunConfig) -> CommandResult:
    """
    Kernel límite sobre `pairs` parejas (x, x') generadas y, con
    compare_empirical, el NTK promediado con T draws. El error relativo
    se mide sobre la diagonal límite de x.
    """
    section = config.section
    rng = RngStream(int(config.common["seed"]))
    spec = arch_spec(section)
    scope = KernelScope(str(section["scope"]).lower())
    pairs = [gen_inputs(spec.input_dim, rng.fork(1, p)) for p in range(int(section["pairs"]))]
    X = np.stack([vector for pair in pairs for vector in pair])

    limit = limit_gram(spec, X, scope)
    empirical = avg_ntk_gram(spec, X, rng.fork(2), int(section["T"]), scope) if section["compare_empirical"] else None
    if section.get("gram_out"):
        _export_gram(section["gram_out"], "limit", limit)
        if empirical is not None:
            _export_gram(section["gram_out"], "empirical", empirical)

    tolerance = float(section["tolerance"])
    rows = []
    for p in range(len(pairs)):
        i, j = 2 * p, 2 * p + 1
        reference = limit.entries[i, i]
        for kind, (a, b) in (("diag", (i, i)), ("diag_prime", (j, j)), ("off", (i, j))):
            row: Dict[str, Any] = {"pair": p, "kind": kind, "limit": float(limit.entries[a, b]),
                                   "empirical": None, "relative_error": None}
            if empirical is not None:
                row["empirical"] = float(empirical.entries[a, b])
                row["relative_error"] = abs(row["empirical"] - row["limit"]) / reference
            rows.append(row)

    failed = empirical is not None and any(row["relative_error"] > tolerance for row in rows)
    return CommandResult(
        columns=KERNEL_COLUMNS,
        rows=rows,
        records=[dict(row, scope=scope.value, arch=spec.kind.value, n=spec.width, L=spec.depth) for row in rows],
        summary=formatters.kernel_summary(spec, rows, tolerance, empirical is not None),
        failed=failed,
    )


def run_regress(config: RunConfig) -> CommandResult:
    experiment = dict(config.section, seed=int(config.common["seed"]))
    report = run_experiment(experiment)
    return CommandResult(
        columns=REGRESSION_COLUMNS,
        rows=[row.csv_row() for row in report.rows],
        records=[row.to_record() for row in report.rows],
        summary=report.summary_lines(),
    )


COMMANDS: Dict[str, Callable[[RunConfig], CommandResult]] = {
    "variance": run_variance,
    "duality": run_duality,
    "moments": run_moments,
    "kernel": run_kernel,
    "regress": run_regress,
}
