#!/usr/bin/env python3
"""
Líneas de resumen legibles para la salida del CLI
"""

from typing import Any, Dict, List, Sequence

from ..core.duality_lab import DualityReport, MomentRecursionReport, SignFlipReport
from ..core.net_core import ArchitectureSpec
from ..core.variance_lab import DepthTrend, VarianceReport


def verdict(passed: bool) -> str:
    return "✅ PASS" if passed else "❌ FAIL"


def variance_summary(reports: Sequence[VarianceReport]) -> List[str]:
    lines = []
    for report in reports:
        if not report.diag:
            continue
        lines.append(
            f"{report.spec.kind.value:<9} n={report.spec.width:<4} L={report.spec.depth:<3} "
            f"V = {report.normalized_variance:.4g} ± {report.normalized_variance_stderr:.2g}  "
            f"η = {report.eta:.4g}"
        )
    return lines


def trend_line(kind: str, width: int, trend: DepthTrend) -> str:
    return (
        f"{kind} n={width}: pendiente de log V en L = {trend.slope:.4g} ± {trend.stderr:.2g} "
        f"(t = {trend.t_statistic:.2f})"
    )


def duality_line(report: DualityReport) -> str:
    line = (
        f"{report.check} {report.spec.kind.value} {report.k.label} orden {report.moment_order}: "
        f"{report.lhs.mean:.6g} vs {report.rhs.mean:.6g} (z = {report.z_score:.2f}) {verdict(report.passed)}"
    )
    if report.item1 is not None:
        line += f" [item1 z = {report.item1.z_score:.2f}]"
    return line


def moment_line(report: MomentRecursionReport) -> str:
    return (
        f"{report.kind.value} n={report.n} capa {report.layer} orden {report.order}: "
        f"{report.observed_ratio.mean:.5f} vs {report.predicted_ratio:.5f} "
        f"(z = {report.z_score:.2f}) {verdict(report.passed)}"
    )


def sign_flip_line(report: SignFlipReport) -> str:
    return (
        f"sign-flip {report.spec.kind.value} capa {report.layer} potencia {report.power}: "
        f"{report.estimate.mean:.5f} vs {report.predicted:.5f} (z = {report.z_score:.2f}) {verdict(report.passed)}"
    )


def kernel_summary(spec: ArchitectureSpec, rows: Sequence[Dict[str, Any]], tolerance: float, compared: bool) -> List[str]:
    header = f"Kernel límite {spec.kind.value} L={spec.depth} ({len(rows) // 3} parejas)"
    if not compared:
        return [header]
    worst = max(row["relative_error"] for row in rows)
    return [header, f"error relativo máximo frente a n={spec.width}: {worst:.4f} "
                    f"(tolerancia {tolerance:g}) {verdict(worst <= tolerance)}"]
