"""Text and JSON renderings of an EvaluationReport.

The text table rounds to 4 decimals; the JSON document carries the same
numbers at full precision.
"""
from __future__ import annotations

import json
from dataclasses import asdict

from .reflect import EvaluationReport

REPORT_FORMAT = "cnng-report"
REPORT_VERSION = 1


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def to_structured(report: EvaluationReport, dataset: str = "") -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "dataset": dataset,
        "table1": {"cnng": report.overall_accuracy, "single_nn": report.general_accuracy},
        "table2": [asdict(row) for row in report.per_network],
        "used_fraction_sum": sum(row.used_fraction for row in report.per_network),
        "error_count": report.error_count,
        "total": report.total,
        "train_error_fraction": report.train_error_fraction,
        "notes": list(report.notes),
    }


def render_json(report: EvaluationReport, dataset: str = "") -> str:
    return json.dumps(to_structured(report, dataset), indent=2, sort_keys=True) + "\n"


TABLE2_COLUMNS = ("network", "used", "overall_accuracy", "specific_task_accuracy",
                  "cluster_size", "cv_folds", "sgd_steps")


def render_text(report: EvaluationReport, dataset: str = "") -> str:
    lines = [f"CNNG evaluation on {dataset or 'test set'} ({report.total} examples)", ""]
    lines.append("Table 1: test accuracy")
    lines.append(f"  {'CNNG':<10}{'SingleNN':<10}")
    lines.append(f"  {_fmt(report.overall_accuracy):<10}{_fmt(report.general_accuracy):<10}")
    lines.append("")
    lines.append("Table 2: networks in the group (Used / Overall Accuracy / Specific-task Accuracy)")
    widths = (10, 8, 18, 24, 14, 10, 10)
    lines.append("  " + "".join(f"{c:<{w}}" for c, w in zip(TABLE2_COLUMNS, widths)).rstrip())
    for row in report.per_network:
        cells = (row.name, row.used_fraction, row.overall_accuracy, row.specific_task_accuracy,
                 row.cluster_size, row.cv_folds, row.sgd_steps)
        lines.append("  " + "".join(f"{_fmt(c):<{w}}" for c, w in zip(cells, widths)).rstrip())
    lines.append("")
    lines.append(f"misclassified: {report.error_count} of {report.total}")
    if report.train_error_fraction is not None:
        lines.append(f"general network training error fraction: {_fmt(report.train_error_fraction)}")
    if report.notes:
        lines.append("notes:")
        lines.extend(f"  - {note}" for note in report.notes)
    return "\n".join(lines) + "\n"


def render(report: EvaluationReport, fmt: str = "text", dataset: str = "") -> str:
    if fmt == "text":
        return render_text(report, dataset)
    if fmt == "structured":
        return render_json(report, dataset)
    raise ValueError(f"unknown report format {fmt!r}")
