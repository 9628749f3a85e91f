"""Report files.

JSON documents carry the full nested report(s) plus a schema version and
parse back to equal objects.  CSV files are flat: one row per
``(graph_kind, model_kind, fold)`` for run reports and one row per grid cell
for sweeps.  Floats are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import json

from ..errors import FormatError, InvalidInputError, ReportIOError
from .experiment import REPORT_SCHEMA_VERSION, RunReport, SweepReport

RUN_CSV_COLUMNS = ("graph_kind", "model_kind", "fold", "accuracy", "member_mean_accuracy", "num_members")
SWEEP_CSV_COLUMNS = ("ensemble_size", "edge_drop_p", "accuracy", "baseline_accuracy", "fold")


def _normalize(report):
    if isinstance(report, SweepReport):
        return "sweep", [report]
    if isinstance(report, RunReport):
        return "run", [report]
    reports = list(report)
    if reports and all(isinstance(r, RunReport) for r in reports):
        return "table", reports
    raise InvalidInputError("expected a RunReport, a list of RunReports or a SweepReport")


def report_to_dict(report):
    kind, reports = _normalize(report)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": kind,
        "reports": [r.to_dict() for r in reports],
    }


def report_from_dict(doc):
    if not isinstance(doc, dict) or doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise FormatError("unsupported or missing report schema_version")
    kind = doc.get("kind")
    try:
        if kind == "sweep":
            return SweepReport.from_dict(doc["reports"][0])
        reports = [RunReport.from_dict(r) for r in doc["reports"]]
    except (KeyError, IndexError, TypeError) as exc:
        raise FormatError(f"malformed report document: {exc}") from exc
    if kind == "run":
        return reports[0]
    if kind == "table":
        return reports
    raise FormatError(f"unknown report kind {kind!r}")


def _csv_rows(report):
    kind, reports = _normalize(report)
    if kind == "sweep":
        sweep = reports[0]
        return SWEEP_CSV_COLUMNS, [
            (size, repr(p), repr(acc), repr(sweep.baseline_accuracy), sweep.fold)
            for size, p, acc in sweep.cells()
        ]
    rows = []
    for r in reports:
        for fold, (acc, members) in enumerate(zip(r.fold_accuracies, r.member_accuracies)):
            rows.append((r.graph_kind, r.model_kind, fold, repr(float(acc)),
                         repr(float(sum(members) / len(members))), len(members)))
    return RUN_CSV_COLUMNS, rows


def write_report(report, path, format="json"):
    """Write ``report`` (run, table or sweep) as ``json`` or ``csv``."""
    if format not in ("json", "csv"):
        raise InvalidInputError(f"format must be 'json' or 'csv', got {format!r}")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if format == "json":
                json.dump(report_to_dict(report), fh, indent=2)
                fh.write("\n")
            else:
                header, rows = _csv_rows(report)
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(rows)
    except OSError as exc:
        raise ReportIOError(f"cannot write report {path}: {exc}", path=path) from exc


def read_report(path):
    """Read a JSON report written by :func:`write_report`."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ReportIOError(f"cannot read report {path}: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON") from exc
    return report_from_dict(doc)
