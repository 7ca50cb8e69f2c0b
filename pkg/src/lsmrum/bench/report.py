"""Machine-readable reports: one JSON object, or CSV rows of (strategy, metric, value)."""

from __future__ import annotations

import csv
import io
import json
from typing import Dict, Iterable, List

from lsmrum.bench.runner import BenchReport

CSV_HEADER = ("strategy", "metric", "value")


def report_object(reports: Iterable[BenchReport]) -> Dict[str, dict]:
    out: Dict[str, dict] = {}
    for r in reports:
        d = r.to_dict()
        d.pop("strategy")
        out[r.strategy] = d
    return out


def to_json(reports: Iterable[BenchReport]) -> str:
    return json.dumps(report_object(reports), indent=2, sort_keys=True) + "\n"


def to_csv(reports: Iterable[BenchReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for strategy, metrics in report_object(reports).items():
        for name in sorted(metrics):
            value = metrics[name]
            # nested values are written as compact JSON so the cell round-trips
            if isinstance(value, (list, dict)) or value is None:
                value = json.dumps(value, sort_keys=True, separators=(",", ":"))
            w.writerow((strategy, name, value))
    return buf.getvalue()


def parse_csv(text: str) -> Dict[str, dict]:
    """Inverse of :func:`to_csv` (values come back as JSON-decoded scalars)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("not a report CSV")
    out: Dict[str, dict] = {}
    for strategy, metric, value in rows[1:]:
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        out.setdefault(strategy, {})[metric] = parsed
    return out


def render(reports: List[BenchReport], fmt: str) -> str:
    if fmt == "json":
        return to_json(reports)
    if fmt == "csv":
        return to_csv(reports)
    raise ValueError(f"unknown report format {fmt!r}")
