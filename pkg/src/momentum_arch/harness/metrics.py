"""Tab-separated metric records with a fixed header per model family.

Wall-clock time is kept out of the metric file (it would break
byte-for-byte reproducibility) and written to a ``timing.tsv`` sidecar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

BASE_COLUMNS = ("run_id", "task", "model", "seed", "step", "train_loss", "eval_loss", "eval_acc")
FAMILY_COLUMNS = {
    "ode": ("forward_nfe", "backward_nfe", "adjoint_norms"),
    "rnn": ("grad_norms",),
    "transformer": ("beta_conn",),
}
METRICS_FILE = "metrics.tsv"
TIMING_FILE = "timing.tsv"
MANIFEST_FILE = "manifest.txt"


def columns_for(family: str) -> tuple[str, ...]:
    return BASE_COLUMNS + FAMILY_COLUMNS[family]


@dataclass
class MetricRecord:
    run_id: str
    task: str
    model: str
    seed: int
    step: int
    train_loss: float
    eval_loss: float = math.nan
    eval_acc: float = math.nan
    forward_nfe: float | None = None
    backward_nfe: float | None = None
    grad_norms: list[float] = field(default_factory=list)
    adjoint_norms: list[float] = field(default_factory=list)
    beta_conn: float | None = None


def _fmt(value) -> str:
    if isinstance(value, list):
        return ";".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def format_record(rec: MetricRecord, family: str) -> str:
    return "\t".join(_fmt(getattr(rec, c)) for c in columns_for(family))


def write_metrics(path, records: Iterable[MetricRecord], family: str) -> None:
    lines = ["\t".join(columns_for(family))]
    lines.extend(format_record(r, family) for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_value(column: str, text: str):
    if column in ("run_id", "task", "model"):
        return text
    if column in ("seed", "step"):
        return int(text)
    if column in ("grad_norms", "adjoint_norms"):
        return [float(v) for v in text.split(";")] if text else []
    return float(text)


def read_metrics(path) -> list[MetricRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty metrics file")
    header = lines[0].split("\t")
    if tuple(header[: len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise ValueError(f"{path}: not a metrics file (header {header[:3]}...)")
    out = []
    for lineno, line in enumerate(lines[1:], 2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        out.append(MetricRecord(**{c: _parse_value(c, v) for c, v in zip(header, cells)}))
    return out


def write_timing(path, rows: Iterable[tuple[int, int, float]]) -> None:
    lines = ["seed\tstep\twall_clock"] + ["%d\t%d\t%.6f" % r for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
