"""Across-seed summaries of metric files."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import MetricRecord, read_metrics

QUANTITIES = {
    "loss": ("train_loss",),
    "nfe": ("forward_nfe", "backward_nfe"),
    "grad_norm": ("grad_norms",),
    "adjoint_norm": ("adjoint_norms",),
    "eval_loss": ("eval_loss",),
    "eval_acc": ("eval_acc",),
    "beta_conn": ("beta_conn",),
}
REDUCERS = ("median", "mean")


class CompareError(ValueError):
    pass


@dataclass
class Comparison:
    quantity: str
    index_name: str
    columns: list[str]
    rows: list[tuple[float, list[float]]]

    def plot_data(self) -> str:
        lines = [" ".join([self.index_name] + self.columns)]
        for idx, vals in self.rows:
            lines.append(" ".join([_num(idx)] + [_num(v) for v in vals]))
        return "\n".join(lines) + "\n"

    def table(self, max_rows: int = 12) -> str:
        widths = [max(len(self.index_name), 6)] + [max(len(c), 10) for c in self.columns]
        head = "  ".join(c.rjust(w) for c, w in zip([self.index_name] + self.columns, widths))
        rows = self.rows
        if len(rows) > max_rows:
            stride = math.ceil(len(rows) / max_rows)
            rows = rows[::stride] + ([rows[-1]] if (len(rows) - 1) % stride else [])
        body = ["  ".join(_short(v).rjust(w) for v, w in zip([idx] + vals, widths)) for idx, vals in rows]
        return "\n".join([head] + body)


def _num(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return "%.17g" % v


def _short(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e9 else "%.4g" % v


def _reduce(values: Sequence[float], reducer: str) -> float:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    if not vals:
        return math.nan
    return float(np.median(vals) if reducer == "median" else np.mean(vals))


def load_runs(paths: Sequence) -> dict[str, dict[int, list[MetricRecord]]]:
    """model -> seed -> records, checking that every file shares one task."""
    runs: dict[str, dict[int, list[MetricRecord]]] = defaultdict(dict)
    tasks = set()
    for path in paths:
        path = Path(path)
        if path.is_dir():
            path = path / "metrics.tsv"
        recs = read_metrics(path)
        for r in recs:
            tasks.add(r.task)
            runs[r.model].setdefault(r.seed, []).append(r)
    if len(tasks) > 1:
        raise CompareError(f"mismatched tasks: {sorted(tasks)}")
    n_runs = sum(len(seeds) for seeds in runs.values())
    if n_runs < 2:
        raise CompareError(f"need ≥ 2 runs, got {n_runs}")
    return dict(runs)


def compare_runs(paths: Sequence, quantity: str = "loss", reducer: str = "median") -> Comparison:
    if quantity not in QUANTITIES:
        raise CompareError(f"quantity must be one of {sorted(QUANTITIES)}, got {quantity!r}")
    if reducer not in REDUCERS:
        raise CompareError(f"reducer must be one of {REDUCERS}")
    runs = load_runs(paths)
    models = sorted(runs)
    cols = QUANTITIES[quantity]
    if quantity in ("grad_norm", "adjoint_norm"):
        return _profile(runs, models, cols[0], quantity, reducer)
    steps = sorted({r.step for seeds in runs.values() for recs in seeds.values() for r in recs})
    table: dict[tuple[str, str], dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for model in models:
        for recs in runs[model].values():
            for r in recs:
                for c in cols:
                    value = getattr(r, c)
                    table[model, c][r.step].append(math.nan if value is None else float(value))
    columns = [f"{m}.{reducer}_{c}" for m in models for c in cols]
    rows = [(float(s), [_reduce(table[m, c].get(s, []), reducer) for m in models for c in cols])
            for s in steps]
    return Comparison(quantity, "step", columns, rows)


def _profile(runs, models, column, quantity, reducer) -> Comparison:
    """Per-timestep profile from the latest step that recorded one."""
    per_model = {}
    for model in models:
        profiles = []
        for recs in runs[model].values():
            tagged = [r for r in recs if getattr(r, column)]
            if tagged:
                profiles.append(getattr(max(tagged, key=lambda r: r.step), column))
        if not profiles:
            raise CompareError(f"model {model!r} has no recorded {column}")
        per_model[model] = profiles
    length = max(len(p) for ps in per_model.values() for p in ps)
    rows = []
    for t in range(length):
        vals = [_reduce([p[t] for p in per_model[m] if t < len(p)], reducer) for m in models]
        rows.append((float(t + 1), vals))
    return Comparison(quantity, "t", [f"{m}.{reducer}_{column}" for m in models], rows)


def write_plot_data(comparison: Comparison, path) -> None:
    Path(path).write_text(comparison.plot_data())
