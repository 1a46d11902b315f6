"""Comparison tables and plot data built from finished run directories."""

from __future__ import annotations

import json
import logging
import statistics
from collections import defaultdict
from pathlib import Path

from ..errors import ConfigError
from .runner import sample_std

log = logging.getLogger(__name__)

MISSING = "n/a"
PLOT_COLUMNS = ("method", "epoch", "metric", "mean", "std")
PLOT_METRICS = ("train_loss", "val_loss", "val_accuracy", "test_accuracy")


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{run_dir}: no summary.json; is this a finished run directory?") from None


def format_cell(mean, std) -> str:
    if mean is None:
        return MISSING
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def aggregate_report(run_dirs) -> dict:
    """Method × setting table.

    Returns ``{"settings": [...], "methods": [...], "cells": {method: {setting: str}},
    "warnings": [...]}``.  Cells show test accuracy in percent as ``mean ± std``;
    a method absent from a setting reads ``n/a``.
    """
    summaries = [load_summary(d) for d in run_dirs]
    settings, methods, warnings = [], [], []
    cells: dict = defaultdict(dict)
    for run_dir, s in zip(run_dirs, summaries):
        setting = s["setting"]
        if s.get("protocol_label") == "custom":
            setting = f"custom {setting}"
        if setting in settings:
            warnings.append(f"{run_dir}: setting {setting} already reported; keeping the first")
            continue
        settings.append(setting)
        for name, m in s["methods"].items():
            if name not in methods:
                methods.append(name)
            cell = format_cell(m["mean"], m["std"])
            if m["failed_seeds"] and m["mean"] is not None:
                cell += f" ({len(m['failed_seeds'])} failed)"
            cells[name][setting] = cell
    for name in methods:
        absent = [st for st in settings if st not in cells[name]]
        if absent:
            warnings.append(f"method {name} missing for setting(s) {', '.join(absent)}")
            for st in absent:
                cells[name][st] = MISSING
    for w in warnings:
        log.warning(w)
    return {"settings": settings, "methods": methods, "cells": dict(cells), "warnings": warnings}


def render_table(table: dict) -> str:
    header = ["method"] + table["settings"]
    rows = [[name] + [table["cells"][name][st] for st in table["settings"]] for name in table["methods"]]
    widths = [max(len(r[k]) for r in [header] + rows) for k in range(len(header))]
    line = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    out = [line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]
    return "\n".join(out) + "\n"


def emit_plot_data(run_dir, metrics=("test_accuracy",)) -> str:
    """Long-format, tab-separated table: one row per (method, epoch, metric).

    The first line names the columns: ``method epoch metric mean std``.
    ``mean`` and ``std`` (sample, n-1) are taken across seeds. An empty or
    missing metrics file yields just the header line.
    """
    for m in metrics:
        if m not in PLOT_METRICS:
            raise ConfigError(f"unknown metric {m!r}; choose from {PLOT_METRICS}")
    header = "\t".join(PLOT_COLUMNS) + "\n"
    path = Path(run_dir) / "metrics.jsonl"
    lines = path.read_text(encoding="utf-8").splitlines() if path.exists() else []
    if not lines:
        log.warning("%s: no metrics records; writing header only", run_dir)
        return header
    groups: dict = defaultdict(list)
    order: list = []
    for line in lines:
        rec = json.loads(line)
        for metric in metrics:
            key = (rec["method"], rec["epoch"], metric)
            if key not in groups:
                order.append(key)
            if rec.get(metric) is not None:
                groups[key].append(rec[metric])
    rows = [header]
    methods = list(dict.fromkeys(k[0] for k in order))
    for key in sorted(order, key=lambda k: (methods.index(k[0]), k[1], metrics.index(k[2]))):
        vals = groups[key]
        mean = repr(statistics.fmean(vals)) if vals else "nan"
        std = repr(sample_std(vals)) if vals else "nan"
        rows.append(f"{key[0]}\t{key[1]}\t{key[2]}\t{mean}\t{std}\n")
    return "".join(rows)
