"""CSV writers for run logs, metric tables and ablation summaries."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

RUNLOG_VERSION = 1

RUNLOG_COLUMNS = (
    "version", "phase", "epoch", "lr", "train_loss", "val_loss_teacher", "val_loss_student",
    "mean_w_pseudo", "min_w_pseudo", "max_w_pseudo", "m_base", "m_effective", "gamma", "reset_flag",
    "chamfer_x100", "iou_pct", "fscore_pct", "nc",
)
METRICS_COLUMNS = ("sample", "chamfer_x100", "iou_pct", "fscore_pct", "nc", "empty_surface")
_PHASE_ORDER = {"warmup": 0, "semi": 1}


def format_value(value: Any) -> str:
    """Blank for missing, 0/1 for flags, shortest round-trip text for floats."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: format_value(row.get(c)) for c in columns})
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_runlog(path: str | Path, phase: str, rows: Sequence[Mapping[str, Any]]) -> Path:
    """Rewrite the run log, replacing any earlier rows of this phase."""
    path = Path(path)
    kept: list[dict[str, Any]] = []
    if path.exists():
        kept = [r for r in read_csv(path) if r.get("phase") != phase]
        if kept and kept[0].get("version") != str(RUNLOG_VERSION):
            kept = []
    fresh = [{"version": RUNLOG_VERSION, **row} for row in rows]
    merged = sorted([*kept, *fresh], key=lambda r: _PHASE_ORDER.get(r["phase"], len(_PHASE_ORDER)))
    return write_csv(path, RUNLOG_COLUMNS, merged)
