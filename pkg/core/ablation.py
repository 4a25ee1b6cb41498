"""Experiment suites: the component ablation and the labeled-fraction sweep."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal, Sequence

from pydantic import BaseModel, ConfigDict

from core.checkpoint import Checkpoint
from core.config import RunConfig
from core.data import Sample
from core.errors import ConfigurationError
from core.runlog import write_csv
from core.trainer import generate_dataset, load_training_samples, semi_train, warmup_train

logger = logging.getLogger(__name__)


class AblationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    ema_enabled: bool
    ema_mode: Literal["fixed", "dynamic"] = "fixed"
    importance_reg: bool = False
    weighting: Literal["none", "fixed", "adaptive"] = "none"
    fixed_weight: float | None = None

    @property
    def weighting_label(self) -> str:
        if self.weighting == "fixed":
            return f"fixed {self.fixed_weight}"
        return self.weighting

    def apply(self, cfg: RunConfig, output_dir: Path) -> RunConfig:
        """Run config for this row: its component switches, the ablation budget, its own output directory."""
        options = {"ema_enabled": self.ema_enabled, "weighting": self.weighting}
        if self.fixed_weight is not None:
            options["fixed_weight"] = self.fixed_weight
        cfg = cfg.with_phase_epochs("semi", cfg.ablation_epochs)
        return cfg.with_updates(
            options=options,
            ema_config={"use_dynamic": self.ema_mode == "dynamic", "use_importance": self.importance_reg},
            output_dir=str(output_dir),
        )


ABLATIONS: dict[str, AblationConfig] = {c.name: c for c in (
    AblationConfig(name="Baseline", ema_enabled=False),
    AblationConfig(name="EMA-fixed-1", ema_enabled=True, weighting="fixed", fixed_weight=0.5),
    AblationConfig(name="EMA-fixed-2", ema_enabled=True, weighting="fixed", fixed_weight=0.2),
    AblationConfig(name="ImpEMA-fixed", ema_enabled=True, importance_reg=True, weighting="fixed", fixed_weight=0.2),
    AblationConfig(name="Dyn-ImpEMA-fixed", ema_enabled=True, ema_mode="dynamic", importance_reg=True,
                   weighting="fixed", fixed_weight=0.2),
    AblationConfig(name="Dyn-ImpEMA-adaptive", ema_enabled=True, ema_mode="dynamic", importance_reg=True,
                   weighting="adaptive"),
)}

ABLATION_COLUMNS = (
    "name", "ema", "importance_reg", "weighting", "epochs",
    "start_chamfer_x100", "start_iou_pct", "start_fscore_pct", "start_nc",
    "chamfer_x100", "iou_pct", "fscore_pct", "nc", "best_epoch", "final_chamfer_x100", "final_iou_pct",
    "chamfer_gain_pct", "iou_gain_pct",
)


def get_ablation(name: str) -> AblationConfig:
    try:
        return ABLATIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown ablation {name!r}; choose from {list(ABLATIONS)}") from None


def _gain(start: float, end: float, lower_is_better: bool) -> float | None:
    if start == 0:
        return None
    change = (start - end) if lower_is_better else (end - start)
    return 100.0 * change / abs(start)


def run_ablation(cfg: RunConfig, teacher_ckpt: Checkpoint, suite: Sequence[AblationConfig | str],
                 samples: Sequence[Sample] | None = None) -> list[dict]:
    """One row per configuration, all from the same warm-up teacher and seed; writes ablation.csv."""
    configs = [get_ablation(c) if isinstance(c, str) else c for c in suite]
    if not configs:
        raise ConfigurationError("ablation suite is empty")
    samples = load_training_samples(cfg) if samples is None else list(samples)
    rows = []
    for ab in configs:
        logger.info(f"Ablation {ab.name}: {cfg.ablation_epochs} epochs")
        row_cfg = ab.apply(cfg, cfg.out / "ablation" / ab.name)
        result = semi_train(row_cfg, teacher_ckpt, samples)
        start = result.rows[0]
        best = next(r for r in result.rows if r["epoch"] == result.best_epoch)
        rows.append({
            "name": ab.name,
            "ema": "no" if not ab.ema_enabled else ("dynamic" if ab.ema_mode == "dynamic" else f"fixed {cfg.ema_config.m0}"),
            "importance_reg": ab.importance_reg,
            "weighting": ab.weighting_label,
            "epochs": cfg.ablation_epochs,
            "start_chamfer_x100": start["chamfer_x100"],
            "start_iou_pct": start["iou_pct"],
            "start_fscore_pct": start["fscore_pct"],
            "start_nc": start["nc"],
            "chamfer_x100": best["chamfer_x100"],
            "iou_pct": best["iou_pct"],
            "fscore_pct": best["fscore_pct"],
            "nc": best["nc"],
            "best_epoch": result.best_epoch,
            "final_chamfer_x100": result.rows[-1]["chamfer_x100"],
            "final_iou_pct": result.rows[-1]["iou_pct"],
            "chamfer_gain_pct": _gain(start["chamfer_x100"], best["chamfer_x100"], lower_is_better=True),
            "iou_gain_pct": _gain(start["iou_pct"], best["iou_pct"], lower_is_better=False),
        })
    write_csv(cfg.out / "ablation.csv", ABLATION_COLUMNS, rows)
    return rows


SWEEP_COLUMNS = (
    "labeled_fraction", "n_labeled", "warmup_chamfer_x100", "warmup_iou_pct",
    "semi_chamfer_x100", "semi_iou_pct", "chamfer_gain_pct", "iou_gain_pct",
)


def run_sweep(cfg: RunConfig, fractions: Sequence[float]) -> list[dict]:
    """gen-data, warm-up and semi-supervised training per labeled fraction; writes sweep.csv."""
    if not fractions:
        raise ConfigurationError("sweep needs at least one labeled fraction")
    rows = []
    for fraction in fractions:
        out = cfg.out / "sweep" / f"frac_{fraction:g}"
        frac_cfg = cfg.with_updates(
            dataset={"labeled_fraction": fraction, "path": str(out / "dataset.npz")},
            output_dir=str(out),
        )
        generate_dataset(frac_cfg)
        samples = load_training_samples(frac_cfg)
        warm = warmup_train(frac_cfg, samples)
        semi = semi_train(frac_cfg, warm.checkpoint, samples)
        start = semi.rows[0]
        best = next(r for r in semi.rows if r["epoch"] == semi.best_epoch)
        rows.append({
            "labeled_fraction": fraction,
            "n_labeled": sum(s.labeled for s in samples),
            "warmup_chamfer_x100": start["chamfer_x100"],
            "warmup_iou_pct": start["iou_pct"],
            "semi_chamfer_x100": best["chamfer_x100"],
            "semi_iou_pct": best["iou_pct"],
            "chamfer_gain_pct": _gain(start["chamfer_x100"], best["chamfer_x100"], lower_is_better=True),
            "iou_gain_pct": _gain(start["iou_pct"], best["iou_pct"], lower_is_better=False),
        })
        logger.info(f"Sweep fraction {fraction:g}: chamfer x100 {start['chamfer_x100']:.4f} -> {best['chamfer_x100']:.4f}")
    write_csv(cfg.out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows
