import numpy as np
import pytest

from core.ablation import ABLATIONS, run_ablation
from core.config import load_run_config
from core.runlog import read_csv
from core.trainer import generate_dataset, load_training_samples, warmup_train

SEEDS = (0, 1, 2)


@pytest.mark.slow
def test_full_method_beats_warmup_and_baseline(tmp_path):
    full, baseline = [], []
    for seed in SEEDS:
        cfg = load_run_config(overrides={
            "seed": seed,
            "dataset": {"n": 2000, "labeled_fraction": 0.1},
            "output_dir": str(tmp_path / f"seed{seed}"),
        })
        generate_dataset(cfg)
        samples = load_training_samples(cfg)
        warm = warmup_train(cfg, samples).checkpoint
        rows = {r["name"]: r for r in run_ablation(cfg, warm, list(ABLATIONS), samples)}
        assert len(read_csv(cfg.out / "ablation.csv")) == len(ABLATIONS)
        full.append(rows["Dyn-ImpEMA-adaptive"])
        baseline.append(rows["Baseline"])

    def mean(rows, key):
        return float(np.mean([r[key] for r in rows]))

    assert mean(full, "chamfer_x100") <= 0.95 * mean(full, "start_chamfer_x100")
    assert mean(full, "chamfer_x100") <= mean(baseline, "chamfer_x100")
    assert mean(full, "iou_pct") >= mean(baseline, "iou_pct")


@pytest.mark.slow
def test_warmup_teacher_separates_inside_from_outside(tmp_path):
    cfg = load_run_config(overrides={"seed": 0, "dataset": {"n": 2000, "labeled_fraction": 0.1},
                                     "output_dir": str(tmp_path)})
    generate_dataset(cfg)
    rows = warmup_train(cfg, load_training_samples(cfg)).rows
    scored = [r for r in rows if r["iou_pct"] is not None]
    assert scored[-1]["iou_pct"] > 50.0, "warm-up teacher should recover most of each shape"
    assert rows[-1]["val_loss_teacher"] < rows[0]["val_loss_teacher"]
