import json
import math
from pathlib import Path

import pytest

import core.config as config
from core.config import PRESETS, PhaseConfig, load_run_config
from core.errors import ConfigurationError


def test_toy_preset_defaults():
    cfg = load_run_config()
    assert (cfg.warmup.epochs, cfg.warmup.batch_size) == (200, 16)
    assert cfg.network.feature_cells == 4 and not cfg.options.ema_per_step
    assert cfg.semi.epochs == 100
    assert cfg.ablation_epochs == 25
    assert cfg.importance.n_batches == 20
    assert cfg.weight_params.lam == 0.2
    assert cfg.ema_config.m0 == 0.996


def test_paper_scale_preset():
    cfg = load_run_config(preset="paper-scale")
    assert (cfg.warmup.epochs, cfg.warmup.batch_size) == (400, 32)
    assert (cfg.semi.epochs, cfg.semi.batch_size) == (200, 160)
    assert cfg.importance.n_batches == 100
    assert cfg.ablation_epochs == 50
    assert set(PRESETS) == {"toy", "paper-scale"}


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        load_run_config(preset="huge")


def test_decay_epochs_validated():
    with pytest.raises(ConfigurationError):
        load_run_config(overrides={"warmup": {"decay_epochs": [5, 5]}})
    with pytest.raises(ConfigurationError):
        load_run_config(overrides={"semi": {"epochs": 10, "decay_epochs": [11]}})
    with pytest.raises(ConfigurationError):
        load_run_config(overrides={"semi": {"decay_epochs": [0]}})


def test_lr_schedule():
    phase = PhaseConfig(epochs=10, batch_size=4, lr=0.1, decay_epochs=(3, 7))
    lrs = [phase.lr_at(e) for e in range(1, 11)]
    assert lrs[:2] == [0.1, 0.1]
    assert lrs[2:6] == [pytest.approx(0.01)] * 4
    assert lrs[6:] == [pytest.approx(0.001)] * 4


def test_with_epochs_drops_late_milestones():
    phase = PhaseConfig(epochs=100, batch_size=4, lr=0.1, decay_epochs=(85, 95))
    assert phase.with_epochs(90).decay_epochs == (85,)
    assert phase.with_epochs(0).decay_epochs == ()


def test_config_file_layers_over_preset(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 7, "semi": {"epochs": 12, "decay_epochs": [10]},
                                "weight_params": {"lambda": 0.4}}))
    cfg = load_run_config(path, overrides={"seed": 9})
    assert cfg.seed == 9, "explicit overrides win over the file"
    assert cfg.semi.epochs == 12 and cfg.semi.batch_size == 64
    assert cfg.weight_params.lam == 0.4


def test_bad_config_files(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_run_config(bad)


def test_with_updates_revalidates_and_keeps_infinity(cfg):
    disabled = cfg.with_updates(ema_config={"delta": -math.inf})
    again = disabled.with_updates(seed=4)
    assert again.ema_config.delta == -math.inf
    assert again.seed == 4
    with pytest.raises(ConfigurationError):
        cfg.with_updates(options={"weighting": "sometimes"})


def test_with_phase_epochs(cfg):
    assert cfg.with_phase_epochs("warmup", 1).warmup.decay_epochs == ()
    assert cfg.with_phase_epochs("ablation", 4).ablation_epochs == 4
    with pytest.raises(ConfigurationError):
        cfg.with_phase_epochs("finetune", 3)
    with pytest.raises(ConfigurationError):
        cfg.with_phase_epochs("semi", -1)


def test_dataset_path_defaults_to_output_dir(cfg, monkeypatch):
    monkeypatch.setattr(config, "SDF_DATASET", None)
    assert cfg.dataset_path == Path(cfg.output_dir) / "dataset.npz"
    assert cfg.with_updates(dataset={"path": "elsewhere.npz"}).dataset_path == Path("elsewhere.npz")


def test_network_spec_from_config(cfg):
    spec = cfg.spec()
    assert spec.layer_sizes == (3 * 4 * 4 + 25 + 2, 8, 1), "pooled cells, stencil samples, point"
    assert spec.activations == ("tanh", "identity")
    assert spec.seed == cfg.seed
