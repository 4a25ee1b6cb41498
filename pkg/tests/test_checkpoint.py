import numpy as np
import pytest

from core.checkpoint import load_checkpoint, make_checkpoint, save_checkpoint
from core.errors import ConfigurationError
from core.nnet import init_network


def _ckpt(spec, values=None):
    params = init_network(spec)
    if values is not None:
        params = params.replace(values)
    return make_checkpoint(params, spec, phase="warmup", epoch=3, seed=spec.seed, feature_cells=4)


def test_round_trip_is_exact(small_spec, rng, tmp_path):
    values = rng.normal(size=small_spec.total_len) * 10.0 ** rng.integers(-8, 8, small_spec.total_len)
    ckpt = _ckpt(small_spec, values)
    loaded = load_checkpoint(save_checkpoint(tmp_path / "a" / "t.ckpt", ckpt))
    assert np.array_equal(loaded.params().values, values), "checkpoint values must round-trip bit-exactly"
    assert loaded.spec == small_spec
    assert (loaded.meta.phase, loaded.meta.epoch, loaded.meta.seed) == ("warmup", 3, small_spec.seed)


def test_save_is_byte_stable(small_spec, tmp_path):
    a = save_checkpoint(tmp_path / "a.ckpt", _ckpt(small_spec))
    b = save_checkpoint(tmp_path / "b.ckpt", _ckpt(small_spec))
    assert a.read_bytes() == b.read_bytes()


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "none.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_text('{"spec": 1}')
    with pytest.raises(ConfigurationError):
        load_checkpoint(bad)


def test_foreign_format_rejected(small_spec, tmp_path):
    path = save_checkpoint(tmp_path / "t.ckpt", _ckpt(small_spec).model_copy(update={"format": "other/9"}))
    with pytest.raises(ConfigurationError):
        load_checkpoint(path)


def test_value_count_must_match_spec(small_spec):
    ckpt = _ckpt(small_spec).model_copy(update={"values": [0.0, 1.0]})
    with pytest.raises(ConfigurationError):
        ckpt.params()
