import json

import pytest

from latentood import io
from latentood.pipeline import RunConfig, StageError, run_pipeline, subseed


def test_config_json_roundtrip(tmp_path):
    cfg = RunConfig(out_dir=str(tmp_path), seed=3, steps=20)
    io.write_json(tmp_path / "c.json", cfg.to_dict())
    assert RunConfig.from_dict(io.read_json(tmp_path / "c.json")) == cfg


@pytest.mark.parametrize(
    "bad",
    [{"id_domain": "stripes"}, {"t_frac": 0.0}, {"n_bank": 5}, {"nonsense": 1}, {"schedule": {"kind": "linear", "T": 0}}],
)
def test_invalid_configs(bad):
    with pytest.raises((ValueError, TypeError, KeyError)):
        RunConfig.from_dict(bad)


def test_subseeds_are_stable_and_distinct():
    assert subseed(0, "train") == subseed(0, "train")
    assert len({subseed(0, n) for n in ("train", "init", "bank", "split")}) == 4
    assert subseed(0, "train") != subseed(1, "train")


def test_stage_failure_names_stage_and_keeps_artifacts(tmp_path):
    bad_model = tmp_path / "model_in.dnz"
    bad_model.write_bytes(b"DNZ1\xff\xff\xff\xff")
    cfg = RunConfig(out_dir=str(tmp_path / "out"), model_path=str(bad_model))
    with pytest.raises(StageError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "train"
    assert json.loads((tmp_path / "out" / "config.json").read_text())["model_path"] == str(bad_model)
