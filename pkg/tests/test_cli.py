import json

import numpy as np
import pytest

from latentood import io
from latentood.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, build_parser, main


def test_parser_exposes_subcommands():
    parser = build_parser()
    for cmd in ("train", "invert", "reconstruct", "geometry", "separability", "sample", "evaluate", "pipeline"):
        assert parser.parse_args([cmd] + {"invert": ["--model", "m"], "reconstruct": ["--model", "m"], "geometry": ["--bank", "b"],
                                           "separability": ["--bank-a", "a", "--bank-b", "b"], "sample": ["--model", "m", "--bank", "b"],
                                           "evaluate": ["--images", "i"]}.get(cmd, [])).command == cmd


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["geometry", "--config", str(bad), "--bank", "x", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"colour": "red"}))
    assert main(["geometry", "--config", str(unknown), "--bank", "x", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["geometry", "--bank", str(tmp_path / "missing.ldt"), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["pipeline", "--t-frac", "1.5", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_stage_failure_exit_3(tmp_path):
    (tmp_path / "m.dnz").write_bytes(b"garbage")
    assert main(["reconstruct", "--model", str(tmp_path / "m.dnz"), "--out-dir", str(tmp_path)]) == EXIT_STAGE


def test_geometry_and_separability_commands(tmp_path, capsys):
    rng = np.random.default_rng(0)
    io.save_tensor(tmp_path / "a.ldt", rng.standard_normal((60, 32)).astype(np.float32))
    io.save_tensor(tmp_path / "b.ldt", (rng.standard_normal((60, 32)) + 3).astype(np.float32))
    assert main(["geometry", "--bank", str(tmp_path / "a.ldt"), "--ref-bank", str(tmp_path / "b.ldt"), "--out-dir", str(tmp_path)]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["d"] == 32 and rep["center_distance"] > 10
    assert main(["separability", "--bank-a", str(tmp_path / "a.ldt"), "--bank-b", str(tmp_path / "b.ldt"), "--out-dir", str(tmp_path)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["test_accuracy"] == 1.0
    assert (tmp_path / "linear.lsv").exists()


@pytest.mark.slow
def test_model_commands(toy_run, tmp_path, capsys):
    model = str(toy_run["dir"] / "model.dnz")
    out = ["--out-dir", str(tmp_path), "--steps", "20"]
    assert main(["reconstruct", "--model", model, "--count", "8", *out]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["mae"] < 0.2
    assert main(["invert", "--model", model, "--domain", "stripes", "--count", "40", *out]) == EXIT_OK
    capsys.readouterr()
    bank = str(tmp_path / "bank_stripes.ldt")
    assert main(["sample", "--model", model, "--bank", bank, "--n", "3", "--omega-d", "0.5", "--omega-a", "10", "--max-attempts", "100", *out]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert res["accepted"] + res["shortfall"] == 3
    assert len(io.read_json(tmp_path / "provenance.json")) == 3
    assert main(["evaluate", "--images", str(tmp_path / "generated.ldt"), "--classifier", str(toy_run["dir"] / "pixel_clf.lsv"), "--out-dir", str(tmp_path)]) == EXIT_OK
    ev = json.loads(capsys.readouterr().out)
    assert 0.0 <= ev["interference_rate"] <= 1.0
