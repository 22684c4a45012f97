import json
import os

import pytest

from blurf import synthdata as sd
from blurf import training as T
from blurf.cli import main


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    script = sd.moving_square(width=48, height=27, focal=40.0, frames=4)
    path = root / "script.json"
    path.write_text(json.dumps(script.to_dict()))
    assert main(["synth", "--script", str(path), "--out", str(root / "data")]) == 0
    cfg = T.compact_config(steps=400, batch=32, samples=12, width=32, dtype="float32",
                           checkpoint_every=0, weights={"decay_interval": 150})
    cfg.save(str(root / "config.json"))
    return root


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert "unknown command" in capsys.readouterr().err


def test_check_passes(tmp_path):
    assert main(["check", "--fast", "--out", str(tmp_path)]) == 0


def test_synth_writes_manifest_and_provenance(small_data):
    data = small_data / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["schema_version"] == 1 and len(manifest["frames"]) == 4
    run = json.loads((data / "run.json").read_text())
    assert {"config_hash", "seed", "git_describe", "wall_time_s", "command"} <= set(run)
    assert run["command"] == "synth"


def test_baseline_eval(small_data, tmp_path):
    assert main(["eval", "--data", str(small_data / "data"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "eval.json").read_text())
    assert rep["label"] == "blurry-input" and len(rep["psnr"]) == 4


@pytest.fixture(scope="module")
def trained(small_data):
    out = small_data / "run"
    assert main(["train", "--data", str(small_data / "data"), "--config",
                 str(small_data / "config.json"), "--out", str(out), "--deterministic"]) == 0
    return out


def _eval(data, ckpt, out):
    assert main(["eval", "--data", str(data), "--ckpt", str(ckpt), "--out", str(out),
                 "--samples", "32", "--deterministic"]) == 0
    return json.loads((out / "eval.json").read_text())


def test_trained_beats_untrained(small_data, trained, tmp_path):
    data = small_data / "data"
    before = _eval(data, trained / "ckpt_000000", tmp_path / "before")
    after = _eval(data, trained / "ckpt_000400", tmp_path / "after")
    assert after["mean_psnr"] > before["mean_psnr"]
    assert json.loads((trained / "run.json").read_text())["command"] == "train"


def test_eval_is_byte_identical(small_data, trained, tmp_path):
    data = small_data / "data"
    _eval(data, trained / "ckpt_000400", tmp_path / "a")
    _eval(data, trained / "ckpt_000400", tmp_path / "b")
    for name in sorted(os.listdir(tmp_path / "a")):
        if name == "run.json":
            continue
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_render_writes_png_and_pfm(small_data, trained, tmp_path):
    assert main(["render", "--data", str(small_data / "data"), "--ckpt",
                 str(trained / "ckpt_000400"), "--frame", "2", "--samples", "16",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "render_002.png").exists() and (tmp_path / "depth_002.pfm").exists()
