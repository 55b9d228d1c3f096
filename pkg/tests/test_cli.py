import json
import subprocess
import sys

import pytest

from hetnet.cli import main, resolve_config
from hetnet.errors import ConfigurationError


def test_set_overrides_file_overrides_preset(tmp_path):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"epochs": 7, "optimizer": {"max_lr": 0.05}}))
    cfg = resolve_config("desk", config_file=cfg_file, overrides=["epochs=3", "network.fusion_width=24"])
    assert cfg.epochs == 3 and cfg.optimizer.max_lr == 0.05 and cfg.network.fusion_width == 24


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="bogus"):
        resolve_config("desk", overrides=["optimizer.bogus=1"])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"network": {"wat": 1}}))
    with pytest.raises(ConfigurationError, match="network.wat"):
        resolve_config("desk", config_file=bad)


def test_exit_codes(tmp_path, capsys):
    assert main(["frobnicate"]) == 1
    assert main(["train"]) == 1  # full preset without a dataset root
    assert main(["train", "--preset", "desk", "--set", "optimizer.schedule=step"]) == 1
    assert main(["eval", str(tmp_path / "missing.pt")]) == 2


def test_train_eval_predict_round_trip(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth-data", str(data), "--n", "16", "--split", "train"]) == 0
    assert main(["synth-data", str(data), "--n", "4", "--seed", "9", "--split", "test"]) == 0
    run = tmp_path / "run"
    assert main(["train", "--preset", "desk", "--output-dir", str(run),
                 "--set", "data.synthetic=null", "--set", f"data.root={data}",
                 "--set", "epochs=1", "--set", "batch_size=8"]) == 0
    resolved = json.loads((run / "config.resolved").read_text())
    assert resolved["data"]["root"] == str(data) and resolved["epochs"] == 1
    ckpt = run / "checkpoints" / "final.pt"
    assert main(["eval", str(ckpt), "--data", str(data), "--split", "test"]) == 0
    assert "IoU" in capsys.readouterr().out
    assert (run / "logs" / "eval.csv").is_file()
    assert main(["predict", str(ckpt), str(data / "test" / "image")]) == 0
    assert len(list((run / "predictions").iterdir())) == 8


def test_predict_all_unreadable_is_runtime_failure(tmp_path):
    assert main(["train", "--preset", "desk", "--output-dir", str(tmp_path), "--set", "epochs=0"]) == 0
    src = tmp_path / "in"
    src.mkdir()
    (src / "x.png").write_bytes(b"junk")
    assert main(["predict", str(tmp_path / "checkpoints" / "init.pt"), str(src)]) == 2


def test_bench_prints_table_and_csv(capsys):
    assert main(["bench", "--scale", "tiny", "--input-size", "64", "--warmup", "1", "--iters", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-2] == "Para.,FLOPs,FPS,input"
    assert lines[-1].endswith(",64x64")


def test_describe(capsys):
    assert main(["describe", "--scale", "tiny", "--input-size", "64"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith("total")


def test_ingest(tmp_path, capsys):
    assert main(["synth-data", str(tmp_path / "a"), "--n", "2", "--size", "32"]) == 0
    assert main(["ingest", str(tmp_path / "a" / "train"), str(tmp_path / "b"), "--split", "test"]) == 0
    assert len(list((tmp_path / "b" / "test" / "image").iterdir())) == 2
    assert main(["ingest", str(tmp_path / "nowhere"), str(tmp_path / "c")]) == 1


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hetnet", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "predict", "bench", "ablate", "synth-data", "ingest", "describe"):
        assert cmd in proc.stdout
