import hashlib
import json
from importlib import resources
from pathlib import Path

import pytest

from lamlstm.cli import main
from lamlstm.inference import ScoreSeries, write_scores_csv

BUNDLED = resources.files("lamlstm") / "configs" / "synthetic.json"


def digests(root: Path):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def config(tmp_path):
    cfg = json.loads(BUNDLED.read_text())
    cfg["data"]["n_tracks"] = 20
    cfg["train"]["epochs"] = 2
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def staged(tmp_path, config):
    """Run gen -> train -> predict (both streams) -> fuse and return the paths."""
    d = tmp_path / "run"
    assert main(["gen", "--config", str(config), "--out", str(d / "data")]) == 0
    m = d / "data" / "manifest.jsonl"
    assert main(["train", "--config", str(config), "--data", str(m), "--out", str(d / "m.lamc")]) == 0
    assert main(["predict", "--ckpt", str(d / "m.lamc"), "--data", str(m), "--out", str(d / "r.csv")]) == 0
    assert main(["predict", "--ckpt", str(d / "m.lamc"), "--data", str(m), "--flip",
                 "--out", str(d / "rf.csv")]) == 0
    assert main(["fuse", "--orig", str(d / "r.csv"), "--flip", str(d / "rf.csv"), "--out", str(d / "s.csv")]) == 0
    return d, m


def test_stages_end_to_end(staged, capsys):
    d, m = staged
    assert (d / "m.lamc.history.json").exists()
    assert main(["smooth", "--in", str(d / "s.csv"), "--window", "5", "--out", str(d / "ss.csv")]) == 0
    assert main(["ensemble", "--in", str(d / "s.csv"), str(d / "ss.csv"), "--out", str(d / "e.csv")]) == 0
    assert main(["eval", "--scores", str(d / "e.csv"), "--data", str(m), "--out", str(d / "metrics.json")]) == 0
    metrics = json.loads((d / "metrics.json").read_text())
    assert set(metrics) == {"mAP", "accuracy", "n_frames", "n_positives"}
    assert 0 <= metrics["mAP"] <= 1 and 0 <= metrics["accuracy"] <= 1
    assert '"mAP"' in capsys.readouterr().out


def test_smooth_window_one_is_identity(staged):
    d, _ = staged
    assert main(["smooth", "--in", str(d / "s.csv"), "--window", "1", "--out", str(d / "same.csv")]) == 0
    assert (d / "same.csv").read_bytes() == (d / "s.csv").read_bytes()


def test_smooth_even_window_fails(staged, capsys):
    d, _ = staged
    assert main(["smooth", "--in", str(d / "s.csv"), "--window", "4", "--out", str(d / "x.csv")]) != 0
    assert "odd" in capsys.readouterr().err


def test_eval_names_missing_track(tmp_path, staged, capsys):
    d, m = staged
    write_scores_csv([ScoreSeries("ghost", [0.5, 0.5])], tmp_path / "ghost.csv")
    rc = main(["eval", "--scores", str(tmp_path / "ghost.csv"), "--data", str(m), "--out", str(tmp_path / "x.json")])
    assert rc != 0
    assert "ghost" in capsys.readouterr().err


def test_fuse_rejects_mismatched_tracks(tmp_path, staged):
    d, _ = staged
    (tmp_path / "one.csv").write_text("track_id,frame,logit0,logit1\nzzz,0,0.0,0.0\n")
    assert main(["fuse", "--orig", str(d / "r.csv"), "--flip", str(tmp_path / "one.csv"),
                 "--out", str(tmp_path / "x.csv")]) != 0


def test_stages_do_not_mutate_inputs(staged):
    d, m = staged
    before = digests(d)
    main(["smooth", "--in", str(d / "s.csv"), "--window", "3", "--out", str(d.parent / "o1.csv")])
    main(["eval", "--scores", str(d / "s.csv"), "--data", str(m), "--out", str(d.parent / "o2.json")])
    main(["predict", "--ckpt", str(d / "m.lamc"), "--data", str(m), "--out", str(d.parent / "o3.csv")])
    assert digests(d) == before


def test_pipeline_byte_identical_reruns(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "--config", str(config), "--out", str(a), "--workers", "1"]) == 0
    assert main(["pipeline", "--config", str(config), "--out", str(b), "--workers", "1"]) == 0
    da, db = digests(a), digests(b)
    assert da == db
    for name in ("model.lamc", "scores_final.csv", "metrics.json", "metrics_unsmoothed.json"):
        assert name in da


def test_lam_seed_env_overrides(tmp_path, config, monkeypatch):
    main(["gen", "--config", str(config), "--out", str(tmp_path / "s0")])
    monkeypatch.setenv("LAM_SEED", "5")
    main(["gen", "--config", str(config), "--out", str(tmp_path / "s5")])
    main(["gen", "--config", str(config), "--out", str(tmp_path / "s5b")])
    assert digests(tmp_path / "s5") == digests(tmp_path / "s5b")
    assert digests(tmp_path / "s0") != digests(tmp_path / "s5")


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"data": {"n_trakcs": 3}}')
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert "n_trakcs" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")]) != 0


def test_unknown_flag_exits_nonzero(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["smooth", "--in", "x.csv", "--window", "3", "--out", "y.csv", "--bogus"])
    assert exc.value.code != 0


def test_missing_file_is_reported(tmp_path, capsys):
    assert main(["smooth", "--in", str(tmp_path / "nope.csv"), "--window", "3",
                 "--out", str(tmp_path / "y.csv")]) != 0
    assert "nope.csv" in capsys.readouterr().err


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "lamlstm", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "pipeline" in out.stdout
