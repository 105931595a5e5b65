import json
import subprocess
import sys

import numpy as np
import pytest

from tubekit.cli import main
from tubekit.io import read_tensor, read_tubes, write_tensor

SMALL = ["--width", "96", "--height", "96", "--c", "3", "--k", "3", "--num-videos", "2",
         "--log-level", "WARNING"]


@pytest.fixture
def scene(tmp_path):
    path = tmp_path / "scene.json"
    path.write_text(json.dumps({"num_frames": 10, "box_size": [16, 40], "min_separation": 32}))
    return str(path)


@pytest.fixture
def synth_dir(tmp_path, scene):
    out = tmp_path / "synth"
    assert main(["synth", "--out", str(out), "--scene", scene, *SMALL]) == 0
    return out


def cfg_args(synth_dir):
    return ["--config", str(synth_dir / "config.json"), "--log-level", "WARNING"]


def test_synth_writes_annotations_maps_and_config(synth_dir):
    ann = synth_dir / "video_0000" / "annotations.json"
    doc = json.loads(ann.read_text())
    assert doc["W"] == 96 and doc["num_frames"] == 10
    heat = read_tensor(synth_dir / "video_0000" / "maps" / "w00000_heatmap.moct")
    sizes = read_tensor(synth_dir / "video_0000" / "maps" / "w00000_sizes.moct")
    assert heat.shape == (24, 24, 3) and sizes.shape == (3, 24, 24, 2)
    assert json.loads((synth_dir / "config.json").read_text())["K"] == 3


def test_full_chain_and_stream_match(synth_dir, tmp_path, capsys):
    c = cfg_args(synth_dir)
    maps = str(synth_dir / "video_0000" / "maps")
    ann = str(synth_dir / "video_0000" / "annotations.json")
    assert main(["decode", *c, "--maps", maps, "--out", str(tmp_path / "t.jsonl")]) == 0
    assert main(["link", *c, "--tubelets", str(tmp_path / "t.jsonl"), "--video-id", "video_0000",
                 "--out", str(tmp_path / "tubes.json")]) == 0
    assert main(["stream", *c, "--annotations", ann, "--maps", maps,
                 "--out", str(tmp_path / "stream.json")]) == 0
    assert (tmp_path / "tubes.json").read_bytes() == (tmp_path / "stream.json").read_bytes()
    assert main(["eval", *c, "--tubes", str(tmp_path / "tubes.json"), "--annotations", ann,
                 "--errors", "--out", str(tmp_path / "m.json")]) == 0
    metrics = json.loads((tmp_path / "m.json").read_text())
    assert metrics["video_mAP"]["@0.5"] == 1.0 and metrics["schema_version"] == 1
    assert "video-mAP@0.5" in capsys.readouterr().out


def test_decode_single_window(synth_dir, tmp_path):
    m = synth_dir / "video_0000" / "maps"
    assert main(["decode", *cfg_args(synth_dir), "--heatmap-file", str(m / "w00002_heatmap.moct"),
                 "--movement-file", str(m / "w00002_movement.moct"),
                 "--sizes-file", str(m / "w00002_sizes.moct"), "--start", "2",
                 "--out", str(tmp_path / "one.jsonl")]) == 0
    first = json.loads((tmp_path / "one.jsonl").read_text().splitlines()[0])
    assert first["start_frame"] == 2 and first["score"] == 1.0


def test_encode_outputs(synth_dir, tmp_path):
    ann = str(synth_dir / "video_0001" / "annotations.json")
    assert main(["encode", *cfg_args(synth_dir), "--annotations", ann, "--start", "1",
                 "--out", str(tmp_path / "enc")]) == 0
    side = json.loads((tmp_path / "enc" / "w00001_targets.json").read_text())
    assert side["n"] == 2 and len(side["movement_targets"][0]["m"]) == 6
    assert read_tensor(tmp_path / "enc" / "w00001_center.moct").max() == 1.0


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--log-level", "WARNING", "--out", str(tmp_path / "g.json")]) == 0
    out = capsys.readouterr().out
    assert out.count(" ok") == 3
    assert all(r["max_rel_error"] < 1e-4 for r in json.loads((tmp_path / "g.json").read_text())["results"])


def test_overlay_writes_pngs(synth_dir, tmp_path):
    ann = str(synth_dir / "video_0000" / "annotations.json")
    assert main(["overlay", "--log-level", "WARNING", "--annotations", ann, "--frames", "0,4",
                 "--out", str(tmp_path / "png")]) == 0
    files = sorted(p.name for p in (tmp_path / "png").iterdir())
    assert files == ["frame_00000.png", "frame_00004.png"]
    assert (tmp_path / "png" / "frame_00000.png").read_bytes()[:4] == b"\x89PNG"


def test_exit_codes(synth_dir, tmp_path):
    c = cfg_args(synth_dir)
    ann = str(synth_dir / "video_0000" / "annotations.json")
    with pytest.raises(SystemExit) as exc:
        main(["pipeline", "--no-such-flag"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.moct"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert main(["decode", *c, "--heatmap-file", str(bad), "--movement-file", str(bad),
                 "--sizes-file", str(bad), "--out", str(tmp_path / "x.jsonl")]) == 3
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["eval", *c, "--tubes", str(tmp_path / "broken.json"), "--annotations", ann]) == 3
    assert main(["pipeline", "--config", str(tmp_path / "missing.json")]) == 3
    # 96x96 annotations against an explicit 128x128 config
    assert main(["encode", "--log-level", "WARNING", "--width", "128", "--height", "128",
                 "--annotations", ann, "--out", str(tmp_path / "e")]) == 4
    small = tmp_path / "small.moct"
    write_tensor(np.zeros((4, 4, 3), np.float32), small)
    assert main(["decode", *c, "--heatmap-file", str(small), "--movement-file", str(small),
                 "--sizes-file", str(small), "--out", str(tmp_path / "x.jsonl")]) == 4
    assert main(["pipeline", "--log-level", "WARNING", "--width", "30"]) == 4


def test_flags_override_config_and_env(tmp_path, monkeypatch, caplog, scene):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"K": 3, "W": 96, "H": 96, "C": 3, "num_videos": 1, "seed": 5}))
    monkeypatch.setenv("TUBEKIT_CONFIG", str(cfg))
    caplog.set_level("INFO")
    assert main(["pipeline", "--scene", scene, "--seed", "6", "--out", str(tmp_path / "p")]) == 0
    resolved = json.loads((tmp_path / "p" / "config.json").read_text())
    assert resolved["seed"] == 6 and resolved["K"] == 3 and resolved["key_index"] == 1
    assert "resolved config" in caplog.text


def test_even_k_warns(tmp_path, caplog, scene):
    assert main(["pipeline", "--scene", scene, "--log-level", "INFO", *SMALL[:6],
                 "--k", "4", "--num-videos", "1"]) == 0
    assert "K=4 is even" in caplog.text


def test_defaults_match_reference_settings():
    from tubekit.pipeline import RunConfig
    cfg = RunConfig()
    assert (cfg.K, cfg.R, cfg.N, cfg.a, cfg.b, cfg.alpha, cfg.beta, cfg.tau, cfg.mode) == (
        7, 4, 100, 1.0, 0.1, 2.0, 4.0, 0.5, "full_movement")


def test_pipeline_rerun_from_echoed_config(tmp_path, scene):
    args = ["pipeline", "--scene", scene, *SMALL, "--noise", "0.1", "0.3", "0.5",
            "--footprint", "box", "--out"]
    assert main([*args, str(tmp_path / "a")]) == 0
    assert main(["pipeline", "--log-level", "WARNING", "--config",
                 str(tmp_path / "a" / "config.json"), "--out", str(tmp_path / "b")]) == 0
    for name in ("config.json", "metrics.json", "tubes.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_console_script_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tubekit.cli", "gradcheck", "--cells", "100",
                           "--log-level", "WARNING"], capture_output=True, text=True)
    assert proc.returncode == 0 and "movement" in proc.stdout
