import json
import shutil
import subprocess
from dataclasses import replace

import numpy as np
import pytest

from conftest import small_config
from hairctl.cli import main
from hairctl.io import canonical_scenario, read_png
from hairctl.physics import PhysicsParams, load_geometry
from hairctl.scenario import EffectSpec


def _scenario(tmp_path, cfg=None, name="s.json"):
    p = tmp_path / name
    p.write_text(canonical_scenario(cfg or small_config(frames=4)))
    return str(p)


def _frames(d):
    return [read_png(p) for p in sorted(d.glob("frame_*.png"))]


def test_pipeline_then_verify(tmp_path, capsys):
    s = _scenario(tmp_path)
    assert main(["pipeline", "--scenario", s, "--out", str(tmp_path / "b"), "--report"]) == 0
    b = tmp_path / "b"
    assert len(list((b / "frames").glob("*.png"))) == 4
    assert (b / "report" / "report.csv").exists() and (b / "report" / "report.png").exists()
    assert main(["verify", str(b)]) == 0
    assert "ok" in capsys.readouterr().out


def test_verify_failure_exit_code(tmp_path):
    s = _scenario(tmp_path)
    main(["pipeline", "--scenario", s, "--out", str(tmp_path / "b")])
    (tmp_path / "b" / "frames" / "frame_0001.png").unlink()
    assert main(["verify", str(tmp_path / "b")]) == 4


def test_simulate_render_matches_pipeline(tmp_path):
    s = _scenario(tmp_path)
    assert main(["simulate", "--scenario", s, "--out", str(tmp_path / "g.hseq")]) == 0
    assert len(load_geometry(tmp_path / "g.hseq")) == 4
    assert main(["render", "--scenario", s, "--geometry", str(tmp_path / "g.hseq"),
                 "--out", str(tmp_path / "r")]) == 0
    main(["pipeline", "--scenario", s, "--out", str(tmp_path / "b")])
    a, b = _frames(tmp_path / "r"), _frames(tmp_path / "b" / "frames")
    assert len(a) == 4 and all(np.array_equal(x, y) for x, y in zip(a, b))


def test_render_frame_count_mismatch(tmp_path):
    main(["simulate", "--scenario", _scenario(tmp_path), "--out", str(tmp_path / "g")])
    other = _scenario(tmp_path, small_config(frames=5), "other.json")
    assert main(["render", "--scenario", other, "--geometry", str(tmp_path / "g" / "geometry.hseq"),
                 "--out", str(tmp_path / "r")]) == 2


def test_dump_geometry(tmp_path):
    main(["pipeline", "--scenario", _scenario(tmp_path), "--out", str(tmp_path / "b"), "--dump-geometry"])
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert len(load_geometry(tmp_path / "b" / man["geometry"]["file"])) == 4


@pytest.mark.parametrize("argv", [
    ["pipeline"],
    ["pipeline", "--out", "x", "--threads", "0"],
    ["pipeline", "--out", "x", "--seed", "-1"],
    ["bogus"],
])
def test_usage_errors(argv):
    assert main(argv) == 2


def test_validation_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"physics": {"massX": 1}}')
    assert main(["pipeline", "--scenario", str(p), "--out", str(tmp_path / "b")]) == 2
    assert "physics.massX" in capsys.readouterr().err
    p.write_text('{"frames": 3,\n}')
    assert main(["pipeline", "--scenario", str(p), "--out", str(tmp_path / "b")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, capsys):
    cfg = small_config(frames=2, physics=PhysicsParams(gravity_scale=1e308))
    with pytest.warns(RuntimeWarning):
        rc = main(["pipeline", "--scenario", _scenario(tmp_path, cfg), "--out", str(tmp_path / "b")])
    assert rc == 3
    assert "frame" in capsys.readouterr().err


def test_io_exit_codes(tmp_path):
    assert main(["pipeline", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path / "b")]) == 4
    cfg = small_config(frames=2, wig=str(tmp_path / "none.hstr"))
    assert main(["pipeline", "--scenario", _scenario(tmp_path, cfg), "--out", str(tmp_path / "b")]) == 4
    assert main(["metrics", "psnr", str(tmp_path / "a.png"), str(tmp_path / "b.png")]) == 4
    assert main(["render", "--geometry", str(tmp_path / "none.hseq"), "--out", str(tmp_path / "r")]) == 4


def test_seed_changes_output(tmp_path):
    s = _scenario(tmp_path)
    main(["pipeline", "--scenario", s, "--out", str(tmp_path / "a")])
    main(["pipeline", "--scenario", s, "--out", str(tmp_path / "b"), "--seed", "123"])
    a, b = _frames(tmp_path / "a" / "frames"), _frames(tmp_path / "b" / "frames")
    assert not np.array_equal(a[0], b[0])
    # the stored scenario records the override, so the bundle stays self-describing
    stored = json.loads((tmp_path / "b" / "scenario.json").read_text())
    assert stored["wig"]["seed"] == 123 and stored["wind"]["seed"] == 123


def test_effect_commands(tmp_path):
    s = _scenario(tmp_path, small_config(frames=5))
    assert main(["cinemagraph", "--scenario", s, "--out", str(tmp_path / "c")]) == 0
    assert len(_frames(tmp_path / "c" / "frames")) == 8
    assert main(["bullet-time", "--scenario", s, "--out", str(tmp_path / "t"), "--freeze-frame", "1"]) == 0
    stored = json.loads((tmp_path / "t" / "scenario.json").read_text())
    assert stored["effect"]["type"] == "bullet_time" and stored["effect"]["freeze_frame"] == 1
    assert main(["bullet-time", "--scenario", s, "--out", str(tmp_path / "x"), "--freeze-frame", "5"]) == 2
    one = _scenario(tmp_path, small_config(frames=1), "one.json")
    assert main(["cinemagraph", "--scenario", one, "--out", str(tmp_path / "y")]) == 2


def test_bullet_time_uses_scenario_effect(tmp_path):
    cfg = small_config(frames=5, effect=EffectSpec("bullet_time", 2, ((0, 0.0),)))
    s = _scenario(tmp_path, cfg)
    main(["bullet-time", "--scenario", s, "--out", str(tmp_path / "t")])
    f = _frames(tmp_path / "t" / "frames")
    assert all(np.array_equal(f[2], x) for x in f[3:])


def test_metrics_command(tmp_path, capsys):
    s = _scenario(tmp_path)
    main(["pipeline", "--scenario", s, "--out", str(tmp_path / "b")])
    capsys.readouterr()
    a = str(tmp_path / "b" / "frames" / "frame_0001.png")
    b = str(tmp_path / "b" / "frames" / "frame_0004.png")
    assert main(["metrics", "psnr", a, a]) == 0
    assert capsys.readouterr().out.strip() == "99.000000"
    assert main(["metrics", "ssim", a, b]) == 0
    assert 0 < float(capsys.readouterr().out) < 1


def test_console_script(tmp_path):
    exe = shutil.which("hairctl")
    if exe is None:
        pytest.skip("console script not installed")
    s = _scenario(tmp_path, replace(small_config(frames=2), resolution=(104, 60)))
    r = subprocess.run([exe, "pipeline", "--scenario", s, "--out", str(tmp_path / "b")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([exe, "verify", str(tmp_path / "b")], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "ok"
