import json

import numpy as np
import pytest

import scatterscan.cli as cli
from scatterscan._imageio import read_pfm, write_pfm, write_png_preview
from scatterscan.scenes import calibration_config

from .conftest import tiny_hills, write_scene


def tiny_cli_hills(**over):
    """Hill scene small enough for end-to-end CLI runs."""
    cfg = tiny_hills(planner={"n_azimuths": 4, "tilt_angles_deg": []},
                     estimation={"r_min": 3000.0, "n_samples": 16})
    cfg["camera"].update(width=48, height=36)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    return cfg


@pytest.fixture()
def hills_json(tmp_path):
    return write_scene(tmp_path, tiny_cli_hills())


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------


def test_pfm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.uniform(0.0, 2.4e4, size=(7, 11)).astype(np.float32)
    p = tmp_path / "x.pfm"
    write_pfm(p, a)
    assert np.array_equal(read_pfm(p), a)


def test_pfm_errors(tmp_path):
    with pytest.raises(ValueError, match="2-D"):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 3)))
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
    with pytest.raises(ValueError, match="grayscale"):
        read_pfm(bad)
    trunc = tmp_path / "trunc.pfm"
    trunc.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 8)
    with pytest.raises(ValueError, match="truncated"):
        read_pfm(trunc)


def test_png_preview(tmp_path):
    p = tmp_path / "x.png"
    write_png_preview(p, np.array([[0.0, 12000.0], [24000.0, 5e6]]),
                      vmax=24000.0)
    assert p.stat().st_size > 0
    with pytest.raises(ValueError, match="vmax"):
        write_png_preview(p, np.zeros((2, 2)), vmax=0.0)


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_usage_errors_exit_1(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["render"]) == 1          # missing --scene/--out
    assert cli.main(["no-such-command"]) == 1
    assert cli.main(["scan", "--out", str(tmp_path / "r")]) == 1
    capsys.readouterr()


def test_missing_scene_exits_2(tmp_path, capsys):
    code = cli.main(["render", "--scene", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_invalid_medium_exits_2(tmp_path, capsys):
    cfg = tiny_cli_hills()
    cfg["medium"] = dict(cfg["medium"], beta=-1.0)
    scene = write_scene(tmp_path, cfg)
    code = cli.main(["render", "--scene", scene,
                     "--out", str(tmp_path / "o")])
    assert code == 2
    assert "extinction" in capsys.readouterr().err


def test_unknown_scan_mode_exits_2(hills_json, tmp_path, capsys):
    code = cli.main(["scan", "--scene", hills_json, "--mode", "bananas",
                     "--out", str(tmp_path / "r")])
    assert code == 2
    capsys.readouterr()


def test_unidentifiable_calibration_exits_3(tmp_path, capsys):
    cfg = calibration_config()
    cfg["camera"].update(width=32, height=24)
    cfg["estimation"]["n_samples"] = 8
    cfg["light"] = dict(cfg["light"], intensity=1.0e22)  # blinds the sensor
    scene = write_scene(tmp_path, cfg)
    code = cli.main(["calibrate", "--scene", scene])
    assert code == 3
    assert "unidentifiable" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def test_render_outputs_and_determinism(hills_json, tmp_path, capsys):
    a, b, c = (tmp_path / d for d in ("ra", "rb", "rc"))
    assert cli.main(["render", "--scene", hills_json, "--seed", "7",
                     "--out", str(a)]) == 0
    out = capsys.readouterr().out
    for key in ("irradiance_mean=", "backscatter_mean=", "signal_mean=",
                "image_mean="):
        assert key in out
    for name in ("image.pfm", "image.png", "irradiance.pfm",
                 "backscatter.pfm", "noiseless.pfm", "noiseless.png",
                 "view.json"):
        assert (a / name).exists()
    assert cli.main(["render", "--scene", hills_json, "--seed", "7",
                     "--out", str(b)]) == 0
    assert cli.main(["render", "--scene", hills_json, "--seed", "8",
                     "--out", str(c)]) == 0
    capsys.readouterr()
    assert (a / "image.pfm").read_bytes() == (b / "image.pfm").read_bytes()
    assert (a / "image.pfm").read_bytes() != (c / "image.pfm").read_bytes()
    # the noiseless map is the clamped model image
    img = read_pfm(a / "noiseless.pfm")
    assert img.max() <= 24000.0


def test_render_beta_override_zero(hills_json, tmp_path, capsys):
    out = tmp_path / "clear"
    assert cli.main(["render", "--scene", hills_json, "--beta-override",
                     "0", "--out", str(out)]) == 0
    capsys.readouterr()
    assert np.all(read_pfm(out / "backscatter.pfm") == 0.0)
    assert read_pfm(out / "irradiance.pfm").max() > 0.0


def test_render_no_ambient_dims_irradiance(hills_json, tmp_path, capsys):
    on, off = tmp_path / "amb", tmp_path / "noamb"
    assert cli.main(["render", "--scene", hills_json, "--out",
                     str(on)]) == 0
    assert cli.main(["render", "--scene", hills_json, "--no-ambient",
                     "--out", str(off)]) == 0
    capsys.readouterr()
    e_on = read_pfm(on / "irradiance.pfm")
    e_off = read_pfm(off / "irradiance.pfm")
    assert e_off.sum() < e_on.sum()


def test_render_explicit_view(hills_json, tmp_path, capsys):
    view = {"camera": {"position": [0.3, 0.2, 0.45],
                       "direction": [0.0, 0.0, -1.0]},
            "light": {"position": [0.45, 0.2, 0.45],
                      "direction": [0.0, 0.0, -1.0]}, "t": 0}
    vp = tmp_path / "view.json"
    vp.write_text(json.dumps(view))
    out = tmp_path / "rv"
    assert cli.main(["render", "--scene", hills_json, "--view", str(vp),
                     "--out", str(out)]) == 0
    capsys.readouterr()
    used = json.loads((out / "view.json").read_text())
    assert used["camera"]["position"] == [0.3, 0.2, 0.45]


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def test_calibrate_synthetic(tmp_path, capsys):
    cfg = calibration_config()
    cfg["camera"].update(width=48, height=36)
    cfg["estimation"]["n_samples"] = 16
    scene = write_scene(tmp_path, cfg)
    out = tmp_path / "cal"
    assert cli.main(["calibrate", "--scene", scene, "--out",
                     str(out)]) == 0
    printed = capsys.readouterr().out
    assert "beta_hat=" in printed and "g_hat=" in printed
    data = json.loads((out / "calibration.json").read_text())
    assert data["synthetic_image"] is True
    assert data["true_beta"] == 2.5
    assert abs(data["beta"] / 2.5 - 1.0) < 0.1
    assert abs(data["g"] - 0.6) <= 0.15


def test_calibrate_from_pfm(tmp_path, capsys):
    cfg = calibration_config()
    cfg["camera"].update(width=48, height=36)
    cfg["estimation"]["n_samples"] = 16
    scene = write_scene(tmp_path, cfg)
    ro = tmp_path / "cap"
    assert cli.main(["render", "--scene", scene, "--out", str(ro)]) == 0
    out = tmp_path / "cal2"
    assert cli.main(["calibrate", "--scene", scene, "--image",
                     str(ro / "image.pfm"), "--view",
                     str(ro / "view.json"), "--out", str(out)]) == 0
    capsys.readouterr()
    data = json.loads((out / "calibration.json").read_text())
    assert data["synthetic_image"] is False
    assert "true_beta" not in data
    assert abs(data["beta"] / 2.5 - 1.0) < 0.1


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


def _run_scan(scene, out, *extra):
    return cli.main(["scan", "--scene", scene, "--out", str(out), *extra])


def test_scan_fixed_baseline(hills_json, tmp_path, capsys):
    out = tmp_path / "fixed"
    assert _run_scan(hills_json, out, "--mode", "fixed-baseline") == 0
    printed = capsys.readouterr().out
    assert printed.count("ledger_gain_nats=") == 3
    assert "total_uncertainty=" in printed
    run = json.loads((out / "run.json").read_text())
    assert run["finished"] is True
    assert run["mode"] == "fixed-baseline"
    assert run["rule"] == "average"
    assert len(run["steps"]) == 3
    for name in ("texture.npz", "quality.csv", "albedo_atlas.npy",
                 "snapshot.npz", "frames/frame_000_image.pfm",
                 "frames/frame_002_backscatter.pfm",
                 "frames/frame_001_image.png"):
        assert (out / name).exists()
    # "fixed" is accepted as an alias
    out2 = tmp_path / "fixed2"
    assert _run_scan(hills_json, out2, "--mode", "fixed") == 0
    capsys.readouterr()
    assert json.loads((out2 / "run.json").read_text())["mode"] == \
        "fixed-baseline"


def test_scan_nbuv_predictions_match_ledger(hills_json, tmp_path, capsys):
    out = tmp_path / "nbuv"
    assert _run_scan(hills_json, out) == 0
    capsys.readouterr()
    run = json.loads((out / "run.json").read_text())
    assert run["mode"] == "nbuv"
    assert run["rule"] == "ml"
    assert len(run["steps"]) == 3
    for step in run["steps"]:
        assert step["expected_gain_nats"] == pytest.approx(
            step["ledger_gain_nats"], rel=1e-9)
        assert step["n_candidates"] == 2 * 4 * 1
    assert run["information_gain_nats"] > 0


def test_scan_resume_reproduces_exactly(hills_json, tmp_path, capsys,
                                        monkeypatch):
    full = tmp_path / "full"
    assert _run_scan(hills_json, full, "--seed", "5") == 0

    # crash cleanly after step 0 (both snapshot and run.json written)
    part = tmp_path / "part"
    real = cli._write_run_json
    calls = {"n": 0}

    def crashing(out, payload):
        real(out, payload)
        calls["n"] += 1
        if calls["n"] == 1:
            raise KeyboardInterrupt

    monkeypatch.setattr(cli, "_write_run_json", crashing)
    with pytest.raises(KeyboardInterrupt):
        cli.main(["scan", "--scene", hills_json, "--seed", "5",
                  "--out", str(part)])
    monkeypatch.setattr(cli, "_write_run_json", real)
    assert len(json.loads((part / "run.json").read_text())["steps"]) == 1

    assert cli.main(["scan", "--resume", "--out", str(part)]) == 0
    capsys.readouterr()

    run_a = json.loads((full / "run.json").read_text())
    run_b = json.loads((part / "run.json").read_text())
    assert run_b["finished"] is True
    assert [s["view"] for s in run_a["steps"]] == \
        [s["view"] for s in run_b["steps"]]
    assert run_a["total_uncertainty"] == pytest.approx(
        run_b["total_uncertainty"], rel=1e-12)
    with np.load(full / "texture.npz") as za, \
            np.load(part / "texture.npz") as zb:
        for k in za.files:
            assert np.array_equal(za[k], zb[k]), k

    # resuming a finished run is a no-op
    assert cli.main(["scan", "--resume", "--out", str(part)]) == 0
    assert "already finished" in capsys.readouterr().out


def test_scan_resume_without_run_exits_2(tmp_path, capsys):
    assert cli.main(["scan", "--resume", "--out",
                     str(tmp_path / "ghost")]) == 2
    capsys.readouterr()


def test_plan_then_scan_plan(hills_json, tmp_path, capsys):
    plan_dir = tmp_path / "plan"
    assert cli.main(["plan", "--scene", hills_json, "--out",
                     str(plan_dir)]) == 0
    printed = capsys.readouterr().out
    assert printed.count(": expected_gain_nats=") == 3
    assert "total_expected_gain_nats=" in printed
    plan = json.loads((plan_dir / "plan.json").read_text())
    assert len(plan["views"]) == 3
    assert all("expected_ig_nats" in v for v in plan["views"])

    out = tmp_path / "exec"
    assert cli.main(["scan", "--scene", hills_json, "--plan",
                     str(plan_dir / "plan.json"), "--out", str(out)]) == 0
    capsys.readouterr()
    run = json.loads((out / "run.json").read_text())
    assert run["mode"] == "path"
    assert run["rule"] == "ml"
    assert len(run["steps"]) == 3


def test_optimize_path_cli(hills_json, tmp_path, capsys):
    out = tmp_path / "opt"
    assert cli.main(["optimize-path", "--scene", hills_json,
                     "--iterations", "2", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "initial_objective_nats=" in printed
    assert "predicted_uncertainty_reduction_percent=" in printed
    report = json.loads((out / "optimize_report.json").read_text())
    assert len(report["objective_history_nats"]) == 3
    plan = json.loads((out / "plan.json").read_text())
    assert len(plan["views"]) == 3


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def test_evaluate_two_runs(hills_json, tmp_path, capsys):
    fixed, nbuv = tmp_path / "f", tmp_path / "n"
    assert _run_scan(hills_json, fixed, "--mode", "fixed-baseline") == 0
    assert _run_scan(hills_json, nbuv) == 0
    out = tmp_path / "report"
    assert cli.main(["evaluate", "--runs", str(fixed), str(nbuv),
                     "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "uncertainty_improvement_percent=" in printed
    assert "winner_counts" in printed
    report = json.loads((out / "report.json").read_text())
    assert report["baseline"]["mode"] == "fixed-baseline"
    assert report["candidate"]["mode"] == "nbuv"
    wc = report["winner_counts"]
    assert wc["baseline"] + wc["candidate"] + wc["tie"] == \
        report["n_faces"] == 320
    rows = (out / "winner_map.csv").read_text().strip().splitlines()
    assert len(rows) == 321


def test_evaluate_rejects_mismatched_runs(hills_json, tmp_path, capsys):
    a = tmp_path / "a"
    assert _run_scan(hills_json, a, "--mode", "fixed-baseline") == 0
    other = write_scene(tmp_path, tiny_cli_hills(
        estimation={"r_min": 1500.0}), name="other.json")
    b = tmp_path / "b"
    assert _run_scan(other, b, "--mode", "fixed-baseline") == 0
    assert cli.main(["evaluate", "--runs", str(a), str(b)]) == 2
    err = capsys.readouterr().err
    assert "resolution" in err


def test_evaluate_unfinished_run_exits_2(hills_json, tmp_path, capsys):
    a = tmp_path / "a"
    assert _run_scan(hills_json, a, "--mode", "fixed-baseline") == 0
    unfinished = tmp_path / "u"
    unfinished.mkdir()
    run = json.loads((a / "run.json").read_text())
    run["finished"] = False
    (unfinished / "run.json").write_text(json.dumps(run))
    assert cli.main(["evaluate", "--runs", str(a), str(unfinished)]) == 2
    capsys.readouterr()


def test_module_entry_point(hills_json, tmp_path):
    import subprocess
    import sys
    proc = subprocess.run(
        [sys.executable, "-m", "scatterscan", "render", "--scene",
         hills_json, "--out", str(tmp_path / "m")],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "image_mean=" in proc.stdout
