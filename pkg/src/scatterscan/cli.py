"""Command-line interface.

Subcommands:
  render         simulate one capture and write its component maps
  calibrate      fit medium extinction and anisotropy from a flat-sheet image
  plan           model-only greedy view selection along the waypoints
  scan           execute a scan: fixed-baseline, nbuv, or a saved plan
  optimize-path  refine a whole pose path by pattern search
  evaluate       compare two finished scan runs on the same scene

Exit codes: 0 success, 1 usage error, 2 unreadable or inconsistent data,
3 numerical failure.

Scan runs write a self-describing directory: run.json (resolved scene,
per-step log), frames/ (PFM maps + PNG previews), snapshot.npz (resume
state after every step), texture.npz and quality.csv (final product).
A scan interrupted after step t and resumed with --resume reproduces the
uninterrupted run exactly, because frame noise is keyed by (seed, t) and
view selection depends only on the fused state.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ._imageio import read_pfm, write_pfm, write_png_preview
from .calibration import CalibrationError, CalibrationSetup, fit_medium
from .estimation import (EstimationError, TextureMap, descatter,
                         texture_atlas, write_quality_csv)
from .geometry import GeometryError, JointView, Pose
from .infogain import InfoGainError
from .planner import (PathPlan, PlannerError, aim_at_footprint,
                      execute_views, fixed_baseline_views,
                      generate_candidates, greedy_scan, load_plan,
                      next_best_view, optimize_path, save_plan)
from .radiometry import Medium, RadiometryError, render
from .scenes import Scene, SceneError, load_scene, scene_from_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_SNAPSHOT_KEYS = ("w1", "w0", "v", "q_face", "inv_q_sum", "n_views",
                  "obs_count")


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _apply_overrides(scene: Scene, args) -> Scene:
    """Fold --seed / --beta-override / --no-ambient into the scene."""
    if getattr(args, "seed", None) is not None:
        scene.seed = int(args.seed)
    beta = getattr(args, "beta_override", None)
    if beta is not None:
        kappa = scene.config.get("medium", {}).get("kappa_ambient")
        scene.medium = Medium(beta=float(beta), g=scene.medium.g,
                              scatter_fraction=scene.medium.scatter_fraction,
                              kappa_ambient=kappa)
    return scene


def _ambient(args) -> bool:
    return not getattr(args, "no_ambient", False)


def _default_view(scene: Scene) -> JointView:
    """First waypoint (or a nadir pose over the mesh center) plus the
    fixed-baseline light, for commands that need a single view."""
    if scene.waypoints:
        cam = scene.waypoints[0]
    else:
        lo = scene.mesh.vertices.min(axis=0)
        hi = scene.mesh.vertices.max(axis=0)
        c = 0.5 * (lo + hi)
        cam = Pose(position=np.array([c[0], c[1], hi[2] + 1.0]),
                   direction=np.array([0.0, 0.0, -1.0]))
    off = np.array([scene.fixed_baseline, 0.0, 0.0])
    light = aim_at_footprint(scene.mesh, cam, cam.position + off)
    return JointView(camera=cam, light=light, t=0)


def _load_view(path) -> JointView:
    with open(path) as fh:
        return JointView.from_dict(json.load(fh))


def _write_frame_maps(frames_dir: Path, view: JointView, frame,
                      model) -> None:
    stem = f"frame_{view.t:03d}"
    write_pfm(frames_dir / f"{stem}_image.pfm", frame.image)
    write_png_preview(frames_dir / f"{stem}_image.png", frame.image,
                      vmax=model.full_well)
    write_pfm(frames_dir / f"{stem}_irradiance.pfm", frame.irradiance)
    write_pfm(frames_dir / f"{stem}_backscatter.pfm", frame.backscatter)


def _save_texture_state(path, texture: TextureMap, t_next: int) -> None:
    snap = texture.snapshot()
    np.savez(path, t_next=np.int64(t_next),
             **{k: snap[k] for k in _SNAPSHOT_KEYS})


def _restore_texture_state(path, texture: TextureMap) -> int:
    with np.load(path) as z:
        texture.restore({k: z[k] for k in _SNAPSHOT_KEYS})
        return int(z["t_next"])


def _write_run_json(out: Path, payload: dict) -> None:
    with open(out / "run.json", "w") as fh:
        json.dump(payload, fh, indent=1)


def _finish_scan(out: Path, scene: Scene, texture: TextureMap) -> dict:
    snap = texture.snapshot()
    np.savez(out / "texture.npz", **{k: snap[k] for k in _SNAPSHOT_KEYS})
    write_quality_csv(texture, out / "quality.csv")
    np.save(out / "albedo_atlas.npy", texture_atlas(texture,
                                                    texture.albedo()))
    totals = {
        "total_uncertainty": texture.total_uncertainty(),
        "information_gain_nats": texture.information_gain_from_prior(),
    }
    return totals


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def cmd_render(args) -> int:
    scene = _apply_overrides(load_scene(args.scene), args)
    view = _load_view(args.view) if args.view else _default_view(scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    frame = render(scene.mesh, view, scene.model, scene.source, scene.medium,
                   seed=scene.seed, ambient=_ambient(args),
                   n_samples=scene.n_samples)
    noiseless = np.clip(frame.signal + frame.backscatter, 0.0,
                        scene.model.full_well)
    write_pfm(out / "image.pfm", frame.image)
    write_png_preview(out / "image.png", frame.image,
                      vmax=scene.model.full_well)
    write_pfm(out / "irradiance.pfm", frame.irradiance)
    write_pfm(out / "backscatter.pfm", frame.backscatter)
    write_pfm(out / "noiseless.pfm", noiseless)
    write_png_preview(out / "noiseless.png", noiseless,
                      vmax=scene.model.full_well)
    with open(out / "view.json", "w") as fh:
        json.dump(view.to_dict(), fh, indent=1)

    print(f"irradiance_mean={float(frame.irradiance.mean()):.6g}")
    print(f"backscatter_mean={float(frame.backscatter.mean()):.6g}")
    print(f"signal_mean={float(frame.signal.mean()):.6g}")
    print(f"image_mean={float(frame.image.mean()):.6g}")
    print(f"wrote maps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    scene = _apply_overrides(load_scene(args.scene), args)
    view = _load_view(args.view) if args.view else _default_view(scene)
    if args.image:
        image = read_pfm(args.image).astype(np.float64)
        synthetic = False
    else:
        frame = render(scene.mesh, view, scene.model, scene.source,
                       scene.medium, seed=scene.seed,
                       ambient=_ambient(args), n_samples=scene.n_samples)
        image = frame.image
        synthetic = True

    setup = CalibrationSetup(
        view=view, image=image, mesh=scene.mesh, model=scene.model,
        source=scene.source,
        reference_albedo=float(np.mean(scene.mesh.albedo)),
        ambient=_ambient(args),
        scatter_fraction=scene.medium.scatter_fraction,
        kappa_ambient=scene.config.get("medium", {}).get("kappa_ambient"),
        n_samples=scene.n_samples)
    result = fit_medium(setup)

    payload = result.to_dict()
    payload["synthetic_image"] = synthetic
    if synthetic:
        payload["true_beta"] = scene.medium.beta
        payload["true_g"] = scene.medium.g
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "calibration.json", "w") as fh:
            json.dump(payload, fh, indent=1)
    print(f"beta_hat={result.beta:.6g}")
    print(f"g_hat={result.g:.6g}")
    print(f"residual={result.residual:.6g}")
    if result.g_weakly_identified:
        print("warning: weakly identified g (flat residual across g)",
              file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan (model-only greedy) and optimize-path
# ---------------------------------------------------------------------------


def cmd_plan(args) -> int:
    scene = _apply_overrides(load_scene(args.scene), args)
    if not scene.waypoints:
        raise SceneError("scene defines no waypoints to plan over")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    texture = TextureMap(mesh=scene.mesh, r_min=scene.r_min, rule="ml",
                         eta=scene.eta, prior_sigma=scene.prior_sigma)
    chosen, gains = [], []
    for t, wp in enumerate(scene.waypoints):
        candidates = generate_candidates(wp, scene.gen_spec, t=t)
        view, report = next_best_view(
            scene.mesh, texture, candidates, scene.model, scene.source,
            scene.medium, scene.op, ambient=_ambient(args),
            n_samples=scene.n_samples)
        texture.q_face = texture.q_face + report.quality
        chosen.append(view)
        gains.append(report.total)
        print(f"step {t}: expected_gain_nats={report.total:.4f} "
              f"candidates={len(candidates)}")
    save_plan(out / "plan.json", chosen, gains,
              extra={"mode": "plan", "scene": scene.config})
    print(f"total_expected_gain_nats={sum(gains):.4f}")
    print(f"wrote {out / 'plan.json'}")
    return EXIT_OK


def _path_bounds(scene: Scene, n_views: int) -> tuple:
    lo1 = list(scene.path_position_lo) + [-scene.slope_limit] * 2
    hi1 = list(scene.path_position_hi) + [scene.slope_limit] * 2
    lower = np.tile(lo1 * 2, n_views).astype(np.float64)
    upper = np.tile(hi1 * 2, n_views).astype(np.float64)
    return lower, upper


def cmd_optimize_path(args) -> int:
    scene = _apply_overrides(load_scene(args.scene), args)
    if not scene.waypoints:
        raise SceneError("scene defines no waypoints to build a path from")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    views = fixed_baseline_views(scene.mesh, scene.waypoints,
                                 scene.fixed_baseline,
                                 scene.fixed_azimuth_deg)
    lower, upper = _path_bounds(scene, len(views))
    initial = PathPlan(views=views, lower=lower, upper=upper)
    iterations = (args.iterations if args.iterations is not None
                  else scene.path_iterations)
    best, report = optimize_path(
        scene.mesh, initial, iterations, scene.model, scene.source,
        scene.medium, scene.op, scene.r_min, eta=scene.eta,
        ambient=_ambient(args), n_samples=scene.n_samples)

    save_plan(out / "plan.json", best.views,
              extra={"mode": "optimize-path", "scene": scene.config})
    with open(out / "optimize_report.json", "w") as fh:
        json.dump(report, fh, indent=1)
    red = 100.0 * (1.0 - report["predicted_uncertainty_final"]
                   / report["predicted_uncertainty_initial"])
    print(f"initial_objective_nats={report['initial_objective_nats']:.4f}")
    print(f"final_objective_nats={report['final_objective_nats']:.4f}")
    print(f"predicted_uncertainty_reduction_percent={red:.2f}")
    print(f"wrote {out / 'plan.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------


def _normalize_mode(mode: str) -> str:
    m = (mode or "nbuv").lower().replace("_", "-")
    if m in ("fixed", "fixed-baseline"):
        return "fixed-baseline"
    if m == "nbuv":
        return "nbuv"
    raise SceneError(f"unknown scan mode {mode!r} "
                     "(expected fixed-baseline or nbuv)")


def cmd_scan(args) -> int:
    out = Path(args.out)
    frames_dir = out / "frames"

    if args.resume:
        try:
            with open(out / "run.json") as fh:
                run = json.load(fh)
        except OSError as exc:
            raise SceneError(f"nothing to resume in {out}: {exc}") from exc
        if run.get("finished"):
            print("run already finished; nothing to resume")
            return EXIT_OK
        scene = scene_from_config(run["scene"])
        scene.seed = int(run["seed"])
        m = run["medium"]
        scene.medium = Medium(beta=m["beta"], g=m["g"],
                              scatter_fraction=m["scatter_fraction"],
                              kappa_ambient=m["kappa_ambient"])
        mode = run["mode"]
        plan_views = ([JointView.from_dict(v) for v in run["plan_views"]]
                      if "plan_views" in run else None)
        steps = run["steps"]
        ambient = bool(run["ambient"])
    else:
        if not args.scene:
            print("scatterscan scan: error: --scene is required unless "
                  "--resume is given", file=sys.stderr)
            return EXIT_USAGE
        scene = _apply_overrides(load_scene(args.scene), args)
        mode = "path" if args.plan else _normalize_mode(args.mode)
        plan_views = load_plan(args.plan) if args.plan else None
        steps = []
        ambient = _ambient(args)
        out.mkdir(parents=True, exist_ok=True)

    frames_dir.mkdir(parents=True, exist_ok=True)
    rule = "average" if mode == "fixed-baseline" else "ml"
    texture = TextureMap(mesh=scene.mesh, r_min=scene.r_min, rule=rule,
                         eta=scene.eta, prior_sigma=scene.prior_sigma)
    if args.resume:
        t_start = _restore_texture_state(out / "snapshot.npz", texture)
    else:
        t_start = 0

    if mode == "path":
        if plan_views is None:
            raise SceneError("path mode requires --plan")
        all_views = plan_views
    elif mode == "fixed-baseline":
        if not scene.waypoints:
            raise SceneError("scene defines no waypoints")
        all_views = fixed_baseline_views(scene.mesh, scene.waypoints,
                                         scene.fixed_baseline,
                                         scene.fixed_azimuth_deg)
    else:
        if not scene.waypoints:
            raise SceneError("scene defines no waypoints")
        all_views = None  # chosen on the fly

    n_steps = (len(scene.waypoints) if all_views is None else len(all_views))
    run = {
        "command": "scan", "mode": mode, "seed": scene.seed,
        "ambient": ambient, "rule": rule, "scene": scene.config,
        "medium": {"beta": scene.medium.beta, "g": scene.medium.g,
                   "scatter_fraction": scene.medium.scatter_fraction,
                   "kappa_ambient": scene.medium.kappa_ambient},
        "steps": steps, "finished": False,
    }
    if plan_views is not None:
        run["plan_views"] = [v.to_dict() for v in plan_views]

    for t in range(t_start, n_steps):
        if all_views is None:
            _, _, step_log = greedy_scan(
                scene.mesh, scene.waypoints[: t + 1], scene.gen_spec,
                scene.model, scene.source, scene.medium, scene.op,
                scene.r_min, eta=scene.eta, seed=scene.seed,
                ambient=ambient, condition=scene.condition,
                n_samples=scene.n_samples, texture=texture, start_t=t,
                on_frame=lambda v, f, d: _write_frame_maps(
                    frames_dir, v, f, scene.model))
            step = step_log[0]
            view_t = step["t"]
        else:
            step_log = execute_views(
                scene.mesh, all_views[t: t + 1], texture, scene.model,
                scene.source, scene.medium, scene.op, seed=scene.seed,
                ambient=ambient, condition=scene.condition,
                n_samples=scene.n_samples,
                on_frame=lambda v, f, d: _write_frame_maps(
                    frames_dir, v, f, scene.model))
            step = step_log[0]
            view_t = step["t"]
        steps.append(step)
        _save_texture_state(out / "snapshot.npz", texture, view_t + 1)
        _write_run_json(out, run)
        gain = step.get("expected_gain_nats")
        expected = "" if gain is None else f" expected={gain:.4f}"
        print(f"step {view_t}:{expected} "
              f"ledger_gain_nats={step['ledger_gain_nats']:.4f}")

    totals = _finish_scan(out, scene, texture)
    run.update(totals)
    run["finished"] = True
    _write_run_json(out, run)
    print(f"total_uncertainty={totals['total_uncertainty']:.6g}")
    print(f"information_gain_nats={totals['information_gain_nats']:.4f}")
    print(f"wrote run to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _load_finished_run(run_dir: Path):
    with open(run_dir / "run.json") as fh:
        run = json.load(fh)
    if not run.get("finished"):
        raise SceneError(f"run in {run_dir} is not finished")
    scene = scene_from_config(run["scene"])
    texture = TextureMap(mesh=scene.mesh, r_min=scene.r_min,
                         rule=run["rule"], eta=scene.eta,
                         prior_sigma=scene.prior_sigma)
    with np.load(run_dir / "texture.npz") as z:
        texture.restore({k: z[k] for k in _SNAPSHOT_KEYS})
    return run, scene, texture


def _face_sq_error(texture: TextureMap, truth: np.ndarray,
                   fill: float = 0.5) -> np.ndarray:
    """Per-face mean squared texel error against a per-face truth."""
    est = texture.albedo(fill=fill)
    nf = texture.mesh.n_faces
    err = np.empty(nf)
    for k in range(nf):
        lo, hi = texture.offsets[k], texture.offsets[k + 1]
        err[k] = np.mean((est[lo:hi] - truth[k]) ** 2)
    return err


def cmd_evaluate(args) -> int:
    dir_a, dir_b = Path(args.runs[0]), Path(args.runs[1])
    run_a, scene_a, tex_a = _load_finished_run(dir_a)
    run_b, scene_b, tex_b = _load_finished_run(dir_b)

    if (scene_a.mesh.n_faces != scene_b.mesh.n_faces
            or not np.array_equal(scene_a.mesh.vertices,
                                  scene_b.mesh.vertices)
            or not np.array_equal(scene_a.mesh.faces, scene_b.mesh.faces)):
        raise SceneError("runs use different meshes; cannot compare")
    if scene_a.r_min != scene_b.r_min:
        raise SceneError("runs use different texel resolutions; "
                         "cannot compare")

    truth = scene_a.mesh.albedo
    sq_a = _face_sq_error(tex_a, truth)
    sq_b = _face_sq_error(tex_b, truth)
    lam = tex_a.lam.astype(np.float64)
    rmse_a = float(np.sqrt(np.sum(lam * sq_a) / np.sum(lam)))
    rmse_b = float(np.sqrt(np.sum(lam * sq_b) / np.sum(lam)))

    var_a = tex_a.face_variance()
    var_b = tex_b.face_variance()
    unc_a = tex_a.total_uncertainty()
    unc_b = tex_b.total_uncertainty()
    winner = np.where(var_a < var_b, "a",
                      np.where(var_b < var_a, "b", "tie"))

    report = {
        "baseline": {"dir": str(dir_a), "mode": run_a["mode"],
                     "total_uncertainty": unc_a,
                     "information_gain_nats":
                         tex_a.information_gain_from_prior(),
                     "rmse": rmse_a},
        "candidate": {"dir": str(dir_b), "mode": run_b["mode"],
                      "total_uncertainty": unc_b,
                      "information_gain_nats":
                          tex_b.information_gain_from_prior(),
                      "rmse": rmse_b},
        "uncertainty_improvement_percent":
            100.0 * (1.0 - unc_b / unc_a) if unc_a > 0 else 0.0,
        "winner_counts": {
            "baseline": int(np.sum(winner == "a")),
            "candidate": int(np.sum(winner == "b")),
            "tie": int(np.sum(winner == "tie")),
        },
        "n_faces": int(scene_a.mesh.n_faces),
    }

    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump(report, fh, indent=1)
        import csv
        with open(out / "winner_map.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["face", "variance_baseline", "variance_candidate",
                        "winner", "sq_error_baseline",
                        "sq_error_candidate"])
            for k in range(scene_a.mesh.n_faces):
                w.writerow([k, f"{var_a[k]:.8g}", f"{var_b[k]:.8g}",
                            winner[k], f"{sq_a[k]:.8g}", f"{sq_b[k]:.8g}"])

    print(f"baseline[{run_a['mode']}] total_uncertainty={unc_a:.6g} "
          f"rmse={rmse_a:.6g}")
    print(f"candidate[{run_b['mode']}] total_uncertainty={unc_b:.6g} "
          f"rmse={rmse_b:.6g}")
    print("uncertainty_improvement_percent="
          f"{report['uncertainty_improvement_percent']:.2f}")
    wc = report["winner_counts"]
    print(f"winner_counts baseline={wc['baseline']} "
          f"candidate={wc['candidate']} tie={wc['tie']}")
    if out:
        print(f"wrote report to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scatterscan",
                description="Scanning simulator and planner for "
                            "single-scattering media")
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=_Parser)

    def common(sp, scene_required=True):
        sp.add_argument("--scene", required=scene_required,
                        help="scene JSON file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the scene seed")
        sp.add_argument("--beta-override", type=float, default=None,
                        help="override the medium extinction")
        sp.add_argument("--no-ambient", action="store_true",
                        help="disable the ambient irradiance term")

    sp = sub.add_parser("render", help="simulate one capture")
    common(sp)
    sp.add_argument("--view", help="joint view JSON (default: first "
                                   "waypoint with the fixed baseline)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("calibrate", help="fit medium parameters")
    common(sp)
    sp.add_argument("--view", help="joint view JSON")
    sp.add_argument("--image", help="measured image PFM "
                                    "(default: render synthetically)")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("plan", help="model-only greedy view selection")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("scan", help="execute a scan")
    common(sp, scene_required=False)
    sp.add_argument("--mode", default="nbuv",
                    help="fixed-baseline | nbuv (default nbuv)")
    sp.add_argument("--plan", help="execute a saved plan JSON instead")
    sp.add_argument("--resume", action="store_true",
                    help="continue an interrupted run in --out")
    sp.add_argument("--out", required=True, help="run directory")
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("optimize-path", help="pattern-search a pose path")
    common(sp)
    sp.add_argument("--iterations", type=int, default=None,
                    help="pattern search iterations")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_optimize_path)

    sp = sub.add_parser("evaluate", help="compare two finished runs")
    sp.add_argument("--runs", nargs=2, required=True,
                    metavar=("BASELINE", "CANDIDATE"),
                    help="two scan run directories")
    sp.add_argument("--out", help="report output directory")
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SceneError, RadiometryError, GeometryError, EstimationError,
            InfoGainError, PlannerError, OSError, ValueError,
            KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
