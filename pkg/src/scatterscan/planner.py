"""Greedy next-view selection and whole-path direct-search optimization.

The greedy planner scores every candidate joint pose by predicted
information gain against the current texture quality and picks the argmax
(ties to the lowest candidate index). The path optimizer treats a whole
pose sequence as one parameter vector (5 DOF per pose: position plus two
lateral slopes; roll is excluded) and improves predicted path gain by
compass pattern search: poll +/- steps along every coordinate, keep the
best improvement, halve the step when no poll improves.

Candidate evaluation reuses heavy intermediates: one camera cache per
camera pose and one light cache per light position, so sweeping the light's
aim directions costs only the cone-gated model evaluation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import (
    DEFAULT_ETA,
    OperatingPoint,
    TextureMap,
    descatter,
    face_quality,
    fuse,
)
from .geometry import (
    CameraModel,
    JointView,
    Pose,
    TriMesh,
    direction_from_slopes,
    slopes_from_direction,
)
from .infogain import gain_from_quality, model_sigma
from .radiometry import (
    Medium,
    SpotLight,
    make_camera_cache,
    make_light_cache,
    model_images,
    render,
)

PATTERN_SEARCH_VARIANT = "compass pattern search, 2n polls per iteration"


class PlannerError(ValueError):
    """Raised for empty candidate specs or infeasible plans."""


# ---------------------------------------------------------------------------
# candidate generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateGenSpec:
    """Descriptor for the discrete joint-pose candidate set.

    Light positions are rings around the camera (radii x azimuths) in the
    horizontal plane; orientations are nadir plus tilts about each lateral
    axis. camera_offsets optionally adds a camera grid (full search mode);
    by default the camera stays at the given pose (light-only search).
    """

    radii: tuple = (0.06, 0.12, 0.18, 0.24)
    n_azimuths: int = 8
    tilt_angles_deg: tuple = (10.0, 20.0)
    camera_offsets: tuple = ((0.0, 0.0, 0.0),)

    def orientations(self) -> list[np.ndarray]:
        dirs = [np.array([0.0, 0.0, -1.0])]
        for ang in self.tilt_angles_deg:
            s = math.tan(math.radians(ang))
            for a, b in ((s, 0), (-s, 0), (0, s), (0, -s)):
                dirs.append(direction_from_slopes(a, b))
        return dirs

    @property
    def count(self) -> int:
        return (len(self.camera_offsets) * len(self.radii)
                * self.n_azimuths * len(self.orientations()))

    def to_dict(self) -> dict:
        return {
            "radii": list(self.radii),
            "n_azimuths": self.n_azimuths,
            "tilt_angles_deg": list(self.tilt_angles_deg),
            "camera_offsets": [list(o) for o in self.camera_offsets],
        }

    @staticmethod
    def from_dict(d: dict) -> "CandidateGenSpec":
        return CandidateGenSpec(
            radii=tuple(d.get("radii", (0.06, 0.12, 0.18, 0.24))),
            n_azimuths=int(d.get("n_azimuths", 8)),
            tilt_angles_deg=tuple(d.get("tilt_angles_deg", (10.0, 20.0))),
            camera_offsets=tuple(tuple(o) for o in d.get(
                "camera_offsets", ((0.0, 0.0, 0.0),))),
        )


@dataclass
class CandidateSet:
    """Enumerated joint-pose candidates in deterministic order."""

    views: list
    spec: CandidateGenSpec

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, i):
        return self.views[i]


def generate_candidates(camera_pose: Pose, spec: CandidateGenSpec,
                        t: int = 0) -> CandidateSet:
    """Cartesian product of light rings x orientations (x camera grid)."""
    if not spec.radii or spec.n_azimuths <= 0:
        raise PlannerError("candidate spec has no light positions")
    orientations = spec.orientations()
    if not orientations:
        raise PlannerError("candidate spec has no orientations")
    views = []
    for off in spec.camera_offsets:
        cam = Pose(position=camera_pose.position + np.asarray(off),
                   direction=camera_pose.direction, roll=camera_pose.roll)
        for r in spec.radii:
            for j in range(spec.n_azimuths):
                az = 2.0 * math.pi * j / spec.n_azimuths
                pos = cam.position + np.array(
                    [r * math.cos(az), r * math.sin(az), 0.0])
                for d in orientations:
                    views.append(JointView(
                        camera=cam, light=Pose(position=pos, direction=d),
                        t=t))
    return CandidateSet(views=views, spec=spec)


# ---------------------------------------------------------------------------
# greedy NBUV
# ---------------------------------------------------------------------------


def _quality_of_view(mesh, view, model, source, medium, op, r_min, eta,
                     ambient, n_samples, cam_caches, light_caches):
    """Per-face quality with camera/light-position caches keyed by pose."""
    ckey = (tuple(view.camera.position), tuple(view.camera.direction),
            view.camera.roll)
    if ckey not in cam_caches:
        cam_caches[ckey] = make_camera_cache(mesh, view.camera, model)
    cc = cam_caches[ckey]
    lkey = (ckey, tuple(view.light.position))
    if lkey not in light_caches:
        light_caches[lkey] = make_light_cache(
            mesh, cc, view.light.position, source, medium,
            n_samples=n_samples)
    lc = light_caches[lkey]
    e, b, _ = model_images(mesh, cc, lc, view.light, source, medium,
                           ambient=ambient)
    sigma, usable = model_sigma(e, b, op, model)
    usable &= cc.pm.face_id >= 0
    return face_quality(sigma, usable, cc.pm, mesh, r_min, eta)


def next_best_view(mesh: TriMesh, texture: TextureMap,
                   candidates: CandidateSet, model: CameraModel,
                   source: SpotLight, medium: Medium, op: OperatingPoint,
                   ambient: bool = True, n_samples: int = 64):
    """Exhaustively score candidates; return (best view, its GainReport).

    Ties break to the lowest candidate index, so the result is
    deterministic for a fixed candidate enumeration.
    """
    if len(candidates) == 0:
        raise PlannerError("candidate set is empty")
    cam_caches: dict = {}
    light_caches: dict = {}
    best_i = -1
    best_report = None
    for i, view in enumerate(candidates):
        q = _quality_of_view(mesh, view, model, source, medium, op,
                             texture.r_min, texture.eta, ambient, n_samples,
                             cam_caches, light_caches)
        report = gain_from_quality(texture, q)
        if best_report is None or report.total > best_report.total:
            best_i = i
            best_report = report
        # free the dominant cache memory once a light position is exhausted
        if len(light_caches) > 4:
            light_caches.pop(next(iter(light_caches)))
    return candidates[best_i], best_report


# ---------------------------------------------------------------------------
# scan execution
# ---------------------------------------------------------------------------


def aim_at_footprint(mesh: TriMesh, camera: Pose, position) -> Pose:
    """Light pose at `position` aimed at the camera's central surface point."""
    t, f, _, _ = mesh.bvh().cast_nearest(
        camera.position[None, :], camera.direction[None, :])
    if f[0] >= 0:
        target = camera.position + t[0] * camera.direction
        return Pose(position=np.asarray(position, dtype=np.float64),
                    direction=target - np.asarray(position))
    return Pose(position=np.asarray(position, dtype=np.float64),
                direction=camera.direction)


def fixed_baseline_views(mesh: TriMesh, waypoints, baseline: float,
                         azimuth_deg: float = 0.0) -> list:
    """Conventional rig: light rigidly offset from each camera waypoint,
    aimed at the center of the camera's footprint."""
    az = math.radians(azimuth_deg)
    off = np.array([baseline * math.cos(az), baseline * math.sin(az), 0.0])
    views = []
    for t, cam in enumerate(waypoints):
        light = aim_at_footprint(mesh, cam, cam.position + off)
        views.append(JointView(camera=cam, light=light, t=t))
    return views


def execute_views(mesh: TriMesh, views, texture: TextureMap,
                  model: CameraModel, source: SpotLight, medium: Medium,
                  op: OperatingPoint, seed: int = 0, ambient: bool = True,
                  condition: bool = True, n_samples: int = 64,
                  on_frame=None) -> list[dict]:
    """Render, descatter, and fuse a fixed view sequence; log per-step IG."""
    steps = []
    for view in views:
        var_before = texture.face_variance()
        frame = render(mesh, view, model, source, medium, seed=seed,
                       ambient=ambient, n_samples=n_samples)
        dframe = descatter(frame, op, condition=condition)
        fuse(texture, dframe)
        var_after = texture.face_variance()
        gain = float(np.sum(
            0.5 * texture.lam * np.log(var_before / var_after)))
        steps.append({"t": view.t, "view": view.to_dict(),
                      "ledger_gain_nats": gain})
        if on_frame is not None:
            on_frame(view, frame, dframe)
    return steps


def greedy_scan(mesh: TriMesh, waypoints, spec: CandidateGenSpec,
                model: CameraModel, source: SpotLight, medium: Medium,
                op: OperatingPoint, r_min: float, eta: float = DEFAULT_ETA,
                seed: int = 0, ambient: bool = True, condition: bool = True,
                n_samples: int = 64, texture: TextureMap | None = None,
                start_t: int = 0, on_frame=None):
    """NBUV scan: per waypoint, pick the best candidate, capture, and fuse.

    Returns (chosen views, texture, step log). start_t and an existing
    texture allow resuming a partial scan.
    """
    if len(waypoints) == 0:
        raise PlannerError("no camera waypoints")
    if texture is None:
        texture = TextureMap(mesh=mesh, r_min=r_min, rule="ml", eta=eta)
    chosen: list[JointView] = []
    steps: list[dict] = []
    for t in range(start_t, len(waypoints)):
        candidates = generate_candidates(waypoints[t], spec, t=t)
        view, report = next_best_view(mesh, texture, candidates, model,
                                      source, medium, op, ambient=ambient,
                                      n_samples=n_samples)
        var_before = texture.face_variance()
        frame = render(mesh, view, model, source, medium, seed=seed,
                       ambient=ambient, n_samples=n_samples)
        dframe = descatter(frame, op, condition=condition)
        fuse(texture, dframe)
        var_after = texture.face_variance()
        realized = float(np.sum(
            0.5 * texture.lam * np.log(var_before / var_after)))
        chosen.append(view)
        steps.append({"t": t, "view": view.to_dict(),
                      "expected_gain_nats": float(report.total),
                      "ledger_gain_nats": realized,
                      "n_candidates": len(candidates)})
        if on_frame is not None:
            on_frame(view, frame, dframe)
    return chosen, texture, steps


# ---------------------------------------------------------------------------
# path optimization
# ---------------------------------------------------------------------------

VIEW_DOF = 10  # camera x, y, z, slope_a, slope_b; light likewise


@dataclass
class PathPlan:
    """A pose sequence plus its free-parameter encoding for direct search.

    Each view contributes 10 coordinates (camera position and lateral
    slopes, then the same for the light); roll stays fixed at 0. Bounds are
    per-coordinate and clip every poll.
    """

    views: list
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.views) < 1:
            raise PlannerError("path must contain at least one view")
        n = VIEW_DOF * len(self.views)
        if self.lower is None:
            self.lower = np.full(n, -np.inf)
        if self.upper is None:
            self.upper = np.full(n, np.inf)
        self.lower = np.asarray(self.lower, dtype=np.float64).reshape(n)
        self.upper = np.asarray(self.upper, dtype=np.float64).reshape(n)
        if np.any(self.lower > self.upper):
            raise PlannerError("lower bound exceeds upper bound")

    @property
    def n_dof(self) -> int:
        return VIEW_DOF * len(self.views)

    def to_vector(self) -> np.ndarray:
        x = np.empty(self.n_dof)
        for j, view in enumerate(self.views):
            ca, cb = slopes_from_direction(view.camera.direction)
            la, lb = slopes_from_direction(view.light.direction)
            x[10 * j: 10 * j + 10] = [*view.camera.position, ca, cb,
                                      *view.light.position, la, lb]
        return x

    def with_vector(self, x: np.ndarray) -> "PathPlan":
        x = np.asarray(x, dtype=np.float64)
        views = []
        for j, old in enumerate(self.views):
            c = x[10 * j: 10 * j + 10]
            views.append(JointView(
                camera=Pose(position=c[0:3],
                            direction=direction_from_slopes(c[3], c[4])),
                light=Pose(position=c[5:8],
                           direction=direction_from_slopes(c[8], c[9])),
                t=old.t))
        return PathPlan(views=views, lower=self.lower.copy(),
                        upper=self.upper.copy())

    def view_of_coord(self, i: int) -> int:
        return i // VIEW_DOF


def check_feasible(mesh: TriMesh, plan: PathPlan) -> None:
    """Every pose position must not lie below the surface."""
    down = np.array([0.0, 0.0, -1.0])
    up = -down
    for view in plan.views:
        for pose in (view.camera, view.light):
            o = pose.position[None, :]
            _, f_dn, _, _ = mesh.bvh().cast_nearest(o, down[None, :])
            if f_dn[0] >= 0:
                continue
            _, f_up, _, _ = mesh.bvh().cast_nearest(o, up[None, :])
            if f_up[0] >= 0:
                raise PlannerError(
                    f"pose at {pose.position.tolist()} lies below the "
                    "surface")


def optimize_path(mesh: TriMesh, initial: PathPlan, iterations: int,
                  model: CameraModel, source: SpotLight, medium: Medium,
                  op: OperatingPoint, r_min: float, eta: float = DEFAULT_ETA,
                  ambient: bool = True, n_samples: int = 64,
                  texture: TextureMap | None = None,
                  delta0: np.ndarray | float | None = None,
                  delta_position: float = 0.1, delta_slope: float = 0.2):
    """Improve a whole pose path by compass pattern search.

    Objective: predicted path information gain from the given (or fresh)
    quality state. Each iteration polls +/- delta along every coordinate;
    the best improving poll is accepted with delta kept, otherwise delta is
    halved. Returns (best plan, report dict with objective history).
    """
    check_feasible(mesh, initial)
    if texture is None:
        texture = TextureMap(mesh=mesh, r_min=r_min, rule="ml", eta=eta)
    q_start = texture.q_face.copy()
    lam = texture.lam

    def quality(view: JointView) -> np.ndarray:
        cc = make_camera_cache(mesh, view.camera, model)
        lc = make_light_cache(mesh, cc, view.light.position, source, medium,
                              n_samples=n_samples)
        e, b, _ = model_images(mesh, cc, lc, view.light, source, medium,
                               ambient=ambient)
        sigma, usable = model_sigma(e, b, op, model)
        usable &= cc.pm.face_id >= 0
        return face_quality(sigma, usable, cc.pm, mesh, r_min, eta)

    def objective(q_views: list[np.ndarray]) -> float:
        q_end = q_start + sum(q_views)
        return float(np.sum(0.5 * lam * np.log(q_end / q_start)))

    x = initial.to_vector()
    n = len(x)
    if delta0 is None:
        delta = np.tile([delta_position] * 3 + [delta_slope] * 2, 2
                        * len(initial.views)).astype(np.float64)
    else:
        delta = np.broadcast_to(np.asarray(delta0, dtype=np.float64),
                                (n,)).copy()

    plan = initial
    q_views = [quality(v) for v in plan.views]
    f_best = objective(q_views)
    history = [f_best]
    unc_initial = float(np.sum(lam / (q_start + sum(q_views))))

    for _ in range(int(iterations)):
        poll_best = None   # (f, i, value, q_view)
        for i in range(n):
            j = plan.view_of_coord(i)
            for sgn in (1.0, -1.0):
                xi = np.clip(x[i] + sgn * delta[i], initial.lower[i],
                             initial.upper[i])
                if xi == x[i]:
                    continue
                y = x.copy()
                y[i] = xi
                trial_plan = plan.with_vector(y)
                q_new = quality(trial_plan.views[j])
                f = objective(q_views[:j] + [q_new] + q_views[j + 1:])
                if f > f_best and (poll_best is None or f > poll_best[0]):
                    poll_best = (f, i, xi, q_new)
        if poll_best is None:
            delta *= 0.5
        else:
            f_best, i, xi, q_new = poll_best
            x[i] = xi
            q_views[plan.view_of_coord(i)] = q_new
            plan = plan.with_vector(x)
        history.append(f_best)

    unc_final = float(np.sum(lam / (q_start + sum(q_views))))
    report = {
        "variant": PATTERN_SEARCH_VARIANT,
        "iterations": int(iterations),
        "objective_history_nats": history,
        "initial_objective_nats": history[0],
        "final_objective_nats": history[-1],
        "predicted_uncertainty_initial": unc_initial,
        "predicted_uncertainty_final": unc_final,
    }
    return plan, report


# ---------------------------------------------------------------------------
# plan serialization
# ---------------------------------------------------------------------------


def plan_to_dict(views, expected_gains=None, extra: dict | None = None):
    rows = []
    for i, view in enumerate(views):
        row = view.to_dict()
        if expected_gains is not None:
            row["expected_ig_nats"] = float(expected_gains[i])
        rows.append(row)
    out = {"schema_version": 1, "views": rows}
    if extra:
        out.update(extra)
    return out


def save_plan(path, views, expected_gains=None, extra: dict | None = None):
    with open(path, "w") as fh:
        json.dump(plan_to_dict(views, expected_gains, extra), fh, indent=1)


def load_plan(path) -> list[JointView]:
    with open(path) as fh:
        data = json.load(fh)
    return [JointView.from_dict(row) for row in data["views"]]
