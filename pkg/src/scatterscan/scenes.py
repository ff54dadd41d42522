"""Scene configuration: JSON ingestion and the builtin synthetic scenes.

A scene bundles everything a command needs: mesh with ground-truth albedo,
medium, light source, camera model, estimation constants, and the planner's
candidate/waypoint/path parameters. Scene files are JSON with a
schema_version field; every field the loader defaults is recorded so runs
are self-describing.

Builtin meshes (desk scale):
  hills: a 1.0 x 0.4 m floor with smooth bumps (round by default; an
    optional per-bump ry makes ridge-like hills with elliptical support);
    stand-in terrain.
  cube_on_plane: a 0.28 m cube on a 1.4 x 0.84 m floor with a matching
    hole under the cube, so total area = floor rectangle + 5 exposed faces.
  plane: a flat sheet for calibration.

Ground-truth albedo for the builtins is procedural (checker plus dark
spots) so fine-detail recovery is assessable; it is evaluated at face
centroids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import DEFAULT_ETA, PRIOR_SIGMA, OperatingPoint
from .geometry import CameraModel, Pose, TriMesh, load_obj
from .planner import CandidateGenSpec
from .radiometry import Medium, RadiometryError, SpotLight

SCHEMA_VERSION = 1


class SceneError(ValueError):
    """Raised for unloadable or inconsistent scene configurations."""


# ---------------------------------------------------------------------------
# builtin meshes
# ---------------------------------------------------------------------------


def _grid_mesh(xs: np.ndarray, ys: np.ndarray, height_fn) -> tuple:
    """Vertices and faces of a height-field grid, counter-clockwise from +z."""
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    gz = height_fn(gx, gy)
    nx, ny = gx.shape
    verts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            faces.append([a, b, b + 1])
            faces.append([a, b + 1, a + 1])
    return verts, np.asarray(faces, dtype=np.int32)


@dataclass(frozen=True)
class HillSpec:
    """Smooth bumps on a rectangular floor.

    Each bump is a dict with keys cx, cy, height, radius and an optional
    ry; when ry differs from radius the bump has elliptical support
    (radius along x, ry along y), which makes ridge-like hills elongated
    across the flight line possible.
    """

    length: float = 1.0
    width: float = 0.4
    n_x: int = 20
    n_y: int = 8
    bumps: tuple = (
        {"cx": 0.3, "cy": 0.2, "height": 0.08, "radius": 0.12},
        {"cx": 0.7, "cy": 0.2, "height": 0.08, "radius": 0.12},
    )


def make_hills(spec: HillSpec | None = None, albedo=None) -> TriMesh:
    """Bumpy terrain stand-in. Deterministic for a fixed spec."""
    spec = spec or HillSpec()

    def height(x, y):
        z = np.zeros_like(x)
        for b in spec.bumps:
            ry = b.get("ry", b["radius"])
            d = np.hypot(x - b["cx"],
                         (y - b["cy"]) * (b["radius"] / ry)) / b["radius"]
            t = np.clip(d, 0.0, 1.0)
            lift = b["height"] * np.cos(0.5 * math.pi * t) ** 2
            z = z + np.where(t < 1.0, lift, 0.0)
        return z

    xs = np.linspace(0.0, spec.length, spec.n_x + 1)
    ys = np.linspace(0.0, spec.width, spec.n_y + 1)
    verts, faces = _grid_mesh(xs, ys, height)
    if albedo is None:
        cent = verts[faces].mean(axis=1)
        albedo = checker_spots_albedo(cent)
    return TriMesh(vertices=verts, faces=faces, albedo=albedo)


@dataclass(frozen=True)
class CubeSpec:
    """A cube on a floor that has a hole exactly under the cube."""

    edge: float = 0.28
    floor_cells_x: int = 10      # floor spans cells of size edge/2
    floor_cells_y: int = 6


def make_cube_on_plane(spec: CubeSpec | None = None, albedo=None) -> TriMesh:
    """Cube of the given edge on a holed floor; 12 cube triangles."""
    spec = spec or CubeSpec()
    e = spec.edge
    cell = e / 2.0
    nx, ny = spec.floor_cells_x, spec.floor_cells_y
    if nx % 2 or ny % 2:
        raise SceneError("floor cell counts must be even (centered hole)")
    x0, y0 = -nx * cell / 2.0, -ny * cell / 2.0

    verts: list = []
    faces: list = []

    def vid(p):
        verts.append(p)
        return len(verts) - 1

    # floor grid, skipping the 2x2 cells under the cube footprint
    hole = {(nx // 2 - 1, ny // 2 - 1), (nx // 2, ny // 2 - 1),
            (nx // 2 - 1, ny // 2), (nx // 2, ny // 2)}
    vidx = {}
    for i in range(nx + 1):
        for j in range(ny + 1):
            vidx[(i, j)] = vid([x0 + i * cell, y0 + j * cell, 0.0])
    for i in range(nx):
        for j in range(ny):
            if (i, j) in hole:
                continue
            a, b = vidx[(i, j)], vidx[(i + 1, j)]
            c, d = vidx[(i + 1, j + 1)], vidx[(i, j + 1)]
            faces.append([a, b, c])
            faces.append([a, c, d])
    n_floor = len(faces)

    # cube: 8 corners, 12 triangles, outward winding
    h = e / 2.0
    corners = [vid([sx * h, sy * h, z]) for z in (0.0, e)
               for sy in (-1, 1) for sx in (-1, 1)]
    b0, b1, b2, b3 = corners[0], corners[1], corners[3], corners[2]
    t0, t1, t2, t3 = corners[4], corners[5], corners[7], corners[6]
    quads = [
        (t0, t1, t2, t3),      # top (+z)
        (b1, b0, b3, b2),      # bottom (-z), faces down into the hole
        (b0, b1, t1, t0),      # -y side
        (b2, b3, t3, t2),      # +y side
        (b1, b2, t2, t1),      # +x side
        (b3, b0, t0, t3),      # -x side
    ]
    for a, b, c, d in quads:
        faces.append([a, b, c])
        faces.append([a, c, d])

    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int32)
    if albedo is None:
        albedo = np.empty(len(faces))
        cent = verts[faces[:n_floor]].mean(axis=1)
        albedo[:n_floor] = checker_spots_albedo(cent, checker=cell,
                                                spots=())
        # two triangles per cube side, in the quad order above
        side_albedo = [0.7, 0.5, 0.4, 0.55, 0.3, 0.6]
        for s, a in enumerate(side_albedo):
            albedo[n_floor + 2 * s: n_floor + 2 * s + 2] = a
    return TriMesh(vertices=verts, faces=faces, albedo=albedo)


def make_plane(size_x: float = 2.0, size_y: float = 2.0, n: int = 4,
               z: float = 0.0, albedo: float = 1.0,
               center=(0.0, 0.0)) -> TriMesh:
    """Flat sheet (e.g. the calibration reference)."""
    xs = np.linspace(center[0] - size_x / 2, center[0] + size_x / 2, n + 1)
    ys = np.linspace(center[1] - size_y / 2, center[1] + size_y / 2, n + 1)
    verts, faces = _grid_mesh(xs, ys, lambda x, y: np.full_like(x, z))
    return TriMesh(vertices=verts, faces=faces,
                   albedo=np.full(len(faces), albedo))


DEFAULT_SPOTS = ({"cx": 0.25, "cy": 0.10, "r": 0.05},
                 {"cx": 0.50, "cy": 0.30, "r": 0.05},
                 {"cx": 0.78, "cy": 0.14, "r": 0.05})


def checker_spots_albedo(points: np.ndarray, checker: float = 0.1,
                         values: tuple = (0.3, 0.7),
                         spots: tuple = DEFAULT_SPOTS,
                         spot_albedo: float = 0.15) -> np.ndarray:
    """Checkerboard albedo with dark spots, sampled at the given points."""
    p = np.atleast_2d(points)
    ix = np.floor(p[:, 0] / checker).astype(np.int64)
    iy = np.floor(p[:, 1] / checker).astype(np.int64)
    a = np.where((ix + iy) % 2 == 0, values[0], values[1]).astype(np.float64)
    for s in spots:
        inside = np.hypot(p[:, 0] - s["cx"], p[:, 1] - s["cy"]) <= s["r"]
        a[inside] = spot_albedo
    return a


# ---------------------------------------------------------------------------
# resolved scene
# ---------------------------------------------------------------------------


_MISSING = object()


@dataclass
class SceneConfig:
    """Raw configuration dict plus the list of fields that were defaulted."""

    data: dict
    defaulted: list = field(default_factory=list)

    def get(self, *keys, default=_MISSING):
        node = self.data
        path = ".".join(str(k) for k in keys)
        for k in keys:
            if not isinstance(node, dict) or k not in node:
                if default is _MISSING:
                    raise SceneError(f"missing field '{path}'")
                self.defaulted.append(path)
                return default
            node = node[k]
        return node


@dataclass
class Scene:
    """Fully resolved, immutable-by-convention experiment description."""

    name: str
    mesh: TriMesh
    medium: Medium
    source: SpotLight
    model: CameraModel
    op: OperatingPoint
    r_min: float
    eta: float = DEFAULT_ETA
    prior_sigma: float = PRIOR_SIGMA
    condition: bool = True
    n_samples: int = 64
    seed: int = 0
    gen_spec: CandidateGenSpec = field(default_factory=CandidateGenSpec)
    waypoints: list = field(default_factory=list)
    fixed_baseline: float = 0.12
    fixed_azimuth_deg: float = 0.0
    path_position_lo: tuple = (-0.6, -0.35, 0.5)
    path_position_hi: tuple = (0.6, 0.35, 1.1)
    slope_limit: float = 0.7
    path_iterations: int = 20
    config: dict = field(default_factory=dict)
    defaulted: list = field(default_factory=list)


def _waypoints_from_config(wp: dict) -> list:
    if "list" in wp:
        return [Pose.from_dict(d) for d in wp["list"]]
    if "line_x" in wp:
        c = wp["line_x"]
        xs = np.linspace(c["x0"], c["x1"], int(c["n"]))
        return [Pose(position=np.array([x, c["y"], c["z"]]),
                     direction=np.array([0.0, 0.0, -1.0])) for x in xs]
    if "circle" in wp:
        c = wp["circle"]
        cx, cy = c.get("center", (0.0, 0.0))
        out = []
        for i in range(int(c["n"])):
            a = 2.0 * math.pi * i / int(c["n"])
            out.append(Pose(
                position=np.array([cx + c["radius"] * math.cos(a),
                                   cy + c["radius"] * math.sin(a), c["z"]]),
                direction=np.array([0.0, 0.0, -1.0])))
        return out
    raise SceneError("waypoints must define 'list', 'line_x', or 'circle'")


def _mesh_from_config(cfg: SceneConfig) -> TriMesh:
    m = cfg.get("mesh")
    if "obj" in m:
        albedo = m.get("albedo")
        if isinstance(albedo, str):
            albedo = np.loadtxt(albedo, dtype=np.float64)
        return load_obj(m["obj"], albedo=albedo)
    builtin = m.get("builtin")
    if builtin == "hills":
        spec = HillSpec(
            length=float(m.get("length", 1.0)),
            width=float(m.get("width", 0.4)),
            n_x=int(m.get("n_x", 20)), n_y=int(m.get("n_y", 8)),
            bumps=tuple(m.get("bumps", HillSpec().bumps)))
        return make_hills(spec)
    if builtin == "cube_on_plane":
        spec = CubeSpec(
            edge=float(m.get("edge", 0.28)),
            floor_cells_x=int(m.get("floor_cells_x", 10)),
            floor_cells_y=int(m.get("floor_cells_y", 6)))
        return make_cube_on_plane(spec)
    if builtin == "plane":
        return make_plane(size_x=float(m.get("size_x", 2.0)),
                          size_y=float(m.get("size_y", 2.0)),
                          n=int(m.get("n", 4)),
                          z=float(m.get("z", 0.0)),
                          albedo=float(m.get("albedo", 1.0)))
    raise SceneError(f"unknown mesh source {m!r}")


def scene_from_config(data: dict, name: str = "scene") -> Scene:
    """Resolve a configuration dict into a Scene, recording defaults."""
    if not isinstance(data, dict):
        raise SceneError("scene config must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SceneError(f"unsupported schema_version {version!r} "
                         f"(expected {SCHEMA_VERSION})")
    cfg = SceneConfig(data=data)
    mesh = _mesh_from_config(cfg)

    med = cfg.get("medium")
    try:
        medium = Medium(
            beta=float(cfg.get("medium", "beta")),
            g=float(cfg.get("medium", "g")),
            scatter_fraction=float(cfg.get("medium", "scatter_fraction",
                                           default=1.0)),
            kappa_ambient=med.get("kappa_ambient"))
    except RadiometryError as exc:
        raise SceneError(str(exc)) from exc

    try:
        source = SpotLight(
            intensity=float(cfg.get("light", "intensity")),
            half_angle=math.radians(float(cfg.get("light", "half_angle_deg",
                                                  default=40.0))))
        model = CameraModel.from_fov(
            hfov_deg=float(cfg.get("camera", "hfov_deg", default=60.0)),
            width=int(cfg.get("camera", "width", default=320)),
            height=int(cfg.get("camera", "height", default=240)),
            read_noise=float(cfg.get("camera", "read_noise", default=13.1)),
            full_well=float(cfg.get("camera", "full_well", default=24000.0)))
    except (RadiometryError, ValueError) as exc:
        raise SceneError(str(exc)) from exc

    op = OperatingPoint(rho_bar=float(cfg.get("estimation", "rho_bar",
                                              default=0.5)))
    r_min = float(cfg.get("estimation", "r_min"))
    if r_min <= 0:
        raise SceneError("estimation.r_min must be positive")

    planner = data.get("planner", {})
    gen_spec = CandidateGenSpec.from_dict(planner)
    if not planner:
        cfg.defaulted.append("planner")

    waypoints = []
    if "waypoints" in data:
        waypoints = _waypoints_from_config(data["waypoints"])

    path = data.get("path", {})
    bounds = path.get("bounds", {})
    pos_box = bounds.get("position_box",
                         [[-0.6, -0.35, 0.5], [0.6, 0.35, 1.1]])

    scene = Scene(
        name=str(data.get("name", name)),
        mesh=mesh, medium=medium, source=source, model=model, op=op,
        r_min=r_min,
        eta=float(cfg.get("estimation", "eta", default=DEFAULT_ETA)),
        prior_sigma=float(cfg.get("estimation", "prior_sigma",
                                  default=PRIOR_SIGMA)),
        condition=bool(cfg.get("estimation", "condition", default=True)),
        n_samples=int(cfg.get("estimation", "n_samples", default=64)),
        seed=int(data.get("seed", 0)),
        gen_spec=gen_spec,
        waypoints=waypoints,
        fixed_baseline=float(planner.get("fixed_baseline_m", 0.12)),
        fixed_azimuth_deg=float(planner.get("fixed_azimuth_deg", 0.0)),
        path_position_lo=tuple(pos_box[0]),
        path_position_hi=tuple(pos_box[1]),
        slope_limit=float(bounds.get("slope_limit", 0.7)),
        path_iterations=int(path.get("iterations", 20)),
        config=data,
        defaulted=cfg.defaulted,
    )
    return scene


def load_scene(path) -> Scene:
    """Load and resolve a JSON scene file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise SceneError(f"cannot read scene file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene file is not valid JSON: {exc}") from exc
    return scene_from_config(data, name=str(path))


def serialize_scene(scene: Scene) -> dict:
    """The resolved configuration; load_scene of it reproduces the scene."""
    return scene.config


def hills_config(**overrides) -> dict:
    """Default hill-field experiment configuration.

    The terrain is two ridge-like hills elongated across the flight line
    (elliptical support, tall enough that the rigidly offset light of a
    conventional scan casts real shadows onto the leeward flanks and the
    floor behind them); a planner free to move the light around each
    waypoint can light those faces instead.
    """
    data = {
        "schema_version": 1,
        "name": "hills",
        "mesh": {"builtin": "hills", "bumps": [
            {"cx": 0.35, "cy": 0.2, "height": 0.18, "radius": 0.10,
             "ry": 0.42},
            {"cx": 0.65, "cy": 0.2, "height": 0.18, "radius": 0.10,
             "ry": 0.42}]},
        "medium": {"beta": 5.0, "g": 0.6, "scatter_fraction": 1.0,
                   "kappa_ambient": 0.005},
        "light": {"intensity": 6.0e4, "half_angle_deg": 45.0},
        "camera": {"hfov_deg": 60.0, "width": 160, "height": 120},
        "estimation": {"r_min": 20000.0, "rho_bar": 0.5, "eta": 10.0},
        "planner": {"radii": [0.06, 0.12, 0.18, 0.24], "n_azimuths": 8,
                    "tilt_angles_deg": [10.0, 20.0],
                    "fixed_baseline_m": 0.12},
        "waypoints": {"line_x": {"n": 8, "x0": 0.15, "x1": 0.85,
                                 "y": 0.2, "z": 0.4}},
        "path": {"bounds": {"position_box": [[-0.05, -0.1, 0.2],
                                             [1.05, 0.5, 0.8]],
                            "slope_limit": 0.7},
                 "iterations": 20},
        "seed": 0,
    }
    data.update(overrides)
    return data


def cube_config(**overrides) -> dict:
    """Default cube-on-plane path-optimization configuration."""
    data = {
        "schema_version": 1,
        "name": "cube",
        "mesh": {"builtin": "cube_on_plane"},
        "medium": {"beta": 2.5, "g": 0.6, "scatter_fraction": 1.0,
                   "kappa_ambient": 0.005},
        "light": {"intensity": 2.5e5, "half_angle_deg": 45.0},
        "camera": {"hfov_deg": 60.0, "width": 128, "height": 96},
        "estimation": {"r_min": 6000.0, "rho_bar": 0.5, "eta": 10.0},
        "planner": {"radii": [0.09, 0.17, 0.25, 0.34], "n_azimuths": 8,
                    "tilt_angles_deg": [10.0, 20.0],
                    "fixed_baseline_m": 0.34},
        "waypoints": {"circle": {"n": 6, "radius": 0.3, "z": 0.84,
                                 "center": [0.0, 0.0]}},
        "path": {"bounds": {"position_box": [[-0.65, -0.4, 0.5],
                                             [0.65, 0.4, 1.1]],
                            "slope_limit": 0.7},
                 "iterations": 20},
        "seed": 0,
    }
    data.update(overrides)
    return data


def calibration_config(**overrides) -> dict:
    """Flat-sheet scene for medium calibration."""
    data = {
        "schema_version": 1,
        "name": "calibration-plane",
        "mesh": {"builtin": "plane", "size_x": 3.0, "size_y": 3.0, "n": 2,
                 "albedo": 1.0},
        "medium": {"beta": 2.5, "g": 0.6, "scatter_fraction": 1.0,
                   "kappa_ambient": 0.005},
        "light": {"intensity": 2.0e5, "half_angle_deg": 45.0},
        "camera": {"hfov_deg": 60.0, "width": 96, "height": 72},
        "estimation": {"r_min": 1000.0},
        "seed": 0,
    }
    data.update(overrides)
    return data
