"""Meshes, poses, camera projection and visibility queries.

Coordinate conventions used throughout the package:

  World frame (right-handed):
    - z is up; the scanned surface lives near z = 0 and is viewed from above.
    - positions are in meters.

  Camera frame:
    - the camera looks along its `direction` vector (unit norm).
    - image x (columns) increases along the camera's "right" axis,
      image y (rows) increases along the camera's "down" axis.
    - for a camera looking straight down (direction -z, roll 0), image x
      aligns with world +x and image y with world +y.

Meshes double as the quality-accounting segmentation: segment k is face k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

# Offset applied to shadow-ray origins, as a fraction of the scene diameter.
# Standard bias against self-intersection; scale-free.
SHADOW_EPS_FRACTION = 1e-4


class GeometryError(ValueError):
    """Raised for invalid meshes, poses or degenerate queries."""


# ---------------------------------------------------------------------------
# poses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """Position plus viewing/illumination direction and roll about it."""

    position: np.ndarray          # (3,) meters
    direction: np.ndarray         # (3,) unit vector
    roll: float = 0.0             # radians, about `direction`

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(d))):
            raise GeometryError("pose coordinates must be finite")
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise GeometryError("pose direction must be nonzero")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "direction", d / n)
        object.__setattr__(self, "roll", float(self.roll))

    def basis(self) -> np.ndarray:
        """3x3 matrix whose columns are (right, down, forward)."""
        f = self.direction
        # minimal rotation carrying the canonical forward (0,0,-1) onto f,
        # then roll about f; continuous for all non-(+z) directions
        a = np.array([0.0, 0.0, -1.0])
        c = float(np.dot(a, f))
        # reference right/down chosen so (right, down, forward) stays
        # right-handed: right x down == forward
        if c > 1.0 - 1e-12:
            r0 = np.array([1.0, 0.0, 0.0])
            d0 = np.array([0.0, -1.0, 0.0])
        elif c < -1.0 + 1e-12:
            # looking straight up: pick a fixed 180-degree flip about x
            r0 = np.array([1.0, 0.0, 0.0])
            d0 = np.array([0.0, 1.0, 0.0])
        else:
            axis = np.cross(a, f)
            axis /= np.linalg.norm(axis)
            r0 = _rotate_about(np.array([1.0, 0.0, 0.0]), axis, math.acos(c))
        # exact orthonormal frame: project out f, derive down from the pair
        r0 = r0 - (r0 @ f) * f
        r0 /= np.linalg.norm(r0)
        d0 = np.cross(f, r0)
        if self.roll != 0.0:
            r0 = _rotate_about(r0, f, self.roll)
            d0 = _rotate_about(d0, f, self.roll)
        return np.column_stack([r0, d0, f])

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "direction": [float(v) for v in self.direction],
            "roll": float(self.roll),
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(
            position=np.asarray(d["position"], dtype=np.float64),
            direction=np.asarray(d["direction"], dtype=np.float64),
            roll=float(d.get("roll", 0.0)),
        )


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues rotation; axis must be unit
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)


def direction_from_slopes(a: float, b: float) -> np.ndarray:
    """Downward unit direction with lateral slopes (a, b).

    (a, b) = (0, 0) is nadir; a tilts toward +x, b toward +y. This is the
    2-DOF orientation chart used by the planners (roll stays excluded).
    """
    d = np.array([a, b, -1.0])
    return d / np.linalg.norm(d)


def slopes_from_direction(d: np.ndarray) -> tuple[float, float]:
    if d[2] >= -1e-9:
        raise GeometryError("direction must point downward for slope chart")
    return float(d[0] / -d[2]), float(d[1] / -d[2])


@dataclass(frozen=True)
class JointView:
    """Camera and light poses for one capture."""

    camera: Pose
    light: Pose
    t: int = 0

    def to_dict(self) -> dict:
        return {"t": int(self.t), "camera": self.camera.to_dict(),
                "light": self.light.to_dict()}

    @staticmethod
    def from_dict(d: dict) -> "JointView":
        return JointView(camera=Pose.from_dict(d["camera"]),
                         light=Pose.from_dict(d["light"]),
                         t=int(d.get("t", 0)))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera plus the sensor's noise/saturation characteristics."""

    focal_px: float
    width: int
    height: int
    cx: float | None = None
    cy: float | None = None
    read_noise: float = 13.1       # photoelectrons, rms
    full_well: float = 24000.0     # photoelectrons

    def __post_init__(self):
        if self.focal_px <= 0:
            raise GeometryError("focal length must be positive")
        if self.read_noise < 0 or self.full_well <= 0:
            raise GeometryError("invalid sensor noise model")
        if self.cx is None:
            object.__setattr__(self, "cx", (self.width - 1) / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", (self.height - 1) / 2.0)

    @staticmethod
    def from_fov(hfov_deg: float, width: int, height: int, **kw) -> "CameraModel":
        focal = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return CameraModel(focal_px=focal, width=width, height=height, **kw)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height


# ---------------------------------------------------------------------------
# triangle mesh
# ---------------------------------------------------------------------------


@dataclass
class TriMesh:
    """Triangulated surface with per-face ground-truth albedo.

    Faces are the segmentation unit: all per-segment bookkeeping (areas,
    patch counts, quality) is per face.
    """

    vertices: np.ndarray            # (V, 3) float64
    faces: np.ndarray               # (F, 3) int32
    albedo: np.ndarray              # (F,) in [0, 1]
    _areas: np.ndarray = field(default=None, repr=False)
    _normals: np.ndarray = field(default=None, repr=False)
    _bvh: "BVH" = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError("vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise GeometryError("faces must be (F, 3)")
        if self.n_faces == 0:
            raise GeometryError("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise GeometryError("face indices out of range")
        self.albedo = np.asarray(self.albedo, dtype=np.float64).reshape(-1)
        if len(self.albedo) != self.n_faces:
            raise GeometryError("albedo must be per-face")
        if np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise GeometryError("albedo values must lie in [0, 1]")
        v0, e1, e2 = self._edges()
        cr = np.cross(e1, e2)
        self._areas = 0.5 * np.linalg.norm(cr, axis=1)
        if np.any(self._areas <= 0):
            raise GeometryError("mesh contains degenerate (zero-area) faces")
        self._normals = cr / (2.0 * self._areas[:, None])

    def _edges(self):
        v = self.vertices
        f = self.faces
        v0 = v[f[:, 0]]
        return v0, v[f[:, 1]] - v0, v[f[:, 2]] - v0

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def areas(self) -> np.ndarray:
        return self._areas

    @property
    def normals(self) -> np.ndarray:
        """Per-face unit normals, orientation given by vertex winding."""
        return self._normals

    @property
    def total_area(self) -> float:
        return float(self._areas.sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diameter(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def patch_counts(self, r_min: float) -> np.ndarray:
        """Patches (texels) per face at the required texture resolution.

        ceil(area * r_min): at least one patch per face, and equal to the
        texel allocation used by the fused texture map.
        """
        if r_min <= 0:
            raise GeometryError("r_min must be positive")
        return np.maximum(1, np.ceil(self._areas * r_min)).astype(np.int64)

    def bvh(self) -> "BVH":
        if self._bvh is None:
            self._bvh = BVH.build(self)
        return self._bvh

    def centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)


# ---------------------------------------------------------------------------
# BVH construction (python) and traversal kernels (numba)
# ---------------------------------------------------------------------------


@dataclass
class BVH:
    """Flat-array median-split BVH over mesh triangles."""

    node_min: np.ndarray     # (N, 3)
    node_max: np.ndarray     # (N, 3)
    node_left: np.ndarray    # (N,) child index, -1 for leaf
    node_right: np.ndarray   # (N,)
    node_start: np.ndarray   # (N,) into prim order (leaves)
    node_count: np.ndarray   # (N,)
    prim: np.ndarray         # (F,) triangle indices
    tri_v0: np.ndarray       # (F, 3)
    tri_e1: np.ndarray
    tri_e2: np.ndarray

    LEAF_SIZE = 4

    @staticmethod
    def build(mesh: TriMesh) -> "BVH":
        v0, e1, e2 = mesh._edges()
        tris = mesh.vertices[mesh.faces]          # (F, 3, 3)
        tmin = tris.min(axis=1)
        tmax = tris.max(axis=1)
        cent = tris.mean(axis=1)
        order = np.arange(mesh.n_faces, dtype=np.int64)

        mins, maxs, lefts, rights, starts, counts = [], [], [], [], [], []

        def emit(idx: np.ndarray) -> int:
            node = len(mins)
            mins.append(tmin[idx].min(axis=0))
            maxs.append(tmax[idx].max(axis=0))
            lefts.append(-1)
            rights.append(-1)
            starts.append(-1)
            counts.append(0)
            return node

        # iterative build; stack of (node_id, lo, hi) ranges into `order`
        root = emit(order)
        stack = [(root, 0, len(order))]
        while stack:
            node, lo, hi = stack.pop()
            idx = order[lo:hi]
            if hi - lo <= BVH.LEAF_SIZE:
                starts[node] = lo
                counts[node] = hi - lo
                continue
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (hi - lo) // 2
            part = np.argpartition(c[:, axis], mid)
            order[lo:hi] = idx[part]
            lnode = emit(order[lo:lo + mid])
            rnode = emit(order[lo + mid:hi])
            lefts[node] = lnode
            rights[node] = rnode
            stack.append((lnode, lo, lo + mid))
            stack.append((rnode, lo + mid, hi))

        return BVH(
            node_min=np.asarray(mins, dtype=np.float64),
            node_max=np.asarray(maxs, dtype=np.float64),
            node_left=np.asarray(lefts, dtype=np.int64),
            node_right=np.asarray(rights, dtype=np.int64),
            node_start=np.asarray(starts, dtype=np.int64),
            node_count=np.asarray(counts, dtype=np.int64),
            prim=order.astype(np.int64),
            tri_v0=np.ascontiguousarray(v0),
            tri_e1=np.ascontiguousarray(e1),
            tri_e2=np.ascontiguousarray(e2),
        )

    def _args(self):
        return (self.node_min, self.node_max, self.node_left, self.node_right,
                self.node_start, self.node_count, self.prim,
                self.tri_v0, self.tri_e1, self.tri_e2)

    def cast_nearest(self, origins: np.ndarray, dirs: np.ndarray,
                     tmax: float = np.inf):
        """Nearest hit per ray.

        Returns (t, face, u, v): face is -1 where the ray misses; (u, v)
        are the hit's barycentric coordinates on edges (v1-v0, v2-v0).
        """
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        return _cast_nearest(origins, dirs, float(tmax), *self._args())

    def cast_any(self, origins: np.ndarray, dirs: np.ndarray,
                 tmax: np.ndarray) -> np.ndarray:
        """True where any intersection exists with t in (eps, tmax)."""
        origins = np.ascontiguousarray(origins, dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        tmax = np.ascontiguousarray(tmax, dtype=np.float64)
        return _cast_any(origins, dirs, tmax, *self._args())


@njit(cache=True, inline="always")
def _ray_tri(ox, oy, oz, dx, dy, dz, v0, e1, e2, i):
    # Moller-Trumbore, two-sided
    p0 = dy * e2[i, 2] - dz * e2[i, 1]
    p1 = dz * e2[i, 0] - dx * e2[i, 2]
    p2 = dx * e2[i, 1] - dy * e2[i, 0]
    det = e1[i, 0] * p0 + e1[i, 1] * p1 + e1[i, 2] * p2
    if -1e-14 < det < 1e-14:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    tx = ox - v0[i, 0]
    ty = oy - v0[i, 1]
    tz = oz - v0[i, 2]
    u = (tx * p0 + ty * p1 + tz * p2) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    q0 = ty * e1[i, 2] - tz * e1[i, 1]
    q1 = tz * e1[i, 0] - tx * e1[i, 2]
    q2 = tx * e1[i, 1] - ty * e1[i, 0]
    v = (dx * q0 + dy * q1 + dz * q2) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2[i, 0] * q0 + e2[i, 1] * q1 + e2[i, 2] * q2) * inv
    return t, u, v


@njit(cache=True, inline="always")
def _slab_hit(ox, oy, oz, dx, dy, dz, bmin, bmax, n, tmax):
    t0 = 0.0
    t1 = tmax
    for a in range(3):
        o = ox if a == 0 else (oy if a == 1 else oz)
        d = dx if a == 0 else (dy if a == 1 else dz)
        lo = bmin[n, a]
        hi = bmax[n, a]
        if abs(d) < 1e-300:
            if o < lo or o > hi:
                return False
        else:
            inv = 1.0 / d
            ta = (lo - o) * inv
            tb = (hi - o) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@njit(cache=True, parallel=True)
def _cast_nearest(origins, dirs, tlimit, nmin, nmax, nleft, nright,
                  nstart, ncount, prim, v0, e1, e2):
    n = origins.shape[0]
    t_out = np.full(n, np.inf)
    f_out = np.full(n, -1, dtype=np.int64)
    u_out = np.zeros(n)
    v_out = np.zeros(n)
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best_t = tlimit
        best_f = -1
        best_u = 0.0
        best_v = 0.0
        stack = np.empty(64, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if not _slab_hit(ox, oy, oz, dx, dy, dz, nmin, nmax, node, best_t):
                continue
            if nleft[node] < 0:
                s = nstart[node]
                for k in range(ncount[node]):
                    tri = prim[s + k]
                    t, u, v = _ray_tri(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri)
                    if 1e-9 < t < best_t:
                        best_t = t
                        best_f = tri
                        best_u = u
                        best_v = v
            else:
                stack[top] = nleft[node]
                top += 1
                stack[top] = nright[node]
                top += 1
        if best_f >= 0:
            t_out[r] = best_t
            f_out[r] = best_f
            u_out[r] = best_u
            v_out[r] = best_v
    return t_out, f_out, u_out, v_out


@njit(cache=True, parallel=True)
def _cast_any(origins, dirs, tmax, nmin, nmax, nleft, nright,
              nstart, ncount, prim, v0, e1, e2):
    n = origins.shape[0]
    hit = np.zeros(n, dtype=np.bool_)
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        limit = tmax[r]
        stack = np.empty(64, dtype=np.int64)
        top = 0
        stack[top] = 0
        top += 1
        found = False
        while top > 0 and not found:
            top -= 1
            node = stack[top]
            if not _slab_hit(ox, oy, oz, dx, dy, dz, nmin, nmax, node, limit):
                continue
            if nleft[node] < 0:
                s = nstart[node]
                for k in range(ncount[node]):
                    tri = prim[s + k]
                    t, u, v = _ray_tri(ox, oy, oz, dx, dy, dz, v0, e1, e2, tri)
                    if 1e-9 < t < limit:
                        found = True
                        break
            else:
                stack[top] = nleft[node]
                top += 1
                stack[top] = nright[node]
                top += 1
        hit[r] = found
    return hit


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


@dataclass
class ProjectionMap:
    """Per-pixel surface assignment for one camera pose.

    face_id is -1 on background pixels. (bary_u, bary_v) locate each hit
    inside its face on the (v1-v0, v2-v0) edge basis; t_hit is the ray
    parameter (meters, unit ray directions).
    """

    face_id: np.ndarray        # (H, W) int64
    bary_u: np.ndarray         # (H, W)
    bary_v: np.ndarray         # (H, W)
    t_hit: np.ndarray          # (H, W), inf on background
    pixel_counts: np.ndarray   # (F,) pixels per face

    @property
    def shape(self) -> tuple[int, int]:
        return self.face_id.shape

    @property
    def visible(self) -> np.ndarray:
        """(F,) bool: face projects to at least one pixel."""
        return self.pixel_counts > 0

    @property
    def n_background(self) -> int:
        return int(np.count_nonzero(self.face_id < 0))

    def pixels_of_face(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.face_id == k)


def pixel_rays(camera: Pose, model: CameraModel) -> np.ndarray:
    """Unit ray directions through all pixel centers, shape (H*W, 3)."""
    xs = (np.arange(model.width) - model.cx) / model.focal_px
    ys = (np.arange(model.height) - model.cy) / model.focal_px
    gx, gy = np.meshgrid(xs, ys)
    basis = camera.basis()                       # columns: right, down, fwd
    d = (gx[..., None] * basis[:, 0] + gy[..., None] * basis[:, 1]
         + basis[:, 2])
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d.reshape(-1, 3)


def project(mesh: TriMesh, camera: Pose, model: CameraModel) -> ProjectionMap:
    """Cast one ray per pixel center and record the nearest face hit."""
    dirs = pixel_rays(camera, model)
    origins = np.broadcast_to(camera.position, dirs.shape)
    t, f, u, v = mesh.bvh().cast_nearest(origins, dirs)
    shape = (model.height, model.width)
    counts = np.bincount(f[f >= 0], minlength=mesh.n_faces).astype(np.int64)
    return ProjectionMap(
        face_id=f.reshape(shape),
        bary_u=u.reshape(shape),
        bary_v=v.reshape(shape),
        t_hit=t.reshape(shape),
        pixel_counts=counts,
    )


def inside_cone(light: Pose, half_angle: float, points: np.ndarray) -> np.ndarray:
    """True where points fall inside the light's (hard-edged) cone."""
    d = np.atleast_2d(points) - light.position
    r = np.linalg.norm(d, axis=-1)
    r = np.where(r < 1e-15, 1e-15, r)
    return (d @ light.direction) >= math.cos(half_angle) * r


def light_visibility(mesh: TriMesh, light: Pose, half_angle: float,
                     points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Unshadowed-and-in-cone test for surface points.

    Points are nudged along their normals before casting the shadow ray so
    that the face they sit on does not occlude them.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    nrm = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    eps = SHADOW_EPS_FRACTION * mesh.diameter
    origins = pts + eps * nrm
    to_light = light.position - origins
    dist = np.linalg.norm(to_light, axis=-1)
    dist = np.where(dist < 1e-15, 1e-15, dist)
    dirs = to_light / dist[:, None]
    blocked = mesh.bvh().cast_any(origins, dirs, dist - eps)
    return ~blocked & inside_cone(light, half_angle, pts)


def segment_resolution(pm: ProjectionMap, mesh: TriMesh, k: int) -> float:
    """Pixels per square meter achieved on face k; 0.0 when not observed."""
    n = int(pm.pixel_counts[k])
    if n == 0:
        return 0.0
    return n / float(mesh.areas[k])


def segment_resolutions(pm: ProjectionMap, mesh: TriMesh) -> np.ndarray:
    """Vector of segment_resolution over all faces (0 where unobserved)."""
    return pm.pixel_counts / mesh.areas


# ---------------------------------------------------------------------------
# OBJ ingestion
# ---------------------------------------------------------------------------


def load_obj(path, albedo=None) -> TriMesh:
    """Load a triangles-only Wavefront OBJ.

    `albedo` may be a scalar, a per-face sequence, or None (defaults to 0.5).
    Faces with more than three vertices are rejected.
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise GeometryError(
                        f"{path}:{ln}: only triangular faces are supported "
                        f"(got {len(refs)} vertices)")
                idx = []
                for ref in refs:
                    i = int(ref.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                faces.append(idx)
    if not faces:
        raise GeometryError(f"{path}: no faces found")
    if albedo is None:
        albedo = 0.5
    albedo = np.broadcast_to(np.asarray(albedo, dtype=np.float64),
                             (len(faces),)).copy()
    return TriMesh(vertices=np.asarray(vertices, dtype=np.float64),
                   faces=np.asarray(faces, dtype=np.int32),
                   albedo=albedo)
