import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import scatterscan as ss
from scatterscan.geometry import (direction_from_slopes, pixel_rays,
                                  slopes_from_direction)

from .oracles import brute_cast, brute_occluded

finite = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False,
                   allow_infinity=False)
slope = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False,
                  allow_infinity=False)


# ---------------------------------------------------------------------------
# poses and direction encoding
# ---------------------------------------------------------------------------


@given(finite, finite, st.floats(min_value=-4.0, max_value=-0.1))
def test_pose_direction_normalized(x, y, z):
    p = ss.Pose(position=np.zeros(3), direction=np.array([x, y, z]))
    assert np.isclose(np.linalg.norm(p.direction), 1.0)


@given(finite, finite, st.floats(min_value=-4.0, max_value=-0.1),
       st.floats(min_value=-math.pi, max_value=math.pi))
def test_pose_basis_orthonormal(x, y, z, roll):
    p = ss.Pose(position=np.zeros(3), direction=np.array([x, y, z]),
                roll=roll)
    r, d, f = p.basis()
    m = np.stack([r, d, f])
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
    assert np.allclose(np.cross(r, d), f, atol=1e-12)


@given(slope, slope)
def test_slopes_round_trip(a, b):
    d = direction_from_slopes(a, b)
    assert np.isclose(np.linalg.norm(d), 1.0)
    assert d[2] < 0
    a2, b2 = slopes_from_direction(d)
    assert math.isclose(a2, a, abs_tol=1e-9)
    assert math.isclose(b2, b, abs_tol=1e-9)


def test_zero_direction_rejected():
    with pytest.raises(ss.GeometryError):
        ss.Pose(position=np.zeros(3), direction=np.zeros(3))


# ---------------------------------------------------------------------------
# mesh validation and derived quantities
# ---------------------------------------------------------------------------


def test_mesh_validation_errors():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(ss.GeometryError):
        ss.TriMesh(vertices=verts, faces=np.array([[0, 1, 5]]),
                   albedo=np.array([0.5]))
    with pytest.raises(ss.GeometryError):
        ss.TriMesh(vertices=verts, faces=np.array([[0, 1, 2]]),
                   albedo=np.array([1.5]))
    with pytest.raises(ss.GeometryError):
        ss.TriMesh(vertices=verts, faces=np.array([[0, 1, 2]]),
                    albedo=np.array([0.5, 0.5]))


def test_areas_and_normals(two_tri_mesh):
    assert np.allclose(two_tri_mesh.areas, 0.5)
    assert np.allclose(two_tri_mesh.normals, [[0, 0, 1], [0, 0, 1]])


def test_patch_counts_formula(two_tri_mesh):
    lam = two_tri_mesh.patch_counts(3000.0)
    assert np.array_equal(lam, np.ceil(two_tri_mesh.areas * 3000.0))
    # floor of one patch even for r_min -> 0
    assert np.array_equal(two_tri_mesh.patch_counts(1e-9), [1, 1])


# ---------------------------------------------------------------------------
# projection against the brute-force oracle
# ---------------------------------------------------------------------------


@st.composite
def random_mesh(draw):
    n_tri = draw(st.integers(min_value=1, max_value=6))
    pts = draw(st.lists(
        st.tuples(finite, finite,
                  st.floats(min_value=-0.5, max_value=0.5)),
        min_size=3 * n_tri, max_size=3 * n_tri))
    verts = np.asarray(pts, dtype=np.float64)
    # discard degenerate triangles to keep areas positive
    faces = np.arange(3 * n_tri).reshape(-1, 3)
    e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
    e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    keep = areas > 1e-6
    if not keep.any():
        verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                          [0.0, 1.0, 0.0]])
        faces = np.array([[0, 1, 2]])
        keep = np.array([True])
    faces = faces[keep]
    used = np.unique(faces)
    remap = np.zeros(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return ss.TriMesh(vertices=verts[used], faces=remap[faces],
                      albedo=np.full(len(faces), 0.5))


@settings(max_examples=25, deadline=None)
@given(random_mesh(), st.integers(min_value=0, max_value=10_000))
def test_bvh_matches_brute_force(mesh, seed):
    rng = np.random.default_rng(seed)
    origins = rng.uniform(-2, 2, size=(8, 3)) + np.array([0, 0, 3.0])
    dirs = rng.normal(size=(8, 3))
    dirs[:, 2] = -np.abs(dirs[:, 2]) - 0.1
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, f, u, v = mesh.bvh().cast_nearest(origins, dirs)
    for i in range(len(origins)):
        bt, bf, bu, bv = brute_cast(mesh, origins[i], dirs[i])
        if bf < 0:
            assert f[i] < 0
        else:
            assert f[i] == bf
            assert math.isclose(t[i], bt, rel_tol=1e-9)
            assert math.isclose(u[i], bu, abs_tol=1e-9)
            assert math.isclose(v[i], bv, abs_tol=1e-9)


def test_project_hits_and_barycentrics(hills_scene):
    sc = hills_scene
    cam = sc.waypoints[1]
    pm = ss.project(sc.mesh, cam, sc.model)
    vis = pm.face_id >= 0
    assert vis.mean() > 0.9
    assert np.all(pm.bary_u[vis] >= -1e-12)
    assert np.all(pm.bary_v[vis] >= -1e-12)
    assert np.all(pm.bary_u[vis] + pm.bary_v[vis] <= 1.0 + 1e-12)
    # spot-check four pixels against the oracle
    rays = pixel_rays(cam, sc.model)
    fid = pm.face_id.ravel()
    t_hit = pm.t_hit.ravel()
    rng = np.random.default_rng(0)
    for i in rng.choice(np.flatnonzero(fid >= 0), 4, replace=False):
        bt, bf, _, _ = brute_cast(sc.mesh, cam.position, rays[i])
        assert fid[i] == bf
        assert math.isclose(t_hit[i], bt, rel_tol=1e-9)


def test_pixel_rays_unit_and_center(hills_scene):
    sc = hills_scene
    cam = ss.Pose(position=np.array([0.5, 0.2, 0.4]),
                  direction=np.array([0.0, 0.0, -1.0]))
    rays = pixel_rays(cam, sc.model)
    assert np.allclose(np.linalg.norm(rays, axis=1), 1.0)
    # central pixel ray is nearly the optical axis
    c = (sc.model.height // 2) * sc.model.width + sc.model.width // 2
    assert rays[c] @ cam.direction > 0.999


def test_light_visibility_against_oracle(hills_scene):
    sc = hills_scene
    cam = sc.waypoints[0]
    light = ss.Pose(position=cam.position + np.array([0.12, 0.0, 0.0]),
                    direction=np.array([0.0, 0.0, -1.0]))
    pm = ss.project(sc.mesh, cam, sc.model)
    fid = pm.face_id.ravel()
    t_hit = pm.t_hit.ravel()
    rays = pixel_rays(cam, sc.model)
    idx = np.flatnonzero(fid >= 0)
    rng = np.random.default_rng(1)
    pick = rng.choice(idx, 12, replace=False)
    pts = cam.position[None, :] + t_hit[pick, None] * rays[pick]
    nrm = sc.mesh.normals[fid[pick]]
    vis = ss.light_visibility(sc.mesh, light, sc.source.half_angle, pts, nrm)
    eps = 1e-4 * sc.mesh.diameter
    for j, i in enumerate(pick):
        o = pts[j] + eps * nrm[j]
        to_l = light.position - o
        d = np.linalg.norm(to_l)
        occluded = brute_occluded(sc.mesh, o, to_l / d, d - eps)
        rel = pts[j] - light.position
        cone = (rel @ light.direction
                >= math.cos(sc.source.half_angle) * np.linalg.norm(rel))
        assert vis[j] == ((not occluded) and cone)


def test_inside_cone_boundary():
    light = ss.Pose(position=np.zeros(3),
                    direction=np.array([0.0, 0.0, -1.0]))
    pts = np.array([
        [0.0, 0.0, -1.0],              # on axis
        [math.tan(0.3) * 0.999, 0.0, -1.0],
        [math.tan(0.3) * 1.001, 0.0, -1.0],
        [0.0, 0.0, 1.0],               # behind
    ])
    inside = ss.inside_cone(light, 0.3, pts)
    assert inside.tolist() == [True, True, False, False]


def test_segment_resolution_unobserved(two_tri_mesh, hills_scene):
    from scatterscan.geometry import segment_resolutions

    cam = ss.Pose(position=np.array([0.5, 0.5, 1.0]),
                  direction=np.array([0.0, 0.0, -1.0]))
    pm = ss.project(two_tri_mesh, cam, hills_scene.model)
    res = segment_resolutions(pm, two_tri_mesh)
    assert res.shape == (2,)
    assert np.all(res > 0)
    assert np.allclose(res, pm.pixel_counts / two_tri_mesh.areas)
    assert ss.segment_resolution(pm, two_tri_mesh, 0) == res[0]
    # camera looking away sees nothing
    cam_away = ss.Pose(position=np.array([0.5, 0.5, 1.0]),
                       direction=np.array([0.0, 0.0, 1.0]),)
    pm2 = ss.project(two_tri_mesh, cam_away, hills_scene.model)
    assert ss.segment_resolution(pm2, two_tri_mesh, 0) == 0.0
    assert ss.segment_resolution(pm2, two_tri_mesh, 1) == 0.0


# ---------------------------------------------------------------------------
# OBJ loading
# ---------------------------------------------------------------------------


def test_load_obj_round_trip(tmp_path, two_tri_mesh):
    p = tmp_path / "m.obj"
    lines = ["# test"]
    for v in two_tri_mesh.vertices:
        lines.append(f"v {v[0]} {v[1]} {v[2]}")
    for f in two_tri_mesh.faces:
        lines.append(f"f {f[0]+1} {f[1]+1} {f[2]+1}")
    p.write_text("\n".join(lines) + "\n")
    m = ss.load_obj(p, albedo=[0.4, 0.6])
    assert np.allclose(m.vertices, two_tri_mesh.vertices)
    assert np.array_equal(m.faces, two_tri_mesh.faces)
    assert np.allclose(m.albedo, [0.4, 0.6])


def test_load_obj_rejects_quads(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(ss.GeometryError):
        ss.load_obj(p)


def test_camera_model_from_fov():
    m = ss.CameraModel.from_fov(hfov_deg=60.0, width=100, height=50)
    assert math.isclose(m.focal_px, 50.0 / math.tan(math.radians(30.0)))
    # principal point sits at the central pixel center
    assert m.cx == 49.5 and m.cy == 24.5
