import json

import numpy as np
import pytest

import scatterscan as ss
from scatterscan.scenes import cube_config, hills_config, scene_from_config


def tiny_hills(**over):
    """Downscaled hill scene for fast tests."""
    cfg = hills_config()
    cfg["camera"]["width"] = 64
    cfg["camera"]["height"] = 48
    cfg["waypoints"]["line_x"]["n"] = 3
    cfg["planner"]["radii"] = [0.06, 0.12]
    cfg["planner"]["tilt_angles_deg"] = [10.0]
    cfg["estimation"]["r_min"] = 3000.0
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    return cfg


@pytest.fixture(scope="session")
def hills_scene():
    return scene_from_config(tiny_hills())


@pytest.fixture(scope="session")
def cube_scene():
    cfg = cube_config()
    cfg["camera"]["width"] = 64
    cfg["camera"]["height"] = 48
    cfg["estimation"]["r_min"] = 2000.0
    return scene_from_config(cfg)


@pytest.fixture(scope="session")
def hills_frame(hills_scene):
    """One noiseless frame of the tiny hill scene at the fixed baseline."""
    sc = hills_scene
    view = ss.fixed_baseline_views(sc.mesh, sc.waypoints[:1],
                                   sc.fixed_baseline)[0]
    return ss.render(sc.mesh, view, sc.model, sc.source, sc.medium,
                     seed=None, n_samples=sc.n_samples)


@pytest.fixture()
def two_tri_mesh():
    """Two right triangles tiling the unit square at z=0."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                      [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    return ss.TriMesh(vertices=verts, faces=faces,
                      albedo=np.array([0.4, 0.6]))


def write_scene(tmp_path, cfg, name="scene.json"):
    p = tmp_path / name
    with open(p, "w") as fh:
        json.dump(cfg, fh)
    return str(p)
