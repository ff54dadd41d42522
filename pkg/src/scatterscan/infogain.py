"""Gaussian entropy, information gain, and prospective view quality.

For Gaussian estimates, H = (1/2) ln(2*pi*e*var) and the gain of a new
measurement is half the log ratio of variances. A candidate view's worth is
predicted per face: accumulate model quality Q_k (inverse variance of the
face-level measurement the view would produce) and weight by the face's
texel count lambda_k:

    IG(view) = sum_k (lambda_k / 2) * ln(1 + Q_k / Q_ml_k)

All predictions use the operating-point albedo, never the ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .estimation import DEFAULT_ETA, OperatingPoint, TextureMap, face_quality
from .geometry import CameraModel, JointView, TriMesh
from .radiometry import (
    CameraCache,
    LightCache,
    Medium,
    SpotLight,
    make_camera_cache,
    make_light_cache,
    model_images,
)

LN2 = math.log(2.0)


class InfoGainError(ValueError):
    """Raised for nonpositive variances."""


def gaussian_entropy(var):
    """Differential entropy (nats) of a Gaussian with the given variance."""
    v = np.asarray(var, dtype=np.float64)
    if np.any(v <= 0):
        raise InfoGainError("variance must be positive")
    out = 0.5 * np.log(2.0 * math.pi * math.e * v)
    return float(out) if np.isscalar(var) else out


def info_gain(var_before, var_after):
    """Entropy reduction (nats) when variance shrinks from before to after."""
    vb = np.asarray(var_before, dtype=np.float64)
    va = np.asarray(var_after, dtype=np.float64)
    if np.any(vb <= 0) or np.any(va <= 0):
        raise InfoGainError("variance must be positive")
    out = 0.5 * np.log(vb / va)
    return float(out) if np.isscalar(var_before) else out


@dataclass
class GainReport:
    """Predicted gain of one candidate view."""

    total: float                  # nats, sum over faces of lambda * per-face
    per_face: np.ndarray          # (F,) nats per patch of each face
    quality: np.ndarray           # (F,) prospective Q_k of the view
    unobserved: np.ndarray        # (F,) bool, face contributes nothing

    @property
    def total_bits(self) -> float:
        return self.total / LN2

    def to_dict(self) -> dict:
        return {
            "total_nats": float(self.total),
            "total_bits": float(self.total_bits),
            "faces": [
                {
                    "face": int(k),
                    "ig_per_patch_nats": float(self.per_face[k]),
                    "prospective_quality": float(self.quality[k]),
                    "observed": bool(not self.unobserved[k]),
                }
                for k in range(len(self.per_face))
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def model_sigma(e: np.ndarray, b: np.ndarray, op: OperatingPoint,
                model: CameraModel, e_min: float | None = None):
    """Model noise st.dev. of the descattered estimate, and pixel usability."""
    if e_min is None:
        e_min = model.read_noise
    rn2 = model.read_noise ** 2
    denom = np.maximum(e, e_min)
    sigma = np.sqrt((op.rho_bar * e + b + rn2) / (denom * denom))
    usable = (e >= e_min) & (op.rho_bar * e + b < model.full_well)
    return sigma, usable


def prospective_quality(mesh: TriMesh, view: JointView, model: CameraModel,
                        source: SpotLight, medium: Medium,
                        op: OperatingPoint, r_min: float,
                        eta: float = DEFAULT_ETA, ambient: bool = True,
                        k: int | None = None, n_samples: int = 64,
                        cam_cache: CameraCache | None = None,
                        light_cache: LightCache | None = None):
    """Model quality Q_k a candidate view would contribute to each face.

    Renders the noise-free model images at the operating point and converts
    per-pixel uncertainty into per-face quality. Returns the full (F,)
    vector, or one face's value if k is given. Invisible faces get 0.
    """
    if cam_cache is None:
        cam_cache = make_camera_cache(mesh, view.camera, model)
    if light_cache is None:
        light_cache = make_light_cache(mesh, cam_cache, view.light.position,
                                       source, medium, n_samples=n_samples)
    e, b, _ = model_images(mesh, cam_cache, light_cache, view.light, source,
                           medium, ambient=ambient)
    sigma, usable = model_sigma(e, b, op, model)
    usable &= cam_cache.pm.face_id >= 0
    q = face_quality(sigma, usable, cam_cache.pm, mesh, r_min, eta)
    return q if k is None else float(q[k])


def gain_from_quality(texture: TextureMap, quality: np.ndarray) -> GainReport:
    """Predicted IG of a view given its per-face quality vector."""
    per_face = 0.5 * np.log1p(quality / texture.q_face)
    total = float(np.sum(texture.lam * per_face))
    return GainReport(total=total, per_face=per_face, quality=quality,
                      unobserved=quality <= 0)


def view_gain(mesh: TriMesh, texture: TextureMap, view: JointView,
              model: CameraModel, source: SpotLight, medium: Medium,
              op: OperatingPoint, ambient: bool = True,
              n_samples: int = 64,
              cam_cache: CameraCache | None = None,
              light_cache: LightCache | None = None) -> GainReport:
    """Predicted information gain of one candidate view (texture untouched)."""
    if texture.rule != "ml":
        raise InfoGainError("view gain is defined for ML-fused textures")
    q = prospective_quality(mesh, view, model, source, medium, op,
                            texture.r_min, texture.eta, ambient=ambient,
                            n_samples=n_samples, cam_cache=cam_cache,
                            light_cache=light_cache)
    return gain_from_quality(texture, q)


def path_gain(mesh: TriMesh, texture: TextureMap, path, model: CameraModel,
              source: SpotLight, medium: Medium, op: OperatingPoint,
              ambient: bool = True, n_samples: int = 64,
              quality_fn=None) -> float:
    """Predicted IG (nats) of executing a whole pose sequence.

    Accumulates model quality over the path without noise realization and
    returns sum_k (lambda_k/2) ln(q_end / q_start). quality_fn overrides the
    per-view quality computation (used by the path optimizer's cache).
    """
    if len(path) == 0:
        raise InfoGainError("path must contain at least one view")
    q_start = texture.q_face.copy()
    q = q_start.copy()
    for view in path:
        if quality_fn is not None:
            q = q + quality_fn(view)
        else:
            q = q + prospective_quality(mesh, view, model, source, medium,
                                        op, texture.r_min, texture.eta,
                                        ambient=ambient,
                                        n_samples=n_samples)
    return float(np.sum(0.5 * texture.lam * np.log(q / q_start)))
