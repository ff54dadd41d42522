"""Medium parameter recovery from a flat reference-sheet image.

With a camera and light in a known pose over a flat near-white sheet, the
only unknowns in the image formation model are the medium's extinction
coefficient and phase anisotropy. Both are recovered by minimizing the
Frobenius norm of (rho_ref * E(beta, g) + B(beta, g) - I) over a coarse
grid, then refining with a small pattern search. All geometry along camera
rays and toward the light is independent of (beta, g), so it is extracted
once and each candidate evaluation is a handful of array expressions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, JointView, TriMesh
from .radiometry import (
    AMBIENT_COUPLING,
    AMBIENT_DIST_EPS,
    SpotLight,
    henyey_greenstein,
    make_camera_cache,
)


class CalibrationError(RuntimeError):
    """Raised when the residual surface carries no information."""


@dataclass
class CalibrationSetup:
    """A known joint pose over a flat reference sheet, plus the capture."""

    view: JointView
    image: np.ndarray
    mesh: TriMesh                 # the reference sheet (flat, frame-filling)
    model: CameraModel
    source: SpotLight
    reference_albedo: float = 1.0
    ambient: bool = True
    scatter_fraction: float = 1.0
    kappa_ambient: float | None = None   # None: default coupling * beta
    n_samples: int = 64

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.shape != (self.model.height, self.model.width):
            raise CalibrationError("image size disagrees with camera model")
        if not np.all(np.isfinite(self.image)):
            raise CalibrationError("image contains non-finite values")
        if not 0.0 < self.reference_albedo <= 1.0:
            raise CalibrationError("reference albedo must be in (0, 1]")


@dataclass
class CalibrationResult:
    """Fit outcome; iterates as (beta, g, residual) for convenience."""

    beta: float
    g: float
    residual: float
    g_weakly_identified: bool = False
    grid_best: tuple = (0.0, 0.0)
    n_evaluations: int = 0

    def __iter__(self):
        return iter((self.beta, self.g, self.residual))

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "g": self.g, "residual": self.residual,
            "g_weakly_identified": self.g_weakly_identified,
            "grid_best": list(self.grid_best),
            "n_evaluations": self.n_evaluations,
        }


@dataclass
class _Geometry:
    """(beta, g)-independent per-pixel and per-sample quantities."""

    hit: np.ndarray          # (HW,) bool
    t_hit: np.ndarray        # (N,) camera->surface distance
    d_light: np.ndarray      # (N,) light->surface distance
    cos_i: np.ndarray        # (N,) clamped incidence cosine
    cone_s: np.ndarray       # (N,) surface point inside cone
    amb_on: np.ndarray       # (N,) axis point ahead of source
    d_lz: np.ndarray         # (N,)
    d_sz: np.ndarray         # (N,)
    l: np.ndarray            # (HW, S) sample depths along each ray
    dl: np.ndarray           # (HW,) step lengths
    r: np.ndarray            # (HW, S) sample->light distances
    cos_t: np.ndarray        # (HW, S) scattering angle cosines
    cone_p: np.ndarray       # (HW, S) sample inside cone
    shape: tuple
    seg_bg: np.ndarray       # (HW,) bool background rays (length set by beta)
    rays: np.ndarray
    cam_pos: np.ndarray
    light_pos: np.ndarray
    light_dir: np.ndarray


def _build_geometry(setup: CalibrationSetup) -> _Geometry:
    cc = make_camera_cache(setup.mesh, setup.view.camera, setup.model)
    light = setup.view.light
    pts = cc.points
    rel = pts - light.position
    d = np.linalg.norm(rel, axis=1)
    d = np.where(d < 1e-15, 1e-15, d)
    cos_i = np.maximum(np.einsum("ij,ij->i", cc.normals, -rel) / d, 0.0)
    cone_s = (rel @ light.direction) >= math.cos(
        setup.source.half_angle) * d

    along = rel @ light.direction
    z = light.position[None, :] + along[:, None] * light.direction
    d_lz = np.maximum(along, AMBIENT_DIST_EPS)
    d_sz = np.maximum(np.linalg.norm(pts - z, axis=1), AMBIENT_DIST_EPS)

    s = setup.n_samples
    frac = (np.arange(s) + 0.5) / s
    seg = cc.seg_len.copy()
    bg = ~cc.hit_mask
    seg[bg] = 0.0                      # filled per-beta later
    l = seg[:, None] * frac[None, :]
    dl = seg / s
    pos = (setup.view.camera.position[None, None, :]
           + cc.rays[:, None, :] * l[:, :, None])
    rel_p = pos - light.position
    r = np.linalg.norm(rel_p, axis=2)
    r = np.where(r < 1e-15, 1e-15, r)
    cos_t = -np.einsum("psk,pk->ps", rel_p, cc.rays) / r
    cone_p = (np.einsum("psk,k->ps", rel_p, light.direction)
              >= math.cos(setup.source.half_angle) * r)
    return _Geometry(hit=cc.hit_mask, t_hit=cc.t_hit, d_light=d,
                     cos_i=cos_i, cone_s=cone_s, amb_on=along > 0,
                     d_lz=d_lz, d_sz=d_sz, l=l, dl=dl, r=r, cos_t=cos_t,
                     cone_p=cone_p.astype(np.float64),
                     shape=(setup.model.height, setup.model.width),
                     seg_bg=bg, rays=cc.rays,
                     cam_pos=setup.view.camera.position,
                     light_pos=light.position,
                     light_dir=light.direction)


def _predict(setup: CalibrationSetup, geo: _Geometry, beta: float,
             g: float) -> np.ndarray:
    """rho_ref * E + B for the candidate medium, over the full frame."""
    c0 = setup.source.intensity
    d = geo.d_light
    direct = (c0 * np.exp(-beta * d) / (d * d) * geo.cos_i * geo.cone_s)
    kappa = (setup.kappa_ambient if setup.kappa_ambient is not None
             else AMBIENT_COUPLING * beta)
    if setup.ambient and kappa > 0.0:
        amb = np.where(
            geo.amb_on,
            kappa * c0 * np.exp(-beta * (geo.d_lz + geo.d_sz))
            / (geo.d_lz ** 2 * geo.d_sz ** 2), 0.0)
    else:
        amb = 0.0
    e_hit = (direct + amb) * np.exp(-beta * geo.t_hit)

    sigma_s = setup.scatter_fraction * beta
    if sigma_s > 0.0:
        b_flat = np.einsum(
            "ps,ps->p",
            henyey_greenstein(geo.cos_t, g)
            * np.exp(-beta * geo.r) / (geo.r * geo.r)
            * np.exp(-beta * geo.l) * geo.dl[:, None],
            geo.cone_p) * (sigma_s * c0)
    else:
        b_flat = np.zeros(geo.r.shape[0])

    hw = geo.r.shape[0]
    pred = np.zeros(hw)
    pred[geo.hit] = setup.reference_albedo * e_hit
    pred += b_flat
    # the sensor clamps, so the forward model must clamp identically
    np.clip(pred, 0.0, setup.model.full_well, out=pred)
    return pred.reshape(geo.shape)


def fit_medium(setup: CalibrationSetup,
               beta_bounds: tuple = (0.01, 20.0),
               g_bounds: tuple = (-0.9, 0.9),
               n_beta: int = 16,
               refine_polls: int = 50) -> CalibrationResult:
    """Recover (beta, g) by grid search plus pattern-search refinement.

    The reference sheet must fill the frame; background rays would need a
    beta-dependent integration length that this cache does not rebuild.
    Raises CalibrationError("unidentifiable") when the residual surface is
    flat, and flags g as weakly identified when the residual varies along
    the g axis at the fitted beta by less than 1% relative.
    """
    if not (0.0 < beta_bounds[0] < beta_bounds[1]):
        raise CalibrationError("beta bounds must be positive and ordered")
    if not (-1.0 < g_bounds[0] <= g_bounds[1] < 1.0):
        raise CalibrationError("g bounds must lie inside (-1, 1)")
    geo = _build_geometry(setup)
    frac_bg = float(np.mean(~geo.hit))
    if frac_bg > 0.02:
        raise CalibrationError(
            f"reference sheet covers only {100 * (1 - frac_bg):.1f}% "
            "of the frame; it must fill it")

    n_evals = 0

    def residual(beta: float, g: float) -> float:
        nonlocal n_evals
        n_evals += 1
        diff = _predict(setup, geo, beta, g) - setup.image
        return float(np.sum(diff * diff))

    betas = np.geomspace(beta_bounds[0], beta_bounds[1], n_beta)
    gs = np.arange(-0.9, 0.9 + 1e-9, 0.1)
    gs = gs[(gs >= g_bounds[0] - 1e-9) & (gs <= g_bounds[1] + 1e-9)]
    grid = np.empty((len(betas), len(gs)))
    for i, bb in enumerate(betas):
        for j, gg in enumerate(gs):
            grid[i, j] = residual(bb, gg)

    spread = float(grid.max() - grid.min())
    mean = float(np.abs(grid).mean())
    if spread <= 1e-9 * max(mean, 1e-300):
        raise CalibrationError("unidentifiable")

    i0, j0 = np.unravel_index(np.argmin(grid), grid.shape)
    beta0, g0 = float(betas[i0]), float(gs[j0])

    # compass refinement in (beta, g), beta stepped multiplicatively
    beta_ratio = (betas[1] / betas[0]) if len(betas) > 1 else 1.5
    step_b = math.sqrt(beta_ratio)          # half a grid cell, log scale
    step_g = 0.05
    best = (residual(beta0, g0), beta0, g0)
    polls = 0
    while polls < refine_polls:
        f0, bb, gg = best
        trials = [
            (min(bb * step_b, beta_bounds[1]), gg),
            (max(bb / step_b, beta_bounds[0]), gg),
            (bb, min(gg + step_g, g_bounds[1])),
            (bb, max(gg - step_g, g_bounds[0])),
        ]
        improved = None
        for tb, tg in trials:
            if polls >= refine_polls:
                break
            if tb == bb and tg == gg:
                continue
            f = residual(tb, tg)
            polls += 1
            if f < best[0] and (improved is None or f < improved[0]):
                improved = (f, tb, tg)
        if improved is not None:
            best = improved
        else:
            step_b = math.sqrt(step_b)
            step_g *= 0.5
            if step_b - 1.0 < 1e-6 and step_g < 1e-6:
                break

    f_best, beta_hat, g_hat = best

    # identifiability of g: residual variation along the g axis at beta-hat
    row = np.array([residual(beta_hat, gg) for gg in gs])
    g_weak = (float(row.max() - row.min())
              <= 0.01 * max(float(row.mean()), 1e-300))
    if g_weak:
        warnings.warn("weakly identified g: residual varies along the g "
                      "axis by less than 1% at the fitted beta")
    return CalibrationResult(beta=float(beta_hat), g=float(g_hat),
                             residual=f_best,
                             g_weakly_identified=bool(g_weak),
                             grid_best=(beta0, g0),
                             n_evaluations=n_evals)
