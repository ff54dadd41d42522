"""Image formation through a single-scattering medium.

For a camera C, spot light L, and surface point s, the sensed value is

    I = rho * E + B + n

where E is the surface irradiance after the return trip through the medium,
B is the light backscattered toward the camera along the pixel's ray, and n
is shot + read noise. E itself splits into a direct (collimated) term and a
weak ambient term that models light leaking around occluders:

    E  = (D + A) * exp(-beta * |s - C|)
    D  = C0 * exp(-beta * |L - s|) / |L - s|^2 * max(0, cos theta_i) * vis(s)
    A  = kappa_A * C0 * exp(-beta * (|L - z| + |s - z|))
         / (|L - z|^2 * |s - z|^2)

with z the closest point to s on the light's axis ray, and vis(s) the hard
shadow/cone test. The ambient term deliberately has no visibility test: it
is the crude stand-in for multiply-scattered light that reaches shadowed
points. Backscatter integrates the phase-weighted in-beam radiance along
the pixel ray with midpoint quadrature.

All radiometric quantities are in photoelectron units at the sensor, so the
noise model applies directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CameraModel,
    JointView,
    Pose,
    ProjectionMap,
    TriMesh,
    inside_cone,
    pixel_rays,
    project,
)

# Fraction of beta used as the ambient coupling when none is given.
AMBIENT_COUPLING = 0.05

# Background rays integrate backscatter out to this many attenuation lengths.
BACKGROUND_RANGE_FACTOR = 5.0

# Floor applied to distances in the ambient term's denominators.
AMBIENT_DIST_EPS = 1e-4


class RadiometryError(ValueError):
    """Raised for invalid medium or light parameters."""


@dataclass(frozen=True)
class Medium:
    """Homogeneous scattering medium.

    beta: total attenuation coefficient (1/m).
    g: Henyey-Greenstein anisotropy in (-1, 1).
    scatter_fraction: sigma_s / beta, the single-scattering albedo.
    kappa_ambient: coupling of the ambient term; defaults to 0.05 * beta.
    """

    beta: float
    g: float
    scatter_fraction: float = 1.0
    kappa_ambient: float | None = None

    def __post_init__(self):
        if self.beta < 0:
            raise RadiometryError("extinction must be nonnegative")
        if not -1.0 < self.g < 1.0:
            raise RadiometryError("g must lie in (-1, 1)")
        if not 0.0 <= self.scatter_fraction <= 1.0:
            raise RadiometryError("scatter_fraction must lie in [0, 1]")
        if self.kappa_ambient is None:
            object.__setattr__(self, "kappa_ambient",
                               AMBIENT_COUPLING * self.beta)

    @property
    def sigma_s(self) -> float:
        return self.scatter_fraction * self.beta


@dataclass(frozen=True)
class SpotLight:
    """Hard-edged cone source with no lateral falloff inside the cone."""

    intensity: float               # C0, photoelectrons * m^2 at unit distance
    half_angle: float = math.radians(30.0)

    def __post_init__(self):
        if self.intensity <= 0:
            raise RadiometryError("light intensity must be positive")
        if not 0.0 < self.half_angle < math.pi / 2:
            raise RadiometryError("half_angle must lie in (0, pi/2)")


def henyey_greenstein(cos_theta, g: float):
    """Phase function value; integrates to 1 over the sphere."""
    c = np.asarray(cos_theta, dtype=np.float64)
    denom = (1.0 + g * g - 2.0 * g * c) ** 1.5
    return (1.0 - g * g) / (4.0 * math.pi * denom)


# ---------------------------------------------------------------------------
# scalar reference implementations
# ---------------------------------------------------------------------------


def direct_irradiance(point, normal, light: Pose, source: SpotLight,
                      medium: Medium, visible: bool) -> float:
    """Direct term at one surface point, before the return-trip attenuation."""
    if not visible:
        return 0.0
    to_light = light.position - np.asarray(point, dtype=np.float64)
    d = float(np.linalg.norm(to_light))
    if d < 1e-12:
        return 0.0
    cos_i = float(np.dot(normal, to_light)) / d
    if cos_i <= 0.0:
        return 0.0
    return source.intensity * math.exp(-medium.beta * d) / (d * d) * cos_i


def ambient_irradiance(point, light: Pose, source: SpotLight,
                       medium: Medium) -> float:
    """Leakage term at one surface point; no shadow or cone test by design."""
    p = np.asarray(point, dtype=np.float64)
    rel = p - light.position
    along = float(np.dot(rel, light.direction))
    if along <= 0.0:
        return 0.0
    z = light.position + along * light.direction
    d_lz = max(along, AMBIENT_DIST_EPS)
    d_sz = max(float(np.linalg.norm(p - z)), AMBIENT_DIST_EPS)
    return (medium.kappa_ambient * source.intensity
            * math.exp(-medium.beta * (d_lz + d_sz))
            / (d_lz * d_lz * d_sz * d_sz))


def backscatter(camera_pos, ray_dir, path_length: float, light: Pose,
                source: SpotLight, medium: Medium,
                n_samples: int = 64) -> float:
    """In-beam light scattered toward the camera along one pixel ray.

    Midpoint quadrature over the ray segment [0, path_length]. The light
    to sample-point path is attenuated but not occlusion-tested: thin
    geometry barely perturbs the halo that matters here.
    """
    if medium.beta == 0.0 or path_length <= 0.0:
        return 0.0
    cam = np.asarray(camera_pos, dtype=np.float64)
    d = np.asarray(ray_dir, dtype=np.float64)
    dl = path_length / n_samples
    total = 0.0
    for i in range(n_samples):
        l = (i + 0.5) * dl
        p = cam + l * d
        rel = p - light.position
        r = float(np.linalg.norm(rel))
        if r < 1e-12:
            continue
        if float(np.dot(rel, light.direction)) < math.cos(source.half_angle) * r:
            continue
        # angle between light->p and p->camera directions
        cos_t = float(np.dot(rel / r, -d))
        total += (henyey_greenstein(cos_t, medium.g)
                  * source.intensity * math.exp(-medium.beta * r) / (r * r)
                  * math.exp(-medium.beta * l) * dl)
    return medium.sigma_s * total


def snr(albedo: float, irradiance: float, backscatter_value: float,
        model: CameraModel) -> float:
    """Signal-to-noise ratio of the albedo-bearing signal at one pixel."""
    s = albedo * irradiance
    var = s + backscatter_value + model.read_noise ** 2
    if var <= 0.0:
        return 0.0
    return s / math.sqrt(var)


# ---------------------------------------------------------------------------
# vectorized model evaluation with per-pose caching
# ---------------------------------------------------------------------------


@dataclass
class CameraCache:
    """Geometry that depends only on the camera pose: rays and hits."""

    camera: Pose
    model: CameraModel
    pm: ProjectionMap
    rays: np.ndarray           # (H*W, 3) unit directions
    points: np.ndarray         # (N_hit, 3) surface points
    normals: np.ndarray        # (N_hit, 3)
    hit_mask: np.ndarray       # (H*W,) bool
    t_hit: np.ndarray          # (N_hit,)
    seg_len: np.ndarray        # (H*W,) backscatter integration length
    faces_hit: np.ndarray      # (N_hit,) face index per hit pixel


def make_camera_cache(mesh: TriMesh, camera: Pose,
                      model: CameraModel) -> CameraCache:
    pm = project(mesh, camera, model)
    rays = pixel_rays(camera, model)
    t = pm.t_hit.reshape(-1)
    f = pm.face_id.reshape(-1)
    hit = f >= 0
    fh = f[hit]
    u = pm.bary_u.reshape(-1)[hit]
    v = pm.bary_v.reshape(-1)[hit]
    tri = mesh.vertices[mesh.faces[fh]]
    pts = (tri[:, 0] * (1.0 - u - v)[:, None] + tri[:, 1] * u[:, None]
           + tri[:, 2] * v[:, None])
    return CameraCache(camera=camera, model=model, pm=pm, rays=rays,
                       points=pts, normals=mesh.normals[fh],
                       hit_mask=hit, t_hit=t[hit], seg_len=t.copy(),
                       faces_hit=fh)


def _finalize_seg_len(cache: CameraCache, medium: Medium) -> np.ndarray:
    """Integration lengths: hit distance, or 5/beta on background rays."""
    seg = cache.seg_len.copy()
    bg = ~cache.hit_mask
    if medium.beta > 0.0:
        seg[bg] = BACKGROUND_RANGE_FACTOR / medium.beta
    else:
        seg[bg] = 0.0
    return seg


@dataclass
class LightCache:
    """Model terms that depend on (camera pose, light position) but not on
    the light's aim direction wherever possible.

    The shadow mask and the backscatter distance/attenuation profile depend
    only on the light position, so sweeping aim directions (the orientation
    part of a candidate set) reuses them.
    """

    light_pos: np.ndarray
    shadow_free: np.ndarray      # (N_hit,) bool, occlusion only (no cone)
    cos_i: np.ndarray            # (N_hit,) incidence cosine, clamped >= 0
    direct_base: np.ndarray      # (N_hit,) C0 e^{-beta d}/d^2 * cos_i * free
    sample_rel: np.ndarray       # (H*W, S, 3) p - L at quadrature points
    sample_r: np.ndarray         # (H*W, S) |p - L|
    bs_base: np.ndarray          # (H*W, S) full integrand except cone test


def make_light_cache(mesh: TriMesh, cache: CameraCache, light_pos: np.ndarray,
                     source: SpotLight, medium: Medium,
                     n_samples: int = 64) -> LightCache:
    from .geometry import SHADOW_EPS_FRACTION
    light_pos = np.asarray(light_pos, dtype=np.float64)

    eps = SHADOW_EPS_FRACTION * mesh.diameter
    origins = cache.points + eps * cache.normals
    to_light = light_pos - origins
    dist = np.linalg.norm(to_light, axis=1)
    dist = np.where(dist < 1e-15, 1e-15, dist)
    dirs = to_light / dist[:, None]
    shadow_free = ~mesh.bvh().cast_any(origins, dirs, dist - eps)

    rel_s = cache.points - light_pos
    d_light = np.linalg.norm(rel_s, axis=1)
    d_safe = np.where(d_light < 1e-15, 1e-15, d_light)
    cos_i = np.einsum("ij,ij->i", cache.normals, -rel_s) / d_safe
    cos_i = np.maximum(cos_i, 0.0)
    direct_base = (source.intensity * np.exp(-medium.beta * d_safe)
                   / (d_safe * d_safe) * cos_i * shadow_free)

    seg = _finalize_seg_len(cache, medium)
    s = n_samples
    frac = (np.arange(s) + 0.5) / s
    l = seg[:, None] * frac[None, :]                      # (HW, S)
    dl = seg / s                                          # (HW,)
    pos = (cache.camera.position[None, None, :]
           + cache.rays[:, None, :] * l[:, :, None])      # (HW, S, 3)
    rel = pos - light_pos
    r = np.linalg.norm(rel, axis=2)
    r_safe = np.where(r < 1e-15, 1e-15, r)
    cos_t = -np.einsum("psk,pk->ps", rel, cache.rays) / r_safe
    bs_base = (henyey_greenstein(cos_t, medium.g)
               * source.intensity * np.exp(-medium.beta * r_safe)
               / (r_safe * r_safe)
               * np.exp(-medium.beta * l) * dl[:, None]
               * medium.sigma_s)
    return LightCache(light_pos=light_pos, shadow_free=shadow_free,
                      cos_i=cos_i, direct_base=direct_base,
                      sample_rel=rel, sample_r=r_safe, bs_base=bs_base)


def model_images(mesh: TriMesh, cache: CameraCache, lcache: LightCache,
                 light: Pose, source: SpotLight, medium: Medium,
                 ambient: bool = True):
    """Noise-free model maps for one joint view.

    Returns (E, B, rhoE): irradiance after return-trip attenuation,
    backscatter, and the albedo-weighted signal, each (H, W). Background
    pixels have E = 0 and rhoE = 0.
    """
    h, w = cache.model.height, cache.model.width
    hw = h * w

    # cone test on the direct term (position-independent parts cached)
    cone_s = inside_cone(light, source.half_angle, cache.points)
    direct = lcache.direct_base * cone_s

    if ambient and medium.kappa_ambient > 0.0:
        rel = cache.points - light.position
        along = rel @ light.direction
        z = light.position[None, :] + along[:, None] * light.direction
        d_lz = np.maximum(along, AMBIENT_DIST_EPS)
        d_sz = np.linalg.norm(cache.points - z, axis=1)
        d_sz = np.maximum(d_sz, AMBIENT_DIST_EPS)
        amb = np.where(
            along > 0.0,
            medium.kappa_ambient * source.intensity
            * np.exp(-medium.beta * (d_lz + d_sz))
            / (d_lz * d_lz * d_sz * d_sz),
            0.0)
    else:
        amb = 0.0

    e_hit = (direct + amb) * np.exp(-medium.beta * cache.t_hit)

    # backscatter: cached integrand gated by the cone test per sample
    cone_b = inside_cone_samples(light, source.half_angle, lcache)
    b_flat = np.einsum("ps,ps->p", lcache.bs_base, cone_b)

    e = np.zeros(hw)
    rho_e = np.zeros(hw)
    e[cache.hit_mask] = e_hit
    rho_e[cache.hit_mask] = mesh.albedo[cache.faces_hit] * e_hit
    return (e.reshape(h, w), b_flat.reshape(h, w), rho_e.reshape(h, w))


def inside_cone_samples(light: Pose, half_angle: float,
                        lcache: LightCache) -> np.ndarray:
    """Cone test for all cached backscatter sample points, (H*W, S) float."""
    proj = np.einsum("psk,k->ps", lcache.sample_rel, light.direction)
    return (proj >= math.cos(half_angle) * lcache.sample_r).astype(np.float64)


# ---------------------------------------------------------------------------
# rendering with noise
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    """One capture: the sensed image, its model components, and provenance.

    `irradiance` (E) and `backscatter` (B) are the noise-free model maps the
    estimation stage divides by; `signal` is rho * E with ground-truth
    albedo, kept for testing. Background pixels have E = 0.
    """

    image: np.ndarray            # I, (H, W) photoelectrons, clamped
    irradiance: np.ndarray       # E, after return-trip attenuation
    backscatter: np.ndarray      # B
    signal: np.ndarray           # rho * E
    pm: ProjectionMap
    view: JointView
    model: CameraModel
    source: SpotLight
    medium: Medium
    ambient: bool = True


def frame_rng(seed: int, t: int) -> np.random.Generator:
    """Independent, reproducible stream for frame t of a scan with `seed`."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(t,)))


def apply_sensor(clean: np.ndarray, model: CameraModel,
                 rng: np.random.Generator) -> np.ndarray:
    """Shot + read noise, then clamp to the sensor's representable range."""
    var = np.maximum(clean, 0.0) + model.read_noise ** 2
    noisy = clean + rng.standard_normal(clean.shape) * np.sqrt(var)
    return np.clip(noisy, 0.0, model.full_well)


def render(mesh: TriMesh, view: JointView, model: CameraModel,
           source: SpotLight, medium: Medium, seed: int | None = 0,
           ambient: bool = True, cache: CameraCache | None = None,
           n_samples: int = 64) -> Frame:
    """Simulate one capture of the mesh under the given joint view.

    seed=None renders noiselessly (the image is still sensor-clamped).
    """
    if cache is None or cache.camera is not view.camera:
        cache = make_camera_cache(mesh, view.camera, model)
    lcache = make_light_cache(mesh, cache, view.light.position, source,
                              medium, n_samples=n_samples)
    e, b, rho_e = model_images(mesh, cache, lcache, view.light, source,
                               medium, ambient=ambient)
    clean = rho_e + b
    if seed is None:
        image = np.clip(clean, 0.0, model.full_well)
    else:
        image = apply_sensor(clean, model, frame_rng(seed, view.t))
    return Frame(image=image, irradiance=e, backscatter=b, signal=rho_e,
                 pm=cache.pm, view=view, model=model, source=source,
                 medium=medium, ambient=ambient)
