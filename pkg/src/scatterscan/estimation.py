"""Descattering, per-pixel uncertainty, and multi-view texture fusion.

Inverting the image formation model gives a per-pixel albedo estimate

    rho_hat = (I - B) / E_cond        var = (rho_bar*E + B + rn^2) / E^2

where rho_bar is an assumed operating-point albedo (planning never sees the
true one) and E_cond is an optionally conditioned irradiance. Estimates from
many views are fused per-texel by inverse-variance (maximum likelihood)
weighting on a per-face texel grid; a per-face quality ledger tracks the
model-predicted information so planning and bookkeeping agree exactly.

Pixels are excluded (invalid) when the model irradiance is below E_min
(uninformative, variance would explode) or when the sensed value sits at the
full-well clamp (the Gaussian noise model no longer holds there; the bright
ambient spot under the light axis saturates in most frames).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import ProjectionMap, TriMesh
from .radiometry import Frame

# Resolution penalty constant (exp(eta*(1/gamma - 1)) below full resolution).
DEFAULT_ETA = 10.0

# Prior albedo st.dev.; seeds every face's quality ledger with 1/sigma0^2.
PRIOR_SIGMA = 10.0

# Conditioning kernel defaults (pixels).
KERNEL_E_SIGMA = 3.0
KERNEL_I_SIGMA = 3.0
KERNEL_T_SIGMA = 1.0
MASK_DILATE_PX = 2


class EstimationError(ValueError):
    """Raised for inconsistent fusion inputs."""


@dataclass(frozen=True)
class OperatingPoint:
    """Assumed typical albedo used wherever the true one is unknown."""

    rho_bar: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.rho_bar <= 1.0:
            raise EstimationError("operating-point albedo must be in (0, 1]")


@dataclass
class DescatteredFrame:
    """Per-pixel albedo estimate with its model variance and validity.

    valid marks pixels usable for fusion (projected, E >= E_min, not
    saturated). model_valid is the noise-free counterpart (predicted
    saturation at the operating point instead of sensed saturation); the
    quality ledger and the planner use it so predictions match accounting.
    """

    rho: np.ndarray          # (H, W)
    var: np.ndarray          # (H, W) model variance, positive everywhere
    valid: np.ndarray        # (H, W) bool
    model_valid: np.ndarray  # (H, W) bool
    frame: Frame

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.var)


def condition_irradiance(e: np.ndarray, i: np.ndarray, rho_raw: np.ndarray,
                         sigma_e: float = KERNEL_E_SIGMA,
                         sigma_i: float = KERNEL_I_SIGMA,
                         sigma_t: float = KERNEL_T_SIGMA,
                         dilate_px: int = MASK_DILATE_PX) -> np.ndarray:
    """Stabilized irradiance for division.

    Where the raw estimate exceeds 1 the model irradiance is evidently too
    low (model mismatch, unmodeled glow); there the smoothed sensed image
    stands in for the smoothed model irradiance.
    """
    w = rho_raw > 1.0
    if dilate_px > 0:
        w = ndimage.binary_dilation(w, iterations=dilate_px)
    w = w.astype(np.float64)
    blend = (ndimage.gaussian_filter(e, sigma_e) * (1.0 - w)
             + ndimage.gaussian_filter(i, sigma_i) * w)
    return ndimage.gaussian_filter(blend, sigma_t)


def descatter(frame: Frame, op: OperatingPoint, condition: bool = True,
              e_min: float | None = None) -> DescatteredFrame:
    """Invert the image formation model for one frame."""
    e = frame.irradiance
    b = frame.backscatter
    i = frame.image
    rn2 = frame.model.read_noise ** 2
    if e_min is None:
        e_min = frame.model.read_noise

    projected = frame.pm.face_id >= 0
    informative = e >= e_min

    raw = np.zeros_like(e)
    np.divide(i - b, e, out=raw, where=informative)

    if condition:
        e_cond = condition_irradiance(e, i, raw)
        rho = np.zeros_like(e)
        np.divide(i - b, e_cond, out=rho, where=np.abs(e_cond) > 1e-300)
    else:
        rho = raw

    denom = np.maximum(e, e_min)
    var = (op.rho_bar * e + b + rn2) / (denom * denom)

    saturated = i >= frame.model.full_well
    predicted_sat = op.rho_bar * e + b >= frame.model.full_well
    valid = projected & informative & ~saturated
    model_valid = projected & informative & ~predicted_sat
    return DescatteredFrame(rho=rho, var=var, valid=valid,
                            model_valid=model_valid, frame=frame)


def resolution_weight(var, gamma: float, eta: float = DEFAULT_ETA):
    """Adjust measurement variance for the achieved/required resolution ratio.

    Below full resolution (gamma < 1) each pixel's variance is inflated by
    exp(eta*(1/gamma - 1)). At or above it, the patch variance becomes the
    pixel average divided by gamma (spatial averaging gain); the return
    value is then a scalar.
    """
    if gamma <= 0:
        raise EstimationError("gamma must be positive")
    v = np.asarray(var, dtype=np.float64)
    if gamma < 1.0:
        return v * np.exp(eta * (1.0 / gamma - 1.0))
    return float(v.mean() / gamma)


def face_quality(sigma: np.ndarray, usable: np.ndarray, pm: ProjectionMap,
                 mesh: TriMesh, r_min: float,
                 eta: float = DEFAULT_ETA) -> np.ndarray:
    """Model quality Q_k of one view for every face.

    Q_k is the inverse variance a face-level albedo measurement would have:
    sigma_tilde = mean per-pixel model st.dev. over the face's usable
    pixels, penalized below full resolution, granted the averaging gain
    above it. Faces with no usable pixels get 0.
    """
    fid = pm.face_id[usable]
    s = sigma[usable]
    nf = mesh.n_faces
    cnt = np.bincount(fid, minlength=nf).astype(np.float64)
    ssum = np.bincount(fid, weights=s, minlength=nf)
    q = np.zeros(nf)
    obs = cnt > 0
    if not obs.any():
        return q
    sig_t = ssum[obs] / cnt[obs]
    gamma = cnt[obs] / mesh.areas[obs] / r_min
    with np.errstate(over="ignore"):
        penalty = np.exp(eta * (1.0 / gamma - 1.0))
        low = 1.0 / np.square(sig_t * penalty)
    high = gamma / np.square(sig_t)
    q[obs] = np.where(gamma < 1.0, low, high)
    return q


# ---------------------------------------------------------------------------
# texel grid
# ---------------------------------------------------------------------------


def _grid_side(lam: np.ndarray) -> np.ndarray:
    """Smallest n with n(n+1)/2 >= lam texels per face."""
    return np.ceil((np.sqrt(8.0 * lam + 1.0) - 1.0) / 2.0).astype(np.int64)


def texel_of(face: np.ndarray, u: np.ndarray, v: np.ndarray,
             n_side: np.ndarray, lam: np.ndarray,
             offsets: np.ndarray) -> np.ndarray:
    """Global texel index for barycentric hits (u, v) on given faces.

    Each face's parameter triangle is cut by an n x n lattice; lattice
    square (a, b) with a+b <= n-1 (clipped to the triangle) is one texel,
    enumerated row-major in b. Squares beyond the face's texel budget fold
    into the last texel.
    """
    n = n_side[face]
    a = np.minimum((u * n).astype(np.int64), n - 1)
    b = np.minimum((v * n).astype(np.int64), n - 1)
    a = np.maximum(a, 0)
    b = np.maximum(b, 0)
    over = a + b - (n - 1)
    a = a - np.maximum(over, 0)
    idx = b * n - (b * (b - 1)) // 2 + a
    idx = np.minimum(idx, lam[face] - 1)
    return offsets[face] + idx


@dataclass
class TextureMap:
    """Per-face texel grids with running fusion sums and a quality ledger.

    Accumulators per texel: W1 = sum(w*rho), W0 = sum(w), V = sum(w^2*var),
    with w = 1/var for ML fusion ("ml" rule) and w = 1 for plain averaging
    ("average" rule, the conventional-scan baseline). Fused value is W1/W0
    and fused variance V/W0^2, which for ML reduces to 1/W0 = 1/sum(1/var).

    The ledger tracks per-face model quality: for ML a running sum
    q_face = q0 + sum_t Q_k(t); for averaging the per-view inverse
    qualities and view count, since the mean of m unit-weight estimates has
    variance sum(var_j)/m^2.
    """

    mesh: TriMesh
    r_min: float
    rule: str = "ml"
    eta: float = DEFAULT_ETA
    prior_sigma: float = PRIOR_SIGMA
    lam: np.ndarray = field(default=None)
    n_side: np.ndarray = field(default=None)
    offsets: np.ndarray = field(default=None)
    w1: np.ndarray = field(default=None)
    w0: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    q_face: np.ndarray = field(default=None)
    inv_q_sum: np.ndarray = field(default=None)
    n_views: np.ndarray = field(default=None)
    obs_count: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rule not in ("ml", "average"):
            raise EstimationError(f"unknown fusion rule {self.rule!r}")
        if self.r_min <= 0:
            raise EstimationError("r_min must be positive")
        if self.lam is None:
            self.lam = self.mesh.patch_counts(self.r_min)
            self.n_side = _grid_side(self.lam)
            self.offsets = np.concatenate(
                [[0], np.cumsum(self.lam)]).astype(np.int64)
            n = int(self.offsets[-1])
            self.w1 = np.zeros(n)
            self.w0 = np.zeros(n)
            self.v = np.zeros(n)
            self.q_face = np.full(self.mesh.n_faces, self.prior_quality)
            self.inv_q_sum = np.zeros(self.mesh.n_faces)
            self.n_views = np.zeros(self.mesh.n_faces, dtype=np.int64)
            self.obs_count = np.zeros(self.mesh.n_faces, dtype=np.int64)

    @property
    def prior_quality(self) -> float:
        return 1.0 / self.prior_sigma ** 2

    @property
    def n_texels(self) -> int:
        return int(self.offsets[-1])

    @property
    def observed(self) -> np.ndarray:
        """(n_texels,) bool: texel has at least one fused measurement."""
        return self.w0 > 0

    def face_of_texel(self) -> np.ndarray:
        return np.repeat(np.arange(self.mesh.n_faces), self.lam)

    def albedo(self, fill: float | None = None) -> np.ndarray:
        out = np.full(self.n_texels, np.nan if fill is None else fill)
        m = self.observed
        out[m] = self.w1[m] / self.w0[m]
        return out

    def variance(self) -> np.ndarray:
        """Per-texel fused variance; prior variance where unobserved."""
        out = np.full(self.n_texels, self.prior_sigma ** 2)
        m = self.observed
        out[m] = self.v[m] / self.w0[m] ** 2
        return out

    def face_variance(self) -> np.ndarray:
        """Ledger variance of the face-level albedo estimate."""
        if self.rule == "ml":
            return 1.0 / self.q_face
        out = np.full(self.mesh.n_faces, self.prior_sigma ** 2)
        seen = self.n_views > 0
        out[seen] = self.inv_q_sum[seen] / self.n_views[seen] ** 2
        return out

    def total_uncertainty(self) -> float:
        """Sum over faces of lambda_k * ledger variance."""
        return float(np.sum(self.lam * self.face_variance()))

    def information_gain_from_prior(self) -> float:
        """Total nats gained over the flat prior, by the ledger."""
        return float(np.sum(
            0.5 * self.lam * np.log(self.prior_sigma ** 2
                                    / self.face_variance())))

    def snapshot(self) -> dict:
        return {
            "w1": self.w1.copy(), "w0": self.w0.copy(), "v": self.v.copy(),
            "q_face": self.q_face.copy(),
            "inv_q_sum": self.inv_q_sum.copy(),
            "n_views": self.n_views.copy(),
            "obs_count": self.obs_count.copy(),
        }

    def restore(self, snap: dict) -> None:
        self.w1 = np.asarray(snap["w1"], dtype=np.float64).copy()
        self.w0 = np.asarray(snap["w0"], dtype=np.float64).copy()
        self.v = np.asarray(snap["v"], dtype=np.float64).copy()
        self.q_face = np.asarray(snap["q_face"], dtype=np.float64).copy()
        self.inv_q_sum = np.asarray(snap["inv_q_sum"],
                                    dtype=np.float64).copy()
        self.n_views = np.asarray(snap["n_views"], dtype=np.int64).copy()
        self.obs_count = np.asarray(snap["obs_count"],
                                    dtype=np.int64).copy()


def fuse(texture: TextureMap, dframe: DescatteredFrame,
         projection: ProjectionMap | None = None,
         mesh: TriMesh | None = None) -> TextureMap:
    """Accumulate one descattered frame into the texture (in place).

    Every valid pixel is deposited into the texel containing its hit point,
    weighted per the texture's rule. Pixel variances are inflated by the
    resolution penalty when the face is observed below full resolution;
    above it, the averaging gain arises from many pixels landing in each
    texel. The face-quality ledger is updated from the frame's model
    variance so it stays equal to the planner's prediction.
    """
    pm = projection if projection is not None else dframe.frame.pm
    mesh = mesh if mesh is not None else texture.mesh
    if (mesh.n_faces != texture.mesh.n_faces
            or int(pm.face_id.max()) >= mesh.n_faces):
        raise EstimationError("texture and frame meshes disagree")

    m = dframe.valid
    if m.any():
        fid = pm.face_id[m]
        nf = mesh.n_faces
        cnt = np.bincount(fid, minlength=nf).astype(np.float64)
        gamma = np.divide(cnt, mesh.areas, out=np.zeros(nf),
                          where=cnt > 0) / texture.r_min
        with np.errstate(over="ignore"):
            inflate = np.where((gamma > 0) & (gamma < 1.0),
                               np.exp(texture.eta * (1.0 / np.maximum(
                                   gamma, 1e-300) - 1.0)),
                               1.0)
        var_adj = dframe.var[m] * inflate[fid]
        finite = np.isfinite(var_adj)
        fid, var_adj = fid[finite], var_adj[finite]
        rho = dframe.rho[m][finite]
        u = pm.bary_u[m][finite]
        v = pm.bary_v[m][finite]
        tex = texel_of(fid, u, v, texture.n_side, texture.lam,
                       texture.offsets)
        w = 1.0 / var_adj if texture.rule == "ml" else np.ones_like(var_adj)
        n = texture.n_texels
        texture.w1 += np.bincount(tex, weights=w * rho, minlength=n)
        texture.w0 += np.bincount(tex, weights=w, minlength=n)
        texture.v += np.bincount(tex, weights=w * w * var_adj, minlength=n)

    # ledger update from the model variance map (deterministic)
    q = face_quality(dframe.sigma, dframe.model_valid, pm, mesh,
                     texture.r_min, texture.eta)
    seen = q > 0
    if texture.rule == "ml":
        texture.q_face += q
    else:
        texture.inv_q_sum[seen] += 1.0 / q[seen]
        texture.n_views[seen] += 1
    texture.obs_count[seen] += 1
    return texture


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def texture_atlas(texture: TextureMap, values: np.ndarray) -> np.ndarray:
    """Pack a per-texel vector into a (n_faces, max_lam) image, NaN-padded."""
    nf = texture.mesh.n_faces
    width = int(texture.lam.max())
    atlas = np.full((nf, width), np.nan, dtype=np.float64)
    for k in range(nf):
        lo, hi = texture.offsets[k], texture.offsets[k + 1]
        atlas[k, : hi - lo] = values[lo:hi]
    return atlas


def write_quality_csv(texture: TextureMap, path) -> None:
    """Per-face quality table: id, area, texels, ledger quality, views."""
    fv = texture.face_variance()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face", "area_m2", "n_texels", "quality",
                    "face_variance", "n_observations"])
        for k in range(texture.mesh.n_faces):
            w.writerow([k, f"{texture.mesh.areas[k]:.8g}",
                        int(texture.lam[k]), f"{1.0 / fv[k]:.8g}",
                        f"{fv[k]:.8g}", int(texture.obs_count[k])])
