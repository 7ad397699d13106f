"""Deterministic stereo-matching operators and the multi-scale pipeline.

Every differentiable operator here has an analytic vector-Jacobian product
(``*_vjp``) verified against central finite differences by the test suite.
The pipeline composes them with a deterministic toy feature extractor in
place of a learned backbone: mean-variance-normalized 5x5 patches projected
onto fixed separable cosine filters, concatenated with two smoothed image
pyramid intensities (8 channels total).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import backend
from .errors import AllMasked, DimMismatch, EmptyMask
from .fields import ScalarField, Tensor3
from .geometry import StereoRig

NEG_INF = -np.inf


@dataclass
class FeatureMap:
    """Dense per-pixel descriptors at downsampling exponent ``scale``."""

    tensor: Tensor3
    scale: int = 0
    valid: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def shape(self):
        return self.tensor.values.shape

    def mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.shape[:2], dtype=bool)
        return self.valid


@dataclass
class DisparityMap:
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("disparity map must be 2D")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise ValueError("mask shape mismatch")

    def mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.values.shape, dtype=bool)
        return self.valid


@dataclass
class CorrelationVolume:
    """Row-wise correlation scores; entries with k > j carry a -inf sentinel."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[1] != self.values.shape[2]:
            raise ValueError("volume must have shape (H, W, W)")


@dataclass(frozen=True)
class TemporalFusionConfig:
    sigma_d: float = 1.0
    tau_prev: float = 0.25
    tau_next: float = 0.25

    def __post_init__(self):
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be positive")
        for name in ("tau_prev", "tau_next"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.3
    beta_exp: float = 2.0
    image_height: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta_exp < 0:
            raise ValueError("beta_exp must be >= 0")


@dataclass
class FiLMParams:
    """Two-layer perceptron mapping the flattened extrinsics [vec(R), T] in R^12
    to per-channel affine parameters (gamma, beta) in R^(2D)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        if self.w1.shape[1] != 12:
            raise ValueError("first layer must take the 12 extrinsic values")
        if self.w2.shape[1] != self.w1.shape[0] or self.b1.shape != (self.w1.shape[0],):
            raise ValueError("layer shapes are inconsistent")
        if self.b2.shape != (self.w2.shape[0],) or self.w2.shape[0] % 2 != 0:
            raise ValueError("output layer must produce 2*D values")

    @property
    def n_channels(self) -> int:
        return self.w2.shape[0] // 2

    @classmethod
    def zeros(cls, n_channels: int, hidden: int = 32):
        """Identity modulation: gamma = beta = 0."""
        return cls(
            np.zeros((hidden, 12)),
            np.zeros(hidden),
            np.zeros((2 * n_channels, hidden)),
            np.zeros(2 * n_channels),
        )

    def gamma_beta(self, R, T):
        x = np.concatenate([np.asarray(R, dtype=float).reshape(9), np.asarray(T, dtype=float).reshape(3)])
        h = np.tanh(self.w1 @ x + self.b1)
        y = self.w2 @ h + self.b2
        D = self.n_channels
        return y[:D], y[D:], (x, h)

    def to_json(self, path) -> None:
        doc = {k: getattr(self, k).tolist() for k in ("w1", "b1", "w2", "b2")}
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def from_json(cls, path):
        doc = json.loads(Path(path).read_text())
        return cls(np.array(doc["w1"]), np.array(doc["b1"]), np.array(doc["w2"]), np.array(doc["b2"]))


# ---------------------------------------------------------------------------
# operators


def film_modulate(fmap: FeatureMap, R, T, params: FiLMParams) -> FeatureMap:
    """Channel-wise affine modulation F*(1 + gamma) + beta conditioned on extrinsics."""
    H, W, D = fmap.shape
    if params.n_channels != D:
        raise DimMismatch(f"params expect {params.n_channels} channels, features have {D}")
    gamma, beta, _ = params.gamma_beta(R, T)
    out = fmap.values * (1.0 + gamma) + beta
    return FeatureMap(Tensor3(out), fmap.scale, fmap.valid)


def film_modulate_vjp(fmap: FeatureMap, R, T, params: FiLMParams, grad_out: np.ndarray):
    """Gradients of sum(film * grad_out) with respect to F and the MLP weights."""
    gamma, beta, (x, h) = params.gamma_beta(R, T)
    g = np.asarray(grad_out, dtype=float)
    grad_F = g * (1.0 + gamma)
    d_gamma = np.einsum("hwd,hwd->d", g, fmap.values)
    d_beta = g.sum(axis=(0, 1))
    dy = np.concatenate([d_gamma, d_beta])
    dw2 = np.outer(dy, h)
    db2 = dy
    dh = params.w2.T @ dy
    dpre = dh * (1.0 - h**2)
    dw1 = np.outer(dpre, x)
    db1 = dpre
    return grad_F, (dw1, db1, dw2, db2)


def correlate_1d(F_L: FeatureMap, F_R: FeatureMap) -> CorrelationVolume:
    """Row-wise scaled dot-product scores C[i, j, k] = F_L[i,j] . F_R[i,k] / sqrt(D).

    Candidates to the right of the reference pixel (k > j) are excluded with
    a -inf sentinel. Invalid pixels on either side are likewise excluded.
    """
    if F_L.shape != F_R.shape:
        raise DimMismatch(f"feature shapes differ: {F_L.shape} vs {F_R.shape}")
    if F_L.scale != F_R.scale:
        raise DimMismatch(f"feature scales differ: {F_L.scale} vs {F_R.scale}")
    H, W, D = F_L.shape
    C = np.einsum("ijd,ikd->ijk", F_L.values, F_R.values) / np.sqrt(D)
    ks = np.arange(W)
    C[:, ks[:, None] < ks[None, :]] = NEG_INF
    if F_R.valid is not None:
        C[~np.broadcast_to(F_R.valid[:, None, :], C.shape)] = NEG_INF
    if F_L.valid is not None:
        C[~F_L.valid] = NEG_INF
    return CorrelationVolume(C)


def correlate_1d_vjp(F_L: FeatureMap, F_R: FeatureMap, grad_C: np.ndarray):
    """Gradients w.r.t. both feature maps; masked volume entries carry no gradient."""
    H, W, D = F_L.shape
    g = np.asarray(grad_C, dtype=float).copy()
    ks = np.arange(W)
    g[:, ks[:, None] < ks[None, :]] = 0.0
    inv = 1.0 / np.sqrt(D)
    grad_FL = np.einsum("ijk,ikd->ijd", g, F_R.values) * inv
    grad_FR = np.einsum("ijk,ijd->ikd", g, F_L.values) * inv
    return grad_FL, grad_FR


def soft_disparity(C: CorrelationVolume, on_empty: str = "raise") -> DisparityMap:
    """Expected matching location under the row-wise softmax of the volume.

    d(i, j) = j - sum_k softmax(C[i, j, :])_k * k, which always lies in [0, j].

    Raises
    ------
    AllMasked
        If some pixel has no unmasked candidate and ``on_empty == "raise"``;
        with ``on_empty == "invalid"`` such pixels are flagged instead.
    """
    vals = C.values
    H, W, _ = vals.shape
    finite = np.isfinite(vals)
    has_candidate = finite.any(axis=2)
    if not has_candidate.all():
        if on_empty == "raise":
            i, j = np.argwhere(~has_candidate)[0]
            raise AllMasked(f"pixel (i={i}, j={j}) has no unmasked correlation candidate")
        if on_empty != "invalid":
            raise ValueError(f"unknown on_empty mode {on_empty!r}")
    m = np.where(has_candidate, vals.max(axis=2, where=finite, initial=NEG_INF), 0.0)
    shifted = vals - m[:, :, None]
    e = np.zeros_like(vals)
    np.exp(shifted, out=e, where=finite & (shifted > -backend_cutoff()))
    denom = e.sum(axis=2)
    denom_safe = np.where(has_candidate, denom, 1.0)
    coor = (e @ np.arange(W, dtype=float)) / denom_safe
    d = np.arange(W, dtype=float)[None, :] - coor
    d = np.where(has_candidate, d, 0.0)
    return DisparityMap(d, has_candidate if not has_candidate.all() else None)


def backend_cutoff() -> float:
    from ._kernels_np import EXP_CUTOFF

    return EXP_CUTOFF


def soft_disparity_vjp(C: CorrelationVolume, grad_d: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the volume: dd/dC[i,j,k] = -w_k (k - E[k])."""
    vals = C.values
    H, W, _ = vals.shape
    finite = np.isfinite(vals)
    with np.errstate(invalid="ignore"):
        m = vals.max(axis=2, where=finite, initial=NEG_INF)
        e = np.where(finite, np.exp(np.where(finite, vals - m[:, :, None], 0.0)), 0.0)
    w = e / e.sum(axis=2, keepdims=True)
    ks = np.arange(W, dtype=float)
    coor = w @ ks
    return -np.asarray(grad_d)[:, :, None] * w * (ks[None, None, :] - coor[:, :, None])


def attention_refine(d_match: DisparityMap, F_ref: FeatureMap) -> DisparityMap:
    """Global self-attention over feature similarity, applied to disparities.

    Every output location is the similarity-weighted mean of the valid input
    disparities, so pixels without an estimate of their own inherit one from
    lookalike locations.
    """
    H, W = d_match.values.shape
    fh, fw, _ = F_ref.shape
    if (fh, fw) != (H, W):
        raise DimMismatch(f"feature spatial dims {(fh, fw)} do not match disparity {(H, W)}")
    valid = d_match.mask() & F_ref.mask()
    if not valid.any():
        raise AllMasked("attention has no valid source disparities")
    flat_valid = None if valid.all() else valid.ravel()
    out = backend.attention_apply(
        np.ascontiguousarray(F_ref.values.reshape(-1, F_ref.shape[2])),
        np.ascontiguousarray(d_match.values.ravel()),
        flat_valid,
    )
    return DisparityMap(out.reshape(H, W), None)


def attention_refine_vjp(d_match: DisparityMap, F_ref: FeatureMap, grad_out: np.ndarray):
    """Dense backward pass (intended for small, fully-valid instances)."""
    H, W, D = F_ref.shape
    F2 = F_ref.values.reshape(-1, D)
    dvals = d_match.values.ravel()
    S = (F2 @ F2.T) / np.sqrt(D)
    S -= S.max(axis=1, keepdims=True)
    E = np.exp(S)
    Wmat = E / E.sum(axis=1, keepdims=True)
    out = Wmat @ dvals
    g = np.asarray(grad_out, dtype=float).ravel()
    grad_d = Wmat.T @ g
    grad_S = (g[:, None] * Wmat) * (dvals[None, :] - out[:, None])
    grad_F = (grad_S + grad_S.T) @ F2 / np.sqrt(D)
    return grad_d.reshape(H, W), grad_F.reshape(H, W, D)


def temporal_fuse(d_prev: DisparityMap, d_t: DisparityMap, d_next: DisparityMap,
                  cfg: TemporalFusionConfig = TemporalFusionConfig()) -> DisparityMap:
    """Blend neighboring-frame residuals under a disparity-consistency mask.

    m = exp(-|d_a - d_b| / sigma_d) gates each residual, so frames that
    disagree contribute nothing and static regions are averaged.
    """
    shapes = {d_prev.values.shape, d_t.values.shape, d_next.values.shape}
    if len(shapes) != 1:
        raise DimMismatch(f"disparity maps differ in shape: {sorted(shapes)}")
    m_prev = np.exp(-np.abs(d_prev.values - d_t.values) / cfg.sigma_d)
    m_next = np.exp(-np.abs(d_next.values - d_t.values) / cfg.sigma_d)
    out = d_t.values.copy()
    vp = d_prev.mask() & d_t.mask()
    vn = d_next.mask() & d_t.mask()
    out += np.where(vp, cfg.tau_prev * m_prev * (d_prev.values - d_t.values), 0.0)
    out += np.where(vn, cfg.tau_next * m_next * (d_next.values - d_t.values), 0.0)
    return DisparityMap(out, None if d_t.valid is None else d_t.valid.copy())


def weighted_l1_loss(d_pred: DisparityMap, d_gt: DisparityMap, w: LossWeights):
    """Row-weighted mean absolute disparity error and its gradient.

    The weight profile is alpha + (1 - alpha) * (1 - v/V)^beta over image
    rows v, V = ``w.image_height`` (defaults to the map height), so rows near
    the top (far field) count most. The subgradient at exact ties is zero.
    """
    if d_pred.values.shape != d_gt.values.shape:
        raise DimMismatch(f"shapes differ: {d_pred.values.shape} vs {d_gt.values.shape}")
    H, Wd = d_pred.values.shape
    V = w.image_height if w.image_height > 0 else H
    omega = w.alpha + (1.0 - w.alpha) * (1.0 - np.arange(H) / V) ** w.beta_exp
    mask = d_pred.mask() & d_gt.mask()
    n = int(mask.sum())
    if n == 0:
        raise EmptyMask("no valid pixels in the loss domain")
    diff = d_pred.values - d_gt.values
    wfield = np.broadcast_to(omega[:, None], diff.shape)
    loss = float(np.sum(wfield * np.abs(diff) * mask) / n)
    grad = np.where(mask, wfield * np.sign(diff) / n, 0.0)
    return loss, DisparityMap(grad, None if d_pred.valid is None else d_pred.valid.copy())


# ---------------------------------------------------------------------------
# toy feature extractor


def _cosine_filters():
    i = np.arange(5)
    basis = [np.cos(np.pi * p * (2 * i + 1) / 10.0) for p in range(3)]
    pairs = [(0, 1), (1, 0), (1, 1), (0, 2), (2, 0), (2, 2)]
    return [np.outer(basis[p], basis[q]) / 5.0 for p, q in pairs]


_FILTERS = _cosine_filters()


@dataclass(frozen=True)
class FeatureConfig:
    gain: float = 40.0
    pyramid_sigmas: tuple = (2.0, 4.0)
    pyramid_weight: float = 2.0
    eps: float = 1e-6


def extract_features(image: ScalarField, scale: int = 0, cfg: FeatureConfig = FeatureConfig()) -> FeatureMap:
    """Deterministic 8-channel descriptors.

    Six channels are fixed separable cosine projections of the local 5x5
    patch, normalized by the local standard deviation (so they see contrast
    structure, not absolute intensity); two channels are smoothed pyramid
    intensities providing longer-range context. Vectors are normalized to
    unit length and scaled by ``cfg.gain``, which sets the downstream softmax
    sharpness. A pixel's feature is valid only if its whole 5x5 patch is.
    """
    vals = image.values
    mask = image.mask()
    if not mask.all():
        fill = vals[mask].mean() if mask.any() else 0.0
        vals = np.where(mask, vals, fill)
    mu = vals.mean()
    sd = vals.std()
    std_img = (vals - mu) / (sd + cfg.eps)

    box = np.ones((5, 5)) / 25.0
    local_mu = ndimage.convolve(std_img, box, mode="nearest")
    local_mu2 = ndimage.convolve(std_img**2, box, mode="nearest")
    sigma = np.sqrt(np.maximum(local_mu2 - local_mu**2, 0.0)) + cfg.eps

    feats = [ndimage.convolve(std_img, f, mode="nearest") / sigma for f in _FILTERS]
    for s in cfg.pyramid_sigmas:
        g = ndimage.gaussian_filter(std_img, s, mode="nearest")
        gs = (g - g.mean()) / (g.std() + cfg.eps)
        feats.append(cfg.pyramid_weight * gs)
    F = np.stack(feats, axis=-1)
    F *= cfg.gain / (np.linalg.norm(F, axis=-1, keepdims=True) + cfg.eps)

    valid = None
    if not mask.all():
        valid = ndimage.minimum_filter(mask.astype(np.uint8), size=5, mode="nearest").astype(bool)
    return FeatureMap(Tensor3(F), scale, valid)


# ---------------------------------------------------------------------------
# multi-scale pipeline


@dataclass(frozen=True)
class PipelineConfig:
    scales: tuple = (1, 0)
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    attention_gain: float = 30.0
    despeckle: int = 5
    film: FiLMParams | None = None

    def __post_init__(self):
        if len(self.scales) < 1:
            raise ValueError("scales must be non-empty")
        if min(self.scales) < 0:
            raise ValueError("scales are downsampling exponents, must be >= 0")


def _downsample(vals, mask):
    blurred = ndimage.gaussian_filter(vals, 1.0, mode="nearest")
    sub = blurred[::2, ::2]
    m = None
    if mask is not None:
        h2, w2 = mask.shape[0] // 2 * 2, mask.shape[1] // 2 * 2
        m = (
            mask[0:h2:2, 0:w2:2]
            & mask[1:h2:2, 0:w2:2]
            & mask[0:h2:2, 1:w2:2]
            & mask[1:h2:2, 1:w2:2]
        )
        m = m[: sub.shape[0], : sub.shape[1]]
    return sub, m


def _upsample2(d: DisparityMap, target_shape) -> DisparityMap:
    h, w = d.values.shape
    th, tw = target_shape
    zoom = (th / h, tw / w)
    vals = ndimage.zoom(d.values, zoom, order=1, mode="nearest", grid_mode=True) * (tw / w)
    valid = None
    if d.valid is not None:
        v = ndimage.zoom(d.valid.astype(float), zoom, order=0, mode="nearest", grid_mode=True)
        valid = v > 0.5
    return DisparityMap(vals, valid)


def _despeckle(d: DisparityMap, size: int) -> DisparityMap:
    if size <= 1:
        return d
    med = ndimage.median_filter(d.values, size=size, mode="nearest")
    if d.valid is None:
        return DisparityMap(med, None)
    window_ok = ndimage.minimum_filter(d.valid.astype(np.uint8), size=size, mode="nearest").astype(bool)
    return DisparityMap(np.where(window_ok, med, d.values), d.valid.copy())


def _merge(coarse: DisparityMap, fine: DisparityMap) -> DisparityMap:
    cv, fv = coarse.mask(), fine.mask()
    both = cv & fv
    vals = np.where(both, 0.5 * (coarse.values + fine.values), np.where(fv, fine.values, coarse.values))
    valid = cv | fv
    return DisparityMap(vals, None if valid.all() else valid)


def multi_scale_pipeline(img_L: ScalarField, img_R: ScalarField, rig: StereoRig | None = None,
                         cfg: PipelineConfig = PipelineConfig()) -> DisparityMap:
    """Coarse-to-fine disparity estimation on a rectified pair.

    Per scale: extrinsic modulation of both feature maps, row-wise latent
    correlation, softmax expectation, despeckle, and feature-similarity
    attention; the coarser estimate is bilinearly upsampled (values doubled)
    and averaged with the next finer one. The fused full-resolution map gets
    a final despeckle and one more attention pass at scale 0.
    """
    if img_L.values.shape != img_R.values.shape:
        raise DimMismatch("left/right images differ in shape")
    scales = sorted(set(cfg.scales), reverse=True)
    levels = {0: (img_L.values, img_L.valid, img_R.values, img_R.valid)}
    for s in range(1, max(scales) + 1):
        lv, lm, rv, rm = levels[s - 1]
        lv2, lm2 = _downsample(lv, lm)
        rv2, rm2 = _downsample(rv, rm)
        levels[s] = (lv2, lm2, rv2, rm2)

    film = cfg.film
    R = rig.R if rig is not None else np.eye(3)
    T = rig.T if rig is not None else np.zeros(3)

    fused: DisparityMap | None = None
    ref_full: FeatureMap | None = None
    for s in scales:
        lv, lm, rv, rm = levels[s]
        FL = extract_features(_wrap(lv, lm), scale=s, cfg=cfg.feature)
        FR = extract_features(_wrap(rv, rm), scale=s, cfg=cfg.feature)
        if film is not None:
            FL = film_modulate(FL, R, T, film)
            FR = film_modulate(FR, R, T, film)
        d_vals, d_valid = backend.row_soft_disparity(
            np.ascontiguousarray(FL.values),
            np.ascontiguousarray(FR.values),
            FL.mask() if FL.valid is not None else None,
            FR.mask() if FR.valid is not None else None,
        )
        dm = DisparityMap(d_vals, None if d_valid.all() else d_valid)
        dm = _despeckle(dm, cfg.despeckle)
        ref_cfg = FeatureConfig(
            gain=cfg.attention_gain,
            pyramid_sigmas=cfg.feature.pyramid_sigmas,
            pyramid_weight=cfg.feature.pyramid_weight,
            eps=cfg.feature.eps,
        )
        ref = extract_features(_wrap(lv, lm), scale=s, cfg=ref_cfg)
        if s == 0:
            ref_full = ref
        dm = attention_refine(dm, ref)
        fused = dm if fused is None else _merge(_upsample2(fused, dm.values.shape), dm)

    for s in range(min(scales) - 1, -1, -1):
        fused = _upsample2(fused, levels[s][0].shape)
    fused = _despeckle(fused, cfg.despeckle)
    if ref_full is None:
        lv, lm, _, _ = levels[0]
        ref_cfg = FeatureConfig(
            gain=cfg.attention_gain,
            pyramid_sigmas=cfg.feature.pyramid_sigmas,
            pyramid_weight=cfg.feature.pyramid_weight,
            eps=cfg.feature.eps,
        )
        ref_full = extract_features(_wrap(lv, lm), scale=0, cfg=ref_cfg)
    return attention_refine(fused, ref_full)


def _wrap(vals, mask) -> ScalarField:
    from .fields import Grid2D

    h, w = vals.shape
    return ScalarField(Grid2D(nx=w, ny=h, dx=1.0, dy=1.0), vals, mask)


# ---------------------------------------------------------------------------
# classical baseline


def classical_block_match(img_L: ScalarField, img_R: ScalarField, max_disp: int = 24,
                          patch: int = 7) -> DisparityMap:
    """Row-wise normalized cross-correlation matcher with parabolic sub-pixel
    refinement; the conventional baseline the pipeline is compared against.
    """
    if img_L.values.shape != img_R.values.shape:
        raise DimMismatch("left/right images differ in shape")
    h, w = img_L.values.shape
    lm, rm = img_L.mask(), img_R.mask()
    lv = np.where(lm, img_L.values, 0.0)
    rv = np.where(rm, img_R.values, 0.0)

    box = np.ones((patch, patch))
    eps = 1e-9

    def ncc_terms(a, m):
        cnt = ndimage.convolve(m.astype(float), box, mode="nearest")
        s = ndimage.convolve(a, box, mode="nearest")
        s2 = ndimage.convolve(a * a, box, mode="nearest")
        mean = s / np.maximum(cnt, 1.0)
        var = np.maximum(s2 / np.maximum(cnt, 1.0) - mean**2, 0.0)
        return mean, np.sqrt(var) + eps, cnt

    lmean, lstd, lcnt = ncc_terms(lv, lm)
    costs = np.full((max_disp + 1, h, w), -np.inf)
    full = float(patch * patch)
    for d in range(max_disp + 1):
        shifted = np.zeros_like(rv)
        smask = np.zeros_like(rm)
        if d == 0:
            shifted[:] = rv
            smask[:] = rm
        else:
            shifted[:, d:] = rv[:, :-d]
            smask[:, d:] = rm[:, :-d]
        prod = ndimage.convolve(lv * shifted, box, mode="nearest")
        bmean, bstd, bcnt = ncc_terms(shifted, smask)
        pair_cnt = ndimage.convolve((lm & smask).astype(float), box, mode="nearest")
        ncc = (prod / full - lmean * bmean) / (lstd * bstd)
        ncc = np.where((pair_cnt >= full - 0.5), ncc, -np.inf)
        costs[d] = ncc

    best = np.argmax(costs, axis=0)
    rows, cols = np.indices((h, w))
    c0 = costs[best, rows, cols]
    valid = np.isfinite(c0) & lm
    d_out = best.astype(float)
    inner = (best > 0) & (best < max_disp) & valid
    cm = costs[np.maximum(best - 1, 0), rows, cols]
    cp = costs[np.minimum(best + 1, max_disp), rows, cols]
    denom = cm - 2.0 * c0 + cp
    ok = inner & np.isfinite(cm) & np.isfinite(cp) & (np.abs(denom) > 1e-12)
    d_out = np.where(ok, best + 0.5 * (cm - cp) / np.where(ok, denom, 1.0), d_out)
    d_out = np.where(valid, np.clip(d_out, 0.0, max_disp), 0.0)
    return DisparityMap(d_out, None if valid.all() else valid)
