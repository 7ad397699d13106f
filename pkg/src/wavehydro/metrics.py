"""Reconstruction error metrics for elevation fields and disparity sequences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, EmptyMask
from .fields import ScalarField, ScalarFieldSeries


@dataclass
class ErrorMetrics:
    """Container for both metric families; ops fill the part they compute."""

    r2: float | None = None
    rmse: float | None = None
    nrmse: float | None = None
    mae_field: ScalarField | None = None
    radial_mae: list = field(default_factory=list)
    epe: float | None = None
    epe_far: float | None = None
    bad1px: float | None = None
    d1: float | None = None
    sigma_t: float | None = None
    sigma_t_gt: float | None = None

    def to_dict(self) -> dict:
        out = {}
        for k in ("r2", "rmse", "nrmse", "epe", "epe_far", "bad1px", "d1", "sigma_t", "sigma_t_gt"):
            v = getattr(self, k)
            if v is not None:
                out[k] = float(v)
        if self.radial_mae:
            out["radial_mae"] = [[float(r), float(m)] for r, m in self.radial_mae]
        return out


def field_errors(pred: ScalarFieldSeries, gt: ScalarFieldSeries, center: tuple | None = None) -> ErrorMetrics:
    """Pooled R^2 / RMSE / NRMSE, the per-pixel time-mean absolute error field,
    and its radial profile around ``center`` (pixel coordinates (u, v),
    defaulting to the grid center). NRMSE is RMSE over the ground-truth
    standard deviation."""
    if pred.data.shape != gt.data.shape:
        raise DimMismatch(f"series shapes differ: {pred.data.shape} vs {gt.data.shape}")
    mask = pred.mask() & gt.mask()
    if not mask.any():
        raise EmptyMask("no jointly valid samples")
    diff = np.where(mask, pred.data - gt.data, 0.0)
    n = mask.sum()
    gt_vals = gt.data[mask]
    gt_mean = gt_vals.mean()
    ss_res = float((diff[mask] ** 2).sum())
    ss_tot = float(((gt_vals - gt_mean) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else -np.inf)
    rmse = float(np.sqrt(ss_res / n))
    gt_std = float(gt_vals.std())
    nrmse = rmse / gt_std if gt_std > 0 else np.inf

    cnt = mask.sum(axis=0)
    mae_vals = np.where(cnt > 0, np.abs(diff).sum(axis=0) / np.maximum(cnt, 1), 0.0)
    mae_field = ScalarField(pred.grid, mae_vals, cnt > 0)

    ny, nx = pred.grid.shape
    if center is None:
        center = ((nx - 1) / 2.0, (ny - 1) / 2.0)
    cu, cv = center
    uu, vv = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    radius = np.hypot(uu - cu, vv - cv)
    rbin = np.floor(radius).astype(int)
    radial = []
    ok = cnt > 0
    for r in range(int(rbin[ok].max()) + 1 if ok.any() else 0):
        sel = (rbin == r) & ok
        if sel.any():
            radial.append((float(r), float(mae_vals[sel].mean())))
    return ErrorMetrics(r2=float(r2), rmse=rmse, nrmse=float(nrmse), mae_field=mae_field, radial_mae=radial)


def disparity_errors(pred_seq, gt_seq, far_field_rows=None) -> ErrorMetrics:
    """Endpoint error (full field and far field), bad-pixel percentages and
    the temporal consistency statistic.

    EPE is the mean |pred - gt|; Bad1px the percentage above 1 px; D1 the
    percentage exceeding both 3 px and 5% of the true magnitude. sigma_t is
    the mean over frame pairs of the RMS frame-to-frame disparity difference
    of the prediction (the same statistic of the ground truth is reported
    alongside for reference).
    """
    pred_list = list(pred_seq)
    gt_list = list(gt_seq)
    if len(pred_list) != len(gt_list) or not pred_list:
        raise DimMismatch("sequences must be non-empty and of equal length")
    shapes = {p.values.shape for p in pred_list} | {g.values.shape for g in gt_list}
    if len(shapes) != 1:
        raise DimMismatch(f"maps differ in shape: {sorted(shapes)}")

    abs_err = []
    bad1 = []
    d1 = []
    far = []
    for p, g in zip(pred_list, gt_list):
        mask = p.mask() & g.mask()
        if not mask.any():
            raise EmptyMask("a frame has no jointly valid pixels")
        e = np.abs(p.values - g.values)[mask]
        abs_err.append(e)
        bad1.append(e > 1.0)
        d1.append((e > 3.0) & (e > 0.05 * np.abs(g.values[mask])))
        if far_field_rows is not None:
            fmask = np.zeros_like(mask)
            fmask[far_field_rows] = True
            fmask &= mask
            if fmask.any():
                far.append(np.abs(p.values - g.values)[fmask])
    abs_err = np.concatenate(abs_err)
    out = ErrorMetrics(
        epe=float(abs_err.mean()),
        bad1px=float(100.0 * np.concatenate(bad1).mean()),
        d1=float(100.0 * np.concatenate(d1).mean()),
    )
    if far:
        out.epe_far = float(np.concatenate(far).mean())

    if len(pred_list) >= 2:
        def sigma(seq):
            vals = []
            for a, b in zip(seq[1:], seq[:-1]):
                m = a.mask() & b.mask()
                if m.any():
                    vals.append(float(np.sqrt(np.mean((a.values - b.values)[m] ** 2))))
            return float(np.mean(vals)) if vals else None

        out.sigma_t = sigma(pred_list)
        out.sigma_t_gt = sigma(gt_list)
    return out
