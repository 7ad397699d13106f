"""NumPy reference implementations of the hot stereo kernels.

These are the import-time fallback for the compiled extension and the
ground truth it is tested against. Scores more than EXP_CUTOFF below the
row maximum are dropped before exponentiation; at double precision they
would contribute less than 3e-20 of the softmax mass.
"""

from __future__ import annotations

import numpy as np

EXP_CUTOFF = 45.0

IS_COMPILED = False


def _masked_softmax_matvec(scores, values, out_row):
    """softmax(scores) @ values with -inf masking and cutoff, row-wise."""
    m = scores.max(axis=1, keepdims=True)
    shifted = scores - m
    e = np.zeros_like(shifted)
    np.exp(shifted, out=e, where=shifted > -EXP_CUTOFF)
    denom = e.sum(axis=1)
    out_row[:] = (e @ values) / denom


def row_soft_disparity(FL, FR, validL=None, validR=None):
    """Fused per-row correlation + masked softmax expectation.

    Parameters
    ----------
    FL, FR : (H, W, D) float64
        Feature maps (any scaling already applied).
    validL, validR : (H, W) bool, optional
        Invalid right pixels are excluded as candidates; invalid left pixels
        produce an invalid output pixel.

    Returns
    -------
    d : (H, W) float64
        j - E[matching column]; 0 where invalid.
    valid : (H, W) bool
    """
    H, W, D = FL.shape
    inv_sqrt_d = 1.0 / np.sqrt(D)
    ks = np.arange(W, dtype=np.float64)
    tri_mask = ks[None, :] > np.arange(W)[:, None]  # k > j masked
    d = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)
    for i in range(H):
        S = (FL[i] @ FR[i].T) * inv_sqrt_d
        S[tri_mask] = -np.inf
        if validR is not None:
            S[:, ~validR[i]] = -np.inf
        ok = np.isfinite(S).any(axis=1)
        if validL is not None:
            ok &= validL[i]
        if not np.any(ok):
            continue
        Sv = S[ok]
        m = Sv.max(axis=1, keepdims=True)
        shifted = Sv - m
        e = np.zeros_like(shifted)
        np.exp(shifted, out=e, where=shifted > -EXP_CUTOFF)
        coor = (e @ ks) / e.sum(axis=1)
        d[i, ok] = np.flatnonzero(ok) - coor
        valid[i, ok] = True
    return d, valid


def attention_apply(F2, values, valid=None, block: int = 2048):
    """Feature self-attention applied to a value vector.

    out[n] = sum_k softmax_k(F2[n].F2[k] / sqrt(D)) * values[k], the softmax
    running over valid source locations only. Every query location gets an
    output as long as at least one source is valid.
    """
    F2 = np.asarray(F2, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    N, D = F2.shape
    inv_sqrt_d = 1.0 / np.sqrt(D)
    out = np.empty(N)
    col_invalid = None
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        if not v.any():
            raise ValueError("attention needs at least one valid source")
        if v.all():
            col_invalid = None
        else:
            col_invalid = ~v
    for s in range(0, N, block):
        S = (F2[s : s + block] @ F2.T) * inv_sqrt_d
        if col_invalid is not None:
            S[:, col_invalid] = -np.inf
        _masked_softmax_matvec(S, values, out[s : s + block])
    return out
