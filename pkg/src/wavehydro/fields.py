"""Uniform-grid field containers and the stencil/integration operators built on them.

Conventions
-----------
Arrays are indexed ``[row, col] = [y, x]``; series payloads are
``[frame, y, x]``. Physical node coordinates are ``X(i) = x0 + i*dx`` and
``Y(j) = y0 + j*dy``. Missing data is carried by a boolean validity mask
(True = valid), never by sentinel values. All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndexTooSmall


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular grid.

    Parameters
    ----------
    nx, ny : int
        Node counts along x and y (each >= 2).
    dx, dy : float
        Node spacing in meters (> 0).
    x0, y0 : float
        Physical coordinates of node (0, 0).
    """

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError(f"grid spacing must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extent(self) -> tuple[float, float]:
        """Periodic domain lengths (nx*dx, ny*dy)."""
        return (self.nx * self.dx, self.ny * self.dy)

    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) arrays of shape (ny, nx)."""
        return np.meshgrid(self.x(), self.y())


def _as_values(grid, values, name="values"):
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ValueError(f"{name} shape {arr.shape} does not match grid {grid.shape}")
    return arr


def _as_mask(grid, valid):
    if valid is None:
        return None
    m = np.asarray(valid, dtype=bool)
    if m.shape != grid.shape:
        raise ValueError(f"mask shape {m.shape} does not match grid {grid.shape}")
    return m


@dataclass
class ScalarField:
    """A scalar quantity sampled on a Grid2D, with an optional validity mask."""

    grid: Grid2D
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.values = _as_values(self.grid, self.values)
        self.valid = _as_mask(self.grid, self.valid)
        check = self.values if self.valid is None else self.values[self.valid]
        if check.size and not np.all(np.isfinite(check)):
            raise ValueError("non-finite values outside the invalid mask")

    def mask(self) -> np.ndarray:
        """Validity as a dense boolean array (all True when no mask is set)."""
        if self.valid is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.valid


@dataclass
class ScalarFieldSeries:
    """Time-ordered stack of ScalarFields on a shared grid.

    ``data`` has shape (nt, ny, nx); frames are uniformly spaced ``dt`` apart
    starting at ``t0``.
    """

    grid: Grid2D
    dt: float
    data: np.ndarray
    t0: float = 0.0
    valid: np.ndarray | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[1:] != self.grid.shape:
            raise ValueError(f"series data shape {self.data.shape} does not match grid {self.grid.shape}")
        if self.data.shape[0] < 3:
            raise ValueError("series needs at least 3 frames for temporal stencils")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.data.shape:
                raise ValueError("series mask shape does not match data")

    @property
    def nt(self) -> int:
        return self.data.shape[0]

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    def frame(self, k: int) -> ScalarField:
        v = None if self.valid is None else self.valid[k]
        return ScalarField(self.grid, self.data[k], v)

    @property
    def frames(self) -> list[ScalarField]:
        return [self.frame(k) for k in range(self.nt)]

    def mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.data.shape, dtype=bool)
        return self.valid

    @classmethod
    def from_frames(cls, frames, dt, t0=0.0):
        grid = frames[0].grid
        for f in frames[1:]:
            if f.grid != grid:
                raise ValueError("all frames must share the same grid")
        data = np.stack([f.values for f in frames])
        masks = [f.valid for f in frames]
        valid = None
        if any(m is not None for m in masks):
            valid = np.stack([f.mask() for f in frames])
        return cls(grid, dt, data, t0=t0, valid=valid)


@dataclass
class VectorField3:
    """Three velocity components on a shared grid (m/s)."""

    grid: Grid2D
    ux: np.ndarray
    uy: np.ndarray
    uz: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.ux = _as_values(self.grid, self.ux, "ux")
        self.uy = _as_values(self.grid, self.uy, "uy")
        self.uz = _as_values(self.grid, self.uz, "uz")
        self.valid = _as_mask(self.grid, self.valid)

    def mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.valid

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.ux**2 + self.uy**2 + self.uz**2)


@dataclass
class Tensor3:
    """Dense rank-3 tensor, row-major with the last axis fastest."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 3:
            raise ValueError(f"expected 3 axes, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite tensor entries")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


# ---------------------------------------------------------------------------
# stencil operators


def _axis_gradient(values, h, axis):
    d = np.empty_like(values)
    v = np.moveaxis(values, axis, 0)
    out = np.moveaxis(d, axis, 0)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return d


def _erode_mask_axis(valid, axis):
    """A node stays valid only if every node its stencil touches is valid."""
    v = np.moveaxis(valid, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = v[2:] & v[:-2] & v[1:-1]
    out[0] = v[0] & v[1] & v[2]
    out[-1] = v[-1] & v[-2] & v[-3]
    return np.moveaxis(out, axis, 0)


def central_gradient(f: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Spatial gradient (d/dX, d/dY) of a scalar field.

    Interior nodes use second-order central differences; boundary nodes use
    one-sided second-order stencils so the whole field keeps uniform order of
    accuracy. Output nodes whose stencil touches an invalid input node are
    marked invalid.
    """
    dx_vals = _axis_gradient(f.values, f.grid.dx, axis=1)
    dy_vals = _axis_gradient(f.values, f.grid.dy, axis=0)
    vx = vy = None
    if f.valid is not None:
        vx = _erode_mask_axis(f.valid, axis=1)
        vy = _erode_mask_axis(f.valid, axis=0)
        dx_vals[~vx] = 0.0
        dy_vals[~vy] = 0.0
    return (ScalarField(f.grid, dx_vals, vx), ScalarField(f.grid, dy_vals, vy))


def backward_time_derivative(series: ScalarFieldSeries, frame_index: int) -> ScalarField:
    """Second-order backward stencil (3f_t - 4f_{t-1} + f_{t-2}) / (2 dt)."""
    if frame_index < 2:
        raise IndexTooSmall(f"backward stencil needs frame_index >= 2, got {frame_index}")
    d = (3.0 * series.data[frame_index] - 4.0 * series.data[frame_index - 1] + series.data[frame_index - 2]) / (
        2.0 * series.dt
    )
    valid = None
    if series.valid is not None:
        valid = series.valid[frame_index] & series.valid[frame_index - 1] & series.valid[frame_index - 2]
        d = np.where(valid, d, 0.0)
    return ScalarField(series.grid, d, valid)


def forward_time_derivative(series: ScalarFieldSeries, frame_index: int) -> ScalarField:
    """Second-order forward stencil; companion for the first two frames."""
    if frame_index > series.nt - 3:
        raise IndexTooSmall(f"forward stencil needs frame_index <= nt-3, got {frame_index}")
    d = (-3.0 * series.data[frame_index] + 4.0 * series.data[frame_index + 1] - series.data[frame_index + 2]) / (
        2.0 * series.dt
    )
    valid = None
    if series.valid is not None:
        valid = series.valid[frame_index] & series.valid[frame_index + 1] & series.valid[frame_index + 2]
        d = np.where(valid, d, 0.0)
    return ScalarField(series.grid, d, valid)


def time_derivative_series(series: ScalarFieldSeries) -> np.ndarray:
    """d/dt of the whole record as an (nt, ny, nx) array.

    Frames >= 2 use the backward stencil; frames 0 and 1 use the forward
    stencil so integrands are defined over the full record (callers decide
    which frames they trust).
    """
    out = np.empty_like(series.data)
    out[2:] = (3.0 * series.data[2:] - 4.0 * series.data[1:-1] + series.data[:-2]) / (2.0 * series.dt)
    out[0] = (-3.0 * series.data[0] + 4.0 * series.data[1] - series.data[2]) / (2.0 * series.dt)
    out[1] = (-3.0 * series.data[1] + 4.0 * series.data[2] - series.data[3]) / (2.0 * series.dt)
    return out


def fourier_time_integral(series: ScalarFieldSeries, eps: float = 0.0, mode: str = "definite") -> ScalarFieldSeries:
    """Per-node antiderivative of the record computed in the frequency domain.

    The spectral multiplier is the regularized reciprocal -i*w / (w^2 + eps^2)
    with the DC bin forced to zero. Before transforming, a linear ramp
    cancelling the seam discontinuity of the periodic extension is removed
    (the record's own continuation is estimated by quadratic extrapolation,
    so exactly periodic records pass through untouched), along with the
    per-node mean.

    Parameters
    ----------
    eps : float
        Low-frequency regularization (1/s); 0 disables it.
    mode : {"definite", "oscillatory"}
        ``definite`` restores the removed mean and ramp analytically and
        anchors the first frame at zero, yielding the running integral from
        the record start. ``oscillatory`` returns only the zero-time-mean
        antiderivative of the detrended record, the convention needed when
        the integrand's secular drift is non-physical.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if mode not in ("definite", "oscillatory"):
        raise ValueError(f"unknown mode {mode!r}")
    if series.nt < 4:
        raise ValueError("need at least 4 frames for spectral integration")
    sig = series.data
    n = series.nt
    j = np.arange(n, dtype=np.float64).reshape(-1, 1, 1)
    f_end = 3.0 * sig[-1] - 3.0 * sig[-2] + sig[-3]
    slope = (f_end - sig[0]) / n
    detrended = sig - slope * j
    mean = detrended.mean(axis=0)
    detrended -= mean

    w = 2.0 * np.pi * np.fft.fftfreq(n, d=series.dt)
    mult = np.zeros(n, dtype=np.complex128)
    nz = w != 0
    if eps == 0.0:
        mult[nz] = 1.0 / (1j * w[nz])
    else:
        mult[nz] = -1j * w[nz] / (w[nz] ** 2 + eps**2)
    spec = np.fft.fft(detrended, axis=0) * mult.reshape(-1, 1, 1)
    osc = np.fft.ifft(spec, axis=0).real

    if mode == "oscillatory":
        out = osc - osc.mean(axis=0)
    else:
        t = j * series.dt
        out = (osc - osc[0]) + mean * t + 0.5 * slope * j * j * series.dt

    valid = None
    if series.valid is not None:
        node_ok = series.valid.all(axis=0)
        valid = np.broadcast_to(node_ok, series.data.shape).copy()
        out = np.where(valid, out, 0.0)
    return ScalarFieldSeries(series.grid, series.dt, out, t0=series.t0, valid=valid)
