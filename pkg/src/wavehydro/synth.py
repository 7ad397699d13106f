"""Synthetic deep-water wave fields with exact analytic kinematics.

Everything here is an oracle: linear superpositions of deep-water modes whose
surface and subsurface velocities are known in closed form, plus band-limited
textures and exactly-consistent stereo pairs for exercising the disparity
pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import ndimage

from .errors import DispersionViolation, NegativeDisparity, PositiveDepth
from .fields import Grid2D, ScalarField, ScalarFieldSeries, VectorField3

GRAVITY = 9.81


@dataclass(frozen=True)
class WaveComponent:
    """One deep-water mode: eta = amplitude * cos(kx X + ky Y - omega t + phase)."""

    amplitude: float
    kx: float
    ky: float
    omega: float
    phase: float = 0.0

    @property
    def k(self) -> float:
        return float(np.hypot(self.kx, self.ky))

    def dispersion_residual(self, g: float = GRAVITY) -> float:
        """Relative deviation from omega^2 = g*|k|."""
        gk = g * self.k
        if gk == 0.0:
            return abs(self.omega)
        return abs(self.omega**2 - gk) / gk

    @classmethod
    def from_polar(cls, amplitude, k, theta_deg, phase=0.0, g=GRAVITY):
        th = np.deg2rad(theta_deg)
        return cls(amplitude, k * np.cos(th), k * np.sin(th), float(np.sqrt(g * k)), phase)


def check_components(components, g: float = GRAVITY, tol: float = 1e-10):
    for i, c in enumerate(components):
        if c.amplitude < 0:
            raise DispersionViolation(f"component {i} has negative amplitude")
        r = c.dispersion_residual(g)
        if r > tol:
            raise DispersionViolation(f"component {i} violates deep-water dispersion (relative residual {r:.3e})")


@dataclass(frozen=True)
class SeaStateSpec:
    """Bulk sea-state parameters used to draw a random-phase component set."""

    hs: float
    fp: float
    gamma_spread: float = 8.0
    theta_mean: float = 95.0
    n_components: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.hs <= 0 or self.fp <= 0:
            raise ValueError("hs and fp must be positive")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")


def jonswap_density(f, fp, gamma=3.3):
    """Unnormalized JONSWAP spectral shape."""
    f = np.asarray(f, dtype=float)
    sigma = np.where(f <= fp, 0.07, 0.09)
    peak = gamma ** np.exp(-((f - fp) ** 2) / (2.0 * sigma**2 * fp**2))
    return f**-5.0 * np.exp(-1.25 * (fp / f) ** 4) * peak


def sea_state_components(spec: SeaStateSpec, f_range=(0.6, 2.8), g: float = GRAVITY,
                         freq_snap: float | None = None) -> list[WaveComponent]:
    """Draw a deterministic component set matching the requested Hs exactly.

    Frequencies sit at stratum centers of [f_range[0]*fp, f_range[1]*fp] so a
    record whose length is a multiple of 1/stratum-width sees near-bin-aligned
    tones; ``freq_snap`` optionally rounds frequencies to a multiple of the
    given value (e.g. 1/record_length) to make the alignment exact.
    Directions follow a cos^(2*gamma_spread)((theta-theta_mean)/2) spreading,
    phases are uniform; both come from the seeded generator.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(spec.seed), 0x5EA57A7E)))
    n = spec.n_components
    f_lo, f_hi = f_range[0] * spec.fp, f_range[1] * spec.fp
    df = (f_hi - f_lo) / n
    freqs = f_lo + (np.arange(n) + 0.5) * df
    if freq_snap:
        freqs = np.maximum(np.round(freqs / freq_snap), 1.0) * freq_snap
    weights = jonswap_density(freqs, spec.fp) * df
    amps = np.sqrt(2.0 * weights)
    amps *= (spec.hs / 4.0) / np.sqrt(np.sum(amps**2) / 2.0)

    # inverse-CDF sampling of the cosine-power spreading on a fine grid
    th_grid = np.linspace(-np.pi, np.pi, 3601)
    dens = np.cos(th_grid / 2.0) ** (2.0 * spec.gamma_spread)
    cdf = np.cumsum(dens)
    cdf /= cdf[-1]
    u = rng.uniform(0.0, 1.0, n)
    thetas = np.deg2rad(spec.theta_mean) + np.interp(u, cdf, th_grid)
    phases = rng.uniform(0.0, 2.0 * np.pi, n)

    comps = []
    for a, f, th, ph in zip(amps, freqs, thetas, phases):
        w = 2.0 * np.pi * f
        k = w**2 / g
        comps.append(WaveComponent(float(a), float(k * np.cos(th)), float(k * np.sin(th)), float(w), float(ph)))
    return comps


def load_preset(name: str) -> dict:
    """Load one of the named sea-state presets (A1..B3) shipped with the package."""
    ref = resources.files("wavehydro").joinpath(f"presets/{name}.json")
    try:
        return json.loads(ref.read_text())
    except FileNotFoundError:
        raise KeyError(f"unknown preset {name!r}") from None


def synth_elevation(components, grid: Grid2D, dt: float, nt: int, t0: float = 0.0,
                    g: float = GRAVITY) -> ScalarFieldSeries:
    """Superpose components into an elevation record eta(X, Y, t)."""
    check_components(components, g)
    X, Y = grid.meshgrid()
    npts = X.size
    data = np.zeros((nt, npts))
    if components:
        theta0 = np.stack([c.kx * X.ravel() + c.ky * Y.ravel() + c.phase for c in components])
        amps = np.array([c.amplitude for c in components])
        cosw = np.cos(theta0) * amps[:, None]
        sinw = np.sin(theta0) * amps[:, None]
        t = t0 + dt * np.arange(nt)
        omegas = np.array([c.omega for c in components])
        wt = np.outer(t, omegas)
        # cos(theta - w t) = cos(theta) cos(wt) + sin(theta) sin(wt)
        data = np.cos(wt) @ cosw + np.sin(wt) @ sinw
    return ScalarFieldSeries(grid, dt, data.reshape(nt, grid.ny, grid.nx), t0=t0)


def analytic_surface_velocity(components, grid: Grid2D, t: float, g: float = GRAVITY) -> VectorField3:
    """First-order orbital velocities at z=0 for the component superposition."""
    check_components(components, g)
    X, Y = grid.meshgrid()
    ux = np.zeros_like(X)
    uy = np.zeros_like(X)
    uz = np.zeros_like(X)
    for c in components:
        k = c.k
        if k == 0.0 or c.amplitude == 0.0:
            continue
        th = c.kx * X + c.ky * Y - c.omega * t + c.phase
        aw = c.amplitude * c.omega
        cth = np.cos(th)
        ux += aw * cth * (c.kx / k)
        uy += aw * cth * (c.ky / k)
        uz += aw * np.sin(th)
    return VectorField3(grid, ux, uy, uz)


def analytic_subsurface_velocity(components, points, t: float, g: float = GRAVITY) -> np.ndarray:
    """Orbital velocities at points (X, Y, Z<=0); returns an (n, 3) array.

    Each component decays as exp(|k| Z) below the mean water level.
    """
    check_components(components, g)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if np.any(pts[:, 2] > 0):
        bad = int(np.argmax(pts[:, 2] > 0))
        raise PositiveDepth(f"point {bad} has Z={pts[bad, 2]} > 0")
    out = np.zeros_like(pts)
    for c in components:
        k = c.k
        if k == 0.0 or c.amplitude == 0.0:
            continue
        th = c.kx * pts[:, 0] + c.ky * pts[:, 1] - c.omega * t + c.phase
        decay = np.exp(k * pts[:, 2])
        aw = c.amplitude * c.omega * decay
        cth = np.cos(th)
        out[:, 0] += aw * cth * (c.kx / k)
        out[:, 1] += aw * cth * (c.ky / k)
        out[:, 2] += aw * np.sin(th)
    return out


def bandlimited_texture(grid: Grid2D, cutoff: float = 0.16, seed: int = 0) -> ScalarField:
    """Zero-mean unit-variance random texture with no energy above ``cutoff`` cycles/px."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x7E77)))
    h, w = grid.shape
    white = rng.standard_normal((h, w))
    F = np.fft.rfft2(white)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    F *= np.hypot(fx, fy) <= cutoff
    tex = np.fft.irfft2(F, s=(h, w))
    tex -= tex.mean()
    std = tex.std()
    if std > 0:
        tex /= std
    return ScalarField(grid, tex)


def synth_stereo_pair(texture: ScalarField, disparity_gt: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Build an exactly-consistent rectified pair from a texture and a disparity map.

    The left image is the texture itself. The right image shows the same
    content displaced so that the match for left column ``j`` sits at right
    column ``k = j - d(j)`` (candidates lie to the left, and depth follows
    Z = f*B/d). With the disparity map indexed by left-image columns, the
    right image is resampled at ``j*(k)`` solving ``j - d(j) = k`` by fixed
    point, using cubic interpolation; right pixels whose source column falls
    outside the texture are flagged invalid.
    """
    if texture.grid != disparity_gt.grid:
        raise ValueError("texture and disparity must share a grid")
    d = disparity_gt.values
    if np.any(d < 0):
        raise NegativeDisparity(f"disparity must be >= 0, min is {d.min():.6g}")
    h, w = texture.grid.shape
    rows = np.arange(h)[:, None]
    k = np.broadcast_to(np.arange(w, dtype=float)[None, :], (h, w))
    j = np.array(k)
    for _ in range(50):
        jc = np.clip(j, 0.0, w - 1.0)
        j0 = np.floor(jc).astype(int)
        j1 = np.minimum(j0 + 1, w - 1)
        frac = jc - j0
        dj = d[rows, j0] * (1.0 - frac) + d[rows, j1] * frac
        j_new = k + dj
        if np.max(np.abs(j_new - j)) < 1e-12:
            j = j_new
            break
        j = j_new
    row_coords = np.broadcast_to(rows.astype(float), (h, w))
    right_vals = ndimage.map_coordinates(texture.values, [row_coords, j], order=3, mode="nearest")
    valid = (j >= 0.0) & (j <= w - 1.0)
    if texture.valid is not None:
        valid = valid & texture.valid
    right = ScalarField(texture.grid, np.where(valid, right_vals, 0.0), valid)
    left = ScalarField(texture.grid, texture.values.copy(), None if texture.valid is None else texture.valid.copy())
    return left, right
