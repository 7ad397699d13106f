"""Wave spectra and bulk statistics: Welch PSD, directional spectrum,
significant height, peak frequency and spectral tail slope."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import NoPeak, TooShort
from .fields import ScalarFieldSeries


@dataclass
class Psd:
    freqs: np.ndarray
    power: np.ndarray
    df: float

    def m0(self) -> float:
        """Zeroth spectral moment (variance)."""
        return float(np.sum(self.power) * self.df)


@dataclass
class DirectionalSpectrum:
    """Energy density over (direction of propagation, frequency), m^2/Hz/deg."""

    thetas: np.ndarray
    freqs: np.ndarray
    density: np.ndarray

    def total(self) -> float:
        dth = self.thetas[1] - self.thetas[0]
        df = self.freqs[1] - self.freqs[0]
        return float(self.density.sum() * dth * df)

    def peak(self):
        """(theta, f) of the density maximum."""
        it, jf = np.unravel_index(np.argmax(self.density), self.density.shape)
        return float(self.thetas[it]), float(self.freqs[jf])


@dataclass
class WaveStats:
    hs: float
    fp: float
    tp: float
    tail_slope: float


def compute_psd(signal_values, dt: float, segment_len: int = 256, overlap: float = 0.5) -> Psd:
    """Welch estimate: Hann-windowed, window-power-normalized, one-sided.

    Parameters
    ----------
    signal_values : 1D array
    dt : float
        Sample spacing in seconds.
    segment_len : int
        Samples per Welch segment (>= 16).
    overlap : float
        Segment overlap fraction in [0, 1).
    """
    x = np.asarray(signal_values, dtype=float).ravel()
    if segment_len < 16:
        raise TooShort(f"segment_len must be >= 16, got {segment_len}")
    if x.size < segment_len:
        raise TooShort(f"need at least segment_len={segment_len} samples, got {x.size}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    freqs, power = signal.welch(
        x,
        fs=1.0 / dt,
        window="hann",
        nperseg=segment_len,
        noverlap=int(overlap * segment_len),
        detrend="constant",
        scaling="density",
    )
    return Psd(freqs=freqs, power=power, df=float(freqs[1] - freqs[0]))


def wave_stats(psd: Psd, tail_fit_range: tuple = (1.5, 4.0)) -> WaveStats:
    """Bulk statistics from a PSD.

    hs = 4 sqrt(m0); fp from the peak bin with parabolic sub-bin refinement;
    the tail slope is the log-log least-squares slope over
    [lo*fp, min(hi*fp, 0.8 f_nyquist)].
    """
    power = np.asarray(psd.power, dtype=float)
    freqs = np.asarray(psd.freqs, dtype=float)
    m0 = psd.m0()
    hs = 4.0 * np.sqrt(max(m0, 0.0))

    pos = freqs > 0
    if not pos.any() or np.allclose(power[pos], power[pos][0]):
        raise NoPeak("spectrum is flat, no resolvable peak")
    idx = np.argmax(np.where(pos, power, -np.inf))
    if power[idx] <= 0:
        raise NoPeak("peak power is not positive")
    fp = freqs[idx]
    if 0 < idx < freqs.size - 1:
        y0, y1, y2 = power[idx - 1], power[idx], power[idx + 1]
        denom = y0 - 2.0 * y1 + y2
        if abs(denom) > 0:
            shift = 0.5 * (y0 - y2) / denom
            if abs(shift) <= 1.0:
                fp = freqs[idx] + shift * psd.df

    f_lo = tail_fit_range[0] * fp
    f_hi = min(tail_fit_range[1] * fp, 0.8 * freqs[-1])
    sel = (freqs >= f_lo) & (freqs <= f_hi) & (power > 0)
    if sel.sum() >= 3:
        slope = np.polyfit(np.log(freqs[sel]), np.log(power[sel]), 1)[0]
    else:
        slope = np.nan
    return WaveStats(hs=float(hs), fp=float(fp), tp=float(1.0 / fp), tail_slope=float(slope))


def directional_spectrum(series: ScalarFieldSeries, n_theta: int = 181, n_radial: int | None = None) -> DirectionalSpectrum:
    """Direction-frequency spectrum from the 3D periodogram of the record.

    The windowed space-time FFT power is resampled, per positive frequency,
    from the wavenumber plane onto polar bins (bilinear interpolation) and
    integrated over radial wavenumber. For a wave cos(k.x - w t) with w > 0
    the FFT places energy at (-k, +w), so the plane is looked up at the
    negated wavevector to report the propagation direction. The density is
    normalized so its double integral equals var(eta).
    """
    nt = series.nt
    ny, nx = series.grid.shape
    if nt < 32 or nx < 8 or ny < 8:
        raise TooShort(f"record too small for a directional spectrum: nt={nt}, grid={ny}x{nx}")
    eta = series.data - series.data.mean()
    var = float(np.var(series.data))

    wt = np.hanning(nt)[:, None, None]
    wy = np.hanning(ny)[None, :, None]
    wx = np.hanning(nx)[None, None, :]
    P = np.abs(np.fft.fftn(eta * (wt * wy * wx))) ** 2

    freqs_t = np.fft.fftfreq(nt, d=series.dt)
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=series.grid.dx)
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=series.grid.dy)
    pos_t = np.nonzero(freqs_t > 0)[0]
    freqs = freqs_t[pos_t]

    thetas = np.arange(n_theta) * (360.0 / n_theta)
    th_rad = np.deg2rad(thetas)
    if n_radial is None:
        n_radial = max(nx, ny)
    k_max = min(np.abs(kx).max(), np.abs(ky).max())
    radii = np.linspace(0.0, k_max, n_radial + 1)[1:]

    # propagation direction: sample the plane at -k
    kx_s = -np.outer(np.cos(th_rad), radii)
    ky_s = -np.outer(np.sin(th_rad), radii)
    dkx = kx[1] - kx[0]
    dky = ky[1] - ky[0]
    ix = kx_s / dkx
    iy = ky_s / dky

    ix0 = np.floor(ix).astype(int)
    iy0 = np.floor(iy).astype(int)
    fx = ix - ix0
    fy = iy - iy0

    def wrap(i, n):
        return np.mod(i, n)

    dens = np.zeros((n_theta, freqs.size))
    dr = radii[1] - radii[0] if radii.size > 1 else radii[0]
    for out_i, ti in enumerate(pos_t):
        plane = P[ti]
        p00 = plane[wrap(iy0, ny), wrap(ix0, nx)]
        p01 = plane[wrap(iy0, ny), wrap(ix0 + 1, nx)]
        p10 = plane[wrap(iy0 + 1, ny), wrap(ix0, nx)]
        p11 = plane[wrap(iy0 + 1, ny), wrap(ix0 + 1, nx)]
        interp = (
            p00 * (1 - fx) * (1 - fy)
            + p01 * fx * (1 - fy)
            + p10 * (1 - fx) * fy
            + p11 * fx * fy
        )
        dens[:, out_i] = (interp * radii).sum(axis=1) * dr

    dth = 360.0 / n_theta
    df = freqs[1] - freqs[0] if freqs.size > 1 else 1.0
    total = dens.sum() * dth * df
    if total > 0:
        dens *= var / total
    return DirectionalSpectrum(thetas=thetas, freqs=freqs, density=dens)
