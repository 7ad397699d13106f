"""Subsurface velocity reconstruction from surface velocities.

The velocity potential is a horizontal Fourier series whose modes decay
exponentially with depth,

    Phi(X, Y, Z) = sum_nm a_nm exp(kappa_nm Z) exp(i (k_n X + k_m Y)),
    kappa_nm = sqrt(k_n^2 + k_m^2),

so each mode is harmonic by construction. Coefficients are the minimizer of

    0.5 * || grad(Phi)|_{z=eta} - U ||^2  +  0.5 * lambda * sum ||kappa a||^2,

a regularized linear least squares solved per frame: directly through the
normal equations for small mode counts, via LSMR above that. Reality of Phi
is enforced by parameterizing only the independent half-spectrum.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.sparse.linalg import lsmr

from .errors import FormatError, SingularSystem
from .fields import Grid2D, ScalarField, VectorField3

COEFF_MAGIC = b"WPC1\x00\x00\x00\x00"
DENSE_MODE_LIMIT = 4096


@dataclass(frozen=True)
class PotentialBasis:
    """Truncated horizontal Fourier basis over a periodic box (Lx, Ly)."""

    N: int
    M: int
    Lx: float
    Ly: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("need N, M >= 1")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain lengths must be positive")

    @classmethod
    def from_grid(cls, grid: Grid2D, N: int | None = None, M: int | None = None):
        """Basis spanning the grid's periodic extent; N, M default to nx/4, ny/4."""
        if N is None:
            N = max(1, grid.nx // 4)
        if M is None:
            M = max(1, grid.ny // 4)
        Lx, Ly = grid.extent
        return cls(N=N, M=M, Lx=Lx, Ly=Ly, x0=grid.x0, y0=grid.y0)

    @property
    def n_modes(self) -> int:
        return (2 * self.N + 1) * (2 * self.M + 1)

    def k_n(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(-self.N, self.N + 1) / self.Lx

    def k_m(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(-self.M, self.M + 1) / self.Ly

    def kappa(self) -> np.ndarray:
        kn = self.k_n()[:, None]
        km = self.k_m()[None, :]
        return np.hypot(kn, km)

    def half_spectrum(self):
        """Index arrays (n, m) of the representative mode of each conjugate pair."""
        ns, ms = [], []
        for n in range(0, self.N + 1):
            m_start = 1 if n == 0 else -self.M
            for m in range(m_start, self.M + 1):
                ns.append(n)
                ms.append(m)
        return np.array(ns), np.array(ms)


@dataclass
class PotentialCoefficients:
    """Fitted mode amplitudes; ``a`` has shape (nt, 2N+1, 2M+1), Hermitian per frame."""

    basis: PotentialBasis
    a: np.ndarray
    lam: float
    dt: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.complex128)
        if self.a.ndim == 2:
            self.a = self.a[None]
        expected = (2 * self.basis.N + 1, 2 * self.basis.M + 1)
        if self.a.shape[1:] != expected:
            raise ValueError(f"coefficient shape {self.a.shape[1:]} does not match basis {expected}")

    @property
    def nt(self) -> int:
        return self.a.shape[0]

    def penalty(self, t_index: int = 0) -> float:
        """sum ||kappa a||^2 over all modes at one frame."""
        return float(np.sum((self.basis.kappa() * np.abs(self.a[t_index])) ** 2))


def _pair_arrays(basis):
    ns, ms = basis.half_spectrum()
    kn = 2.0 * np.pi * ns / basis.Lx
    km = 2.0 * np.pi * ms / basis.Ly
    kappa = np.hypot(kn, km)
    return ns, ms, kn, km, kappa


def _design_matrix(basis, x, y, z):
    """Rows evaluate (d/dx, d/dy, d/dz) of the potential at (x, y, z);
    columns are (Re, Im) of each representative mode."""
    ns, ms, kn, km, kappa = _pair_arrays(basis)
    npts = x.size
    q = kn.size
    theta = np.outer(x, kn) + np.outer(y, km)
    s = np.sin(theta)
    c = np.cos(theta)
    del theta
    e = np.exp(np.outer(z, kappa))
    A = np.empty((3 * npts, 2 * q))
    es = e * s
    ec = e * c
    del e
    A[:npts, 0::2] = -2.0 * kn * es
    A[:npts, 1::2] = -2.0 * kn * ec
    A[npts : 2 * npts, 0::2] = -2.0 * km * es
    A[npts : 2 * npts, 1::2] = -2.0 * km * ec
    A[2 * npts :, 0::2] = 2.0 * kappa * ec
    A[2 * npts :, 1::2] = -2.0 * kappa * es
    return A, kappa


def _pack(basis, xvec):
    """Half-spectrum real vector -> Hermitian (2N+1, 2M+1) complex matrix."""
    ns, ms, _, _, _ = _pair_arrays(basis)
    a = np.zeros((2 * basis.N + 1, 2 * basis.M + 1), dtype=np.complex128)
    p = xvec[0::2]
    qq = xvec[1::2]
    a[ns + basis.N, ms + basis.M] = p + 1j * qq
    a[-ns + basis.N, -ms + basis.M] = p - 1j * qq
    return a


def _unpack(coeffs: PotentialCoefficients, t_index: int) -> np.ndarray:
    basis = coeffs.basis
    ns, ms, _, _, _ = _pair_arrays(basis)
    vals = coeffs.a[t_index][ns + basis.N, ms + basis.M]
    x = np.empty(2 * ns.size)
    x[0::2] = vals.real
    x[1::2] = vals.imag
    return x


def default_lambda(velocity: VectorField3, basis: PotentialBasis) -> float:
    """Scale-free default weight: 1e-4 * mean|U|^2 / mean(kappa^2)."""
    mask = velocity.mask()
    u2 = (velocity.ux**2 + velocity.uy**2 + velocity.uz**2)[mask]
    kap = basis.kappa()
    k2 = kap[kap > 0] ** 2
    if u2.size == 0 or k2.size == 0:
        return 1e-4
    return float(1e-4 * u2.mean() / k2.mean())


def fit_coefficients(
    velocity: VectorField3,
    eta: ScalarField,
    basis: PotentialBasis | None = None,
    lam: float | None = None,
    method: str = "auto",
) -> PotentialCoefficients:
    """Fit mode amplitudes to one frame of surface velocities.

    Parameters
    ----------
    velocity : VectorField3
        Observed velocities at the free surface.
    eta : ScalarField
        Surface elevation; observation points sit at (X, Y, eta(X, Y)).
    basis : PotentialBasis, optional
        Defaults to ``PotentialBasis.from_grid(velocity.grid)``.
    lam : float, optional
        Regularization weight; defaults to the scale-free heuristic.
    method : {"auto", "dense", "lsmr"}
        ``auto`` solves the normal equations directly up to 4096 modes and
        switches to LSMR above. ``lam == 0`` forces the dense path, which is
        the only one able to diagnose rank deficiency.

    Raises
    ------
    SingularSystem
        If ``lam == 0`` and the normal matrix is rank deficient; the error
        lists the (n, m) indices of the deficient modes.
    """
    if velocity.grid != eta.grid:
        raise ValueError("velocity and eta must share a grid")
    if basis is None:
        basis = PotentialBasis.from_grid(velocity.grid)
    if lam is None:
        lam = default_lambda(velocity, basis)
    if lam < 0:
        raise ValueError("lambda must be >= 0")

    mask = velocity.mask() & eta.mask()
    X, Y = velocity.grid.meshgrid()
    x = X[mask]
    y = Y[mask]
    z = eta.values[mask]
    b = np.concatenate([velocity.ux[mask], velocity.uy[mask], velocity.uz[mask]])
    A, kappa_cols = _design_matrix(basis, x, y, z)
    kper = np.repeat(kappa_cols, 2)

    if method == "auto":
        method = "dense" if (basis.n_modes <= DENSE_MODE_LIMIT or lam == 0.0) else "lsmr"
    if lam == 0.0 and method != "dense":
        raise ValueError("lam=0 requires the dense solver for rank-deficiency diagnostics")

    if method == "dense":
        G = A.T @ A
        G[np.diag_indices_from(G)] += 2.0 * lam * kper**2
        rhs = A.T @ b
        try:
            if lam == 0.0:
                _raise_if_singular(G, basis)
            xsol = cho_solve(cho_factor(G), rhs)
        except np.linalg.LinAlgError:
            _raise_if_singular(G, basis, force=True)
            raise
    elif method == "lsmr":
        Ascaled = A / kper
        damp = np.sqrt(2.0 * lam)
        xsol = lsmr(Ascaled, b, damp=damp, atol=1e-12, btol=1e-12, maxiter=3000)[0] / kper
    else:
        raise ValueError(f"unknown method {method!r}")

    a = _pack(basis, xsol)
    return PotentialCoefficients(basis=basis, a=a[None], lam=float(lam))


def _raise_if_singular(G, basis, force=False, rtol=1e-10):
    w, V = eigh(G)
    thresh = rtol * max(w.max(), 1e-300)
    bad = np.nonzero(w < thresh)[0]
    if bad.size == 0 and not force:
        return
    ns, ms, _, _, _ = _pair_arrays(basis)
    modes = set()
    for idx in bad:
        col = int(np.argmax(np.abs(V[:, idx])))
        pair = col // 2
        modes.add((int(ns[pair]), int(ms[pair])))
    raise SingularSystem(
        f"normal matrix is rank deficient ({bad.size} null directions) with lambda=0",
        deficient_modes=sorted(modes),
    )


def objective(coeffs_vec, A, b, lam, kappa_cols):
    """0.5*||A x - b||^2 + lambda * sum(kappa^2 (p^2 + q^2)); with matching gradient."""
    r = A @ coeffs_vec - b
    kper = np.repeat(kappa_cols, 2)
    val = 0.5 * float(r @ r) + lam * float(np.sum((kper * coeffs_vec) ** 2))
    grad = A.T @ r + 2.0 * lam * kper**2 * coeffs_vec
    return val, grad


def design_system(velocity: VectorField3, eta: ScalarField, basis: PotentialBasis):
    """Expose (A, b, kappa per pair) for verification against the solver."""
    mask = velocity.mask() & eta.mask()
    X, Y = velocity.grid.meshgrid()
    A, kappa_cols = _design_matrix(basis, X[mask], Y[mask], eta.values[mask])
    b = np.concatenate([velocity.ux[mask], velocity.uy[mask], velocity.uz[mask]])
    return A, b, kappa_cols


def evaluate_velocity(coeffs: PotentialCoefficients, points, t_index: int = 0) -> np.ndarray:
    """grad(Phi) at arbitrary points (X, Y, Z); returns an (n, 3) array."""
    basis = coeffs.basis
    ns, ms, kn, km, kappa = _pair_arrays(basis)
    vals = coeffs.a[t_index][ns + basis.N, ms + basis.M]
    p = vals.real
    q = vals.imag
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    out = np.zeros_like(pts)
    chunk = max(1, int(2e7 // max(ns.size, 1)))
    for s in range(0, pts.shape[0], chunk):
        px, py, pz = pts[s : s + chunk, 0], pts[s : s + chunk, 1], pts[s : s + chunk, 2]
        theta = np.outer(px, kn) + np.outer(py, km)
        e = np.exp(np.outer(pz, kappa))
        sinc = np.sin(theta) * p + np.cos(theta) * q
        cosc = np.cos(theta) * p - np.sin(theta) * q
        out[s : s + chunk, 0] = -2.0 * (e * sinc) @ kn
        out[s : s + chunk, 1] = -2.0 * (e * sinc) @ km
        out[s : s + chunk, 2] = 2.0 * (e * cosc) @ kappa
    return out


def evaluate_potential(coeffs: PotentialCoefficients, points, t_index: int = 0) -> np.ndarray:
    """Phi at arbitrary points; used by harmonicity checks."""
    basis = coeffs.basis
    ns, ms, kn, km, kappa = _pair_arrays(basis)
    vals = coeffs.a[t_index][ns + basis.N, ms + basis.M]
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    theta = np.outer(pts[:, 0], kn) + np.outer(pts[:, 1], km)
    e = np.exp(np.outer(pts[:, 2], kappa))
    return 2.0 * (e * (np.cos(theta) * vals.real - np.sin(theta) * vals.imag)).sum(axis=1)


def streamlines(coeffs: PotentialCoefficients, seeds, t_index: int = 0, step: float = 0.05,
                n_steps: int = 200):
    """Arc-length RK4 streamlines of the instantaneous field.

    Integration stops when a line crosses the mean water level (z > 0) or
    leaves the basis box horizontally; such lines are flagged truncated.

    Returns
    -------
    list of (polyline, truncated) with polyline an (m, 3) array.
    """
    basis = coeffs.basis
    lines = []

    def vel(p):
        return evaluate_velocity(coeffs, p[None], t_index)[0]

    def unit_vel(p):
        v = vel(p)
        s = np.linalg.norm(v)
        if s < 1e-300:
            return None
        return v / s

    for seed in np.asarray(seeds, dtype=float).reshape(-1, 3):
        pts = [seed.copy()]
        truncated = False
        p = seed.copy()
        for _ in range(n_steps):
            k1 = unit_vel(p)
            if k1 is None:
                pts.append(p.copy())
                continue
            k2 = unit_vel(p + 0.5 * step * k1)
            k3 = unit_vel(p + 0.5 * step * (k2 if k2 is not None else k1))
            k4 = unit_vel(p + step * (k3 if k3 is not None else k1))
            if k2 is None or k3 is None or k4 is None:
                truncated = True
                break
            p = p + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            pts.append(p.copy())
            if p[2] > 0.0 or not (0.0 <= p[0] - basis.x0 <= basis.Lx) or not (
                0.0 <= p[1] - basis.y0 <= basis.Ly
            ):
                truncated = True
                break
        lines.append((np.array(pts), truncated))
    return lines


def lowpass_coefficients(coeffs: PotentialCoefficients, cutoff_frac: float) -> PotentialCoefficients:
    """Temporal low-pass over the coefficient record (off by default everywhere)."""
    if not 0 < cutoff_frac <= 1:
        raise ValueError("cutoff_frac must be in (0, 1]")
    if coeffs.nt < 4:
        return coeffs
    F = np.fft.rfft(coeffs.a, axis=0)
    f = np.fft.rfftfreq(coeffs.nt)
    F[f > cutoff_frac * 0.5] = 0.0
    a = np.fft.irfft(F, n=coeffs.nt, axis=0)
    return PotentialCoefficients(coeffs.basis, a, coeffs.lam, coeffs.dt, coeffs.t0)


def stack_coefficients(frames: list[PotentialCoefficients], dt: float, t0: float = 0.0) -> PotentialCoefficients:
    basis = frames[0].basis
    for f in frames[1:]:
        if f.basis != basis:
            raise ValueError("all frames must share a basis")
    a = np.concatenate([f.a for f in frames], axis=0)
    return PotentialCoefficients(basis, a, frames[0].lam, dt=dt, t0=t0)


def write_coefficients(path, coeffs: PotentialCoefficients) -> None:
    header = {
        "version": 1,
        "N": coeffs.basis.N,
        "M": coeffs.basis.M,
        "Lx": coeffs.basis.Lx,
        "Ly": coeffs.basis.Ly,
        "x0": coeffs.basis.x0,
        "y0": coeffs.basis.y0,
        "nt": coeffs.nt,
        "lambda": coeffs.lam,
        "dt": coeffs.dt,
        "t0": coeffs.t0,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(coeffs.a, dtype="<c8").tobytes()
    Path(path).write_bytes(COEFF_MAGIC + struct.pack("<I", len(head)) + head + payload)


def read_coefficients(path) -> PotentialCoefficients:
    blob = Path(path).read_bytes()
    if blob[: len(COEFF_MAGIC)] != COEFF_MAGIC:
        raise FormatError("bad magic, not a coefficients file", offset=0)
    (hlen,) = struct.unpack_from("<I", blob, len(COEFF_MAGIC))
    start = len(COEFF_MAGIC) + 4
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", offset=start) from None
    basis = PotentialBasis(
        N=header["N"], M=header["M"], Lx=header["Lx"], Ly=header["Ly"],
        x0=header.get("x0", 0.0), y0=header.get("y0", 0.0),
    )
    count = header["nt"] * basis.n_modes
    expected = count * 8
    actual = len(blob) - (start + hlen)
    if actual != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, got {actual}", offset=start + hlen)
    a = np.frombuffer(blob, dtype="<c8", count=count, offset=start + hlen)
    a = a.reshape(header["nt"], 2 * basis.N + 1, 2 * basis.M + 1).astype(np.complex128)
    return PotentialCoefficients(basis, a, header["lambda"], dt=header["dt"], t0=header["t0"])
