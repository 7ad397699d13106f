"""Disparity-to-elevation geometry: triangulation, mean-water-plane estimation,
frame changes and gridded resampling.

Rigs are specified post-rectification, so disparity is purely horizontal and
triangulation is the pinhole inverse Z = fx*B/d.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry
from .fields import Grid2D, ScalarField


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class StereoRig:
    left: CameraIntrinsics
    right: CameraIntrinsics
    R: np.ndarray
    T: np.ndarray
    baseline: float

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        T = np.asarray(self.T, dtype=float).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-10:
            raise ValueError("R is not orthonormal")
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        if abs(np.linalg.norm(T) - self.baseline) > 1e-6 * max(self.baseline, 1.0):
            raise ValueError("baseline must equal |T|")

    @classmethod
    def rectified(cls, intr: CameraIntrinsics, baseline: float):
        """Identical rectified cameras separated by ``baseline`` along +X."""
        return cls(intr, intr, np.eye(3), np.array([baseline, 0.0, 0.0]), baseline)


@dataclass(frozen=True)
class PlanePose:
    """Rigid map taking camera-frame points to the plane-aligned global frame."""

    R_g: np.ndarray
    T_g: np.ndarray
    inlier_fraction: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts @ np.asarray(self.R_g).T + np.asarray(self.T_g)

    def inverse(self) -> "PlanePose":
        R = np.asarray(self.R_g)
        T = np.asarray(self.T_g)
        return PlanePose(R.T, -R.T @ T, self.inlier_fraction)


D_MIN = 1e-3  # px; smaller disparities would make Z unbounded


def triangulate(disparity: ScalarField, rig: StereoRig):
    """Back-project a disparity map into camera-frame points.

    Returns
    -------
    points : (ny*nx, 3) array
    valid : (ny*nx,) bool
        False where the input is masked or the disparity is below the cutoff.
    """
    intr = rig.left
    h, w = disparity.grid.shape
    d = disparity.values
    valid = disparity.mask() & (d > D_MIN)
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        Z = intr.fx * rig.baseline / d
    Z = np.where(valid, Z, 0.0)
    X = (u - intr.cx) * Z / intr.fx
    Y = (v - intr.cy) * Z / intr.fy
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    return pts, valid.ravel()


def plane_disparity(rig: StereoRig, normal, offset: float, grid_shape) -> ScalarField:
    """Forward model: disparity induced by the plane n.p = offset (camera frame).

    Used by tests to close the loop triangulate(plane_disparity(...)) ~ plane.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    h, w = grid_shape
    intr = rig.left
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    # ray (X,Y,Z) = Z*r with r = ((u-cx)/fx, (v-cy)/fy, 1); n.p = offset fixes Z
    rx = (u - intr.cx) / intr.fx
    ry = (v - intr.cy) / intr.fy
    denom = n[0] * rx + n[1] * ry + n[2]
    Z = offset / denom
    d = intr.fx * rig.baseline / Z
    grid = Grid2D(nx=w, ny=h, dx=1.0, dy=1.0)
    return ScalarField(grid, d, valid=(Z > 0) & np.isfinite(d))


def fit_plane(points, valid=None, ransac_iters: int = 256, inlier_tol: float = 0.02, seed: int = 0) -> PlanePose:
    """RANSAC plane hypothesis selection with total-least-squares refinement.

    The returned pose rotates the plane normal onto +Z (normal signed toward
    the camera origin), translates the inlier centroid to Z = 0, and fixes
    the in-plane orientation by aligning global +X with the projection of
    camera +X onto the plane. Deterministic for a fixed seed: candidate
    triples are drawn by index only, so rigid pre-transforms of the cloud
    select the same inlier sets.

    Raises
    ------
    DegenerateGeometry
        If fewer than 3 valid points exist or the best hypothesis explains
        less than 20% of them.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if valid is not None:
        pts = pts[np.asarray(valid, dtype=bool)]
    n_pts = pts.shape[0]
    if n_pts < 3:
        raise DegenerateGeometry(f"need at least 3 valid points, got {n_pts}")

    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x9A4E)))
    triples = rng.integers(0, n_pts, size=(ransac_iters, 3))
    best_count = -1
    best_normal = None
    best_d = 0.0
    for i0, i1, i2 in triples:
        p0, p1, p2 = pts[i0], pts[i1], pts[i2]
        nvec = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(nvec)
        if norm < 1e-12:
            continue
        nvec = nvec / norm
        dist = np.abs((pts - p0) @ nvec)
        count = int(np.count_nonzero(dist <= inlier_tol))
        if count > best_count:
            best_count = count
            best_normal = nvec
            best_d = float(nvec @ p0)
    if best_normal is None or best_count / n_pts < 0.2:
        frac = 0.0 if best_count < 0 else best_count / n_pts
        raise DegenerateGeometry(f"best RANSAC hypothesis explains only {frac:.1%} of points")

    inliers = pts[np.abs(pts @ best_normal - best_d) <= inlier_tol]
    centroid = inliers.mean(axis=0)
    centered = inliers - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    # sign: camera origin on the +Z side of the plane
    if normal @ centroid > 0:
        normal = -normal

    e1 = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
    n1 = np.linalg.norm(e1)
    if n1 < 1e-9:
        e1 = np.array([0.0, 1.0, 0.0]) - normal[1] * normal
        n1 = np.linalg.norm(e1)
    e1 = e1 / n1
    e2 = np.cross(normal, e1)
    R_g = np.stack([e1, e2, normal])
    T_g = -R_g @ centroid
    return PlanePose(R_g=R_g, T_g=T_g, inlier_fraction=best_count / n_pts)


def to_global(points, pose: PlanePose) -> np.ndarray:
    """p' = R_g p + T_g for every point."""
    return pose.apply(points)


def project_eta(points_global, grid: Grid2D, valid=None) -> ScalarField:
    """Resample scattered global-frame Z values onto a uniform grid.

    Inverse-distance weighting (power 2) over samples within one cell radius
    in the grid metric; an exact node hit takes that sample's value; cells
    with no nearby sample come back invalid.
    """
    pts = np.asarray(points_global, dtype=float).reshape(-1, 3)
    if valid is not None:
        pts = pts[np.asarray(valid, dtype=bool)]
    gx = (pts[:, 0] - grid.x0) / grid.dx
    gy = (pts[:, 1] - grid.y0) / grid.dy
    z = pts[:, 2]

    acc_w = np.zeros(grid.shape)
    acc_wz = np.zeros(grid.shape)
    exact = np.full(grid.shape, np.nan)

    i0 = np.floor(gx).astype(int)
    j0 = np.floor(gy).astype(int)
    for dj in (-1, 0, 1, 2):
        for di in (-1, 0, 1, 2):
            ii = i0 + di
            jj = j0 + dj
            ok = (ii >= 0) & (ii < grid.nx) & (jj >= 0) & (jj < grid.ny)
            if not np.any(ok):
                continue
            d2 = (gx[ok] - ii[ok]) ** 2 + (gy[ok] - jj[ok]) ** 2
            within = d2 <= 1.0
            if not np.any(within):
                continue
            iw = ii[ok][within]
            jw = jj[ok][within]
            zw = z[ok][within]
            d2w = d2[within]
            hit = d2w < 1e-18
            if np.any(hit):
                exact[jw[hit], iw[hit]] = zw[hit]
            w = 1.0 / np.maximum(d2w, 1e-18)
            np.add.at(acc_w, (jw, iw), w)
            np.add.at(acc_wz, (jw, iw), w * zw)

    valid_out = acc_w > 0
    vals = np.zeros(grid.shape)
    vals[valid_out] = acc_wz[valid_out] / acc_w[valid_out]
    hitmask = np.isfinite(exact)
    vals[hitmask] = exact[hitmask]
    valid_out |= hitmask
    return ScalarField(grid, vals, valid_out)


# ----------------------------------------------------------------------------
# file formats


def write_rig(path, rig: StereoRig) -> None:
    doc = {
        "left": vars(rig.left).copy(),
        "right": vars(rig.right).copy(),
        "R": [list(map(float, row)) for row in rig.R],
        "T": list(map(float, rig.T)),
        "baseline": rig.baseline,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_rig(path) -> StereoRig:
    doc = json.loads(Path(path).read_text())
    left = CameraIntrinsics(**doc["left"])
    right = CameraIntrinsics(**doc["right"])
    return StereoRig(left, right, np.array(doc["R"]), np.array(doc["T"]), doc["baseline"])


def write_point_cloud(path, points, valid=None) -> None:
    """Little-endian float32 XYZ triples plus a JSON sidecar with the count."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if valid is not None:
        pts = pts[np.asarray(valid, dtype=bool)]
    Path(path).write_bytes(np.ascontiguousarray(pts, dtype="<f4").tobytes())
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps({"count": int(pts.shape[0]), "layout": "xyz-float32-le"}, sort_keys=True))


def read_point_cloud(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    return np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(-1, 3)
