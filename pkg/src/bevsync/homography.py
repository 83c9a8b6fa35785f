"""Plane-induced, infinite and DLT-estimated homographies between views."""

from __future__ import annotations

import numpy as np

from .camera import Camera
from .errors import ArityError, DegeneracyError, GeometryError, PointAtInfinityError

__all__ = [
    "normalize",
    "relative_pose",
    "ground_plane",
    "plane_induced_homography",
    "infinite_homography",
    "ground_homography",
    "ground_visibility",
    "far_visibility",
    "estimate_homography_dlt",
    "apply_homography",
    "apply_homography_array",
    "invert_homography",
    "format_homography",
    "parse_homography",
]


def normalize(H) -> np.ndarray:
    """Canonical scale: h33 = 1 when |h33| > 1e-9, else unit Frobenius norm
    with a positive first nonzero entry."""
    H = np.asarray(H, dtype=float).reshape(3, 3)
    if abs(H[2, 2]) > 1e-9:
        out = H / H[2, 2]
    else:
        n = np.linalg.norm(H)
        if n == 0:
            raise DegeneracyError("zero matrix is not a homography")
        out = H / n
        first = out.ravel()[np.flatnonzero(np.abs(out.ravel()) > 1e-15)[0]]
        if first < 0:
            out = -out
    if abs(np.linalg.det(out)) <= 1e-12:
        raise DegeneracyError("homography is singular")
    return out


def relative_pose(src: Camera, dst: Camera) -> tuple[np.ndarray, np.ndarray]:
    """(R, t) with ``X_dst = R @ X_src + t`` for camera-frame points."""
    R = dst.R @ src.R.T
    return R, dst.t - R @ src.t


def ground_plane(cam: Camera) -> tuple[np.ndarray, float]:
    """The world plane z = 0 as (n, d) with ``n . X = d`` in the camera frame, d > 0."""
    n = -cam.R @ np.array([0.0, 0.0, 1.0])
    d = float(n @ cam.t)
    if d <= 0:
        raise GeometryError(f"camera is not above the ground plane (height {d:.3g})")
    return n, d


def plane_induced_homography(src: Camera, dst: Camera, n, d: float) -> np.ndarray:
    """Homography mapping src pixels of points on the plane ``n . X = d``
    (source camera frame) to dst pixels: K_dst (R + t n^T / d) K_src^-1."""
    n = np.asarray(n, dtype=float)
    if not d > 0:
        raise DegeneracyError("camera center lies on the plane (d must be > 0)")
    if abs(np.linalg.norm(n) - 1) > 1e-9:
        raise GeometryError("plane normal must have unit length")
    R, t = relative_pose(src, dst)
    return normalize(dst.K @ (R + np.outer(t, n) / d) @ np.linalg.inv(src.K))


def infinite_homography(src: Camera, dst: Camera) -> np.ndarray:
    R, _ = relative_pose(src, dst)
    return normalize(dst.K @ R @ np.linalg.inv(src.K))


def ground_homography(src: Camera, dst: Camera) -> np.ndarray:
    n, d = ground_plane(src)
    return plane_induced_homography(src, dst, n, d)


def ground_visibility(src: Camera, dst: Camera, pts, eps: float = 1e-9) -> np.ndarray:
    """True where the ray through source pixel ``pts`` (..., 2) meets the ground
    in front of ``src`` and that ground point lies in front of ``dst``.

    The ground homography maps sky pixels and points behind the destination
    camera to finite pixels too; this mask keeps only real shared ground.
    """
    n, d = ground_plane(src)
    R, t = relative_pose(src, dst)
    pts = np.asarray(pts, dtype=float)
    rays = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1) @ np.linalg.inv(src.K).T
    along = rays @ n  # ray parameter of the hit is d / along
    depth_dst = rays @ (R + np.outer(t, n) / d)[2]  # dst depth per unit source ray parameter
    return (along > eps) & (depth_dst > eps * np.abs(along))


def far_visibility(src: Camera, dst: Camera, pts, eps: float = 1e-9) -> np.ndarray:
    """True where the ray through source pixel ``pts`` misses the ground ahead
    (at or above the horizon) and its direction lies in front of ``dst``.

    Such content is treated as infinitely far and follows the infinite homography.
    """
    n, _ = ground_plane(src)
    R, _ = relative_pose(src, dst)
    pts = np.asarray(pts, dtype=float)
    rays = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1) @ np.linalg.inv(src.K).T
    return ~(rays @ n > eps) & (rays @ R[2] > eps * np.linalg.norm(rays, axis=-1))


def _hartley(pts: np.ndarray) -> np.ndarray:
    mean = pts.mean(axis=0)
    dist = np.linalg.norm(pts - mean, axis=1).mean()
    if dist < 1e-15:
        raise DegeneracyError("all points coincide")
    s = np.sqrt(2) / dist
    return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])


def estimate_homography_dlt(src_pts, dst_pts) -> np.ndarray:
    """Normalized DLT estimate of H with ``dst ~ H src`` from >= 4 pairs."""
    p = np.asarray(src_pts, dtype=float).reshape(-1, 2)
    q = np.asarray(dst_pts, dtype=float).reshape(-1, 2)
    if len(p) != len(q):
        raise ArityError("source and target point counts differ")
    if len(p) < 4:
        raise ArityError(f"need at least 4 correspondences, got {len(p)}")
    if not (np.isfinite(p).all() and np.isfinite(q).all()):
        raise GeometryError("non-finite correspondence coordinates")
    Tp, Tq = _hartley(p), _hartley(q)
    pn = apply_homography_array(Tp, p)
    qn = apply_homography_array(Tq, q)

    x, y = pn[:, 0], pn[:, 1]
    u, v = qn[:, 0], qn[:, 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    A = np.empty((2 * len(p), 9))
    A[0::2] = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], axis=1)
    A[1::2] = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], axis=1)

    _, sv, Vt = np.linalg.svd(A)
    # a unique solution needs an 8-dimensional row space
    if len(sv) < 8 or sv[7] <= 1e-10 * sv[0]:
        raise DegeneracyError("correspondences are degenerate (collinear or repeated)")
    Hn = Vt[-1].reshape(3, 3)
    return normalize(np.linalg.inv(Tq) @ Hn @ Tp)


def apply_homography(H, p) -> np.ndarray:
    x, y, w = np.asarray(H, dtype=float) @ np.array([p[0], p[1], 1.0])
    if abs(w) < 1e-12:
        raise PointAtInfinityError(f"point {tuple(p)} maps to infinity")
    return np.array([x / w, y / w])


def apply_homography_array(H, pts, return_w: bool = False):
    """Vectorized mapping of an (..., 2) array; points with w ~ 0 become NaN."""
    pts = np.asarray(pts, dtype=float)
    H = np.asarray(H, dtype=float)
    x = H[0, 0] * pts[..., 0] + H[0, 1] * pts[..., 1] + H[0, 2]
    y = H[1, 0] * pts[..., 0] + H[1, 1] * pts[..., 1] + H[1, 2]
    w = H[2, 0] * pts[..., 0] + H[2, 1] * pts[..., 1] + H[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack([x / w, y / w], axis=-1)
    out[np.abs(w) < 1e-12] = np.nan
    return (out, w) if return_w else out


def invert_homography(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    s = np.linalg.svd(H, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise DegeneracyError("homography is numerically singular")
    return normalize(np.linalg.inv(H))


def format_homography(H) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(H, dtype=float).ravel())


def parse_homography(line: str) -> np.ndarray:
    vals = [float(v) for v in line.split()]
    if len(vals) != 9:
        raise GeometryError(f"expected 9 values, got {len(vals)}")
    return np.array(vals).reshape(3, 3)
