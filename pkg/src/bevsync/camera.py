"""Pinhole cameras, cyclic rig topology and rig manipulation.

World frame: ego at the origin, x forward, y left, z up; the ground is z = 0.
Camera frame: x right, y down, z along the optical axis.
Image coordinates are continuous with the origin at the top-left corner of the
top-left pixel, so pixel (row i, col j) has its center at (j + 0.5, i + 0.5).
View indices are 1-based everywhere in the public API.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCameraError, ConfigError, DomainError

__all__ = [
    "CameraIntrinsics",
    "CameraExtrinsics",
    "Camera",
    "CameraRig",
    "left_neighbor",
    "right_neighbor",
    "project_point",
    "pixel_ray",
    "yaw_matrix",
    "look_extrinsics",
    "rotate_rig",
    "save_rig",
    "load_rig",
    "format_rig",
    "parse_rig",
]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel intrinsics with the principal point at the image center."""
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(f, f, width / 2, height / 2)


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera transform, ``X_cam = rotation @ X_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.linalg.norm(r.T @ r - np.eye(3)) > 1e-9 or abs(np.linalg.det(r) - 1) > 1e-9:
            raise ConfigError("rotation must be orthonormal with determinant +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics

    @property
    def K(self) -> np.ndarray:
        return self.intrinsics.matrix

    @property
    def R(self) -> np.ndarray:
        return self.extrinsics.rotation

    @property
    def t(self) -> np.ndarray:
        return self.extrinsics.translation

    @property
    def center(self) -> np.ndarray:
        return self.extrinsics.center


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]
    image_size: tuple[int, int]  # (H, W)
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if len(self.cameras) < 2:
            raise ConfigError(f"a rig needs at least 2 cameras, got {len(self.cameras)}")
        if self.names and len(self.names) != len(self.cameras):
            raise ConfigError("names must match the number of cameras")

    @property
    def M(self) -> int:
        return len(self.cameras)

    def __len__(self) -> int:
        return len(self.cameras)

    def camera(self, m: int) -> Camera:
        """Camera of 1-based view ``m``."""
        _check_view(m, self.M)
        return self.cameras[m - 1]

    def left(self, m: int) -> int:
        return left_neighbor(m, self.M)

    def right(self, m: int) -> int:
        return right_neighbor(m, self.M)


def _check_view(m: int, M: int) -> None:
    if M < 1 or not 1 <= m <= M:
        raise DomainError(f"view index {m} outside 1..{M}")


def left_neighbor(m: int, M: int) -> int:
    _check_view(m, M)
    return (m + M - 2) % M + 1


def right_neighbor(m: int, M: int) -> int:
    _check_view(m, M)
    return m % M + 1


def project_point(cam: Camera, X) -> tuple[np.ndarray, float]:
    """Project world point ``X`` to (pixel, depth)."""
    Xc = cam.R @ np.asarray(X, dtype=float) + cam.t
    depth = float(Xc[2])
    if depth <= 1e-9:
        raise BehindCameraError(f"point has camera-frame depth {depth:.3g}")
    uvw = cam.K @ Xc
    return uvw[:2] / uvw[2], depth


def pixel_ray(cam: Camera, pixel) -> np.ndarray:
    """Camera-frame ray through ``pixel`` scaled to unit depth (z = 1)."""
    u, v = pixel
    return np.linalg.solve(cam.K, np.array([u, v, 1.0]))


def yaw_matrix(yaw_deg: float) -> np.ndarray:
    """Rotation about the world z axis, positive turning x toward y (left)."""
    a = np.radians(yaw_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def look_extrinsics(yaw_deg: float, position, pitch_deg: float = 0.0) -> CameraExtrinsics:
    """Extrinsics of a camera at ``position`` looking along heading ``yaw_deg``.

    Positive pitch tilts the optical axis down toward the ground.
    """
    a, p = np.radians(yaw_deg), np.radians(pitch_deg)
    forward = np.array([np.cos(a) * np.cos(p), np.sin(a) * np.cos(p), -np.sin(p)])
    right = np.array([np.sin(a), -np.cos(a), 0.0])
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])  # rows: camera axes in world coordinates
    C = np.asarray(position, dtype=float)
    return CameraExtrinsics(R, -R @ C)


def rotate_rig(rig: CameraRig, yaw_deg: float) -> CameraRig:
    """Turn every camera by ``yaw_deg`` about the ego vertical axis.

    Only rotations change; each camera center swings around the ego origin.
    """
    Rz = yaw_matrix(yaw_deg)
    cams = tuple(
        Camera(c.intrinsics, CameraExtrinsics(c.R @ Rz.T, c.t)) for c in rig.cameras
    )
    return CameraRig(cams, rig.image_size, rig.names)


# -- serialization ------------------------------------------------------------

_FIELDS_PER_RECORD = 1 + 5 + 9 + 3 + 2


def format_rig(rig: CameraRig) -> str:
    lines = ["# index fx fy cx cy skew r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2 H W"]
    H, W = rig.image_size
    for m, cam in enumerate(rig.cameras, start=1):
        k = cam.intrinsics
        vals = [k.fx, k.fy, k.cx, k.cy, k.skew, *cam.R.ravel(), *cam.t]
        lines.append(" ".join([str(m), *(repr(float(v)) for v in vals), str(H), str(W)]))
    return "\n".join(lines) + "\n"


def parse_rig(text: str) -> CameraRig:
    cams, size = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != _FIELDS_PER_RECORD:
            raise ConfigError(f"rig line {lineno}: expected {_FIELDS_PER_RECORD} fields, got {len(parts)}")
        if int(parts[0]) != len(cams) + 1:
            raise ConfigError(f"rig line {lineno}: camera indices must run 1..M in order")
        v = [float(x) for x in parts[1:-2]]
        hw = (int(parts[-2]), int(parts[-1]))
        if size is not None and hw != size:
            raise ConfigError("all cameras must share one image size")
        size = hw
        intr = CameraIntrinsics(*v[:5])
        extr = CameraExtrinsics(np.array(v[5:14]).reshape(3, 3), np.array(v[14:17]))
        cams.append(Camera(intr, extr))
    if size is None:
        raise ConfigError("rig file has no camera records")
    return CameraRig(tuple(cams), size)


def save_rig(rig: CameraRig, path) -> None:
    Path(path).write_text(format_rig(rig))


def load_rig(path) -> CameraRig:
    return parse_rig(Path(path).read_text())
