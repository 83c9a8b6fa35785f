"""BEV semantics to perspective views by per-pixel ground ray casting, and back.

BEV grid layout: row index grows backward (-x), column index grows to the right
(-y), and cell (r, c) is centered at x = (H_b/2 - r) * mpc, y = (W_b/2 - c) * mpc,
so the ego sits at the center of cell (H_b/2, W_b/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera, CameraRig
from .errors import ConfigError, GeometryError

__all__ = [
    "VOID",
    "CLASS_NAMES",
    "BevGrid",
    "BevSemantics",
    "PerspectiveSemantics",
    "ground_hits",
    "world_to_cell",
    "cell_centers",
    "sample_bev",
    "project_bev_to_view",
    "project_all_views",
    "bev_votes",
    "unproject_view_to_bev",
    "unproject_views_to_bev",
    "rotate_bev",
    "save_label_map",
    "load_label_map",
]

VOID = 0
CLASS_NAMES = ("void", "drivable", "vehicle", "building", "vegetation")


@dataclass(frozen=True)
class BevGrid:
    shape: tuple[int, int] = (400, 400)
    meters_per_cell: float = 0.2
    class_count: int = len(CLASS_NAMES)

    def __post_init__(self):
        if not self.meters_per_cell > 0:
            raise ConfigError("meters_per_cell must be positive")

    @property
    def extent(self) -> tuple[float, float]:
        return self.shape[0] * self.meters_per_cell, self.shape[1] * self.meters_per_cell

    @property
    def ego_cell(self) -> tuple[int, int]:
        return self.shape[0] // 2, self.shape[1] // 2


@dataclass(frozen=True)
class BevSemantics:
    labels: np.ndarray
    meters_per_cell: float = 0.2
    class_count: int = len(CLASS_NAMES)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ConfigError("BEV labels must be a 2-D grid")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ConfigError(f"BEV labels must lie in [0, {self.class_count})")
        labels = labels.astype(np.uint8)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def grid(self) -> BevGrid:
        return BevGrid(self.labels.shape, self.meters_per_cell, self.class_count)


@dataclass(frozen=True)
class PerspectiveSemantics:
    labels: np.ndarray
    view: int = 1


def ground_hits(cam: Camera, image_size) -> tuple[np.ndarray, np.ndarray]:
    """World (x, y) where each pixel-center ray meets z = 0, plus a hit mask.

    Rays that are parallel to or point away from the ground are not hits.
    """
    C = cam.center
    if C[2] <= 0:
        raise GeometryError(f"camera height {C[2]:.3g} m is not above the ground")
    H, W = image_size
    u = np.arange(W) + 0.5
    v = np.arange(H) + 0.5
    uu, vv = np.meshgrid(u, v)
    pix = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    dirs = pix @ (cam.R.T @ np.linalg.inv(cam.K)).T
    dz = dirs[..., 2]
    hit = dz < -1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(hit, -C[2] / dz, np.nan)
    xy = C[:2] + lam[..., None] * dirs[..., :2]
    return xy, hit


def world_to_cell(xy, grid: BevGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest cell (rows, cols) of world points and an inside-extent mask."""
    xy = np.asarray(xy, dtype=float)
    Hb, Wb = grid.shape
    mpc = grid.meters_per_cell
    with np.errstate(invalid="ignore"):
        r = np.floor(Hb / 2 - xy[..., 0] / mpc + 0.5)
        c = np.floor(Wb / 2 - xy[..., 1] / mpc + 0.5)
    inside = (r >= 0) & (r < Hb) & (c >= 0) & (c < Wb)
    r = np.where(inside, r, 0).astype(np.intp)
    c = np.where(inside, c, 0).astype(np.intp)
    return r, c, inside


def cell_centers(grid: BevGrid) -> np.ndarray:
    """(H_b, W_b, 2) world xy of every cell center."""
    Hb, Wb = grid.shape
    r, c = np.meshgrid(np.arange(Hb), np.arange(Wb), indexing="ij")
    mpc = grid.meters_per_cell
    return np.stack([(Hb / 2 - r) * mpc, (Wb / 2 - c) * mpc], axis=-1)


def sample_bev(grid_values: np.ndarray, grid: BevGrid, cam: Camera, image_size, fill=0):
    """Nearest-cell lookup of any per-cell array for every pixel of ``cam``."""
    xy, hit = ground_hits(cam, image_size)
    r, c, inside = world_to_cell(xy, grid)
    valid = hit & inside
    out = np.full(valid.shape + grid_values.shape[2:], fill, dtype=grid_values.dtype)
    out[valid] = grid_values[r[valid], c[valid]]
    return out, valid


def project_bev_to_view(bev: BevSemantics, cam: Camera, image_size, view: int = 1) -> PerspectiveSemantics:
    labels, _ = sample_bev(bev.labels, bev.grid, cam, image_size, fill=VOID)
    return PerspectiveSemantics(labels, view)


def project_all_views(bev: BevSemantics, rig: CameraRig) -> list[PerspectiveSemantics]:
    return [
        project_bev_to_view(bev, cam, rig.image_size, view=m)
        for m, cam in enumerate(rig.cameras, start=1)
    ]


def bev_votes(sem: PerspectiveSemantics, cam: Camera, grid: BevGrid) -> np.ndarray:
    """Per-cell, per-class vote counts (H_b, W_b, c_b) from one view's non-void pixels."""
    labels = np.asarray(sem.labels)
    xy, hit = ground_hits(cam, labels.shape)
    r, c, inside = world_to_cell(xy, grid)
    keep = hit & inside & (labels != VOID)
    Hb, Wb = grid.shape
    flat = (r[keep] * Wb + c[keep]) * grid.class_count + labels[keep].astype(np.intp)
    counts = np.bincount(flat, minlength=Hb * Wb * grid.class_count)
    return counts.reshape(Hb, Wb, grid.class_count)


def _majority(votes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    covered = votes.sum(axis=-1) > 0
    # ties go to the smallest class id
    labels = np.where(covered, votes.argmax(axis=-1), VOID).astype(np.uint8)
    return labels, covered


def unproject_view_to_bev(sem: PerspectiveSemantics, cam: Camera, grid: BevGrid):
    """Majority-vote BEV labels from one view plus the coverage mask."""
    labels, covered = _majority(bev_votes(sem, cam, grid))
    return BevSemantics(labels, grid.meters_per_cell, grid.class_count), covered


def unproject_views_to_bev(sems, rig: CameraRig, grid: BevGrid):
    """Fuse several views by pooling all their votes before the majority."""
    votes = sum(bev_votes(s, cam, grid) for s, cam in zip(sems, rig.cameras))
    labels, covered = _majority(votes)
    return BevSemantics(labels, grid.meters_per_cell, grid.class_count), covered


def rotate_bev(bev: BevSemantics, yaw_deg: float) -> BevSemantics:
    """Resample labels so that ``out(X) = bev(Rz(yaw) X)`` (nearest cell, void outside)."""
    grid = bev.grid
    a = np.radians(yaw_deg)
    xy = cell_centers(grid)
    rot = np.stack(
        [np.cos(a) * xy[..., 0] - np.sin(a) * xy[..., 1], np.sin(a) * xy[..., 0] + np.cos(a) * xy[..., 1]],
        axis=-1,
    )
    r, c, inside = world_to_cell(rot, grid)
    out = np.where(inside, bev.labels[r, c], VOID)
    return BevSemantics(out, bev.meters_per_cell, bev.class_count)


# -- label map files ----------------------------------------------------------

def save_label_map(path, labels, palette, meters_per_cell: float | None = None) -> Path:
    """Write an 8-bit graymap plus a ``.txt`` sidecar header; returns the image path."""
    path = Path(path).with_suffix(".pgm")
    arr = np.asarray(labels)
    if arr.max(initial=0) > 255:
        raise ConfigError("labels do not fit in 8 bits")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)
    lines = [f"shape {arr.shape[0]} {arr.shape[1]}"]
    if meters_per_cell is not None:
        lines.append(f"meters_per_cell {meters_per_cell!r}")
    for k, rgb in enumerate(palette):
        name = CLASS_NAMES[k] if k < len(CLASS_NAMES) else f"class{k}"
        lines.append(f"class {k} {name} " + " ".join(str(int(round(255 * x))) for x in rgb))
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    return path


def load_label_map(path) -> tuple[np.ndarray, dict]:
    path = Path(path).with_suffix(".pgm")
    labels = np.asarray(Image.open(path), dtype=np.uint8)
    header: dict = {"palette": {}}
    side = path.with_suffix(".txt")
    if side.exists():
        for line in side.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "meters_per_cell":
                header["meters_per_cell"] = float(parts[1])
            elif parts[0] == "class":
                header["palette"][int(parts[1])] = (parts[2], tuple(int(x) for x in parts[3:6]))
    return labels, header
