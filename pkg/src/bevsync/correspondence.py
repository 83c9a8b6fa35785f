"""Latent-resolution correspondence maps between adjacent views.

Maps live in *index coordinates*: latent cell (row i, col j) sits at (x, y) = (j, i).
Continuous image coordinates put that cell's center at (j + 0.5, i + 0.5) * factor,
so index coordinates are the latent-scaled image coordinates shifted by half a cell.

Cells that see ground follow the ground-plane homography; cells at or above the
horizon follow the infinite homography. Each map records which one applies.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraRig
from .errors import ConfigError, NoCorrespondenceError
from .homography import (
    apply_homography_array, far_visibility, ground_homography, ground_visibility, infinite_homography, normalize,
)

__all__ = [
    "CorrespondenceMap",
    "round_half_away",
    "latent_scale_homography",
    "index_homography",
    "pair_homography",
    "correspondence_map",
    "cell_visibility",
    "merge_maps",
    "pair_correspondence_map",
    "build_correspondence_map",
    "build_rig_maps",
    "neighborhood",
    "overlap_fraction",
    "save_correspondence_map",
]


@dataclass(frozen=True)
class CorrespondenceMap:
    source: int
    target: int
    coords: np.ndarray  # (h, w, 2) continuous target (x, y) in index units, NaN where invalid
    index: np.ndarray  # (h, w, 2) rounded target (row, col), -1 where invalid
    valid: np.ndarray  # (h, w) bool
    homography: np.ndarray  # source index coords -> target index coords
    far: np.ndarray | None = None  # (h, w) cells mapped by far_homography instead
    far_homography: np.ndarray | None = None

    def cell_homography(self, i: int, j: int) -> np.ndarray:
        """The homography that maps source cell (i, j)."""
        if self.far is not None and self.far[i, j]:
            return self.far_homography
        return self.homography

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    @property
    def mask(self) -> np.ndarray:
        """Overlap mask of this ordered pair."""
        return self.valid

    def pairs(self):
        """Valid (source_flat, target_flat) indices in row-major source order."""
        h, w = self.shape
        src = np.flatnonzero(self.valid)
        tgt = self.index[..., 0].ravel()[src] * w + self.index[..., 1].ravel()[src]
        return src, tgt


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5))


def latent_scale_homography(H, factor: float = 8.0) -> np.ndarray:
    """Conjugate an image-resolution homography to a grid ``factor`` times coarser."""
    if not factor > 0:
        raise ConfigError("scale factor must be positive")
    S = np.diag([1.0 / factor, 1.0 / factor, 1.0])
    S_inv = np.diag([factor, factor, 1.0])
    return normalize(S @ np.asarray(H, dtype=float) @ S_inv)


def index_homography(H_latent) -> np.ndarray:
    """Continuous latent coordinates -> index coordinates (half-cell shift on both sides)."""
    to_cont = np.array([[1.0, 0, 0.5], [0, 1.0, 0.5], [0, 0, 1.0]])
    to_idx = np.array([[1.0, 0, -0.5], [0, 1.0, -0.5], [0, 0, 1.0]])
    return normalize(to_idx @ np.asarray(H_latent, dtype=float) @ to_cont)


def pair_homography(rig: CameraRig, src: int, dst: int) -> np.ndarray:
    """Image-resolution ground-plane homography from view ``src`` to view ``dst``."""
    return ground_homography(rig.camera(src), rig.camera(dst))


def correspondence_map(H_index, h: int, w: int, source: int = 1, target: int = 2,
                       visible=None) -> CorrespondenceMap:
    """Apply an index-coordinate homography to every cell of an h x w grid.

    A cell is valid when its rounded target index falls inside the grid and,
    if ``visible`` (h, w) is given, the cell is marked visible there.
    """
    jj, ii = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    pts = apply_homography_array(H_index, np.stack([jj, ii], axis=-1))
    finite = np.isfinite(pts).all(axis=-1)
    col = round_half_away(np.where(finite, pts[..., 0], -1))
    row = round_half_away(np.where(finite, pts[..., 1], -1))
    valid = finite & (row >= 0) & (row < h) & (col >= 0) & (col < w)
    if visible is not None:
        valid &= np.asarray(visible, dtype=bool)
    index = np.where(valid[..., None], np.stack([row, col], axis=-1), -1).astype(np.intp)
    coords = np.where(valid[..., None], pts, np.nan)
    for a in (coords, index, valid):
        a.flags.writeable = False
    return CorrespondenceMap(source, target, coords, index, valid, np.asarray(H_index))


def _to_index(rig: CameraRig, H_image, h: int, w: int) -> np.ndarray:
    Hi, Wi = rig.image_size
    if Hi * w != Wi * h or Hi % h:
        raise ConfigError(f"latent grid {h}x{w} is not an integer downscale of {Hi}x{Wi}")
    return index_homography(latent_scale_homography(H_image, Hi / h))


def _cell_centers(rig: CameraRig, h: int, w: int) -> np.ndarray:
    s = rig.image_size[0] / h
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    return np.stack([(jj + 0.5) * s, (ii + 0.5) * s], axis=-1)


def cell_visibility(rig: CameraRig, src: int, dst: int, h: int, w: int, far: bool = False) -> np.ndarray:
    """(h, w) mask of latent cells whose center sees ground also in front of ``dst``,
    or with ``far`` the cells at or above the horizon whose direction ``dst`` faces."""
    test = far_visibility if far else ground_visibility
    return test(rig.camera(src), rig.camera(dst), _cell_centers(rig, h, w))


def merge_maps(near: CorrespondenceMap, far: CorrespondenceMap) -> CorrespondenceMap:
    """One map from two with disjoint validity; ``far`` cells keep their own homography."""
    if (near.valid & far.valid).any():
        raise ConfigError("merged maps must have disjoint validity")
    sel = far.valid
    out = [np.where(sel[..., None], far.coords, near.coords), np.where(sel[..., None], far.index, near.index),
           near.valid | sel, sel.copy()]
    for a in out:
        a.flags.writeable = False
    coords, index, valid, is_far = out
    return CorrespondenceMap(near.source, near.target, coords, index, valid, near.homography, is_far,
                             far.homography)


def pair_correspondence_map(rig: CameraRig, src: int, dst: int, h: int, w: int) -> CorrespondenceMap:
    """Latent-grid map from view ``src`` to view ``dst``: ground plane below the
    horizon, infinite homography at and above it."""
    near = correspondence_map(_to_index(rig, pair_homography(rig, src, dst), h, w), h, w, src, dst,
                              cell_visibility(rig, src, dst, h, w))
    H_inf = infinite_homography(rig.camera(src), rig.camera(dst))
    far = correspondence_map(_to_index(rig, H_inf, h, w), h, w, src, dst, cell_visibility(rig, src, dst, h, w, True))
    return merge_maps(near, far)


def build_correspondence_map(rig: CameraRig, m: int, h: int, w: int):
    """Maps from view ``m`` to its right and to its left neighbor, in that order."""
    return tuple(pair_correspondence_map(rig, m, dst, h, w) for dst in (rig.right(m), rig.left(m)))


def build_rig_maps(rig: CameraRig, h: int, w: int) -> dict[tuple[int, int], CorrespondenceMap]:
    """All ordered adjacent-pair maps keyed by (source, target)."""
    out = {}
    for m in range(1, rig.M + 1):
        to_r, to_l = build_correspondence_map(rig, m, h, w)
        out[(m, to_r.target)] = to_r
        out[(m, to_l.target)] = to_l
    return out


def neighborhood(cmap: CorrespondenceMap, p, K: int = 3) -> list[tuple[int, int]]:
    """K x K target window around the rounded correspondence of cell ``p`` = (row, col),
    clipped to the grid."""
    if K < 1 or K % 2 == 0:
        raise ConfigError(f"window size must be odd and >= 1, got {K}")
    i, j = p
    if not cmap.valid[i, j]:
        raise NoCorrespondenceError(f"cell {(i, j)} of view {cmap.source} has no correspondence")
    r0, c0 = cmap.index[i, j]
    h, w = cmap.shape
    half = K // 2
    return [
        (r, c)
        for r in range(max(r0 - half, 0), min(r0 + half, h - 1) + 1)
        for c in range(max(c0 - half, 0), min(c0 + half, w - 1) + 1)
    ]


def overlap_fraction(cmap: CorrespondenceMap) -> float:
    return float(cmap.valid.mean())


def save_correspondence_map(cmap: CorrespondenceMap, directory, stem: str | None = None) -> Path:
    """Validity mask as PNG plus the target coordinate table as ``.npy``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or f"overlap_{cmap.source}_to_{cmap.target}"
    png = directory / f"{stem}.png"
    Image.fromarray(cmap.valid.astype(np.uint8) * 255, mode="L").save(png)
    np.save(directory / f"{stem}_coords.npy", np.asarray(cmap.coords))
    return png
