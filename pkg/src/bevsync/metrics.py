"""Consistency and controllability metrics: overlap PSNR, semantic IoU and CIE76 Delta-E."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .camera import CameraRig
from .correspondence import pair_homography
from .errors import ConfigError, DomainError
from .homography import apply_homography_array, ground_visibility
from .projection import BevSemantics, unproject_views_to_bev

__all__ = [
    "PSNR_CAP",
    "psnr",
    "warp_into",
    "overlap_psnr",
    "OverlapPsnr",
    "semantic_iou",
    "IouResult",
    "bev_iou",
    "srgb_to_lab",
    "delta_e_cie76",
    "InstanceColorReport",
    "instance_color_report",
    "segment_by_palette",
    "MetricsReport",
    "parse_report",
]

PSNR_CAP = 99.0


def psnr(a, b, mask=None, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = (a - b) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    if diff.size == 0:
        raise ConfigError("PSNR over an empty region")
    mse = float(diff.mean())
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def _pixel_centers(shape) -> np.ndarray:
    u, v = np.meshgrid(np.arange(shape[1]) + 0.5, np.arange(shape[0]) + 0.5)
    return np.stack([u, v], axis=-1)


def warp_into(image, H, out_shape) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear backward warp: ``out(p) = image(H p)`` for every pixel center p.

    The mask is False where H p falls outside the full bilinear support.
    """
    img = np.asarray(image, dtype=float)
    Ho, Wo = out_shape
    q = apply_homography_array(H, _pixel_centers((Ho, Wo)))
    # continuous coordinates -> array indices (pixel centers at k + 0.5)
    col, row = q[..., 0] - 0.5, q[..., 1] - 0.5
    Hi, Wi = img.shape[:2]
    valid = np.isfinite(col) & np.isfinite(row) & (col >= 0) & (col <= Wi - 1) & (row >= 0) & (row <= Hi - 1)
    col = np.where(valid, col, 0.0)
    row = np.where(valid, row, 0.0)
    chans = img[..., None] if img.ndim == 2 else img
    out = np.stack(
        [map_coordinates(chans[..., k], [row, col], order=1, mode="nearest") for k in range(chans.shape[-1])],
        axis=-1,
    )
    return (out[..., 0] if img.ndim == 2 else out), valid


@dataclass
class OverlapPsnr:
    pairs: dict[tuple[int, int], float]
    skipped: list[tuple[int, int]] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.pairs.values()))) if self.pairs else float("nan")


def overlap_psnr(images, rig: CameraRig, homographies=None) -> OverlapPsnr:
    """PSNR between each view m and its right neighbor warped into m, over the overlap.

    ``homographies`` may override the pair maps, keyed (m, m_r) -> H with
    ``p_neighbor ~ H p_m``; the default is the ground-plane homography.
    """
    if len(images) != rig.M:
        raise ConfigError(f"expected {rig.M} images, got {len(images)}")
    pairs, skipped = {}, []
    for m in range(1, rig.M + 1):
        mr = rig.right(m)
        img_m = np.asarray(images[m - 1], dtype=float)
        if img_m.shape[:2] != tuple(rig.image_size):
            raise ConfigError(f"view {m} image is {img_m.shape[:2]}, rig expects {rig.image_size}")
        if homographies:
            H = homographies[(m, mr)]
            warped, valid = warp_into(images[mr - 1], H, rig.image_size)
        else:
            warped, valid = warp_into(images[mr - 1], pair_homography(rig, m, mr), rig.image_size)
            valid &= ground_visibility(rig.camera(m), rig.camera(mr), _pixel_centers(rig.image_size))
        if not valid.any():
            skipped.append((m, mr))
            continue
        pairs[(m, mr)] = psnr(img_m, warped, valid)
    return OverlapPsnr(pairs, skipped)


@dataclass
class IouResult:
    per_class: dict[int, float]
    covered: int = -1  # BEV cells with a prediction; -1 when not applicable

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_class.values()))) if self.per_class else float("nan")

    @property
    def defined(self) -> bool:
        return bool(self.per_class)


def semantic_iou(pred, gt, class_count: int, mask=None, ignore=()) -> IouResult:
    """Per-class IoU; classes absent from both maps are left out of the mean."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        pred, gt = pred[m], gt[m]
    out = {}
    for k in range(class_count):
        if k in ignore:
            continue
        p, g = pred == k, gt == k
        union = np.count_nonzero(p | g)
        if union:
            out[k] = np.count_nonzero(p & g) / union
    return IouResult(out)


def bev_iou(pred_views, rig: CameraRig, gt_bev: BevSemantics) -> IouResult:
    """Unproject predicted view labels, fuse by majority vote, score covered cells."""
    fused, covered = unproject_views_to_bev(pred_views, rig, gt_bev.grid)
    n = int(covered.sum())
    if n == 0:
        return IouResult({}, 0)
    res = semantic_iou(fused.labels, gt_bev.labels, gt_bev.class_count, mask=covered)
    res.covered = n
    return res


# -- color --------------------------------------------------------------------

# linear sRGB -> XYZ (D65); the reference white is the image of (1, 1, 1) so
# neutrals land exactly on a* = b* = 0
_SRGB_TO_XYZ = np.array(
    [[0.4124564, 0.3575761, 0.1804375], [0.2126729, 0.7151522, 0.0721750], [0.0193339, 0.1191920, 0.9503041]]
)
_WHITE = _SRGB_TO_XYZ.sum(axis=1)


def srgb_to_lab(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=float)
    if not np.isfinite(rgb).all() or (rgb < 0).any() or (rgb > 1).any():
        raise DomainError("sRGB components must lie in [0, 1]")
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = (lin @ _SRGB_TO_XYZ.T) / _WHITE
    d = 6 / 29
    f = np.where(xyz > d**3, np.cbrt(xyz), xyz / (3 * d * d) + 4 / 29)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def delta_e_cie76(rgb_a, rgb_b) -> float:
    return float(np.linalg.norm(srgb_to_lab(rgb_a) - srgb_to_lab(rgb_b)))


@dataclass
class InstanceColorReport:
    per_instance: dict[int, float]
    skipped: list[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_instance.values()))) if self.per_instance else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(list(self.per_instance.values()))) if self.per_instance else float("nan")


def instance_color_report(images, masks) -> InstanceColorReport:
    """Delta-E between each instance's mean masked color (all views pooled) and its target."""
    imgs = np.stack([np.asarray(i, dtype=float) for i in images])
    per, skipped = {}, []
    for inst in masks:
        m = np.asarray(inst.masks, dtype=bool)
        if m.shape != imgs.shape[:3]:
            raise ConfigError(f"instance {inst.instance_id} mask shape {m.shape} != images {imgs.shape[:3]}")
        if not m.any():
            skipped.append(inst.instance_id)
            continue
        mean_rgb = np.clip(imgs[m].mean(axis=0), 0.0, 1.0)
        per[inst.instance_id] = delta_e_cie76(mean_rgb, inst.color)
    return InstanceColorReport(per, skipped)


def segment_by_palette(image, palette) -> np.ndarray:
    """Label every pixel with the index of the nearest palette color (Euclidean RGB)."""
    img = np.asarray(image, dtype=float)
    pal = np.asarray(palette, dtype=float)
    d = ((img[..., None, :] - pal) ** 2).sum(-1)
    return d.argmin(-1).astype(np.uint8)


# -- report -------------------------------------------------------------------

@dataclass
class MetricsReport:
    overlap: OverlapPsnr | None = None
    perspective_iou: IouResult | None = None
    bev: IouResult | None = None
    color: InstanceColorReport | None = None
    reference_psnr: dict[int, float] | None = None

    def items(self) -> list[tuple[str, float | int | str]]:
        out: list[tuple[str, float | int | str]] = []
        if self.overlap is not None:
            for (m, mr), v in sorted(self.overlap.pairs.items()):
                out.append((f"overlap_psnr.pair_{m}_{mr}", v))
            for m, mr in self.overlap.skipped:
                out.append((f"overlap_psnr.pair_{m}_{mr}", "skipped"))
            out.append(("overlap_psnr.mean", self.overlap.mean))
        for prefix, res in (("iou_perspective", self.perspective_iou), ("iou_bev", self.bev)):
            if res is None:
                continue
            for k, v in sorted(res.per_class.items()):
                out.append((f"{prefix}.class_{k}", v))
            out.append((f"{prefix}.mean", res.mean if res.defined else "undefined"))
            if res.covered >= 0:
                out.append((f"{prefix}.covered_cells", res.covered))
        if self.color is not None:
            for k, v in sorted(self.color.per_instance.items()):
                out.append((f"delta_e.instance_{k}", v))
            for k in self.color.skipped:
                out.append((f"delta_e.instance_{k}", "skipped"))
            out.append(("delta_e.mean", self.color.mean))
            out.append(("delta_e.std", self.color.std))
        if self.reference_psnr is not None:
            for m, v in sorted(self.reference_psnr.items()):
                out.append((f"reference_psnr.view_{m}", v))
            out.append(("reference_psnr.mean", float(np.mean(list(self.reference_psnr.values())))))
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.items())

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in self.items()}, sort_keys=False)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_report(text: str) -> dict[str, float | str]:
    out: dict[str, float | str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, val = line.partition("=")
        try:
            out[key] = float(val)
        except ValueError:
            out[key] = val
    return out
