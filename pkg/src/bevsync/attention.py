"""Multi-view attention over corresponding windows in the two neighbor views.

For view m and cell p, candidates are the K x K cells around the rounded
correspondence of p in the right and in the left neighbor.  Each candidate
feature gets a sinusoidal encoding of the displacement between p and the
candidate mapped back into view m, and one softmax runs jointly over all
candidates of both neighbors.  Scores are plain dot products (no 1/sqrt(c)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .correspondence import CorrespondenceMap
from .errors import ConfigError
from .homography import apply_homography_array, invert_homography

__all__ = [
    "AttentionParams",
    "AttentionPlan",
    "displacement_encoding",
    "build_attention_plan",
    "mv_attention",
    "attend_residual",
]


def displacement_encoding(delta, c: int, max_wavelength: float = 112.0) -> np.ndarray:
    """Sinusoidal code of 2-D displacements, shape (..., c).

    Per frequency k the block is [sin(w dx), cos(w dx), sin(w dy), cos(w dy)]
    with wavelengths spaced geometrically from 1 to ``max_wavelength``.
    """
    if c <= 0 or c % 4:
        raise ConfigError(f"channel count must be a positive multiple of 4, got {c}")
    n = c // 4
    if n == 1:
        wavelengths = np.array([1.0])
    else:
        wavelengths = max_wavelength ** (np.arange(n) / (n - 1))
    omega = 2 * np.pi / wavelengths
    delta = np.asarray(delta, dtype=float)
    ax = delta[..., 0:1] * omega
    ay = delta[..., 1:2] * omega
    out = np.stack([np.sin(ax), np.cos(ax), np.sin(ay), np.cos(ay)], axis=-1)
    return out.reshape(delta.shape[:-1] + (c,))


@dataclass
class AttentionParams:
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.Q), np.shape(self.K), np.shape(self.V)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2 or next(iter(shapes))[0] != next(iter(shapes))[1]:
            raise ConfigError("Q, K and V must be square matrices of one size")

    @property
    def channels(self) -> int:
        return int(np.shape(self.Q)[0])

    @classmethod
    def random(cls, c: int, seed: int = 0, scale: float | None = None) -> "AttentionParams":
        from .rng import normal_field

        s = scale if scale is not None else 1 / np.sqrt(c)
        return cls(*(s * normal_field(seed, (c, c), "attention", name) for name in "QKV"))


@dataclass(frozen=True)
class AttentionPlan:
    """Gather tables for all views, each shaped (M, h, w, N) with N = 2 K^2.

    ``view``/``flat`` locate each candidate, ``mask`` marks real candidates and
    ``delta`` (M, h, w, N, 2) holds the displacement in index units.
    """

    view: np.ndarray
    flat: np.ndarray
    mask: np.ndarray
    delta: np.ndarray
    K: int
    shape: tuple[int, int]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def M(self) -> int:
        return self.view.shape[0]

    def encodings(self, c: int) -> np.ndarray:
        if c not in self._cache:
            h, w = self.shape
            enc = displacement_encoding(np.nan_to_num(self.delta), c, 2.0 * max(h, w))
            self._cache[c] = enc * self.mask[..., None]
        return self._cache[c]


def build_attention_plan(maps: dict[tuple[int, int], CorrespondenceMap], M: int, K: int = 3) -> AttentionPlan:
    """Precompute candidate windows from adjacent-pair maps keyed by (source, target)."""
    if K < 1 or K % 2 == 0:
        raise ConfigError(f"window size must be odd and >= 1, got {K}")
    from .camera import left_neighbor, right_neighbor

    h, w = next(iter(maps.values())).shape
    half = K // 2
    offs = np.array([(dr, dc) for dr in range(-half, half + 1) for dc in range(-half, half + 1)])
    N = 2 * len(offs)
    view = np.zeros((M, h, w, N), dtype=np.intp)
    flat = np.zeros((M, h, w, N), dtype=np.intp)
    mask = np.zeros((M, h, w, N), dtype=bool)
    delta = np.full((M, h, w, N, 2), np.nan)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for m in range(1, M + 1):
        for slot, nb in enumerate((right_neighbor(m, M), left_neighbor(m, M))):
            cmap = maps[(m, nb)]
            if cmap.shape != (h, w):
                raise ConfigError("all correspondence maps must share one grid")
            sl = slice(slot * len(offs), (slot + 1) * len(offs))
            r = cmap.index[..., 0][..., None] + offs[:, 0]
            c = cmap.index[..., 1][..., None] + offs[:, 1]
            inside = cmap.valid[..., None] & (r >= 0) & (r < h) & (c >= 0) & (c < w)
            cand = np.stack([c, r], axis=-1).astype(float)
            back_pts = apply_homography_array(invert_homography(cmap.homography), cand)
            if cmap.far is not None and cmap.far.any():
                far_pts = apply_homography_array(invert_homography(cmap.far_homography), cand)
                back_pts = np.where(cmap.far[..., None, None], far_pts, back_pts)
            d = back_pts - np.stack([jj, ii], axis=-1)[..., None, :]
            inside &= np.isfinite(d).all(axis=-1)
            view[m - 1, ..., sl] = nb - 1
            flat[m - 1, ..., sl] = np.where(inside, r * w + c, 0)
            mask[m - 1, ..., sl] = inside
            delta[m - 1, ..., sl, :] = np.where(inside[..., None], d, np.nan)
    return AttentionPlan(view, flat, mask, delta, K, (h, w))


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def mv_attention(features, params: AttentionParams, plan: AttentionPlan, *, encode: bool = True,
                 return_weights: bool = False):
    """Attention outputs for every view, shape (M, h, w, c).

    ``features`` is an (M, h, w, c) array or tensor; numpy in gives numpy out.
    Cells without any candidate produce zeros.
    """
    as_numpy = not isinstance(features, torch.Tensor)
    F = _as_tensor(features)
    Q, Kw, V = (_as_tensor(p).to(F.dtype) for p in (params.Q, params.K, params.V))
    M, h, w, c = F.shape
    if (M, h, w) != (plan.M, *plan.shape) or Q.shape != (c, c):
        raise ConfigError(f"features {tuple(F.shape)} do not match plan {(plan.M, *plan.shape)} / params {tuple(Q.shape)}")

    view = torch.as_tensor(plan.view)
    flat = torch.as_tensor(plan.flat)
    mask = torch.as_tensor(plan.mask)
    Fbar = F.reshape(M, h * w, c)[view, flat]  # (M, h, w, N, c)
    if encode:
        Fbar = Fbar + torch.as_tensor(plan.encodings(c), dtype=F.dtype)

    # [Q f] . [K g] = [(Q f)^T K] g, so project the query once instead of every candidate
    qk = (F @ Q.T) @ Kw
    scores = (qk.unsqueeze(-2) * Fbar).sum(-1)
    neg_inf = torch.tensor(float("-inf"), dtype=F.dtype)
    scores = torch.where(mask, scores, neg_inf)
    top = scores.amax(-1, keepdim=True)
    top = torch.where(torch.isfinite(top), top, torch.zeros_like(top))
    e = torch.exp(scores - top) * mask
    denom = e.sum(-1, keepdim=True)
    weights = e / torch.where(denom > 0, denom, torch.ones_like(denom))
    out = (weights.unsqueeze(-1) * Fbar).sum(-2) @ V.T
    if as_numpy:
        out, weights = out.detach().numpy(), weights.detach().numpy()
    return (out, weights) if return_weights else out


def attend_residual(features, params: AttentionParams, plan: AttentionPlan, **kw):
    return features + mv_attention(features, params, plan, **kw)
