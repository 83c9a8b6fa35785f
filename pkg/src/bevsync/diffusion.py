"""Toy latent diffusion with cross-view noise synchronization and latent re-assignment.

Latent stacks are arrays shaped (M, h, w, c), one slice per view in rig order.
A *denoiser* is any callable ``(latents, t, condition) -> predicted noise`` with
the stack's shape; plain numpy functions and ``torch.nn.Module`` both work.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .attention import AttentionParams, AttentionPlan, attend_residual, build_attention_plan
from .camera import CameraRig, right_neighbor
from .correspondence import CorrespondenceMap, build_rig_maps
from .errors import ConfigError, ConflictError, DomainError, NumericError
from .rng import normal_field, philox_generator

__all__ = [
    "DiffusionSchedule",
    "Condition",
    "InstanceMask",
    "GenerateOptions",
    "Generation",
    "latent_lift",
    "encode_image",
    "decode_latent",
    "block_mode",
    "prompt_vector",
    "make_condition",
    "chain_pairs",
    "synchronize",
    "sample_synced_noise",
    "reassign_latents",
    "forward_noise",
    "training_loss",
    "denoise_step",
    "generate",
    "reassign_count",
    "downsample_mask",
    "blend_instance_latents",
    "analytic_gaussian_denoiser",
    "zero_denoiser",
    "TinyDenoiser",
    "train_denoiser",
]


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError("noise variances must satisfy 0 < start <= end < 1")

    @property
    def betas(self) -> np.ndarray:
        """Per-step variances for t = 1..T."""
        return np.linspace(self.beta_start, self.beta_end, self.T)

    @property
    def alpha_bars(self) -> np.ndarray:
        """Cumulative signal fractions for t = 0..T, with alpha_bar(0) = 1."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise DomainError(f"timestep {t} outside 0..{self.T}")
        return float(self.alpha_bars[t])

    def digest(self) -> str:
        return hashlib.sha256(self.alpha_bars.tobytes()).hexdigest()[:16]


# -- encoder stub -------------------------------------------------------------

def latent_lift(c: int = 4) -> np.ndarray:
    """(c, 3) matrix with orthonormal columns (first three DCT-II basis vectors)."""
    if c < 3:
        raise ConfigError("latent needs at least 3 channels to hold RGB")
    i = np.arange(c)[:, None] + 0.5
    L = np.cos(np.pi * i * np.arange(3)[None, :] / c)
    return L / np.linalg.norm(L, axis=0)


def encode_image(image, c: int = 4, factor: int = 8) -> np.ndarray:
    """8x8 block means lifted to c channels; accepts (..., H, W, 3)."""
    img = np.asarray(image, dtype=float)
    *lead, H, W, ch = img.shape
    if ch != 3 or H % factor or W % factor:
        raise ConfigError(f"image shape {img.shape} is not (..., {factor}h, {factor}w, 3)")
    blocks = img.reshape(*lead, H // factor, factor, W // factor, factor, 3).mean(axis=(-4, -2))
    return blocks @ latent_lift(c).T


def decode_latent(latent, factor: int = 8) -> np.ndarray:
    """Project back to RGB and upsample by nearest neighbor (no clipping)."""
    lat = np.asarray(latent, dtype=float)
    rgb = lat @ latent_lift(lat.shape[-1])
    return np.repeat(np.repeat(rgb, factor, axis=-3), factor, axis=-2)


# -- conditions ---------------------------------------------------------------

def block_mode(labels, factor: int = 8, class_count: int | None = None) -> np.ndarray:
    """Most frequent label per factor x factor block (ties -> smaller id)."""
    lab = np.asarray(labels).astype(np.intp)
    H, W = lab.shape[-2:]
    n = class_count or int(lab.max()) + 1
    blocks = lab.reshape(*lab.shape[:-2], H // factor, factor, W // factor, factor)
    onehot = np.eye(n, dtype=np.int32)[blocks]
    return onehot.sum(axis=(-4, -2)).argmax(-1)


@dataclass(frozen=True)
class Condition:
    """Per-view latent-resolution semantics, a prompt vector, and the rig's
    correspondence maps and attention windows."""

    semantics: np.ndarray  # (M, h, w) class ids
    prompt: np.ndarray  # (P,)
    class_count: int = 5
    maps: dict | None = None
    plan: AttentionPlan | None = None

    def __post_init__(self):
        sem = np.asarray(self.semantics)
        if sem.ndim != 3 or sem.min() < 0 or sem.max() >= self.class_count:
            raise ConfigError("semantics must be (M, h, w) with ids below class_count")
        if not np.isfinite(self.prompt).all():
            raise ConfigError("prompt vector must be finite")

    @property
    def onehot(self) -> np.ndarray:
        return np.eye(self.class_count)[np.asarray(self.semantics)]


def prompt_vector(text: str, dim: int = 8) -> np.ndarray:
    """Deterministic stand-in for a text encoder: hash-seeded unit-variance vector."""
    seed = int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")
    return normal_field(seed, (dim,), "prompt")


def make_condition(perspective_labels, rig: CameraRig, prompt="a street scene", K: int = 3,
                   class_count: int = 5, factor: int = 8) -> Condition:
    labels = np.stack([np.asarray(getattr(s, "labels", s)) for s in perspective_labels])
    H, W = rig.image_size
    h, w = H // factor, W // factor
    maps = build_rig_maps(rig, h, w)
    vec = prompt_vector(prompt) if isinstance(prompt, str) else np.asarray(prompt, dtype=float)
    return Condition(
        block_mode(labels, factor, class_count), vec, class_count, maps, build_attention_plan(maps, rig.M, K)
    )


@dataclass(frozen=True)
class InstanceMask:
    masks: np.ndarray  # (M, H, W) bool, image resolution
    instance_id: int = 1
    color: tuple[float, float, float] = (1.0, 0.0, 0.0)


# -- synchronization ----------------------------------------------------------

def chain_pairs(M: int) -> list[tuple[int, int]]:
    """(m, m_r) pairs visited from m = 1 until the right neighbor wraps back to 1."""
    pairs, m = [], 1
    while (mr := right_neighbor(m, M)) != 1:
        pairs.append((m, mr))
        m = mr
    return pairs


def synchronize(stack, maps: dict[tuple[int, int], CorrespondenceMap] | None):
    """Copy each view's values into its right neighbor along the chain.

    Within one pair, sources are visited row-major and a later source wins
    when several round to the same target cell.  Returns a new array.
    """
    out = np.array(stack, dtype=float, copy=True)
    if not maps:
        return out
    M, h, w = out.shape[:3]
    flat = out.reshape(M, h * w, -1)
    for m, mr in chain_pairs(M):
        cmap = maps.get((m, mr))
        if cmap is None:
            continue
        src, tgt = cmap.pairs()
        if not len(src):
            continue
        # keep the last writer of each target
        _, last = np.unique(tgt[::-1], return_index=True)
        keep = len(tgt) - 1 - last
        flat[mr - 1, tgt[keep]] = flat[m - 1, src[keep]]
    return out


def sample_synced_noise(seed: int, maps, M: int, h: int, w: int, c: int, *tags, sync: bool = True) -> np.ndarray:
    """Per-view counter-based normals, then synchronized along the chain."""
    raw = np.stack([normal_field(seed, (h, w, c), "noise", *tags, m) for m in range(1, M + 1)])
    return synchronize(raw, maps) if sync else raw


def reassign_latents(latents, maps) -> np.ndarray:
    return synchronize(latents, maps)


# -- forward process and loss -------------------------------------------------

def forward_noise(l0, t: int, schedule: DiffusionSchedule, noise):
    if not 1 <= t <= schedule.T:
        raise DomainError(f"timestep {t} outside 1..{schedule.T}")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * l0 + math.sqrt(1.0 - ab) * noise


def _call(denoiser, latents, t, cond):
    """Evaluate a denoiser on a numpy stack, bridging to torch modules."""
    if isinstance(denoiser, nn.Module):
        with torch.no_grad():
            out = denoiser(torch.as_tensor(latents, dtype=torch.float64), t, cond)
        return out.numpy()
    return np.asarray(denoiser(latents, t, cond), dtype=float)


def training_loss(l0_batch, conditions, denoiser, schedule: DiffusionSchedule, seed: int,
                  sync: bool = True, return_parts: bool = False):
    """Multi-view noise-prediction loss averaged over the batch.

    One shared timestep per multi-view sample, drawn uniformly from 1..T, and
    synchronized noise.  Works with torch modules (differentiable) or numpy callables.
    """
    B = len(l0_batch)
    if len(conditions) != B:
        raise ConfigError("one condition per batch element is required")
    total, parts = 0.0, []
    for b in range(B):
        l0 = l0_batch[b]
        M, h, w, c = l0.shape
        cond = conditions[b]
        t = int(philox_generator(seed, "timestep", b).integers(1, schedule.T + 1))
        eps = sample_synced_noise(seed, cond.maps, M, h, w, c, "train", b, sync=sync)
        if isinstance(denoiser, nn.Module):
            l0_t = torch.as_tensor(np.asarray(l0), dtype=torch.float64)
            eps_t = torch.as_tensor(eps)
            pred = denoiser(forward_noise(l0_t, t, schedule, eps_t), t, cond)
            term = ((eps_t - pred) ** 2).sum()
        else:
            pred = np.asarray(denoiser(forward_noise(np.asarray(l0), t, schedule, eps), t, cond))
            term = float(((eps - pred) ** 2).sum())
        total = total + term
        parts.append((t, eps))
    loss = total / B
    value = float(loss.detach()) if isinstance(loss, torch.Tensor) else float(loss)
    if not math.isfinite(value):
        raise NumericError(f"non-finite training loss {value}")
    return (loss, parts) if return_parts else loss


# -- reverse process ----------------------------------------------------------

def denoise_step(l_t, t: int, denoiser, condition, schedule: DiffusionSchedule, eps_hat=None):
    """Deterministic DDIM update from step t to t - 1."""
    if not 1 <= t <= schedule.T:
        raise DomainError(f"timestep {t} outside 1..{schedule.T}")
    if eps_hat is None:
        eps_hat = _call(denoiser, l_t, t, condition)
    ab, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    x0 = (l_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_hat


@dataclass(frozen=True)
class GenerateOptions:
    reassign: bool = True
    sync_noise: bool = True
    cutoff_fraction: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.cutoff_fraction <= 1.0:
            raise ConfigError(f"cutoff fraction must lie in [0, 1], got {self.cutoff_fraction}")


@dataclass
class Generation:
    images: list
    latents: np.ndarray
    reassignments: int
    seed: int
    options: GenerateOptions = field(default_factory=GenerateOptions)


def reassign_count(T: int, cutoff_fraction: float) -> int:
    return int(math.floor(cutoff_fraction * T + 1e-9))


def generate(condition: Condition, rig: CameraRig | None, denoiser, schedule: DiffusionSchedule,
             seed: int = 0, options: GenerateOptions = GenerateOptions(), latent_channels: int = 4,
             factor: int = 8) -> Generation:
    """Sample M views: synced noise at t = T, DDIM down to t = 1, re-assigning
    latents after each of the first floor(cutoff * T) steps, then decode."""
    maps = condition.maps
    M, h, w = np.asarray(condition.semantics).shape
    if maps is None and rig is not None:
        maps = build_rig_maps(rig, h, w)
    l = sample_synced_noise(seed, maps, M, h, w, latent_channels, "init", sync=options.sync_noise)
    n_reassign = reassign_count(schedule.T, options.cutoff_fraction) if options.reassign else 0
    done = 0
    for step, t in enumerate(range(schedule.T, 0, -1), start=1):
        l = denoise_step(l, t, denoiser, condition, schedule)
        if step <= n_reassign:
            l = reassign_latents(l, maps)
            done += 1
    images = [np.clip(decode_latent(v, factor), 0.0, 1.0) for v in l]
    return Generation(images, l, done, seed, options)


# -- instance control ---------------------------------------------------------

def downsample_mask(mask, factor: int = 8) -> np.ndarray:
    """A latent cell is inside when any pixel of its block is."""
    m = np.asarray(mask, dtype=bool)
    *lead, H, W = m.shape
    return m.reshape(*lead, H // factor, factor, W // factor, factor).any(axis=(-3, -1))


def blend_instance_latents(scene, instances, factor: int = 8) -> np.ndarray:
    """Paste each instance's latents into the scene latents under its mask."""
    out = np.array(scene, dtype=float, copy=True)
    covered = np.zeros(out.shape[:3], dtype=bool)
    for lat, inst in instances:
        m = downsample_mask(inst.masks, factor)
        if m.shape != covered.shape:
            raise ConfigError(f"mask grid {m.shape} does not match latents {covered.shape}")
        if (m & covered).any():
            raise ConflictError(f"instance {inst.instance_id} overlaps an earlier instance")
        covered |= m
        out[m] = np.asarray(lat, dtype=float)[m]
    return out


# -- denoisers ----------------------------------------------------------------

def zero_denoiser(latents, t, condition):
    return latents * 0.0


def analytic_gaussian_denoiser(mean: float, variance: float, schedule: DiffusionSchedule):
    """Optimal noise prediction when every latent entry is iid N(mean, variance)."""
    if not variance > 0:
        raise DomainError("variance must be positive")

    def predict(latents, t, condition=None):
        ab = schedule.alpha_bar(t)
        sa = math.sqrt(ab)
        gain = variance * sa / (ab * variance + 1.0 - ab)
        post_mean = mean + gain * (latents - sa * mean)
        return (latents - sa * post_mean) / math.sqrt(1.0 - ab)

    return predict


class TinyDenoiser(nn.Module):
    """conv3x3 -> SiLU -> multi-view attention (residual) -> conv3x3.

    Views form the batch axis; time and prompt enter as per-channel biases of
    the first layer.  Parameters are float64 and seeded from counter-based streams.
    """

    def __init__(self, latent_channels: int = 4, class_count: int = 5, hidden: int = 16,
                 prompt_dim: int = 8, time_freqs: int = 8, T: int = 50, seed: int = 0,
                 use_attention: bool = True):
        super().__init__()
        if hidden % 4:
            raise ConfigError("hidden width must be a multiple of 4")
        self.T = T
        self.time_freqs = time_freqs
        self.use_attention = use_attention
        self.conv_in = nn.Conv2d(latent_channels + class_count, hidden, 3, padding=1, dtype=torch.float64)
        self.time_proj = nn.Linear(2 * time_freqs, hidden, dtype=torch.float64)
        self.prompt_proj = nn.Linear(prompt_dim, hidden, bias=False, dtype=torch.float64)
        self.Q = nn.Parameter(torch.zeros(hidden, hidden, dtype=torch.float64))
        self.K = nn.Parameter(torch.zeros(hidden, hidden, dtype=torch.float64))
        self.V = nn.Parameter(torch.zeros(hidden, hidden, dtype=torch.float64))
        self.conv_out = nn.Conv2d(hidden, latent_channels, 3, padding=1, dtype=torch.float64)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                    continue
                fan_in = int(np.prod(p.shape[1:]))
                scale = 1.0 / math.sqrt(fan_in)
                if name in ("Q", "K", "V"):
                    scale *= 0.5
                p.copy_(torch.as_tensor(scale * normal_field(seed, tuple(p.shape), "param", name)))

    @property
    def attention_params(self) -> AttentionParams:
        return AttentionParams(self.Q, self.K, self.V)

    def time_embedding(self, t: int) -> torch.Tensor:
        k = torch.arange(self.time_freqs, dtype=torch.float64)
        ang = (t / self.T) * math.pi * 2.0 ** k
        return torch.cat([torch.sin(ang), torch.cos(ang)])

    def forward(self, latents, t: int, condition: Condition):
        x = torch.as_tensor(latents, dtype=torch.float64)
        onehot = torch.as_tensor(condition.onehot, dtype=torch.float64)
        inp = torch.cat([x, onehot], dim=-1).permute(0, 3, 1, 2)
        bias = self.time_proj(self.time_embedding(t)) + self.prompt_proj(
            torch.as_tensor(condition.prompt, dtype=torch.float64)
        )
        hdn = torch.nn.functional.silu(self.conv_in(inp) + bias[None, :, None, None])
        hdn = hdn.permute(0, 2, 3, 1)
        if self.use_attention and condition.plan is not None:
            hdn = attend_residual(hdn, self.attention_params, condition.plan)
        return self.conv_out(hdn.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)


def train_denoiser(denoiser: TinyDenoiser, l0_batch, conditions, schedule: DiffusionSchedule,
                   steps: int = 200, lr: float = 1e-2, seed: int = 0, log_every: int = 0) -> list[float]:
    """Adam on the multi-view loss with a fresh (t, noise) draw per step."""
    opt = torch.optim.Adam(denoiser.parameters(), lr=lr)
    history = []
    for step in range(steps):
        opt.zero_grad()
        loss = training_loss(l0_batch, conditions, denoiser, schedule, seed=seed * 1_000_003 + step)
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
        if log_every and step % log_every == 0:
            print(f"step {step:4d}  loss {history[-1]:.4f}")
    return history
