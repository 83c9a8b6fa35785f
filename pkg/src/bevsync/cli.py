"""``bevsync`` command line: project, correspond, generate, evaluate, demo.

Exit codes: 0 success, 2 usage or I/O error, 3 numeric or domain error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .camera import CameraRig, format_rig, load_rig, rotate_rig
from .correspondence import overlap_fraction, pair_correspondence_map, pair_homography, save_correspondence_map
from .diffusion import DiffusionSchedule, GenerateOptions, TinyDenoiser, encode_image, generate, make_condition, \
    train_denoiser, InstanceMask
from .errors import BevSyncError, ConfigError
from .fileio import load_image, load_module, save_image, save_module, write_manifest
from .homography import format_homography
from .metrics import MetricsReport, bev_iou, instance_color_report, overlap_psnr, psnr, segment_by_palette, \
    semantic_iou
from .projection import PerspectiveSemantics, project_all_views, save_label_map
from .scene import PALETTE, VEHICLE, Scene, format_scene_spec, load_scene_spec, make_default_rig, \
    random_scene_spec, render_gt_views, synth_bev_scene

log = logging.getLogger("bevsync")


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int = 0
    rig: str = "default"
    scene: str = "default"
    out: Path = Path("out")
    yaw: float = 0.0
    reassign: bool = True
    sync_noise: bool = True
    cutoff: float = 0.6
    k_window: int = 3
    steps: int = 50
    json: bool = False
    images: Path | None = None
    reference: Path | None = None
    checkpoint: Path | None = None
    train_steps: int = 0
    train_scenes: int = 2
    prompt: str = "a street scene"
    all_pairs: bool = False

    def __post_init__(self):
        if not 0.0 <= self.cutoff <= 1.0:
            raise ConfigError(f"--cutoff must lie in [0, 1], got {self.cutoff}")
        if self.k_window < 1 or self.k_window % 2 == 0:
            raise ConfigError(f"--k-window must be odd and >= 1, got {self.k_window}")
        if self.steps < 1:
            raise ConfigError(f"--steps must be >= 1, got {self.steps}")


# -- shared loading -----------------------------------------------------------

def load_run_rig(cfg: RunConfig) -> CameraRig:
    if cfg.rig == "default":
        rig = make_default_rig()
    else:
        path = Path(cfg.rig)
        if not path.is_file():
            raise ConfigError(f"rig file not found: {path}")
        rig = load_rig(path)
    return rotate_rig(rig, cfg.yaw) if cfg.yaw else rig


def load_run_scene(cfg: RunConfig) -> Scene:
    if cfg.scene == "default":
        spec = random_scene_spec(cfg.seed)
    else:
        path = Path(cfg.scene)
        if not path.is_file():
            raise ConfigError(f"scene file not found: {path}")
        spec = load_scene_spec(path)
    return synth_bev_scene(spec)


def _palette_preview(labels) -> np.ndarray:
    return PALETTE[np.asarray(labels)]


def _out_dir(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def _instance_masks(scene: Scene, inst_maps) -> list[InstanceMask]:
    stack = np.stack(inst_maps)
    return [
        InstanceMask(stack == k, k, tuple(v.color))
        for k, v in enumerate(scene.spec.vehicles, start=1)
    ]


# -- commands -----------------------------------------------------------------

def cmd_project(cfg: RunConfig) -> dict:
    rig, scene = load_run_rig(cfg), load_run_scene(cfg)
    out = _out_dir(cfg)
    sems = project_all_views(scene.bev, rig)
    written = []
    for s in sems:
        written.append(save_label_map(out / f"view_{s.view}_sem", s.labels, PALETTE))
        save_image(out / f"view_{s.view}_sem_preview.png", _palette_preview(s.labels))
    save_label_map(out / "bev_sem", scene.bev.labels, PALETTE, scene.bev.meters_per_cell)
    save_image(out / "bev_preview.png", _palette_preview(scene.bev.labels))
    renders, _ = render_gt_views(scene, rig)
    for m, img in enumerate(renders, start=1):
        save_image(out / f"view_{m}_gt.png", img)
    (out / "rig.txt").write_text(format_rig(rig))
    (out / "scene.txt").write_text(format_scene_spec(scene.spec))
    for p in written:
        print(p)
    return {"views": len(sems)}


def cmd_correspond(cfg: RunConfig) -> dict:
    rig = load_run_rig(cfg)
    out = _out_dir(cfg)
    H, W = rig.image_size
    h, w = H // 8, W // 8
    if cfg.all_pairs:
        pairs = [(a, b) for a in range(1, rig.M + 1) for b in range(1, rig.M + 1) if a != b]
    else:
        pairs = [(m, n) for m in range(1, rig.M + 1) for n in (rig.right(m), rig.left(m))]
    stats, hom_lines = [], []
    for m, n in pairs:
        Himg = pair_homography(rig, m, n)
        cmap = pair_correspondence_map(rig, m, n, h, w)
        save_correspondence_map(cmap, out)
        hom_lines.append(f"{m} {n} {format_homography(Himg)}")
        frac = overlap_fraction(cmap)
        stats.append(f"pair {m} {n} overlap_fraction={frac!r} valid_cells={int(cmap.valid.sum())}")
    (out / "homographies.txt").write_text("\n".join(hom_lines) + "\n")
    (out / "coverage.txt").write_text("\n".join(stats) + "\n")
    print("\n".join(stats))
    return {"pairs": len(pairs)}


def _train_set(cfg: RunConfig, rig: CameraRig):
    scenes = [synth_bev_scene(random_scene_spec(cfg.seed + 1000 + k)) for k in range(cfg.train_scenes)]
    l0 = [encode_image(np.stack(render_gt_views(s, rig)[0])) for s in scenes]
    conds = [make_condition(project_all_views(s.bev, rig), rig, cfg.prompt, cfg.k_window) for s in scenes]
    return l0, conds


def build_denoiser(cfg: RunConfig, rig: CameraRig, schedule: DiffusionSchedule) -> TinyDenoiser:
    den = TinyDenoiser(T=schedule.T, seed=cfg.seed)
    if cfg.checkpoint is not None:
        if not Path(cfg.checkpoint).is_file():
            raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")
        load_module(den, cfg.checkpoint)
    if cfg.train_steps:
        l0, conds = _train_set(cfg, rig)
        hist = train_denoiser(den, l0, conds, schedule, steps=cfg.train_steps, seed=cfg.seed)
        log.info("trained %d steps, loss %.2f -> %.2f", cfg.train_steps, hist[0], hist[-1])
    return den


def cmd_generate(cfg: RunConfig, denoiser: TinyDenoiser | None = None) -> dict:
    rig, scene = load_run_rig(cfg), load_run_scene(cfg)
    out = _out_dir(cfg)
    schedule = DiffusionSchedule(T=cfg.steps)
    den = denoiser if denoiser is not None else build_denoiser(cfg, rig, schedule)
    if cfg.train_steps and denoiser is None:
        save_module(den, out / "denoiser.ckpt")
    cond = make_condition(project_all_views(scene.bev, rig), rig, cfg.prompt, cfg.k_window)
    opts = GenerateOptions(cfg.reassign, cfg.sync_noise, cfg.cutoff)
    result = generate(cond, rig, den, schedule, cfg.seed, opts)
    paths = [save_image(out / f"view_{m}.png", img) for m, img in enumerate(result.images, start=1)]
    entries = {
        "seed": cfg.seed,
        "T": schedule.T,
        "schedule": f"linear {schedule.beta_start!r} {schedule.beta_end!r}",
        "schedule_hash": schedule.digest(),
        "reassign": "on" if opts.reassign else "off",
        "sync_noise": "on" if opts.sync_noise else "off",
        "cutoff_fraction": repr(opts.cutoff_fraction),
        "reassignments": result.reassignments,
        "k_window": cfg.k_window,
        "yaw_deg": repr(cfg.yaw),
        "prompt": cfg.prompt,
    }
    entries.update({f"view_{m}": p.name for m, p in enumerate(paths, start=1)})
    write_manifest(out / "manifest.txt", entries)
    print(f"wrote {len(paths)} views, {result.reassignments} re-assignments -> {out}")
    return entries


def _load_views(directory: Path, M: int, pattern: str) -> list[np.ndarray]:
    imgs = []
    for m in range(1, M + 1):
        p = directory / pattern.format(m=m)
        if not p.is_file():
            raise ConfigError(f"missing image {p}")
        imgs.append(load_image(p))
    return imgs


def evaluate_images(images, rig: CameraRig, scene: Scene, reference=None) -> MetricsReport:
    vehicle_colors = [v.color for v in scene.spec.vehicles]
    palette = np.vstack([PALETTE, np.array(vehicle_colors).reshape(-1, 3)])
    to_class = np.concatenate([np.arange(len(PALETTE)), np.full(len(vehicle_colors), VEHICLE)])
    preds = [to_class[segment_by_palette(img, palette)] for img in images]
    gts = project_all_views(scene.bev, rig)
    stack_p = np.stack(preds)
    stack_g = np.stack([g.labels for g in gts])
    persp = semantic_iou(stack_p, stack_g, scene.bev.class_count)
    bev = bev_iou([PerspectiveSemantics(p, m) for m, p in enumerate(preds, start=1)], rig, scene.bev)
    _, inst_maps = render_gt_views(scene, rig)
    color = instance_color_report(images, _instance_masks(scene, inst_maps))
    ref = None
    if reference is not None:
        ref = {m: psnr(a, b) for m, (a, b) in enumerate(zip(images, reference), start=1)}
    return MetricsReport(overlap_psnr(images, rig), persp, bev, color, ref)


def cmd_evaluate(cfg: RunConfig) -> MetricsReport:
    rig, scene = load_run_rig(cfg), load_run_scene(cfg)
    out = _out_dir(cfg)
    src = cfg.images or cfg.out
    images = _load_views(Path(src), rig.M, "view_{m}.png")
    reference = _load_views(Path(cfg.reference), rig.M, "view_{m}_gt.png") if cfg.reference else None
    report = evaluate_images(images, rig, scene, reference)
    text = report.to_json() + "\n" if cfg.json else report.to_text()
    (out / ("report.json" if cfg.json else "report.txt")).write_text(text)
    sys.stdout.write(text)
    return report


def cmd_demo(cfg: RunConfig) -> dict:
    t0 = time.time()
    out = _out_dir(cfg)
    sub = lambda name, **kw: RunConfig(**{**cfg.__dict__, "out": out / name, **kw})  # noqa: E731
    cmd_project(sub("project"))
    cmd_correspond(sub("correspond"))
    train_steps = cfg.train_steps or 200
    gen_cfg = sub("generate", train_steps=train_steps)
    rig = load_run_rig(gen_cfg)
    den = build_denoiser(gen_cfg, rig, DiffusionSchedule(T=cfg.steps))
    (out / "generate").mkdir(parents=True, exist_ok=True)
    save_module(den, out / "generate" / "denoiser.ckpt")
    cmd_generate(gen_cfg, den)
    cmd_evaluate(sub("evaluate", images=out / "generate", reference=out / "project"))
    elapsed = time.time() - t0
    print(f"demo finished in {elapsed:.1f} s")
    return {"seconds": elapsed}


COMMANDS = {
    "project": cmd_project,
    "correspond": cmd_correspond,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "demo": cmd_demo,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--rig", default="default", help="rig file or 'default'")
    common.add_argument("--scene", default="default", help="scene spec file or 'default' (seeded random scene)")
    common.add_argument("--out", type=Path, default=Path("out"))
    common.add_argument("--yaw", type=float, default=0.0, help="rotate every camera about the ego z axis (deg)")
    common.add_argument("--no-reassign", action="store_true", help="disable noise sync and latent re-assignment")
    common.add_argument("--keep-sync", action="store_true", help="with --no-reassign, still synchronize the initial noise")
    common.add_argument("--cutoff", type=float, default=0.6)
    common.add_argument("--k-window", type=int, default=3)
    common.add_argument("--steps", type=int, default=50, help="diffusion steps T")
    common.add_argument("--json", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bevsync", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("project", parents=[common], help="BEV -> per-view semantics, previews, GT renders")
    c = sub.add_parser("correspond", parents=[common], help="overlap masks, homographies, coverage stats")
    c.add_argument("--all-pairs", action="store_true", help="every ordered pair, not only adjacent ones")
    helps = {"generate": "sample multi-view images", "demo": "project, correspond, train, generate, evaluate"}
    for name, text in helps.items():
        g = sub.add_parser(name, parents=[common], help=text)
        g.add_argument("--checkpoint", type=Path)
        g.add_argument("--train-steps", type=int, default=0)
        g.add_argument("--train-scenes", type=int, default=2)
        g.add_argument("--prompt", default="a street scene")
    e = sub.add_parser("evaluate", parents=[common], help="metrics report for generated views")
    e.add_argument("--images", type=Path, help="directory with view_{m}.png (default: --out)")
    e.add_argument("--reference", type=Path, help="directory with view_{m}_gt.png for per-view PSNR")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    kw = dict(
        command=args.command, seed=args.seed, rig=args.rig, scene=args.scene, out=args.out, yaw=args.yaw,
        reassign=not args.no_reassign, sync_noise=not args.no_reassign or args.keep_sync,
        cutoff=args.cutoff, k_window=args.k_window, steps=args.steps, json=args.json,
    )
    for name in ("images", "reference", "checkpoint", "train_steps", "train_scenes", "prompt", "all_pairs"):
        if hasattr(args, name):
            kw[name] = getattr(args, name)
    return RunConfig(**kw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[cfg.command](cfg)
    except (ConfigError, OSError) as exc:
        print(f"bevsync: error: {exc}", file=sys.stderr)
        return 2
    except (BevSyncError, ArithmeticError, ValueError) as exc:
        print(f"bevsync: numeric/domain error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
