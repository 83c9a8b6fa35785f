"""Deterministic synthetic driving scenes, the default six-camera rig and
flat-shaded ground-truth renders."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import Camera, CameraIntrinsics, CameraRig, look_extrinsics
from .errors import SceneSpecError
from .projection import BevGrid, BevSemantics, CLASS_NAMES, VOID, ground_hits, world_to_cell
from .rng import philox_generator

__all__ = [
    "DRIVABLE",
    "VEHICLE",
    "BUILDING",
    "VEGETATION",
    "PALETTE",
    "VEHICLE_COLORS",
    "DEFAULT_BANDS",
    "DEFAULT_YAWS",
    "make_default_rig",
    "Vehicle",
    "Band",
    "SceneSpec",
    "Scene",
    "random_scene_spec",
    "synth_bev_scene",
    "render_gt_views",
    "format_scene_spec",
    "parse_scene_spec",
    "load_scene_spec",
    "save_scene_spec",
]

DRIVABLE, VEHICLE, BUILDING, VEGETATION = 1, 2, 3, 4

# multiples of 1/255 so 8-bit files round-trip exactly
PALETTE = np.array(
    [
        [135, 190, 235],  # void: sky / unmapped ground
        [90, 90, 96],  # drivable
        [200, 40, 40],  # vehicle (default, overridden per instance)
        [170, 140, 110],  # building
        [60, 140, 60],  # vegetation
    ],
    dtype=float,
) / 255.0

# seven common car colors; all differ from the class palette
VEHICLE_COLORS = np.array(
    [[200, 30, 30], [30, 60, 200], [240, 210, 30], [245, 245, 245], [25, 25, 25], [150, 150, 160], [40, 150, 70]],
    dtype=float,
) / 255.0

# NuScenes-like order: front, front-right, back-right, back, back-left, front-left
DEFAULT_YAWS = (0.0, -55.0, -110.0, 180.0, 110.0, 55.0)
VIEW_NAMES = ("front", "front_right", "back_right", "back", "back_left", "front_left")


def make_default_rig(
    image_size=(256, 448),
    hfov_deg: float = 90.0,
    height: float = 1.5,
    mount_radius: float = 1.0,
    yaws=DEFAULT_YAWS,
) -> CameraRig:
    """Six level cameras on a ring of ``mount_radius`` around the ego, ``height`` m up."""
    H, W = image_size
    intr = CameraIntrinsics.from_fov(W, H, hfov_deg)
    cams = []
    for yaw in yaws:
        a = np.radians(yaw)
        pos = (mount_radius * np.cos(a), mount_radius * np.sin(a), height)
        cams.append(Camera(intr, look_extrinsics(yaw, pos)))
    names = VIEW_NAMES if len(yaws) == len(VIEW_NAMES) else ()
    return CameraRig(tuple(cams), (H, W), names)


@dataclass(frozen=True)
class Vehicle:
    """Axis-aligned footprint: center (x, y), length along x, width along y, sRGB color."""

    x: float
    y: float
    length: float = 4.5
    width: float = 2.0
    color: tuple[float, float, float] = (200 / 255, 30 / 255, 30 / 255)

    def bounds(self) -> tuple[float, float, float, float]:
        return (
            self.x - self.length / 2,
            self.x + self.length / 2,
            self.y - self.width / 2,
            self.y + self.width / 2,
        )


@dataclass(frozen=True)
class Band:
    """A strip of ``label`` lying between ``inner`` and ``outer`` meters from the road edge."""

    label: int
    inner: float
    outer: float


DEFAULT_BANDS = (Band(VEGETATION, 2.0, 6.0), Band(BUILDING, 6.0, 14.0))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    lane_width: float = 3.5
    lanes: int = 2
    curvature: float = 0.0
    vehicles: tuple[Vehicle, ...] = ()
    bands: tuple[Band, ...] = ()
    grid: BevGrid = field(default_factory=BevGrid)

    def validate(self) -> None:
        ext_x, ext_y = self.grid.extent
        for i, v in enumerate(self.vehicles):
            x0, x1, y0, y1 = v.bounds()
            if not (-ext_x / 2 <= x0 and x1 <= ext_x / 2 and -ext_y / 2 <= y0 and y1 <= ext_y / 2):
                raise SceneSpecError(f"vehicle {i + 1} lies outside the BEV extent")
            if not all(0.0 <= ch <= 1.0 for ch in v.color):
                raise SceneSpecError(f"vehicle {i + 1} color outside [0, 1]")
            for j, w in enumerate(self.vehicles[:i]):
                a0, a1, b0, b1 = w.bounds()
                if x0 < a1 and a0 < x1 and y0 < b1 and b0 < y1:
                    raise SceneSpecError(f"vehicles {j + 1} and {i + 1} overlap")
        for b in self.bands:
            if not 0 < b.label < self.grid.class_count or b.outer <= b.inner:
                raise SceneSpecError(f"bad band {b}")


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    bev: BevSemantics
    instances: np.ndarray  # (H_b, W_b) vehicle id, 0 = none, k = spec.vehicles[k - 1]


def random_scene_spec(seed: int, n_vehicles: int = 4) -> SceneSpec:
    """A seeded road scene with non-overlapping vehicles in the lanes."""
    rng = philox_generator(seed, "scene")
    curvature = float(rng.uniform(-0.01, 0.01))
    lane_width = 3.5
    vehicles: list[Vehicle] = []
    for _ in range(50 * n_vehicles):
        if len(vehicles) == n_vehicles:
            break
        x = float(rng.uniform(-30, 30))
        if abs(x) < 4:
            continue
        lane = float(rng.choice([-0.5, 0.5]))
        y = curvature * x * x / 2 + lane * lane_width
        color = tuple(float(ch) for ch in VEHICLE_COLORS[int(rng.integers(len(VEHICLE_COLORS)))])
        cand = Vehicle(round(x, 2), round(y, 2), 4.5, 2.0, color)
        spec = SceneSpec(seed, lane_width, 2, curvature, tuple(vehicles) + (cand,), DEFAULT_BANDS)
        try:
            spec.validate()
        except SceneSpecError:
            continue
        vehicles.append(cand)
    return SceneSpec(seed, lane_width, 2, curvature, tuple(vehicles), DEFAULT_BANDS)


def synth_bev_scene(spec: SceneSpec) -> Scene:
    spec.validate()
    grid = spec.grid
    xy = np.stack(np.meshgrid(
        (grid.shape[0] / 2 - np.arange(grid.shape[0])) * grid.meters_per_cell,
        (grid.shape[1] / 2 - np.arange(grid.shape[1])) * grid.meters_per_cell,
        indexing="ij",
    ), axis=-1)
    x, y = xy[..., 0], xy[..., 1]
    # lateral offset from the road centerline y = curvature * x^2 / 2
    off = np.abs(y - spec.curvature * x * x / 2)
    half = spec.lanes * spec.lane_width / 2
    labels = np.full(grid.shape, VOID, dtype=np.uint8)
    for b in spec.bands:
        labels[(off >= half + b.inner) & (off < half + b.outer)] = b.label
    labels[off < half] = DRIVABLE

    instances = np.zeros(grid.shape, dtype=np.int32)
    for k, v in enumerate(spec.vehicles, start=1):
        x0, x1, y0, y1 = v.bounds()
        inside = (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
        labels[inside] = VEHICLE
        instances[inside] = k
    bev = BevSemantics(labels, grid.meters_per_cell, grid.class_count)
    instances.flags.writeable = False
    return Scene(spec, bev, instances)


def render_gt_views(scene: Scene, rig: CameraRig):
    """Flat-shaded renders and per-view instance id maps.

    Returns ``(images, instance_maps)``: M float images (H, W, 3) in [0, 1] and
    M int arrays with 0 for background and k for vehicle k.
    """
    grid = scene.bev.grid
    colors = np.vstack([PALETTE, np.array([v.color for v in scene.spec.vehicles]).reshape(-1, 3)])
    images, inst_maps = [], []
    for cam in rig.cameras:
        xy, hit = ground_hits(cam, rig.image_size)
        r, c, inside = world_to_cell(xy, grid)
        valid = hit & inside
        lab = np.where(valid, scene.bev.labels[r, c], VOID)
        inst = np.where(valid, scene.instances[r, c], 0)
        idx = np.where(inst > 0, len(PALETTE) + inst - 1, lab)
        images.append(colors[idx])
        inst_maps.append(inst.astype(np.int32))
    return images, inst_maps


# -- scene spec text files ----------------------------------------------------
#
#   seed 3
#   lane_width 3.5
#   lanes 2
#   curvature 0.004
#   grid 400 400 0.2
#   band vegetation 2 6
#   vehicle 10 -1.75 4.5 2.0 0.8 0.1 0.1     # x y length width r g b

def format_scene_spec(spec: SceneSpec) -> str:
    g = spec.grid
    lines = [
        f"seed {spec.seed}",
        f"lane_width {spec.lane_width!r}",
        f"lanes {spec.lanes}",
        f"curvature {spec.curvature!r}",
        f"grid {g.shape[0]} {g.shape[1]} {g.meters_per_cell!r}",
    ]
    lines += [f"band {CLASS_NAMES[b.label]} {b.inner!r} {b.outer!r}" for b in spec.bands]
    lines += [
        "vehicle " + " ".join(repr(float(a)) for a in (v.x, v.y, v.length, v.width, *v.color))
        for v in spec.vehicles
    ]
    return "\n".join(lines) + "\n"


def parse_scene_spec(text: str) -> SceneSpec:
    spec = SceneSpec()
    bands, vehicles, saw_band = [], [], False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key == "seed":
                spec = replace(spec, seed=int(args[0]))
            elif key == "lane_width":
                spec = replace(spec, lane_width=float(args[0]))
            elif key == "lanes":
                spec = replace(spec, lanes=int(args[0]))
            elif key == "curvature":
                spec = replace(spec, curvature=float(args[0]))
            elif key == "grid":
                spec = replace(spec, grid=BevGrid((int(args[0]), int(args[1])), float(args[2])))
            elif key == "band":
                saw_band = True
                bands.append(Band(CLASS_NAMES.index(args[0]), float(args[1]), float(args[2])))
            elif key == "vehicle":
                v = [float(a) for a in args]
                if len(v) != 7:
                    raise ValueError("vehicle needs x y length width r g b")
                vehicles.append(Vehicle(v[0], v[1], v[2], v[3], tuple(v[4:7])))
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, IndexError) as exc:
            raise SceneSpecError(f"scene line {lineno}: {exc}") from None
    spec = replace(spec, vehicles=tuple(vehicles), bands=tuple(bands) if saw_band else spec.bands)
    spec.validate()
    return spec


def save_scene_spec(spec: SceneSpec, path) -> None:
    Path(path).write_text(format_scene_spec(spec))


def load_scene_spec(path) -> SceneSpec:
    return parse_scene_spec(Path(path).read_text())
