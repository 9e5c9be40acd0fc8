"""Procedural facade scenes with paired RGB and thermal images.

Scenes are flat-shaded: sky, roof, a wall with a window grid and a door,
a basement strip and the ground, plus a roof vent. Each surface class has
a temperature offset above the outdoor temperature that depends on the
season and on two scene parameters that are also visible in the RGB image:

* ``age`` in [0, 1] blends the wall from light plaster to old brick; older
  buildings leak more heat, so every envelope class gets warmer with age.
* ``cloud`` in [0, 1] blends the sky from blue to overcast grey; overcast
  skies read warmer.

Winter scenes have windows clearly warmer than walls and mildly warm
basements. Summer scenes have warm walls, roof and ground and windows
slightly cooler than the walls. The offsets are chosen so that a winter
scene never reads more than 0.25 °C warmer than the same scene in summer,
which makes a summer-trained predictor a clean reference for flagging
planted winter thermal bridges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .codec import AlignedPair, EncodingParams, encode_thermal, write_pair
from .errors import RegionOutOfBounds
from .frames import ColorFrame, ConditionTag, ThermalFrame
from .geometry import RegisteredGrid, resample

SKY, ROOF, WALL, WINDOW, DOOR, BASEMENT, GROUND, VENT = range(8)
CLASS_NAMES = ("sky", "roof", "wall", "window", "door", "basement", "ground", "vent")

NOISE_AMPLITUDE = 0.25  # °C, half a quantization step
SPECKLE = 8  # RGB noise, +/- levels
DEFAULT_ANOMALY_DELTA = (2.0, 4.0)


def _lerp(a, b, t):
    return tuple(float(x) + (float(y) - float(x)) * t for x, y in zip(a, b))


@dataclass
class FacadeLayout:
    """Pixel rows/boxes of one facade; boxes are (x0, y0, x1, y1), end-exclusive."""

    size: int
    roof_top: int
    wall_top: int
    basement_top: int
    ground_top: int
    windows: list = field(default_factory=list)
    door: Optional[tuple] = None
    vent: Optional[tuple] = None

    def labels(self) -> np.ndarray:
        n = self.size
        lab = np.full((n, n), SKY, dtype=np.uint8)
        lab[self.roof_top:self.wall_top] = ROOF
        lab[self.wall_top:self.basement_top] = WALL
        lab[self.basement_top:self.ground_top] = BASEMENT
        lab[self.ground_top:] = GROUND
        for x0, y0, x1, y1 in self.windows:
            lab[y0:y1, x0:x1] = WINDOW
        if self.door is not None:
            x0, y0, x1, y1 = self.door
            lab[y0:y1, x0:x1] = DOOR
        if self.vent is not None:
            x0, y0, x1, y1 = self.vent
            lab[y0:y1, x0:x1] = VENT
        return lab


@dataclass
class SceneSpec:
    """Everything needed to render one scene deterministically."""

    seed: int
    layout: FacadeLayout
    condition: ConditionTag
    palette: dict
    wall_delta: float
    window_delta: float
    door_delta: float
    basement_delta: float
    roof_delta: float
    ground_delta: float
    sky_delta: float
    vent_delta: float
    anomalies: list = field(default_factory=list)  # [((x0, y0, x1, y1), delta °C)]
    age: float = 0.0
    cloud: float = 0.0

    @property
    def size(self) -> int:
        return self.layout.size

    def class_deltas(self) -> np.ndarray:
        d = np.zeros(len(CLASS_NAMES))
        d[SKY], d[ROOF], d[WALL] = self.sky_delta, self.roof_delta, self.wall_delta
        d[WINDOW], d[DOOR], d[BASEMENT] = self.window_delta, self.door_delta, self.basement_delta
        d[GROUND], d[VENT] = self.ground_delta, self.vent_delta
        return d


@dataclass
class GroundTruth:
    mask: np.ndarray
    regions: list  # [{"box": [x0, y0, x1, y1], "delta": float, "label": str}]


def season_deltas(condition: ConditionTag, age: float, cloud: float, vent: float) -> dict:
    """Per-class offsets above outdoors (°C) for a scene under ``condition``."""
    sky = -6.0 + 3.0 * cloud
    vent_d = 5.0 + 3.0 * vent
    if condition.season == "summer":
        return dict(
            sky_delta=sky, roof_delta=4.0, ground_delta=3.0, wall_delta=1.5 + age,
            window_delta=1.25 + age, door_delta=1.5 + age, basement_delta=2.5 + age, vent_delta=vent_d,
        )
    # colder days drive a larger indoor-outdoor gradient
    heat = max(0.5, (20.0 - condition.t_out) / 24.0)
    return dict(
        sky_delta=sky, roof_delta=-2.5 + age, ground_delta=-1.5 + cloud, wall_delta=(0.5 + age) * heat,
        window_delta=(1.5 + age) * heat, door_delta=(1.0 + age) * heat,
        basement_delta=(2.0 + age) * heat, vent_delta=vent_d,
    )


def sample_layout(rng: np.random.Generator, size: int) -> FacadeLayout:
    n = size
    roof_top = int(round(n * rng.uniform(0.06, 0.14)))
    wall_top = roof_top + int(round(n * rng.uniform(0.06, 0.10)))
    ground_top = int(round(n * rng.uniform(0.84, 0.92)))
    basement_top = ground_top - max(2, int(round(n * rng.uniform(0.05, 0.08))))
    rows = int(rng.integers(2, 5))
    cols = int(rng.integers(3, 7))
    cell_h = (basement_top - wall_top) / rows
    cell_w = n / cols
    win_w = max(2, int(round(cell_w * rng.uniform(0.40, 0.60))))
    win_h = max(2, int(round(cell_h * rng.uniform(0.40, 0.60))))
    door_col = int(rng.integers(0, cols))
    windows = []
    door = None
    for r in range(rows):
        for c in range(cols):
            cx = (c + 0.5) * cell_w
            cy = wall_top + (r + 0.5) * cell_h
            if r == rows - 1 and c == door_col:
                dw = max(2, int(round(cell_w * 0.35)))
                dh = max(3, int(round(cell_h * 0.75)))
                x0 = int(round(cx - dw / 2))
                door = (x0, basement_top - dh, x0 + dw, basement_top)
                continue
            x0 = int(round(cx - win_w / 2))
            y0 = int(round(cy - win_h / 2))
            windows.append((x0, y0, x0 + win_w, y0 + win_h))
    vw = max(2, int(round(n * 0.04)))
    vx = int(rng.integers(0, n - vw))
    vent = (vx, roof_top + max(1, (wall_top - roof_top) // 4), vx + vw, wall_top)
    return FacadeLayout(size=n, roof_top=roof_top, wall_top=wall_top, basement_top=basement_top,
                        ground_top=ground_top, windows=windows, door=door, vent=vent)


def sample_anomalies(rng: np.random.Generator, layout: FacadeLayout, delta=DEFAULT_ANOMALY_DELTA) -> list:
    """1-3 rectangular thermal bridges on the envelope (wall and basement)."""
    n = layout.size
    out = []
    for _ in range(int(rng.integers(1, 4))):
        w = max(2, int(round(n * rng.uniform(0.06, 0.14))))
        h = max(2, int(round(n * rng.uniform(0.05, 0.12))))
        h = min(h, layout.ground_top - layout.wall_top)
        x0 = int(rng.integers(0, n - w + 1))
        y0 = int(rng.integers(layout.wall_top, layout.ground_top - h + 1))
        d = float(rng.uniform(*delta)) if isinstance(delta, tuple) else float(delta)
        out.append(((x0, y0, x0 + w, y0 + h), d))
    return out


def sample_scene(
    seed: int,
    condition: ConditionTag,
    size: int = 512,
    anomalous: bool = False,
    anomaly_delta=DEFAULT_ANOMALY_DELTA,
) -> SceneSpec:
    """Draw a scene from the seeded family.

    The layout, palette and scene parameters come only from ``seed``, so
    the same seed under two conditions shows the same facade.
    """
    rng = np.random.default_rng(seed)
    layout = sample_layout(rng, size)
    age, cloud, vent = (float(v) for v in rng.uniform(0.0, 1.0, size=3))
    palette = {
        SKY: _lerp((110, 160, 225), (185, 190, 195), cloud),
        ROOF: (70, 68, 75),
        WALL: _lerp((222, 216, 200), (150, 62, 48), age),
        WINDOW: (45, 60, 78),
        DOOR: _lerp((140, 100, 60), (80, 50, 35), age),
        BASEMENT: _lerp((135, 135, 128), (95, 90, 85), age),
        GROUND: (95, 95, 100),
        VENT: _lerp((175, 175, 180), (55, 55, 58), vent),
    }
    anomalies = []
    if anomalous:
        arng = np.random.default_rng([seed, 1])
        anomalies = sample_anomalies(arng, layout, anomaly_delta)
    return SceneSpec(seed=seed, layout=layout, condition=condition, palette=palette,
                     anomalies=anomalies, age=age, cloud=cloud,
                     **season_deltas(condition, age, cloud, vent))


def _smooth_noise(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    coarse = rng.standard_normal((size // 16 + 2, size // 16 + 2))
    field_, _ = resample(coarse, RegisteredGrid(size, size))
    peak = np.max(np.abs(field_))
    return field_ * (amplitude / peak) if peak > 0 else field_


def render_scene(spec: SceneSpec):
    """Render ``(ColorFrame, ThermalFrame, GroundTruth)`` for ``spec``."""
    n = spec.size
    for (x0, y0, x1, y1), delta in spec.anomalies:
        if not (0 <= x0 < x1 <= n and 0 <= y0 < y1 <= n):
            raise RegionOutOfBounds(f"anomaly box {(x0, y0, x1, y1)} outside the {n}x{n} image")
        if not np.isfinite(delta):
            raise RegionOutOfBounds(f"anomaly delta must be finite, got {delta}")

    labels = spec.layout.labels()
    rng = np.random.default_rng([spec.seed, 2])
    palette = np.array([spec.palette[k] for k in range(len(CLASS_NAMES))])
    speckle = rng.integers(-SPECKLE, SPECKLE + 1, size=(n, n, 3))
    rgb = np.clip(np.rint(palette[labels]) + speckle, 0, 255).astype(np.uint8)

    relative = spec.class_deltas()[labels] + _smooth_noise(rng, n, NOISE_AMPLITUDE)
    truth = np.zeros((n, n), dtype=bool)
    regions = []
    for (x0, y0, x1, y1), delta in spec.anomalies:
        relative[y0:y1, x0:x1] += delta
        truth[y0:y1, x0:x1] = True
        regions.append({"box": [x0, y0, x1, y1], "delta": float(delta), "label": "thermal_bridge"})

    thermal = ThermalFrame(values=relative + spec.condition.t_out, t_out=spec.condition.t_out,
                           condition=spec.condition.name)
    return ColorFrame(rgb), thermal, GroundTruth(mask=truth, regions=regions)


def render_pair(spec: SceneSpec, scene_id: str) -> tuple[AlignedPair, GroundTruth]:
    rgb, thermal, truth = render_scene(spec)
    enc = encode_thermal(thermal, EncodingParams(t_out=spec.condition.t_out))
    pair = AlignedPair(scene_id=scene_id, rgb=rgb.pixels, thermal=enc,
                       condition=spec.condition.name, truth=truth.mask)
    return pair, truth


def scene_seeds(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2 ** 31 - 1, size=n)


def generate_pairs(
    n: int,
    condition: ConditionTag,
    anomaly_rate: float = 0.0,
    seed: int = 0,
    size: int = 512,
    anomaly_delta=DEFAULT_ANOMALY_DELTA,
):
    """Yield ``(AlignedPair, GroundTruth)`` for ``n`` scenes of the seeded family."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if not 0.0 <= anomaly_rate <= 1.0:
        raise ValueError(f"anomaly_rate must lie in [0, 1], got {anomaly_rate}")
    seeds = scene_seeds(n, seed)
    flags = np.random.default_rng([seed, 3]).random(n) < anomaly_rate
    prefix = condition.name.lower()
    for i in range(n):
        spec = sample_scene(int(seeds[i]), condition, size, bool(flags[i]), anomaly_delta)
        yield render_pair(spec, f"{prefix}_s{seed}_{i:04d}")


def generate_set(
    n: int,
    condition: ConditionTag,
    anomaly_rate: float,
    seed: int,
    out_dir,
    size: int = 512,
    anomaly_delta=DEFAULT_ANOMALY_DELTA,
) -> dict:
    """Write ``n`` pairs (with truth masks) to ``out_dir``; returns a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = []
    for pair, truth in generate_pairs(n, condition, anomaly_rate, seed, size, anomaly_delta):
        write_pair(pair, out_dir)
        scenes.append({"scene_id": pair.scene_id, "anomalous": bool(truth.mask.any()), "regions": truth.regions})
    manifest = {
        "generator": "facade_anomaly.synthgen",
        "n": n,
        "condition": condition.to_dict(),
        "anomaly_rate": anomaly_rate,
        "anomaly_delta": list(anomaly_delta) if isinstance(anomaly_delta, tuple) else anomaly_delta,
        "seed": seed,
        "size": size,
        "scenes": scenes,
    }
    (out_dir / "synth_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
