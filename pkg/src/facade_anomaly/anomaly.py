"""Deviation maps, tolerance masks and region reports."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .codec import EncodedThermal, decode_relative
from .errors import EncodingMismatch, dimension_mismatch

DEFAULT_TOLERANCE = 1.0  # °C
DEFAULT_MIN_AREA = 20  # px

# 16-bit export of the deviation map: value = round((E - OFFSET) / SCALE)
MAP_OFFSET = -16.0
MAP_SCALE = 0.001
MAP_INVALID = 65535

RESIDUAL_TRANSFORMS: dict = {
    "identity": lambda r: r,
    "absolute": np.abs,
}

# fixed tint ramp for |E| from 0 to OVERLAY_MAX °C (yellow -> orange -> red -> magenta)
OVERLAY_RAMP = np.array([[255, 235, 59], [255, 152, 0], [229, 57, 53], [170, 0, 170]], dtype=np.float64)
OVERLAY_MAX = 6.0
OVERLAY_ALPHA = 0.65


@dataclass
class AnomalyMap:
    values: np.ndarray  # signed deviation in °C
    valid: np.ndarray
    transform: str = "identity"

    @property
    def shape(self):
        return self.values.shape


@dataclass
class AnomalyMask:
    values: np.ndarray  # uint8 0/1
    tolerance_used: float

    @property
    def shape(self):
        return self.values.shape

    @property
    def pixels(self) -> np.ndarray:
        return self.values.astype(bool)


@dataclass
class Region:
    bbox: tuple  # (x0, y0, x1, y1), end-exclusive
    area: int
    mean_e: float

    def to_dict(self) -> dict:
        return {"bbox": list(self.bbox), "area": self.area, "mean_e": round(self.mean_e, 6)}


def _resolve_transform(f: Union[str, Callable]) -> tuple:
    if callable(f):
        return f, getattr(f, "__name__", "custom")
    try:
        return RESIDUAL_TRANSFORMS[f], f
    except KeyError:
        raise ValueError(f"unknown residual transform {f!r}; choose from {sorted(RESIDUAL_TRANSFORMS)}") from None


def anomaly_map(measured: EncodedThermal, predicted: EncodedThermal, f: Union[str, Callable] = "identity") -> AnomalyMap:
    """E = f(measured - predicted) in decoded °C.

    Both images must use the same quantization scale; their ``t_out`` may
    differ only if the caller intends to compare relative temperatures.
    """
    if measured.shape != predicted.shape:
        raise dimension_mismatch("anomaly", f"measured {measured.shape} vs predicted {predicted.shape}")
    if not measured.params.same_scale(predicted.params):
        raise EncodingMismatch(f"encodings differ: {measured.params} vs {predicted.params}")
    fn, name = _resolve_transform(f)
    valid = measured.valid & predicted.valid
    residual = decode_relative(measured) - decode_relative(predicted)
    values = np.where(valid, fn(np.where(valid, residual, 0.0)), 0.0)
    return AnomalyMap(values=values, valid=valid, transform=name)


def threshold(amap: AnomalyMap, tolerance: float = DEFAULT_TOLERANCE) -> AnomalyMask:
    """1 where E > tolerance on valid pixels; E == tolerance stays 0."""
    if not np.isfinite(tolerance):
        raise ValueError(f"tolerance must be finite, got {tolerance}")
    return AnomalyMask(values=((amap.values > tolerance) & amap.valid).astype(np.uint8), tolerance_used=float(tolerance))


def summarize_regions(mask: AnomalyMask, amap: AnomalyMap, min_area: int = DEFAULT_MIN_AREA) -> list:
    """4-connected components of the mask with at least ``min_area`` pixels, hottest first."""
    labels, n = ndimage.label(mask.pixels)  # default structure is 4-connected
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(labels), labels, idx)
    means = ndimage.mean(amap.values, labels, idx)
    regions = []
    for lab, sl, area, mean in zip(idx, ndimage.find_objects(labels), areas, means):
        if area < min_area:
            continue
        ys, xs = sl
        regions.append(Region(bbox=(xs.start, ys.start, xs.stop, ys.stop), area=int(area), mean_e=float(mean)))
    regions.sort(key=lambda r: (-r.mean_e, r.bbox))
    return regions


def tint_colors(magnitude: np.ndarray) -> np.ndarray:
    """Ramp colour (float RGB) for each |E| value."""
    t = np.clip(magnitude / OVERLAY_MAX, 0.0, 1.0) * (len(OVERLAY_RAMP) - 1)
    i0 = np.minimum(np.floor(t).astype(int), len(OVERLAY_RAMP) - 2)
    frac = (t - i0)[..., None]
    return OVERLAY_RAMP[i0] + frac * (OVERLAY_RAMP[i0 + 1] - OVERLAY_RAMP[i0])


def render_overlay(rgb: np.ndarray, mask: AnomalyMask, amap: AnomalyMap) -> np.ndarray:
    """RGB with flagged pixels blended towards a colour ramp of |E|.

    Unflagged pixels are returned untouched. The legend for the ramp is
    drawn by :func:`facade_anomaly.plotting.save_overlay_figure`.
    """
    rgb = np.asarray(getattr(rgb, "pixels", rgb))
    if rgb.shape[:2] != mask.shape or mask.shape != amap.shape:
        raise dimension_mismatch("anomaly", f"rgb {rgb.shape[:2]}, mask {mask.shape}, map {amap.shape}")
    out = rgb.copy()
    sel = mask.pixels
    if sel.any():
        color = tint_colors(np.abs(amap.values[sel]))
        blended = (1.0 - OVERLAY_ALPHA) * rgb[sel].astype(np.float64) + OVERLAY_ALPHA * color
        out[sel] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    return out


def map_to_uint16(amap: AnomalyMap) -> np.ndarray:
    q = np.rint((np.clip(amap.values, MAP_OFFSET, -MAP_OFFSET) - MAP_OFFSET) / MAP_SCALE)
    q = q.astype(np.uint16)
    q[~amap.valid] = MAP_INVALID
    return q


def map_from_uint16(q: np.ndarray, transform: str = "identity") -> AnomalyMap:
    q = np.asarray(q)
    valid = q != MAP_INVALID
    values = np.where(valid, q.astype(np.float64) * MAP_SCALE + MAP_OFFSET, 0.0)
    return AnomalyMap(values=values, valid=valid, transform=transform)


def write_detection(out_dir, scene_id: str, amap: AnomalyMap, mask: AnomalyMask, regions: list,
                    overlay: np.ndarray) -> dict:
    """Write the map (16-bit PNG + JSON header), mask (1-bit PNG), regions and overlay."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "map": out_dir / f"{scene_id}_anomaly_map.png",
        "map_header": out_dir / f"{scene_id}_anomaly_map.json",
        "mask": out_dir / f"{scene_id}_mask.png",
        "regions": out_dir / f"{scene_id}_regions.json",
        "overlay": out_dir / f"{scene_id}_overlay.png",
    }
    Image.fromarray(map_to_uint16(amap)).save(paths["map"])
    header = {
        "units": "degC",
        "offset": MAP_OFFSET,
        "scale": MAP_SCALE,
        "invalid": MAP_INVALID,
        "decode": "E = value * scale + offset",
        "transform": amap.transform,
    }
    paths["map_header"].write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    Image.fromarray(mask.pixels).convert("1").save(paths["mask"])
    paths["regions"].write_text(json.dumps(
        {"scene_id": scene_id, "tolerance": mask.tolerance_used, "regions": [r.to_dict() for r in regions]},
        indent=2) + "\n")
    Image.fromarray(overlay, mode="RGB").save(paths["overlay"])
    return paths
