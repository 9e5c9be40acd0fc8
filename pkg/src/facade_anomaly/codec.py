"""Relative-temperature encoding and the on-disk pair format.

Thermal data is stored relative to the outdoor temperature, clamped to
[-5, +10] °C, quantized to 0.5 °C and shifted so that codes are the integers
0..30. Codes travel as single-channel 8-bit PNGs; value 255 marks pixels
with no valid measurement. RGB travels as a 3-channel 8-bit PNG and the
encoding parameters live in a JSON sidecar, so a pair decodes without any
outside information.

File layout for a scene ``<id>`` inside a pair directory::

    <id>_rgb.png    RGB, uint8, HxWx3
    <id>_th.png     thermal codes, uint8, HxW (255 = invalid)
    <id>_meta.json  EncodingParams, condition and t_out
    <id>_truth.png  optional ground-truth anomaly mask (synthetic data only)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import CodeOutOfRange, InvalidParams, IoError, MissingSidecar
from .frames import ColorFrame, ThermalFrame

INVALID_CODE = 255
PAIR_SUFFIXES = {"rgb": "_rgb.png", "thermal": "_th.png", "meta": "_meta.json", "truth": "_truth.png"}


@dataclass(frozen=True)
class EncodingParams:
    t_out: float = 0.0
    range_lo: float = -5.0
    range_hi: float = 10.0
    step: float = 0.5

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.t_out, self.range_lo, self.range_hi, self.step)):
            raise InvalidParams("encoding parameters must be finite")
        if self.range_lo >= self.range_hi:
            raise InvalidParams(f"range_lo {self.range_lo} must be below range_hi {self.range_hi}")
        if self.step <= 0:
            raise InvalidParams(f"step must be positive, got {self.step}")
        levels = (self.range_hi - self.range_lo) / self.step
        if abs(levels - round(levels)) > 1e-9:
            raise InvalidParams(f"range width is not a whole number of steps ({levels})")
        if round(levels) >= INVALID_CODE:
            raise InvalidParams("too many levels for 8-bit storage")

    @property
    def max_code(self) -> int:
        return int(round((self.range_hi - self.range_lo) / self.step))

    def same_scale(self, other: "EncodingParams") -> bool:
        """Codes from both parameter sets decode to the same relative °C."""
        return (self.range_lo, self.range_hi, self.step) == (other.range_lo, other.range_hi, other.step)

    def to_dict(self) -> dict:
        return {"t_out": self.t_out, "range_lo": self.range_lo, "range_hi": self.range_hi, "step": self.step}

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingParams":
        return cls(**{k: float(d[k]) for k in ("t_out", "range_lo", "range_hi", "step") if k in d})


@dataclass
class EncodedThermal:
    codes: np.ndarray
    params: EncodingParams = field(default_factory=EncodingParams)
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise ValueError(f"code image must be 2-D, got shape {codes.shape}")
        if self.valid is None:
            self.valid = np.ones(codes.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
        self.codes = codes.astype(np.int16)
        self.codes[~self.valid] = 0

    @property
    def shape(self) -> tuple:
        return self.codes.shape

    def validate(self) -> "EncodedThermal":
        bad = self.valid & ((self.codes < 0) | (self.codes > self.params.max_code))
        if bad.any():
            vals = np.unique(self.codes[bad])
            raise CodeOutOfRange(f"codes outside 0..{self.params.max_code}: {vals[:10].tolist()}")
        return self


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode_thermal(frame: ThermalFrame, params: EncodingParams) -> EncodedThermal:
    """Encode absolute temperatures into integer codes 0..max_code.

    Out-of-range offsets are clamped to the interval ends, so the most
    extreme pixels keep the extreme codes instead of being dropped.
    """
    if not isinstance(params, EncodingParams):
        raise InvalidParams(f"expected EncodingParams, got {type(params).__name__}")
    values = frame.values if frame.relative else frame.values - params.t_out
    valid = frame.valid & np.isfinite(values)
    delta = np.clip(np.where(valid, values, 0.0), params.range_lo, params.range_hi)
    codes = _round_half_away((delta - params.range_lo) / params.step)
    codes = np.clip(codes, 0, params.max_code).astype(np.int16)
    return EncodedThermal(codes=codes, params=params, valid=valid)


def decode_thermal(enc: EncodedThermal) -> ThermalFrame:
    """Relative °C (above ``params.t_out``) for every valid code."""
    enc.validate()
    values = enc.params.range_lo + enc.codes.astype(np.float64) * enc.params.step
    values = np.where(enc.valid, values, np.nan)
    return ThermalFrame(values=values, t_out=enc.params.t_out, valid=enc.valid.copy(), relative=True)


def decode_relative(enc: EncodedThermal) -> np.ndarray:
    """Decoded relative temperatures as a bare array (NaN on invalid pixels)."""
    return decode_thermal(enc).values


@dataclass
class AlignedPair:
    """Registered RGB and encoded thermal image of one scene."""

    scene_id: str
    rgb: np.ndarray
    thermal: EncodedThermal
    condition: Optional[str] = None
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rgb = ColorFrame(self.rgb).pixels
        if self.rgb.shape[:2] != self.thermal.shape:
            raise ValueError(
                f"RGB {self.rgb.shape[:2]} and thermal {self.thermal.shape} sizes differ for {self.scene_id}"
            )
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=bool)

    @property
    def valid(self) -> np.ndarray:
        return self.thermal.valid

    def mirrored(self) -> "AlignedPair":
        th = replace(self.thermal, codes=self.thermal.codes[:, ::-1].copy(), valid=self.thermal.valid[:, ::-1].copy())
        truth = None if self.truth is None else self.truth[:, ::-1].copy()
        return replace(self, rgb=self.rgb[:, ::-1].copy(), thermal=th, truth=truth)


def pair_paths(directory, scene_id: str) -> dict:
    directory = Path(directory)
    return {k: directory / f"{scene_id}{suffix}" for k, suffix in PAIR_SUFFIXES.items()}


def write_pair(pair: AlignedPair, directory) -> dict:
    """Write the PNGs and the sidecar of ``pair`` into ``directory``."""
    pair.thermal.validate()
    paths = pair_paths(directory, pair.scene_id)
    try:
        Path(directory).mkdir(parents=True, exist_ok=True)
        codes = pair.thermal.codes.astype(np.uint8)
        codes[~pair.thermal.valid] = INVALID_CODE
        Image.fromarray(pair.rgb, mode="RGB").save(paths["rgb"])
        Image.fromarray(codes, mode="L").save(paths["thermal"])
        meta = {
            "scene_id": pair.scene_id,
            "condition": pair.condition,
            "encoding": pair.thermal.params.to_dict(),
        }
        paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        if pair.truth is not None:
            Image.fromarray(pair.truth.astype(np.uint8) * 255, mode="L").save(paths["truth"])
        else:
            paths["truth"].unlink(missing_ok=True)
    except OSError as exc:
        raise IoError(f"cannot write pair {pair.scene_id} to {directory}: {exc}") from exc
    return paths


def read_codes_png(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a thermal code PNG; returns (codes, valid)."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise IoError(f"{path}: thermal image must be single-channel 8-bit, got mode {im.mode}")
            raw = np.array(im)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    valid = raw != INVALID_CODE
    return raw.astype(np.int16), valid


def read_pair(directory, scene_id: str) -> AlignedPair:
    paths = pair_paths(directory, scene_id)
    if not paths["meta"].exists():
        raise MissingSidecar(f"no sidecar {paths['meta'].name} for scene {scene_id}")
    try:
        meta = json.loads(paths["meta"].read_text())
        with Image.open(paths["rgb"]) as im:
            rgb = np.array(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read pair {scene_id}: {exc}") from exc
    codes, valid = read_codes_png(paths["thermal"])
    params = EncodingParams.from_dict(meta["encoding"])
    enc = EncodedThermal(codes=np.where(valid, codes, 0), params=params, valid=valid)
    bad = valid & (codes > params.max_code)
    if bad.any():
        raise CodeOutOfRange(
            f"{paths['thermal'].name}: codes {np.unique(codes[bad])[:10].tolist()} exceed {params.max_code}"
        )
    truth = None
    if paths["truth"].exists():
        with Image.open(paths["truth"]) as im:
            truth = np.array(im.convert("L")) > 127
    return AlignedPair(scene_id=scene_id, rgb=rgb, thermal=enc, condition=meta.get("condition"), truth=truth)
