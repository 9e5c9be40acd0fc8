"""Frame containers shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ConditionTag:
    """Acquisition condition of a data set, e.g. ``Winter4`` at -4 °C."""

    name: str
    t_out: float

    def __post_init__(self):
        if not np.isfinite(self.t_out):
            raise ValueError(f"t_out must be finite, got {self.t_out}")

    @property
    def season(self) -> str:
        return "summer" if self.t_out >= 10.0 else "winter"

    def to_dict(self) -> dict:
        return {"name": self.name, "t_out": float(self.t_out)}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionTag":
        return cls(name=str(d["name"]), t_out=float(d["t_out"]))


# Acquisition conditions of the reference data sets.
WINTER4 = ConditionTag("Winter4", -4.0)
WINTER8 = ConditionTag("Winter8", -8.0)
SUMMER = ConditionTag("Summer", 17.0)
KNOWN_CONDITIONS = {c.name.lower(): c for c in (WINTER4, WINTER8, SUMMER)}


@dataclass
class ThermalFrame:
    """Per-pixel temperature field in °C.

    ``values`` holds absolute temperatures unless ``relative`` is set, in
    which case they are offsets above ``t_out``. Pixels where ``valid`` is
    False carry no information and their values must not be read.
    """

    values: np.ndarray
    t_out: float = 0.0
    condition: Optional[str] = None
    valid: Optional[np.ndarray] = None
    relative: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"thermal frame must be 2-D, got shape {self.values.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.values)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise ValueError("validity mask shape differs from values")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def absolute(self) -> "ThermalFrame":
        if not self.relative:
            return self
        return replace(self, values=self.values + self.t_out, relative=False)

    def with_values(self, values: np.ndarray, valid: np.ndarray) -> "ThermalFrame":
        return replace(self, values=values, valid=valid)


@dataclass
class ColorFrame:
    """8-bit RGB image, ``pixels`` has shape (H, W, 3)."""

    pixels: np.ndarray
    valid: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"color frame must be HxWx3, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            self.pixels = np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8)
        if self.valid is None:
            self.valid = np.ones(self.pixels.shape[:2], dtype=bool)

    @property
    def shape(self) -> tuple:
        return self.pixels.shape[:2]
