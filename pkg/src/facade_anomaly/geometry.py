"""Lens distortion correction and registration onto the common grid.

The radial model maps an undistorted point ``p`` to its distorted image

    p_d = c + (p - c) * (1 + k1 r^2 + k2 r^4),   r = |p - c| / norm_scale

with negative ``k1`` giving barrel distortion. Undistorting an image is done
by inverse mapping: every output pixel looks up its distorted source
position through the forward polynomial. Undistorting point coordinates
needs the inverse polynomial, which is solved per point with Newton steps.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateCorrespondences,
    EmptyFrame,
    FovNotContained,
    NonMonotonicModel,
    dimension_mismatch,
)
from .frames import ColorFrame, ThermalFrame

GRID_SIZE = 512
NEWTON_MAX_ITER = 10
NEWTON_TOL = 1e-6  # px


@dataclass(frozen=True)
class FieldOfView:
    horizontal_deg: float
    vertical_deg: float

    def __post_init__(self):
        if not (0 < self.horizontal_deg < 180 and 0 < self.vertical_deg < 180):
            raise ValueError(f"field of view angles must lie in (0, 180): {self}")

    def contains(self, other: "FieldOfView") -> bool:
        return other.horizontal_deg <= self.horizontal_deg and other.vertical_deg <= self.vertical_deg


RGB_FOV = FieldOfView(110.0, 70.0)
THERMAL_FOV = FieldOfView(56.0, 42.0)


@dataclass(frozen=True)
class RegisteredGrid:
    width: int = GRID_SIZE
    height: int = GRID_SIZE
    provenance: tuple = ()


@dataclass(frozen=True)
class RadialDistortionModel:
    """Two-coefficient radial model calibrated for a ``width`` x ``height`` sensor.

    ``center_x``/``center_y`` are pixel coordinates of the principal point;
    ``None`` means the geometric image center. ``norm_scale`` defaults to the
    half-diagonal, so ``r`` reaches 1 in the sensor corners.
    """

    k1: float = 0.0
    k2: float = 0.0
    width: int = 320
    height: int = 240
    center_x: Optional[float] = None
    center_y: Optional[float] = None
    norm_scale: Optional[float] = None
    fitted_rms: Optional[float] = None

    def __post_init__(self):
        if self.center_x is None:
            object.__setattr__(self, "center_x", (self.width - 1) / 2.0)
        if self.center_y is None:
            object.__setattr__(self, "center_y", (self.height - 1) / 2.0)
        if self.norm_scale is None:
            object.__setattr__(self, "norm_scale", 0.5 * math.hypot(self.width, self.height))
        if self.norm_scale <= 0:
            raise ValueError("norm_scale must be positive")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.center_x, self.center_y])

    @property
    def max_radius(self) -> float:
        """Largest normalized radius of any pixel of the sensor."""
        cx, cy = self.center_x, self.center_y
        corners = [(0, 0), (self.width - 1, 0), (0, self.height - 1), (self.width - 1, self.height - 1)]
        return max(math.hypot(x - cx, y - cy) for x, y in corners) / self.norm_scale

    def is_monotonic(self) -> bool:
        """Whether d r_d / d r = 1 + 3 k1 r^2 + 5 k2 r^4 stays positive on the sensor."""
        s_max = self.max_radius ** 2
        # quadratic in s = r^2 on [0, s_max]: check the ends and the vertex
        candidates = [0.0, s_max]
        if self.k2 != 0.0:
            s_vertex = -3.0 * self.k1 / (10.0 * self.k2)
            if 0.0 < s_vertex < s_max:
                candidates.append(s_vertex)
        return all(1.0 + 3.0 * self.k1 * s + 5.0 * self.k2 * s * s > 0.0 for s in candidates)

    def check(self) -> "RadialDistortionModel":
        if not self.is_monotonic():
            raise NonMonotonicModel(
                f"k1={self.k1}, k2={self.k2} fold the image within the sensor (max r={self.max_radius:.3f})"
            )
        return self

    def with_coefficients(self, k1: float, k2: float) -> "RadialDistortionModel":
        d = asdict(self)
        d.update(k1=k1, k2=k2, fitted_rms=None)
        return RadialDistortionModel(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RadialDistortionModel":
        d = json.loads(Path(path).read_text())
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def distort_points(points: np.ndarray, model: RadialDistortionModel) -> np.ndarray:
    """Map undistorted pixel coordinates (N, 2) to distorted ones."""
    p = np.asarray(points, dtype=np.float64)
    d = p - model.center
    s = np.sum(d * d, axis=-1, keepdims=True) / model.norm_scale ** 2
    # displacement form keeps k1 = k2 = 0 an exact identity
    return p + d * (model.k1 * s + model.k2 * s * s)


def undistort_points(points: np.ndarray, model: RadialDistortionModel) -> np.ndarray:
    """Invert :func:`distort_points` by Newton iteration on the radius."""
    p = np.asarray(points, dtype=np.float64)
    d = p - model.center
    rd = np.linalg.norm(d, axis=-1) / model.norm_scale
    r = rd.copy()
    tol = NEWTON_TOL / model.norm_scale
    for _ in range(NEWTON_MAX_ITER):
        r2 = r * r
        f = r * (1.0 + model.k1 * r2 + model.k2 * r2 * r2) - rd
        df = 1.0 + 3.0 * model.k1 * r2 + 5.0 * model.k2 * r2 * r2
        step = f / np.where(np.abs(df) < 1e-12, 1e-12, df)
        r = np.maximum(r - step, 0.0)
        if np.all(np.abs(step) < tol):
            break
    scale = np.where(rd > 0, r / np.where(rd > 0, rd, 1.0), 1.0)
    return model.center + d * scale[..., None]


def _bilinear_sample(values: np.ndarray, valid: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Sample ``values`` (H, W[, C]) at float positions.

    A sample is valid when it lies inside the image and every neighbour
    with non-zero weight is valid. Interpolation uses the lerp form so a
    constant neighbourhood reproduces its value exactly.
    """
    h, w = valid.shape
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xs = np.clip(xs, 0, w - 1)
    ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0

    filled = np.where(valid[..., None] if values.ndim == 3 else valid, values, 0).astype(np.float64)
    v00, v01 = filled[y0, x0], filled[y0, x1]
    v10, v11 = filled[y1, x0], filled[y1, x1]
    if values.ndim == 3:
        fxe, fye = fx[..., None], fy[..., None]
    else:
        fxe, fye = fx, fy
    top = v00 + fxe * (v01 - v00)
    bottom = v10 + fxe * (v11 - v10)
    out = top + fye * (bottom - top)

    ok = inside & valid[y0, x0]
    ok &= (fx == 0) | valid[y0, x1]
    ok &= (fy == 0) | valid[y1, x0]
    ok &= (fx == 0) | (fy == 0) | valid[y1, x1]
    return out, ok


def undistort(frame: ThermalFrame, model: RadialDistortionModel) -> ThermalFrame:
    """Remove radial distortion from a thermal frame.

    Output pixels whose source position falls off the sensor are marked
    invalid rather than extrapolated.
    """
    model.check()
    h, w = frame.shape
    if (w, h) != (model.width, model.height):
        raise dimension_mismatch(
            "geometry", f"frame is {w}x{h} but the model was calibrated for {model.width}x{model.height}"
        )
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = distort_points(np.stack([xs, ys], axis=-1), model)
    values, ok = _bilinear_sample(frame.values, frame.valid, src[..., 0], src[..., 1])
    values = np.where(ok, values, np.nan)
    return frame.with_values(values, ok)


def distort_image(values: np.ndarray, model: RadialDistortionModel, valid: Optional[np.ndarray] = None):
    """Apply the forward distortion to an ideal image (synthetic data and tests).

    Returns ``(values, valid)``.
    """
    h, w = values.shape[:2]
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = undistort_points(np.stack([xs, ys], axis=-1).reshape(-1, 2), model).reshape(h, w, 2)
    return _bilinear_sample(values, valid, src[..., 0], src[..., 1])


@dataclass
class DistortionFit:
    model: RadialDistortionModel
    rms: float
    iterations: int
    residuals: np.ndarray = field(repr=False)


def fit_distortion(
    correspondences: Sequence,
    width: int = 320,
    height: int = 240,
    norm_scale: Optional[float] = None,
    fit_center: bool = True,
    max_iter: int = 50,
) -> DistortionFit:
    """Least-squares (k1, k2, center) from (distorted, undistorted) point pairs.

    ``correspondences`` is a sequence of ``((xd, yd), (xu, yu))`` or an
    array of shape (N, 2, 2). The residual is measured in the distorted
    image. The principal point is refined by Gauss-Newton only when the data
    constrain it; with zero distortion it stays at the image center.
    """
    corr = np.asarray(correspondences, dtype=np.float64)
    if corr.ndim != 3 or corr.shape[1:] != (2, 2):
        raise DegenerateCorrespondences(f"expected (N, 2, 2) correspondences, got shape {corr.shape}")
    n = corr.shape[0]
    if n < 6:
        raise DegenerateCorrespondences(f"need at least 6 correspondences, got {n}")
    pd, pu = corr[:, 0], corr[:, 1]
    spread = pu - pu.mean(axis=0)
    sv = np.linalg.svd(spread, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateCorrespondences("correspondences are collinear")

    base = RadialDistortionModel(width=width, height=height, norm_scale=norm_scale)
    ns = base.norm_scale
    params = np.array([0.0, 0.0, base.center_x, base.center_y])

    def residual_and_jacobian(prm):
        k1, k2, cx, cy = prm
        d = pu - np.array([cx, cy])
        s = np.sum(d * d, axis=1) / ns ** 2
        g = k1 * s + k2 * s * s
        res = (pu + d * g[:, None] - pd).reshape(-1)
        jac = np.empty((2 * n, 4))
        jac[:, 0] = (d * s[:, None]).reshape(-1)
        jac[:, 1] = (d * (s * s)[:, None]).reshape(-1)
        dg_ds = k1 + 2.0 * k2 * s
        for j in range(2):
            # d(res)/d(c_j) = -e_j * g + d * dg/ds * ds/dc_j, ds/dc_j = -2 d_j / ns^2
            ds = -2.0 * d[:, j] / ns ** 2
            col = d * (dg_ds * ds)[:, None]
            col[:, j] -= g
            jac[:, 2 + j] = col.reshape(-1)
        return res, jac

    _, jac0 = residual_and_jacobian(params)
    if np.linalg.matrix_rank(jac0[:, :2]) < 2:
        raise DegenerateCorrespondences("normal equations for (k1, k2) are rank-deficient")

    it = 0
    for it in range(1, max_iter + 1):
        res, jac = residual_and_jacobian(params)
        cols = 4 if fit_center else 2
        step, *_ = np.linalg.lstsq(jac[:, :cols], -res, rcond=1e-10)
        params[:cols] += step
        if np.max(np.abs(step[:2])) < 1e-14 and (cols == 2 or np.max(np.abs(step[2:])) < 1e-10):
            break
    res, _ = residual_and_jacobian(params)
    per_point = res.reshape(n, 2)
    rms = float(np.sqrt(np.mean(np.sum(per_point ** 2, axis=1))))
    model = RadialDistortionModel(
        k1=float(params[0]),
        k2=float(params[1]),
        width=width,
        height=height,
        center_x=float(params[2]),
        center_y=float(params[3]),
        norm_scale=ns,
        fitted_rms=rms,
    )
    return DistortionFit(model=model, rms=rms, iterations=it, residuals=per_point)


def crop_box(shape: tuple, rgb_fov: FieldOfView, thermal_fov: FieldOfView, offset=(0, 0)) -> tuple:
    """Pixel box (left, top, width, height) of the RGB region seen by the thermal camera."""
    if not rgb_fov.contains(thermal_fov):
        raise FovNotContained(f"thermal FOV {thermal_fov} exceeds RGB FOV {rgb_fov}")
    h, w = shape[:2]
    ratio_x = math.tan(math.radians(thermal_fov.horizontal_deg) / 2) / math.tan(math.radians(rgb_fov.horizontal_deg) / 2)
    ratio_y = math.tan(math.radians(thermal_fov.vertical_deg) / 2) / math.tan(math.radians(rgb_fov.vertical_deg) / 2)
    cw = max(1, int(round(w * ratio_x)))
    ch = max(1, int(round(h * ratio_y)))
    left = int(round((w - cw) / 2 + offset[0]))
    top = int(round((h - ch) / 2 + offset[1]))
    if left < 0 or top < 0 or left + cw > w or top + ch > h:
        raise FovNotContained(f"offset {tuple(offset)} pushes the crop outside the {w}x{h} frame")
    return left, top, cw, ch


def crop_to_thermal_fov(
    rgb: ColorFrame,
    rgb_fov: FieldOfView = RGB_FOV,
    thermal_fov: FieldOfView = THERMAL_FOV,
    offset=(0, 0),
    target: Optional[RegisteredGrid] = RegisteredGrid(),
) -> ColorFrame:
    """Central crop subtending the thermal field of view, resampled to ``target``.

    ``offset`` (dx, dy) in pixels shifts the crop to absorb mounting parallax.
    Pass ``target=None`` to skip resampling.
    """
    if not isinstance(rgb, ColorFrame):
        rgb = ColorFrame(rgb)
    left, top, cw, ch = crop_box(rgb.shape, rgb_fov, thermal_fov, offset)
    cropped = ColorFrame(rgb.pixels[top:top + ch, left:left + cw], rgb.valid[top:top + ch, left:left + cw])
    if target is None:
        return cropped
    pixels, valid = resample(cropped.pixels, target, cropped.valid)
    return ColorFrame(np.clip(np.rint(pixels), 0, 255).astype(np.uint8), valid)


def resample(frame: np.ndarray, target: RegisteredGrid = RegisteredGrid(), valid: Optional[np.ndarray] = None):
    """Bilinear resampling of an (H, W) or (H, W, C) array onto ``target``.

    Pixel centers are aligned (half-pixel convention, edge clamped). Returns
    ``(values, valid)``; a target pixel is invalid when any source pixel it
    draws on is invalid. Same-size input is returned unchanged.
    """
    frame = np.asarray(frame)
    if frame.size == 0 or frame.shape[0] == 0 or frame.shape[1] == 0:
        raise EmptyFrame("cannot resample an empty frame")
    h, w = frame.shape[:2]
    if valid is None:
        valid = np.ones((h, w), dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (h, w):
            raise dimension_mismatch("geometry", f"mask {valid.shape} does not match frame {(h, w)}")
    if (h, w) == (target.height, target.width):
        return frame.copy(), valid.copy()
    xs = (np.arange(target.width) + 0.5) * (w / target.width) - 0.5
    ys = (np.arange(target.height) + 0.5) * (h / target.height) - 0.5
    gx, gy = np.meshgrid(np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1))
    out, ok = _bilinear_sample(frame, valid, gx, gy)
    return out, ok


def resample_thermal(frame: ThermalFrame, target: RegisteredGrid = RegisteredGrid()) -> ThermalFrame:
    values, ok = resample(frame.values, target, frame.valid)
    return frame.with_values(np.where(ok, values, np.nan), ok)
