"""Prediction-quality statistics, detection scores and evaluation reports."""

from __future__ import annotations

import base64
import csv
import datetime as _dt
import html
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .anomaly import (
    DEFAULT_MIN_AREA,
    DEFAULT_TOLERANCE,
    AnomalyMask,
    anomaly_map,
    render_overlay,
    summarize_regions,
    threshold,
)
from .codec import EncodedThermal, decode_relative
from .errors import EmptySet, EncodingMismatch, NoValidPixels, dimension_mismatch

DEFAULT_BIN_WIDTH = 0.25  # °C
DEFAULT_WORST_K = 5


def mean_abs_deviation(measured: EncodedThermal, predicted: EncodedThermal) -> float:
    """Mean over valid pixels of |measured - predicted| in °C."""
    if measured.shape != predicted.shape:
        raise dimension_mismatch("evaluation", f"measured {measured.shape} vs predicted {predicted.shape}")
    if not measured.params.same_scale(predicted.params):
        raise EncodingMismatch(f"encodings differ: {measured.params} vs {predicted.params}")
    valid = measured.valid & predicted.valid
    if not valid.any():
        raise NoValidPixels("no pixel is valid in both images")
    diff = decode_relative(measured)[valid] - decode_relative(predicted)[valid]
    return float(np.mean(np.abs(diff)))


@dataclass
class DeviationStats:
    per_image: list  # [(scene_id, deviation °C)]
    bin_width: float
    counts: np.ndarray
    summary: dict

    @property
    def bin_edges(self) -> np.ndarray:
        return np.arange(len(self.counts) + 1) * self.bin_width

    @property
    def mode_bin(self) -> tuple:
        """(lo, hi) of the fullest bin; the lowest such bin on ties."""
        i = int(np.argmax(self.counts))
        return (i * self.bin_width, (i + 1) * self.bin_width)

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "counts": [int(c) for c in self.counts],
            "mode_bin": list(self.mode_bin),
            "summary": self.summary,
            "per_image": [{"scene_id": s, "deviation": v} for s, v in self.per_image],
        }


def deviation_histogram(per_image: Sequence, bin_width: float = DEFAULT_BIN_WIDTH) -> DeviationStats:
    """Histogram of per-image deviations with bins [k*w, (k+1)*w) starting at 0."""
    per_image = [(str(s), float(v)) for s, v in per_image]
    if not per_image:
        raise EmptySet("no images to summarize")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values = np.array([v for _, v in per_image])
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("deviations must be finite and non-negative")
    idx = np.floor(values / bin_width).astype(int)
    counts = np.bincount(idx, minlength=int(idx.max()) + 1)
    summary = {
        "n": len(values),
        "mean": float(np.mean(values)),
        "median": float(np.median(values)),
        "max": float(np.max(values)),
    }
    return DeviationStats(per_image=per_image, bin_width=float(bin_width), counts=counts, summary=summary)


@dataclass
class DetectionScore:
    """Pixel-level scores; ``None`` where the ratio has an empty denominator."""

    pixel_recall: Optional[float]
    pixel_precision: Optional[float]
    iou: Optional[float]
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "DetectionScore":
        def ratio(a, b):
            return a / b if b > 0 else None

        return cls(ratio(tp, tp + fn), ratio(tp, tp + fp), ratio(tp, tp + fp + fn), int(tp), int(fp), int(fn))

    def __add__(self, other: "DetectionScore") -> "DetectionScore":
        return DetectionScore.from_counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"pixel_recall": self.pixel_recall, "pixel_precision": self.pixel_precision, "iou": self.iou,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


def score_detection(mask, truth, valid: Optional[np.ndarray] = None) -> DetectionScore:
    pred = np.asarray(getattr(mask, "pixels", mask), dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise dimension_mismatch("evaluation", f"mask {pred.shape} vs truth {truth.shape}")
    if valid is None:
        valid = np.ones(pred.shape, dtype=bool)
    tp = int(np.sum(pred & truth & valid))
    fp = int(np.sum(pred & ~truth & valid))
    fn = int(np.sum(~pred & truth & valid))
    return DetectionScore.from_counts(tp, fp, fn)


# -- evaluation runs -------------------------------------------------------

@dataclass
class SceneResult:
    scene_id: str
    deviation: float
    rgb: np.ndarray = field(repr=False)
    mask: AnomalyMask = field(repr=False)
    amap: object = field(repr=False)
    regions: list = field(default_factory=list)
    detection: Optional[DetectionScore] = None


@dataclass
class EvaluationRun:
    model_info: dict
    data_info: dict
    tolerance: float
    transform: str
    scenes: list
    bin_width: float = DEFAULT_BIN_WIDTH

    @property
    def stats(self) -> DeviationStats:
        return deviation_histogram([(s.scene_id, s.deviation) for s in self.scenes], self.bin_width)

    @property
    def detection(self) -> Optional[DetectionScore]:
        scored = [s.detection for s in self.scenes if s.detection is not None]
        if not scored:
            return None
        total = scored[0]
        for s in scored[1:]:
            total = total + s
        return total


def evaluate_pairs(model, pairs: Sequence, tolerance: float = DEFAULT_TOLERANCE, f: str = "identity",
                   min_area: int = DEFAULT_MIN_AREA, bin_width: float = DEFAULT_BIN_WIDTH,
                   data_info: Optional[dict] = None) -> EvaluationRun:
    """Predict every pair, compute deviations, masks, regions and (if truth exists) scores."""
    from .model import predict_many

    pairs = list(pairs)
    if not pairs:
        raise EmptySet("no pairs to evaluate")
    preds = predict_many(model, [p.rgb for p in pairs], [p.thermal.params.t_out for p in pairs])
    scenes = []
    for pair, pred in zip(pairs, preds):
        amap = anomaly_map(pair.thermal, pred, f)
        mask = threshold(amap, tolerance)
        det = score_detection(mask, pair.truth, amap.valid) if pair.truth is not None else None
        scenes.append(SceneResult(
            scene_id=pair.scene_id,
            deviation=mean_abs_deviation(pair.thermal, pred),
            rgb=pair.rgb,
            mask=mask,
            amap=amap,
            regions=summarize_regions(mask, amap, min_area),
            detection=det,
        ))
    model_info = {"resolution": model.resolution, "scale": model.scale, "provenance": model.provenance}
    return EvaluationRun(model_info=model_info, data_info=data_info or {}, tolerance=float(tolerance),
                         transform=f, scenes=scenes, bin_width=bin_width)


def _png_b64(path: Path) -> str:
    return base64.b64encode(path.read_bytes()).decode("ascii")


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def report(run: EvaluationRun, out_dir, worst_k: int = DEFAULT_WORST_K, highlight: Sequence = (),
           timestamp: Optional[str] = None) -> dict:
    """Write figures, CSV tables, ``metrics.json`` and a self-contained ``report.html``.

    Apart from the ``generated`` timestamp, output is a pure function of
    ``run``.
    """
    from . import plotting

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    stats = run.stats
    worst = sorted(run.scenes, key=lambda s: (-s.deviation, s.scene_id))[:worst_k]
    highlight = list(highlight) or [s.scene_id for s in worst[:1]]

    hist_path = out_dir / "deviation_histogram.png"
    plotting.save_deviation_histogram(stats, hist_path, highlight=highlight)
    overlays = []
    for s in worst:
        path = out_dir / f"overlay_{s.scene_id}.png"
        plotting.save_overlay_figure(s.rgb, render_overlay(s.rgb, s.mask, s.amap), s.amap, s.mask, path,
                                     title=f"{s.scene_id}  deviation {s.deviation:.3f} °C")
        overlays.append((s, path))

    with open(out_dir / "per_image.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene_id", "mean_abs_deviation_c", "flagged_px", "n_regions",
                    "pixel_recall", "pixel_precision", "iou"])
        for s in sorted(run.scenes, key=lambda s: s.scene_id):
            d = s.detection.to_dict() if s.detection else {}
            w.writerow([s.scene_id, f"{s.deviation:.6f}", int(s.mask.values.sum()), len(s.regions),
                        _fmt(d.get("pixel_recall")), _fmt(d.get("pixel_precision")), _fmt(d.get("iou"))])

    region_rows = []
    for s in sorted(run.scenes, key=lambda s: s.scene_id):
        for r in s.regions:
            region_rows.append([s.scene_id, *r.bbox, r.area, f"{r.mean_e:.4f}"])
    with open(out_dir / "regions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene_id", "x0", "y0", "x1", "y1", "area_px", "mean_e_c"])
        w.writerows(region_rows)

    detection = run.detection
    metrics = {
        "generated": stamp,
        "tolerance_c": run.tolerance,
        "transform": run.transform,
        "model": run.model_info,
        "data": run.data_info,
        "deviation": stats.to_dict(),
        "detection": detection.to_dict() if detection else None,
        "n_regions": len(region_rows),
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True, default=str) + "\n")

    esc = html.escape
    parts = [
        "<!DOCTYPE html><html><head><meta charset='utf-8'><title>Thermal anomaly evaluation</title>",
        "<style>body{font-family:sans-serif;max-width:1100px;margin:auto}table{border-collapse:collapse}"
        "td,th{border:1px solid #bbb;padding:2px 6px;font-size:13px}</style></head><body>",
        "<h1>Thermal anomaly evaluation</h1>",
        f"<p>generated: {esc(stamp)}</p>",
        f"<p>model: {esc(json.dumps(run.model_info, sort_keys=True, default=str))}</p>",
        f"<p>data: {esc(json.dumps(run.data_info, sort_keys=True, default=str))}</p>",
        f"<p>tolerance T = {run.tolerance} °C, residual transform: {esc(run.transform)}</p>",
        "<h2>Per-image mean absolute deviation</h2>",
        f"<p>n = {stats.summary['n']}, mean = {stats.summary['mean']:.4f} °C, median = "
        f"{stats.summary['median']:.4f} °C, max = {stats.summary['max']:.4f} °C, "
        f"mode bin = [{stats.mode_bin[0]:.2f}, {stats.mode_bin[1]:.2f}) °C</p>",
        f"<img src='data:image/png;base64,{_png_b64(hist_path)}'>",
        "<h2>Detection against ground truth</h2>",
    ]
    if detection is None:
        parts.append("<p>No ground-truth masks supplied.</p>")
    else:
        parts.append("<table><tr><th>pixel recall</th><th>pixel precision</th><th>IoU</th></tr>"
                     f"<tr><td>{_fmt(detection.pixel_recall)}</td><td>{_fmt(detection.pixel_precision)}</td>"
                     f"<td>{_fmt(detection.iou)}</td></tr></table>")
    parts.append(f"<h2>Anomaly regions ({len(region_rows)})</h2>")
    if region_rows:
        parts.append("<table><tr><th>scene</th><th>bbox (x0, y0, x1, y1)</th><th>area px</th><th>mean E °C</th></tr>")
        for row in region_rows:
            parts.append(f"<tr><td>{esc(row[0])}</td><td>{row[1:5]}</td><td>{row[5]}</td><td>{row[6]}</td></tr>")
        parts.append("</table>")
    else:
        parts.append("<p>No regions above the size threshold.</p>")
    parts.append(f"<h2>Worst {len(overlays)} images</h2>")
    for s, path in overlays:
        parts.append(f"<h3>{esc(s.scene_id)}: {s.deviation:.4f} °C</h3>"
                     f"<img src='data:image/png;base64,{_png_b64(path)}'>")
    parts.append("<h2>Per-image table</h2><table><tr><th>scene</th><th>deviation °C</th><th>flagged px</th></tr>")
    for s in sorted(run.scenes, key=lambda s: s.scene_id):
        parts.append(f"<tr><td>{esc(s.scene_id)}</td><td>{s.deviation:.4f}</td><td>{int(s.mask.values.sum())}</td></tr>")
    parts.append("</table></body></html>\n")
    (out_dir / "report.html").write_text("\n".join(parts))
    return {"report": out_dir / "report.html", "metrics": out_dir / "metrics.json",
            "histogram": hist_path, "overlays": [p for _, p in overlays]}
