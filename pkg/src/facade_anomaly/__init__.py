"""Label-free detection of thermal anomalies on building facades.

A colour-to-thermal network trained on anomaly-free RGB/thermal pairs
predicts the expected thermal image of a facade; pixels measured warmer
than predicted by more than a tolerance are flagged.
"""

from .anomaly import AnomalyMap, AnomalyMask, anomaly_map, render_overlay, summarize_regions, threshold
from .codec import (
    AlignedPair,
    EncodedThermal,
    EncodingParams,
    decode_thermal,
    encode_thermal,
    read_pair,
    write_pair,
)
from .dataset import DatasetCatalog, augment_mirror, batches, build_catalog
from .evaluation import DetectionScore, DeviationStats, deviation_histogram, mean_abs_deviation, score_detection
from .frames import SUMMER, WINTER4, WINTER8, ColorFrame, ConditionTag, ThermalFrame
from .geometry import (
    FieldOfView,
    RadialDistortionModel,
    RegisteredGrid,
    crop_to_thermal_fov,
    fit_distortion,
    resample,
    undistort,
)

__version__ = "0.1.0"

__all__ = [
    "AlignedPair", "AnomalyMap", "AnomalyMask", "ColorFrame", "ConditionTag", "DatasetCatalog",
    "DetectionScore", "DeviationStats", "EncodedThermal", "EncodingParams", "FieldOfView",
    "RadialDistortionModel", "RegisteredGrid", "SUMMER", "ThermalFrame", "WINTER4", "WINTER8",
    "anomaly_map", "augment_mirror", "batches", "build_catalog", "crop_to_thermal_fov", "decode_thermal",
    "deviation_histogram", "encode_thermal", "fit_distortion", "mean_abs_deviation", "read_pair",
    "render_overlay", "resample", "score_detection", "summarize_regions", "threshold", "undistort",
    "write_pair",
]
