import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pytest

from facade_anomaly.codec import AlignedPair, EncodedThermal, EncodingParams
from facade_anomaly.config import TOY
from facade_anomaly.dataset import build_catalog
from facade_anomaly.frames import SUMMER, WINTER4
from facade_anomaly.model import PRESETS, train
from facade_anomaly.synthgen import generate_set

ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_pair(codes, rgb=None, t_out=-4.0, scene_id="s", valid=None, truth=None):
    codes = np.asarray(codes)
    if rgb is None:
        rgb = np.zeros(codes.shape + (3,), dtype=np.uint8)
    return AlignedPair(scene_id=scene_id, rgb=rgb, thermal=EncodedThermal(codes, EncodingParams(t_out), valid),
                       truth=truth)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@dataclass
class ToyPipeline:
    root: Path
    winter_catalog: object
    summer_catalog: object
    winter: object
    summer: object
    summer_scratch_history: list
    timings: dict


@pytest.fixture(scope="session")
def toy_pipeline(tmp_path_factory):
    """Desk-scale reproduction shared by the acceptance and model tests.

    200 anomaly-free winter pairs (30 held out) train a winter model from
    scratch; 100 summer pairs (10 held out) fine-tune it into a summer
    model. A one-epoch from-scratch summer run gives the comparison point
    for the fine-tuning benefit.
    """
    root = tmp_path_factory.mktemp("toy")
    timings = {}

    t0 = time.perf_counter()
    generate_set(200, WINTER4, 0.0, 7, root / "winter4", size=TOY.resolution)
    winter_cat = build_catalog(root / "winter4", WINTER4, 30, seed=7)
    winter_cfg = replace(PRESETS["winter"], epochs=TOY.epochs, seed=7)
    winter = train(winter_cat, winter_cfg, scale=TOY.scale).model
    winter.save(root / "winter4.pt")
    timings["winter"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    generate_set(100, SUMMER, 0.0, 11, root / "summer", size=TOY.resolution)
    summer_cat = build_catalog(root / "summer", SUMMER, 10, seed=11)
    summer_cfg = replace(PRESETS["summer"], epochs=TOY.epochs, seed=11)
    summer = train(summer_cat, summer_cfg, init=winter, init_name="winter4.pt").model
    summer.save(root / "summer.pt")
    timings["summer"] = time.perf_counter() - t0

    scratch = train(summer_cat, replace(summer_cfg, epochs=1), scale=TOY.scale)
    return ToyPipeline(root, winter_cat, summer_cat, winter, summer, scratch.history, timings)
