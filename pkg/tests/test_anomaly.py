import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from facade_anomaly.anomaly import (
    AnomalyMap,
    anomaly_map,
    map_from_uint16,
    map_to_uint16,
    render_overlay,
    summarize_regions,
    threshold,
    write_detection,
)
from facade_anomaly.codec import EncodedThermal, EncodingParams
from facade_anomaly.errors import DimensionMismatch, EncodingMismatch


def enc(codes, valid=None, t_out=-4.0):
    return EncodedThermal(np.asarray(codes), EncodingParams(t_out), valid)


def brute_force_e(mc, pc, f="identity"):
    out = np.zeros(mc.shape)
    for i in range(mc.shape[0]):
        for j in range(mc.shape[1]):
            d = (-5.0 + 0.5 * int(mc[i, j])) - (-5.0 + 0.5 * int(pc[i, j]))
            out[i, j] = abs(d) if f == "absolute" else d
    return out


def test_equal_images_give_zero():
    c = np.random.default_rng(0).integers(0, 31, (6, 6))
    amap = anomaly_map(enc(c), enc(c))
    assert np.all(amap.values == 0.0)
    assert not threshold(amap, 1.0).values.any()


def test_code_20_vs_10_is_plus_5():
    assert anomaly_map(enc([[20]]), enc([[10]])).values[0, 0] == 5.0


def test_absolute_transform():
    assert anomaly_map(enc([[10]]), enc([[14]]), "absolute").values[0, 0] == 2.0
    assert anomaly_map(enc([[10]]), enc([[14]])).values[0, 0] == -2.0


def test_validity_is_intersection():
    v1 = np.array([[True, False], [True, True]])
    v2 = np.array([[True, True], [False, True]])
    amap = anomaly_map(enc(np.full((2, 2), 20), v1), enc(np.full((2, 2), 10), v2))
    assert amap.valid.tolist() == [[True, False], [False, True]]
    assert threshold(amap, 1.0).values.tolist() == [[1, 0], [0, 1]]


def test_errors():
    with pytest.raises(DimensionMismatch):
        anomaly_map(enc(np.zeros((2, 2), int)), enc(np.zeros((2, 3), int)))
    with pytest.raises(EncodingMismatch):
        anomaly_map(enc([[1]]), EncodedThermal(np.array([[1]]), EncodingParams(range_lo=-4, range_hi=11)))


def test_all_31_by_31_code_pairs():
    mc, pc = np.meshgrid(np.arange(31), np.arange(31), indexing="ij")
    for f in ("identity", "absolute"):
        assert np.array_equal(anomaly_map(enc(mc), enc(pc), f).values, brute_force_e(mc, pc, f))


def test_tie_is_not_flagged():
    amap = anomaly_map(enc([[12, 13]]), enc([[10, 10]]))  # E = 1.0 and 1.5
    assert amap.values.tolist() == [[1.0, 1.5]]
    assert threshold(amap, 1.0).values.tolist() == [[0, 1]]


def test_block_at_plus_3_is_exactly_the_mask():
    measured = np.full((32, 32), 12)
    measured[5:15, 8:18] += 6
    mask = threshold(anomaly_map(enc(measured), enc(np.full((32, 32), 12))), 1.0)
    expected = np.zeros((32, 32), np.uint8)
    expected[5:15, 8:18] = 1
    assert np.array_equal(mask.values, expected)


codes = st.integers(0, 2 ** 32 - 1).map(lambda s: np.random.default_rng(s).integers(0, 31, size=(2, 8, 8)))


@given(codes)
def test_identity_antisymmetry(c):
    a = anomaly_map(enc(c[0]), enc(c[1])).values
    b = anomaly_map(enc(c[1]), enc(c[0])).values
    assert np.array_equal(a, -b)


@given(codes, st.floats(-10, 10), st.floats(-10, 10))
def test_mask_monotone_in_tolerance(c, t1, t2):
    lo, hi = sorted((t1, t2))
    amap = anomaly_map(enc(c[0]), enc(c[1]))
    assert not np.any(threshold(amap, hi).pixels & ~threshold(amap, lo).pixels)


def test_threshold_rejects_nan():
    with pytest.raises(ValueError):
        threshold(AnomalyMap(np.zeros((1, 1)), np.ones((1, 1), bool)), float("nan"))


def _mask_and_map(blobs, shape=(40, 40)):
    values = np.zeros(shape)
    for (y0, y1, x0, x1), e in blobs:
        values[y0:y1, x0:x1] = e
    amap = AnomalyMap(values, np.ones(shape, bool))
    return threshold(amap, 1.0), amap


def test_regions_empty():
    mask, amap = _mask_and_map([])
    assert summarize_regions(mask, amap, 10) == []


def test_two_blobs_sorted_by_mean():
    mask, amap = _mask_and_map([((0, 5, 0, 5), 2.0), ((20, 25, 20, 25), 4.0)])
    regions = summarize_regions(mask, amap, 10)
    assert [(r.bbox, r.area, r.mean_e) for r in regions] == [((20, 20, 25, 25), 25, 4.0), ((0, 0, 5, 5), 25, 2.0)]


def test_small_blob_filtered():
    mask, amap = _mask_and_map([((0, 1, 0, 5), 2.0)])
    assert summarize_regions(mask, amap, 10) == []


def test_diagonal_pixels_are_separate_components():
    mask, amap = _mask_and_map([((0, 1, 0, 1), 2.0), ((1, 2, 1, 2), 2.0)])
    assert len(summarize_regions(mask, amap, 1)) == 2


def test_overlay_empty_mask_is_identity(rng):
    rgb = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
    mask, amap = _mask_and_map([])
    assert np.array_equal(render_overlay(rgb, mask, amap), rgb)


def test_overlay_full_mask_tints_everything():
    rgb = np.zeros((10, 10, 3), np.uint8)
    amap = AnomalyMap(np.full((10, 10), 3.0), np.ones((10, 10), bool))
    out = render_overlay(rgb, threshold(amap, 1.0), amap)
    assert np.all(out.any(axis=2))


def test_overlay_footprint_equals_blob(rng):
    rgb = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
    mask, amap = _mask_and_map([((10, 17, 3, 12), 3.0)])
    changed = np.any(render_overlay(rgb, mask, amap) != rgb, axis=2)
    assert changed.sum() <= 63
    assert not np.any(changed & ~mask.pixels)
    assert changed.sum() >= 60  # a pixel can blend to itself only by coincidence


def test_overlay_dimension_mismatch():
    mask, amap = _mask_and_map([])
    with pytest.raises(DimensionMismatch):
        render_overlay(np.zeros((5, 5, 3), np.uint8), mask, amap)


@settings(max_examples=30)
@given(codes)
def test_uint16_map_round_trip(c):
    amap = anomaly_map(enc(c[0]), enc(c[1]))
    back = map_from_uint16(map_to_uint16(amap))
    assert np.array_equal(back.valid, amap.valid)
    assert np.max(np.abs(back.values - amap.values)) < 1e-9


def test_write_detection_files(tmp_path):
    mask, amap = _mask_and_map([((0, 5, 0, 5), 2.0)])
    regions = summarize_regions(mask, amap, 10)
    paths = write_detection(tmp_path, "s1", amap, mask, regions, render_overlay(np.zeros((40, 40, 3), np.uint8), mask, amap))
    header = json.loads(paths["map_header"].read_text())
    q = np.array(Image.open(paths["map"]))
    assert q.dtype == np.uint16
    assert np.allclose(q * header["scale"] + header["offset"], amap.values)
    with Image.open(paths["mask"]) as im:
        assert im.mode == "1"
        assert np.array_equal(np.array(im), mask.pixels)
    assert json.loads(paths["regions"].read_text())["regions"][0]["area"] == 25
