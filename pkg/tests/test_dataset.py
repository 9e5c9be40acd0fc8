import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facade_anomaly.codec import AlignedPair, EncodedThermal, EncodingParams, write_pair
from facade_anomaly.dataset import DatasetCatalog, augment_mirror, batches, build_catalog
from facade_anomaly.errors import EmptyDirectory, EmptySplit, ValidationFailure
from facade_anomaly.frames import WINTER4


def write_tiny_pairs(directory, n, seed=0, size=4):
    rng = np.random.default_rng(seed)
    for i in range(n):
        codes = rng.integers(0, 31, size=(size, size))
        rgb = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        write_pair(AlignedPair(f"p{i:04d}", rgb, EncodedThermal(codes, EncodingParams(-4.0)), "Winter4"), directory)


@pytest.fixture(scope="module")
def big_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("pairs998")
    write_tiny_pairs(d, 998)
    return d


def test_948_train_50_eval(big_dir):
    cat = build_catalog(big_dir, WINTER4, 50, seed=3, validate=False)
    train, ev = set(cat.scene_ids("train")), set(cat.scene_ids("eval"))
    assert (len(train), len(ev)) == (948, 50)
    assert not train & ev
    assert len(train | ev) == 998


def test_split_is_deterministic(big_dir):
    a = build_catalog(big_dir, WINTER4, 50, seed=3, validate=False)
    b = build_catalog(big_dir, WINTER4, 50, seed=3, validate=False)
    c = build_catalog(big_dir, WINTER4, 50, seed=4, validate=False)
    assert a.entries == b.entries
    assert a.entries != c.entries


def test_fraction_split(tmp_path):
    write_tiny_pairs(tmp_path, 20)
    cat = build_catalog(tmp_path, WINTER4, 0.25, seed=1)
    assert len(cat.scene_ids("eval")) == 5


def test_catalog_reload_reproduces_split(tmp_path):
    write_tiny_pairs(tmp_path / "pairs", 12)
    cat = build_catalog(tmp_path / "pairs", WINTER4, 3, seed=9, out=tmp_path / "cat" / "c.json", notes="calm")
    back = DatasetCatalog.load_file(tmp_path / "cat" / "c.json")
    assert back.entries == cat.entries
    assert back.condition == WINTER4 and back.notes == "calm" and back.seed == 9


def test_orphan_rgb_is_named(tmp_path):
    write_tiny_pairs(tmp_path, 3)
    (tmp_path / "p0001_th.png").unlink()
    with pytest.raises(ValidationFailure, match="p0001_rgb.png"):
        build_catalog(tmp_path, WINTER4, 1)


def test_empty_directory(tmp_path):
    with pytest.raises(EmptyDirectory):
        build_catalog(tmp_path, WINTER4, 1)


def test_scene_in_both_splits_rejected(tmp_path):
    with pytest.raises(ValidationFailure):
        DatasetCatalog(tmp_path, WINTER4, [("a", "train"), ("a", "eval")])


def _pair(rng, w=7):
    codes = rng.integers(0, 31, size=(5, w))
    valid = rng.random((5, w)) > 0.2
    rgb = rng.integers(0, 256, size=(5, w, 3), dtype=np.uint8)
    return AlignedPair("x", rgb, EncodedThermal(codes, valid=valid), truth=rng.random((5, w)) > 0.5)


def test_mirror_is_involution(rng):
    p = _pair(rng)
    mm = augment_mirror(augment_mirror(p))
    assert np.array_equal(mm.rgb, p.rgb)
    assert np.array_equal(mm.thermal.codes, p.thermal.codes)
    assert np.array_equal(mm.valid, p.valid)
    assert np.array_equal(mm.truth, p.truth)


def test_mirror_pixel_mapping(rng):
    p = _pair(rng)
    m = augment_mirror(p)
    w = p.rgb.shape[1]
    for y in range(5):
        for x in range(w):
            assert np.array_equal(m.rgb[y, x], p.rgb[y, w - 1 - x])
            assert m.thermal.codes[y, x] == p.thermal.codes[y, w - 1 - x]
            assert m.valid[y, x] == p.valid[y, w - 1 - x]


def test_mirror_moves_hotspot():
    codes = np.full((8, 10), 10)
    codes[4, 2] = 30
    p = AlignedPair("h", np.zeros((8, 10, 3), np.uint8), EncodedThermal(codes))
    m = augment_mirror(p)
    assert np.argwhere(m.thermal.codes == 30).tolist() == [[4, 7]]


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_mirror_preserves_code_histogram(seed):
    p = _pair(np.random.default_rng(seed))
    m = augment_mirror(p)
    assert np.array_equal(np.bincount(p.thermal.codes.ravel(), minlength=31),
                          np.bincount(m.thermal.codes.ravel(), minlength=31))


@pytest.fixture
def ten_items(tmp_path):
    write_tiny_pairs(tmp_path, 10)
    return DatasetCatalog(tmp_path, WINTER4, [(f"p{i:04d}", "train") for i in range(10)])


def test_batch_sizes(ten_items):
    sizes = [len(b) for b in batches(ten_items, "train", 3)]
    assert sizes == [3, 3, 3, 1]


def test_every_item_exactly_once(ten_items):
    seen = [s for b in batches(ten_items, "train", 3, shuffle_seed=5, augmentation_on=True) for s in b.scene_ids]
    assert sorted(seen) == ten_items.scene_ids("train")


def test_same_seed_same_order(ten_items):
    a = [(b.scene_ids, b.mirrored) for b in batches(ten_items, "train", 3, 5, True, epoch=2)]
    b = [(b.scene_ids, b.mirrored) for b in batches(ten_items, "train", 3, 5, True, epoch=2)]
    assert a == b


def test_augmentation_off_yields_stored_pairs(ten_items):
    for b in batches(ten_items, "train", 3, shuffle_seed=1, augmentation_on=False):
        assert not any(b.mirrored)
        for i, sid in enumerate(b.scene_ids):
            stored = ten_items.load(sid)
            assert np.array_equal(b.rgb[i], stored.rgb)
            assert np.array_equal(b.codes[i], stored.thermal.codes)


def test_augmentation_mirrors_about_half(tmp_path):
    write_tiny_pairs(tmp_path, 200, size=2)
    cat = DatasetCatalog(tmp_path, WINTER4, [(f"p{i:04d}", "train") for i in range(200)])
    flips = [f for b in batches(cat, "train", 8, shuffle_seed=0, augmentation_on=True) for f in b.mirrored]
    assert 70 < sum(flips) < 130


def test_empty_split(ten_items):
    with pytest.raises(EmptySplit):
        next(batches(ten_items, "eval"))
