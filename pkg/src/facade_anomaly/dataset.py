"""Condition-tagged catalogs of aligned pairs, splits and batching.

A catalog is a JSON file::

    {
      "format": "facade-anomaly-catalog/1",
      "pair_dir": "<directory holding the pair files, relative to the catalog>",
      "condition": {"name": "Winter4", "t_out": -4.0},
      "seed": 7,
      "notes": "",
      "entries": [{"scene_id": "...", "split": "train"}, ...]
    }

Entries are sorted by scene id so the file diffs cleanly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .codec import PAIR_SUFFIXES, AlignedPair, read_pair
from .errors import CodecError, EmptyDirectory, EmptySplit, ValidationFailure
from .frames import ConditionTag

CATALOG_FORMAT = "facade-anomaly-catalog/1"
SPLITS = ("train", "eval")


@dataclass
class DatasetCatalog:
    pair_dir: Path
    condition: ConditionTag
    entries: list  # [(scene_id, split)]
    seed: Optional[int] = None
    notes: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.pair_dir = Path(self.pair_dir)
        self.entries = sorted((str(s), str(sp)) for s, sp in self.entries)
        seen = {}
        for scene_id, split in self.entries:
            if split not in SPLITS:
                raise ValidationFailure(f"unknown split {split!r} for {scene_id}")
            if seen.setdefault(scene_id, split) != split:
                raise ValidationFailure(f"scene {scene_id} appears in both splits")

    def scene_ids(self, split: str) -> list:
        return [s for s, sp in self.entries if sp == split]

    def load(self, scene_id: str) -> AlignedPair:
        if scene_id not in self._cache:
            self._cache[scene_id] = read_pair(self.pair_dir, scene_id)
        return self._cache[scene_id]

    def pairs(self, split: str) -> list:
        return [self.load(s) for s in self.scene_ids(split)]

    def validate(self) -> None:
        """Load every referenced pair; collect all failures into one error."""
        problems = []
        for scene_id, _ in self.entries:
            try:
                self.load(scene_id)
            except (CodecError, OSError, ValueError) as exc:
                problems.append(f"{scene_id}: {exc}")
        if problems:
            raise ValidationFailure("; ".join(problems))

    def to_dict(self, relative_to: Optional[Path] = None) -> dict:
        pair_dir = self.pair_dir
        if relative_to is not None:
            pair_dir = Path(os.path.relpath(self.pair_dir.resolve(), Path(relative_to).resolve()))
        return {
            "format": CATALOG_FORMAT,
            "pair_dir": pair_dir.as_posix(),
            "condition": self.condition.to_dict(),
            "seed": self.seed,
            "notes": self.notes,
            "entries": [{"scene_id": s, "split": sp} for s, sp in self.entries],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(relative_to=path.parent), indent=2) + "\n")
        return path

    @classmethod
    def load_file(cls, path, validate: bool = True) -> "DatasetCatalog":
        path = Path(path)
        d = json.loads(path.read_text())
        if d.get("format") != CATALOG_FORMAT:
            raise ValidationFailure(f"{path}: not a catalog file (format={d.get('format')!r})")
        pair_dir = Path(d["pair_dir"])
        if not pair_dir.is_absolute():
            pair_dir = path.parent / pair_dir
        cat = cls(
            pair_dir=pair_dir,
            condition=ConditionTag.from_dict(d["condition"]),
            entries=[(e["scene_id"], e["split"]) for e in d["entries"]],
            seed=d.get("seed"),
            notes=d.get("notes", ""),
        )
        if validate:
            cat.validate()
        return cat


def scan_pair_dir(pair_dir) -> list:
    """Scene ids with a complete (rgb, thermal, meta) file set.

    Raises ``ValidationFailure`` naming every file that has no mate.
    """
    pair_dir = Path(pair_dir)
    if not pair_dir.is_dir():
        raise EmptyDirectory(f"{pair_dir} is not a directory")
    members: dict = {}
    for p in pair_dir.iterdir():
        for kind, suffix in PAIR_SUFFIXES.items():
            if p.name.endswith(suffix):
                members.setdefault(p.name[: -len(suffix)], {})[kind] = p
    if not members:
        raise EmptyDirectory(f"no pair files in {pair_dir}")
    orphans = []
    complete = []
    for scene_id, kinds in sorted(members.items()):
        if {"rgb", "thermal", "meta"} <= kinds.keys():
            complete.append(scene_id)
        else:
            orphans.extend(sorted(p.name for p in kinds.values()))
    if orphans:
        raise ValidationFailure(f"files without a complete pair: {', '.join(orphans)}")
    return complete


def build_catalog(
    pair_dir,
    condition: ConditionTag,
    eval_fraction: Union[float, int] = 0.05,
    seed: int = 0,
    out: Optional[Path] = None,
    notes: str = "",
    validate: bool = True,
) -> DatasetCatalog:
    """Randomly split the pairs in ``pair_dir`` into train and eval.

    ``eval_fraction`` is either a fraction in (0, 1) or an absolute count
    (an ``int`` >= 1). The split depends only on the sorted scene ids and
    ``seed``.
    """
    scenes = scan_pair_dir(pair_dir)
    n = len(scenes)
    if isinstance(eval_fraction, (int, np.integer)) and not isinstance(eval_fraction, bool):
        n_eval = int(eval_fraction)
    elif 0.0 < float(eval_fraction) < 1.0:
        n_eval = int(round(float(eval_fraction) * n))
    else:
        raise ValueError(f"eval_fraction must be in (0, 1) or a count, got {eval_fraction}")
    if not 0 <= n_eval <= n:
        raise ValueError(f"cannot hold out {n_eval} of {n} pairs")
    order = np.random.default_rng(seed).permutation(n)
    eval_set = {scenes[i] for i in order[:n_eval]}
    entries = [(s, "eval" if s in eval_set else "train") for s in scenes]
    cat = DatasetCatalog(pair_dir=Path(pair_dir), condition=condition, entries=entries, seed=seed, notes=notes)
    if validate:
        cat.validate()
    if out is not None:
        cat.save(out)
    return cat


def augment_mirror(pair: AlignedPair) -> AlignedPair:
    """Flip RGB, thermal codes, validity and truth about the vertical axis."""
    return pair.mirrored()


@dataclass
class Batch:
    scene_ids: list
    rgb: np.ndarray  # (B, H, W, 3) uint8
    codes: np.ndarray  # (B, H, W) int16
    valid: np.ndarray  # (B, H, W) bool
    mirrored: list

    def __len__(self):
        return len(self.scene_ids)


def batches(
    catalog: DatasetCatalog,
    split: str,
    batch_size: int = 3,
    shuffle_seed: Optional[int] = 0,
    augmentation_on: bool = False,
    epoch: int = 0,
) -> Iterator[Batch]:
    """One epoch of batches over ``split``.

    Every item is delivered exactly once; the last batch may be short. With
    ``shuffle_seed=None`` the catalog order is kept. The order and the
    mirroring draws depend only on ``(shuffle_seed, epoch)``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    ids = catalog.scene_ids(split)
    if not ids:
        raise EmptySplit(f"split {split!r} of catalog {catalog.condition.name} is empty")
    if shuffle_seed is None:
        order = np.arange(len(ids))
        flips = np.zeros(len(ids), dtype=bool)
    else:
        rng = np.random.default_rng([shuffle_seed, epoch])
        order = rng.permutation(len(ids))
        flips = rng.random(len(ids)) < 0.5
    if not augmentation_on:
        flips[:] = False
    for start in range(0, len(ids), batch_size):
        idx = order[start:start + batch_size]
        pairs = []
        for i in idx:
            p = catalog.load(ids[i])
            pairs.append(augment_mirror(p) if flips[i] else p)
        yield Batch(
            scene_ids=[p.scene_id for p in pairs],
            rgb=np.stack([p.rgb for p in pairs]),
            codes=np.stack([p.thermal.codes for p in pairs]),
            valid=np.stack([p.thermal.valid for p in pairs]),
            mirrored=[bool(flips[i]) for i in idx],
        )
