"""Stratified train/validation/test splitting by joint (species, disease) class."""

import math
from dataclasses import dataclass
from typing import Dict, Hashable, List, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, DataError
from core.schemas import SplitSpec
from data.dataset_loader import DatasetManifest
from utils.logger import get_logger

logger = get_logger(__name__)

_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class DatasetSplits:
    """Disjoint, sorted index sets over one manifest."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def to_dict(self) -> Dict:
        return {"train": self.train.tolist(), "val": self.val.tolist(), "test": self.test.tolist()}


def allocate(n: int, ratios: Sequence[float]) -> List[int]:
    """Split n items by ratios with largest-remainder rounding.

    Remainder ties go to the earlier set, so train wins over val and test.
    """
    if any(r < 0 for r in ratios):
        raise ConfigError(f"Split ratios must be non-negative, got {list(ratios)}")
    total = sum(ratios)
    if total <= 0:
        raise ConfigError("Split ratios sum to zero")
    exact = [n * r / total for r in ratios]
    counts = [math.floor(x + _FLOOR_SLACK) for x in exact]
    remainders = [x - c for x, c in zip(exact, counts)]
    leftover = n - sum(counts)
    for i in sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))[:leftover]:
        counts[i] += 1
    return counts


def split_by_class(
    keys: Sequence[Hashable],
    ratios: Sequence[float],
    seed: int,
) -> List[np.ndarray]:
    """Per-class seeded shuffle then allocation; returns one sorted index array per ratio."""
    groups: Dict[Hashable, List[int]] = {}
    for index, key in enumerate(keys):
        groups.setdefault(key, []).append(index)

    rng = np.random.default_rng(seed)
    parts: List[List[int]] = [[] for _ in ratios]
    for key in sorted(groups):
        members = rng.permutation(np.asarray(groups[key], dtype=np.int64))
        start = 0
        for part, count in zip(parts, allocate(len(members), ratios)):
            part.extend(members[start:start + count].tolist())
            start += count
    return [np.array(sorted(part), dtype=np.int64) for part in parts]


def stratified_split(manifest: DatasetManifest, spec: SplitSpec) -> DatasetSplits:
    """Stratified 3-way split of a manifest.

    When the manifest carries its own split column the test set (and the val
    set, if listed) is taken as given and validation is carved from train with
    the val ratio renormalized against train + val.
    """
    if len(manifest) == 0:
        raise DataError("Cannot split an empty manifest")
    keys = [(e.species, e.disease) for e in manifest.entries]

    if not manifest.has_predefined_split:
        train, val, test = split_by_class(keys, spec.ratios, spec.seed)
    else:
        marked = np.array([e.split or "train" for e in manifest.entries])
        test = np.flatnonzero(marked == "test")
        listed_val = np.flatnonzero(marked == "val")
        pool = np.flatnonzero(marked == "train")
        if listed_val.size:
            train, val = pool, listed_val
        elif spec.train + spec.val > 0:
            pool_train, pool_val = split_by_class([keys[i] for i in pool], (spec.train, spec.val), spec.seed)
            train, val = pool[pool_train], pool[pool_val]
        else:
            train, val = pool, np.zeros(0, dtype=np.int64)
        train, val, test = (np.sort(a).astype(np.int64) for a in (train, val, test))

    splits = DatasetSplits(train=train, val=val, test=test)
    logger.info(f"Split sizes train/val/test: {splits.sizes[0]}/{splits.sizes[1]}/{splits.sizes[2]}")
    return splits
