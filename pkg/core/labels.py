"""Species and disease label spaces and the power-set joint encoding."""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from autodiff.tensor import DTYPE, Tensor
from core.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)

UNKNOWN = -1
"""Joint ordinal for a (plant, disease) pair that never occurs in the manifest."""


@dataclass(frozen=True)
class LabelSpace:
    """Ordered, duplicate-free label names with their ordinal index."""

    names: Tuple[str, ...]
    index: Dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"Duplicate label names in {self.names}")
        object.__setattr__(self, "index", {name: i for i, name in enumerate(self.names)})

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "LabelSpace":
        """Build a lexicographically ordered space from any collection of names."""
        return cls(tuple(sorted(set(names))))

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def ordinal(self, name: str) -> int:
        return self.index[name]

    def name(self, ordinal: int) -> str:
        if not 0 <= ordinal < len(self.names):
            raise IndexError(f"Ordinal {ordinal} out of range for {len(self.names)} labels")
        return self.names[ordinal]


@dataclass(frozen=True)
class JointLabelSpace:
    """Plant and disease spaces plus the observed (plant, disease) pairs."""

    plant: LabelSpace
    disease: LabelSpace
    pairs: Tuple[Tuple[int, int], ...]
    pair_index: Dict[Tuple[int, int], int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if len(self.pairs) > len(self.plant) * len(self.disease):
            raise ValueError("More joint pairs than |plants| x |diseases|")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("Duplicate joint pairs")
        object.__setattr__(self, "pair_index", {pair: j for j, pair in enumerate(self.pairs)})

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_name(self, joint: int, separator: str = " ") -> str:
        p, d = split(joint, self)
        return f"{self.plant.names[p]}{separator}{self.disease.names[d]}"

    def to_dict(self) -> Dict:
        """Serializable form (checkpoint headers, stats reports)."""
        return {
            "plants": list(self.plant.names),
            "diseases": list(self.disease.names),
            "pairs": [[p, d] for p, d in self.pairs],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "JointLabelSpace":
        return cls(
            plant=LabelSpace(tuple(data["plants"])),
            disease=LabelSpace(tuple(data["diseases"])),
            pairs=tuple((int(p), int(d)) for p, d in data["pairs"]),
        )


@dataclass(frozen=True)
class CompatibilityMatrix:
    """Boolean |plants| x |diseases| matrix; True where the pair occurs in the manifest."""

    matrix: np.ndarray

    @property
    def true_count(self) -> int:
        return int(self.matrix.sum())

    def to_dict(self, space: JointLabelSpace) -> Dict:
        return {
            "plants": list(space.plant.names),
            "diseases": list(space.disease.names),
            "matrix": self.matrix.astype(int).tolist(),
        }


def build_spaces(samples: Sequence[Tuple[str, str, str]]) -> Tuple[JointLabelSpace, CompatibilityMatrix]:
    """Build the label spaces from manifest entries.

    Args:
        samples: (path, species, disease) triples, e.g. DatasetManifest.entries

    Returns:
        (JointLabelSpace, CompatibilityMatrix), both ordered lexicographically
    """
    if not samples:
        raise DataError("Cannot build label spaces from an empty manifest")

    for path, species, disease in samples:
        if not species or not disease:
            raise DataError(f"Sample {path} has an empty species or disease label")

    plant = LabelSpace.from_names(species for _, species, _ in samples)
    disease = LabelSpace.from_names(d for _, _, d in samples)
    observed = sorted({(plant.index[s], disease.index[d]) for _, s, d in samples})

    space = JointLabelSpace(plant=plant, disease=disease, pairs=tuple(observed))
    matrix = np.zeros((len(plant), len(disease)), dtype=bool)
    for p, d in observed:
        matrix[p, d] = True

    logger.debug(
        f"Built label spaces: {len(plant)} plants, {len(disease)} diseases, {len(observed)} pairs"
    )
    return space, CompatibilityMatrix(matrix)


def join(p: int, d: int, space: JointLabelSpace) -> int:
    """Joint ordinal of (p, d), or UNKNOWN when the pair was never observed."""
    if not 0 <= p < len(space.plant):
        raise IndexError(f"Plant ordinal {p} out of range for {len(space.plant)} plants")
    if not 0 <= d < len(space.disease):
        raise IndexError(f"Disease ordinal {d} out of range for {len(space.disease)} diseases")
    return space.pair_index.get((p, d), UNKNOWN)


def split(j: int, space: JointLabelSpace) -> Tuple[int, int]:
    """(plant, disease) ordinals of a joint ordinal."""
    if not 0 <= j < len(space.pairs):
        raise IndexError(f"Joint ordinal {j} out of range for {len(space.pairs)} pairs")
    return space.pairs[j]


def join_many(plants: np.ndarray, diseases: np.ndarray, space: JointLabelSpace) -> np.ndarray:
    """Vectorised join over aligned ordinal arrays."""
    return np.array([join(int(p), int(d), space) for p, d in zip(plants, diseases)], dtype=np.int64)


def split_many(joints: np.ndarray, space: JointLabelSpace) -> Tuple[np.ndarray, np.ndarray]:
    pairs = np.array([split(int(j), space) for j in joints], dtype=np.int64).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1]


def one_hot(ordinal: int, size: int) -> Tensor:
    """1 x size tensor with a single 1.0 at the ordinal."""
    if not 0 <= ordinal < size:
        raise IndexError(f"Ordinal {ordinal} out of range for size {size}")
    row = np.zeros((1, size), dtype=DTYPE)
    row[0, ordinal] = 1.0
    return Tensor(row)


def describe_mismatch(
    expected: LabelSpace,
    observed: Iterable[str],
) -> Tuple[List[str], List[str]]:
    """Labels of `expected` absent from `observed`, and labels of `observed` unknown to `expected`."""
    observed_set = set(observed)
    missing = [name for name in expected.names if name not in observed_set]
    extra = sorted(name for name in observed_set if name not in expected)
    return missing, extra
