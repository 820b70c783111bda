"""
Dataset Loader for Leaf Image Collections

Reads a dataset manifest from disk, decodes every image to the model extent
and exposes seeded mini-batch iteration.

Supported layouts:
- pairdir: one directory per joint class named "<Species>___<Disease>"
  (Plant Village convention); a directory named "background..." holds
  leaf-free images
- csv: manifest.csv with header "path,species,disease" and an optional
  "split" column (train/val/test) for datasets shipped with fixed splits
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff.tensor import DTYPE, Tensor
from core.errors import DataError, LabelMismatchError
from core.labels import CompatibilityMatrix, JointLabelSpace, build_spaces, describe_mismatch, join_many
from data.images import decode_and_resize
from storage.cache import DecodeCache, get_decode_cache
from utils.config import settings
from utils.logger import get_logger

logger = get_logger(__name__)

PAIR_SEPARATOR = "___"
MANIFEST_NAME = "manifest.csv"
IMAGE_SUFFIXES = (".png", ".ppm")
SPLIT_VALUES = ("train", "val", "test")
BACKGROUND_SPECIES = "background"
BACKGROUND_DISEASE = "none"


class ManifestEntry(NamedTuple):
    path: Path
    species: str
    disease: str
    split: Optional[str] = None


@dataclass
class DatasetManifest:
    """Ordered (path, species, disease) samples of one dataset."""

    root: Path
    layout: str
    entries: List[ManifestEntry]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def samples(self) -> List[Tuple[str, str, str]]:
        return [(str(e.path), e.species, e.disease) for e in self.entries]

    @property
    def has_predefined_split(self) -> bool:
        return any(e.split is not None for e in self.entries)


def parse_pair_directory(name: str) -> Tuple[str, str]:
    """'Tomato___Late_blight' -> ('Tomato', 'Late_blight')."""
    if PAIR_SEPARATOR in name:
        species, _, disease = name.partition(PAIR_SEPARATOR)
        if species and disease:
            return species, disease
        raise DataError(f"Cannot parse class directory {name!r}: empty species or disease")
    if name.lower().startswith(BACKGROUND_SPECIES):
        return BACKGROUND_SPECIES, BACKGROUND_DISEASE
    raise DataError(f"Cannot parse class directory {name!r}: expected '<Species>{PAIR_SEPARATOR}<Disease>'")


def _scan_pairdir(root: Path) -> List[ManifestEntry]:
    entries = []
    for directory in sorted(p for p in root.iterdir() if p.is_dir()):
        species, disease = parse_pair_directory(directory.name)
        for path in sorted(directory.rglob("*")):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                entries.append(ManifestEntry(path, species, disease))
    return entries


def _read_csv(root: Path) -> List[ManifestEntry]:
    manifest_path = root if root.is_file() else root / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"No {MANIFEST_NAME} in {root}")
    base = manifest_path.parent

    try:
        with open(manifest_path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            columns = reader.fieldnames or []
            for column in ("path", "species", "disease"):
                if column not in columns:
                    raise DataError(f"{manifest_path}: missing column {column!r}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"Cannot read {manifest_path}: {exc}") from exc

    entries = []
    for line, row in enumerate(rows, start=2):
        split = (row.get("split") or "").strip().lower() or None
        if split is not None and split not in SPLIT_VALUES:
            raise DataError(f"{manifest_path}:{line}: unknown split {row['split']!r}")
        path = Path(row["path"])
        entries.append(ManifestEntry(
            path if path.is_absolute() else base / path,
            (row["species"] or "").strip(),
            (row["disease"] or "").strip(),
            split,
        ))
    return entries


def load_manifest(root: Union[str, Path], layout: str = "pairdir") -> DatasetManifest:
    """Read a dataset tree into a manifest ordered lexicographically by path.

    Raises:
        DataError: missing root, unparseable class name, missing csv column,
            missing image file or zero entries
    """
    root = Path(root)
    if not root.exists():
        raise DataError(f"Dataset root {root} does not exist")

    if layout == "pairdir":
        entries = _scan_pairdir(root)
    elif layout == "csv":
        entries = _read_csv(root)
    else:
        raise DataError(f"Unknown dataset layout {layout!r}")

    if not entries:
        raise DataError(f"No images found under {root}")
    for entry in entries:
        if not entry.species or not entry.disease:
            raise DataError(f"{entry.path}: empty species or disease label")
        if not entry.path.is_file():
            raise DataError(f"{entry.path}: file does not exist")

    entries.sort(key=lambda e: str(e.path))
    logger.debug(f"Manifest {root} ({layout}): {len(entries)} entries")
    return DatasetManifest(root=root, layout=layout, entries=entries)


class Batch(NamedTuple):
    indices: np.ndarray
    images: Tensor
    plants: np.ndarray
    diseases: np.ndarray
    joints: np.ndarray


@dataclass
class LoadedDataset:
    """Decoded images (N x E x E x 3) aligned with label ordinals."""

    manifest: DatasetManifest
    spaces: JointLabelSpace
    compatibility: CompatibilityMatrix
    images: np.ndarray
    plants: np.ndarray
    diseases: np.ndarray
    joints: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def extent(self) -> int:
        return self.images.shape[1]

    def take(self, indices: Sequence[int]) -> Batch:
        indices = np.asarray(indices, dtype=np.int64)
        return Batch(
            indices=indices,
            images=Tensor(self.images[indices]),
            plants=self.plants[indices],
            diseases=self.diseases[indices],
            joints=self.joints[indices],
        )

    def batches(self, indices: Sequence[int], batch_size: int, epoch_seed: int) -> Iterator[Batch]:
        for chunk in batch_indices(indices, batch_size, epoch_seed):
            yield self.take(chunk)


def batch_indices(indices: Sequence[int], batch_size: int, epoch_seed: int) -> List[np.ndarray]:
    """Seeded per-epoch shuffle cut into batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise DataError("Cannot batch an empty index set")
    order = np.random.default_rng(epoch_seed).permutation(indices)
    return [order[start:start + batch_size] for start in range(0, order.size, batch_size)]


def check_spaces(manifest: DatasetManifest, expected: JointLabelSpace):
    """Raise LabelMismatchError when the manifest's labels differ from a checkpoint's."""
    species = {e.species for e in manifest.entries}
    diseases = {e.disease for e in manifest.entries}
    missing_p, extra_p = describe_mismatch(expected.plant, species)
    missing_d, extra_d = describe_mismatch(expected.disease, diseases)
    extra = extra_p + extra_d
    if not extra:
        unknown_pairs = sorted({
            f"{e.species}{PAIR_SEPARATOR}{e.disease}"
            for e in manifest.entries
            if (expected.plant.ordinal(e.species), expected.disease.ordinal(e.disease)) not in expected.pair_index
        })
        extra = unknown_pairs
    # A subset of the checkpoint's labels is fine for evaluation; unknown labels are not.
    if extra:
        raise LabelMismatchError(missing_p + missing_d, extra)


def load_dataset(
    manifest: DatasetManifest,
    extent: int,
    spaces: Optional[JointLabelSpace] = None,
    workers: Optional[int] = None,
    cache: Optional[DecodeCache] = None,
) -> LoadedDataset:
    """Decode every manifest image and attach label ordinals.

    Args:
        manifest: Samples to load
        extent: Target image extent E
        spaces: Label spaces to encode against (e.g. from a checkpoint);
            built from the manifest when omitted
        workers: Decode threads (settings.decode_workers by default)
        cache: Decode cache (the global one by default)
    """
    if spaces is None:
        spaces, compatibility = build_spaces(manifest.samples)
    else:
        check_spaces(manifest, spaces)
        matrix = np.zeros((len(spaces.plant), len(spaces.disease)), dtype=bool)
        for p, d in spaces.pairs:
            matrix[p, d] = True
        compatibility = CompatibilityMatrix(matrix)

    cache = cache if cache is not None else get_decode_cache()
    workers = max(1, workers or settings.decode_workers)
    paths = [e.path for e in manifest.entries]

    images = np.empty((len(paths), extent, extent, 3), dtype=DTYPE)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves manifest order regardless of completion order
        for i, tensor in enumerate(pool.map(lambda p: decode_and_resize(p, extent, cache), paths)):
            images[i] = tensor.data[0]

    plants = np.array([spaces.plant.ordinal(e.species) for e in manifest.entries], dtype=np.int64)
    diseases = np.array([spaces.disease.ordinal(e.disease) for e in manifest.entries], dtype=np.int64)
    joints = join_many(plants, diseases, spaces)

    logger.info(
        f"Dataset loaded: {len(paths)} images, {len(spaces.plant)} species, "
        f"{len(spaces.disease)} diseases, {len(spaces)} pairs (E={extent})"
    )
    return LoadedDataset(
        manifest=manifest,
        spaces=spaces,
        compatibility=compatibility,
        images=images,
        plants=plants,
        diseases=diseases,
        joints=joints,
    )
