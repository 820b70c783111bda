"""
Deterministic synthetic leaf images.

Species k fixes the leaf hue and silhouette (ellipse eccentricity grows with
k); disease m fixes an overlay of dark spots whose count and radius grow with
m, with m = 0 ("healthy") drawing none. Each image gets its own seeded
rotation, position and brightness jitter.
"""

import csv
import io
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from core.errors import DataError
from core.schemas import SyntheticSpec
from data.dataset_loader import MANIFEST_NAME, PAIR_SEPARATOR, DatasetManifest, load_manifest
from utils.logger import get_logger

logger = get_logger(__name__)

HEALTHY = "healthy"
_SOIL = np.array([0.30, 0.25, 0.20])
_SPOT_HSV = (0.08, 0.75, 0.30)


def species_names(count: int) -> List[str]:
    return [f"species{k:02d}" for k in range(count)]


def disease_names(count: int) -> List[str]:
    return [HEALTHY] + [f"disease{m:02d}" for m in range(1, count)]


def compatible_pairs(spec: SyntheticSpec) -> List[Tuple[int, int]]:
    """(species, disease) index pairs to generate.

    The sparse rule keeps each diseased pair with probability spec.sparse_keep;
    healthy is always kept and every disease stays attached to at least one
    species.
    """
    pairs = [(k, m) for k in range(spec.species) for m in range(spec.diseases)]
    if spec.compatibility == "full":
        return pairs

    rng = np.random.default_rng([spec.seed, 1])
    keep = rng.random((spec.species, spec.diseases)) < spec.sparse_keep
    keep[:, 0] = True
    for m in range(1, spec.diseases):
        if not keep[:, m].any():
            keep[m % spec.species, m] = True
    return [(k, m) for k, m in pairs if keep[k, m]]


def render_leaf(spec: SyntheticSpec, species: int, disease: int, index: int) -> np.ndarray:
    """One E x E x 3 uint8 image."""
    e = spec.extent
    rng = np.random.default_rng([spec.seed, species, disease, index])

    angle = rng.uniform(0.0, np.pi)
    brightness = rng.uniform(0.85, 1.15)
    cx, cy = (e - 1) / 2 + rng.uniform(-0.06, 0.06, size=2) * e

    a = 0.42 * e
    b = a * (0.85 - 0.5 * species / max(spec.species, 1))
    cos, sin = np.cos(angle), np.sin(angle)

    yy, xx = np.mgrid[0:e, 0:e].astype(np.float64)
    u = (xx - cx) * cos + (yy - cy) * sin
    v = -(xx - cx) * sin + (yy - cy) * cos
    leaf = (u / a) ** 2 + (v / b) ** 2 <= 1.0

    hue = species / max(spec.species, 1)
    leaf_rgb = hsv_to_rgb([hue, 0.65, 0.75])
    shade = 0.9 + 0.1 * np.clip(u / a, -1.0, 1.0)

    image = np.empty((e, e, 3))
    image[:] = _SOIL
    image[leaf] = leaf_rgb * shade[leaf][:, None]

    if disease > 0:
        count = 1 + 2 * disease
        radius = (0.04 + 0.025 * disease) * e
        spot_rgb = hsv_to_rgb(_SPOT_HSV)
        for i in range(count):
            phi = 2 * np.pi * i / count + 0.3 * disease
            su, sv = 0.55 * a * np.cos(phi), 0.55 * b * np.sin(phi)
            sx = cx + su * cos - sv * sin
            sy = cy + su * sin + sv * cos
            spot = leaf & ((xx - sx) ** 2 + (yy - sy) ** 2 <= radius ** 2)
            image[spot] = spot_rgb

    image = image * brightness + rng.normal(0.0, 0.015, size=image.shape)
    return np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)


def _png_bytes(pixels: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PNG")
    return buffer.getvalue()


def _write_if_changed(path: Path, data: bytes) -> bool:
    if path.exists() and path.read_bytes() == data:
        return False
    path.write_bytes(data)
    return True


def write_synthetic(spec: SyntheticSpec, out_dir: Union[str, Path]) -> Tuple[DatasetManifest, int]:
    """Generate the dataset; returns the manifest and the number of files (re)written.

    Files whose bytes are already identical are left untouched, so a rerun
    of the same spec writes nothing.
    """
    out_dir = Path(out_dir)
    plants = species_names(spec.species)
    diseases = disease_names(spec.diseases)
    written = 0
    rows = []

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, m in compatible_pairs(spec):
            directory = out_dir / f"{plants[k]}{PAIR_SEPARATOR}{diseases[m]}"
            directory.mkdir(exist_ok=True)
            for i in range(spec.images_per_pair):
                path = directory / f"img{i:04d}.png"
                written += _write_if_changed(path, _png_bytes(render_leaf(spec, k, m, i)))
                rows.append((path.relative_to(out_dir).as_posix(), plants[k], diseases[m]))

        text = io.StringIO()
        writer = csv.writer(text, lineterminator="\n")
        writer.writerow(["path", "species", "disease"])
        writer.writerows(sorted(rows))
        written += _write_if_changed(out_dir / MANIFEST_NAME, text.getvalue().encode("utf-8"))
    except OSError as exc:
        raise DataError(f"Cannot write synthetic dataset to {out_dir}: {exc}") from exc

    manifest = load_manifest(out_dir, "pairdir")
    logger.info(f"Synthetic dataset at {out_dir}: {len(manifest)} images, {written} files written")
    return manifest, written


def generate_synthetic(spec: SyntheticSpec, out_dir: Union[str, Path]) -> DatasetManifest:
    manifest, _ = write_synthetic(spec, out_dir)
    return manifest
