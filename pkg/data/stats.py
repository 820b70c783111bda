"""Class-distribution statistics of a dataset manifest."""

import json
from collections import Counter
from pathlib import Path
from typing import Dict, Union

from core.errors import DataError
from core.labels import build_spaces
from data.dataset_loader import DatasetManifest


def dataset_stats(manifest: DatasetManifest) -> Dict:
    """Per-species, per-disease and per-pair counts plus the compatibility matrix."""
    space, compatibility = build_spaces(manifest.samples)
    species = Counter(e.species for e in manifest.entries)
    diseases = Counter(e.disease for e in manifest.entries)
    pairs = Counter((e.species, e.disease) for e in manifest.entries)

    return {
        "n": len(manifest),
        "num_species": len(space.plant),
        "num_diseases": len(space.disease),
        "num_pairs": len(space),
        "species": {name: species[name] for name in space.plant.names},
        "diseases": {name: diseases[name] for name in space.disease.names},
        "pairs": [
            {"species": space.plant.names[p], "disease": space.disease.names[d],
             "count": pairs[(space.plant.names[p], space.disease.names[d])]}
            for p, d in space.pairs
        ],
        "compatibility": compatibility.to_dict(space),
    }


def write_stats(stats: Dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"Cannot write stats to {path}: {exc}") from exc
    return path
