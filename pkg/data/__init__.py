"""
Data Module for Leaf Image Datasets

Manifest loading, image decoding, stratified splits, synthetic data
generation and dataset statistics.
"""

from data.dataset_loader import (
    Batch,
    DatasetManifest,
    LoadedDataset,
    ManifestEntry,
    batch_indices,
    load_dataset,
    load_manifest,
)
from data.images import decode_and_resize
from data.splits import DatasetSplits, stratified_split
from data.stats import dataset_stats
from data.synthetic import generate_synthetic

__all__ = [
    "Batch",
    "DatasetManifest",
    "DatasetSplits",
    "LoadedDataset",
    "ManifestEntry",
    "batch_indices",
    "dataset_stats",
    "decode_and_resize",
    "generate_synthetic",
    "load_dataset",
    "load_manifest",
    "stratified_split",
]
