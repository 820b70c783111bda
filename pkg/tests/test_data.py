"""Manifests, image decoding, splits, batching, synthetic generation and stats."""

import math
import os
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from matplotlib.colors import rgb_to_hsv
from PIL import Image

from core.errors import ConfigError, DataError
from core.schemas import SplitSpec, SyntheticSpec
from data.dataset_loader import (
    DatasetManifest,
    ManifestEntry,
    batch_indices,
    load_manifest,
    parse_pair_directory,
)
from data.images import decode_and_resize, decode_image, resize_bilinear
from data.splits import allocate, stratified_split
from data.stats import dataset_stats
from data.synthetic import compatible_pairs, render_leaf, write_synthetic
from storage.cache import DecodeCache


def save_png(path: Path, pixels: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")
    return path


def manifest_of(keys, splits=None):
    entries = [
        ManifestEntry(Path(f"/data/{i:04d}.png"), species, disease, None if splits is None else splits[i])
        for i, (species, disease) in enumerate(keys)
    ]
    return DatasetManifest(root=Path("/data"), layout="csv", entries=entries)


# manifests

def test_pairdir_names_parse():
    assert parse_pair_directory("Tomato___Late_blight") == ("Tomato", "Late_blight")
    assert parse_pair_directory("Background_without_leaves") == ("background", "none")


def test_pairdir_layout(tmp_path):
    pixel = np.zeros((2, 2, 3), dtype=np.uint8)
    save_png(tmp_path / "Tomato___Late_blight" / "img1.png", pixel)
    save_png(tmp_path / "Apple___healthy" / "b.png", pixel)
    save_png(tmp_path / "Apple___healthy" / "a.png", pixel)
    (tmp_path / "Apple___healthy" / "notes.txt").write_text("skip me")

    manifest = load_manifest(tmp_path, "pairdir")
    assert [(e.path.name, e.species, e.disease) for e in manifest.entries] == [
        ("a.png", "Apple", "healthy"),
        ("b.png", "Apple", "healthy"),
        ("img1.png", "Tomato", "Late_blight"),
    ]
    assert load_manifest(tmp_path, "pairdir") == manifest


def test_unparseable_directory_is_named(tmp_path):
    save_png(tmp_path / "Tomato-Late_blight" / "x.png", np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(DataError, match="Tomato-Late_blight"):
        load_manifest(tmp_path, "pairdir")


def test_empty_tree_is_rejected(tmp_path):
    (tmp_path / "A___x").mkdir()
    with pytest.raises(DataError):
        load_manifest(tmp_path, "pairdir")


def test_csv_layout_sorted_by_path(tmp_path):
    pixel = np.zeros((2, 2, 3), dtype=np.uint8)
    for name in ("c.png", "a.png", "b.png"):
        save_png(tmp_path / "imgs" / name, pixel)
    (tmp_path / "manifest.csv").write_text(
        "path,species,disease\nimgs/c.png,Corn,rust\nimgs/a.png,Apple,scab\nimgs/b.png,Apple,healthy\n"
    )
    manifest = load_manifest(tmp_path, "csv")
    assert len(manifest) == 3
    assert [e.path.name for e in manifest.entries] == ["a.png", "b.png", "c.png"]
    assert manifest.entries[0].species == "Apple"
    assert not manifest.has_predefined_split


def test_csv_missing_column_is_named(tmp_path):
    (tmp_path / "manifest.csv").write_text("path,species\nx.png,A\n")
    with pytest.raises(DataError, match="disease"):
        load_manifest(tmp_path, "csv")


def test_csv_missing_file_is_rejected(tmp_path):
    (tmp_path / "manifest.csv").write_text("path,species,disease\nghost.png,A,x\n")
    with pytest.raises(DataError, match="ghost.png"):
        load_manifest(tmp_path, "csv")


# decoding

def test_uniform_gray_resizes_to_constant(tmp_path):
    path = save_png(tmp_path / "gray.png", np.full((8, 8, 3), 128, dtype=np.uint8))
    out = decode_and_resize(path, 4)
    assert out.shape == (1, 4, 4, 3)
    np.testing.assert_allclose(out.data, 128 / 255, atol=1e-6)


def test_same_size_resize_is_identity(tmp_path):
    board = np.array([[[0] * 3, [255] * 3], [[255] * 3, [0] * 3]], dtype=np.uint8)
    path = save_png(tmp_path / "board.png", board)
    np.testing.assert_array_equal(decode_and_resize(path, 2).data[0], board / np.float32(255))


def reference_bilinear(pixels, extent):
    h, w, c = pixels.shape
    out = np.zeros((extent, extent, c))

    def source(i, size_in):
        x = (i + 0.5) * size_in / extent - 0.5
        x = min(max(x, 0.0), size_in - 1)
        lo = int(math.floor(x))
        return lo, min(lo + 1, size_in - 1), x - lo

    for i in range(extent):
        y0, y1, fy = source(i, h)
        for j in range(extent):
            x0, x1, fx = source(j, w)
            top = pixels[y0, x0] * (1 - fx) + pixels[y0, x1] * fx
            bottom = pixels[y1, x0] * (1 - fx) + pixels[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bottom * fy
    return out


def test_ramp_matches_reference_bilinear(tmp_path):
    ramp = np.zeros((3, 3, 3), dtype=np.uint8)
    ramp[..., 0] = np.array([[0, 50, 100], [60, 110, 160], [120, 170, 220]])
    ramp[..., 1] = ramp[..., 0].T
    ramp[..., 2] = 255 - ramp[..., 0]
    path = save_png(tmp_path / "ramp.png", ramp)
    out = decode_and_resize(path, 5).data[0]
    np.testing.assert_allclose(out, reference_bilinear(ramp / 255.0, 5), atol=1e-5)


def test_alpha_is_discarded(tmp_path):
    rgba = np.zeros((2, 2, 4), dtype=np.uint8)
    rgba[..., 0] = 255
    rgba[..., 3] = 10
    path = save_png(tmp_path / "alpha.png", rgba)
    np.testing.assert_array_equal(decode_image(path)[..., 0], np.ones((2, 2)))
    assert decode_image(path).shape == (2, 2, 3)


def test_binary_ppm(tmp_path):
    path = tmp_path / "leaf.ppm"
    path.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    np.testing.assert_array_equal(decode_image(path), [[[1, 0, 0], [0, 0, 1]]])


def test_ascii_ppm_is_rejected(tmp_path):
    path = tmp_path / "leaf.ppm"
    path.write_bytes(b"P3\n1 1\n255\n255 0 0\n")
    with pytest.raises(DataError, match="leaf.ppm"):
        decode_image(path)


def test_corrupt_file_is_rejected_with_path(tmp_path):
    path = tmp_path / "broken.png"
    path.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
    with pytest.raises(DataError, match="broken.png"):
        decode_image(path)


def test_sixteen_bit_png_is_rejected(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.full((2, 2), 40000, dtype=np.uint16)).save(path, format="PNG")
    with pytest.raises(DataError, match="deep.png"):
        decode_image(path)


def test_resize_output_stays_in_unit_range(rng):
    out = resize_bilinear(rng.random((7, 5, 3)).astype(np.float32), 11)
    assert out.shape == (11, 11, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_decode_cache_round_trip(tmp_path):
    path = save_png(tmp_path / "gray.png", np.full((4, 4, 3), 64, dtype=np.uint8))
    cache = DecodeCache(cache_dir=tmp_path / "cache", enabled=True)
    try:
        assert cache.get(path, 2) is None
        first = decode_and_resize(path, 2, cache)
        cached = cache.get(path, 2)
        np.testing.assert_array_equal(cached, first.data[0])
        np.testing.assert_array_equal(decode_and_resize(path, 2, cache).data, first.data)
        assert cache.stats()["item_count"] == 1
    finally:
        cache.close()


def test_disabled_cache_stores_nothing(tmp_path, no_cache):
    path = save_png(tmp_path / "gray.png", np.full((4, 4, 3), 64, dtype=np.uint8))
    decode_and_resize(path, 2, no_cache)
    assert no_cache.get(path, 2) is None
    assert no_cache.stats() == {"enabled": False}


# splits

def test_allocate_largest_remainder():
    assert allocate(10, (0.7, 0.1, 0.2)) == [7, 1, 2]
    assert allocate(5, (0.7, 0.1, 0.2)) == [4, 0, 1]
    assert allocate(3, (1.0, 0.0, 0.0)) == [3, 0, 0]
    with pytest.raises(ConfigError):
        allocate(3, (1.2, -0.1, -0.1))


def test_stratified_counts_per_class():
    keys = [(f"s{c}", "healthy") for c in range(4) for _ in range(10)]
    splits = stratified_split(manifest_of(keys), SplitSpec(train=0.7, val=0.1, test=0.2, seed=9))
    assert splits.sizes == (28, 4, 8)
    for part, expected in zip((splits.train, splits.val, splits.test), (7, 1, 2)):
        assert Counter(keys[i] for i in part) == {k: expected for k in set(keys)}

    everything = np.concatenate([splits.train, splits.val, splits.test])
    assert sorted(everything.tolist()) == list(range(40))


def test_all_train_split():
    keys = [("a", "x")] * 5 + [("b", "y")] * 3
    splits = stratified_split(manifest_of(keys), SplitSpec(train=1.0, val=0.0, test=0.0))
    assert splits.sizes == (8, 0, 0)


def test_split_seed_determinism():
    keys = [(f"s{c % 3}", f"d{c % 2}") for c in range(60)]
    spec = SplitSpec(seed=4)
    first = stratified_split(manifest_of(keys), spec)
    again = stratified_split(manifest_of(keys), spec)
    other = stratified_split(manifest_of(keys), SplitSpec(seed=5))
    np.testing.assert_array_equal(first.test, again.test)
    assert first.sizes == other.sizes
    assert not np.array_equal(first.test, other.test)


def test_predefined_split_column():
    keys = [("a", "x")] * 10 + [("b", "y")] * 10
    marks = (["train"] * 8 + ["test"] * 2) * 2
    splits = stratified_split(manifest_of(keys, marks), SplitSpec(train=0.7, val=0.1, test=0.2))
    assert splits.test.tolist() == [8, 9, 18, 19]
    # val carved from the 8 listed training samples per class with ratio 0.1 / 0.8
    assert splits.sizes == (14, 2, 4)
    assert set(splits.val.tolist()).isdisjoint(splits.test.tolist())


# batches

def test_batch_sizes_and_permutation():
    batches = batch_indices(range(10), 4, epoch_seed=3)
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))
    again = batch_indices(range(10), 4, epoch_seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))


def test_batches_reject_empty_set():
    with pytest.raises(DataError):
        batch_indices([], 4, epoch_seed=0)


def test_dataset_batches_carry_labels(tiny_dataset):
    batch = next(tiny_dataset.batches(np.arange(len(tiny_dataset)), 3, epoch_seed=1))
    assert batch.images.shape == (3, tiny_dataset.extent, tiny_dataset.extent, 3)
    np.testing.assert_array_equal(batch.plants, tiny_dataset.plants[batch.indices])


# synthetic data and stats

@pytest.fixture(scope="module")
def desk_spec():
    return SyntheticSpec(species=4, diseases=3, images_per_pair=30, extent=32, seed=0)


@pytest.fixture(scope="module")
def desk_manifest(tmp_path_factory, desk_spec):
    manifest, _ = write_synthetic(desk_spec, tmp_path_factory.mktemp("desk"))
    return manifest


def test_synthetic_counts(desk_manifest):
    stats = dataset_stats(desk_manifest)
    assert stats["n"] == 360
    assert stats["num_pairs"] == 12
    assert set(stats["species"].values()) == {90}
    assert set(stats["diseases"].values()) == {120}
    assert sum(p["count"] for p in stats["pairs"]) == 360


def test_stats_match_directory_rescan(desk_manifest):
    stats = dataset_stats(desk_manifest)
    for pair in stats["pairs"]:
        directory = desk_manifest.root / f"{pair['species']}___{pair['disease']}"
        assert pair["count"] == len([f for f in os.listdir(directory) if f.endswith(".png")])


def test_single_sample_stats(tmp_path):
    save_png(tmp_path / "A___healthy" / "only.png", np.zeros((2, 2, 3), dtype=np.uint8))
    stats = dataset_stats(load_manifest(tmp_path))
    assert stats["n"] == 1
    assert stats["species"] == {"A": 1}
    assert stats["pairs"] == [{"species": "A", "disease": "healthy", "count": 1}]


def test_synthetic_is_byte_identical(tmp_path, tiny_spec):
    first, written = write_synthetic(tiny_spec, tmp_path / "one")
    second, _ = write_synthetic(tiny_spec, tmp_path / "two")
    assert written == len(first) + 1
    for a, b in zip(first.entries, second.entries):
        assert a.path.read_bytes() == b.path.read_bytes()

    _, rewritten = write_synthetic(tiny_spec, tmp_path / "one")
    assert rewritten == 0


def test_sparse_compatibility_keeps_healthy():
    spec = SyntheticSpec(species=5, diseases=4, compatibility="sparse", seed=2)
    pairs = compatible_pairs(spec)
    assert len(pairs) < 20
    assert all((k, 0) in pairs for k in range(5))
    assert {m for _, m in pairs} == set(range(4))


def test_healthy_leaves_have_no_spots(desk_spec):
    healthy = render_leaf(desk_spec, 1, 0, 0)
    spotted = render_leaf(desk_spec, 1, 2, 0)
    assert healthy.shape == (32, 32, 3) and healthy.dtype == np.uint8
    assert not np.array_equal(healthy, spotted)


def hue_histogram(path: Path, bins: int = 12) -> np.ndarray:
    pixels = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    hue = rgb_to_hsv(pixels)[..., 0].ravel()
    histogram, _ = np.histogram(hue, bins=bins, range=(0.0, 1.0))
    return histogram / histogram.sum()


def test_species_separable_by_hue_histogram(desk_manifest):
    features = np.array([hue_histogram(e.path) for e in desk_manifest.entries])
    labels = np.array([e.species for e in desk_manifest.entries])
    train = np.arange(len(labels)) % 2 == 0

    names = sorted(set(labels))
    centroids = np.array([features[train & (labels == n)].mean(axis=0) for n in names])
    distances = ((features[~train, None, :] - centroids[None]) ** 2).sum(axis=2)
    predicted = np.array(names)[distances.argmin(axis=1)]
    assert (predicted == labels[~train]).mean() > 0.9
