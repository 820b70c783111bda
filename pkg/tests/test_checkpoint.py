"""Checkpoint encoding, validation and backbone transfer."""

import struct

import numpy as np
import pytest

from autodiff.tensor import Tensor
from core.errors import (
    CheckpointError,
    CheckpointShapeError,
    ConfigError,
    MagicMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from core.labels import build_spaces
from core.models import HeadKind
from core.schemas import BackboneConfig, ModelConfig
from model.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    load_into,
    save_checkpoint,
    transfer_groups,
)
from model.network import forward_backbone, forward_gsmo, init_model, predict


def test_round_trip_reproduces_forward(gsmo_model, tiny_dataset, tmp_path):
    path = save_checkpoint(gsmo_model, tmp_path / "gsmo.ckpt")
    restored = load_checkpoint(path)

    assert restored.kind == HeadKind.GSMO
    assert restored.config == gsmo_model.config
    assert restored.spaces == gsmo_model.spaces
    assert list(restored.parameters) == list(gsmo_model.parameters)

    images = Tensor(tiny_dataset.images)
    before, after = forward_gsmo(gsmo_model, images), forward_gsmo(restored, images)
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a.data, b.data)


def test_running_statistics_survive(gsmo_model, tiny_dataset):
    forward_gsmo(gsmo_model, Tensor(tiny_dataset.images), training=True)
    restored = decode_checkpoint(encode_checkpoint(gsmo_model))
    np.testing.assert_array_equal(
        restored["backbone.bn3.running_var"].data, gsmo_model["backbone.bn3.running_var"].data
    )
    assert not restored["backbone.bn3.running_var"].trainable


def test_layout_prefix(gsmo_model):
    blob = encode_checkpoint(gsmo_model)
    assert blob[:4] == MAGIC
    assert blob[4] == 1
    (header_length,) = struct.unpack_from("<Q", blob, 5)
    payload = len(blob) - 13 - header_length
    assert payload == 4 * sum(p.size for p in gsmo_model.parameters.values())


def test_bad_magic(gsmo_model):
    blob = encode_checkpoint(gsmo_model)
    with pytest.raises(MagicMismatchError, match="magic"):
        decode_checkpoint(b"XXXX" + blob[4:])


def test_unknown_version(gsmo_model):
    blob = bytearray(encode_checkpoint(gsmo_model))
    blob[4] = 2
    with pytest.raises(VersionMismatchError, match="version"):
        decode_checkpoint(bytes(blob))


def test_truncated_payload_names_the_tensor(gsmo_model):
    blob = encode_checkpoint(gsmo_model)
    with pytest.raises(TruncatedCheckpointError, match="disease_head2.bias"):
        decode_checkpoint(blob[:-1])


def test_truncated_header(gsmo_model):
    blob = encode_checkpoint(gsmo_model)
    with pytest.raises(TruncatedCheckpointError, match="header"):
        decode_checkpoint(blob[:20])


def test_trailing_bytes(gsmo_model):
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(encode_checkpoint(gsmo_model) + b"\x00\x00\x00\x00")


def test_checkpoint_errors_exit_with_data_code():
    assert CheckpointError("x", "y").exit_code == 3


def wider_disease_space(spaces):
    samples = [
        (f"{i}.png", spaces.plant.names[p], spaces.disease.names[d])
        for i, (p, d) in enumerate(spaces.pairs)
    ]
    samples.append(("extra.png", spaces.plant.names[0], "zz_extra"))
    wider, _ = build_spaces(samples)
    return wider


def test_disease_count_mismatch_names_the_head(gsmo_model, tiny_model_config):
    target = init_model(HeadKind.GSMO, tiny_model_config, wider_disease_space(gsmo_model.spaces), seed=0)
    with pytest.raises(CheckpointShapeError, match="disease"):
        load_into(target, gsmo_model, ["disease_branch"])
    with pytest.raises(CheckpointShapeError, match="stage-2 disease head"):
        load_into(target, gsmo_model, ["disease_head2"])


def test_backbone_transfer_reproduces_features(gsmo_model, tiny_dataset, tiny_model_config, tmp_path):
    path = save_checkpoint(gsmo_model, tmp_path / "donor.ckpt")
    target = init_model(HeadKind.GSMO, tiny_model_config, wider_disease_space(gsmo_model.spaces), seed=99)

    copied = transfer_groups(path, target)
    assert copied and all(name.startswith("backbone.") for name in copied)

    images = Tensor(tiny_dataset.images[:4])
    np.testing.assert_array_equal(
        forward_backbone(target, images).data, forward_backbone(gsmo_model, images).data
    )
    assert not np.array_equal(target["plant_branch.out.weight"].data, gsmo_model["plant_branch.out.weight"].data)


def test_transfer_rejects_different_backbone(gsmo_model, tiny_dataset):
    other = ModelConfig(backbone=BackboneConfig(extent=16, channels=[8, 8, 8, 8], kernel=3), branch_width=8)
    target = init_model(HeadKind.GSMO, other, tiny_dataset.spaces, seed=0)
    with pytest.raises(ConfigError, match="backbone"):
        load_into(target, gsmo_model, ["backbone"])


def test_transfer_from_a_kind_without_the_group(tiny_dataset, tiny_model_config, gsmo_model):
    single = init_model(HeadKind.SINGLE_PLANT, tiny_model_config, tiny_dataset.spaces, seed=0)
    with pytest.raises(CheckpointError, match="stage-1 disease head"):
        load_into(gsmo_model, single, ["disease_branch"])


def test_single_target_kinds_round_trip(tiny_dataset, tiny_model_config):
    for kind in (HeadKind.SINGLE_PLANT, HeadKind.SINGLE_DISEASE, HeadKind.POWERSET, HeadKind.MULTI_OUTPUT):
        model = init_model(kind, tiny_model_config, tiny_dataset.spaces, seed=2)
        restored = decode_checkpoint(encode_checkpoint(model))
        first, second = predict(model, tiny_dataset.images), predict(restored, tiny_dataset.images)
        np.testing.assert_array_equal(first.plant, second.plant)
        np.testing.assert_array_equal(first.disease, second.disease)
