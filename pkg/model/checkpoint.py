"""
Binary checkpoint format.

Layout:
    b"GSMO"                      magic
    1 byte                       format version (1)
    8 bytes little-endian uint   header length L
    L bytes UTF-8 JSON           kind, config, label spaces, parameter descriptors
    float32 little-endian        parameter values in descriptor order

Running batch-norm statistics are ordinary (non-trainable) parameters and are
stored like any other.
"""

import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from autodiff.tensor import DTYPE, Parameter
from core.errors import (
    CheckpointError,
    CheckpointShapeError,
    ConfigError,
    DataError,
    MagicMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from core.labels import JointLabelSpace
from core.models import HeadKind
from core.schemas import ModelConfig
from model.network import GROUP_DESCRIPTIONS, ModelParams, group_of, parameter_shapes
from utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"GSMO"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")
_LE_FLOAT32 = np.dtype("<f4")


def encode_checkpoint(params: ModelParams) -> bytes:
    header = {
        "kind": params.kind.value,
        "config": params.config.model_dump(),
        "spaces": params.spaces.to_dict(),
        "parameters": [
            {"name": name, "shape": list(p.shape), "trainable": p.trainable}
            for name, p in params.parameters.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(p.data.astype(_LE_FLOAT32).tobytes() for p in params.parameters.values())
    return MAGIC + bytes([FORMAT_VERSION]) + _LENGTH.pack(len(header_bytes)) + header_bytes + payload


def decode_checkpoint(blob: bytes) -> ModelParams:
    """Parse checkpoint bytes; every failure names the offending field."""
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise MagicMismatchError("magic", f"expected {MAGIC!r}, found {blob[:len(MAGIC)]!r}")
    offset = len(MAGIC)
    if len(blob) < offset + 1:
        raise TruncatedCheckpointError("version", "file ends before the version byte")
    version = blob[offset]
    if version != FORMAT_VERSION:
        raise VersionMismatchError("version", f"unsupported version {version}, expected {FORMAT_VERSION}")
    offset += 1
    if len(blob) < offset + _LENGTH.size:
        raise TruncatedCheckpointError("header_length", "file ends inside the header length")
    (header_length,) = _LENGTH.unpack_from(blob, offset)
    offset += _LENGTH.size
    if len(blob) < offset + header_length:
        raise TruncatedCheckpointError(
            "header", f"declares {header_length} bytes, {len(blob) - offset} available"
        )
    try:
        header = json.loads(blob[offset:offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("header", f"not valid UTF-8 JSON: {exc}") from exc
    offset += header_length

    try:
        kind = HeadKind(header["kind"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError("kind", f"unknown head kind {header.get('kind')!r}") from exc
    try:
        config = ModelConfig.model_validate(header["config"])
    except (KeyError, ValidationError) as exc:
        raise CheckpointError("config", str(exc)) from exc
    try:
        spaces = JointLabelSpace.from_dict(header["spaces"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError("spaces", str(exc)) from exc

    parameters: Dict[str, Parameter] = {}
    for descriptor in header.get("parameters", []):
        name = descriptor["name"]
        shape = tuple(int(s) for s in descriptor["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * _LE_FLOAT32.itemsize
        if len(blob) < offset + nbytes:
            raise TruncatedCheckpointError(name, f"needs {nbytes} bytes, {len(blob) - offset} available")
        values = np.frombuffer(blob, dtype=_LE_FLOAT32, count=count, offset=offset).reshape(shape)
        parameters[name] = Parameter(name, values.astype(DTYPE), trainable=bool(descriptor.get("trainable", True)))
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError("payload", f"{len(blob) - offset} trailing bytes after the last parameter")

    params = ModelParams(kind=kind, config=config, spaces=spaces, parameters=parameters)
    _check_shapes(params)
    return params


def _check_shapes(params: ModelParams):
    """Stored shapes must match what the config and label spaces imply."""
    try:
        expected = {name: shape for name, shape, _, _ in parameter_shapes(params.kind, params.config, params.spaces)}
    except ConfigError as exc:
        raise CheckpointError("config", str(exc)) from exc
    for name, shape in expected.items():
        if name not in params.parameters:
            raise CheckpointShapeError(name, f"missing from the {GROUP_DESCRIPTIONS[group_of(name)]}")
        if params.parameters[name].shape != shape:
            raise CheckpointShapeError(
                name,
                f"{GROUP_DESCRIPTIONS[group_of(name)]} stores {params.parameters[name].shape}, "
                f"config implies {shape}",
            )
    extra = sorted(set(params.parameters) - set(expected))
    if extra:
        raise CheckpointShapeError(extra[0], "not part of this model kind")


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(params))
    except OSError as exc:
        raise DataError(f"Cannot write checkpoint {path}: {exc}") from exc
    logger.info(f"Checkpoint written: {path} ({params.kind.value}, {len(params.parameters)} tensors)")
    return path


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"Cannot read checkpoint {path}: {exc}") from exc
    params = decode_checkpoint(blob)
    logger.debug(f"Loaded checkpoint {path}: {params.kind.value}")
    return params


def load_into(
    target: ModelParams,
    source: ModelParams,
    groups: Optional[Iterable[str]] = None,
) -> List[str]:
    """Copy parameter values of the named groups from source into target.

    Args:
        target: Freshly initialised model to receive values
        source: Donor model, usually from load_checkpoint
        groups: Group names; defaults to every group both models have

    Returns:
        Names of the copied parameters

    Raises:
        ConfigError: the backbone configs disagree or a group is unknown
        CheckpointShapeError: a copied tensor's shape differs (names the head)
    """
    if source.config.backbone != target.config.backbone:
        raise ConfigError(
            f"Checkpoint backbone {source.config.backbone.model_dump()} does not match "
            f"target backbone {target.config.backbone.model_dump()}"
        )
    source_groups = set(source.groups)
    target_groups = set(target.groups)
    if groups is None:
        groups = [g for g in target.groups if g in source_groups]
    groups = list(groups)
    for group in groups:
        if group not in GROUP_DESCRIPTIONS:
            raise ConfigError(f"Unknown parameter group {group!r}")
        if group not in source_groups:
            raise CheckpointError(group, f"the checkpoint ({source.kind.value}) has no {GROUP_DESCRIPTIONS[group]}")
        if group not in target_groups:
            raise ConfigError(f"Model kind {target.kind.value} has no {GROUP_DESCRIPTIONS[group]}")

    copied: List[str] = []
    for name, param in target.parameters.items():
        if group_of(name) not in groups:
            continue
        donor = source.parameters[name]
        if donor.shape != param.shape:
            raise CheckpointShapeError(
                name,
                f"{GROUP_DESCRIPTIONS[group_of(name)]} shape {donor.shape} in checkpoint, "
                f"{param.shape} in model",
            )
        param.assign(donor.data)
        copied.append(name)
    logger.info(f"Transferred groups {groups} ({len(copied)} tensors)")
    return copied


def transfer_groups(
    path: Union[str, Path],
    target: ModelParams,
    groups: Sequence[str] = ("backbone",),
) -> List[str]:
    """load_checkpoint + load_into for the named groups."""
    return load_into(target, load_checkpoint(path), groups)
