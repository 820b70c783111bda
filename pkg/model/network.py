"""
Custom CNN backbone and the prediction-head paradigms.

Parameter names are "<group>.<layer>.<role>", and the groups are shared across
head kinds: a multi-output model's parameters are exactly the stage-1 subset of
a GSMo model, and single-target models reuse the matching branch. Parameters
are drawn in a fixed order from one seeded generator. Every kind built from a
given seed has the same backbone values; multi-output and GSMo models also
agree on both branches, and a single-plant model on the plant branch. A
single-disease model draws its disease branch right after the backbone, so
that branch differs from the multi-output one.
"""

import copy
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff import ops
from autodiff.tensor import DTYPE, Parameter, Tensor
from core.errors import ConfigError, ShapeError
from core.labels import JointLabelSpace, split_many
from core.models import HeadKind
from core.schemas import ModelConfig
from utils.logger import get_logger

logger = get_logger(__name__)

PARAMETER_GROUPS = (
    "backbone",
    "plant_branch",
    "disease_branch",
    "joint_branch",
    "plant_head2",
    "disease_head2",
)

GROUP_DESCRIPTIONS = {
    "backbone": "backbone",
    "plant_branch": "stage-1 plant head",
    "disease_branch": "stage-1 disease head",
    "joint_branch": "power-set head",
    "plant_head2": "stage-2 plant head",
    "disease_head2": "stage-2 disease head",
}


class GsmoOutputs(NamedTuple):
    """Stage-1 (temporary) and stage-2 probabilities."""

    p_temp: Tensor
    d_temp: Tensor
    p2: Tensor
    d2: Tensor


@dataclass
class ModelParams:
    """Named parameters of one network plus the config and label spaces it was built for."""

    kind: HeadKind
    config: ModelConfig
    spaces: JointLabelSpace
    parameters: Dict[str, Parameter]

    def __getitem__(self, name: str) -> Parameter:
        return self.parameters[name]

    @property
    def groups(self) -> List[str]:
        seen: List[str] = []
        for name in self.parameters:
            group = group_of(name)
            if group not in seen:
                seen.append(group)
        return seen

    def group(self, group: str) -> List[Parameter]:
        return [p for name, p in self.parameters.items() if group_of(name) == group]

    def trainable(self, frozen: Iterable[str] = ()) -> List[Parameter]:
        frozen = set(frozen)
        return [
            p for name, p in self.parameters.items()
            if p.trainable and group_of(name) not in frozen
        ]

    def state(self) -> Dict[str, np.ndarray]:
        """Snapshot of every parameter value, running statistics included."""
        return {name: p.data.copy() for name, p in self.parameters.items()}

    def load_state(self, state: Dict[str, np.ndarray]):
        for name, value in state.items():
            self.parameters[name].assign(value)

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


@dataclass
class MultiModel:
    """Two independent single-target networks evaluated together."""

    plant: ModelParams
    disease: ModelParams

    @property
    def spaces(self) -> JointLabelSpace:
        return self.plant.spaces


def group_of(name: str) -> str:
    return name.split(".", 1)[0]


def output_widths(kind: HeadKind, spaces: JointLabelSpace) -> Dict[str, int]:
    """Output units per branch group for a head kind."""
    plants, diseases = len(spaces.plant), len(spaces.disease)
    if kind == HeadKind.SINGLE_PLANT:
        return {"plant_branch": plants}
    if kind == HeadKind.SINGLE_DISEASE:
        return {"disease_branch": diseases}
    if kind == HeadKind.POWERSET:
        return {"joint_branch": len(spaces)}
    if kind == HeadKind.MULTI_OUTPUT:
        return {"plant_branch": plants, "disease_branch": diseases}
    return {"plant_branch": plants, "disease_branch": diseases}


def parameter_shapes(kind: HeadKind, config: ModelConfig, spaces: JointLabelSpace) -> List[Tuple[str, Tuple[int, ...], bool, int]]:
    """(name, shape, trainable, fan_in) for every parameter, in creation order."""
    backbone = config.backbone
    features = backbone.flatten_dim
    if features == 0:
        raise ConfigError(
            f"Flatten dimension is 0: extent {backbone.extent} // pool^2 ({backbone.pool ** 2}) "
            f"leaves no spatial cells"
        )

    specs: List[Tuple[str, Tuple[int, ...], bool, int]] = []
    in_channels = 3
    k = backbone.kernel
    for layer, out_channels in enumerate(backbone.channels, start=1):
        fan_in = k * k * in_channels
        specs.append((f"backbone.conv{layer}.kernel", (k, k, in_channels, out_channels), True, fan_in))
        specs.append((f"backbone.conv{layer}.bias", (out_channels,), True, 0))
        specs.append((f"backbone.bn{layer}.gamma", (out_channels,), True, 0))
        specs.append((f"backbone.bn{layer}.beta", (out_channels,), True, 0))
        specs.append((f"backbone.bn{layer}.running_mean", (out_channels,), False, 0))
        specs.append((f"backbone.bn{layer}.running_var", (out_channels,), False, 0))
        in_channels = out_channels

    hidden = config.branch_width
    for group, width in output_widths(kind, spaces).items():
        specs.append((f"{group}.hidden.weight", (features, hidden), True, features))
        specs.append((f"{group}.hidden.bias", (hidden,), True, 0))
        specs.append((f"{group}.out.weight", (hidden, width), True, hidden))
        specs.append((f"{group}.out.bias", (width,), True, 0))

    if kind == HeadKind.GSMO:
        plants, diseases = len(spaces.plant), len(spaces.disease)
        specs.append(("plant_head2.weight", (features + diseases, plants), True, features + diseases))
        specs.append(("plant_head2.bias", (plants,), True, 0))
        specs.append(("disease_head2.weight", (features + plants, diseases), True, features + plants))
        specs.append(("disease_head2.bias", (diseases,), True, 0))
    return specs


def init_model(kind: HeadKind, config: ModelConfig, spaces: JointLabelSpace, seed: int) -> ModelParams:
    """Fan-in scaled normal weights (std sqrt(2 / fan_in)), zero biases, BN gamma 1 / beta 0."""
    rng = np.random.default_rng(seed)
    parameters: Dict[str, Parameter] = {}
    for name, shape, trainable, fan_in in parameter_shapes(kind, config, spaces):
        role = name.rsplit(".", 1)[-1]
        if role in ("kernel", "weight"):
            value = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif role in ("gamma", "running_var"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        parameters[name] = Parameter(name, value.astype(DTYPE), trainable=trainable)

    logger.debug(
        f"Initialised {kind.value} model with {len(parameters)} tensors "
        f"({sum(p.size for p in parameters.values())} values), seed {seed}"
    )
    return ModelParams(kind=kind, config=config, spaces=spaces, parameters=parameters)


def forward_backbone(params: ModelParams, images: Tensor, training: bool = False) -> Tensor:
    """(conv, bn, relu, conv, bn, relu, pool) x 2, then flatten to N x F."""
    backbone = params.config.backbone
    e = backbone.extent
    if images.ndim != 4 or images.shape[1:] != (e, e, 3):
        raise ShapeError("forward_backbone", images.shape, (images.shape[0] if images.ndim else 0, e, e, 3))

    x = images
    for layer in range(1, 5):
        x = ops.conv2d(
            x,
            params[f"backbone.conv{layer}.kernel"],
            params[f"backbone.conv{layer}.bias"],
            padding="same",
            stride=1,
        )
        x = ops.batchnorm2d(
            x,
            params[f"backbone.bn{layer}.gamma"],
            params[f"backbone.bn{layer}.beta"],
            params[f"backbone.bn{layer}.running_mean"],
            params[f"backbone.bn{layer}.running_var"],
            training=training,
        )
        x = ops.relu(x)
        if layer % 2 == 0:
            x = ops.maxpool2d(x, backbone.pool)
    return ops.flatten(x)


def _branch(params: ModelParams, group: str, features: Tensor) -> Tensor:
    hidden = ops.relu(ops.dense(features, params[f"{group}.hidden.weight"], params[f"{group}.hidden.bias"]))
    logits = ops.dense(hidden, params[f"{group}.out.weight"], params[f"{group}.out.bias"])
    return ops.softmax(logits)


def _stage1(params: ModelParams, features: Tensor) -> Tuple[Tensor, Tensor]:
    return _branch(params, "plant_branch", features), _branch(params, "disease_branch", features)


def forward_gsmo(params: ModelParams, images: Tensor, training: bool = False) -> GsmoOutputs:
    """Stage-1 branches, then stage-2 heads reading features plus the other target's probabilities."""
    if params.kind != HeadKind.GSMO:
        raise ValueError(f"forward_gsmo needs a gsmo model, got {params.kind.value}")
    features = forward_backbone(params, images, training)
    p_temp, d_temp = _stage1(params, features)
    p2 = ops.softmax(ops.dense(ops.concat([features, d_temp]), params["plant_head2.weight"], params["plant_head2.bias"]))
    d2 = ops.softmax(ops.dense(ops.concat([features, p_temp]), params["disease_head2.weight"], params["disease_head2.bias"]))
    return GsmoOutputs(p_temp=p_temp, d_temp=d_temp, p2=p2, d2=d2)


def forward_head(params: ModelParams, images: Tensor, training: bool = False) -> Tuple[Tensor, ...]:
    """Probability outputs of the non-GSMo kinds.

    single_plant / single_disease / powerset return a 1-tuple; multi_output
    returns (plant, disease), structurally identical to GSMo's stage 1.
    """
    features = forward_backbone(params, images, training)
    if params.kind == HeadKind.SINGLE_PLANT:
        return (_branch(params, "plant_branch", features),)
    if params.kind == HeadKind.SINGLE_DISEASE:
        return (_branch(params, "disease_branch", features),)
    if params.kind == HeadKind.POWERSET:
        return (_branch(params, "joint_branch", features),)
    if params.kind == HeadKind.MULTI_OUTPUT:
        return _stage1(params, features)
    raise ValueError("forward_head does not handle gsmo models; use forward_gsmo")


class Predictions(NamedTuple):
    """Ordinals per sample; -1 marks a target the model does not predict."""

    plant: np.ndarray
    disease: np.ndarray


def _predict_batch(params: ModelParams, images: Tensor) -> Predictions:
    n = images.shape[0]
    missing = np.full(n, -1, dtype=np.int64)
    if params.kind == HeadKind.GSMO:
        out = forward_gsmo(params, images, training=False)
        return Predictions(ops.argmax_rows(out.p2), ops.argmax_rows(out.d2))
    outputs = forward_head(params, images, training=False)
    if params.kind == HeadKind.MULTI_OUTPUT:
        return Predictions(ops.argmax_rows(outputs[0]), ops.argmax_rows(outputs[1]))
    if params.kind == HeadKind.POWERSET:
        plants, diseases = split_many(ops.argmax_rows(outputs[0]), params.spaces)
        return Predictions(plants, diseases)
    if params.kind == HeadKind.SINGLE_PLANT:
        return Predictions(ops.argmax_rows(outputs[0]), missing)
    return Predictions(missing, ops.argmax_rows(outputs[0]))


def predict(
    model: Union[ModelParams, MultiModel],
    images: Union[Tensor, np.ndarray],
    batch_size: int = 64,
) -> Predictions:
    """Eval-mode (plant, disease) ordinals; argmax ties go to the lowest ordinal."""
    data = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=DTYPE)
    if isinstance(model, MultiModel):
        plant = predict(model.plant, data, batch_size).plant
        disease = predict(model.disease, data, batch_size).disease
        return Predictions(plant, disease)

    plants: List[np.ndarray] = []
    diseases: List[np.ndarray] = []
    for start in range(0, data.shape[0], batch_size):
        chunk = _predict_batch(model, Tensor(data[start:start + batch_size]))
        plants.append(chunk.plant)
        diseases.append(chunk.disease)
    if not plants:
        empty = np.zeros(0, dtype=np.int64)
        return Predictions(empty, empty)
    return Predictions(np.concatenate(plants), np.concatenate(diseases))


def share_parameters(source: ModelParams, target: ModelParams, groups: Optional[Sequence[str]] = None) -> ModelParams:
    """Point target's parameters at source's objects for the given groups (all common groups by default)."""
    groups = groups or [g for g in target.groups if g in source.groups]
    for name in list(target.parameters):
        if group_of(name) in groups and name in source.parameters:
            if source.parameters[name].shape != target.parameters[name].shape:
                raise ShapeError(f"share {name}", source.parameters[name].shape, target.parameters[name].shape)
            target.parameters[name] = source.parameters[name]
    return target
