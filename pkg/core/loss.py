"""Balance-weighted GSMo loss and the per-kind training losses."""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor
from core.errors import ShapeError
from core.labels import JointLabelSpace
from core.models import HeadKind
from core.schemas import BalanceWeights
from model.network import GsmoOutputs, ModelParams, forward_gsmo, forward_head


@dataclass(frozen=True)
class TrainTargets:
    """One-hot targets of a batch.

    The same ground truth feeds both stages: plant1 == plant2 and
    disease1 == disease2 elementwise.
    """

    plant1: np.ndarray
    plant2: np.ndarray
    disease1: np.ndarray
    disease2: np.ndarray
    joint: Optional[np.ndarray] = None

    @classmethod
    def from_ordinals(
        cls,
        plants: Sequence[int],
        diseases: Sequence[int],
        spaces: JointLabelSpace,
        joints: Optional[Sequence[int]] = None,
    ) -> "TrainTargets":
        plant = ops.one_hot_rows(np.asarray(plants), len(spaces.plant))
        disease = ops.one_hot_rows(np.asarray(diseases), len(spaces.disease))
        joint = None if joints is None else ops.one_hot_rows(np.asarray(joints), len(spaces))
        return cls(plant1=plant, plant2=plant.copy(), disease1=disease, disease2=disease.copy(), joint=joint)


def total_loss(outputs: GsmoOutputs, targets: TrainTargets, weights: BalanceWeights) -> Tensor:
    """beta1*CE(P1, p_temp) + beta2*CE(P2, p2) + delta1*CE(D1, d_temp) + delta2*CE(D2, d2)."""
    pairs = (
        (outputs.p_temp, targets.plant1),
        (outputs.p2, targets.plant2),
        (outputs.d_temp, targets.disease1),
        (outputs.d2, targets.disease2),
    )
    for probabilities, target in pairs:
        if probabilities.shape != target.shape:
            raise ShapeError("total_loss", probabilities.shape, target.shape)
    terms = [ops.cross_entropy(p, t) for p, t in pairs]
    return ops.weighted_sum(terms, [weights.beta1, weights.beta2, weights.delta1, weights.delta2])


def kind_loss(
    params: ModelParams,
    images: Tensor,
    targets: TrainTargets,
    weights: Optional[BalanceWeights] = None,
    training: bool = True,
) -> Tensor:
    """Training loss of a model of any head kind on one batch."""
    kind = params.kind
    if kind == HeadKind.GSMO:
        if weights is None:
            raise ValueError("gsmo loss needs balance weights")
        return total_loss(forward_gsmo(params, images, training), targets, weights)

    outputs = forward_head(params, images, training)
    if kind == HeadKind.MULTI_OUTPUT:
        plant, disease = outputs
        return ops.weighted_sum(
            [ops.cross_entropy(plant, targets.plant1), ops.cross_entropy(disease, targets.disease1)],
            [1.0, 1.0],
        )
    if kind == HeadKind.POWERSET:
        if targets.joint is None:
            raise ValueError("powerset loss needs joint targets")
        return ops.cross_entropy(outputs[0], targets.joint)
    if kind == HeadKind.SINGLE_PLANT:
        return ops.cross_entropy(outputs[0], targets.plant1)
    return ops.cross_entropy(outputs[0], targets.disease1)


LossFn = Callable[[ModelParams, "object"], Tensor]


def make_loss_fn(weights: Optional[BalanceWeights] = None, training: bool = True) -> LossFn:
    """Loss closure over a data.Batch for train_epoch / evaluate_split."""

    def loss_fn(params: ModelParams, batch) -> Tensor:
        targets = TrainTargets.from_ordinals(batch.plants, batch.diseases, params.spaces, batch.joints)
        return kind_loss(params, batch.images, targets, weights, training)

    return loss_fn
