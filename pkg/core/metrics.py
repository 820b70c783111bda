"""
Confusion matrices and classification scores.

Accuracy is top-1 (trace / total). Precision, recall, F1 and FPR are computed
one-vs-rest per class and macro-averaged over the classes present in the
ground truth; micro averages are reported alongside. Any 0/0 yields 0.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.labels import UNKNOWN, JointLabelSpace, join_many


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with entry (i, j) = truth i predicted j.

    When built with an unknown column the matrix is K x (K + 1) and the last
    column collects predictions outside the label space.
    """

    counts: np.ndarray
    class_names: Sequence[str] = ()

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class BinaryCounts:
    """One-vs-rest TP/FP/TN/FN per class."""

    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.tp.shape[0]

    @property
    def total(self) -> int:
        if self.num_classes == 0:
            return 0
        return int(self.tp[0] + self.fp[0] + self.tn[0] + self.fn[0])

    def for_class(self, c: int) -> Dict[str, int]:
        return {"tp": int(self.tp[c]), "fp": int(self.fp[c]), "tn": int(self.tn[c]), "fn": int(self.fn[c])}


@dataclass(frozen=True)
class Scores:
    """Per-class metric arrays plus macro/micro aggregates and top-1 accuracy."""

    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    fpr: np.ndarray
    support: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_fpr: float
    micro_precision: float
    micro_recall: float
    micro_f1: float


def confusion(
    truth: Sequence[int],
    predicted: Sequence[int],
    k: int,
    class_names: Sequence[str] = (),
    unknown_column: bool = False,
) -> ConfusionMatrix:
    """Tally a K x K (or K x (K + 1)) confusion matrix."""
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise ValueError(f"confusion: {truth.shape[0]} truths vs {predicted.shape[0]} predictions")
    if truth.size and (truth.min() < 0 or truth.max() >= k):
        raise ValueError(f"confusion: truth ordinals must lie in [0, {k})")

    columns = k + 1 if unknown_column else k
    if unknown_column:
        predicted = np.where(predicted == UNKNOWN, k, predicted)
    if predicted.size and (predicted.min() < 0 or predicted.max() >= columns):
        raise ValueError(f"confusion: predicted ordinals must lie in [0, {k})")

    counts = np.zeros((k, columns), dtype=np.int64)
    np.add.at(counts, (truth, predicted), 1)
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def binary_counts(cm: ConfusionMatrix) -> BinaryCounts:
    k = cm.num_classes
    counts = cm.counts
    tp = np.diag(counts[:, :k]).copy()
    fn = counts.sum(axis=1) - tp
    fp = counts[:, :k].sum(axis=0) - tp
    tn = cm.total - tp - fp - fn
    return BinaryCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    numerator = np.asarray(numerator, dtype=np.float64)
    denominator = np.asarray(denominator, dtype=np.float64)
    out = np.zeros_like(numerator)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return out


def scores(counts: BinaryCounts) -> Scores:
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    fpr = _ratio(fp, fp + tn)
    support = tp + fn
    present = support > 0

    def macro(values: np.ndarray) -> float:
        return float(values[present].mean()) if present.any() else 0.0

    total = counts.total
    accuracy = float(tp.sum()) / total if total else 0.0
    micro_precision = float(_ratio(tp.sum(), (tp + fp).sum()))
    micro_recall = float(_ratio(tp.sum(), (tp + fn).sum()))
    micro_f1 = float(_ratio(2 * micro_precision * micro_recall, micro_precision + micro_recall))

    return Scores(
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=fpr,
        support=support,
        accuracy=accuracy,
        macro_precision=macro(precision),
        macro_recall=macro(recall),
        macro_f1=macro(f1),
        macro_fpr=macro(fpr),
        micro_precision=micro_precision,
        micro_recall=micro_recall,
        micro_f1=micro_f1,
    )


@dataclass
class TargetMetrics:
    """Scores for one prediction target (plant, disease or both)."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    fpr: float
    micro_f1: float
    per_class: Optional[List[Dict]] = None

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, per_class: bool = False) -> "TargetMetrics":
        result = scores(binary_counts(cm))
        table = None
        if per_class:
            names = cm.class_names or [str(i) for i in range(cm.num_classes)]
            table = [
                {
                    "class": names[c],
                    "support": int(result.support[c]),
                    "precision": float(result.precision[c]),
                    "recall": float(result.recall[c]),
                    "f1": float(result.f1[c]),
                    "fpr": float(result.fpr[c]),
                }
                for c in range(cm.num_classes)
            ]
        return cls(
            accuracy=result.accuracy,
            precision=result.macro_precision,
            recall=result.macro_recall,
            f1=result.macro_f1,
            fpr=result.macro_fpr,
            micro_f1=result.micro_f1,
            per_class=table,
        )

    def to_dict(self) -> Dict:
        data = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fpr": self.fpr,
            "micro_f1": self.micro_f1,
        }
        if self.per_class is not None:
            data["per_class"] = self.per_class
        return data


@dataclass
class MetricsReport:
    """Metrics per target; a single-target model leaves the other targets empty."""

    plant: Optional[TargetMetrics] = None
    disease: Optional[TargetMetrics] = None
    both: Optional[TargetMetrics] = None
    averaging: str = field(default="macro")

    def target(self, name: str) -> Optional[TargetMetrics]:
        return getattr(self, name)

    def to_dict(self) -> Dict:
        return {
            "averaging": self.averaging,
            "zero_division": 0.0,
            "plant": self.plant.to_dict() if self.plant else None,
            "disease": self.disease.to_dict() if self.disease else None,
            "both": self.both.to_dict() if self.both else None,
        }


def target_eval(truth: Sequence[int], predicted: Sequence[int], names: Sequence[str], per_class: bool = False) -> TargetMetrics:
    """Metrics for a single target over its own label space."""
    cm = confusion(truth, predicted, len(names), class_names=names)
    return TargetMetrics.from_confusion(cm, per_class=per_class)


def joint_eval(
    truth_plants: Sequence[int],
    truth_diseases: Sequence[int],
    predicted_plants: Sequence[int],
    predicted_diseases: Sequence[int],
    space: JointLabelSpace,
    per_class: bool = False,
) -> MetricsReport:
    """Plant, disease and both-correct metrics for aligned truth/prediction pairs.

    A predicted pair absent from the joint space lands in the unknown column of
    the "both" matrix and always counts as wrong.
    """
    lengths = {len(truth_plants), len(truth_diseases), len(predicted_plants), len(predicted_diseases)}
    if len(lengths) != 1:
        raise ValueError(f"joint_eval: sequences are not aligned (lengths {sorted(lengths)})")

    truth_plants = np.asarray(truth_plants, dtype=np.int64)
    truth_diseases = np.asarray(truth_diseases, dtype=np.int64)
    predicted_plants = np.asarray(predicted_plants, dtype=np.int64)
    predicted_diseases = np.asarray(predicted_diseases, dtype=np.int64)

    plant = target_eval(truth_plants, predicted_plants, space.plant.names, per_class)
    disease = target_eval(truth_diseases, predicted_diseases, space.disease.names, per_class)

    truth_joint = join_many(truth_plants, truth_diseases, space)
    if (truth_joint == UNKNOWN).any():
        raise ValueError("joint_eval: a ground-truth pair is not in the joint label space")
    predicted_joint = join_many(predicted_plants, predicted_diseases, space)
    joint_names = [space.pair_name(j) for j in range(len(space))]
    both_cm = confusion(truth_joint, predicted_joint, len(space), class_names=joint_names, unknown_column=True)
    both = TargetMetrics.from_confusion(both_cm, per_class=per_class)

    return MetricsReport(plant=plant, disease=disease, both=both)
