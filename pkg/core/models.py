"""Data models for head kinds, approaches, runs and report rows."""

from enum import Enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from core.metrics import MetricsReport

TARGETS = ("plant", "disease", "both")

CSV_HEADER = (
    "run_id", "approach", "b1", "b2", "d1", "d2", "seed", "epochs",
    "plant_acc", "plant_f1", "plant_fpr",
    "dis_acc", "dis_f1", "dis_fpr",
    "both_acc", "both_f1", "both_fpr",
)


class HeadKind(Enum):
    """Prediction-head paradigm of one network."""

    SINGLE_PLANT = "single_plant"
    SINGLE_DISEASE = "single_disease"
    POWERSET = "powerset"
    MULTI_OUTPUT = "multi_output"
    GSMO = "gsmo"

    @property
    def selection_target(self) -> str:
        if self == HeadKind.SINGLE_PLANT:
            return "plant"
        if self == HeadKind.SINGLE_DISEASE:
            return "disease"
        return "both"


class Approach(Enum):
    """Experiment arm compared in reports."""

    MULTI_MODEL = "multi_model"
    POWERSET = "powerset"
    MULTI_OUTPUT = "multi_output"
    GSMO = "gsmo"  # all four balance weights 1
    GSMO_WEIGHTED = "gsmo_weighted"
    GSMO_TRANSFER = "gsmo_transfer"

    @property
    def head_kinds(self) -> Tuple[HeadKind, ...]:
        if self == Approach.MULTI_MODEL:
            return (HeadKind.SINGLE_PLANT, HeadKind.SINGLE_DISEASE)
        if self == Approach.POWERSET:
            return (HeadKind.POWERSET,)
        if self == Approach.MULTI_OUTPUT:
            return (HeadKind.MULTI_OUTPUT,)
        return (HeadKind.GSMO,)


COMPARE_APPROACHES = (
    Approach.MULTI_MODEL,
    Approach.POWERSET,
    Approach.MULTI_OUTPUT,
    Approach.GSMO,
    Approach.GSMO_WEIGHTED,
)


@dataclass
class EpochRecord:
    """Losses and selection F1 after one epoch."""

    epoch: int
    train_loss: float
    val_loss: float
    val_f1: float

    def to_dict(self) -> Dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_f1": self.val_f1,
        }


@dataclass
class RunResult:
    """Outcome of one training run (one seed of one approach)."""

    approach: str
    seed: int
    weights: Tuple[float, float, float, float]
    history: Dict[str, List[EpochRecord]]
    best_epoch: int
    best_val_f1: float
    epochs_trained: int
    stopped_early: bool
    test_metrics: Optional[MetricsReport]
    wall_seconds: float
    checkpoint_paths: List[str] = field(default_factory=list)
    models: List = field(default_factory=list, repr=False)

    @property
    def run_id(self) -> str:
        return f"{self.approach}-s{self.seed}"

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "approach": self.approach,
            "seed": self.seed,
            "weights": list(self.weights),
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
            "epochs_trained": self.epochs_trained,
            "stopped_early": self.stopped_early,
            "history": {kind: [record.to_dict() for record in records] for kind, records in self.history.items()},
            "test_metrics": self.test_metrics.to_dict() if self.test_metrics else None,
            "wall_seconds": round(self.wall_seconds, 3),
            "checkpoints": self.checkpoint_paths,
        }


def _rounded(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(float(value), 6)


@dataclass
class ReportRow:
    """One row of the run report.

    The per-approach mean row is the one aggregate row; the std row that follows
    it carries statistic 'std' but is not flagged, so each approach contributes
    exactly one aggregate row.
    """

    run_id: str
    approach: str
    weights: Tuple[float, float, float, float]
    seed: Optional[int]
    epochs: float
    wall_seconds: float
    metrics: Dict[str, Dict[str, Optional[float]]]
    aggregate: bool = False
    statistic: Optional[str] = None

    @classmethod
    def from_run(cls, run: RunResult) -> "ReportRow":
        metrics = {}
        for target in TARGETS:
            report = run.test_metrics.target(target) if run.test_metrics else None
            metrics[target] = {
                "acc": report.accuracy if report else None,
                "f1": report.f1 if report else None,
                "fpr": report.fpr if report else None,
            }
        return cls(
            run_id=run.run_id,
            approach=run.approach,
            weights=run.weights,
            seed=run.seed,
            epochs=float(run.epochs_trained),
            wall_seconds=run.wall_seconds,
            metrics=metrics,
        )

    def metric(self, target: str, name: str) -> Optional[float]:
        return self.metrics[target][name]

    def csv_row(self) -> List[str]:
        def fmt(value) -> str:
            return "" if value is None else repr(_rounded(value))

        row = [self.run_id, self.approach]
        row += [repr(float(w)) for w in self.weights]
        row.append("" if self.seed is None else str(self.seed))
        row.append(repr(_rounded(self.epochs)))
        for target in TARGETS:
            for name in ("acc", "f1", "fpr"):
                row.append(fmt(self.metrics[target][name]))
        return row

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "approach": self.approach,
            "weights": {
                "beta1": self.weights[0],
                "beta2": self.weights[1],
                "delta1": self.weights[2],
                "delta2": self.weights[3],
            },
            "seed": self.seed,
            "epochs": _rounded(self.epochs),
            "wall_seconds": round(self.wall_seconds, 3),
            "aggregate": self.aggregate,
            "statistic": self.statistic,
            "metrics": {
                target: {name: _rounded(value) for name, value in values.items()}
                for target, values in self.metrics.items()
            },
        }

