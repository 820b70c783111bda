"""Aggregates repeated training runs into mean and standard-deviation rows."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.models import TARGETS, ReportRow, RunResult
from utils.logger import get_logger

logger = get_logger(__name__)

METRIC_NAMES = ("acc", "f1", "fpr")


@dataclass
class RunFailure:
    approach: str
    seed: int
    error: str
    exception: Optional[BaseException] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict:
        return {"approach": self.approach, "seed": self.seed, "error": self.error}


@dataclass
class RepeatReport:
    """Completed runs of one approach (ordered by seed), failures and the aggregate rows."""

    approach: str
    runs: List[RunResult]
    failures: List[RunFailure] = field(default_factory=list)
    mean: Optional[ReportRow] = None
    std: Optional[ReportRow] = None

    @property
    def rows(self) -> List[ReportRow]:
        rows = [ReportRow.from_run(run) for run in self.runs]
        rows += [row for row in (self.mean, self.std) if row is not None]
        return rows

    @property
    def succeeded(self) -> bool:
        return bool(self.runs)

    def to_dict(self) -> Dict:
        return {
            "approach": self.approach,
            "runs": [run.to_dict() for run in self.runs],
            "failures": [failure.to_dict() for failure in self.failures],
            "mean": self.mean.to_dict() if self.mean else None,
            "std": self.std.to_dict() if self.std else None,
        }


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    data = np.asarray(values, dtype=np.float64)
    if np.all(data == data[0]):
        return float(data[0]), 0.0
    return float(data.mean()), float(data.std(ddof=0))


class ResultAggregator:
    """Aggregates per-seed runs of one approach."""

    def __init__(self):
        self.logger = logger

    def aggregate(self, approach: str, runs: Sequence[RunResult], failures: Sequence[RunFailure] = ()) -> RepeatReport:
        """Build mean/std rows over the completed runs.

        Args:
            approach: Approach name of every run
            runs: Completed runs, any order
            failures: Runs that aborted

        Returns:
            RepeatReport with runs sorted by seed; no aggregate rows when
            nothing completed
        """
        runs = sorted(runs, key=lambda r: r.seed)
        report = RepeatReport(approach=approach, runs=runs, failures=list(failures))
        if not runs:
            self.logger.warning(f"{approach}: no completed runs to aggregate")
            return report

        rows = [ReportRow.from_run(run) for run in runs]
        mean_metrics: Dict[str, Dict[str, Optional[float]]] = {}
        std_metrics: Dict[str, Dict[str, Optional[float]]] = {}
        for target in TARGETS:
            mean_metrics[target] = {}
            std_metrics[target] = {}
            for name in METRIC_NAMES:
                values = [row.metric(target, name) for row in rows if row.metric(target, name) is not None]
                if values:
                    mean_metrics[target][name], std_metrics[target][name] = mean_std(values)
                else:
                    mean_metrics[target][name] = std_metrics[target][name] = None

        epochs_mean, epochs_std = mean_std([row.epochs for row in rows])
        wall_mean, wall_std = mean_std([row.wall_seconds for row in rows])
        weights = runs[0].weights

        report.mean = ReportRow(
            run_id=f"{approach}-mean", approach=approach, weights=weights, seed=None,
            epochs=epochs_mean, wall_seconds=wall_mean, metrics=mean_metrics,
            aggregate=True, statistic="mean",
        )
        report.std = ReportRow(
            run_id=f"{approach}-std", approach=approach, weights=weights, seed=None,
            epochs=epochs_std, wall_seconds=wall_std, metrics=std_metrics,
            statistic="std",
        )

        both_f1 = mean_metrics["both"]["f1"]
        shown = "n/a" if both_f1 is None else f"{both_f1:.4f} ± {std_metrics['both']['f1']:.4f}"
        self.logger.info(f"{approach}: aggregated {len(runs)} runs ({len(report.failures)} failed), both F1 {shown}")
        return report
