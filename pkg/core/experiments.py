"""
Experiment orchestration: single approaches, repeats, approach comparison,
balance-weight grid search and checkpoint-based fine-tuning.

Independent runs execute on a thread pool bounded by `jobs`; every result is
re-ordered by (approach, seed) or grid order before it is reported.
"""

import itertools
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

from core.errors import ConfigError, GsmoError
from core.models import COMPARE_APPROACHES, Approach, EpochRecord, HeadKind, RunResult
from core.result_aggregator import RepeatReport, ResultAggregator, RunFailure
from core.schemas import UNIT_WEIGHTS, BalanceWeights, ExperimentConfig, override
from core.trainer import FitResult, evaluate_model, fit
from data.dataset_loader import LoadedDataset, load_dataset, load_manifest
from data.splits import DatasetSplits, stratified_split
from data.synthetic import write_synthetic
from model.checkpoint import load_checkpoint, load_into, save_checkpoint
from model.network import ModelParams, MultiModel, init_model
from utils.logger import get_logger

logger = get_logger(__name__)

COARSE_VALUES = (0.2, 0.4, 0.6, 0.8)
NO_WEIGHTS = (0.0, 0.0, 0.0, 0.0)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class ExperimentData:
    dataset: LoadedDataset
    splits: DatasetSplits


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    """Generate (if synthetic), load and split the configured dataset."""
    root = Path(config.dataset.root)
    if config.dataset.synthetic is not None:
        manifest, _ = write_synthetic(config.dataset.synthetic, root)
    else:
        manifest = load_manifest(root, config.dataset.layout)
    dataset = load_dataset(manifest, config.model.backbone.extent)
    return ExperimentData(dataset=dataset, splits=stratified_split(manifest, config.split))


def run_parallel(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> List[R]:
    """fn over items on up to `jobs` threads; results keep the order of items."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_weights(approach: Approach, configured: BalanceWeights) -> Optional[BalanceWeights]:
    """Balance weights a GSMo arm trains with; None for the other arms."""
    if approach == Approach.GSMO:
        return UNIT_WEIGHTS
    if approach in (Approach.GSMO_WEIGHTED, Approach.GSMO_TRANSFER):
        return configured
    return None


def approach_weights(approach: Approach, configured: BalanceWeights) -> Tuple[float, float, float, float]:
    """Weights recorded for a run; arms without balance weights report zeros."""
    weights = run_weights(approach, configured)
    return NO_WEIGHTS if weights is None else weights.as_tuple()


def _save_best(model: ModelParams, output_dir: Optional[Path], name: str) -> List[str]:
    if output_dir is None:
        return []
    return [str(save_checkpoint(model, Path(output_dir) / "checkpoints" / f"{name}.gsmo"))]


def run_approach(
    approach: Approach,
    config: ExperimentConfig,
    data: ExperimentData,
    seed: int,
    output_dir: Optional[Path] = None,
) -> RunResult:
    """Train one seed of one approach and evaluate it on the test split."""
    started = time.perf_counter()
    weights = run_weights(approach, config.weights)
    run_id = f"{approach.value}-s{seed}"

    if approach == Approach.MULTI_MODEL:
        plant = fit(HeadKind.SINGLE_PLANT, config, None, data.dataset, data.splits, seed)
        disease = fit(HeadKind.SINGLE_DISEASE, config, None, data.dataset, data.splits, seed)
        model: Union[ModelParams, MultiModel] = MultiModel(plant=plant.params, disease=disease.params)
        val_f1 = evaluate_model(model, data.dataset, data.splits.val).both.f1
        history = {HeadKind.SINGLE_PLANT.value: plant.history, HeadKind.SINGLE_DISEASE.value: disease.history}
        fits = [plant, disease]
        paths = _save_best(plant.params, output_dir, f"{run_id}-plant") + \
            _save_best(disease.params, output_dir, f"{run_id}-disease")
    else:
        if approach == Approach.GSMO_TRANSFER:
            if not config.transfer.checkpoint:
                raise ConfigError("gsmo_transfer needs transfer.checkpoint")
            result = fine_tune(
                config.transfer.checkpoint, config.transfer.freeze, config, data, seed,
                groups=config.transfer.groups,
            )
        else:
            kind = approach.head_kinds[0]
            result = fit(kind, config, weights, data.dataset, data.splits, seed)
        model = result.params
        val_f1 = result.best_val_f1
        history = {result.params.kind.value: result.history}
        fits = [result]
        paths = _save_best(result.params, output_dir, run_id)

    test_metrics = evaluate_model(model, data.dataset, data.splits.test)
    return RunResult(
        approach=approach.value,
        seed=seed,
        weights=approach_weights(approach, config.weights),
        history=history,
        best_epoch=max(f.best_epoch for f in fits),
        best_val_f1=val_f1,
        epochs_trained=max(f.epochs_trained for f in fits),
        stopped_early=all(f.stopped_early for f in fits),
        test_metrics=test_metrics,
        wall_seconds=time.perf_counter() - started,
        checkpoint_paths=paths,
        models=[model],
    )


def run_repeats(
    approach: Approach,
    config: ExperimentConfig,
    data: ExperimentData,
    jobs: int = 1,
    output_dir: Optional[Path] = None,
) -> RepeatReport:
    """Seeds seed .. seed + repeats - 1, aggregated as mean and population std.

    A run that aborts is logged and reported as a failure; the aggregate covers
    the completed subset.
    """
    seeds = [config.train.seed + r for r in range(config.train.repeats)]

    def attempt(seed: int) -> Union[RunResult, RunFailure]:
        try:
            return run_approach(approach, config, data, seed, output_dir)
        except Exception as e:
            # unexpected types keep their traceback in the log
            logger.warning(f"{approach.value} seed {seed} failed: {e}", exc_info=not isinstance(e, GsmoError))
            return RunFailure(approach=approach.value, seed=seed, error=str(e), exception=e)

    outcomes = run_parallel(attempt, seeds, jobs)
    runs = [o for o in outcomes if isinstance(o, RunResult)]
    failures = [o for o in outcomes if isinstance(o, RunFailure)]
    return ResultAggregator().aggregate(approach.value, runs, failures)


def compare_approaches(
    config: ExperimentConfig,
    data: ExperimentData,
    jobs: int = 1,
    output_dir: Optional[Path] = None,
) -> List[RepeatReport]:
    """Every comparison arm on the same splits and seeds.

    Returns one RepeatReport per arm, sorted by mean both-macro-F1 (failed
    arms last, then arm order).
    """
    arms = list(COMPARE_APPROACHES)
    if config.transfer.checkpoint:
        arms.append(Approach.GSMO_TRANSFER)
    reports = [run_repeats(arm, config, data, jobs, output_dir) for arm in arms]
    order = {arm.value: i for i, arm in enumerate(arms)}

    def rank(report: RepeatReport):
        f1 = report.mean.metric("both", "f1") if report.mean else None
        return (f1 is None, -(f1 or 0.0), order[report.approach])

    return sorted(reports, key=rank)


def coarse_grid(values: Sequence[float] = COARSE_VALUES) -> List[BalanceWeights]:
    """Full product over (beta1, beta2, delta1, delta2) in lexicographic order."""
    return [
        BalanceWeights(beta1=b1, beta2=b2, delta1=d1, delta2=d2)
        for b1, b2, d1, d2 in itertools.product(sorted(values), repeat=4)
    ]


def narrow_grid(best: BalanceWeights, step: float = 0.1) -> List[BalanceWeights]:
    """Neighbourhood grid: each axis at best - step, best, best + step, clipped to [0, 1]."""
    axes = []
    for value in best.as_tuple():
        candidates = {round(min(1.0, max(0.0, value + delta)), 10) for delta in (-step, 0.0, step)}
        axes.append(sorted(candidates))
    return [
        BalanceWeights(beta1=b1, beta2=b2, delta1=d1, delta2=d2)
        for b1, b2, d1, d2 in itertools.product(*axes)
        if max(b1, b2, d1, d2) > 0
    ]


@dataclass
class GridRow:
    weights: BalanceWeights
    val_f1: float
    epochs: int
    seed: int
    rank: int = 0

    def to_dict(self) -> Dict:
        return {
            "rank": self.rank,
            "weights": self.weights.model_dump(),
            "val_both_f1": self.val_f1,
            "epochs": self.epochs,
            "seed": self.seed,
        }


@dataclass
class GridSearchResult:
    """Grid rows ranked by validation both-F1, ties by lexicographic weights."""

    rows: List[GridRow]
    failures: List[Tuple[BalanceWeights, str]] = field(default_factory=list)

    @property
    def best(self) -> GridRow:
        return self.rows[0]


def grid_search_weights(
    grid: Sequence[BalanceWeights],
    config: ExperimentConfig,
    data: ExperimentData,
    jobs: int = 1,
) -> GridSearchResult:
    """Fit one GSMo model per weight tuple (single seed) and rank by val both-F1."""
    if not grid:
        raise ConfigError("Grid search needs at least one weight tuple")
    seed = config.train.seed

    def cell(weights: BalanceWeights) -> Union[FitResult, str]:
        try:
            result = fit(HeadKind.GSMO, config, weights, data.dataset, data.splits, seed)
        except Exception as e:
            logger.warning(f"Grid cell {weights.as_tuple()} failed: {e}", exc_info=not isinstance(e, GsmoError))
            return str(e)
        logger.info(f"Grid cell {weights.as_tuple()} done: val F1 {result.best_val_f1:.4f}")
        return result

    outcomes = run_parallel(cell, list(grid), jobs)
    rows = [
        GridRow(weights=w, val_f1=o.best_val_f1, epochs=o.epochs_trained, seed=seed)
        for w, o in zip(grid, outcomes) if isinstance(o, FitResult)
    ]
    failures = [(w, o) for w, o in zip(grid, outcomes) if isinstance(o, str)]
    if not rows:
        raise failures_error(failures)

    rows.sort(key=lambda r: (-r.val_f1, r.weights.as_tuple()))
    for rank, row in enumerate(rows, start=1):
        row.rank = rank
    return GridSearchResult(rows=rows, failures=failures)


def failures_error(failures: Sequence[Tuple[BalanceWeights, str]]) -> GsmoError:
    return GsmoError(f"Every grid cell failed; first error: {failures[0][1]}")


def fine_tune(
    source: Union[str, Path, ModelParams],
    freeze: Sequence[str],
    config: ExperimentConfig,
    data: ExperimentData,
    seed: int,
    groups: Optional[Sequence[str]] = None,
    kind: HeadKind = HeadKind.GSMO,
) -> FitResult:
    """Initialise the named groups from a checkpoint, freeze some, then fit normally.

    Groups absent from `groups` keep their fresh initialisation; the default
    copies every group the two models share.
    """
    donor = source if isinstance(source, ModelParams) else load_checkpoint(source)
    params = init_model(kind, config.model, data.dataset.spaces, seed)
    load_into(params, donor, groups)
    return fit(kind, config, config.weights, data.dataset, data.splits, seed, initial=params, frozen=freeze)


def epochs_to_reach(history: Sequence[EpochRecord], threshold: float = 0.9) -> Optional[int]:
    """First epoch whose validation F1 reaches the threshold."""
    for record in history:
        if record.val_f1 >= threshold:
            return record.epoch
    return None


@dataclass
class TransferStudy:
    """Epochs to reach a validation F1 threshold, fresh vs checkpoint-initialised."""

    threshold: float
    fresh: List[Optional[int]]
    transfer: List[Optional[int]]
    fresh_median: float
    transfer_median: float
    regression_limit: float = 1.5

    @property
    def ratio(self) -> float:
        return self.transfer_median / self.fresh_median if self.fresh_median else float("inf")

    @property
    def within_limit(self) -> bool:
        return self.ratio <= self.regression_limit

    def to_dict(self) -> Dict:
        return {
            "threshold": self.threshold,
            "fresh_epochs": self.fresh,
            "transfer_epochs": self.transfer,
            "fresh_median": self.fresh_median,
            "transfer_median": self.transfer_median,
            "ratio": self.ratio,
            "regression_limit": self.regression_limit,
            "within_limit": self.within_limit,
        }


def transfer_study(
    source_config: ExperimentConfig,
    target_config: ExperimentConfig,
    seeds: int = 5,
    threshold: float = 0.9,
    groups: Sequence[str] = ("backbone",),
    output_dir: Optional[Path] = None,
) -> TransferStudy:
    """Train a GSMo donor on the source task, then compare fresh vs transferred runs on the target.

    A run that never reaches the threshold counts as max_epochs + 1.
    """
    source_data = prepare_data(source_config)
    donor = fit(
        HeadKind.GSMO, source_config, source_config.weights,
        source_data.dataset, source_data.splits, source_config.train.seed,
    ).params
    if output_dir is not None:
        save_checkpoint(donor, Path(output_dir) / "checkpoints" / "transfer-source.gsmo")

    target_data = prepare_data(target_config)
    ceiling = target_config.train.max_epochs + 1
    fresh: List[Optional[int]] = []
    transferred: List[Optional[int]] = []
    for offset in range(seeds):
        seed = target_config.train.seed + offset
        baseline = fit(
            HeadKind.GSMO, target_config, target_config.weights,
            target_data.dataset, target_data.splits, seed,
        )
        tuned = fine_tune(donor, (), target_config, target_data, seed, groups=groups)
        fresh.append(epochs_to_reach(baseline.history, threshold))
        transferred.append(epochs_to_reach(tuned.history, threshold))

    study = TransferStudy(
        threshold=threshold,
        fresh=fresh,
        transfer=transferred,
        fresh_median=float(statistics.median(e or ceiling for e in fresh)),
        transfer_median=float(statistics.median(e or ceiling for e in transferred)),
    )
    logger.info(
        f"Transfer study: median epochs to F1 {threshold}: fresh {study.fresh_median}, "
        f"transfer {study.transfer_median} (ratio {study.ratio:.2f})"
    )
    return study


def with_overrides(
    config: ExperimentConfig,
    approach: Optional[str] = None,
    weights: Optional[BalanceWeights] = None,
    checkpoint: Optional[str] = None,
) -> ExperimentConfig:
    """Apply CLI flag overrides to a loaded config."""
    fields: Dict = {"approach": approach, "weights": weights}
    if checkpoint is not None:
        fields["transfer"] = override(config.transfer, checkpoint=checkpoint)
    return override(config, **fields)
