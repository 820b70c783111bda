"""
Training loop with early stopping and F1-based model selection.

Early stopping watches the validation loss; model selection keeps the
parameters of the epoch with the highest validation macro-F1 of the model's
selection target ("both" for joint kinds, the single target otherwise).
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Union

import numpy as np

from autodiff.tensor import GradientTape
from core.errors import ConfigError, TrainingDivergedError
from core.loss import LossFn, make_loss_fn
from core.metrics import MetricsReport, joint_eval, target_eval
from core.models import EpochRecord, HeadKind
from core.optim import Optimizer, make_optimizer
from core.schemas import BalanceWeights, ExperimentConfig
from data.dataset_loader import LoadedDataset
from data.splits import DatasetSplits
from model.network import ModelParams, MultiModel, init_model, predict
from utils.logger import get_logger, run_logger

logger = get_logger(__name__)

EVAL_BATCH_SIZE = 128


class EarlyStopping:
    """Stop once the validation loss has not improved for `patience` epochs.

    Improvement means strictly below the best loss so far minus min_improvement.
    """

    def __init__(self, patience: int, min_improvement: float = 1e-6):
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.min_improvement = min_improvement
        self.best_loss = math.inf
        self.best_epoch = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch's validation loss; returns whether it improved."""
        if val_loss < self.best_loss - self.min_improvement:
            self.best_loss = val_loss
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


@dataclass
class SplitEvaluation:
    loss: float
    metrics: MetricsReport
    selection_f1: float


@dataclass
class FitResult:
    """Best-F1 parameters of one training run plus its history."""

    params: ModelParams
    history: List[EpochRecord]
    best_epoch: int
    best_val_f1: float
    epochs_trained: int
    stopped_early: bool
    frozen: List[str] = field(default_factory=list)


def epoch_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def train_epoch(
    params: ModelParams,
    batches: Iterable,
    loss_fn: LossFn,
    optimizer: Optimizer,
    epoch: int = 1,
) -> float:
    """One pass over the batches; returns the batch-size-weighted mean loss.

    Raises:
        TrainingDivergedError: a batch produced a non-finite loss
    """
    total = 0.0
    count = 0
    for index, batch in enumerate(batches):
        with GradientTape() as tape:
            loss = loss_fn(params, batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(epoch, index, value)
        grads = tape.gradient(loss, optimizer.parameters)
        optimizer.step(grads)

        size = len(batch.indices)
        total += value * size
        count += size
        logger.debug(f"epoch {epoch} batch {index}: loss {value:.6f}")
    return total / count if count else 0.0


def evaluate_model(
    model: Union[ModelParams, MultiModel],
    dataset: LoadedDataset,
    indices: Sequence[int],
    per_class: bool = False,
) -> MetricsReport:
    """Eval-mode metrics on a subset; single-target models report only their target."""
    indices = np.asarray(indices, dtype=np.int64)
    predictions = predict(model, dataset.images[indices], EVAL_BATCH_SIZE)
    plants, diseases = dataset.plants[indices], dataset.diseases[indices]
    spaces = model.spaces

    kind = model.kind if isinstance(model, ModelParams) else None
    if kind == HeadKind.SINGLE_PLANT:
        return MetricsReport(plant=target_eval(plants, predictions.plant, spaces.plant.names, per_class))
    if kind == HeadKind.SINGLE_DISEASE:
        return MetricsReport(disease=target_eval(diseases, predictions.disease, spaces.disease.names, per_class))
    return joint_eval(plants, diseases, predictions.plant, predictions.disease, spaces, per_class)


def evaluate_split(
    params: ModelParams,
    dataset: LoadedDataset,
    indices: Sequence[int],
    weights: Optional[BalanceWeights] = None,
) -> SplitEvaluation:
    """Validation loss (eval mode, batch-size weighted) and selection-target F1."""
    loss_fn = make_loss_fn(weights, training=False)
    total = 0.0
    for start in range(0, len(indices), EVAL_BATCH_SIZE):
        batch = dataset.take(indices[start:start + EVAL_BATCH_SIZE])
        total += loss_fn(params, batch).item() * len(batch.indices)
    loss = total / len(indices)

    metrics = evaluate_model(params, dataset, indices)
    selection = metrics.target(params.kind.selection_target)
    return SplitEvaluation(loss=loss, metrics=metrics, selection_f1=selection.f1)


def fit(
    kind: HeadKind,
    config: ExperimentConfig,
    weights: Optional[BalanceWeights],
    dataset: LoadedDataset,
    splits: DatasetSplits,
    seed: int,
    initial: Optional[ModelParams] = None,
    frozen: Sequence[str] = (),
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> FitResult:
    """Train one model with early stopping and keep its best-F1 epoch.

    Args:
        kind: Head paradigm to train
        config: Experiment config (model, train sections are used)
        weights: Balance weights (gsmo only)
        dataset: Loaded images and labels
        splits: Index sets; train and val must be non-empty
        seed: Initialisation and shuffling seed
        initial: Start from these parameters instead of a fresh init
        frozen: Parameter groups excluded from optimizer updates
        on_epoch: Called with each epoch's record

    Returns:
        FitResult whose params are those of the best validation-F1 epoch
    """
    if len(splits.val) == 0:
        raise ConfigError("Early stopping needs a non-empty validation set")
    if len(splits.train) == 0:
        raise ConfigError("Training set is empty")

    run_log = run_logger(__name__, kind.value, seed)
    train_config = config.train
    params = initial if initial is not None else init_model(kind, config.model, dataset.spaces, seed)
    if params.kind != kind:
        raise ConfigError(f"Initial parameters are {params.kind.value}, expected {kind.value}")
    optimizer = make_optimizer(train_config, params.trainable(frozen))
    loss_fn = make_loss_fn(weights, training=True)
    stopper = EarlyStopping(train_config.patience, train_config.min_improvement)

    history: List[EpochRecord] = []
    best_state = params.state()
    best_epoch = 0
    best_f1 = -1.0
    stopped_early = False

    if train_config.max_epochs == 0:
        best_f1 = evaluate_split(params, dataset, splits.val, weights).selection_f1

    for epoch in range(1, train_config.max_epochs + 1):
        batches = dataset.batches(splits.train, train_config.batch_size, epoch_seed(seed, epoch))
        train_loss = train_epoch(params, batches, loss_fn, optimizer, epoch)
        evaluation = evaluate_split(params, dataset, splits.val, weights)

        record = EpochRecord(epoch, train_loss, evaluation.loss, evaluation.selection_f1)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        run_log.info(
            f"epoch {epoch}: train {train_loss:.4f} "
            f"val {evaluation.loss:.4f} val F1 {evaluation.selection_f1:.4f}"
        )

        if evaluation.selection_f1 > best_f1:
            best_f1 = evaluation.selection_f1
            best_epoch = epoch
            best_state = params.state()

        stopper.update(epoch, evaluation.loss)
        if stopper.should_stop(epoch) and epoch < train_config.max_epochs:
            stopped_early = True
            run_log.info(
                f"early stop at epoch {epoch} "
                f"(val loss last improved at epoch {stopper.best_epoch})"
            )
            break

    params.load_state(best_state)
    run_log.info(f"best epoch {best_epoch} with val F1 {best_f1:.4f}")
    return FitResult(
        params=params,
        history=history,
        best_epoch=best_epoch,
        best_val_f1=best_f1,
        epochs_trained=len(history),
        stopped_early=stopped_early,
        frozen=list(frozen),
    )
