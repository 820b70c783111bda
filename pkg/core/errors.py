"""Exception hierarchy shared by the library and the CLI exit-code contract."""

from typing import Iterable, Optional, Sequence


class GsmoError(Exception):
    """Base class for all framework errors."""

    exit_code: int = 1


class ConfigError(GsmoError):
    """Invalid experiment, split, synthetic or training configuration."""

    exit_code = 2


class DataError(GsmoError):
    """I/O failure, undecodable image or malformed manifest."""

    exit_code = 3


class TrainingDivergedError(GsmoError):
    """A training run produced a non-finite loss."""

    exit_code = 4

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Non-finite loss {loss} at epoch {epoch}, batch {batch}")


class LabelMismatchError(GsmoError):
    """Dataset labels disagree with the label spaces stored in a checkpoint."""

    exit_code = 5

    def __init__(self, missing: Iterable[str], extra: Iterable[str]):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(
            f"Label spaces differ: missing from data {self.missing}, "
            f"not in checkpoint {self.extra}"
        )


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: Optional[str] = None):
        described = " vs ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {described}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class CheckpointError(GsmoError):
    """Base class for checkpoint read/validation failures."""

    exit_code = 3

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MagicMismatchError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass
