from typing import Optional


class TranslitError(Exception):
    """Base class of every error raised by ml_translit"""


class DataFormatError(TranslitError, ValueError):
    """Malformed pair file, vocabulary file or config JSON"""


class VocabularyError(TranslitError, ValueError):
    pass


class ShapeError(TranslitError, ValueError):
    pass


class NonFiniteError(TranslitError, ArithmeticError):
    pass


class CheckpointError(TranslitError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class DivergenceError(TranslitError):
    def __init__(self, epoch: int, last_good_epoch: Optional[int]) -> None:
        self.epoch = epoch
        self.last_good_epoch = last_good_epoch
        super().__init__(f"diverged at epoch {epoch} (last good epoch: {last_good_epoch})")


class RenderError(TranslitError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class MetricError(TranslitError, ValueError):
    pass
