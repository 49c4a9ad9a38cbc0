import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pendulum

from ml_translit.errors import DataFormatError, DivergenceError, NonFiniteError
from ml_translit.metrics import cer
from ml_translit.model import ModelConfig, ModelParams, SourceBatch, VocabPair, forward, transliterate_words
from ml_translit.pair import TranslitPair
from ml_translit.tensor import Parameter, Tensor, backward, masked_cross_entropy, no_grad, zero_grads
from ml_translit.util import make_rng
from ml_translit.vocab import PAD_ID, encode, encode_batch

logger = logging.getLogger(__name__)


def _is_int(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    # stop after this many epochs without a better validation loss; None disables
    patience: Optional[int] = None
    clip_norm: Optional[float] = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("epochs", "batch_size"):
            value = getattr(self, name)
            if not _is_int(value) or value < 1:
                raise ValueError(f"TrainConfig.{name} must be a positive integer, got {value!r}")
        for name in ("learning_rate", "beta1", "beta2", "epsilon"):
            value = getattr(self, name)
            if not _is_number(value):
                raise ValueError(f"TrainConfig.{name} must be a number, got {value!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"TrainConfig.learning_rate must be > 0, got {self.learning_rate!r}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"TrainConfig.{name} must be in [0, 1), got {value!r}")
        if not self.epsilon > 0:
            raise ValueError(f"TrainConfig.epsilon must be > 0, got {self.epsilon!r}")
        if not _is_int(self.seed):
            raise ValueError(f"TrainConfig.seed must be an integer, got {self.seed!r}")
        if not isinstance(self.shuffle, bool):
            raise ValueError(f"TrainConfig.shuffle must be true or false, got {self.shuffle!r}")
        if self.patience is not None and (not _is_int(self.patience) or self.patience < 1):
            raise ValueError(f"TrainConfig.patience must be an integer >= 1 or null, got {self.patience!r}")
        if self.clip_norm is not None and (not _is_number(self.clip_norm) or not self.clip_norm > 0):
            raise ValueError(f"TrainConfig.clip_norm must be a number > 0 or null, got {self.clip_norm!r}")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: Dict[str, object]) -> "TrainConfig":
        if not isinstance(obj, dict):
            raise DataFormatError(f"train config must be an object, got {type(obj).__name__}")
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise DataFormatError(f"unknown train config field {key!r}")
        return cls(**obj)  # type: ignore[arg-type]


@dataclass
class TrainHistory:
    """One entry per completed epoch

    val_loss and val_char_accuracy are None for epochs trained without validation pairs.
    """

    train_loss: List[float] = field(default_factory=list)
    val_loss: List[Optional[float]] = field(default_factory=list)
    val_char_accuracy: List[Optional[float]] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)
    clamped: int = 0
    stopped_early: bool = False
    started_at: Optional[pendulum.DateTime] = None
    wall_time: float = 0.0

    @property
    def epochs_completed(self) -> int:
        return len(self.train_loss)

    def record(
        self, train_loss: float, val_loss: Optional[float], val_char_accuracy: Optional[float], seconds: float
    ) -> None:
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.val_char_accuracy.append(val_char_accuracy)
        self.epoch_seconds.append(seconds)

    def wall_time_in_words(self) -> str:
        return pendulum.duration(seconds=round(self.wall_time)).in_words() or "0 seconds"

    def final_metrics(self) -> Dict[str, object]:
        """Last-epoch numbers, free of timestamps"""
        if not self.train_loss:
            return {"epochs_completed": 0}
        return {
            "epochs_completed": self.epochs_completed,
            "train_loss": self.train_loss[-1],
            "val_loss": self.val_loss[-1],
            "val_char_accuracy": self.val_char_accuracy[-1],
            "stopped_early": self.stopped_early,
        }


@dataclass(frozen=True)
class EncodedPairs:
    """A corpus encoded once, ready to be sliced into batches"""

    src: SourceBatch
    targets: np.ndarray  # [N, max_tgt_len]
    target_lengths: np.ndarray  # [N]

    def __len__(self) -> int:
        return len(self.target_lengths)

    def take(self, index: np.ndarray) -> "EncodedPairs":
        return EncodedPairs(
            src=SourceBatch(ids=self.src.ids[index], lengths=self.src.lengths[index]),
            targets=self.targets[index],
            target_lengths=self.target_lengths[index],
        )

    @property
    def loss_mask(self) -> np.ndarray:
        # content positions plus the first PAD after them, which marks the end of the word
        steps = self.targets.shape[1]
        scored = np.minimum(self.target_lengths + 1, steps)
        return np.arange(steps)[None, :] < scored[:, None]


def encode_pairs(pairs: Sequence[TranslitPair], vocabs: VocabPair, config: ModelConfig) -> EncodedPairs:
    src_ids, src_lengths = encode_batch(vocabs.source, [pair.romanized for pair in pairs], config.max_src_len)
    targets = [encode(vocabs.target, pair.native, config.max_tgt_len) for pair in pairs]
    return EncodedPairs(
        src=SourceBatch(ids=src_ids, lengths=src_lengths),
        targets=np.array([seq.ids for seq in targets], dtype=np.int64).reshape(len(targets), config.max_tgt_len),
        target_lengths=np.array([seq.length for seq in targets], dtype=np.int64),
    )


def batch_loss(
    params: ModelParams, config: ModelConfig, batch: EncodedPairs, stats: Optional[Dict[str, int]] = None
) -> Tensor:
    probs = forward(params, config, batch.src)
    assert isinstance(probs, Tensor)
    return masked_cross_entropy(probs, batch.targets, pad_id=PAD_ID, mask=batch.loss_mask, stats=stats)


class Adam:
    """Adam with bias-corrected moment estimates; updates Parameter.data in place"""

    def __init__(
        self,
        params: Sequence[Parameter],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.steps = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @classmethod
    def from_config(cls, params: Sequence[Parameter], train_cfg: TrainConfig) -> "Adam":
        return cls(params, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.epsilon)

    def step(self) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale all gradients together so their global L2 norm is at most max_norm

    Returns:
        float: the norm before clipping
    """
    total = math.sqrt(sum(float(np.sum(p.grad**2)) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


def validation_scores(
    params: ModelParams, config: ModelConfig, data: EncodedPairs, batch_size: int
) -> Dict[str, float]:
    """Masked loss and per-position accuracy over the scored target positions"""
    total_loss = 0.0
    correct = 0
    n_scored = 0
    with no_grad():
        for begin in range(0, len(data), batch_size):
            batch = data.take(np.arange(begin, min(begin + batch_size, len(data))))
            probs = forward(params, config, batch.src)
            assert isinstance(probs, Tensor)
            mask = batch.loss_mask
            loss = masked_cross_entropy(probs, batch.targets, pad_id=PAD_ID, mask=mask)
            scored = int(mask.sum())
            total_loss += loss.item() * scored
            correct += int(np.sum((np.argmax(probs.data, axis=-1) == batch.targets) & mask))
            n_scored += scored
    return {"loss": total_loss / n_scored, "char_accuracy": correct / n_scored}


def _check_vocab_fits(config: ModelConfig, vocabs: VocabPair) -> None:
    if vocabs.source.size > config.src_vocab:
        raise ValueError(f"source vocabulary has {vocabs.source.size} entries but src_vocab is {config.src_vocab}")
    if vocabs.target.size > config.tgt_vocab:
        raise ValueError(f"target vocabulary has {vocabs.target.size} entries but tgt_vocab is {config.tgt_vocab}")


def train(
    params: ModelParams,
    config: ModelConfig,
    train_cfg: TrainConfig,
    train_pairs: Sequence[TranslitPair],
    val_pairs: Sequence[TranslitPair],
    vocabs: VocabPair,
    on_epoch: Optional[Callable[[int, TrainHistory], None]] = None,
) -> TrainHistory:
    """Minimize the masked cross-entropy with Adam, updating params in place

    The shuffle order of every epoch comes from one generator seeded with train_cfg.seed, so two
    runs with the same seed and data produce bit-identical parameters.

    Args:
        params (ModelParams): parameters to train
        config (ModelConfig): model dimensions
        train_cfg (TrainConfig): optimizer and schedule
        train_pairs (Sequence[TranslitPair]): training pairs
        val_pairs (Sequence[TranslitPair]): validation pairs, may be empty
        vocabs (VocabPair): source and target vocabularies
        on_epoch (Optional[Callable]): called with (epoch, history) after every completed epoch

    Raises:
        ValueError: train_pairs is empty or a vocabulary is wider than the model
        DivergenceError: a loss or parameter became NaN/Inf

    Returns:
        TrainHistory: per-epoch losses and validation accuracy
    """
    if not train_pairs:
        raise ValueError("empty training set")
    _check_vocab_fits(config, vocabs)

    train_data = encode_pairs(train_pairs, vocabs, config)
    val_data = encode_pairs(val_pairs, vocabs, config) if val_pairs else None
    parameters = params.named_parameters()
    optimizer = Adam.from_config(parameters, train_cfg)
    rng = make_rng(train_cfg.seed)
    stats: Dict[str, int] = {}

    history = TrainHistory(started_at=pendulum.now())
    logger.info(
        "training on %d pairs (%d validation) for up to %d epochs, batch size %d",
        len(train_data),
        len(val_data) if val_data is not None else 0,
        train_cfg.epochs,
        train_cfg.batch_size,
    )
    clock = time.perf_counter()
    best_val = math.inf
    epochs_since_best = 0

    for epoch in range(1, train_cfg.epochs + 1):
        epoch_start = time.perf_counter()
        order = rng.permutation(len(train_data)) if train_cfg.shuffle else np.arange(len(train_data))
        total = 0.0
        n_scored = 0
        try:
            for begin in range(0, len(order), train_cfg.batch_size):
                batch = train_data.take(order[begin : begin + train_cfg.batch_size])
                zero_grads(parameters)
                loss = batch_loss(params, config, batch, stats)
                backward(loss, parameters)
                if train_cfg.clip_norm is not None:
                    clip_grad_norm(parameters, train_cfg.clip_norm)
                optimizer.step()

                scored = int(batch.loss_mask.sum())
                total += loss.item() * scored
                n_scored += scored
                logger.debug("epoch %d step %d loss %.6f", epoch, optimizer.steps, loss.item())
            if not all(np.isfinite(p.data).all() for p in parameters):
                raise NonFiniteError("non-finite parameter after update")
        except NonFiniteError as e:
            raise DivergenceError(epoch, history.epochs_completed or None) from e

        train_loss = total / n_scored
        if not math.isfinite(train_loss):
            raise DivergenceError(epoch, history.epochs_completed or None)

        val_loss: Optional[float] = None
        val_accuracy: Optional[float] = None
        if val_data is not None:
            scores = validation_scores(params, config, val_data, train_cfg.batch_size)
            val_loss, val_accuracy = scores["loss"], scores["char_accuracy"]

        seconds = time.perf_counter() - epoch_start
        history.record(train_loss, val_loss, val_accuracy, seconds)
        logger.info(
            "epoch %d/%d train loss %.4f val loss %s val char acc %s (%s)",
            epoch,
            train_cfg.epochs,
            train_loss,
            "-" if val_loss is None else f"{val_loss:.4f}",
            "-" if val_accuracy is None else f"{val_accuracy:.4f}",
            pendulum.duration(seconds=round(seconds)).in_words() or "under a second",
        )
        if on_epoch is not None:
            on_epoch(epoch, history)

        if train_cfg.patience is not None and val_loss is not None:
            if val_loss < best_val:
                best_val = val_loss
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= train_cfg.patience:
                    logger.info("no validation improvement for %d epochs; stopping", epochs_since_best)
                    history.stopped_early = True
                    break

    history.clamped = stats.get("clamped", 0)
    history.wall_time = time.perf_counter() - clock
    logger.info("training finished after %d epochs in %s", history.epochs_completed, history.wall_time_in_words())
    return history


@dataclass(frozen=True)
class PairScores:
    word_accuracy: float
    cer: float


def score_pairs(
    params: ModelParams, config: ModelConfig, vocabs: VocabPair, pairs: Sequence[TranslitPair], batch_size: int = 256
) -> PairScores:
    """Exact-word accuracy and mean character error rate of greedy transliteration"""
    if not pairs:
        raise ValueError("no pairs to score")
    predictions: List[str] = []
    for begin in range(0, len(pairs), batch_size):
        words = [pair.romanized for pair in pairs[begin : begin + batch_size]]
        predictions.extend(transliterate_words(params, config, vocabs, words))

    exact = sum(pred == pair.native for pred, pair in zip(predictions, pairs))
    errors = [cer(pred, pair.native) for pred, pair in zip(predictions, pairs)]
    return PairScores(word_accuracy=exact / len(pairs), cer=float(np.mean(errors)))
