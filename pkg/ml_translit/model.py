import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ml_translit.errors import DataFormatError
from ml_translit.layers import (
    DenseParams,
    EmbeddingParams,
    LSTMParams,
    bilstm_forward,
    dense_forward,
    embedding_forward,
    length_mask,
    lstm_forward,
    repeat_vector,
    scaled_dot_attention,
    time_distributed_dense,
)
from ml_translit.pair import TranslitPair
from ml_translit.tensor import Parameter, Tensor, concat, no_grad
from ml_translit.util import make_rng
from ml_translit.vocab import UNK_ID, EncodedSeq, Vocabulary, decode, encode_batch

logger = logging.getLogger(__name__)

DEFAULT_MAX_TGT_LEN = 64


@dataclass
class ModelConfig:
    max_src_len: int = 57
    max_tgt_len: int = DEFAULT_MAX_TGT_LEN
    emb_dim: int = 64
    enc_hidden: int = 128
    proj_dim: int = 128
    dec_hidden: int = 128
    tgt_vocab: int = 76
    src_vocab: int = 28

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"ModelConfig.{f.name} must be a positive integer, got {value!r}")
        if self.proj_dim != self.dec_hidden:
            # dot-product attention needs queries and keys of one width
            raise ValueError(f"proj_dim ({self.proj_dim}) must equal dec_hidden ({self.dec_hidden})")

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: Dict[str, object]) -> "ModelConfig":
        if not isinstance(obj, dict):
            raise DataFormatError(f"model config must be an object, got {type(obj).__name__}")
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise DataFormatError(f"unknown model config field {key!r}")
        return cls(**obj)  # type: ignore[arg-type]

    @staticmethod
    def derive_max_tgt_len(pairs: Sequence[TranslitPair], cap: int = DEFAULT_MAX_TGT_LEN) -> int:
        """Longest native word in the data, capped"""
        longest = max((len(pair.native) for pair in pairs), default=1)
        return max(1, min(longest, cap))


@dataclass(frozen=True)
class VocabPair:
    source: Vocabulary
    target: Vocabulary


@dataclass(frozen=True)
class SourceBatch:
    ids: np.ndarray  # [B, max_src_len]
    lengths: np.ndarray  # [B]

    @classmethod
    def from_encoded(cls, seqs: Sequence[EncodedSeq]) -> "SourceBatch":
        ids = np.array([seq.ids for seq in seqs], dtype=np.int64)
        lengths = np.array([seq.length for seq in seqs], dtype=np.int64)
        return cls(ids=ids, lengths=lengths)


@dataclass
class ModelParams:
    embedding: EmbeddingParams
    enc_fwd: LSTMParams
    enc_bwd: LSTMParams
    projection: DenseParams
    decoder: LSTMParams
    output: DenseParams

    def named_parameters(self) -> List[Parameter]:
        """Every trainable tensor, in checkpoint order"""
        return (
            self.embedding.parameters()
            + self.enc_fwd.parameters()
            + self.enc_bwd.parameters()
            + self.projection.parameters()
            + self.decoder.parameters()
            + self.output.parameters()
        )

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        def p(name: str) -> Parameter:
            return Parameter(name, arrays[name])

        def lstm(prefix: str) -> LSTMParams:
            return LSTMParams(W=p(f"{prefix}.W"), U=p(f"{prefix}.U"), b=p(f"{prefix}.b"))

        def dense(prefix: str) -> DenseParams:
            return DenseParams(W=p(f"{prefix}.W"), b=p(f"{prefix}.b"))

        return cls(
            embedding=EmbeddingParams(table=p("embedding.table")),
            enc_fwd=lstm("encoder.fwd"),
            enc_bwd=lstm("encoder.bwd"),
            projection=dense("projection"),
            decoder=lstm("decoder"),
            output=dense("output"),
        )


def param_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Names and shapes of all parameters, in checkpoint order"""
    emb, enc, proj, dec = config.emb_dim, config.enc_hidden, config.proj_dim, config.dec_hidden
    return [
        ("embedding.table", (config.src_vocab, emb)),
        ("encoder.fwd.W", (emb, 4 * enc)),
        ("encoder.fwd.U", (enc, 4 * enc)),
        ("encoder.fwd.b", (4 * enc,)),
        ("encoder.bwd.W", (emb, 4 * enc)),
        ("encoder.bwd.U", (enc, 4 * enc)),
        ("encoder.bwd.b", (4 * enc,)),
        ("projection.W", (2 * enc, proj)),
        ("projection.b", (proj,)),
        ("decoder.W", (proj, 4 * dec)),
        ("decoder.U", (dec, 4 * dec)),
        ("decoder.b", (4 * dec,)),
        ("output.W", (dec + proj, config.tgt_vocab)),
        ("output.b", (config.tgt_vocab,)),
    ]


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1"""
    rng = make_rng(seed)
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config):
        if len(shape) == 1:
            bias = np.zeros(shape)
            if name.startswith(("encoder.", "decoder.")):
                hidden = shape[0] // 4
                bias[hidden : 2 * hidden] = 1.0
            arrays[name] = bias
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParams.from_arrays(config, arrays)


def forward(
    params: ModelParams,
    config: ModelConfig,
    src: Union[SourceBatch, Sequence[EncodedSeq]],
    return_attention: bool = False,
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """Source ids to per-position output distributions [B, max_tgt_len, tgt_vocab]

    embedding -> Bi-LSTM -> dense projection P -> context = P at the last valid source position
    -> repeated max_tgt_len times -> decoder LSTM D -> attention(Q=D, K=V=P) -> concat(D, A)
    -> time-distributed softmax.

    Raises:
        ValueError: a source length is 0 or exceeds max_src_len
    """
    if not isinstance(src, SourceBatch):
        src = SourceBatch.from_encoded(src)
    lengths = src.lengths
    if lengths.size == 0:
        raise ValueError("forward: empty batch")
    if lengths.min() < 1:
        raise ValueError("forward: src_len 0")
    if lengths.max() > config.max_src_len:
        raise ValueError(f"forward: src_len {int(lengths.max())} exceeds max_src_len {config.max_src_len}")

    # columns past the longest source in the batch are padding for every row
    steps = int(lengths.max())
    ids = src.ids[:, :steps]
    rows = np.arange(len(lengths))

    embedded = embedding_forward(params.embedding, ids)
    encoded = bilstm_forward(params.enc_fwd, params.enc_bwd, embedded, lengths)
    projected = dense_forward(params.projection, encoded)
    context = projected[rows, lengths - 1]
    repeated = repeat_vector(context, config.max_tgt_len)
    decoded, _, _ = lstm_forward(params.decoder, repeated)
    attention = scaled_dot_attention(decoded, projected, projected, length_mask(lengths, steps))
    unified = concat([decoded, attention.context], axis=-1)
    probs = time_distributed_dense(params.output, unified, activation="softmax")

    if return_attention:
        return probs, attention.weights
    return probs


def predict_ids(params: ModelParams, config: ModelConfig, src: Union[SourceBatch, Sequence[EncodedSeq]]) -> np.ndarray:
    """Greedy per-position argmax [B, max_tgt_len]; ties go to the lowest id"""
    with no_grad():
        probs = forward(params, config, src)
    assert isinstance(probs, Tensor)
    return np.argmax(probs.data, axis=-1)


def transliterate_words(
    params: ModelParams, config: ModelConfig, vocabs: VocabPair, words: Sequence[str]
) -> List[str]:
    """Greedy transliteration of several words in one forward pass"""
    if not words:
        return []
    for word in words:
        if len(word) > config.max_src_len:
            logger.warning("%r is longer than %d characters; transliterating its truncation", word, config.max_src_len)
    ids, lengths = encode_batch(vocabs.source, words, config.max_src_len)
    predicted = predict_ids(params, config, SourceBatch(ids=ids, lengths=lengths))
    # a softmax wider than the target vocabulary may pick an id with no character
    predicted = np.where(predicted < vocabs.target.size, predicted, UNK_ID)
    return [decode(vocabs.target, row) for row in predicted]


def transliterate_word(params: ModelParams, config: ModelConfig, vocabs: VocabPair, word: str) -> str:
    return transliterate_words(params, config, vocabs, [word])[0]
