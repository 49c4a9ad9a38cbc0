"""Checkpoint files and training manifests

A checkpoint is laid out as

    b"TLTC" | version byte | header length (uint32 LE) | UTF-8 JSON header | payloads

The header is {"config": {...ModelConfig...}, "tensors": [{"name": ..., "shape": [...]}, ...]} and the
payloads are the tensors in header order, each row-major float32 little-endian.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ml_translit.errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    NotACheckpointError,
    TruncatedCheckpointError,
)
from ml_translit.model import ModelConfig, ModelParams, param_shapes
from ml_translit.train import TrainConfig, TrainHistory
from ml_translit.util import PathLike, atomic_write, file_sha256

logger = logging.getLogger(__name__)

MAGIC = b"TLTC"
VERSION = 1
STORAGE_DTYPE = np.dtype("<f4")
_HEADER_LENGTH = struct.Struct("<I")
_PREAMBLE_SIZE = len(MAGIC) + 1 + _HEADER_LENGTH.size


def _header(params: ModelParams, config: ModelConfig) -> bytes:
    tensors = [{"name": p.name, "shape": list(p.shape)} for p in params.named_parameters()]
    header = {"config": config.to_dict(), "tensors": tensors}
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf8")


def save_checkpoint(params: ModelParams, config: ModelConfig, path: PathLike) -> None:
    """Write params and config; the file appears only once it is complete"""
    expected = param_shapes(config)
    actual = [(p.name, p.shape) for p in params.named_parameters()]
    if actual != expected:
        raise CheckpointShapeError(f"parameters do not match the config: {actual} vs {expected}")

    header = _header(params, config)
    with atomic_write(path, mode="wb") as f:
        f.write(MAGIC)
        f.write(bytes([VERSION]))
        f.write(_HEADER_LENGTH.pack(len(header)))
        f.write(header)
        for p in params.named_parameters():
            f.write(np.ascontiguousarray(p.data, dtype=STORAGE_DTYPE).tobytes())
    logger.info("wrote checkpoint to %s", path)


def _parse_header(raw: bytes, path: PathLike) -> Tuple[ModelConfig, List[Tuple[str, Tuple[int, ...]]]]:
    try:
        header = json.loads(raw.decode("utf8"))
        config = ModelConfig.from_dict(header["config"])
        tensors = [(str(t["name"]), tuple(int(d) for d in t["shape"])) for t in header["tensors"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({e})") from e
    return config, tensors


def load_checkpoint(path: PathLike) -> Tuple[ModelParams, ModelConfig]:
    """Read a checkpoint written by save_checkpoint

    Raises:
        NotACheckpointError: the magic bytes are wrong
        CheckpointVersionError: the format version is not supported
        CheckpointShapeError: the tensor list disagrees with the shapes the config implies
        TruncatedCheckpointError: the file ends before the header or the payloads do
        CheckpointError: the header is unreadable or bytes follow the last payload

    Returns:
        Tuple[ModelParams, ModelConfig]: float64 parameters and their config
    """
    with open(path, "rb") as f:
        data = f.read()

    if data[: len(MAGIC)] != MAGIC:
        raise NotACheckpointError(f"{path}: not a checkpoint")
    if len(data) < _PREAMBLE_SIZE:
        raise TruncatedCheckpointError(f"{path}: truncated before the header")
    version = data[len(MAGIC)]
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")

    (header_length,) = _HEADER_LENGTH.unpack_from(data, len(MAGIC) + 1)
    payload_start = _PREAMBLE_SIZE + header_length
    if len(data) < payload_start:
        raise TruncatedCheckpointError(f"{path}: truncated header")
    config, tensors = _parse_header(data[_PREAMBLE_SIZE:payload_start], path)

    expected = param_shapes(config)
    if tensors != expected:
        for (name, shape), (want_name, want_shape) in zip(tensors, expected):
            if (name, shape) != (want_name, want_shape):
                raise CheckpointShapeError(
                    f"{path}: tensor {name} {shape} does not match {want_name} {want_shape} implied by the config"
                )
        raise CheckpointShapeError(f"{path}: expected {len(expected)} tensors, header lists {len(tensors)}")

    sizes = [int(np.prod(shape)) for _, shape in tensors]
    payload_bytes = sum(sizes) * STORAGE_DTYPE.itemsize
    found = len(data) - payload_start
    if found < payload_bytes:
        raise TruncatedCheckpointError(f"{path}: truncated payload ({found} of {payload_bytes} bytes)")
    if found > payload_bytes:
        raise CheckpointError(f"{path}: {found - payload_bytes} unexpected bytes after the payload")

    arrays: Dict[str, np.ndarray] = {}
    offset = payload_start
    for (name, shape), size in zip(tensors, sizes):
        values = np.frombuffer(data, dtype=STORAGE_DTYPE, count=size, offset=offset)
        arrays[name] = values.reshape(shape).astype(np.float64)
        offset += size * STORAGE_DTYPE.itemsize
    logger.info("loaded checkpoint %s", path)
    return ModelParams.from_arrays(config, arrays), config


@dataclass
class TrainingManifest:
    """Everything needed to repeat a training run

    No wall-clock data is stored, so two runs with one seed write identical manifests.
    """

    seed: int
    split_ratio: float
    model_config: ModelConfig
    train_config: TrainConfig
    data_sha256: Dict[str, str] = field(default_factory=dict)
    n_train: int = 0
    n_validation: int = 0
    final_metrics: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        model_config: ModelConfig,
        train_config: TrainConfig,
        data_files: Sequence[PathLike],
        split_ratio: float,
        n_train: int,
        n_validation: int,
        history: Optional[TrainHistory] = None,
    ) -> "TrainingManifest":
        return cls(
            seed=train_config.seed,
            split_ratio=split_ratio,
            model_config=model_config,
            train_config=train_config,
            data_sha256={str(p): file_sha256(p) for p in data_files},
            n_train=n_train,
            n_validation=n_validation,
            final_metrics=history.final_metrics() if history is not None else {},
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "split_ratio": self.split_ratio,
            "data_sha256": self.data_sha256,
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "final_metrics": self.final_metrics,
        }


def save_manifest(manifest: TrainingManifest, path: PathLike) -> None:
    with atomic_write(path) as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info("wrote training manifest to %s", path)
