import hashlib
import json
import os
import tempfile
from contextlib import contextmanager
from functools import lru_cache
from pathlib import Path
from typing import IO, Any, Dict, Iterator, List, Union

import numpy as np

from ml_translit.errors import DataFormatError

PathLike = Union[str, "os.PathLike[str]"]


@lru_cache(maxsize=None)
def load_dictionary(name: str = "malayalam.json") -> Dict[str, Any]:
    """Load a JSON resource shipped under ml_translit/dictionary/

    Args:
        name (str): file name inside dictionary/

    Returns:
        Dict[str, Any]: parsed JSON
    """
    with Path(__file__).parent.joinpath("dictionary", name).open(encoding="utf8") as f:
        return json.load(f)


@contextmanager
def atomic_write(path: PathLike, mode: str = "w", encoding: str = "utf8") -> Iterator[IO[Any]]:
    """Write to a temporary file next to `path` and rename it into place on success

    Nothing is left at `path` if the block raises.

    Args:
        path (PathLike): destination
        mode (str): "w" or "wb"
        encoding (str): text encoding, ignored for binary mode

    Yields:
        IO[Any]: the open temporary file
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=str(target.parent))
    try:
        if "b" in mode:
            f = os.fdopen(fd, mode)
        else:
            # newline="" keeps "\n" as written on every platform
            f = os.fdopen(fd, mode, encoding=encoding, newline="")
        with f:
            yield f
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_rng(seed: int) -> np.random.Generator:
    """Every random draw in the package goes through a generator made here"""
    return np.random.default_rng(seed)


def split_lines(text: str) -> List[str]:
    """Split on LF, CRLF and CR only

    U+2028, form feeds and the other separators str.splitlines() honours stay inside the line.
    A trailing line break does not start an extra empty line.
    """
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    if lines[-1] == "":
        lines.pop()
    return lines


def read_lines(path: PathLike) -> List[str]:
    """split_lines() over a UTF-8 file

    Raises:
        DataFormatError: the file is not valid UTF-8
    """
    try:
        with open(path, encoding="utf8", newline=None) as f:
            return split_lines(f.read())
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path}: not valid UTF-8 ({e.reason} at byte {e.start})") from e
