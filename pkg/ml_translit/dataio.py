import csv
import json
import logging
import math
from collections import Counter
from pathlib import Path
from typing import AbstractSet, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ml_translit.errors import DataFormatError
from ml_translit.pair import DatasetSplit, TranslitPair
from ml_translit.pair_filter import BaseFilter, EmptyFieldFilter, NonAlphaFilter, TargetCharsetFilter, TooLongFilter
from ml_translit.segment import reconstruct, segment
from ml_translit.util import PathLike, load_dictionary, make_rng, read_lines

logger = logging.getLogger(__name__)

FORMATS = ("tsv", "csv", "jsonl")
DEFAULT_MAX_SRC_LEN = 57


def infer_format(path: PathLike) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    return suffix if suffix in FORMATS else "tsv"


def _make_pair(romanized: str, native: str) -> TranslitPair:
    return TranslitPair(romanized=romanized.strip().lower(), native=native.strip())


def _parse_columns(
    path: PathLike, lines: List[str], delimiter: str, swap_columns: bool, first_row: int
) -> List[TranslitPair]:
    pairs = []
    if delimiter == "\t":
        rows: Iterable[List[str]] = (line.split("\t") for line in lines)
    else:
        rows = csv.reader(lines)
    for row_number, row in enumerate(rows, start=first_row):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < 2:
            raise DataFormatError(f"{path}: row {row_number}: expected 2 columns, found {len(row)}")
        # extra columns (e.g. the attestation count of the Dakshina lexicons) are ignored
        native, romanized = row[0], row[1]
        if swap_columns:
            native, romanized = romanized, native
        pairs.append(_make_pair(romanized, native))
    return pairs


def _parse_jsonl(path: PathLike, lines: List[str], first_row: int) -> List[TranslitPair]:
    pairs = []
    for row_number, line in enumerate(lines, start=first_row):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}: row {row_number}: {e.msg}") from e
        if not isinstance(obj, dict):
            raise DataFormatError(f"{path}: row {row_number}: expected an object")
        for key in ("ml", "en"):
            if not isinstance(obj.get(key), str):
                raise DataFormatError(f"{path}: row {row_number}: missing string field {key!r}")
        pairs.append(_make_pair(obj["en"], obj["ml"]))
    return pairs


def load_pairs(
    path: PathLike, format: Optional[str] = None, swap_columns: bool = False, header: bool = False
) -> List[TranslitPair]:
    """Load word pairs from a two-column corpus file

    TSV and CSV rows are (native, romanized), the ml/en column order of the Dakshina lexicons;
    swap_columns reads (romanized, native) instead. JSONL rows are objects with "ml" and "en" keys.
    Fields are stripped, the romanized side is lowercased and blank lines are skipped.

    Args:
        path (PathLike): corpus file
        format (Optional[str]): "tsv", "csv" or "jsonl"; inferred from the suffix when omitted
        swap_columns (bool): columns are (romanized, native)
        header (bool): skip the first line

    Raises:
        DataFormatError: a row lacks a column or the file is not UTF-8

    Returns:
        List[TranslitPair]: pairs in file order, duplicates kept
    """
    format = format or infer_format(path)
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {format!r}")

    lines = read_lines(path)
    first_row = 1
    if header and lines:
        lines = lines[1:]
        first_row = 2

    if format == "jsonl":
        pairs = _parse_jsonl(path, lines, first_row)
    else:
        pairs = _parse_columns(path, lines, "\t" if format == "tsv" else ",", swap_columns, first_row)
    logger.info("loaded %d pairs from %s", len(pairs), path)
    return pairs


def load_many(paths: Sequence[PathLike], **kwargs) -> List[TranslitPair]:
    """Concatenate several corpora in the given order"""
    pairs: List[TranslitPair] = []
    for path in paths:
        pairs.extend(load_pairs(path, **kwargs))
    return pairs


def malayalam_charset(groups: Optional[Sequence[str]] = None) -> FrozenSet[str]:
    """Characters of the Malayalam alphabet resource, optionally limited to some groups"""
    target = load_dictionary()["target"]
    names = list(target) if groups is None else list(groups)
    unknown = [name for name in names if name not in target]
    if unknown:
        raise ValueError(f"unknown character groups {unknown}; available: {sorted(target)}")
    return frozenset(char for name in names for char in target[name])


def default_filters(
    max_src_len: int = DEFAULT_MAX_SRC_LEN,
    source_alphabet: Optional[str] = None,
    target_vocab_chars: Optional[AbstractSet[str]] = None,
) -> List[BaseFilter]:
    alphabet = source_alphabet if source_alphabet is not None else load_dictionary()["latin_letters"]
    return [
        EmptyFieldFilter(),
        NonAlphaFilter(alphabet),
        TooLongFilter(max_src_len),
        TargetCharsetFilter(target_vocab_chars),
    ]


def clean_filter(
    pairs: Sequence[TranslitPair],
    max_src_len: int = DEFAULT_MAX_SRC_LEN,
    source_alphabet: Optional[str] = None,
    target_vocab_chars: Optional[AbstractSet[str]] = None,
) -> Tuple[List[TranslitPair], Counter]:
    """Drop pairs unfit for training

    Each rejected pair is counted once, under the first filter that rejects it
    (empty, non_alpha, too_long, unknown_target).

    Args:
        pairs (Sequence[TranslitPair]): loaded pairs
        max_src_len (int): longest romanized word kept
        source_alphabet (Optional[str]): allowed romanized characters, a-z by default
        target_vocab_chars (Optional[AbstractSet[str]]): allowed native characters, unchecked when None

    Returns:
        Tuple[List[TranslitPair], Counter]: kept pairs in input order and rejection counts by reason
    """
    filters = default_filters(max_src_len, source_alphabet, target_vocab_chars)
    kept = []
    stats: Counter = Counter()
    for pair in pairs:
        for pair_filter in filters:
            if pair_filter.filter(pair):
                stats[pair_filter.reason] += 1
                break
        else:
            kept.append(pair)
    if stats:
        logger.info("kept %d of %d pairs; rejected %s", len(kept), len(pairs), dict(stats))
    return kept, stats


def split(pairs: Sequence[TranslitPair], ratio: float = 0.95, seed: int = 0) -> DatasetSplit:
    """Shuffle with `seed` and put the first ceil(ratio * N) pairs in train, the rest in validation

    Raises:
        ValueError: ratio outside (0, 1) or fewer than 2 pairs
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0,1)")
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs to split, got {len(pairs)}")

    order = make_rng(seed).permutation(len(pairs))
    # rounding first keeps 0.8 * 10 at 8 rather than ceil(8.000000000000002)
    n_train = math.ceil(round(ratio * len(pairs), 9))
    return DatasetSplit(
        train=[pairs[i] for i in order[:n_train]],
        validation=[pairs[i] for i in order[n_train:]],
        seed=seed,
        ratio=ratio,
    )


def max_romanized_length(pairs: Sequence[TranslitPair]) -> int:
    return max((len(pair.romanized) for pair in pairs), default=0)


def drop_vowels(word: str, rate: float, rng: np.random.Generator) -> str:
    """Drop each non-initial Latin vowel with probability `rate`

    Simulates the vowel-sparse "adhoc" typing style, e.g. "veedu" -> "vdu".
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    vowels = load_dictionary()["latin_vowels"]
    draws = rng.random(len(word))
    return "".join(
        char for i, char in enumerate(word) if i == 0 or char.lower() not in vowels or draws[i] >= rate
    )


def adhoc_text(sentence: str, rate: float, rng: np.random.Generator) -> str:
    """drop_vowels applied to every Latin word of a sentence; everything else is kept"""
    segments = segment(sentence)
    rendered = {}
    for s in segments:
        if s.is_word:
            rendered[len(rendered)] = drop_vowels(s.text, rate, rng)
    return reconstruct(segments, rendered)
