import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ml_translit.errors import DataFormatError, VocabularyError
from ml_translit.pair import TranslitPair
from ml_translit.util import PathLike, atomic_write

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
N_SPECIALS = 2
SIDES = ("source", "target")
DEFAULT_TARGET_SIZE = 76


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional character <-> id map for one side of the pairs

    PAD is 0 and UNK is 1; content characters take ids from 2 upward in code point order.
    """

    side: str
    chars: Tuple[str, ...]
    char_to_id: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise VocabularyError(f"side must be one of {SIDES}, got {self.side!r}")
        mapping: Dict[str, int] = {}
        for i, char in enumerate(self.chars):
            if len(char) != 1:
                raise VocabularyError(f"vocabulary entry {char!r} is not a single character")
            if char in mapping:
                raise VocabularyError(f"duplicate character {char!r}")
            mapping[char] = i + N_SPECIALS
        object.__setattr__(self, "char_to_id", mapping)

    @property
    def id_to_char(self) -> List[str]:
        # specials have no surface form
        return ["", ""] + list(self.chars)

    @property
    def size(self) -> int:
        return len(self.chars) + N_SPECIALS

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    def __len__(self) -> int:
        return self.size

    def __contains__(self, char: object) -> bool:
        return char in self.char_to_id


@dataclass(frozen=True)
class EncodedSeq:
    ids: Tuple[int, ...]
    length: int
    max_len: int


def _side_text(pair: TranslitPair, side: str) -> str:
    if side == "source":
        return pair.romanized.lower()
    return pair.native


def char_counts(pairs: Iterable[TranslitPair], side: str) -> Counter:
    """Count how often each character occurs on one side of the pairs"""
    if side not in SIDES:
        raise VocabularyError(f"side must be one of {SIDES}, got {side!r}")
    counts: Counter = Counter()
    for pair in pairs:
        counts.update(_side_text(pair, side))
    return counts


def build_vocab(pairs: Sequence[TranslitPair], side: str, max_size: int = DEFAULT_TARGET_SIZE) -> Vocabulary:
    """Build the vocabulary of one side of the pairs

    Keeps the max_size - 2 most frequent characters; ties go to the lower code point.

    Args:
        pairs (Sequence[TranslitPair]): training pairs
        side (str): "source" (romanized) or "target" (Malayalam script)
        max_size (int): cap on the vocabulary size, specials included

    Raises:
        VocabularyError: pairs is empty
        ValueError: max_size is below 3

    Returns:
        Vocabulary: the built vocabulary
    """
    if max_size < N_SPECIALS + 1:
        raise ValueError(f"max_size must be >= {N_SPECIALS + 1}, got {max_size}")
    if not pairs:
        raise VocabularyError("no training data")

    counts = char_counts(pairs, side)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], ord(item[0])))
    kept = ranked[: max_size - N_SPECIALS]
    dropped = len(ranked) - len(kept)
    if dropped:
        logger.warning("%s vocabulary: dropped %d rare characters (cap %d)", side, dropped, max_size)

    chars = tuple(sorted((char for char, _ in kept), key=ord))
    return Vocabulary(side=side, chars=chars)


def encode(vocab: Vocabulary, word: str, max_len: int) -> EncodedSeq:
    """Map a word to ids, post-padded with PAD up to max_len

    Unknown characters become UNK; anything past max_len is cut off.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if vocab.side == "source":
        word = word.lower()
    if not word:
        raise VocabularyError("empty token")

    ids = [vocab.char_to_id.get(char, UNK_ID) for char in word[:max_len]]
    length = len(ids)
    ids += [PAD_ID] * (max_len - length)
    return EncodedSeq(ids=tuple(ids), length=length, max_len=max_len)


def encode_batch(vocab: Vocabulary, words: Sequence[str], max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """Encode several words into an int array [B, max_len] plus their lengths [B]"""
    encoded = [encode(vocab, word, max_len) for word in words]
    ids = np.array([seq.ids for seq in encoded], dtype=np.int64).reshape(len(encoded), max_len)
    lengths = np.array([seq.length for seq in encoded], dtype=np.int64)
    return ids, lengths


def decode(vocab: Vocabulary, ids: Iterable[int]) -> str:
    """Turn ids back into a string

    Stops at the first PAD; UNK ids are skipped.
    """
    ids = [int(i) for i in ids]
    for i in ids:
        if i < 0 or i >= vocab.size:
            raise VocabularyError(f"invalid token id {i} (vocabulary size {vocab.size})")

    id_to_char = vocab.id_to_char
    chars = []
    for i in ids:
        if i == PAD_ID:
            break
        if i == UNK_ID:
            continue
        chars.append(id_to_char[i])
    return "".join(chars)


def vocab_to_dict(vocab: Vocabulary) -> dict:
    return {"side": vocab.side, "specials": {"pad": PAD_ID, "unk": UNK_ID}, "chars": list(vocab.chars)}


def save_vocab(vocab: Vocabulary, path: PathLike) -> None:
    with atomic_write(path) as f:
        json.dump(vocab_to_dict(vocab), f, ensure_ascii=False, indent=2)
        f.write("\n")
    logger.info("wrote %s vocabulary (%d entries) to %s", vocab.side, vocab.size, path)


def vocab_from_dict(obj: object, source: str = "<vocab>") -> Vocabulary:
    """Validate a decoded vocabulary JSON object; errors name the offending field"""
    if not isinstance(obj, dict):
        raise DataFormatError(f"{source}: top level must be an object")
    for key in ("side", "specials", "chars"):
        if key not in obj:
            raise DataFormatError(f"{source}: missing field {key!r}")

    side = obj["side"]
    if side not in SIDES:
        raise DataFormatError(f"{source}: field 'side': expected one of {SIDES}, got {side!r}")

    specials = obj["specials"]
    if not isinstance(specials, dict):
        raise DataFormatError(f"{source}: field 'specials' must be an object")
    if specials.get("pad") != PAD_ID:
        raise DataFormatError(f"{source}: field 'specials.pad': PAD must be id {PAD_ID}, got {specials.get('pad')!r}")
    if specials.get("unk") != UNK_ID:
        raise DataFormatError(f"{source}: field 'specials.unk': UNK must be id {UNK_ID}, got {specials.get('unk')!r}")

    chars = obj["chars"]
    if not isinstance(chars, list):
        raise DataFormatError(f"{source}: field 'chars' must be a list")
    seen = set()
    for i, char in enumerate(chars):
        if not isinstance(char, str) or len(char) != 1:
            raise DataFormatError(f"{source}: field 'chars[{i}]': expected a single character, got {char!r}")
        if char in seen:
            raise DataFormatError(f"{source}: field 'chars[{i}]': duplicate character {char!r}")
        seen.add(char)

    return Vocabulary(side=side, chars=tuple(chars))


def load_vocab(path: PathLike) -> Vocabulary:
    try:
        with open(path, encoding="utf8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path}: not valid UTF-8 ({e.reason} at byte {e.start})") from e
    return vocab_from_dict(obj, source=str(path))


def vocab_filename(side: str) -> str:
    """File name of one side's vocabulary inside a vocabulary directory"""
    if side not in SIDES:
        raise VocabularyError(f"side must be one of {SIDES}, got {side!r}")
    return f"{side}_vocab.json"
