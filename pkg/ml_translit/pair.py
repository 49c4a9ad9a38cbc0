from dataclasses import dataclass
from typing import List


@dataclass(frozen=True)
class TranslitPair:
    """One word pair as read from a transliteration corpus

    romanized is lowercased at load time; neither field is validated until clean_filter().
    """

    romanized: str
    native: str


@dataclass(frozen=True)
class DatasetSplit:
    train: List[TranslitPair]
    validation: List[TranslitPair]
    seed: int
    ratio: float
