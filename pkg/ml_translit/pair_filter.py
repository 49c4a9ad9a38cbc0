import re
from abc import ABCMeta, abstractmethod
from typing import AbstractSet, Optional

from ml_translit.pair import TranslitPair


class BaseFilter(metaclass=ABCMeta):
    """Decides whether a training pair is dropped

    A pair for which filter() returns True is dropped and counted under `reason`.
    """

    reason: str = ""

    @abstractmethod
    def filter(self, pair: TranslitPair) -> bool:
        raise NotImplementedError()


class EmptyFieldFilter(BaseFilter):
    reason = "empty"

    def filter(self, pair: TranslitPair) -> bool:
        return not pair.romanized or not pair.native


class NonAlphaFilter(BaseFilter):
    """Rejects romanized words holding anything outside the source alphabet

    e.g. "ve3du" -> True
    e.g. "veedu" -> False
    """

    reason = "non_alpha"

    def __init__(self, alphabet: str = "abcdefghijklmnopqrstuvwxyz") -> None:
        self.re_word = re.compile(f"[{re.escape(alphabet)}]+")

    def filter(self, pair: TranslitPair) -> bool:
        return self.re_word.fullmatch(pair.romanized) is None


class TooLongFilter(BaseFilter):
    reason = "too_long"

    def __init__(self, max_src_len: int) -> None:
        if max_src_len < 1:
            raise ValueError(f"max_src_len must be >= 1, got {max_src_len}")
        self.max_src_len = max_src_len

    def filter(self, pair: TranslitPair) -> bool:
        return len(pair.romanized) > self.max_src_len


class TargetCharsetFilter(BaseFilter):
    """Rejects native words holding a character outside `charset`

    With charset=None nothing is rejected.
    """

    reason = "unknown_target"

    def __init__(self, charset: Optional[AbstractSet[str]] = None) -> None:
        self.charset = charset

    def filter(self, pair: TranslitPair) -> bool:
        if self.charset is None:
            return False
        return any(char not in self.charset for char in pair.native)
