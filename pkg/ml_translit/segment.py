import re
from dataclasses import dataclass
from typing import List, Mapping, Sequence, Tuple

from ml_translit.errors import RenderError

WORD = "word"
PASSTHROUGH = "passthrough"

# apostrophes, hyphens and digits end a word; "koottu-kaar" is two words
re_segment = re.compile(r"[A-Za-z]+|[^A-Za-z]+")


@dataclass(frozen=True)
class Segment:
    kind: str
    text: str
    # character offsets into the original sentence, end exclusive
    span: Tuple[int, int]

    @property
    def is_word(self) -> bool:
        return self.kind == WORD

    def byte_span(self, sentence: str) -> Tuple[int, int]:
        """The span as UTF-8 byte offsets into `sentence`"""
        start = len(sentence[: self.span[0]].encode("utf8"))
        return start, start + len(self.text.encode("utf8"))


def segment(sentence: str) -> List[Segment]:
    """Split a sentence into maximal runs of Latin letters and everything in between

    e.g. "ente veedu." -> [word "ente", passthrough " ", word "veedu", passthrough "."]

    Args:
        sentence (str): input text, may be empty

    Returns:
        List[Segment]: segments whose texts concatenate back to the sentence
    """
    segments = []
    for match in re_segment.finditer(sentence):
        kind = WORD if match.group()[0].isascii() and match.group()[0].isalpha() else PASSTHROUGH
        segments.append(Segment(kind=kind, text=match.group(), span=match.span()))
    return segments


def words(segments: Sequence[Segment]) -> List[str]:
    return [s.text for s in segments if s.is_word]


def reconstruct(segments: Sequence[Segment], rendered: Mapping[int, str]) -> str:
    """Join segments back into a sentence, replacing the i-th word (0-based) by rendered[i]

    Raises:
        RenderError: some word index has no rendering
    """
    pieces = []
    word_index = 0
    for s in segments:
        if not s.is_word:
            pieces.append(s.text)
            continue
        if word_index not in rendered:
            raise RenderError(f"unrendered word {word_index}")
        pieces.append(rendered[word_index])
        word_index += 1
    return "".join(pieces)
