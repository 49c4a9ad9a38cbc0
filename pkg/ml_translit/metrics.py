"""CER, WER and sentence BLEU, their corpus aggregates, and character confusion mining

Scores are fractions internally; reports show them as percentages with one decimal.
"""
import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import regex
import sacrebleu

from ml_translit.errors import DataFormatError, MetricError
from ml_translit.util import PathLike, atomic_write, load_dictionary, read_lines

logger = logging.getLogger(__name__)

SMOOTHING_METHODS = ("exp", "add-one")
# sacrebleu smooth_method and smooth_value for each
CORPUS_SMOOTHING: Dict[str, Tuple[str, Optional[int]]] = {"exp": ("exp", None), "add-one": ("add-k", 1)}
METRICS = ("cer", "wer", "bleu")
re_grapheme = regex.compile(r"\X")


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs"""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def _characters(text: str, grapheme: bool) -> List[str]:
    return re_grapheme.findall(text) if grapheme else list(text)


def cer(pred: str, ref: str, grapheme: bool = False) -> float:
    """Character edit distance divided by the reference length; may exceed 1

    Args:
        pred (str): predicted sentence
        ref (str): reference sentence
        grapheme (bool): count grapheme clusters instead of code points

    Raises:
        MetricError: ref is empty
    """
    if not ref:
        raise MetricError("empty reference")
    ref_chars = _characters(ref, grapheme)
    return edit_distance(_characters(pred, grapheme), ref_chars) / len(ref_chars)


def wer(pred: str, ref: str) -> float:
    ref_tokens = ref.split()
    if not ref_tokens:
        raise MetricError("empty reference")
    return edit_distance(pred.split(), ref_tokens) / len(ref_tokens)


@dataclass
class BleuStats:
    """Clipped n-gram matches and n-gram totals per order, with both lengths"""

    correct: List[int]
    total: List[int]
    pred_len: int
    ref_len: int


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(pred: str, ref: str, max_n: int = 4) -> BleuStats:
    pred_tokens, ref_tokens = pred.split(), ref.split()
    if not ref_tokens:
        raise MetricError("empty reference")
    correct, total = [], []
    for n in range(1, max_n + 1):
        pred_ngrams = _ngrams(pred_tokens, n)
        ref_ngrams = _ngrams(ref_tokens, n)
        # clipped counts
        correct.append(sum((pred_ngrams & ref_ngrams).values()))
        total.append(sum(pred_ngrams.values()))
    return BleuStats(correct=correct, total=total, pred_len=len(pred_tokens), ref_len=len(ref_tokens))


def bleu_from_stats(stats: BleuStats, smoothing: str = "exp") -> float:
    """BLEU in [0, 1] from n-gram statistics

    smoothing="exp" gives the k-th order without matches the precision 1 / (2^k * total);
    smoothing="add-one" uses (0 + 1) / (total + 1) for it instead. Orders longer than the
    prediction count as zero matches out of one n-gram.
    """
    if smoothing not in SMOOTHING_METHODS:
        raise ValueError(f"smoothing must be one of {SMOOTHING_METHODS}, got {smoothing!r}")
    if stats.pred_len == 0:
        return 0.0

    log_precisions = []
    zero_orders = 0
    for correct, total in zip(stats.correct, stats.total):
        total = max(total, 1)
        if correct > 0:
            log_precisions.append(math.log(correct / total))
        elif smoothing == "exp":
            zero_orders += 1
            log_precisions.append(-math.log(2**zero_orders * total))
        else:
            log_precisions.append(-math.log(total + 1))

    brevity_penalty = 1.0
    if stats.pred_len < stats.ref_len:
        brevity_penalty = math.exp(1.0 - stats.ref_len / stats.pred_len)
    return brevity_penalty * math.exp(sum(log_precisions) / len(log_precisions))


def bleu(pred: str, ref: str, max_n: int = 4, smoothing: str = "exp") -> float:
    """Sentence BLEU over whitespace tokens

    e.g. bleu("a b c d e", "a b c d f") -> 0.2 ** 0.25 ≈ 0.6687

    Raises:
        MetricError: ref has no tokens
    """
    return bleu_from_stats(bleu_stats(pred, ref, max_n), smoothing)


def corpus_bleu(preds: Sequence[str], refs: Sequence[str], smoothing: str = "exp") -> float:
    """Corpus BLEU in [0, 1] computed by sacrebleu on whitespace tokens

    "add-one" maps to sacrebleu's add-k with k = 1, which it applies to every order above unigrams.

    Raises:
        MetricError: lengths differ, nothing to score or a reference has no tokens
    """
    if smoothing not in SMOOTHING_METHODS:
        raise ValueError(f"smoothing must be one of {SMOOTHING_METHODS}, got {smoothing!r}")
    _check_lengths(preds, refs)
    if any(not ref.split() for ref in refs):
        raise MetricError("empty reference")
    smooth_method, smooth_value = CORPUS_SMOOTHING[smoothing]
    score = sacrebleu.corpus_bleu(
        list(preds), [list(refs)], smooth_method=smooth_method, smooth_value=smooth_value, tokenize="none"
    )
    return score.score / 100


def micro_cer(preds: Sequence[str], refs: Sequence[str], grapheme: bool = False) -> float:
    """Total character edits over total reference characters"""
    _check_lengths(preds, refs)
    edits = 0
    length = 0
    for pred, ref in zip(preds, refs):
        if not ref:
            raise MetricError("empty reference")
        ref_chars = _characters(ref, grapheme)
        edits += edit_distance(_characters(pred, grapheme), ref_chars)
        length += len(ref_chars)
    return edits / length


def confusion_pairs(pred: str, ref: str) -> Counter:
    """Substituted (ref_char, pred_char) pairs along one optimal alignment

    Backtrace preference: match > substitute > delete > insert.

    e.g. confusion_pairs("kat", "cat") -> {("c", "k"): 1}
    """
    n, m = len(ref), len(pred)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (ref[i - 1] != pred[j - 1]))

    pairs: Counter = Counter()
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == pred[j - 1] and d[i, j] == d[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + 1:
            pairs[(ref[i - 1], pred[j - 1])] += 1
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            i -= 1
        else:
            j -= 1
    return pairs


def character_group(char: str) -> str:
    for group, chars in load_dictionary()["target"].items():
        if char in chars:
            return group
    return "other"


def confusion_by_group(confusion: Counter) -> Counter:
    """Fold character confusions into (ref_group, pred_group) counts, e.g. ("vowel_sign", "vowel_sign")"""
    grouped: Counter = Counter()
    for (ref_char, pred_char), count in confusion.items():
        grouped[(character_group(ref_char), character_group(pred_char))] += count
    return grouped


@dataclass(frozen=True)
class SentenceScore:
    cer: float
    wer: float
    bleu: float


def score_sentence(pred: str, ref: str, grapheme: bool = False, smoothing: str = "exp") -> SentenceScore:
    return SentenceScore(cer=cer(pred, ref, grapheme), wer=wer(pred, ref), bleu=bleu(pred, ref, smoothing=smoothing))


def to_pct(value: float) -> float:
    return round(value * 100, 1)


@dataclass
class CorpusReport:
    per_sentence: List[SentenceScore]
    confusion: Counter = field(default_factory=Counter)

    def __post_init__(self) -> None:
        if not self.per_sentence:
            raise MetricError("a report needs at least one sentence")

    @property
    def n(self) -> int:
        return len(self.per_sentence)

    def values(self, metric: str) -> np.ndarray:
        if metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
        return np.array([getattr(score, metric) for score in self.per_sentence])

    @property
    def mean_cer(self) -> float:
        return float(np.mean(self.values("cer")))

    @property
    def mean_wer(self) -> float:
        return float(np.mean(self.values("wer")))

    @property
    def mean_bleu(self) -> float:
        return float(np.mean(self.values("bleu")))

    def summary(self) -> Dict[str, object]:
        return {
            "cer_pct": to_pct(self.mean_cer),
            "wer_pct": to_pct(self.mean_wer),
            "bleu_pct": to_pct(self.mean_bleu),
            "n": self.n,
        }

    def render(self) -> str:
        """CER / WER / BLEU percentages such as 7.4 / 34.5 / 32.7"""
        return f"{self.mean_cer * 100:.1f} / {self.mean_wer * 100:.1f} / {self.mean_bleu * 100:.1f}"

    def histogram(self, metric: str, bins: int = 10) -> Tuple[np.ndarray, np.ndarray]:
        """Counts and bin edges of one per-sentence metric; CER and WER bins stretch past 1 when needed"""
        values = self.values(metric)
        upper = 1.0 if metric == "bleu" else max(1.0, float(values.max()))
        return np.histogram(values, bins=bins, range=(0.0, upper))


def _check_lengths(preds: Sequence[str], refs: Sequence[str]) -> None:
    if len(preds) != len(refs):
        raise MetricError(f"{len(preds)} predictions but {len(refs)} references")
    if not refs:
        raise MetricError("no sentences to score")


def corpus_report(
    preds: Sequence[str], refs: Sequence[str], grapheme: bool = False, smoothing: str = "exp"
) -> CorpusReport:
    """Per-sentence scores, their macro means and summed confusion counts

    Raises:
        MetricError: preds and refs differ in length, are empty, or a reference is empty
    """
    _check_lengths(preds, refs)
    scores = []
    confusion: Counter = Counter()
    for pred, ref in zip(preds, refs):
        scores.append(score_sentence(pred, ref, grapheme, smoothing))
        confusion.update(confusion_pairs(pred, ref))
    return CorpusReport(per_sentence=scores, confusion=confusion)


def write_report_json(summary: Dict[str, object], path: PathLike) -> None:
    with atomic_write(path) as f:
        json.dump(summary, f, ensure_ascii=False, indent=2)
        f.write("\n")
    logger.info("wrote report to %s", path)


def load_report_json(path: PathLike) -> Dict[str, object]:
    try:
        with open(path, encoding="utf8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(obj, dict):
        raise DataFormatError(f"{path}: top level must be an object")
    for key in ("cer_pct", "wer_pct", "bleu_pct", "n"):
        if key not in obj:
            raise DataFormatError(f"{path}: missing field {key!r}")
    return obj


def write_distribution_csv(report: CorpusReport, path: PathLike) -> None:
    with atomic_write(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["index", "cer", "wer", "bleu"])
        for i, score in enumerate(report.per_sentence):
            writer.writerow([i, repr(score.cer), repr(score.wer), repr(score.bleu)])


def escape_char(char: str) -> str:
    return " ".join(f"U+{ord(c):04X}" for c in char)


def write_confusion_csv(confusion: Counter, path: PathLike) -> None:
    """Rows sorted by descending count, then by the characters' code points"""
    rows = sorted(confusion.items(), key=lambda item: (-item[1], item[0]))
    with atomic_write(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["ref_char", "pred_char", "count"])
        for (ref_char, pred_char), count in rows:
            writer.writerow([escape_char(ref_char), escape_char(pred_char), count])


@dataclass(frozen=True)
class TableRow:
    name: str
    cer_pct: float
    wer_pct: float
    bleu_pct: float

    @classmethod
    def from_summary(cls, name: str, summary: Dict[str, object]) -> "TableRow":
        return cls(
            name=name,
            cer_pct=float(summary["cer_pct"]),  # type: ignore[arg-type]
            wer_pct=float(summary["wer_pct"]),  # type: ignore[arg-type]
            bleu_pct=float(summary["bleu_pct"]),  # type: ignore[arg-type]
        )


def render_table(rows: Iterable[TableRow]) -> str:
    """Markdown table with one row per test set"""
    lines = ["| Dataset | CER (%) | WER (%) | BLEU (%) |", "|---|---|---|---|"]
    for row in rows:
        lines.append(f"| {row.name} | {row.cer_pct:.1f} | {row.wer_pct:.1f} | {row.bleu_pct:.1f} |")
    return "\n".join(lines)


def histogram_summary(report: CorpusReport, metric: str, bins: int = 5, width: int = 30) -> str:
    """Text bar chart of one metric's per-sentence distribution"""
    counts, edges = report.histogram(metric, bins)
    peak = max(int(counts.max()), 1)
    lines = []
    for count, low, high in zip(counts, edges[:-1], edges[1:]):
        bar = "#" * math.ceil(width * count / peak) if count else ""
        lines.append(f"{metric.upper():>4} {low * 100:6.1f}-{high * 100:6.1f}% {int(count):6d} {bar}")
    return "\n".join(lines)


def load_lines(path: PathLike) -> List[str]:
    return read_lines(path)


def optional_extras(
    preds: Sequence[str], refs: Sequence[str], micro: bool, corpus: bool, grapheme: bool, smoothing: str = "exp"
) -> Dict[str, float]:
    """The comparison numbers requested on top of the macro means"""
    extras: Dict[str, float] = {}
    if micro:
        extras["micro_cer_pct"] = to_pct(micro_cer(preds, refs, grapheme))
    if corpus:
        extras["corpus_bleu_pct"] = to_pct(corpus_bleu(preds, refs, smoothing=smoothing))
    return extras


def score_files(pred_path: PathLike, ref_path: PathLike) -> Tuple[List[str], List[str]]:
    """Read prediction and reference lines, requiring equal counts"""
    preds = load_lines(pred_path)
    refs = load_lines(ref_path)
    if len(preds) != len(refs):
        raise MetricError(f"line count mismatch: {pred_path} has {len(preds)} lines, {ref_path} has {len(refs)}")
    return preds, refs
