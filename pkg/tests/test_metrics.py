import csv
import json
import math
from functools import lru_cache

import numpy as np
import pytest

from ml_translit.errors import DataFormatError, MetricError
from ml_translit.metrics import (
    CorpusReport,
    SentenceScore,
    TableRow,
    bleu,
    bleu_stats,
    cer,
    character_group,
    confusion_by_group,
    confusion_pairs,
    corpus_bleu,
    corpus_report,
    edit_distance,
    escape_char,
    histogram_summary,
    load_report_json,
    micro_cer,
    optional_extras,
    render_table,
    score_files,
    to_pct,
    wer,
    write_confusion_csv,
    write_distribution_csv,
    write_report_json,
)

# a 30-character, 5-word reference with one substituted character in each of three words
TABLE1_REF = "aaaaa bbbbb ccccc ddddd eeeeee"
TABLE1_PRED = "aaaab bbbbc ccccd ddddd eeeeee"


def test_edit_distance():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("", "abc") == 3
    assert edit_distance("abc", "") == 3
    assert edit_distance("abc", "abc") == 0
    assert edit_distance(["ente", "veedu"], ["ente", "veed"]) == 1


def recursive_edit_distance(a, b):
    @lru_cache(maxsize=None)
    def dist(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(dist(i - 1, j) + 1, dist(i, j - 1) + 1, dist(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return dist(len(a), len(b))


def random_word(rng, max_len=12, alphabet="abcd"):
    return "".join(rng.choice(list(alphabet), size=int(rng.integers(0, max_len + 1))))


def test_edit_distance_matches_recursive_definition():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b = random_word(rng), random_word(rng)
        assert edit_distance(a, b) == recursive_edit_distance(a, b)


def test_edit_distance_is_a_metric():
    rng = np.random.default_rng(1)
    for _ in range(500):
        a, b, c = random_word(rng), random_word(rng), random_word(rng)
        assert edit_distance(a, b) == edit_distance(b, a)
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)
        assert (edit_distance(a, b) == 0) == (a == b)


def test_cer():
    assert cer("abc", "abc") == 0.0
    assert cer("katt", "kat") == pytest.approx(1 / 3)
    assert cer("", "abc") == 1.0
    assert cer("abcdef", "ab") == 2.0
    with pytest.raises(MetricError, match="empty reference"):
        cer("abc", "")


def test_cer_graphemes():
    # consonant + vowel sign is one grapheme cluster but two code points
    assert cer("ക", "കി") == 0.5
    assert cer("ക", "കി", grapheme=True) == 1.0
    assert cer("കീ", "കി", grapheme=True) == 1.0


def test_wer():
    assert wer("ente veedu", "ente veedu") == 0.0
    assert wer("ente vidu", "ente veedu") == 0.5
    assert wer("", "ente veedu") == 1.0
    with pytest.raises(MetricError):
        wer("ente", "   ")


def test_wer_is_harsher_than_cer():
    assert len(TABLE1_REF) == 30
    assert wer(TABLE1_PRED, TABLE1_REF) == pytest.approx(0.6)
    assert cer(TABLE1_PRED, TABLE1_REF) == pytest.approx(0.1)


def test_bleu():
    assert bleu("a b c d e", "a b c d f") == pytest.approx(0.2**0.25)
    assert bleu("a b c d e", "a b c d f") == pytest.approx(0.6687, abs=1e-4)
    assert bleu("a b c d", "a b c d") == 1.0
    assert bleu("", "a b c d") == 0.0
    with pytest.raises(MetricError, match="empty reference"):
        bleu("a b", "")


def test_bleu_disjoint_floor():
    floor = bleu("a b c d e", "v w x y z")
    expected = (1 / 10 * 1 / 16 * 1 / 24 * 1 / 32) ** 0.25
    assert floor == pytest.approx(expected)
    assert 0.0 < floor < 0.1

    add_one = bleu("a b c d e", "v w x y z", smoothing="add-one")
    assert add_one == pytest.approx((1 / 6 * 1 / 5 * 1 / 4 * 1 / 3) ** 0.25)

    with pytest.raises(ValueError, match="smoothing"):
        bleu("a", "a", smoothing="none")


def test_bleu_brevity_penalty():
    short = bleu("a b c d", "a b c d e f g h")
    assert short == pytest.approx(math.exp(1 - 8 / 4))
    # longer predictions are not penalised by length, only by precision
    assert bleu("a b c d e f g h", "a b c d") < 1.0


def test_bleu_short_sentences_are_smoothed():
    value = bleu("ente veedu", "ente veedu")
    assert 0.0 < value < 1.0
    stats = bleu_stats("ente veedu", "ente veedu")
    assert stats.correct == [2, 1, 0, 0]
    assert stats.total == [2, 1, 0, 0]


def test_bleu_grows_with_a_matching_token():
    ref = "a b c d e f g"
    assert bleu("a b c x", ref) < bleu("a b c x e", ref) < bleu("a b c d e", ref)


def test_bleu_clips_repeated_tokens():
    stats = bleu_stats("the the the the", "the cat")
    assert stats.correct[0] == 1


def test_corpus_aggregates():
    preds = ["abcx", "yz"]
    refs = ["abcd", "yz"]
    assert micro_cer(preds, refs) == pytest.approx(1 / 6)
    report = corpus_report(preds, refs)
    assert report.mean_cer == pytest.approx(0.125)

    sentences = ["a b c d e", "f g h i"]
    assert corpus_bleu(sentences, sentences) == pytest.approx(1.0)
    with pytest.raises(MetricError):
        corpus_bleu(sentences, sentences[:1])


def test_corpus_bleu_pools_ngram_counts():
    assert corpus_bleu(["a b c d e"], ["a b c d f"]) == pytest.approx(bleu("a b c d e", "a b c d f"))
    preds = ["a b c d e", "f g h i"]
    refs = ["a b c d f", "f g h x"]
    # 7/9, 5/7, 3/5 and 1/3 matched n-grams multiply to 1/9
    assert corpus_bleu(preds, refs) == pytest.approx((1 / 9) ** 0.25)
    # add-one smoothing leaves the unigrams alone
    assert corpus_bleu(preds, refs, smoothing="add-one") == pytest.approx((7 / 36) ** 0.25)


def test_corpus_bleu_errors():
    with pytest.raises(MetricError, match="empty reference"):
        corpus_bleu(["a b", "c"], ["a b", "  "])
    with pytest.raises(MetricError, match="no sentences"):
        corpus_bleu([], [])
    with pytest.raises(ValueError, match="smoothing"):
        corpus_bleu(["a"], ["a"], smoothing="floor")


def test_confusion_pairs():
    assert confusion_pairs("kat", "cat") == {("c", "k"): 1}
    assert confusion_pairs("cat", "cat") == {}
    # deletions and insertions are not confusions
    assert confusion_pairs("ca", "cat") == {}
    assert confusion_pairs("catt", "cat") == {}
    assert confusion_pairs("കീട്", "കിട്") == {("ി", "ീ"): 1}


def test_confusion_by_group():
    grouped = confusion_by_group(confusion_pairs("കീട്", "കിട്") + confusion_pairs("x", "ക"))
    assert grouped == {("vowel_sign", "vowel_sign"): 1, ("consonant", "other"): 1}
    assert character_group("ൽ") == "chillu"
    assert character_group("്") == "virama"


def test_corpus_report_means():
    report = CorpusReport(
        per_sentence=[SentenceScore(0.10, 0.5, 0.2), SentenceScore(0.05, 0.4, 0.3), SentenceScore(0.07, 0.3, 0.4)]
    )
    assert report.mean_cer * 100 == pytest.approx(7.333, abs=1e-3)
    assert report.summary() == {"cer_pct": 7.3, "wer_pct": 40.0, "bleu_pct": 30.0, "n": 3}


def test_render():
    report = CorpusReport(per_sentence=[SentenceScore(0.074, 0.345, 0.327)])
    assert report.render() == "7.4 / 34.5 / 32.7"
    assert to_pct(0.07333) == 7.3


def test_corpus_report():
    report = corpus_report([TABLE1_PRED, "x y"], [TABLE1_REF, "x y"])
    assert report.n == 2
    assert report.per_sentence[0].wer == pytest.approx(0.6)
    assert report.per_sentence[1].cer == 0.0
    assert report.confusion == {("a", "b"): 1, ("b", "c"): 1, ("c", "d"): 1}

    with pytest.raises(MetricError):
        corpus_report(["a"], ["a", "b"])
    with pytest.raises(MetricError):
        corpus_report([], [])
    with pytest.raises(MetricError, match="empty reference"):
        corpus_report(["a"], [""])


def test_histogram():
    report = CorpusReport(per_sentence=[SentenceScore(c, 0.0, 1.0) for c in (0.0, 0.1, 0.15, 0.9, 1.5)])
    counts, edges = report.histogram("cer", bins=3)
    assert counts.tolist() == [3, 1, 1]
    assert edges[-1] == 1.5
    counts, edges = report.histogram("bleu", bins=2)
    assert edges.tolist() == [0.0, 0.5, 1.0]
    assert counts.tolist() == [0, 5]

    text = histogram_summary(report, "cer", bins=3, width=10)
    assert len(text.splitlines()) == 3
    assert text.splitlines()[0].endswith("#" * 10)

    with pytest.raises(ValueError):
        report.values("ter")


def test_identical_files_score_perfectly(tmp_path):
    path = tmp_path / "ref.txt"
    path.write_text("ente veedu kozhikkode aanu\nnjan innu schoolil poyi\n", encoding="utf8")
    preds, refs = score_files(path, path)
    summary = corpus_report(preds, refs).summary()
    assert summary["cer_pct"] == 0.0
    assert summary["wer_pct"] == 0.0
    assert summary["bleu_pct"] == 100.0


def test_score_files_line_count_mismatch(tmp_path):
    pred = tmp_path / "pred.txt"
    ref = tmp_path / "ref.txt"
    pred.write_text("a\nb\n", encoding="utf8")
    ref.write_text("a\nb\nc\n", encoding="utf8")
    with pytest.raises(MetricError, match="line count mismatch"):
        score_files(pred, ref)


def test_score_files_counts_line_breaks_only(tmp_path):
    pred = tmp_path / "pred.txt"
    ref = tmp_path / "ref.txt"
    pred.write_text("a\u2028b\nc d\n", encoding="utf8")
    ref.write_text("a b\nc d\n", encoding="utf8")
    preds, refs = score_files(pred, ref)
    assert preds == ["a\u2028b", "c d"]
    assert len(refs) == 2


def test_optional_extras():
    preds, refs = ["abcx", "yz"], ["abcd", "yz"]
    assert optional_extras(preds, refs, micro=False, corpus=False, grapheme=False) == {}
    extras = optional_extras(preds, refs, micro=True, corpus=True, grapheme=False)
    assert extras["micro_cer_pct"] == 16.7
    assert set(extras) == {"micro_cer_pct", "corpus_bleu_pct"}


def test_report_json(tmp_path):
    path = tmp_path / "report.json"
    write_report_json({"name": "Test Set-1", "cer_pct": 7.4, "wer_pct": 34.5, "bleu_pct": 32.7, "n": 3}, path)
    assert load_report_json(path)["name"] == "Test Set-1"

    path.write_text(json.dumps({"cer_pct": 1.0}), encoding="utf8")
    with pytest.raises(DataFormatError, match="missing field 'wer_pct'"):
        load_report_json(path)


def test_distribution_csv(tmp_path):
    report = corpus_report([TABLE1_PRED, "x y"], [TABLE1_REF, "x y"])
    path = tmp_path / "dist.csv"
    write_distribution_csv(report, path)
    with open(path, encoding="utf8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert float(rows[0]["wer"]) == pytest.approx(0.6)
    assert rows[1]["cer"] == "0.0"


def test_confusion_csv(tmp_path):
    path = tmp_path / "confusion.csv"
    confusion = confusion_pairs("കീട്", "കിട്")
    confusion.update(confusion_pairs("kat", "cat"))
    confusion.update(confusion_pairs("kab", "cab"))
    write_confusion_csv(confusion, path)
    lines = path.read_text(encoding="utf8").splitlines()
    assert lines[0] == "ref_char,pred_char,count"
    assert lines[1] == "U+0063,U+006B,2"
    assert lines[2] == "U+0D3F,U+0D40,1"
    assert escape_char("\u200d") == "U+200D"


def test_render_table():
    rows = [
        TableRow.from_summary("Test Set-1", {"cer_pct": 7.4, "wer_pct": 34.5, "bleu_pct": 32.7, "n": 10}),
        TableRow("Test Set-2", 9.0, 40.25, 20.0),
    ]
    assert render_table(rows).splitlines() == [
        "| Dataset | CER (%) | WER (%) | BLEU (%) |",
        "|---|---|---|---|",
        "| Test Set-1 | 7.4 | 34.5 | 32.7 |",
        "| Test Set-2 | 9.0 | 40.2 | 20.0 |",
    ]
