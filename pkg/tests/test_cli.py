import json

import pytest
from click.testing import CliRunner

from ml_translit.checkpoint import MAGIC, save_checkpoint
from ml_translit.cli import cli
from ml_translit.vocab import load_vocab, save_vocab

TABLE1_REF = "aaaaa bbbbb ccccc ddddd eeeeee"
TABLE1_PRED = "aaaab bbbbc ccccd ddddd eeeeee"


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def corpus(tmp_path, synthetic_pairs):
    path = tmp_path / "ml.train.tsv"
    path.write_text("".join(f"{p.native}\t{p.romanized}\t1\n" for p in synthetic_pairs[:40]), encoding="utf8")
    return path


@pytest.fixture
def toy_files(tmp_path, toy_model):
    params, config, vocabs = toy_model
    save_checkpoint(params, config, tmp_path / "toy.tltc")
    save_vocab(vocabs.source, tmp_path / "source_vocab.json")
    save_vocab(vocabs.target, tmp_path / "target_vocab.json")
    return tmp_path / "toy.tltc", tmp_path


@pytest.fixture
def small_corpus(tmp_path):
    path = tmp_path / "small.tsv"
    path.write_text("വീട്\tveedu\nഅമ്മ\tamma\nകട\tkada\n", encoding="utf8")
    return path


def test_vocab(runner, small_corpus, tmp_path):
    out = tmp_path / "vocab"
    result = runner.invoke(cli, ["vocab", "--pairs", str(small_corpus), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "source vocabulary: 9 entries, 0 characters dropped" in result.output
    assert "target vocabulary: 9 entries, 0 characters dropped" in result.output
    assert load_vocab(out / "source_vocab.json").chars == tuple("adekmuv")
    assert load_vocab(out / "target_vocab.json").side == "target"


def test_vocab_reports_dropped_characters(runner, small_corpus, tmp_path):
    out = tmp_path / "vocab"
    args = ["vocab", "--pairs", str(small_corpus), "--out", str(out), "--side", "target", "--max-target", "5"]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert "target vocabulary: 5 entries, 4 characters dropped" in result.output
    assert not (out / "source_vocab.json").exists()


def test_vocab_reports_filtered_pairs(runner, tmp_path):
    corpus = tmp_path / "pairs.tsv"
    corpus.write_text("വീട്\tveedu\nവീട്\tve3du\n\tamma\n", encoding="utf8")
    result = runner.invoke(cli, ["vocab", "--pairs", str(corpus), "--out", str(tmp_path / "vocab")])
    assert result.exit_code == 0, result.output
    assert "filtered 2 pairs: {'empty': 1, 'non_alpha': 1}" in result.output


def test_vocab_bad_corpus(runner, tmp_path):
    corpus = tmp_path / "pairs.tsv"
    corpus.write_text("വീട്\n", encoding="utf8")
    result = runner.invoke(cli, ["vocab", "--pairs", str(corpus), "--out", str(tmp_path / "vocab")])
    assert result.exit_code == 2
    assert "row 1: expected 2 columns, found 1" in result.output


def train_args(corpus, tmp_path, out_name, seed=0, config=None):
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps(
            config
            or {
                "model": {"max_src_len": 10, "emb_dim": 8, "enc_hidden": 8, "proj_dim": 8, "dec_hidden": 8},
                "train": {"epochs": 2, "batch_size": 8},
            }
        ),
        encoding="utf8",
    )
    return [
        "train",
        "--pairs",
        str(corpus),
        "--vocab-dir",
        str(tmp_path / "vocab"),
        "--config",
        str(config_path),
        "--out",
        str(tmp_path / out_name),
        "--seed",
        str(seed),
    ]


def test_train(runner, corpus, tmp_path, synthetic_pairs):
    assert runner.invoke(cli, ["vocab", "--pairs", str(corpus), "--out", str(tmp_path / "vocab")]).exit_code == 0

    result = runner.invoke(cli, train_args(corpus, tmp_path, "first.tltc"))
    assert result.exit_code == 0, result.output
    assert "training on 38 pairs, validating on 2" in result.output
    assert "epoch 1: train loss" in result.output
    assert "epoch 2: train loss" in result.output
    assert (tmp_path / "first.tltc").read_bytes()[:4] == MAGIC

    manifest = json.loads((tmp_path / "first.json").read_text(encoding="utf8"))
    assert manifest["seed"] == 0
    assert manifest["split_ratio"] == 0.95
    assert manifest["n_train"] == 38
    assert manifest["model_config"]["tgt_vocab"] == 76
    assert manifest["model_config"]["max_tgt_len"] == max(len(p.native) for p in synthetic_pairs[:40])
    assert manifest["final_metrics"]["epochs_completed"] == 2
    assert list(manifest["data_sha256"]) == [str(corpus)]

    # same seed, same bytes
    again = runner.invoke(cli, train_args(corpus, tmp_path, "second.tltc"))
    assert again.exit_code == 0, again.output
    assert (tmp_path / "second.tltc").read_bytes() == (tmp_path / "first.tltc").read_bytes()
    assert (tmp_path / "second.json").read_bytes() == (tmp_path / "first.json").read_bytes()


def test_train_divergence_exit_code(runner, corpus, tmp_path):
    assert runner.invoke(cli, ["vocab", "--pairs", str(corpus), "--out", str(tmp_path / "vocab")]).exit_code == 0
    config = {
        "model": {"max_src_len": 10, "emb_dim": 4, "enc_hidden": 4, "proj_dim": 4, "dec_hidden": 4},
        "train": {"epochs": 2, "batch_size": 8, "learning_rate": 1e200},
    }
    result = runner.invoke(cli, train_args(corpus, tmp_path, "diverged.tltc", config=config))
    assert result.exit_code == 3
    assert "diverged at epoch 1" in result.output
    assert not (tmp_path / "diverged.tltc").exists()


def test_train_bad_config(runner, corpus, tmp_path):
    assert runner.invoke(cli, ["vocab", "--pairs", str(corpus), "--out", str(tmp_path / "vocab")]).exit_code == 0
    result = runner.invoke(cli, train_args(corpus, tmp_path, "model.tltc", config={"optimizer": {}}))
    assert result.exit_code == 2
    assert "unknown sections" in result.output

    result = runner.invoke(cli, train_args(corpus, tmp_path, "model.tltc", config={"train": {"epochs": 0}}))
    assert result.exit_code == 2
    assert "epochs" in result.output


@pytest.mark.parametrize(
    "config, message",
    [
        ({"train": {"epochs": 1, "learning_rate": "0.01"}}, "learning_rate must be a number"),
        ({"train": {"patience": [2]}}, "patience must be an integer"),
        ({"model": [["emb_dim", 8]]}, "section 'model' must be an object"),
        ({"model": {"max_src_len": [10]}}, "max_src_len must be a positive integer"),
    ],
)
def test_train_config_types(runner, corpus, tmp_path, config, message):
    assert runner.invoke(cli, ["vocab", "--pairs", str(corpus), "--out", str(tmp_path / "vocab")]).exit_code == 0
    result = runner.invoke(cli, train_args(corpus, tmp_path, "model.tltc", config=config))
    assert result.exit_code == 2
    assert message in result.output


def test_train_writes_no_checkpoint_without_manifest(runner, corpus, tmp_path, monkeypatch):
    assert runner.invoke(cli, ["vocab", "--pairs", str(corpus), "--out", str(tmp_path / "vocab")]).exit_code == 0

    def unreadable(path):
        raise OSError(f"{path}: unreadable")

    monkeypatch.setattr("ml_translit.checkpoint.file_sha256", unreadable)
    result = runner.invoke(cli, train_args(corpus, tmp_path, "model.tltc"))
    assert result.exit_code == 2
    assert not (tmp_path / "model.tltc").exists()
    monkeypatch.undo()

    def full_disk(manifest, path):
        raise OSError("no space left on device")

    monkeypatch.setattr("ml_translit.cli.save_manifest", full_disk)
    result = runner.invoke(cli, train_args(corpus, tmp_path, "model.tltc"))
    assert result.exit_code == 2
    assert "no space left on device" in result.output
    assert not (tmp_path / "model.tltc").exists()


def test_transliterate(runner, toy_files, tmp_path):
    model, vocab_dir = toy_files
    source = tmp_path / "in.txt"
    source.write_text("abc abc.\n\nABC, 2 abc\n", encoding="utf8")
    target = tmp_path / "out.txt"
    args = ["transliterate", "--model", str(model), "--vocab-dir", str(vocab_dir)]

    result = runner.invoke(cli, args + ["--input", str(source), "--output", str(target)])
    assert result.exit_code == 0, result.output
    assert target.read_text(encoding="utf8") == "കഖഗ കഖഗ.\n\nകഖഗ, 2 കഖഗ\n"

    result = runner.invoke(cli, args, input="abc abc.\n")
    assert result.exit_code == 0, result.output
    assert result.output == "കഖഗ കഖഗ.\n"


def test_transliterate_keeps_one_line_per_input_line(runner, toy_files):
    model, vocab_dir = toy_files
    args = ["transliterate", "--model", str(model), "--vocab-dir", str(vocab_dir)]
    result = runner.invoke(cli, args, input="abc\u2028abc\nabc\n")
    assert result.exit_code == 0, result.output
    assert result.output == "കഖഗ\u2028കഖഗ\nകഖഗ\n"


def test_transliterate_bad_checkpoint(runner, toy_files, tmp_path):
    _, vocab_dir = toy_files
    broken = tmp_path / "broken.tltc"
    broken.write_bytes(b"XXXX\x01")
    args = ["transliterate", "--model", str(broken), "--vocab-dir", str(vocab_dir)]
    result = runner.invoke(cli, args, input="abc\n")
    assert result.exit_code == 2
    assert "not a checkpoint" in result.output


def test_evaluate(runner, tmp_path):
    pred = tmp_path / "pred.txt"
    ref = tmp_path / "ref.txt"
    pred.write_text(TABLE1_PRED + "\n", encoding="utf8")
    ref.write_text(TABLE1_REF + "\n", encoding="utf8")
    report = tmp_path / "report.json"
    distribution = tmp_path / "dist.csv"
    confusion = tmp_path / "confusion.csv"

    result = runner.invoke(
        cli,
        [
            "evaluate",
            "--pred",
            str(pred),
            "--ref",
            str(ref),
            "--report",
            str(report),
            "--distribution",
            str(distribution),
            "--confusion",
            str(confusion),
            "--name",
            "Test Set-1",
            "--micro-cer",
        ],
    )
    assert result.exit_code == 0, result.output
    summary = json.loads(report.read_text(encoding="utf8"))
    assert summary["name"] == "Test Set-1"
    assert summary["wer_pct"] == 60.0
    assert summary["cer_pct"] == 10.0
    assert summary["micro_cer_pct"] == 10.0
    assert summary["n"] == 1
    assert "| Test Set-1 | 10.0 | 60.0 |" in result.output
    assert "micro_cer_pct: 10.0" in result.output
    assert distribution.read_text(encoding="utf8").startswith("index,cer,wer,bleu\n0,0.1,0.6,")
    assert confusion.read_text(encoding="utf8").splitlines()[1:] == [
        "U+0061,U+0062,1",
        "U+0062,U+0063,1",
        "U+0063,U+0064,1",
    ]


def test_evaluate_identical_files(runner, tmp_path):
    ref = tmp_path / "ref.txt"
    ref.write_text("ente veedu kozhikkode aanu\n", encoding="utf8")
    report = tmp_path / "report.json"
    result = runner.invoke(cli, ["evaluate", "--pred", str(ref), "--ref", str(ref), "--report", str(report)])
    assert result.exit_code == 0, result.output
    summary = json.loads(report.read_text(encoding="utf8"))
    assert (summary["cer_pct"], summary["wer_pct"], summary["bleu_pct"]) == (0.0, 0.0, 100.0)


def test_evaluate_line_count_mismatch(runner, tmp_path):
    pred = tmp_path / "pred.txt"
    ref = tmp_path / "ref.txt"
    pred.write_text("a\n", encoding="utf8")
    ref.write_text("a\nb\n", encoding="utf8")
    result = runner.invoke(cli, ["evaluate", "--pred", str(pred), "--ref", str(ref)])
    assert result.exit_code == 2
    assert "line count mismatch" in result.output


def test_evaluate_counts_line_breaks_only(runner, tmp_path):
    pred = tmp_path / "pred.txt"
    ref = tmp_path / "ref.txt"
    pred.write_text("a\u2028b\nc d\n", encoding="utf8")
    ref.write_text("a b\nc d\n", encoding="utf8")
    result = runner.invoke(cli, ["evaluate", "--pred", str(pred), "--ref", str(ref)])
    assert result.exit_code == 0, result.output


def test_table(runner, tmp_path):
    first = tmp_path / "set1.json"
    second = tmp_path / "set2.json"
    first.write_text(json.dumps({"name": "Test Set-1", "cer_pct": 7.4, "wer_pct": 34.5, "bleu_pct": 32.7, "n": 5}))
    second.write_text(json.dumps({"cer_pct": 9.1, "wer_pct": 41.0, "bleu_pct": 25.0, "n": 5}))
    result = runner.invoke(cli, ["table", str(first), str(second)])
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[2:] == ["| Test Set-1 | 7.4 | 34.5 | 32.7 |", "| set2 | 9.1 | 41.0 | 25.0 |"]


def test_adhoc(runner, tmp_path):
    source = tmp_path / "in.txt"
    source.write_text("Ente veedu, 2 pm\namma\n", encoding="utf8")
    target = tmp_path / "out.txt"
    result = runner.invoke(cli, ["adhoc", "--input", str(source), "--output", str(target), "--rate", "1.0"])
    assert result.exit_code == 0, result.output
    assert target.read_text(encoding="utf8") == "Ent vd, 2 pm\namm\n"

    result = runner.invoke(cli, ["adhoc", "--input", str(source), "--output", str(target), "--rate", "2"])
    assert result.exit_code == 2


def test_usage_error(runner):
    result = runner.invoke(cli, ["evaluate"])
    assert result.exit_code == 2
