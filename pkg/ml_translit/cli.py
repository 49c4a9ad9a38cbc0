import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import click

from ml_translit.checkpoint import TrainingManifest, save_checkpoint, save_manifest
from ml_translit.dataio import FORMATS, adhoc_text, clean_filter, load_many, max_romanized_length, split
from ml_translit.errors import DataFormatError, DivergenceError, NonFiniteError, TranslitError
from ml_translit.metrics import (
    METRICS,
    SMOOTHING_METHODS,
    TableRow,
    corpus_report,
    histogram_summary,
    load_lines,
    load_report_json,
    optional_extras,
    render_table,
    score_files,
    write_confusion_csv,
    write_distribution_csv,
    write_report_json,
)
from ml_translit.model import ModelConfig, init_params
from ml_translit.pair import TranslitPair
from ml_translit.train import TrainConfig, TrainHistory, train
from ml_translit.transliterator import Transliterator, load_vocab_pair
from ml_translit.util import atomic_write, make_rng, split_lines
from ml_translit.vocab import DEFAULT_TARGET_SIZE, build_vocab, char_counts, save_vocab, vocab_filename

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_NUMERICAL = 3

F = TypeVar("F", bound=Callable[..., Any])


def handle_errors(func: F) -> F:
    """Turn library errors into the exit codes of the command line: 3 for numerical failure, 2 otherwise"""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except (DivergenceError, NonFiniteError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (TranslitError, OSError, ValueError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_USAGE)

    return wrapper  # type: ignore[return-value]


def pair_options(func: F) -> F:
    """--pairs plus the corpus format flags shared by vocab and train"""
    options = [
        click.option(
            "--pairs",
            "pair_paths",
            multiple=True,
            required=True,
            type=click.Path(exists=True, dir_okay=False),
            help="Pair corpus; repeat to concatenate several corpora.",
        ),
        click.option("--format", "file_format", type=click.Choice(FORMATS), default=None, help="Inferred from suffix."),
        click.option("--swap-columns", is_flag=True, help="Columns are (romanized, native)."),
        click.option("--header", is_flag=True, help="Skip the first line of every corpus."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _load_pairs(
    pair_paths: Sequence[str], file_format: Optional[str], swap_columns: bool, header: bool
) -> List[TranslitPair]:
    return load_many(pair_paths, format=file_format, swap_columns=swap_columns, header=header)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for per-batch detail.")
def cli(verbose: int) -> None:
    """Reverse transliteration of romanized Malayalam"""
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command("vocab")
@pair_options
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Directory for the JSON files.")
@click.option("--side", type=click.Choice(["both", "source", "target"]), default="both")
@click.option("--max-target", type=int, default=DEFAULT_TARGET_SIZE, show_default=True)
@click.option("--max-source", type=int, default=DEFAULT_TARGET_SIZE, show_default=True)
@click.option("--max-src-len", type=int, default=57, show_default=True, help="Longer romanized words are dropped.")
@handle_errors
def cmd_vocab(
    pair_paths: Tuple[str, ...],
    file_format: Optional[str],
    swap_columns: bool,
    header: bool,
    out_dir: str,
    side: str,
    max_target: int,
    max_source: int,
    max_src_len: int,
) -> None:
    """Build the source and target character vocabularies"""
    pairs, stats = clean_filter(_load_pairs(pair_paths, file_format, swap_columns, header), max_src_len=max_src_len)
    if stats:
        click.echo(f"filtered {sum(stats.values())} pairs: {dict(sorted(stats.items()))}")

    sides = ["source", "target"] if side == "both" else [side]
    caps = {"source": max_source, "target": max_target}
    for name in sides:
        vocab = build_vocab(pairs, name, max_size=caps[name])
        dropped = len(char_counts(pairs, name)) - len(vocab.chars)
        path = Path(out_dir) / vocab_filename(name)
        save_vocab(vocab, path)
        click.echo(f"{name} vocabulary: {vocab.size} entries, {dropped} characters dropped -> {path}")


def _read_config(config_path: Optional[str]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    if config_path is None:
        return {}, {}
    try:
        with open(config_path, encoding="utf8") as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{config_path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(obj, dict):
        raise DataFormatError(f"{config_path}: top level must be an object")
    unknown = set(obj) - {"model", "train"}
    if unknown:
        raise DataFormatError(f"{config_path}: unknown sections {sorted(unknown)}")
    sections = []
    for name in ("model", "train"):
        section = obj.get(name, {})
        if not isinstance(section, dict):
            raise DataFormatError(f"{config_path}: section {name!r} must be an object")
        sections.append(dict(section))
    return sections[0], sections[1]


def _echo_epoch(epoch: int, history: TrainHistory) -> None:
    line = f"epoch {epoch}: train loss {history.train_loss[-1]:.4f}"
    if history.val_loss[-1] is not None:
        line += f", val loss {history.val_loss[-1]:.4f}, val char acc {history.val_char_accuracy[-1]:.4f}"
    click.echo(line)


@cli.command("train")
@pair_options
@click.option("--vocab-dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint to write.")
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), help="Default: OUT with a .json suffix.")
@click.option("--seed", type=int, default=None, help="Overrides train.seed of --config.")
@click.option("--split-ratio", type=float, default=0.95, show_default=True, help="Share of pairs used for training.")
@click.option("--src-len-from-data", is_flag=True, help="Set max_src_len to the longest romanized training word.")
@handle_errors
def cmd_train(
    pair_paths: Tuple[str, ...],
    file_format: Optional[str],
    swap_columns: bool,
    header: bool,
    vocab_dir: str,
    config_path: Optional[str],
    out_path: str,
    manifest_path: Optional[str],
    seed: Optional[int],
    split_ratio: float,
    src_len_from_data: bool,
) -> None:
    """Train a model and write its checkpoint and manifest"""
    vocabs = load_vocab_pair(vocab_dir)
    model_overrides, train_overrides = _read_config(config_path)
    if seed is not None:
        train_overrides["seed"] = seed
    train_cfg = TrainConfig.from_dict(train_overrides)

    # validates the overrides before any data is read
    max_src_len = ModelConfig.from_dict(model_overrides).max_src_len

    pairs = _load_pairs(pair_paths, file_format, swap_columns, header)
    pairs, stats = clean_filter(pairs, max_src_len=max_src_len)
    if stats:
        click.echo(f"filtered {sum(stats.values())} pairs: {dict(sorted(stats.items()))}")
    if not pairs:
        raise ValueError("empty training set")

    if src_len_from_data:
        model_overrides["max_src_len"] = max_romanized_length(pairs)
    model_overrides.setdefault("max_tgt_len", ModelConfig.derive_max_tgt_len(pairs))
    model_overrides.setdefault("src_vocab", vocabs.source.size)
    model_overrides.setdefault("tgt_vocab", max(DEFAULT_TARGET_SIZE, vocabs.target.size))
    config = ModelConfig.from_dict(model_overrides)

    data = split(pairs, ratio=split_ratio, seed=train_cfg.seed)
    click.echo(f"training on {len(data.train)} pairs, validating on {len(data.validation)}")
    params = init_params(config, train_cfg.seed)
    history = train(params, config, train_cfg, data.train, data.validation, vocabs, on_epoch=_echo_epoch)

    manifest = TrainingManifest.build(
        config, train_cfg, pair_paths, split_ratio, len(data.train), len(data.validation), history
    )
    manifest_path = manifest_path or str(Path(out_path).with_suffix(".json"))
    save_checkpoint(params, config, out_path)
    try:
        save_manifest(manifest, manifest_path)
    except BaseException:
        # no checkpoint without its manifest
        Path(out_path).unlink()
        raise
    click.echo(f"wrote {out_path} and {manifest_path} after {history.epochs_completed} epochs")


@cli.command("transliterate")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--vocab-dir", required=True, type=click.Path(file_okay=False))
@click.option("--input", "input_file", type=click.File("r", encoding="utf8"), default="-")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None, help="Default: stdout")
@handle_errors
def cmd_transliterate(model_path: str, vocab_dir: str, input_file: Any, output_path: Optional[str]) -> None:
    """Transliterate UTF-8 lines, one output line per input line"""
    transliterator = Transliterator.from_files(model_path, vocab_dir)
    lines = split_lines(input_file.read())
    text = "".join(line + "\n" for line in transliterator.transliterate_lines(lines))
    if output_path is None:
        click.echo(text, nl=False)
        return
    with atomic_write(output_path) as f:
        f.write(text)


@cli.command("evaluate")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--distribution", "distribution_path", type=click.Path(dir_okay=False), default=None)
@click.option("--confusion", "confusion_path", type=click.Path(dir_okay=False), default=None)
@click.option("--name", default="Test", show_default=True, help="Row label of the printed table.")
@click.option("--micro-cer", is_flag=True, help="Also report total edits over total reference characters.")
@click.option("--corpus-bleu", is_flag=True, help="Also report BLEU over corpus-level n-gram counts.")
@click.option("--grapheme", is_flag=True, help="Count grapheme clusters instead of code points for CER.")
@click.option("--smoothing", type=click.Choice(SMOOTHING_METHODS), default="exp", show_default=True)
@click.option("--bins", type=int, default=5, show_default=True, help="Bins of the printed distributions.")
@handle_errors
def cmd_evaluate(
    pred_path: str,
    ref_path: str,
    report_path: Optional[str],
    distribution_path: Optional[str],
    confusion_path: Optional[str],
    name: str,
    micro_cer: bool,
    corpus_bleu: bool,
    grapheme: bool,
    smoothing: str,
    bins: int,
) -> None:
    """Score predictions against references with CER, WER and BLEU"""
    preds, refs = score_files(pred_path, ref_path)
    report = corpus_report(preds, refs, grapheme=grapheme, smoothing=smoothing)
    summary = report.summary()
    summary.update(optional_extras(preds, refs, micro_cer, corpus_bleu, grapheme, smoothing))

    if report_path:
        write_report_json({"name": name, **summary}, report_path)
    if distribution_path:
        write_distribution_csv(report, distribution_path)
    if confusion_path:
        write_confusion_csv(report.confusion, confusion_path)

    click.echo(render_table([TableRow.from_summary(name, summary)]))
    for key in ("micro_cer_pct", "corpus_bleu_pct"):
        if key in summary:
            click.echo(f"{key}: {summary[key]:.1f}")
    for metric in METRICS:
        click.echo(histogram_summary(report, metric, bins=bins))


@cli.command("adhoc")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--rate", type=float, default=0.8, show_default=True, help="Probability of dropping a non-initial vowel.")
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def cmd_adhoc(input_path: str, output_path: str, rate: float, seed: int) -> None:
    """Rewrite romanized text in the vowel-sparse typing style"""
    rng = make_rng(seed)
    lines = [adhoc_text(line, rate, rng) for line in load_lines(input_path)]
    with atomic_write(output_path) as f:
        f.write("".join(line + "\n" for line in lines))
    click.echo(f"wrote {len(lines)} lines to {output_path}")


@cli.command("table")
@click.argument("report_paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def cmd_table(report_paths: Tuple[str, ...]) -> None:
    """Combine saved evaluate reports into one table"""
    rows = []
    for path in report_paths:
        summary = load_report_json(path)
        rows.append(TableRow.from_summary(str(summary.get("name") or Path(path).stem), summary))
    click.echo(render_table(rows))


def main() -> None:
    cli(prog_name="ml-translit")
