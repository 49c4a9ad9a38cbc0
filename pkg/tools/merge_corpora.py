"""
Merge a Dakshina lexicon and Aksharantar exports into one two-column TSV (native, romanized)

    python tools/merge_corpora.py --dakshina ml.translit.sampled.train.tsv \
        --aksharantar mal_train.json --out data/ml.train.tsv
"""

from pathlib import Path

import click
import pandas as pd

# column names of the Aksharantar releases
AKSHARANTAR_NATIVE = "native word"
AKSHARANTAR_ROMANIZED = "english word"


def read_dakshina(path: str) -> pd.DataFrame:
    # native, romanized, attestation count; no header
    df = pd.read_csv(path, sep="\t", header=None, names=["ml", "en", "count"], dtype=str, quoting=3)
    return df[["ml", "en"]]


def read_aksharantar(path: str) -> pd.DataFrame:
    if Path(path).suffix == ".csv":
        df = pd.read_csv(path, dtype=str)
    else:
        df = pd.read_json(path, lines=True, dtype=False)
    return df.rename(columns={AKSHARANTAR_NATIVE: "ml", AKSHARANTAR_ROMANIZED: "en"})[["ml", "en"]]


@click.command()
@click.option("--dakshina", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--aksharantar", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--dedupe", is_flag=True, help="Drop repeated (native, romanized) rows.")
def main(dakshina, aksharantar, out, dedupe):
    frames = [read_dakshina(path) for path in dakshina] + [read_aksharantar(path) for path in aksharantar]
    if not frames:
        raise click.UsageError("give at least one --dakshina or --aksharantar file")

    df = pd.concat(frames, ignore_index=True).dropna()
    df["ml"] = df["ml"].str.strip()
    df["en"] = df["en"].str.strip().str.lower()
    df = df[(df["ml"] != "") & (df["en"] != "")]
    if dedupe:
        df = df.drop_duplicates()

    Path(out).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(out, sep="\t", header=False, index=False)
    click.echo(f"wrote {len(df)} pairs to {out}")


if __name__ == "__main__":
    main()
