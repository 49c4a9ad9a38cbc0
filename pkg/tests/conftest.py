import pytest

from ml_translit.dataio import malayalam_charset
from ml_translit.model import ModelConfig, VocabPair, init_params
from ml_translit.pair import TranslitPair
from ml_translit.train import TrainConfig, train
from ml_translit.util import make_rng
from ml_translit.vocab import build_vocab

LETTERS = "abcdefghijklmnopqrstuvwxyz"


@pytest.fixture(scope="session")
def synthetic_pairs():
    """200 unique words of 3-10 letters under a fixed one-to-one letter mapping into Malayalam"""
    rng = make_rng(0)
    symbols = sorted(malayalam_charset(["vowel", "consonant"]))[:40]
    mapping = dict(zip(LETTERS, rng.permutation(symbols)[: len(LETTERS)]))

    pairs = {}
    while len(pairs) < 200:
        length = int(rng.integers(3, 11))
        word = "".join(rng.choice(list(LETTERS), size=length))
        pairs[word] = "".join(mapping[char] for char in word)
    return [TranslitPair(romanized=word, native=native) for word, native in sorted(pairs.items())]


@pytest.fixture(scope="session")
def toy_model():
    """A small model overfit on the single pair ("abc", "കഖഗ")"""
    pairs = [TranslitPair(romanized="abc", native="കഖഗ")]
    vocabs = VocabPair(source=build_vocab(pairs, "source"), target=build_vocab(pairs, "target"))
    config = ModelConfig(
        max_src_len=8,
        max_tgt_len=4,
        emb_dim=8,
        enc_hidden=16,
        proj_dim=16,
        dec_hidden=16,
        tgt_vocab=76,
        src_vocab=vocabs.source.size,
    )
    params = init_params(config, seed=0)
    train(params, config, TrainConfig(epochs=300, batch_size=1, learning_rate=0.01), pairs, [], vocabs)
    return params, config, vocabs
