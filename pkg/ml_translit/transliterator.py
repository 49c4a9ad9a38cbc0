import logging
import threading
from pathlib import Path
from typing import Dict, List, Sequence

from ml_translit.checkpoint import load_checkpoint
from ml_translit.model import ModelConfig, ModelParams, VocabPair, transliterate_words
from ml_translit.segment import Segment, reconstruct, segment, words
from ml_translit.util import PathLike
from ml_translit.vocab import load_vocab, vocab_filename

logger = logging.getLogger(__name__)


def load_vocab_pair(vocab_dir: PathLike) -> VocabPair:
    """Read source_vocab.json and target_vocab.json from a directory"""
    directory = Path(vocab_dir)
    return VocabPair(
        source=load_vocab(directory / vocab_filename("source")),
        target=load_vocab(directory / vocab_filename("target")),
    )


class Transliterator:
    """A loaded model plus its vocabularies, turning romanized sentences into Malayalam script

    Word results are cached by their lowercased form. The cache is guarded by a lock and the model
    parameters are only read, so one instance may serve several threads. Threads may run the same
    uncached word through the model at once; both get the same rendering.
    """

    def __init__(self, params: ModelParams, config: ModelConfig, vocabs: VocabPair, batch_size: int = 256) -> None:
        if vocabs.source.size > config.src_vocab or vocabs.target.size > config.tgt_vocab:
            raise ValueError(
                f"vocabularies ({vocabs.source.size}/{vocabs.target.size} entries) do not fit the model "
                f"({config.src_vocab}/{config.tgt_vocab})"
            )
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.params = params
        self.config = config
        self.vocabs = vocabs
        self.batch_size = batch_size
        self.cache: Dict[str, str] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_files(cls, model_path: PathLike, vocab_dir: PathLike, batch_size: int = 256) -> "Transliterator":
        params, config = load_checkpoint(model_path)
        return cls(params, config, load_vocab_pair(vocab_dir), batch_size=batch_size)

    def transliterate_words(self, words: Sequence[str]) -> List[str]:
        """Transliterate words, running each distinct uncached word through the model once"""
        keys = [word.lower() for word in words]
        with self._lock:
            pending = sorted({key for key in keys if key not in self.cache})
        for begin in range(0, len(pending), self.batch_size):
            chunk = pending[begin : begin + self.batch_size]
            rendered = transliterate_words(self.params, self.config, self.vocabs, chunk)
            with self._lock:
                self.cache.update(zip(chunk, rendered))
        with self._lock:
            if pending:
                logger.debug("transliterated %d new words (%d cached)", len(pending), len(self.cache))
            return [self.cache[key] for key in keys]

    def transliterate_word(self, word: str) -> str:
        return self.transliterate_words([word])[0]

    def transliterate(self, sentence: str) -> str:
        """Transliterate every Latin word of a sentence and keep everything else in place

        Args:
            sentence (str): input line

        Returns:
            str: the sentence with each Latin word replaced by its Malayalam rendering
        """
        segments = self._segment(sentence)
        rendered = self._render(segments)
        return self._reconstruct(segments, rendered)

    def transliterate_lines(self, lines: Sequence[str]) -> List[str]:
        """Like transliterate() for many lines, sharing forward passes across them"""
        segmented = [self._segment(line) for line in lines]
        self.transliterate_words([word for segments in segmented for word in words(segments)])
        return [self._reconstruct(segments, self._render(segments)) for segments in segmented]

    def _segment(self, sentence: str) -> List[Segment]:
        return segment(sentence)

    def _render(self, segments: List[Segment]) -> Dict[int, str]:
        rendered = self.transliterate_words(words(segments))
        return dict(enumerate(rendered))

    def _reconstruct(self, segments: List[Segment], rendered: Dict[int, str]) -> str:
        return reconstruct(segments, rendered)


def transliterate_sentence(bundle: Transliterator, sentence: str) -> str:
    return bundle.transliterate(sentence)
