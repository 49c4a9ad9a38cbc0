from ml_translit.transliterator import Transliterator, transliterate_sentence  # noqa

__all__ = ["Transliterator", "transliterate_sentence"]
