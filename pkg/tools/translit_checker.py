import pandas as pd
import streamlit as st

from ml_translit import Transliterator
from ml_translit.metrics import character_group, confusion_pairs, score_sentence
from ml_translit.segment import segment


@st.cache(allow_output_mutation=True)
def load_transliterator(model_path, vocab_dir):
    return Transliterator.from_files(model_path, vocab_dir)


st.header("ml-translit Checker")
model_path = st.sidebar.text_input("Checkpoint", "model.tltc")
vocab_dir = st.sidebar.text_input("Vocabulary directory", "vocab")
text = st.text_area("Romanized text", "")
reference = st.text_area("Reference (optional)", "")

if text:
    transliterator = load_transliterator(model_path, vocab_dir)
    text = text.replace("\n", " ").strip()
    output = transliterator.transliterate(text)
    st.code(output)

    segments = segment(text)
    words = [s for s in segments if s.is_word]
    if not words:
        st.write("No Latin words")
    else:
        rendered = transliterator.transliterate_words([s.text for s in words])
        words_df = pd.DataFrame(
            [[s.text, native, s.span, s.byte_span(text)] for s, native in zip(words, rendered)],
            columns=["word", "native", "span", "byte_span"],
        )
        st.subheader("words")
        st.table(words_df)

    if reference:
        reference = reference.replace("\n", " ").strip()
        score = score_sentence(output, reference)
        st.subheader("scores")
        st.table(pd.DataFrame([[score.cer * 100, score.wer * 100, score.bleu * 100]], columns=["CER", "WER", "BLEU"]))

        confusion = confusion_pairs(output, reference)
        if confusion:
            st.subheader("confusions")
            st.table(
                pd.DataFrame(
                    [
                        [ref_char, pred_char, character_group(ref_char), count]
                        for (ref_char, pred_char), count in confusion.most_common()
                    ],
                    columns=["reference", "prediction", "group", "count"],
                )
            )
