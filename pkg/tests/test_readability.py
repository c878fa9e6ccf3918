import math

import pytest
from hypothesis import given, settings, strategies as st

from kpm_sentinel.prompt import reference_outputs
from kpm_sentinel.readability import (ReadabilityError, TextStats, analyze_text, count_syllables,
                                      flesch_reading_ease, fog_grade_label, gunning_fog,
                                      score_text, split_sentences)


@pytest.mark.parametrize("word,n", [
    ("cat", 1), ("the", 1), ("make", 1), ("jumped", 1), ("wanted", 2), ("boxes", 2),
    ("cakes", 1), ("table", 2), ("yellow", 2), ("monitor", 3), ("operators", 4),
    ("beautiful", 3), ("vary", 2)])
def test_syllable_oracle(word, n):
    assert count_syllables(word) == n


def test_the_cat_sat():
    s = analyze_text("The cat sat.")
    assert (s.sentences, s.words, s.syllables, s.complex_words) == (1, 3, 3, 0)
    assert round(flesch_reading_ease(s), 2) == 119.19
    assert round(gunning_fog(s), 2) == 1.2


def test_hand_counted_two_sentences():
    # Operators(4) monitor(3) traffic(2). Attacks(2) vary(2).
    text = "Operators monitor traffic. Attacks vary."
    s = analyze_text(text)
    assert (s.sentences, s.words, s.syllables, s.complex_words) == (2, 5, 13, 2)
    assert flesch_reading_ease(text) == pytest.approx(206.835 - 1.015 * 2.5 - 84.6 * 13 / 5)
    assert gunning_fog(text) == pytest.approx(0.4 * (2.5 + 40.0))
    assert score_text(text).fog_label == "college graduate"


def test_sentence_boundaries():
    assert len(split_sentences("Value 0.22 rose. Then fell!")) == 2
    assert len(split_sentences("- bullet one\n- bullet two\n\n## Heading")) == 3
    assert split_sentences("...") == []


def test_complex_word_exclusions():
    # proper noun inside a sentence, and a word that reaches 3 syllables only via -ing
    assert analyze_text("We saw Cassandra.").complex_words == 0
    assert analyze_text("Jumping happens.").complex_words == 0
    assert analyze_text("Analysis matters.").complex_words == 1


@pytest.mark.parametrize("fog,label", [
    (1.2, "1"), (11.98, "12"), (12.49, "12"), (12.5, "college"), (16.4, "college"),
    (16.5, "college graduate"), (25.0, "college graduate")])
def test_fog_labels(fog, label):
    assert fog_grade_label(fog) == label


def test_empty_text_is_an_error():
    for text in ("", "   ", "123 456."):
        with pytest.raises(ReadabilityError):
            score_text(text)
    with pytest.raises(ReadabilityError):
        flesch_reading_ease(TextStats(0, 0, 0, 0))


def test_reference_outputs_direction():
    outs = reference_outputs()
    zero, few = score_text(outs["zero_shot"]), score_text(outs["few_shot"])
    assert few.flesch_reading_ease > zero.flesch_reading_ease
    assert round(zero.flesch_reading_ease, 2) == 36.22
    assert round(few.flesch_reading_ease, 2) == 37.36


_word = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(_word, min_size=1, max_size=15), min_size=1, max_size=8))
def test_scores_are_finite_and_consistent(sentences):
    text = " ".join(" ".join(ws) + "." for ws in sentences)
    s = analyze_text(text)
    assert s.sentences == len(sentences)
    assert s.words == sum(len(ws) for ws in sentences)
    assert s.words <= s.syllables
    assert 0 <= s.complex_words <= s.words
    r = score_text(text)
    assert math.isfinite(r.flesch_reading_ease) and r.gunning_fog >= 0
    assert r.to_dict()["stats"]["words"] == s.words
