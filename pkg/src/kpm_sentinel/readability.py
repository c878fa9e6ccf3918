"""Flesch Reading Ease and Gunning Fog for insight text.

Counting is heuristic and deterministic:

* sentences end at a run of ``.``, ``!`` or ``?`` followed by whitespace or
  the end of the text (so ``0.22`` does not split), and at line breaks, since
  LLM output is markdown whose bullets and headings rarely carry a full stop;
* words are runs of ASCII letters;
* syllables are vowel groups, after dropping a silent final ``e`` and the
  ``-es`` / ``-ed`` endings that do not add a syllable;
* complex words have three or more syllables, excluding capitalized words
  inside a sentence (proper nouns) and words that only reach three through an
  ``-es``, ``-ed`` or ``-ing`` ending.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, asdict

_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)|\n")
_WORD = re.compile(r"[A-Za-z]+")
_SILENT_END = re.compile(r"(?:[^laeiouy]e|[^laeiouydt]ed|[^laeiouyhsxz]es)$")
_VOWELS = re.compile(r"[aeiouy]+")
_INFLECTIONS = ("ing", "es", "ed")


class ReadabilityError(ValueError):
    pass


@dataclass(frozen=True)
class TextStats:
    sentences: int = 0
    words: int = 0
    syllables: int = 0
    complex_words: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def count_syllables(word: str) -> int:
    w = word.lower()
    if not w:
        return 0
    if len(w) <= 3:
        return 1
    w = _SILENT_END.sub(lambda m: m.group(0)[0], w)
    if w.startswith("y"):
        w = w[1:]
    return max(1, len(_VOWELS.findall(w)))


def _is_complex(word: str, sentence_start: bool) -> bool:
    if count_syllables(word) < 3:
        return False
    if word[0].isupper() and not sentence_start:
        return False
    lower = word.lower()
    for suffix in _INFLECTIONS:
        if lower.endswith(suffix) and len(lower) > len(suffix) + 2:
            if count_syllables(lower[: -len(suffix)]) < 3:
                return False
    return True


def split_sentences(text: str) -> list[str]:
    parts = _SENTENCE_END.split(text)
    return [p for p in parts if _WORD.search(p)]


def analyze_text(text: str) -> TextStats:
    """Sentence, word, syllable and complex-word counts."""
    sentences = split_sentences(text or "")
    n_words = n_syll = n_complex = 0
    for sentence in sentences:
        for i, word in enumerate(_WORD.findall(sentence)):
            n_words += 1
            n_syll += count_syllables(word)
            n_complex += _is_complex(word, i == 0)
    return TextStats(len(sentences), n_words, n_syll, n_complex)


def _stats(x) -> TextStats:
    s = analyze_text(x) if isinstance(x, str) else x
    if s.words <= 0 or s.sentences <= 0:
        raise ReadabilityError("readability undefined for text without words or sentences")
    return s


def flesch_reading_ease(stats: TextStats | str) -> float:
    s = _stats(stats)
    return 206.835 - 1.015 * (s.words / s.sentences) - 84.6 * (s.syllables / s.words)


def gunning_fog(stats: TextStats | str) -> float:
    s = _stats(stats)
    return 0.4 * (s.words / s.sentences + 100.0 * s.complex_words / s.words)


def fog_grade_label(fog: float) -> str:
    """Whole grade up to 12, then "college" (13-16) and "college graduate" (17+)."""
    grade = math.floor(fog + 0.5)
    if grade <= 12:
        return str(grade)
    if grade <= 16:
        return "college"
    return "college graduate"


@dataclass(frozen=True)
class ReadabilityScores:
    flesch_reading_ease: float
    gunning_fog: float
    fog_label: str
    stats: TextStats

    def to_dict(self) -> dict:
        return {"flesch_reading_ease": self.flesch_reading_ease, "gunning_fog": self.gunning_fog,
                "fog_label": self.fog_label, "stats": self.stats.to_dict()}


def score_text(text: str) -> ReadabilityScores:
    s = _stats(text)
    fog = gunning_fog(s)
    return ReadabilityScores(flesch_reading_ease(s), fog, fog_grade_label(fog), s)
