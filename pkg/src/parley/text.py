"""Transcript text normalization shared by matching and WER scoring."""

from __future__ import annotations

import re

# Fixed expansion table. Ambiguous forms ("he's", "i'd") take their most common
# reading in survey answers.
CONTRACTIONS: dict[str, str] = {
    "i'm": "i am",
    "you're": "you are",
    "we're": "we are",
    "they're": "they are",
    "he's": "he is",
    "she's": "she is",
    "it's": "it is",
    "that's": "that is",
    "there's": "there is",
    "what's": "what is",
    "let's": "let us",
    "i've": "i have",
    "you've": "you have",
    "we've": "we have",
    "they've": "they have",
    "i'd": "i would",
    "you'd": "you would",
    "he'd": "he would",
    "she'd": "she would",
    "we'd": "we would",
    "they'd": "they would",
    "i'll": "i will",
    "you'll": "you will",
    "we'll": "we will",
    "they'll": "they will",
    "isn't": "is not",
    "aren't": "are not",
    "wasn't": "was not",
    "weren't": "were not",
    "don't": "do not",
    "doesn't": "does not",
    "didn't": "did not",
    "haven't": "have not",
    "hasn't": "has not",
    "hadn't": "had not",
    "won't": "will not",
    "wouldn't": "would not",
    "can't": "cannot",
    "couldn't": "could not",
    "shouldn't": "should not",
}

_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'", "`": "'"})
_CONTRACTION_RE = re.compile(
    r"(?<![\w'])("
    + "|".join(re.escape(k) for k in sorted(CONTRACTIONS, key=len, reverse=True))
    + r")(?![\w'])"
)
_PUNCT_RE = re.compile(r"[^\w\s]|_")

WORD_NUMBERS: dict[str, int] = {
    w: i
    for i, w in enumerate(
        "zero one two three four five six seven eight nine ten eleven twelve thirteen "
        "fourteen fifteen sixteen seventeen eighteen nineteen twenty".split()
    )
}
WORD_NUMBERS["none"] = 0

_NUMBER_RE = re.compile(r"(?<![\w.])(\d+(?:,\d{3})*(?:\.\d+)?)")
_WORD_RE = re.compile(r"[a-z]+")


def normalize_text(raw: str) -> list[str]:
    """Lowercase, expand contractions, strip punctuation and split into tokens.

    Contractions are expanded before punctuation is removed so that the
    apostrophes they depend on are still present.
    """
    text = raw.lower().translate(_APOSTROPHES)
    text = _CONTRACTION_RE.sub(lambda m: CONTRACTIONS[m.group(1)], text)
    text = _PUNCT_RE.sub(" ", text)
    return text.split()


def first_number(raw: str) -> float | None:
    """Return the first numeric value spoken in ``raw``.

    Digits (``98.6``, ``1,200``) and the words zero..twenty (plus "none") are
    recognised; whichever appears first wins.
    """
    text = raw.lower().translate(_APOSTROPHES)
    best: tuple[int, float] | None = None
    m = _NUMBER_RE.search(text)
    if m:
        best = (m.start(), float(m.group(1).replace(",", "")))
    for w in _WORD_RE.finditer(text):
        if best is not None and w.start() > best[0]:
            break
        if w.group() in WORD_NUMBERS:
            best = (w.start(), float(WORD_NUMBERS[w.group()]))
            break
    return None if best is None else best[1]


def format_number(value: float) -> str:
    """Render a number without trailing zeros (``2.0`` -> ``"2"``)."""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))
