from hypothesis import given, strategies as st

from parley.text import CONTRACTIONS, first_number, format_number, normalize_text


def test_contractions_expand_before_punctuation():
    assert normalize_text("I'm fine, I don't know!") == ["i", "am", "fine", "i", "do", "not", "know"]
    assert normalize_text("It’s   OK") == ["it", "is", "ok"]


def test_contraction_table_size_and_form():
    assert len(CONTRACTIONS) == 40
    assert all("'" in k and "'" not in v for k, v in CONTRACTIONS.items())


def test_punctuation_splits_tokens():
    assert normalize_text("1-2 days; 98.6") == ["1", "2", "days", "98", "6"]
    assert normalize_text("") == []


@given(st.text())
def test_normalize_is_idempotent(raw):
    once = normalize_text(raw)
    assert normalize_text(" ".join(once)) == once


@given(st.text())
def test_normalized_tokens_are_clean(raw):
    for tok in normalize_text(raw):
        assert tok == tok.lower() or not tok.isalpha()
        assert " " not in tok and "'" not in tok


def test_first_number():
    assert first_number("about 98.6 degrees") == 98.6
    assert first_number("three, maybe 4") == 3.0
    assert first_number("there are 2 of us, not three") == 2.0
    assert first_number("1,200 dollars") == 1200.0
    assert first_number("none of them") == 0.0
    assert first_number("no idea") is None


def test_format_number():
    assert format_number(2.0) == "2"
    assert format_number(98.6) == "98.6"
