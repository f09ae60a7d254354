import pytest
from hypothesis import given, strategies as st

from stepsumm import text


def test_tokenize_hand_cases():
    assert text.tokenize("The cat.") == ["the", "cat", "."]
    assert text.tokenize("") == []
    assert text.tokenize("a  b") == ["a", "b"]


def test_tokenize_punctuation_standalone():
    assert text.tokenize("Hello, world!") == ["hello", ",", "world", "!"]
    assert text.tokenize("it's done") == ["it's", "done"]


@given(st.text(max_size=80))
def test_tokenize_idempotent_on_joined_output(s):
    once = text.tokenize(s)
    assert text.tokenize(" ".join(once)) == once


def test_sentence_split_two_sentences():
    assert text.sentence_split("A b. C d.") == ["A b.", "C d."]


def test_sentence_split_no_terminal():
    assert text.sentence_split("No terminal punct") == ["No terminal punct"]


def test_sentence_split_abbreviation_stoplist():
    assert text.sentence_split("Mr. X came. He left.") == ["Mr. X came.", "He left."]


def test_sentence_split_empty():
    assert text.sentence_split("") == []
    assert text.sentence_split("   ") == []


def test_sentence_split_reconstructs_modulo_whitespace():
    src = "First one.  Second here!   Third?"
    parts = text.sentence_split(src)
    assert " ".join(parts).split() == src.split()


def test_ngrams_definition():
    got = text.ngrams(["a", "b", "c"], 2)
    assert got == {("a", "b"): 1, ("b", "c"): 1}
    assert text.ngrams(["a"], 2) == {}
    assert text.ngrams(["a", "a", "a"], 1) == {("a",): 3}


def test_ngrams_rejects_zero():
    with pytest.raises(ValueError):
        text.ngrams(["a"], 0)


@given(st.lists(st.sampled_from("ab"), max_size=12), st.integers(1, 5))
def test_ngrams_count_property(tokens, n):
    assert sum(text.ngrams(tokens, n).values()) == max(0, len(tokens) - n + 1)


def test_build_vocab_frequency_order():
    v = text.build_vocab([["a", "a", "b"]], min_count=1)
    assert v.token_to_id["a"] == 4
    assert v.token_to_id["b"] == 5


def test_build_vocab_threshold_maps_to_unk():
    v = text.build_vocab([["a", "b"]], min_count=2)
    assert len(v) == 4
    assert v.encode(["a"]) == [text.UNK]


def test_vocab_roundtrip_identity():
    v = text.build_vocab([["cat", "sat", "cat"]], min_count=1)
    tokens = ["cat", "sat", "cat"]
    assert v.decode(v.encode(tokens)) == tokens


def test_build_vocab_deterministic_tie_break():
    a = text.build_vocab([["x", "y", "z"]], min_count=1)
    b = text.build_vocab([["z", "y", "x"]], min_count=1)
    assert a.id_to_token == b.id_to_token  # lexicographic among equal counts


def test_vocab_file_roundtrip(tmp_path):
    v = text.build_vocab([["cat", "sat", "on", "mat", "cat"]], min_count=1)
    path = tmp_path / "vocab.txt"
    v.save(path)
    loaded = text.Vocab.load(path)
    assert loaded.id_to_token == v.id_to_token
    # line number = id - 4
    lines = path.read_text().splitlines()
    assert lines[v.token_to_id["cat"] - 4] == "cat"
