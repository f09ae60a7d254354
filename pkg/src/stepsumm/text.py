"""Tokenization, sentence splitting, n-grams, and vocabulary management."""

from __future__ import annotations

import re
from collections import Counter

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

# words (incl. contractions like "she'll"), numbers, or single punctuation marks
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*|[^\sa-z0-9]")

# terminal punctuation followed by whitespace and an uppercase letter ends a
# sentence, unless the preceding word is a known abbreviation
_ABBREVIATIONS = {"mr", "mrs", "dr", "ms", "st"}
_SENT_BOUNDARY = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation tokens; deterministic, whitespace-robust."""
    return _TOKEN_RE.findall(text.lower())


def tokenize_cased(text: str) -> list[str]:
    """Case-preserving variant, for entity matching (names are case-sensitive)."""
    return re.findall(r"[A-Za-z0-9]+(?:'[A-Za-z0-9]+)*|[^\sA-Za-z0-9]", text)


def sentence_split(text: str) -> list[str]:
    """Split on . ! ? before whitespace + uppercase, keeping original text.

    A terminal period after an abbreviation in the stoplist (mr, mrs, dr,
    ms, st) does not end a sentence. Text without terminal punctuation is a
    single segment. Empty input gives no segments.
    """
    stripped = text.strip()
    if not stripped:
        return []
    pieces: list[str] = []
    start = 0
    for m in _SENT_BOUNDARY.finditer(stripped):
        candidate = stripped[start : m.start()]
        last_word = re.findall(r"[A-Za-z]+", candidate[-20:])
        if last_word and last_word[-1].lower() in _ABBREVIATIONS and candidate.endswith("."):
            continue
        pieces.append(candidate.strip())
        start = m.end()
    tail = stripped[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces


def ngrams(tokens: list[str], n: int) -> Counter:
    """All contiguous n-grams with multiplicity; empty when len(tokens) < n."""
    if n < 1:
        raise ValueError("ngrams: n must be >= 1")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


class Vocab:
    """Immutable token <-> id mapping with fixed pad/bos/eos/unk ids."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(SPECIAL_TOKENS) + list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("Vocab: duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids if i not in (PAD, BOS, EOS)]

    def save(self, path) -> None:
        # one token per line; line number = id - 4, specials implicit
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token[len(SPECIAL_TOKENS) :]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocab(corpus: list[list[str]], min_count: int = 1) -> Vocab:
    """Keep tokens with frequency >= min_count, most frequent first.

    Ties break lexicographically, so identical corpora always produce
    identical vocabularies.
    """
    if min_count < 1:
        raise ValueError("build_vocab: min_count must be >= 1")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocab(kept)
