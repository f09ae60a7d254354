"""ROUGE scoring, dataset characterization, and name-consistency checks.

ROUGE here is computed on this toolkit's tokenizer output without stemming
or stopword removal; all comparisons in this project are internal, so
self-consistency matters more than parity with the official script.
"""

from __future__ import annotations

from dataclasses import dataclass

from .text import ngrams, tokenize_cased


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _prf(overlap: float, cand_total: int, ref_total: int) -> RougeScore:
    p = overlap / cand_total if cand_total > 0 else 0.0
    r = overlap / ref_total if ref_total > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(p, r, f1)


def rouge_n(candidate: list[str], reference: list[str], n: int) -> RougeScore:
    """Clipped n-gram overlap: sum over grams of min(count_cand, count_ref)."""
    if n not in (1, 2):
        raise ValueError("rouge_n: n must be 1 or 2")
    cand = ngrams(candidate, n)
    ref = ngrams(reference, n)
    overlap = sum(min(c, ref.get(g, 0)) for g, c in cand.items())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b)) rolling DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeScore:
    l = lcs_length(candidate, reference)
    return _prf(l, len(candidate), len(reference))


def mean_rouge(candidate: list[str], reference: list[str]) -> float:
    """Arithmetic mean of ROUGE-1/2/L f1, used for aligning and analyses."""
    return (
        rouge_n(candidate, reference, 1).f1
        + rouge_n(candidate, reference, 2).f1
        + rouge_l(candidate, reference).f1
    ) / 3.0


def novel_ngram_proportion(summary: list[str], document: list[str], n: int) -> float:
    """Fraction of summary n-grams (with multiplicity) absent from the document."""
    if n < 1:
        raise ValueError("novel_ngram_proportion: n must be >= 1")
    summ = ngrams(summary, n)
    total = sum(summ.values())
    if total == 0:
        return 0.0
    doc_grams = set(ngrams(document, n))
    novel = sum(c for g, c in summ.items() if g not in doc_grams)
    return novel / total


def lead_bias_ratio(abstractive_rl: float, lead_rl: float) -> float:
    """Abstractive-over-lead ROUGE-L ratio; > 1 means weak lead bias."""
    if lead_rl <= 0:
        raise ValueError("lead_bias_ratio: lead ROUGE-L must be positive")
    return abstractive_rl / lead_rl


def name_consistency(
    pairs: list[tuple[str, str]], names: set[str]
) -> tuple[float, float]:
    """Fraction of name-in-summary events also present in the paired document.

    An event is one (pair, name) where the name appears in the summary;
    it is good when the document mentions the name too, bad otherwise.
    Matching is case-sensitive on whole tokens. With no events at all,
    both fractions are 0 (nothing to measure).
    """
    if not names:
        raise ValueError("name_consistency: names must be nonempty")
    good = bad = 0
    for document, summary in pairs:
        doc_tokens = set(tokenize_cased(document))
        summ_tokens = set(tokenize_cased(summary))
        for name in names:
            if name in summ_tokens:
                if name in doc_tokens:
                    good += 1
                else:
                    bad += 1
    total = good + bad
    if total == 0:
        return 0.0, 0.0
    return good / total, bad / total
