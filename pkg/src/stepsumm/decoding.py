"""Greedy and beam-search decoding with length-normalized scoring.

Both decoders share the same step rule: pad and begin-of-sequence ids are
always masked, the end token is masked while the summary is shorter than
min_decode_len and forced once it reaches max_decode_len. Scores are
cumulative token log-probabilities (end token included); finished
hypotheses compare by score divided by generated length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as m
from .text import BOS, EOS, PAD


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float  # cumulative log-probability incl. EOS when finished
    finished: bool = False

    def normalized(self) -> float:
        return self.score / (len(self.tokens) + 1)  # +1 for the end token


@dataclass
class DecodeState:
    """Beam frontier, ordered best-first by cumulative log-probability."""

    beams: list[Hypothesis]
    width: int
    step: int
    min_len: int
    max_len: int
    finished: list[Hypothesis] = field(default_factory=list)


class _StepScorer:
    """Log-probabilities of the next token given a generated prefix."""

    def __init__(self, doc_ids, prev_ids, params, config, polish=True):
        if not doc_ids:
            raise m.EmptyInputError("decoding requires a document")
        h_d = m.encode(doc_ids, "document", params, config)
        h_s = m.encode(prev_ids, "prev_summary", params, config) if prev_ids else None
        if polish:
            q = m.summary_query(h_s, config)
            self.h_g = m.selective_polish(h_d, q, params, config)
        else:
            self.h_g = h_d
        self.h_s = h_s
        self.params = params
        self.config = config

    def logprobs(self, prefix: list[int], allow_eos: bool, force_eos: bool) -> np.ndarray:
        _, dist = m.decoder_step([BOS] + prefix, self.h_g, self.h_s, self.params, self.config)
        logp = np.log(np.maximum(dist.data[0], 1e-300))
        logp[PAD] = -np.inf
        logp[BOS] = -np.inf
        if force_eos:
            only = np.full_like(logp, -np.inf)
            only[EOS] = logp[EOS]
            return only
        if not allow_eos:
            logp[EOS] = -np.inf
        return logp


def greedy_decode(doc_ids, prev_ids, params, config, polish=True,
                  min_len=None, max_len=None) -> list[int]:
    """Argmax decoding; ties resolve to the lowest token id."""
    min_len = config.min_decode_len if min_len is None else min_len
    max_len = config.max_decode_len if max_len is None else max_len
    scorer = _StepScorer(doc_ids, prev_ids, params, config, polish)
    tokens: list[int] = []
    while len(tokens) < max_len:
        logp = scorer.logprobs(tokens, allow_eos=len(tokens) >= min_len, force_eos=False)
        nxt = int(np.argmax(logp))
        if nxt == EOS:
            break
        tokens.append(nxt)
    return tokens


def beam_decode(doc_ids, prev_ids, params, config, beam_width=4, polish=True,
                min_len=None, max_len=None) -> list[int]:
    """Length-normalized beam search; returns the best finished hypothesis.

    With beam_width 1 the frontier always holds the greedy prefix, so the
    result is bit-identical to greedy_decode.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    min_len = config.min_decode_len if min_len is None else min_len
    max_len = config.max_decode_len if max_len is None else max_len
    scorer = _StepScorer(doc_ids, prev_ids, params, config, polish)
    state = DecodeState(
        beams=[Hypothesis([], 0.0)], width=beam_width, step=0,
        min_len=min_len, max_len=max_len,
    )
    while state.beams and state.step <= max_len:
        candidates: list[Hypothesis] = []
        for hyp in state.beams:
            force = len(hyp.tokens) >= max_len
            logp = scorer.logprobs(
                hyp.tokens, allow_eos=len(hyp.tokens) >= min_len, force_eos=force
            )
            # each hypothesis proposes exactly its top beam_width tokens, so a
            # width-1 beam follows the greedy path and stops where greedy stops
            order = np.argsort(-logp, kind="stable")[:beam_width]
            for tok in order:
                tok = int(tok)
                if not np.isfinite(logp[tok]):
                    continue
                if tok == EOS:
                    state.finished.append(
                        Hypothesis(hyp.tokens, hyp.score + logp[tok], finished=True)
                    )
                else:
                    candidates.append(Hypothesis(hyp.tokens + [tok], hyp.score + logp[tok]))
        candidates.sort(key=lambda h: (-h.score, h.tokens))
        state.beams = candidates[:beam_width]
        state.step += 1
    pool = state.finished if state.finished else state.beams
    if not pool:
        return []
    return sorted(pool, key=lambda h: (-h.normalized(), h.tokens))[0].tokens
