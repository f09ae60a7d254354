"""Stream corpus construction: segment summaries, align them to source
paragraphs, and package the surviving pairs as document/summary streams.

Raw episodes arrive as JSON lines with fields id, recap_paragraphs
(array of strings), and summary (string). Aligned output is one JSON
line per stream with id, documents, and summaries of equal length.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .metrics import mean_rouge, novel_ngram_proportion, rouge_l
from .text import sentence_split, tokenize


@dataclass
class RawEpisode:
    id: str
    recap_paragraphs: list[str]
    summary: str


@dataclass
class StreamRecord:
    """An aligned stream: pairs[i] = (document text, summary text), in order."""

    id: str
    pairs: list[tuple[str, str]]

    @property
    def documents(self) -> list[str]:
        return [d for d, _ in self.pairs]

    @property
    def summaries(self) -> list[str]:
        return [s for _, s in self.pairs]


def _unigram_cosine(a: list[str], b: list[str]) -> float:
    ca, cb = Counter(a), Counter(b)
    if not ca or not cb:
        return 0.0
    dot = sum(ca[t] * cb[t] for t in ca.keys() & cb.keys())
    na = math.sqrt(sum(v * v for v in ca.values()))
    nb = math.sqrt(sum(v * v for v in cb.values()))
    return dot / (na * nb)


def segment_summary(summary: str, window: int = 2, slack: float = 0.5) -> list[str]:
    """Group summary sentences into contiguous topical segments.

    Adjacent-window similarity valleys mark topic shifts: for each boundary
    between sentences, compare the unigram-cosine of the `window` sentences
    on either side; a boundary is kept when it is a local minimum lying
    below mean - slack * stddev of all boundary similarities. Segments
    always contain at least one sentence and concatenate back to the
    sentence-split summary.
    """
    sentences = sentence_split(summary)
    if not sentences:
        return []
    if len(sentences) == 1:
        return [sentences[0]]
    tokens = [tokenize(s) for s in sentences]
    sims = []
    for j in range(len(sentences) - 1):
        left = sum(tokens[max(0, j - window + 1) : j + 1], [])
        right = sum(tokens[j + 1 : j + 1 + window], [])
        sims.append(_unigram_cosine(left, right))
    arr = np.asarray(sims)
    threshold = arr.mean() - slack * arr.std()
    boundaries = []
    for j, s in enumerate(sims):
        left_ok = j == 0 or sims[j - 1] > s
        right_ok = j == len(sims) - 1 or sims[j + 1] > s
        if s < threshold and left_ok and right_ok:
            boundaries.append(j)
    segments = []
    start = 0
    for j in boundaries:
        segments.append(" ".join(sentences[start : j + 1]))
        start = j + 1
    segments.append(" ".join(sentences[start:]))
    return segments


@dataclass
class AlignedPair:
    paragraph: int
    segment: int
    confidence: float  # mean of ROUGE-1/2/L f1 for the kept pair


def align(segments: list[str], paragraphs: list[str]) -> list[AlignedPair]:
    """Mutual-best matching by ROUGE-L f1, sorted by paragraph index.

    Each segment nominates its best paragraph and each paragraph its best
    segment (ties to the smaller index); only pairs nominated from both
    sides are kept. Keeping mutual bests satisfies both directions of the
    selection rule at once and cannot produce many-to-one collisions.
    """
    if not segments or not paragraphs:
        raise ValueError("align: segments and paragraphs must be nonempty")
    seg_tokens = [tokenize(s) for s in segments]
    par_tokens = [tokenize(p) for p in paragraphs]
    scores = np.zeros((len(paragraphs), len(segments)))
    for i, pt in enumerate(par_tokens):
        for j, st in enumerate(seg_tokens):
            scores[i, j] = rouge_l(st, pt).f1
    best_par_for_seg = scores.argmax(axis=0)  # ties -> smaller index
    best_seg_for_par = scores.argmax(axis=1)
    kept = []
    for i in range(len(paragraphs)):
        j = int(best_seg_for_par[i])
        if int(best_par_for_seg[j]) == i:
            kept.append(AlignedPair(i, j, mean_rouge(seg_tokens[j], par_tokens[i])))
    kept.sort(key=lambda p: p.paragraph)
    return kept


@dataclass
class BuildReport:
    streams: list[StreamRecord] = field(default_factory=list)
    skipped_malformed: int = 0
    dropped_short: int = 0


def build_streams(episodes: list[RawEpisode]) -> BuildReport:
    """Segment, align, and filter each episode independently.

    Streams that end up with fewer than two aligned pairs carry no usable
    step structure and are dropped. Malformed episodes (empty fields) are
    skipped and counted.
    """
    report = BuildReport()
    for ep in episodes:
        if not ep.recap_paragraphs or not ep.summary.strip() or not all(
            p.strip() for p in ep.recap_paragraphs
        ):
            report.skipped_malformed += 1
            continue
        segments = segment_summary(ep.summary)
        if not segments:
            report.skipped_malformed += 1
            continue
        pairs = align(segments, ep.recap_paragraphs)
        if len(pairs) < 2:
            report.dropped_short += 1
            continue
        report.streams.append(
            StreamRecord(
                ep.id,
                [(ep.recap_paragraphs[p.paragraph], segments[p.segment]) for p in pairs],
            )
        )
    return report


# ---------------------------------------------------------------------------
# synthetic corpus with planted alignments


def _make_sentence(words: list[str]) -> str:
    return words[0].capitalize() + " " + " ".join(words[1:]) + " ."


@dataclass(frozen=True)
class PlantedPair:
    paragraph: int
    segment: int
    paragraph_text: str
    segment_text: str


def synth_corpus(
    seed: int,
    n_episodes: int,
    pairs_per_episode_range: tuple[int, int] = (2, 5),
    noise_level: float = 0.0,
    topic_vocab_size: int = 30,
    noise_vocab_size: int = 200,
) -> tuple[list[RawEpisode], dict[str, list[PlantedPair]]]:
    """Generate episodes with known paragraph/segment correspondences.

    Each paragraph draws from its own topic vocabulary and every sentence
    of a topic opens with the topic's anchor token (entities recur within a
    topic, which is what keeps segments cohesive). The summary segment
    reuses paragraph tokens except for a `noise_level` fraction replaced by
    draws from a shared noise vocabulary. Deterministic per seed. Returns
    the episodes plus the planted truth per episode id.
    """
    lo, hi = pairs_per_episode_range
    if lo < 1 or hi < lo or not 0.0 <= noise_level <= 1.0:
        raise ValueError("synth_corpus: invalid ranges")
    rng = np.random.default_rng(seed)
    noise_vocab = [f"zz{k}" for k in range(noise_vocab_size)]
    episodes = []
    truth: dict[str, list[PlantedPair]] = {}
    for e in range(n_episodes):
        n_pairs = int(rng.integers(lo, hi + 1))
        paragraphs = []
        segments = []
        for p in range(n_pairs):
            vocab = [f"t{e}p{p}w{k}" for k in range(topic_vocab_size)]
            anchor = vocab[0]
            para_sents = []
            for _ in range(int(rng.integers(3, 6))):
                words = [anchor] + [vocab[int(rng.integers(topic_vocab_size))]
                                    for _ in range(int(rng.integers(5, 10)))]
                para_sents.append(_make_sentence(words))
            paragraphs.append(" ".join(para_sents))
            para_words = [w for w in tokenize(paragraphs[-1]) if w != "."]
            seg_sents = []
            for _ in range(int(rng.integers(2, 4))):
                words = [anchor]
                for _ in range(int(rng.integers(4, 8))):
                    if rng.random() < noise_level:
                        words.append(noise_vocab[int(rng.integers(noise_vocab_size))])
                    else:
                        words.append(para_words[int(rng.integers(len(para_words)))])
                seg_sents.append(_make_sentence(words))
            segments.append(" ".join(seg_sents))
        ep_id = f"ep{e:04d}"
        episodes.append(RawEpisode(ep_id, paragraphs, " ".join(segments)))
        truth[ep_id] = [
            PlantedPair(i, i, paragraphs[i], segments[i]) for i in range(n_pairs)
        ]
    return episodes, truth


def alignment_recovery(
    report: BuildReport, truth: dict[str, list[PlantedPair]]
) -> float:
    """Fraction of planted pairs present verbatim in the built streams.

    A planted pair counts as recovered only when its exact paragraph text
    appears paired with its exact segment text, so both the segmentation
    and the alignment must agree with the plant. Episodes planted with a
    single pair are excluded: the short-stream filter makes them
    unrecoverable by construction.
    """
    built = {s.id: set(s.pairs) for s in report.streams}
    planted = recovered = 0
    for ep_id, pairs in truth.items():
        if len(pairs) < 2:
            continue
        planted += len(pairs)
        got = built.get(ep_id, set())
        for p in pairs:
            if (p.paragraph_text, p.segment_text) in got:
                recovered += 1
    return recovered / planted if planted else 0.0


@dataclass
class CorpusStats:
    n_streams: int
    n_pairs: int
    mean_doc_words: float
    mean_summary_words: float
    length_histogram: dict[int, float]
    novel_ngram_by_n: dict[int, float]
    empty: bool = False

    def rows(self) -> list[tuple[str, str]]:
        out = [
            ("streams", str(self.n_streams)),
            ("pairs", str(self.n_pairs)),
            ("mean_doc_words", f"{self.mean_doc_words:.2f}"),
            ("mean_summary_words", f"{self.mean_summary_words:.2f}"),
        ]
        for length in sorted(self.length_histogram):
            out.append((f"stream_length_{length}", f"{self.length_histogram[length]:.4f}"))
        for n in sorted(self.novel_ngram_by_n):
            out.append((f"novel_{n}gram", f"{self.novel_ngram_by_n[n]:.4f}"))
        return out


def corpus_stats(streams: list[StreamRecord]) -> CorpusStats:
    """Corpus-level statistics.

    Word counts use this toolkit's tokenizer, so absolute numbers depend on
    that choice. Novel n-gram proportions are pooled corpus-wide (total
    novel grams over total summary grams).
    """
    if not streams:
        return CorpusStats(0, 0, 0.0, 0.0, {}, {n: 0.0 for n in range(1, 5)}, empty=True)
    doc_lengths = []
    summ_lengths = []
    hist = Counter()
    novel_num = {n: 0.0 for n in range(1, 5)}
    novel_den = {n: 0 for n in range(1, 5)}
    n_pairs = 0
    for stream in streams:
        hist[len(stream.pairs)] += 1
        for doc, summ in stream.pairs:
            n_pairs += 1
            dt, st = tokenize(doc), tokenize(summ)
            doc_lengths.append(len(dt))
            summ_lengths.append(len(st))
            for n in range(1, 5):
                total = max(0, len(st) - n + 1)
                if total:
                    novel_num[n] += novel_ngram_proportion(st, dt, n) * total
                    novel_den[n] += total
    return CorpusStats(
        n_streams=len(streams),
        n_pairs=n_pairs,
        mean_doc_words=float(np.mean(doc_lengths)),
        mean_summary_words=float(np.mean(summ_lengths)),
        length_histogram={k: v / len(streams) for k, v in sorted(hist.items())},
        novel_ngram_by_n={
            n: (novel_num[n] / novel_den[n] if novel_den[n] else 0.0) for n in range(1, 5)
        },
    )


# ---------------------------------------------------------------------------
# file formats (JSON lines)


def save_episodes(episodes: list[RawEpisode], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(
                {"id": ep.id, "recap_paragraphs": ep.recap_paragraphs, "summary": ep.summary},
                sort_keys=True,
            ) + "\n")


def load_episodes(path) -> list[RawEpisode]:
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                episodes.append(
                    RawEpisode(str(obj["id"]), list(obj["recap_paragraphs"]), str(obj["summary"]))
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed episode at line {lineno}: {exc}") from exc
    return episodes


def save_streams(streams: list[StreamRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in streams:
            fh.write(json.dumps(
                {"id": s.id, "documents": s.documents, "summaries": s.summaries},
                sort_keys=True,
            ) + "\n")


def load_streams(path) -> list[StreamRecord]:
    streams = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs, summs = list(obj["documents"]), list(obj["summaries"])
                if len(docs) != len(summs):
                    raise ValueError("documents and summaries differ in length")
                streams.append(StreamRecord(str(obj["id"]), list(zip(docs, summs))))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed stream at line {lineno}: {exc}") from exc
    return streams
