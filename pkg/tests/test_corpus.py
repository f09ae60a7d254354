import numpy as np
import pytest

from stepsumm import corpus
from stepsumm.text import tokenize


def test_segment_single_sentence():
    assert corpus.segment_summary("Just one here.") == ["Just one here."]


def test_segment_empty():
    assert corpus.segment_summary("") == []


def test_segment_uniform_repeated_sentence_stays_whole():
    text = " ".join(["The same thing happens again ."] * 6)
    assert len(corpus.segment_summary(text)) == 1


def test_segment_disjoint_halves_split_at_join():
    left = ["Apple banana cherry date .", "Banana cherry apple fig ."]
    right = ["Rocket engine booster valve .", "Valve rocket booster thruster ."]
    segs = corpus.segment_summary(" ".join(left + right))
    assert segs == [" ".join(left), " ".join(right)]


def test_segments_concatenate_to_sentence_split():
    text = "Aa bb cc . Aa cc bb . Xx yy zz . Yy xx zz ."
    segs = corpus.segment_summary(text)
    assert " ".join(segs).split() == text.split()
    assert all(seg for seg in segs)


def test_align_identity_on_identical_texts():
    paragraphs = ["apple banana cherry", "rocket engine valve", "ocean wave tide"]
    pairs = corpus.align(list(paragraphs), paragraphs)
    assert [(p.paragraph, p.segment) for p in pairs] == [(0, 0), (1, 1), (2, 2)]
    assert all(p.confidence == pytest.approx(1.0) for p in pairs)


def test_align_prefers_higher_overlap():
    # paragraph 0 shares three tokens with the segment, paragraph 1 shares one
    segments = ["alpha beta gamma delta"]
    paragraphs = ["alpha beta gamma zeta", "alpha mu nu xi"]
    pairs = corpus.align(segments, paragraphs)
    assert [(p.paragraph, p.segment) for p in pairs] == [(0, 0)]


def test_align_all_zero_scores_keeps_only_mutual_best():
    pairs = corpus.align(["qq rr"], ["aa bb", "cc dd"])
    assert [(p.paragraph, p.segment) for p in pairs] == [(0, 0)]


def test_align_permutation_covariant():
    paragraphs = ["apple banana cherry", "rocket engine valve", "ocean wave tide"]
    base = corpus.align(list(paragraphs), paragraphs)
    perm = [2, 0, 1]
    shuffled = [paragraphs[i] for i in perm]
    moved = corpus.align(list(paragraphs), shuffled)
    got = sorted((shuffled[p.paragraph], p.segment) for p in moved)
    want = sorted((paragraphs[p.paragraph], p.segment) for p in base)
    assert got == want


_FRUIT = "Apple banana cherry date fig . Apple fig banana cherry plum ."
_ROCKET = "Rocket engine booster valve pump . Rocket pump valve engine fin ."
_FRUIT_SUMM = "Apple cherry banana date . Apple banana fig plum ."
_ROCKET_SUMM = "Rocket valve booster engine . Rocket fin pump valve ."


def test_build_streams_filters_short_and_malformed():
    ok = corpus.RawEpisode("good", [_FRUIT, _ROCKET], _FRUIT_SUMM + " " + _ROCKET_SUMM)
    single = corpus.RawEpisode("single", [_FRUIT], _FRUIT_SUMM)
    malformed = corpus.RawEpisode("bad", [], "whatever")
    report = corpus.build_streams([ok, single, malformed])
    assert [s.id for s in report.streams] == ["good"]
    assert report.dropped_short == 1
    assert report.skipped_malformed == 1
    assert len(report.streams[0].pairs) == 2


def test_build_streams_is_per_episode_independent():
    ep = corpus.RawEpisode("x", [_FRUIT, _ROCKET], _FRUIT_SUMM + " " + _ROCKET_SUMM)
    twin = corpus.RawEpisode("y", list(ep.recap_paragraphs), ep.summary)
    report = corpus.build_streams([ep, twin])
    assert report.streams[0].pairs == report.streams[1].pairs


def test_synth_corpus_deterministic():
    eps_a, truth_a = corpus.synth_corpus(seed=7, n_episodes=5, noise_level=0.2)
    eps_b, truth_b = corpus.synth_corpus(seed=7, n_episodes=5, noise_level=0.2)
    assert [e.summary for e in eps_a] == [e.summary for e in eps_b]
    assert truth_a == truth_b
    eps_c, _ = corpus.synth_corpus(seed=8, n_episodes=5, noise_level=0.2)
    assert [e.summary for e in eps_c] != [e.summary for e in eps_a]


def test_noise_free_corpus_fully_recovered():
    episodes, truth = corpus.synth_corpus(seed=3, n_episodes=20, noise_level=0.0)
    report = corpus.build_streams(episodes)
    assert corpus.alignment_recovery(report, truth) == 1.0


def test_noisy_corpus_recovery_above_threshold():
    episodes, truth = corpus.synth_corpus(seed=11, n_episodes=100, noise_level=0.3)
    report = corpus.build_streams(episodes)
    assert corpus.alignment_recovery(report, truth) >= 0.95


def test_single_paragraph_episodes_all_filtered():
    episodes, _ = corpus.synth_corpus(
        seed=5, n_episodes=10, pairs_per_episode_range=(1, 1), noise_level=0.0
    )
    report = corpus.build_streams(episodes)
    assert report.streams == []
    assert report.dropped_short == 10


def test_pair_count_bounded_by_inputs():
    episodes, _ = corpus.synth_corpus(seed=2, n_episodes=10, noise_level=0.4)
    report = corpus.build_streams(episodes)
    for stream, ep in zip(report.streams, episodes):
        segs = corpus.segment_summary(ep.summary)
        assert len(stream.pairs) <= min(len(segs), len(ep.recap_paragraphs))
        assert len(stream.pairs) >= 2


def test_corpus_stats_arithmetic():
    stream = corpus.StreamRecord(
        "s", [("one two three four five six seven eight nine ten", "a b"),
              (" ".join(["w"] * 20), "c d")]
    )
    stats = corpus.corpus_stats([stream])
    assert stats.mean_doc_words == pytest.approx(15.0)
    assert stats.length_histogram == {2: 1.0}
    assert stats.n_pairs == 2


def test_corpus_stats_empty_flagged():
    stats = corpus.corpus_stats([])
    assert stats.empty
    assert stats.n_streams == 0


def test_stats_novelty_pooled():
    stream = corpus.StreamRecord("s", [("a b c", "a b"), ("x y", "p q")])
    stats = corpus.corpus_stats([stream])
    # pair 1: 0 of 2 unigrams novel; pair 2: 2 of 2 novel -> pooled 2/4
    assert stats.novel_ngram_by_n[1] == pytest.approx(0.5)


def test_episode_and_stream_files_roundtrip(tmp_path):
    episodes, _ = corpus.synth_corpus(seed=1, n_episodes=3, noise_level=0.1)
    ep_path = tmp_path / "episodes.jsonl"
    corpus.save_episodes(episodes, ep_path)
    loaded = corpus.load_episodes(ep_path)
    assert [e.id for e in loaded] == [e.id for e in episodes]
    assert loaded[0].recap_paragraphs == episodes[0].recap_paragraphs

    report = corpus.build_streams(episodes)
    st_path = tmp_path / "streams.jsonl"
    corpus.save_streams(report.streams, st_path)
    back = corpus.load_streams(st_path)
    assert [s.pairs for s in back] == [s.pairs for s in report.streams]


def test_load_episodes_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "recap_paragraphs": ["x"], "summary": "y"}\nnot json\n')
    with pytest.raises(ValueError, match="line 2"):
        corpus.load_episodes(path)


def test_pipeline_byte_deterministic(tmp_path):
    out = []
    for run in range(2):
        episodes, _ = corpus.synth_corpus(seed=4, n_episodes=8, noise_level=0.25)
        report = corpus.build_streams(episodes)
        path = tmp_path / f"run{run}.jsonl"
        corpus.save_streams(report.streams, path)
        out.append(path.read_bytes())
    assert out[0] == out[1]
