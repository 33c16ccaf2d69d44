import dataclasses
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_config, small_spec

from narrative_graph.baselines import (
    BASELINES,
    baseline_similarity,
    centrality,
    character_scores,
    distribution_position_baseline,
    even_sections,
    learn_anchors,
    random_even_baseline,
    run_baseline,
    scenesum_baseline,
    textrank_baseline,
    theory_position_baseline,
)
from narrative_graph.datamodel import DEFAULT_ANCHORS, corpus_dims, generate_synthetic, round_half_up
from narrative_graph.errors import ContractError, DataError
from narrative_graph.model import GraphTP


def centers(windows):
    return [w[len(w) // 2] for w in windows]


def loop_centrality(e, l1, l2):
    n = len(e)
    out = np.zeros(n)
    for i in range(n):
        before = after = 0.0
        for j in range(n):
            if j < i:
                before += e[i][j]
            elif j > i:
                after += e[i][j]
        out[i] = l1 * before + l2 * after
    return out


def expected_random_hit(lo, hi, gold):
    """Probability a uniformly placed 3-window inside [lo, hi) touches ``gold``."""
    starts = range(lo, hi - 2)
    return sum(1 for s in starts if set(range(s, s + 3)) & gold) / len(starts)


class TestRandomEven:
    def test_sections_n100(self):
        assert even_sections(100) == [(20 * t, 20 * t + 20) for t in range(5)]

    def test_remainder_to_last(self):
        assert even_sections(23)[-1] == (16, 23)

    def test_windows_inside_sections(self):
        for seed in range(20):
            for (lo, hi), w in zip(even_sections(100), random_even_baseline(100, seed)):
                assert len(w) == 3 and lo <= w[0] and w[-1] < hi

    def test_reproducible(self):
        assert random_even_baseline(77, 4) == random_even_baseline(77, 4)

    def test_short_screenplay_shrinks(self, caplog):
        with caplog.at_level(logging.WARNING):
            windows = random_even_baseline(7, 0)
        assert "shrink" in caplog.text
        assert all(1 <= len(w) <= 3 for w in windows)

    def test_too_short(self):
        with pytest.raises(ContractError):
            random_even_baseline(4, 0)

    def test_hit_rate_matches_closed_form(self):
        """Mean PA over 5 seeds agrees with the per-case expected hit rate within 3 sigma."""
        corpus = generate_synthetic(small_spec(movie_count=30, scene_range=(60, 140), sentence_range=(1, 1)))
        probs, hits = [], []
        for seed in range(5):
            for m_idx, movie in enumerate(corpus):
                windows = random_even_baseline(movie.n_scenes, seed * 1000 + m_idx)
                for t, (lo, hi) in enumerate(even_sections(movie.n_scenes)):
                    gold = set(movie.gold_labels[t + 1])
                    probs.append(expected_random_hit(lo, hi, gold))
                    hits.append(1.0 if set(windows[t]) & gold else 0.0)
        probs = np.array(probs)
        sigma = np.sqrt(np.sum(probs * (1 - probs))) / len(probs)
        assert abs(np.mean(hits) - probs.mean()) < 3 * sigma

    def test_closed_form_interior(self):
        # 18 start positions in a 20-scene section; a gold triple in the middle is hit by 5 of them
        assert expected_random_hit(0, 20, {9, 10, 11}) == pytest.approx(5 / 18)


class TestTheoryPosition:
    def test_n100(self):
        assert centers(theory_position_baseline(100)) == [10, 25, 50, 75, 90]

    def test_n10_rounds_half_up(self):
        windows = theory_position_baseline(10)
        assert [round_half_up(a * 10) for a in DEFAULT_ANCHORS] == [1, 3, 5, 8, 9]
        assert windows == [[0, 1, 2], [2, 3, 4], [4, 5, 6], [7, 8, 9], [7, 8, 9]]

    def test_deterministic(self):
        assert theory_position_baseline(57) == theory_position_baseline(57)


class TestDistributionPosition:
    def test_planted_at_theory_anchors(self):
        corpus = generate_synthetic(small_spec(movie_count=6, scene_range=(40, 80), position_jitter=0.0))
        anchors = distribution_position_baseline(corpus)
        n_min = min(m.n_scenes for m in corpus)
        np.testing.assert_allclose(anchors, DEFAULT_ANCHORS, atol=1 / (2 * n_min))

    def test_increasing_on_default_corpus(self):
        corpus = generate_synthetic(small_spec(movie_count=40, scene_range=(60, 140), position_jitter=0.02))
        assert np.all(np.diff(learn_anchors(corpus)) > 0)

    def test_single_movie(self, tiny_corpus):
        movie = tiny_corpus[0]
        expected = np.array(movie.gold_centers()) / movie.n_scenes
        np.testing.assert_allclose(learn_anchors([movie]), expected)

    def test_teacher_fallback(self, tiny_corpus):
        movie = dataclasses.replace(tiny_corpus[0], gold_labels=None)
        expected = np.argmax(movie.teacher_posteriors, axis=1) / movie.n_scenes
        np.testing.assert_allclose(learn_anchors([movie]), expected)

    def test_no_labels(self, tiny_corpus):
        bare = [dataclasses.replace(m, gold_labels=None, teacher_posteriors=None) for m in tiny_corpus]
        with pytest.raises(DataError):
            learn_anchors(bare)

    def test_windows_for_n(self, tiny_corpus):
        windows = distribution_position_baseline(tiny_corpus, n=50)
        assert len(windows) == 5 and all(len(w) == 3 for w in windows)


class TestTextRank:
    def test_constant_ties(self):
        windows = textrank_baseline(np.ones((9, 9)))
        assert centers(windows)[1:4] == [1, 2, 3]
        assert windows[0] == [0, 1, 2] and windows[4] == [3, 4, 5]

    def test_lambda1_only(self, rng):
        assert centrality(rng.normal(size=(6, 6)), 1.0, 0.0)[0] == 0.0

    def test_double_loop_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(5, 30))
            e = rng.normal(size=(n, n))
            l1, l2 = rng.random(2)
            np.testing.assert_allclose(centrality(e, l1, l2), loop_centrality(e.tolist(), l1, l2), atol=1e-12, rtol=0)

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_reversal_invariance(self, seed):
        r = np.random.default_rng(seed)
        e = r.normal(size=(10, 10))
        e = e + e.T
        forward = centrality(e)
        backward = centrality(e[::-1, ::-1])
        np.testing.assert_allclose(backward[::-1], forward, atol=1e-12)

    def test_too_few_scenes(self):
        with pytest.raises(ContractError):
            textrank_baseline(np.ones((4, 4)))

    def test_windows_sorted_by_scene(self, rng):
        c = centers(textrank_baseline(rng.normal(size=(30, 30))))
        assert c == sorted(c)


class TestSceneSum:
    def test_half_main(self):
        assert character_scores([("A", "B")], ["A"])[0] == 0.5

    def test_no_characters(self):
        assert character_scores([()], ["A"])[0] == 0.0

    def test_all_main_matches_textrank(self, rng):
        e = rng.normal(size=(12, 12))
        chars = [("A",)] * 12
        assert scenesum_baseline(e, chars, ["A"]) == textrank_baseline(e)


class TestRunBaseline:
    @pytest.mark.parametrize("name", BASELINES)
    def test_five_windows_in_range(self, name, tiny_corpus):
        preds = run_baseline(name, tiny_corpus, seed=2)
        for pred, movie in zip(preds, tiny_corpus):
            n = movie.n_scenes
            assert len(pred.tp_scene_windows) == 5
            assert pred.source == name
            for w in pred.tp_scene_windows:
                assert 1 <= len(w) <= min(3, n)
                assert all(0 <= i < n for i in w)
            np.testing.assert_allclose(pred.posteriors.sum(axis=1), 1.0)

    def test_unknown(self, tiny_corpus):
        with pytest.raises(ContractError):
            run_baseline("oracle", tiny_corpus)

    def test_textrank_deterministic(self, tiny_corpus):
        a = run_baseline("textrank", tiny_corpus, seed=1)
        b = run_baseline("textrank", tiny_corpus, seed=1)
        assert [p.tp_scene_windows for p in a] == [p.tp_scene_windows for p in b]

    def test_supplied_model(self, tiny_corpus):
        model = GraphTP(small_config(modality="av"), corpus_dims(tiny_corpus))
        e = baseline_similarity(tiny_corpus[0], model)
        assert e.shape == (tiny_corpus[0].n_scenes,) * 2
        e_av = baseline_similarity(tiny_corpus[0], model, multimodal=True)
        assert not np.allclose(e, e_av)
