import math

import numpy as np
import pytest

from supctc.lm import (
    BOS,
    EOS,
    BadOrder,
    EmptyCorpus,
    LmFormatError,
    NGramModel,
    UnknownToken,
    next_token_logprob,
    read_lm,
    score_sequence,
    train_lm,
    write_lm,
)


class TestHandCounts:
    def test_single_unigram_sequence_unsmoothed(self):
        model = train_lm([[7]], order=1, smoothing_k=0.0)
        # observed events: the token once, end-of-sequence once
        assert next_token_logprob(model, [], 7) == pytest.approx(math.log(0.5))
        assert next_token_logprob(model, [], EOS) == pytest.approx(math.log(0.5))
        assert score_sequence(model, [7]) == pytest.approx(math.log(0.25))

    def test_count_ratios_without_smoothing(self):
        model = train_lm([[1], [1], [2]], order=1, smoothing_k=0.0)
        # six events total: 1 twice, 2 once, end three times
        assert next_token_logprob(model, [], 1) == pytest.approx(math.log(2 / 6))
        assert next_token_logprob(model, [], 2) == pytest.approx(math.log(1 / 6))
        assert next_token_logprob(model, [], EOS) == pytest.approx(math.log(3 / 6))
        # among the non-end tokens the first holds two thirds of the mass
        pa = math.exp(next_token_logprob(model, [], 1))
        pb = math.exp(next_token_logprob(model, [], 2))
        assert pa / (pa + pb) == pytest.approx(2 / 3)

    def test_bigram_context_counts(self):
        model = train_lm([[1, 2], [1, 3]], order=2, smoothing_k=0.0)
        assert next_token_logprob(model, [1], 2) == pytest.approx(math.log(0.5))
        assert next_token_logprob(model, [1], 3) == pytest.approx(math.log(0.5))
        # sequence starts: both begin with 1
        assert next_token_logprob(model, [], 1) == pytest.approx(0.0)

    def test_add_k_shifts_unseen_above_zero(self):
        model = train_lm([[1, 2], [2, 1]], order=2, smoothing_k=1.0)
        # token 1 never follows 1, but smoothing keeps it possible
        lp = next_token_logprob(model, [1], 1)
        assert math.isfinite(lp)
        assert lp < next_token_logprob(model, [1], 2)


class TestNormalization:
    def test_conditionals_sum_to_one(self):
        rng = np.random.default_rng(0)
        seqs = [[int(t) for t in rng.integers(1, 6, size=rng.integers(1, 7))]
                for _ in range(30)]
        model = train_lm(seqs, order=3, smoothing_k=0.5)
        outcomes = list(model.vocab) + [EOS]
        for _ in range(100):
            ctx_len = int(rng.integers(0, 3))
            prefix = [int(t) for t in rng.integers(1, 6, size=ctx_len)]
            total = sum(math.exp(next_token_logprob(model, prefix, t)) for t in outcomes)
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_unseen_context_is_uniform_under_add_k(self):
        model = train_lm([[1, 2, 3]], order=3, smoothing_k=0.5)
        uniform = math.log(1 / (len(model.vocab) + 1))
        assert next_token_logprob(model, [3, 1], 2) == pytest.approx(uniform)

    def test_long_prefix_truncated_to_context_window(self):
        model = train_lm([[1, 2, 3], [4, 2, 3]], order=2, smoothing_k=0.5)
        a = next_token_logprob(model, [1, 2], 3)
        b = next_token_logprob(model, [4, 2], 3)
        c = next_token_logprob(model, [2], 3)
        assert a == b == c


class TestBackoff:
    def test_unseen_pair_backs_off_with_penalty(self):
        model = train_lm([[1, 2], [1, 2], [3, 1]], order=2, smoothing_k=0.0)
        # token 2 never follows 3; falls back to raw token frequency * 0.4.
        # nine events total (six tokens, three ends), token 2 appears twice.
        assert next_token_logprob(model, [3], 2) == pytest.approx(
            math.log(0.4 * 2 / 9)
        )

    def test_unseen_context_backs_off_with_penalty(self):
        model = train_lm(
            [[1, 2], [1, 2], [3, 1]], order=2, smoothing_k=0.0, vocab=[1, 2, 3, 5]
        )
        # token 5 is in the vocabulary but never observed as a context
        assert next_token_logprob(model, [5], 2) == pytest.approx(
            math.log(0.4 * 2 / 9)
        )

    def test_empty_prefix_means_sequence_start(self):
        model = train_lm([[1, 2], [1, 2], [3, 1]], order=2, smoothing_k=0.0)
        # sequences begin with 1 twice and 3 once
        assert next_token_logprob(model, [], 1) == pytest.approx(math.log(2 / 3))
        assert next_token_logprob(model, [], 3) == pytest.approx(math.log(1 / 3))

    def test_token_never_seen_anywhere_is_impossible(self):
        model = train_lm([[1, 2]], order=2, smoothing_k=0.0, vocab=[1, 2, 3])
        assert next_token_logprob(model, [], 3) == -math.inf


class TestValidation:
    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpus):
            train_lm([], order=2)
        with pytest.raises(EmptyCorpus):
            train_lm([[]], order=2)

    def test_bad_order_rejected(self):
        with pytest.raises(BadOrder):
            train_lm([[1]], order=0)

    def test_query_outside_vocab_rejected(self):
        model = train_lm([[1, 2]], order=2)
        with pytest.raises(UnknownToken):
            next_token_logprob(model, [], 9)
        with pytest.raises(UnknownToken):
            next_token_logprob(model, [9], 1)

    def test_explicit_vocab_must_cover_corpus(self):
        with pytest.raises(UnknownToken):
            train_lm([[1, 5]], order=1, vocab=[1, 2])

    def test_explicit_vocab_extends_support(self):
        model = train_lm([[1]], order=1, smoothing_k=1.0, vocab=[1, 2, 3])
        assert math.isfinite(next_token_logprob(model, [], 3))

    def test_reserved_markers_rejected_in_training_data(self):
        with pytest.raises(UnknownToken):
            train_lm([[1, BOS]], order=1)
        with pytest.raises(UnknownToken):
            train_lm([[EOS]], order=1)


class TestSerialization:
    def test_roundtrip_preserves_scores(self, tmp_path):
        rng = np.random.default_rng(1)
        seqs = [[int(t) for t in rng.integers(1, 5, size=4)] for _ in range(20)]
        model = train_lm(seqs, order=3, smoothing_k=0.25)
        path = tmp_path / "model.json"
        write_lm(model, path)
        loaded = read_lm(path)
        assert loaded.order == model.order
        assert loaded.vocab == model.vocab
        for _ in range(50):
            prefix = [int(t) for t in rng.integers(1, 5, size=rng.integers(0, 4))]
            token = int(rng.integers(1, 5))
            assert next_token_logprob(loaded, prefix, token) == next_token_logprob(
                model, prefix, token
            )

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\"order\": 2}")
        with pytest.raises(LmFormatError):
            read_lm(path)
        path.write_text("not json")
        with pytest.raises(LmFormatError):
            read_lm(path)

    def test_training_is_deterministic(self):
        seqs = [[1, 2, 3], [2, 3], [3, 1]]
        a = train_lm(seqs, order=3, smoothing_k=0.5)
        b = train_lm(seqs, order=3, smoothing_k=0.5)
        assert a.counts == b.counts
        assert a.vocab == b.vocab


class TestScoring:
    def test_score_includes_termination(self):
        model = train_lm([[1, 2]], order=2, smoothing_k=0.0)
        expected = (
            next_token_logprob(model, [], 1)
            + next_token_logprob(model, [1], 2)
            + next_token_logprob(model, [1, 2], EOS)
        )
        assert score_sequence(model, [1, 2]) == pytest.approx(expected)

    def test_empty_sequence_scores_end_given_start(self):
        model = train_lm([[1, 2], [3]], order=2, smoothing_k=0.5)
        assert score_sequence(model, []) == next_token_logprob(model, [], EOS)

    def test_likely_sequence_beats_unlikely(self):
        seqs = [[1, 2, 3]] * 9 + [[3, 2, 1]]
        model = train_lm(seqs, order=2, smoothing_k=0.1)
        assert score_sequence(model, [1, 2, 3]) > score_sequence(model, [3, 2, 1])
