import json

import numpy as np
import pytest

from supctc.corpus import (
    BLANK,
    CorpusSpec,
    InsufficientData,
    MalformedRecord,
    UAProtocol,
    UTProtocol,
    Utterance,
    Vocabulary,
    check_split,
    generate_corpus,
    make_split,
    read_corpus,
    read_split,
    write_corpus,
    write_split,
)


def small_spec(**kw) -> CorpusSpec:
    base = dict(
        num_accents=3,
        speakers_per_accent=3,
        num_transcripts=12,
        transcript_len_range=(2, 4),
        vocab_size=6,
        feature_dim=5,
        seed=0,
    )
    base.update(kw)
    return CorpusSpec(**base)


class TestVocabulary:
    def test_blank_sits_at_index_zero(self):
        v = Vocabulary(symbols=("<blank>", "a", "b"))
        assert v.blank_index == BLANK == 0
        assert v.size == 3

    def test_rejects_missing_blank_symbol(self):
        with pytest.raises(ValueError):
            Vocabulary(symbols=("a", "b"))

    def test_rejects_duplicate_symbols(self):
        with pytest.raises(ValueError):
            Vocabulary(symbols=("<blank>", "a", "a"))

    def test_rejects_single_symbol(self):
        with pytest.raises(ValueError):
            Vocabulary(symbols=("<blank>",))


class TestGeneration:
    def test_utterance_count_is_product_of_counts(self):
        spec = small_spec(num_accents=6, speakers_per_accent=4, num_transcripts=50)
        _, utts = generate_corpus(spec)
        assert len(utts) == 6 * 4 * 50

    def test_same_seed_gives_identical_corpora(self):
        a = generate_corpus(small_spec())[1]
        b = generate_corpus(small_spec())[1]
        assert len(a) == len(b)
        for ua, ub in zip(a, b):
            assert ua.id == ub.id and ua.tokens == ub.tokens
            np.testing.assert_array_equal(ua.features, ub.features)

    def test_different_seed_changes_features(self):
        a = generate_corpus(small_spec(seed=0))[1]
        b = generate_corpus(small_spec(seed=1))[1]
        assert any(
            ua.features.shape != ub.features.shape
            or not np.array_equal(ua.features, ub.features)
            for ua, ub in zip(a, b)
        )

    def test_all_randomness_off_gives_identical_features_per_transcript(self):
        spec = small_spec(
            noise_scale=0.0,
            accent_shift_scale=0.0,
            speaker_jitter_scale=0.0,
            frame_jitter=0,
        )
        _, utts = generate_corpus(spec)
        by_transcript = {}
        for u in utts:
            by_transcript.setdefault(u.transcript_id, []).append(u)
        for group in by_transcript.values():
            first = group[0].features
            for u in group[1:]:
                np.testing.assert_array_equal(u.features, first)

    def test_tokens_avoid_blank_and_stay_in_vocabulary(self):
        vocab, utts = generate_corpus(small_spec())
        for u in utts:
            assert u.tokens
            assert all(1 <= t < vocab.size for t in u.tokens)

    def test_transcript_ids_biject_with_token_sequences(self):
        _, utts = generate_corpus(small_spec())
        seen = {}
        for u in utts:
            assert seen.setdefault(u.transcript_id, u.tokens) == u.tokens
        assert len({v for v in seen.values()}) == len(seen)

    def test_transcripts_have_no_adjacent_repeats(self):
        _, utts = generate_corpus(small_spec(num_transcripts=40))
        for u in utts:
            assert all(a != b for a, b in zip(u.tokens, u.tokens[1:]))

    def test_every_speaker_reads_every_transcript(self):
        _, utts = generate_corpus(small_spec())
        speakers = {u.speaker_id for u in utts}
        transcripts = {u.transcript_id for u in utts}
        pairs = {(u.speaker_id, u.transcript_id) for u in utts}
        assert len(pairs) == len(speakers) * len(transcripts)

    def test_impossible_transcript_space_raises(self):
        with pytest.raises(InsufficientData):
            generate_corpus(small_spec(vocab_size=1, num_transcripts=10))

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            small_spec(num_accents=0)
        with pytest.raises(ValueError):
            small_spec(transcript_len_range=(5, 2))
        with pytest.raises(ValueError):
            small_spec(noise_scale=-1.0)


class TestUASplit:
    def test_held_out_accent_is_test_only(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UAProtocol(held_out_accent="accent1"))
        by_id = {u.id: u for u in utts}
        test_accents = {by_id[i].accent_id for i in plan.test_ids}
        train_accents = {by_id[i].accent_id for i in plan.train_ids | plan.val_ids}
        assert test_accents == {"accent1"}
        assert "accent1" not in train_accents
        assert train_accents == {"accent0", "accent2"}

    def test_union_covers_corpus(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UAProtocol(held_out_accent="accent0"))
        assert plan.train_ids | plan.val_ids | plan.test_ids == {u.id for u in utts}

    def test_validator_accepts_generated_plan(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UAProtocol(held_out_accent="accent2"))
        check_split(utts, plan)

    def test_single_accent_corpus_rejected(self):
        _, utts = generate_corpus(small_spec(num_accents=1))
        with pytest.raises(InsufficientData):
            make_split(utts, UAProtocol(held_out_accent="accent0"))

    def test_unknown_accent_rejected(self):
        _, utts = generate_corpus(small_spec())
        with pytest.raises(InsufficientData):
            make_split(utts, UAProtocol(held_out_accent="accent9"))

    def test_validation_nonempty_and_carved_by_transcript(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UAProtocol(held_out_accent="accent0"))
        by_id = {u.id: u for u in utts}
        val_tr = {by_id[i].transcript_id for i in plan.val_ids}
        train_tr = {by_id[i].transcript_id for i in plan.train_ids}
        assert plan.val_ids
        assert not (val_tr & train_tr)


class TestUTSplit:
    def test_one_speaker_per_accent_is_test_only(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UTProtocol(fold=0))
        by_id = {u.id: u for u in utts}
        test_speakers = {by_id[i].speaker_id for i in plan.test_ids}
        nontest_speakers = {by_id[i].speaker_id for i in plan.train_ids | plan.val_ids}
        accents = {by_id[i].accent_id for i in plan.test_ids}
        assert len(accents) == 3
        assert not (test_speakers & nontest_speakers)
        per_accent = {}
        for s in test_speakers:
            per_accent.setdefault(s.rsplit("_", 1)[0], []).append(s)
        assert all(len(v) == 1 for v in per_accent.values())

    def test_no_transcript_shared_between_train_and_test(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UTProtocol(fold=1))
        by_id = {u.id: u for u in utts}
        train_tr = {by_id[i].transcript_id for i in plan.train_ids}
        test_tr = {by_id[i].transcript_id for i in plan.test_ids}
        assert not (train_tr & test_tr)
        assert test_tr

    def test_every_accent_present_in_train_and_test(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UTProtocol(fold=2))
        by_id = {u.id: u for u in utts}
        assert {by_id[i].accent_id for i in plan.train_ids} == {"accent0", "accent1", "accent2"}
        assert {by_id[i].accent_id for i in plan.test_ids} == {"accent0", "accent1", "accent2"}

    def test_folds_pick_different_speakers(self):
        _, utts = generate_corpus(small_spec())
        by_id = {u.id: u for u in utts}
        held = []
        for fold in range(3):
            plan = make_split(utts, UTProtocol(fold=fold))
            held.append(frozenset(by_id[i].speaker_id for i in plan.test_ids))
        assert len(set(held)) == 3

    def test_validator_accepts_generated_plan(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UTProtocol(fold=0))
        check_split(utts, plan)

    def test_single_speaker_corpus_rejected(self):
        _, utts = generate_corpus(small_spec(speakers_per_accent=1))
        with pytest.raises(InsufficientData):
            make_split(utts, UTProtocol(fold=0))

    def test_parts_are_disjoint(self):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, UTProtocol(fold=0))
        assert not (plan.train_ids & plan.test_ids)
        assert not (plan.train_ids & plan.val_ids)
        assert not (plan.val_ids & plan.test_ids)


class TestCorpusFile:
    def test_round_trip_is_bit_exact(self, tmp_path):
        vocab, utts = generate_corpus(small_spec())
        path = tmp_path / "corpus.jsonl"
        write_corpus(vocab, utts, path)
        vocab2, utts2 = read_corpus(path)
        assert vocab2.symbols == vocab.symbols
        assert len(utts2) == len(utts)
        for a, b in zip(utts, utts2):
            assert (a.id, a.speaker_id, a.accent_id, a.transcript_id, a.tokens) == (
                b.id, b.speaker_id, b.accent_id, b.transcript_id, b.tokens,
            )
            np.testing.assert_array_equal(a.features, b.features)

    def test_empty_corpus_round_trips(self, tmp_path):
        vocab = Vocabulary(symbols=("<blank>", "a"))
        path = tmp_path / "empty.jsonl"
        write_corpus(vocab, [], path)
        vocab2, utts2 = read_corpus(path)
        assert vocab2.symbols == vocab.symbols
        assert utts2 == []

    def test_truncated_line_reports_its_number(self, tmp_path):
        vocab, utts = generate_corpus(small_spec(num_transcripts=2, num_accents=2, speakers_per_accent=2))
        path = tmp_path / "corpus.jsonl"
        write_corpus(vocab, utts, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1] + [lines[-1][: len(lines[-1]) // 2]]) + "\n")
        with pytest.raises(MalformedRecord) as err:
            read_corpus(path)
        assert err.value.line_number == len(lines)

    def test_blank_token_in_record_rejected(self, tmp_path):
        vocab, utts = generate_corpus(small_spec(num_transcripts=2, num_accents=2, speakers_per_accent=2))
        path = tmp_path / "corpus.jsonl"
        write_corpus(vocab, utts, path)
        lines = path.read_text().splitlines()
        rec = json.loads(lines[1])
        rec["tokens"] = [0] + rec["tokens"][1:]
        lines[1] = json.dumps(rec)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedRecord):
            read_corpus(path)

    def test_conflicting_transcript_tokens_rejected(self, tmp_path):
        vocab, utts = generate_corpus(small_spec(num_transcripts=3, num_accents=2, speakers_per_accent=2))
        path = tmp_path / "corpus.jsonl"
        write_corpus(vocab, utts, path)
        lines = path.read_text().splitlines()
        first = json.loads(lines[1])
        second = json.loads(lines[2])
        second["tokens"] = list(first["tokens"]) + [1]
        lines[2] = json.dumps(second)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedRecord):
            read_corpus(path)

    def test_missing_file_raises_data_error(self, tmp_path):
        with pytest.raises((MalformedRecord, OSError)):
            read_corpus(tmp_path / "nope.jsonl")


class TestSplitFile:
    @pytest.mark.parametrize(
        "protocol", [UAProtocol(held_out_accent="accent1"), UTProtocol(fold=1)]
    )
    def test_round_trip(self, tmp_path, protocol):
        _, utts = generate_corpus(small_spec())
        plan = make_split(utts, protocol)
        path = tmp_path / "split.json"
        write_split(plan, path)
        plan2 = read_split(path)
        assert plan2.train_ids == plan.train_ids
        assert plan2.val_ids == plan.val_ids
        assert plan2.test_ids == plan.test_ids
        assert plan2.protocol == plan.protocol
