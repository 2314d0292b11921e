import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfcorrect.builder import NV_TEXTS, PV_TEXTS
from selfcorrect.masking import (
    CharTokenizer,
    TokenizedSample,
    TokenizerError,
    assign_loss_flags,
    full_answer_flags,
    masked_loss,
    masked_loss_and_grad,
    read_masked_corpus,
    tokenize_and_mask,
    write_masked_corpus,
)

from helpers import random_sample


def sample_of_case(case, seed=0):
    rng = random.Random(seed)
    while True:
        sample, *_ = random_sample(rng, f"{case.lower()}{seed}", PV_TEXTS, NV_TEXTS)
        if sample.case == case and (case == "GOOD" or sample.n_attempts == 2):
            return sample


def sample_with_attempts(n_attempts, seed=0):
    rng = random.Random(seed)
    while True:
        sample, *_ = random_sample(rng, f"n{n_attempts}s{seed}", PV_TEXTS, NV_TEXTS)
        if sample.n_attempts == n_attempts:
            return sample


def tokenizer_for(sample):
    return CharTokenizer.from_texts([seg.text for seg in sample.segments])


class TestAssignLossFlags:
    def test_good_flags(self):
        sample = sample_of_case("GOOD")
        flags = [inc for _, inc in assign_loss_flags(sample)]
        assert flags == [False, True, True, True]

    def test_bad_two_attempt_flags(self):
        sample = sample_of_case("BAD")
        flags = [inc for _, inc in assign_loss_flags(sample)]
        assert flags == [False, False, False, True, True, True, True]

    def test_bad_three_attempt_flags(self):
        sample = sample_with_attempts(3)
        flags = [inc for _, inc in assign_loss_flags(sample)]
        # attempts 1 and 2 excluded, attempt 3 plus all verifications included
        assert flags == [False, False, False, True, False, False, True, True, True, True]

    def test_idempotent(self):
        sample = sample_of_case("BAD", seed=5)
        assert assign_loss_flags(sample) == assign_loss_flags(sample)

    def test_full_answer_flags(self):
        sample = sample_of_case("BAD", seed=2)
        flags = [inc for _, inc in full_answer_flags(sample)]
        assert flags[0] is False
        assert all(flags[1:])


class TestCharTokenizer:
    def test_encode_empty_is_empty(self):
        tok = CharTokenizer("abc")
        assert tok.encode("") == []

    def test_deterministic_roundtrip(self):
        tok = CharTokenizer.from_texts(["hello world"])
        ids = tok.encode("hello world")
        assert ids == tok.encode("hello world")
        assert tok.decode(ids) == "hello world"

    def test_unknown_character(self):
        tok = CharTokenizer("ab")
        with pytest.raises(TokenizerError, match="'z'"):
            tok.encode("az z")

    def test_duplicate_alphabet_rejected(self):
        with pytest.raises(TokenizerError):
            CharTokenizer("aba")


class TestTokenizeAndMask:
    def test_good_mask_zero_over_question(self):
        sample = sample_of_case("GOOD", seed=3)
        tok = tokenizer_for(sample)
        ts = tokenize_and_mask(sample, tok)
        qlen = len(tok.encode(sample.segments[0].text))
        assert all(m == 0 for m in ts.loss_mask[:qlen])
        assert all(m == 1 for m in ts.loss_mask[qlen:])

    def test_bad_mask_zero_over_question_and_first_attempt(self):
        sample = sample_of_case("BAD", seed=4)
        tok = tokenizer_for(sample)
        ts = tokenize_and_mask(sample, tok)
        excluded_len = sum(len(tok.encode(seg.text)) for seg in sample.segments[:3])
        assert all(m == 0 for m in ts.loss_mask[:excluded_len])
        assert all(m == 1 for m in ts.loss_mask[excluded_len:])

    def test_mask_ones_equal_included_lengths(self):
        for seed in range(10):
            sample, *_ = random_sample(random.Random(seed), f"ml{seed}", PV_TEXTS, NV_TEXTS)
            tok = tokenizer_for(sample)
            ts = tokenize_and_mask(sample, tok)
            included = {
                i for i, inc in assign_loss_flags(sample) if inc
            }
            expected = sum(
                len(tok.encode(seg.text))
                for i, seg in enumerate(sample.segments)
                if i in included
            )
            assert sum(ts.loss_mask) == expected

    def test_spans_align_with_segments(self):
        sample = sample_of_case("BAD", seed=9)
        tok = tokenizer_for(sample)
        ts = tokenize_and_mask(sample, tok)
        assert [i for i, _ in ts.segment_spans] == list(range(len(sample.segments)))
        for i, (start, end) in ts.segment_spans:
            assert tok.decode(ts.token_ids[start:end]) == sample.segments[i].text
            span_mask = set(ts.loss_mask[start:end])
            assert len(span_mask) <= 1  # constant within the span

    def test_separator_rides_with_preceding_segment(self):
        sample = sample_of_case("GOOD", seed=6)
        tok = CharTokenizer.from_texts([seg.text for seg in sample.segments] + ["\n"])
        ts = tokenize_and_mask(sample, tok, separator="\n")
        # spans still partition and decode to text + separator
        _, (start, end) = ts.segment_spans[0]
        assert tok.decode(ts.token_ids[start:end]) == sample.segments[0].text + "\n"
        _, (start, end) = ts.segment_spans[-1]
        assert tok.decode(ts.token_ids[start:end]) == sample.segments[-1].text


class TestMaskedLoss:
    def test_all_zero_mask_gives_zero(self):
        logits = np.zeros((3, 4))
        assert masked_loss(logits, [0, 1, 2], [0, 0, 0]) == 0.0

    def test_all_ones_equals_unmasked_cross_entropy(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((5, 7))
        targets = rng.integers(0, 7, size=5)
        full = masked_loss(logits, targets, [1] * 5)
        by_hand = -np.mean(
            [np.log(np.exp(logits[i]) / np.exp(logits[i]).sum())[targets[i]] for i in range(5)]
        )
        assert math.isclose(full, by_hand, rel_tol=1e-12)

    def test_uniform_two_positions_mask_one(self):
        logits = np.zeros((2, 2))  # uniform predictions over a 2-token vocab
        loss = masked_loss(logits, [0, 1], [1, 0])
        assert math.isclose(loss, math.log(2), rel_tol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            masked_loss(np.zeros((2, 2)), [0], [1, 0])

    def test_masked_positions_have_exactly_zero_gradient(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((6, 5))
        targets = rng.integers(0, 5, size=6)
        mask = np.array([1, 0, 1, 0, 0, 1])
        _, grad = masked_loss_and_grad(logits, targets, mask)
        assert np.all(grad[mask == 0] == 0.0)
        assert np.any(grad[mask == 1] != 0.0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10**6))
    def test_monotone_composition(self, seed):
        # flipping any mask entry 1 -> 0 never increases gradient-receiving positions
        rng = np.random.default_rng(seed)
        n, v = 8, 4
        logits = rng.standard_normal((n, v))
        targets = rng.integers(0, v, size=n)
        mask = rng.integers(0, 2, size=n)
        _, grad = masked_loss_and_grad(logits, targets, mask)
        receiving = int((np.abs(grad).sum(axis=1) > 0).sum())
        ones = np.nonzero(mask)[0]
        for flip in ones:
            flipped = mask.copy()
            flipped[flip] = 0
            _, grad2 = masked_loss_and_grad(logits, targets, flipped)
            receiving2 = int((np.abs(grad2).sum(axis=1) > 0).sum())
            assert receiving2 <= receiving


class TestMaskedCorpusIO:
    def test_roundtrip(self, tmp_path):
        samples = []
        for seed in range(3):
            sample, *_ = random_sample(random.Random(seed), f"io{seed}", PV_TEXTS, NV_TEXTS)
            samples.append(tokenize_and_mask(sample, tokenizer_for(sample)))
        path = tmp_path / "masked.jsonl"
        write_masked_corpus(samples, path)
        assert read_masked_corpus(path) == samples

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "masked.jsonl"
        path.write_text('{"id": "x", "token_ids": [1, 2], "loss_mask": [1], "segment_spans": []}\n',
                        encoding="utf-8")
        from selfcorrect.jsonio import JsonLineError

        with pytest.raises(JsonLineError) as err:
            read_masked_corpus(path)
        assert err.value.line == 1


class TestTokenizedSampleInvariants:
    def test_span_partition_enforced(self):
        with pytest.raises(ValueError, match="partition"):
            TokenizedSample(id="x", token_ids=(1, 2, 3), loss_mask=(1, 1, 1),
                            segment_spans=((0, (0, 2)), (1, (2, 2)), (2, (1, 3))))

    def test_full_coverage_enforced(self):
        with pytest.raises(ValueError, match="cover"):
            TokenizedSample(id="x", token_ids=(1, 2, 3), loss_mask=(1, 1, 1),
                            segment_spans=((0, (0, 2)),))
