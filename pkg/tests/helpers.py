"""Shared test fixtures: synthetic questions, traces, and sample generators."""

from __future__ import annotations

import random

from selfcorrect.builder import (
    NEGATIVE,
    POSITIVE,
    Segment,
    SelfCorrectionSample,
    SEG_ATTEMPT_ANSWER,
    SEG_ATTEMPT_COT,
    SEG_QUESTION,
    SEG_VERIFICATION,
    corrected_answer_text,
    make_verification_text,
    validate_sample,
)
from selfcorrect.grading import UNPARSEABLE, QuestionRecord
from selfcorrect.runner import CorrectionTrace, RoundRecord


def make_question(
    qid: str = "q1",
    n_options: int = 4,
    ground_truth: str = "A",
    dataset: str = "toyqa",
) -> QuestionRecord:
    labels = "ABCDE"[:n_options]
    return QuestionRecord(
        id=qid,
        dataset=dataset,
        question=f"Synthetic question {qid}?",
        options={label: f"option {label.lower()} text" for label in labels},
        ground_truth=ground_truth,
    )


def make_round(
    initial: str | None,
    verdict: str,
    revised: str | None = None,
    raw: str = "",
) -> RoundRecord:
    return RoundRecord(
        raw_output=raw or f"scripted output ({initial} -> {verdict})",
        initial_cot="because of reasons",
        initial_label=initial,
        verdict=verdict,
        revised_cot="revised reasoning" if revised is not None else None,
        revised_label=revised,
    )


def make_trace(qid: str, rounds: list[RoundRecord]) -> CorrectionTrace:
    return CorrectionTrace(
        question_id=qid,
        rounds=tuple(rounds),
        final_label=rounds[-1].post_verification_label(),
    )


def synthesize_row(
    n: int,
    first_correct: int,
    r2w: int,
    w2r: int,
    r2r_negative: int = 0,
    w2w_negative: int = 0,
    unparseable_verdicts: int = 0,
    prefix: str = "q",
) -> tuple[list[CorrectionTrace], list[QuestionRecord]]:
    """Per-item logs matching target counts.

    Ground truth is always "A"; correct initial answers are "A", wrong ones
    "B". Transition items carry NEGATIVE verdicts with the matching revision;
    everything else gets a POSITIVE verdict and keeps its initial answer.
    """
    if r2w + r2r_negative > first_correct:
        raise ValueError("not enough initially-correct items")
    wrong_first = n - first_correct
    if w2r + w2w_negative + unparseable_verdicts > wrong_first:
        raise ValueError("not enough initially-wrong items")
    traces: list[CorrectionTrace] = []
    questions: list[QuestionRecord] = []
    correct_used = 0
    wrong_used = 0
    for i in range(n):
        qid = f"{prefix}{i:05d}"
        questions.append(make_question(qid, n_options=3, ground_truth="A"))
        if i < first_correct:
            correct_used += 1
            if correct_used <= r2w:
                rounds = [make_round("A", NEGATIVE, revised="B")]
            elif correct_used <= r2w + r2r_negative:
                rounds = [make_round("A", NEGATIVE, revised="A")]
            else:
                rounds = [make_round("A", POSITIVE)]
        else:
            wrong_used += 1
            if wrong_used <= w2r:
                rounds = [make_round("B", NEGATIVE, revised="A")]
            elif wrong_used <= w2r + w2w_negative:
                rounds = [make_round("B", NEGATIVE, revised="C")]
            elif wrong_used <= w2r + w2w_negative + unparseable_verdicts:
                rounds = [make_round(None, UNPARSEABLE)]
            else:
                rounds = [make_round("B", POSITIVE)]
        traces.append(make_trace(qid, rounds))
    return traces, questions


# Word pool free of option-announcement patterns and verification sentinels.
_SAFE_WORDS = (
    "wug", "blick", "frop", "dax", "zorp", "quim", "trelb", "snib",
    "plonk", "vark", "chiz", "grue", "mip", "toves", "brillig",
)


def safe_text(rng: random.Random, min_words: int = 3, max_words: int = 10) -> str:
    words = [rng.choice(_SAFE_WORDS) for _ in range(rng.randint(min_words, max_words))]
    return " ".join(words)


def announcement_text(rng: random.Random, label: str, option_text: str) -> str:
    template = rng.choice(
        (
            "Therefore, the correct answer is {label}. {text}",
            "So the answer is {label}. {text}",
            "So the correct option is {label}. {text}.",
            "The answer is {label}",
        )
    )
    return template.format(label=label, text=option_text)


def random_sample(
    rng: random.Random,
    qid: str,
    pv_texts: tuple[str, ...],
    nv_texts: tuple[str, ...],
) -> tuple[SelfCorrectionSample, QuestionRecord, list[str], list[str]]:
    """A random grammar-valid sample plus its expected labels and polarities."""
    n_options = rng.randint(2, 5)
    labels = "ABCDE"[:n_options]
    truth = rng.choice(labels)
    q = make_question(qid, n_options=n_options, ground_truth=truth)
    good = rng.random() < 0.5
    segs = [Segment(kind=SEG_QUESTION, text=f"Question block for {qid}\n{safe_text(rng)}")]
    expected_labels: list[str] = []
    expected_polarities: list[str] = []
    if good:
        case, n_attempts = "GOOD", 1
        answer_label = truth
        segs += [
            Segment(kind=SEG_ATTEMPT_COT, attempt_index=1, text=safe_text(rng)),
            Segment(
                kind=SEG_ATTEMPT_ANSWER,
                attempt_index=1,
                text=announcement_text(rng, answer_label, q.options[answer_label]),
            ),
            Segment(
                kind=SEG_VERIFICATION,
                polarity=POSITIVE,
                text=make_verification_text(rng.choice(pv_texts)),
            ),
        ]
        expected_labels.append(answer_label)
        expected_polarities.append(POSITIVE)
    else:
        case = "BAD"
        n_attempts = rng.choice((2, 2, 2, 3))
        wrong_labels = [l for l in labels if l != truth]
        for i in range(1, n_attempts):
            wrong = rng.choice(wrong_labels)
            segs += [
                Segment(kind=SEG_ATTEMPT_COT, attempt_index=i, text=safe_text(rng)),
                Segment(
                    kind=SEG_ATTEMPT_ANSWER,
                    attempt_index=i,
                    text=announcement_text(rng, wrong, q.options[wrong]),
                ),
                Segment(
                    kind=SEG_VERIFICATION,
                    polarity=NEGATIVE,
                    text=make_verification_text(rng.choice(nv_texts)),
                ),
            ]
            expected_labels.append(wrong)
            expected_polarities.append(NEGATIVE)
        segs += [
            Segment(kind=SEG_ATTEMPT_COT, attempt_index=n_attempts, text=safe_text(rng)),
            Segment(kind=SEG_ATTEMPT_ANSWER, attempt_index=n_attempts, text=corrected_answer_text(q)),
            Segment(
                kind=SEG_VERIFICATION,
                polarity=POSITIVE,
                text=make_verification_text(rng.choice(pv_texts)),
            ),
        ]
        expected_labels.append(truth)
        expected_polarities.append(POSITIVE)
    sample = SelfCorrectionSample(
        id=f"{qid}-0",
        source_question_id=qid,
        case=case,
        segments=tuple(segs),
        n_attempts=n_attempts,
        provenance={"seed": rng.random()},
    )
    validate_sample(sample)
    return sample, q, expected_labels, expected_polarities
