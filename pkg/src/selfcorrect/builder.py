"""Construction of self-correction training samples from graded answers.

A sample is an ordered list of role-tagged segments. A good case (first
attempt correct) is question, attempt chain-of-thought, attempt answer,
positive verification. A bad case keeps the failed attempt(s), a negative
verification after each, then a corrected chain-of-thought, an answer
announcing the ground truth, and a closing positive verification.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .gateway import GatewayError, LMRequest, SamplingParams, sample_answers
from .grading import (
    CORRECT,
    UNPARSEABLE,
    WRONG,
    QuestionRecord,
    extract_choice,
    grade,
    split_at_announcement,
)
from .jsonio import JsonLineError, iter_jsonl, write_jsonl
from .prompts import ComposedQuestion, PromptPools, compose_question, per_question_seed

SEG_QUESTION = "QUESTION"
SEG_ATTEMPT_COT = "ATTEMPT_COT"
SEG_ATTEMPT_ANSWER = "ATTEMPT_ANSWER"
SEG_VERIFICATION = "VERIFICATION"

POSITIVE = "POSITIVE"
NEGATIVE = "NEGATIVE"

GOOD = "GOOD"
BAD = "BAD"

#: Default verification sentences; one is drawn per sample by the build seed.
PV_TEXTS = (
    "I am sure that the earlier answer is correct",
    "I am sure my answer is correct",
)
NV_TEXTS = ("Sorry, there is an error in the previous answer",)

VERIFICATION_PREAMBLE = "Thinking about the correctness of the previous answer..."

SKIP_UNPARSEABLE = "UNPARSEABLE_ATTEMPT"
SKIP_SAMPLING = "SAMPLING_FAILED"
SKIP_CORRECTED_COT = "CORRECTED_COT_FAILED"

MODE_PER_QUESTION = "per_question"
MODE_PER_ANSWER = "per_answer"


class GrammarError(ValueError):
    """A sample violates the segment grammar."""


class SampleRejected(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class Segment:
    kind: str
    text: str
    attempt_index: int | None = None
    polarity: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "attempt_index": self.attempt_index,
            "polarity": self.polarity,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        return cls(
            kind=d["kind"],
            text=d["text"],
            attempt_index=d.get("attempt_index"),
            polarity=d.get("polarity"),
        )


@dataclass(frozen=True)
class SelfCorrectionSample:
    id: str
    source_question_id: str
    case: str
    segments: tuple[Segment, ...]
    n_attempts: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_question_id": self.source_question_id,
            "case": self.case,
            "segments": [s.to_dict() for s in self.segments],
            "n_attempts": self.n_attempts,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelfCorrectionSample":
        return cls(
            id=d["id"],
            source_question_id=d["source_question_id"],
            case=d["case"],
            segments=tuple(Segment.from_dict(s) for s in d["segments"]),
            n_attempts=d["n_attempts"],
            provenance=d.get("provenance", {}),
        )


def _expected_layout(case: str, n_attempts: int) -> list[tuple[str, int | None, str | None]]:
    layout: list[tuple[str, int | None, str | None]] = [(SEG_QUESTION, None, None)]
    for i in range(1, n_attempts):
        layout += [
            (SEG_ATTEMPT_COT, i, None),
            (SEG_ATTEMPT_ANSWER, i, None),
            (SEG_VERIFICATION, None, NEGATIVE),
        ]
    layout += [
        (SEG_ATTEMPT_COT, n_attempts, None),
        (SEG_ATTEMPT_ANSWER, n_attempts, None),
        (SEG_VERIFICATION, None, POSITIVE),
    ]
    return layout


def validate_sample(s: SelfCorrectionSample) -> None:
    """Raise GrammarError naming the violated invariant; silent when valid."""
    if s.case not in (GOOD, BAD):
        raise GrammarError(f"sample {s.id!r}: case must be GOOD or BAD, got {s.case!r}")
    if s.case == GOOD and s.n_attempts != 1:
        raise GrammarError(f"sample {s.id!r}: GOOD case requires n_attempts = 1")
    if s.case == BAD and s.n_attempts < 2:
        raise GrammarError(f"sample {s.id!r}: BAD case requires n_attempts >= 2")
    for i, seg in enumerate(s.segments):
        if not seg.text:
            raise GrammarError(f"sample {s.id!r}: segment {i} has empty text")
        is_attempt = seg.kind in (SEG_ATTEMPT_COT, SEG_ATTEMPT_ANSWER)
        if is_attempt != (seg.attempt_index is not None):
            raise GrammarError(
                f"sample {s.id!r}: segment {i} attempt_index must be set exactly for attempt kinds"
            )
        if (seg.kind == SEG_VERIFICATION) != (seg.polarity is not None):
            raise GrammarError(
                f"sample {s.id!r}: segment {i} polarity must be set exactly for VERIFICATION"
            )
    actual = [(seg.kind, seg.attempt_index, seg.polarity) for seg in s.segments]
    expected = _expected_layout(s.case, s.n_attempts)
    if actual != expected:
        raise GrammarError(
            f"sample {s.id!r}: segment layout {actual} does not match the "
            f"{s.case} grammar with {s.n_attempts} attempts"
        )


def make_verification_text(sentence: str) -> str:
    return f"{VERIFICATION_PREAMBLE}\nThinking result: {sentence}"


def corrected_answer_text(q: QuestionRecord) -> str:
    return f"So the correct option is {q.ground_truth}. {q.options[q.ground_truth]}."


def build_sample(
    q: QuestionRecord,
    cq: ComposedQuestion,
    attempts: Sequence[tuple[str, str, str]],
    corrected_cot: str | None,
    pv_text: str,
    nv_text: str,
    sample_id: str | None = None,
    provenance: dict | None = None,
) -> SelfCorrectionSample:
    """Assemble one sample from graded attempts.

    `attempts` holds (cot_text, answer_text, verdict) tuples. A correct first
    attempt yields a GOOD sample (corrected_cot must be None); a wrong first
    attempt yields a BAD sample whose final attempt is the corrected
    chain-of-thought plus an answer announcing the ground truth.
    """
    if not attempts:
        raise ValueError("attempts must be non-empty")
    first_verdict = attempts[0][2]
    if first_verdict == UNPARSEABLE:
        raise SampleRejected(SKIP_UNPARSEABLE, f"question {q.id!r}")
    sample_id = sample_id if sample_id is not None else f"{q.id}-0"
    provenance = provenance or {}
    segments = [Segment(kind=SEG_QUESTION, text=cq.text)]
    if first_verdict == CORRECT:
        if corrected_cot is not None:
            raise ValueError("corrected_cot must be absent for a correct first attempt")
        cot, answer, _ = attempts[0]
        case, n_attempts = GOOD, 1
        segments += [
            Segment(kind=SEG_ATTEMPT_COT, attempt_index=1, text=cot),
            Segment(kind=SEG_ATTEMPT_ANSWER, attempt_index=1, text=answer),
        ]
    else:
        if corrected_cot is None:
            raise ValueError("corrected_cot is required for a wrong first attempt")
        for cot, answer, verdict in attempts:
            if verdict != WRONG:
                raise ValueError("every kept attempt before the correction must be WRONG")
        case, n_attempts = BAD, len(attempts) + 1
        for i, (cot, answer, _) in enumerate(attempts, start=1):
            segments += [
                Segment(kind=SEG_ATTEMPT_COT, attempt_index=i, text=cot),
                Segment(kind=SEG_ATTEMPT_ANSWER, attempt_index=i, text=answer),
                Segment(kind=SEG_VERIFICATION, polarity=NEGATIVE, text=make_verification_text(nv_text)),
            ]
        segments += [
            Segment(kind=SEG_ATTEMPT_COT, attempt_index=n_attempts, text=corrected_cot),
            Segment(kind=SEG_ATTEMPT_ANSWER, attempt_index=n_attempts, text=corrected_answer_text(q)),
        ]
    segments.append(Segment(kind=SEG_VERIFICATION, polarity=POSITIVE, text=make_verification_text(pv_text)))
    sample = SelfCorrectionSample(
        id=sample_id,
        source_question_id=q.id,
        case=case,
        segments=tuple(segments),
        n_attempts=n_attempts,
        provenance=provenance,
    )
    validate_sample(sample)
    return sample


CORRECTED_COT_TEMPLATE = (
    "the answer of {question} is {truth}. "
    "Please provide a step-by-step explanation for resolving the given problem."
)


def generate_corrected_cot(
    q: QuestionRecord, gateway, params: SamplingParams | None = None
) -> str:
    """Ask the LM for an explanation of the ground-truth answer."""
    params = params or SamplingParams(temperature=0.3, top_p=0.95, n=1, max_tokens=512)
    truth = f"{q.ground_truth}. {q.options[q.ground_truth]}"
    prompt = CORRECTED_COT_TEMPLATE.format(question=q.question, truth=truth)
    req = LMRequest(
        messages=({"role": "user", "content": prompt},),
        params=SamplingParams(
            temperature=params.temperature, top_p=params.top_p, n=1, max_tokens=params.max_tokens
        ),
        fingerprint=f"{q.id}::explain",
    )
    text = gateway.complete(req).completions[0].strip()
    if not text:
        raise GatewayError(f"empty corrected explanation for question {q.id!r}")
    return text


@dataclass
class BuildConfig:
    k: int = 5
    mode: str = MODE_PER_QUESTION
    seed: int = 0
    parallelism: int = 1
    pv_texts: tuple[str, ...] = PV_TEXTS
    nv_texts: tuple[str, ...] = NV_TEXTS

    def __post_init__(self):
        if self.mode not in (MODE_PER_QUESTION, MODE_PER_ANSWER):
            raise ValueError(f"mode must be {MODE_PER_QUESTION} or {MODE_PER_ANSWER}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


@dataclass
class CorpusStats:
    total: int = 0
    good_count: int = 0
    bad_count: int = 0
    skipped: list[dict] = field(default_factory=list)
    per_dataset: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "good_count": self.good_count,
            "bad_count": self.bad_count,
            "skipped": self.skipped,
            "per_dataset": self.per_dataset,
        }


_COT_FAILED = object()  # per-question marker: corrected-COT generation already failed


def _build_for_question(
    q: QuestionRecord,
    pools: PromptPools,
    params: SamplingParams,
    gateway,
    config: BuildConfig,
) -> tuple[list[SelfCorrectionSample], list[dict]]:
    qseed = per_question_seed(config.seed, q.id)
    cq = compose_question(q, pools, qseed)
    try:
        answers = sample_answers(cq, config.k, params, gateway)
    except GatewayError as exc:
        return [], [{"question_id": q.id, "index": None, "reason": SKIP_SAMPLING, "detail": str(exc)}]
    chosen = answers if config.mode == MODE_PER_ANSWER else answers[:1]
    rng = random.Random(qseed ^ 0x5E1F)
    corrected: str | object | None = None
    samples: list[SelfCorrectionSample] = []
    skipped: list[dict] = []
    for j, answer in enumerate(chosen):
        cot, answer_text, ext = split_at_announcement(answer, q.options)
        verdict = grade(ext, q)
        if verdict == UNPARSEABLE:
            skipped.append({"question_id": q.id, "index": j, "reason": SKIP_UNPARSEABLE, "detail": ""})
            continue
        if not cot:
            cot = answer_text  # single-line completion; the answer line doubles as its reasoning
        flags: list[str] = []
        corrected_for_sample: str | None = None
        if verdict == WRONG:
            if corrected is None:
                try:
                    corrected = generate_corrected_cot(q, gateway)
                except GatewayError as exc:
                    corrected = _COT_FAILED
                    skipped.append(
                        {"question_id": q.id, "index": j, "reason": SKIP_CORRECTED_COT, "detail": str(exc)}
                    )
                    continue
            elif corrected is _COT_FAILED:
                skipped.append(
                    {"question_id": q.id, "index": j, "reason": SKIP_CORRECTED_COT, "detail": "already failed"}
                )
                continue
            corrected_for_sample = corrected  # type: ignore[assignment]
            cot_ext = extract_choice(corrected_for_sample, q.options)
            if cot_ext.label is not None and cot_ext.label != q.ground_truth:
                flags.append("cot_label_mismatch")
        pv = config.pv_texts[rng.randrange(len(config.pv_texts))]
        nv = config.nv_texts[rng.randrange(len(config.nv_texts))]
        samples.append(
            build_sample(
                q,
                cq,
                [(cot, answer_text, verdict)],
                corrected_for_sample,
                pv,
                nv,
                sample_id=f"{q.id}-{j}",
                provenance={
                    "params": params.to_dict(),
                    "model": getattr(gateway, "model_name", ""),
                    "seed": qseed,
                    "flags": flags,
                },
            )
        )
    return samples, skipped


def build_corpus(
    questions: Sequence[QuestionRecord],
    pools: PromptPools,
    params: SamplingParams,
    gateway,
    config: BuildConfig | None = None,
) -> tuple[list[SelfCorrectionSample], CorpusStats]:
    """Compose, sample, grade, and assemble samples for every question.

    Per-item failures are recorded in stats.skipped; the run never aborts on a
    single item. Output order follows input question order.
    """
    config = config or BuildConfig()
    corpus: list[SelfCorrectionSample] = []
    stats = CorpusStats()
    if not questions:
        return corpus, stats

    worker = lambda q: _build_for_question(q, pools, params, gateway, config)
    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(worker, questions))
    else:
        results = [worker(q) for q in questions]

    for q, (samples, skipped) in zip(questions, results):
        corpus.extend(samples)
        stats.skipped.extend(skipped)
        ds = stats.per_dataset.setdefault(q.dataset, {"total": 0, "good": 0, "bad": 0})
        for sample in samples:
            stats.total += 1
            ds["total"] += 1
            if sample.case == GOOD:
                stats.good_count += 1
                ds["good"] += 1
            else:
                stats.bad_count += 1
                ds["bad"] += 1
    return corpus, stats


def render_answer(sample: SelfCorrectionSample) -> str:
    """The answer side of a sample as the model would emit it."""
    return "\n".join(seg.text for seg in sample.segments[1:])


def render_sample(sample: SelfCorrectionSample) -> str:
    return "\n".join(seg.text for seg in sample.segments)


def write_corpus(corpus: Sequence[SelfCorrectionSample], path: str | Path) -> int:
    for sample in corpus:
        validate_sample(sample)
    return write_jsonl(path, (s.to_dict() for s in corpus))


def read_corpus(path: str | Path) -> list[SelfCorrectionSample]:
    out: list[SelfCorrectionSample] = []
    for lineno, obj in iter_jsonl(path):
        try:
            sample = SelfCorrectionSample.from_dict(obj)
            validate_sample(sample)
        except (KeyError, TypeError) as exc:
            raise JsonLineError(path, lineno, f"bad sample record: {exc}") from None
        except GrammarError as exc:
            raise JsonLineError(path, lineno, str(exc)) from None
        out.append(sample)
    return out
