"""Inference-time self-correction: single spontaneous outputs parsed into
attempts and verdicts, with optional follow-up correction rounds.

A completion is split at the first verification sentinel. The text before it
carries the initial reasoning and answer; the sentinel's polarity is the
verdict; on a negative verdict the text after it carries the revision.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .builder import NEGATIVE, NV_TEXTS, POSITIVE, PV_TEXTS
from .gateway import GatewayError, LMRequest, SamplingParams
from .grading import UNPARSEABLE, QuestionRecord, extract_choice, split_at_announcement
from .jsonio import JsonLineError, iter_jsonl, write_jsonl
from .prompts import ComposedQuestion, PromptPools, compose_question, per_question_seed


@dataclass(frozen=True)
class VerificationLexicon:
    """Sentinel phrases that mark a verification and carry its polarity."""

    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def phrases(self) -> list[tuple[str, str]]:
        out = [(p, POSITIVE) for p in self.positive]
        out += [(p, NEGATIVE) for p in self.negative]
        return out


DEFAULT_LEXICON = VerificationLexicon(
    positive=PV_TEXTS + ("the earlier answer is correct", "my answer is correct"),
    negative=NV_TEXTS + ("there is an error in the previous answer",),
)

DEFAULT_RE_ASK = (
    "Please double-check your previous response for accuracy and submit your final answer."
)


@dataclass(frozen=True)
class RoundRecord:
    raw_output: str
    initial_cot: str
    initial_label: str | None
    verdict: str
    revised_cot: str | None = None
    revised_label: str | None = None

    def __post_init__(self):
        if self.verdict != NEGATIVE and (self.revised_cot is not None or self.revised_label is not None):
            raise ValueError("revised fields are only present on a NEGATIVE verdict")

    def post_verification_label(self) -> str | None:
        """The answer standing after this round's verification."""
        if self.verdict == NEGATIVE and self.revised_label is not None:
            return self.revised_label
        return self.initial_label

    def to_dict(self) -> dict:
        return {
            "raw_output": self.raw_output,
            "initial_cot": self.initial_cot,
            "initial_label": self.initial_label,
            "verdict": self.verdict,
            "revised_cot": self.revised_cot,
            "revised_label": self.revised_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(
            raw_output=d["raw_output"],
            initial_cot=d["initial_cot"],
            initial_label=d.get("initial_label"),
            verdict=d["verdict"],
            revised_cot=d.get("revised_cot"),
            revised_label=d.get("revised_label"),
        )


@dataclass(frozen=True)
class CorrectionTrace:
    question_id: str
    rounds: tuple[RoundRecord, ...]
    final_label: str | None
    provenance: dict = field(default_factory=dict)
    failure: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        if not self.rounds:
            raise ValueError("a trace needs at least one round")
        if self.final_label != self.rounds[-1].post_verification_label():
            raise ValueError("final_label must equal the last round's post-verification label")

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "rounds": [r.to_dict() for r in self.rounds],
            "final_label": self.final_label,
            "provenance": self.provenance,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectionTrace":
        return cls(
            question_id=d["question_id"],
            rounds=tuple(RoundRecord.from_dict(r) for r in d["rounds"]),
            final_label=d.get("final_label"),
            provenance=d.get("provenance", {}),
            failure=d.get("failure"),
        )


def _find_sentinels(text: str, lexicon: VerificationLexicon) -> list[tuple[int, int, str]]:
    """All sentinel occurrences as (start, end, polarity), earliest first.

    Overlapping hits at the same position resolve to the longest phrase;
    hits inside an earlier hit are dropped.
    """
    lowered = text.lower()
    raw: list[tuple[int, int, str]] = []
    for phrase, polarity in lexicon.phrases():
        needle = phrase.lower()
        pos = lowered.find(needle)
        while pos != -1:
            raw.append((pos, pos + len(needle), polarity))
            pos = lowered.find(needle, pos + 1)
    raw.sort(key=lambda hit: (hit[0], -(hit[1] - hit[0])))
    merged: list[tuple[int, int, str]] = []
    for start, end, polarity in raw:
        if merged and start < merged[-1][1]:
            continue
        merged.append((start, end, polarity))
    return merged


def parse_output(
    text: str,
    options: Mapping[str, str] | Sequence[str],
    lexicon: VerificationLexicon = DEFAULT_LEXICON,
) -> RoundRecord:
    """Parse one completion into initial answer, verdict, and optional revision."""
    sentinels = _find_sentinels(text, lexicon)
    if not sentinels:
        cot, _, ext = split_at_announcement(text, options)
        return RoundRecord(
            raw_output=text,
            initial_cot=cot,
            initial_label=ext.label,
            verdict=UNPARSEABLE,
        )
    start, end, polarity = sentinels[0]
    pre, post = text[:start], text[end:]
    initial_cot, _, initial_ext = split_at_announcement(pre, options)
    if polarity == POSITIVE:
        return RoundRecord(
            raw_output=text,
            initial_cot=initial_cot,
            initial_label=initial_ext.label,
            verdict=POSITIVE,
        )
    revised_cot, _, revised_ext = split_at_announcement(post, options)
    return RoundRecord(
        raw_output=text,
        initial_cot=initial_cot,
        initial_label=initial_ext.label,
        verdict=NEGATIVE,
        revised_cot=revised_cot or (post.strip() or None),
        revised_label=revised_ext.label,
    )


def parse_verification_chain(
    text: str,
    options: Mapping[str, str] | Sequence[str],
    lexicon: VerificationLexicon = DEFAULT_LEXICON,
) -> tuple[list[str | None], list[str]]:
    """Labels and sentinel polarities for a full rendered answer chain.

    Region k runs up to sentinel k; its last announced label is attempt k's
    answer. Returns ([label_1..label_m], [polarity_1..polarity_m]).
    """
    sentinels = _find_sentinels(text, lexicon)
    labels: list[str | None] = []
    polarities: list[str] = []
    region_start = 0
    for start, end, polarity in sentinels:
        region = text[region_start:start]
        labels.append(extract_choice(region, options).label)
        polarities.append(polarity)
        region_start = end
    return labels, polarities


class RunItemError(GatewayError):
    """Round 1 failed before any output was obtained, so no trace exists."""

    def __init__(self, question_id: str, cause: Exception):
        super().__init__(f"question {question_id!r}: {cause}")
        self.question_id = question_id


def run_item(
    gateway,
    cq: ComposedQuestion,
    options: Mapping[str, str] | Sequence[str],
    max_rounds: int = 1,
    params: SamplingParams | None = None,
    re_ask: str = DEFAULT_RE_ASK,
    lexicon: VerificationLexicon = DEFAULT_LEXICON,
) -> CorrectionTrace:
    """Run up to max_rounds of self-correction, stopping on a positive verdict.

    Each follow-up round re-sends the question with the prior transcript and a
    re-ask instruction appended. A gateway failure after round 1 truncates the
    trace with a failure note; a round-1 failure raises RunItemError.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    params = params or SamplingParams(temperature=0.0, top_p=1.0, n=1)
    transcript = cq.text
    rounds: list[RoundRecord] = []
    failure: str | None = None
    for round_no in range(1, max_rounds + 1):
        req = LMRequest(
            messages=({"role": "user", "content": transcript},),
            params=replace(params, n=1),
            fingerprint=cq.question_id,
        )
        try:
            response = gateway.complete(req)
        except GatewayError as exc:
            if not rounds:
                raise RunItemError(cq.question_id, exc) from exc
            failure = f"round {round_no}: {exc}"
            break
        record = parse_output(response.completions[0], options, lexicon)
        rounds.append(record)
        if record.verdict == POSITIVE:
            break
        transcript = f"{transcript}\n{record.raw_output}\n{re_ask}"
    return CorrectionTrace(
        question_id=cq.question_id,
        rounds=tuple(rounds),
        final_label=rounds[-1].post_verification_label(),
        provenance={"re_ask": re_ask, "max_rounds": max_rounds, "seed": cq.seed},
        failure=failure,
    )


def run_dataset(
    gateway,
    questions: Sequence[QuestionRecord],
    pools: PromptPools,
    seed: int,
    max_rounds: int = 1,
    params: SamplingParams | None = None,
    parallelism: int = 1,
    re_ask: str = DEFAULT_RE_ASK,
    lexicon: VerificationLexicon = DEFAULT_LEXICON,
) -> tuple[list[CorrectionTrace], list[dict]]:
    """One trace per question, composed with a per-question seed, in input order.

    Items whose very first request fails produce no trace; they are returned
    in the failures list and the run continues.
    """
    if not questions:
        raise ValueError("questions must be non-empty")
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate question ids: {dup}")

    def worker(q: QuestionRecord) -> CorrectionTrace | dict:
        cq = compose_question(q, pools, per_question_seed(seed, q.id))
        try:
            return run_item(
                gateway, cq, q.options, max_rounds=max_rounds, params=params,
                re_ask=re_ask, lexicon=lexicon,
            )
        except RunItemError as exc:
            return {"question_id": q.id, "reason": str(exc)}

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(worker, questions))
    else:
        results = [worker(q) for q in questions]

    traces = [r for r in results if isinstance(r, CorrectionTrace)]
    failures = [r for r in results if isinstance(r, dict)]
    return traces, failures


def write_traces(traces: Sequence[CorrectionTrace], path: str | Path) -> int:
    return write_jsonl(path, (t.to_dict() for t in traces))


def read_traces(path: str | Path) -> list[CorrectionTrace]:
    out: list[CorrectionTrace] = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(CorrectionTrace.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise JsonLineError(path, lineno, f"bad trace record: {exc}") from None
    return out
