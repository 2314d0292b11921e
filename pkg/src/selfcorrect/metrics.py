"""Evaluation metrics for self-correction traces.

Five headline statistics (initial accuracy, final accuracy, confidence,
verification accuracy) plus the four-cell answer-transition table, with
internal consistency identities that catch bookkeeping drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .builder import NEGATIVE, POSITIVE
from .grading import UNPARSEABLE, QuestionRecord
from .runner import CorrectionTrace

T_NONE = "NONE"
R2R = "R2R"
R2W = "R2W"
W2R = "W2R"
W2W = "W2W"
TRANSITION_KEYS = (R2R, R2W, W2R, W2W)


@dataclass
class EvalResult:
    n: int
    acc_first: float
    acc: float
    confidence: float
    eval_acc: float
    transitions: dict[str, int] = field(default_factory=dict)
    unparseable: int = 0

    def __post_init__(self):
        self.transitions = {k: int(self.transitions.get(k, 0)) for k in TRANSITION_KEYS}
        for name in ("acc_first", "acc", "confidence", "eval_acc"):
            value = getattr(self, name)
            if not (0.0 <= value <= 100.0):
                raise ValueError(f"{name} must be a percentage in [0, 100], got {value}")
        if any(v < 0 for v in self.transitions.values()) or self.unparseable < 0:
            raise ValueError("counts must be non-negative")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "acc_first": self.acc_first,
            "acc": self.acc,
            "confidence": self.confidence,
            "eval_acc": self.eval_acc,
            "transitions": dict(self.transitions),
            "unparseable": self.unparseable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(
            n=d["n"],
            acc_first=d["acc_first"],
            acc=d["acc"],
            confidence=d["confidence"],
            eval_acc=d["eval_acc"],
            transitions=d.get("transitions", {}),
            unparseable=d.get("unparseable", 0),
        )


def classify_transition(trace: CorrectionTrace, q: QuestionRecord) -> str:
    """Answer transition for one trace: NONE on a positive round-1 verdict,
    otherwise (initial correct?, final correct?) over round 1's initial label
    and the trace's final label; UNPARSEABLE when either label is absent."""
    if trace.question_id != q.id:
        raise ValueError(f"trace {trace.question_id!r} does not match question {q.id!r}")
    round1 = trace.rounds[0]
    if round1.verdict == POSITIVE:
        return T_NONE
    initial = round1.initial_label
    final = trace.final_label
    if initial is None or final is None:
        return UNPARSEABLE
    first_ok = initial == q.ground_truth
    final_ok = final == q.ground_truth
    if first_ok:
        return R2R if final_ok else R2W
    return W2R if final_ok else W2W


def compute_metrics(
    traces: Sequence[CorrectionTrace], questions: Sequence[QuestionRecord]
) -> EvalResult:
    """Aggregate the metric suite over matched (trace, question) pairs."""
    if not traces:
        raise ValueError("traces must be non-empty")
    by_id = {q.id: q for q in questions}
    trace_ids = [t.question_id for t in traces]
    if len(set(trace_ids)) != len(trace_ids):
        raise ValueError("duplicate trace question ids")
    missing = [tid for tid in trace_ids if tid not in by_id]
    if missing:
        raise ValueError(f"missing ground truth for: {missing[:5]}")
    if len(traces) != len(questions):
        raise ValueError(
            f"traces and questions must pair up exactly ({len(traces)} vs {len(questions)})"
        )

    n = len(traces)
    first_correct = 0
    final_correct = 0
    positive = 0
    eval_agree = 0
    unparseable = 0
    transitions = {k: 0 for k in TRANSITION_KEYS}
    for trace in traces:
        q = by_id[trace.question_id]
        round1 = trace.rounds[0]
        first_ok = round1.initial_label == q.ground_truth
        final_ok = trace.final_label == q.ground_truth
        first_correct += first_ok
        final_correct += final_ok
        if round1.verdict == POSITIVE:
            positive += 1
            eval_agree += first_ok
        elif round1.verdict == NEGATIVE:
            eval_agree += not first_ok
        # an unparseable verdict never counts as agreement
        kind = classify_transition(trace, q)
        if kind in transitions:
            transitions[kind] += 1
        elif kind == UNPARSEABLE:
            unparseable += 1
    return EvalResult(
        n=n,
        acc_first=100.0 * first_correct / n,
        acc=100.0 * final_correct / n,
        confidence=100.0 * positive / n,
        eval_acc=100.0 * eval_agree / n,
        transitions=transitions,
        unparseable=unparseable,
    )


ACC_IDENTITY_TOLERANCE = 0.05


def consistency_check(r: EvalResult) -> list[str]:
    """Violated internal identities, empty when consistent.

    (i)  acc = acc_first + 100*(W2R - R2W)/n, within 0.05 points;
    (ii) the transition cells cannot exceed the negative-verdict budget plus
         unparseable items (an inequality: endpoints may leave residue).
    """
    violations: list[str] = []
    if r.n <= 0:
        return ["n must be positive"]
    implied = r.acc_first + 100.0 * (r.transitions[W2R] - r.transitions[R2W]) / r.n
    if abs(r.acc - implied) > ACC_IDENTITY_TOLERANCE:
        violations.append(
            f"acc identity: acc={r.acc:.4f} but acc_first + 100*(W2R-R2W)/n = {implied:.4f}"
        )
    cells = sum(r.transitions.values())
    budget = round(r.n * (100.0 - r.confidence) / 100.0) + r.unparseable
    if cells > budget:
        violations.append(
            f"transition bound: R2R+R2W+W2R+W2W = {cells} exceeds "
            f"round(n*(100-confidence)/100) + unparseable = {budget}"
        )
    return violations


def accuracy_by_round(
    traces: Sequence[CorrectionTrace],
    questions: Sequence[QuestionRecord],
    max_rounds: int | None = None,
) -> list[float]:
    """Accuracy of the standing answer after each round (1-based index - 1).

    Traces that stopped early keep their last answer for later rounds.
    """
    if not traces:
        raise ValueError("traces must be non-empty")
    by_id = {q.id: q for q in questions}
    rounds = max_rounds or max(len(t.rounds) for t in traces)
    out: list[float] = []
    for r in range(1, rounds + 1):
        correct = 0
        for trace in traces:
            q = by_id[trace.question_id]
            record = trace.rounds[min(r, len(trace.rounds)) - 1]
            correct += record.post_verification_label() == q.ground_truth
        out.append(100.0 * correct / len(traces))
    return out
