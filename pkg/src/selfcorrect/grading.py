"""Option extraction from free-form completions and grading against ground truth.

Extraction is a pure string-matching rule cascade. Rules are tried in priority
order and the last match of the first rule that fires wins, so a completion
that revises its answer later in the text is graded on the revision.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .jsonio import JsonLineError, dumps_stable, iter_jsonl

CORRECT = "CORRECT"
WRONG = "WRONG"
UNPARSEABLE = "UNPARSEABLE"

#: Option labels run consecutively from "A"; five is the most any supported dataset uses.
LABEL_ALPHABET = "ABCDE"


class QuestionFormatError(ValueError):
    """A question record violates the on-disk contract."""


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    dataset: str
    question: str
    options: dict[str, str]
    ground_truth: str

    def __post_init__(self):
        labels = list(self.options)
        if len(labels) < 2:
            raise QuestionFormatError(f"question {self.id!r}: needs at least 2 options")
        expected = list(LABEL_ALPHABET[: len(labels)])
        if labels != expected:
            raise QuestionFormatError(
                f"question {self.id!r}: option labels must be {expected}, got {labels}"
            )
        if self.ground_truth not in self.options:
            raise QuestionFormatError(
                f"question {self.id!r}: ground truth {self.ground_truth!r} is not an option label"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset,
            "question": self.question,
            "options": dict(self.options),
            "ground_truth": self.ground_truth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuestionRecord":
        try:
            return cls(
                id=str(d["id"]),
                dataset=str(d["dataset"]),
                question=str(d["question"]),
                options={str(k): str(v) for k, v in d["options"].items()},
                ground_truth=str(d["ground_truth"]),
            )
        except KeyError as exc:
            raise QuestionFormatError(f"question record missing field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class ExtractionResult:
    """Outcome of the rule cascade; label is None when no rule fired."""

    label: str | None
    matched_span: tuple[int, int] | None
    rule_id: str | None

    @property
    def absent(self) -> bool:
        return self.label is None


NO_MATCH = ExtractionResult(label=None, matched_span=None, rule_id=None)


def _option_labels(options: Mapping[str, str] | Iterable[str]) -> dict[str, str]:
    """Normalize the options argument to label -> option text ('' when unknown)."""
    if isinstance(options, Mapping):
        out = {str(k).upper(): str(v) for k, v in options.items()}
    else:
        out = {str(k).upper(): "" for k in options}
    if not out:
        raise ValueError("options must be non-empty")
    return out


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().strip(".:,;!?").strip().lower()


def _find_announcements(text: str, labels: str, texts: dict[str, str]):
    # "answer is D", "the correct answer is D. amusement park", "correct option is C".
    # The trailing lookahead keeps "answer is correct" from matching label C.
    pattern = re.compile(
        rf"(?:answer|option)\s+is\s*:?\s*[\*\(\[\"'`]*\s*([{labels}])(?![A-Za-z0-9])",
        re.IGNORECASE,
    )
    return [(m.start(1), m.end(1), m.group(1).upper()) for m in pattern.finditer(text)]


def _find_line_options(text: str, labels: str, texts: dict[str, str]):
    # Line-start "C. no filters" style, verified against the option text when known.
    matches = []
    offset = 0
    for line in text.splitlines(keepends=True):
        m = re.match(rf"\s*([{labels}])[.:]\s*(.+)", line, re.IGNORECASE)
        if m:
            label = m.group(1).upper()
            option_text = texts.get(label, "")
            if option_text:
                rest = _normalize(m.group(2))
                opt = _normalize(option_text)
                if rest and opt and (rest.startswith(opt) or opt.startswith(rest)):
                    matches.append((offset + m.start(1), offset + m.end(1), label))
        offset += len(line)
    return matches


def _find_bold_labels(text: str, labels: str, texts: dict[str, str]):
    pattern = re.compile(rf"\*\*\s*([{labels}])(?![A-Za-z0-9])", re.IGNORECASE)
    return [(m.start(1), m.end(1), m.group(1).upper()) for m in pattern.finditer(text)]


def _find_final_line_letter(text: str, labels: str, texts: dict[str, str]):
    # A lone label as the final non-empty line, e.g. "B", "(B)", "B."
    offset = 0
    last = None
    for line in text.splitlines(keepends=True):
        if line.strip():
            last = (offset, line)
        offset += len(line)
    if last is None:
        return []
    start, line = last
    m = re.fullmatch(rf"\s*[\(\[]?([{labels}])[\)\]\.:]?\s*", line, re.IGNORECASE)
    if not m:
        return []
    return [(start + m.start(1), start + m.end(1), m.group(1).upper())]


_RULES = (
    ("announcement", _find_announcements),
    ("line_option", _find_line_options),
    ("bold_label", _find_bold_labels),
    ("final_line_letter", _find_final_line_letter),
)


def extract_choice(completion: str, options: Mapping[str, str] | Iterable[str]) -> ExtractionResult:
    """Extract the chosen option label from a completion, or NO_MATCH.

    `options` may be the question's label->text mapping (enables option-text
    verification for line-start matches) or a bare collection of labels.
    """
    texts = _option_labels(options)
    labels = "".join(sorted(texts))
    for rule_id, finder in _RULES:
        matches = finder(completion, labels, texts)
        if matches:
            start, end, label = matches[-1]
            return ExtractionResult(label=label, matched_span=(start, end), rule_id=rule_id)
    return NO_MATCH


def grade(extraction: ExtractionResult, q: QuestionRecord) -> str:
    """CORRECT / WRONG / UNPARSEABLE for an extraction against the record's truth."""
    if extraction.label is None:
        return UNPARSEABLE
    return CORRECT if extraction.label == q.ground_truth else WRONG


def split_at_announcement(
    text: str, options: Mapping[str, str] | Iterable[str]
) -> tuple[str, str, ExtractionResult]:
    """Split text at the start of the line containing the final announcement.

    Returns (before, announcement_line_onward, extraction). When nothing is
    extracted, `before` is the whole stripped text and the tail is empty.
    """
    ext = extract_choice(text, options)
    if ext.label is None:
        return text.strip(), "", ext
    start = ext.matched_span[0]
    line_start = text.rfind("\n", 0, start) + 1
    return text[:line_start].strip(), text[line_start:].strip(), ext


def load_questions(path: str | Path) -> list[QuestionRecord]:
    """Load line-delimited question records; errors carry the offending line number."""
    records: list[QuestionRecord] = []
    seen: set[str] = set()
    for lineno, obj in iter_jsonl(path):
        try:
            rec = QuestionRecord.from_dict(obj)
        except QuestionFormatError as exc:
            raise JsonLineError(path, lineno, str(exc)) from None
        if rec.id in seen:
            raise JsonLineError(path, lineno, f"duplicate question id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def write_questions(questions: Iterable[QuestionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(dumps_stable(q.to_dict()))
            fh.write("\n")
