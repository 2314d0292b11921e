"""Prompt pools, seeded question composition, and LM-backed prompt rewriting.

A composed question concatenates one task prompt, one chain-of-thought
prompt, one self-correction prompt, and the question body. The task prompt
always leads; the other three parts are shuffled by the seed.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .gateway import LMRequest, SamplingParams
from .grading import QuestionRecord

TASKP = "TASKP"
COTP = "COTP"
SCP = "SCP"
QUESTION = "QUESTION"

POOL_NAMES = ("taskp", "cotp", "scp")


class PoolFileError(ValueError):
    """The prompt-pool file is missing, incomplete, or malformed."""


@dataclass(frozen=True)
class PromptPools:
    taskp: tuple[str, ...]
    cotp: tuple[str, ...]
    scp: tuple[str, ...]

    def __post_init__(self):
        for name in POOL_NAMES:
            entries = getattr(self, name)
            object.__setattr__(self, name, tuple(entries))
            entries = getattr(self, name)
            if not entries:
                raise PoolFileError(f"pool {name} empty")
            for i, entry in enumerate(entries):
                if not isinstance(entry, str) or not entry.strip():
                    raise PoolFileError(f"pool {name} malformed: entry {i} is blank or not text")
                if entry != entry.strip():
                    raise PoolFileError(f"pool {name} malformed: entry {i} has leading/trailing whitespace")
            if len(set(entries)) != len(entries):
                raise PoolFileError(f"pool {name} malformed: duplicate entries")

    def to_dict(self) -> dict:
        return {name: list(getattr(self, name)) for name in POOL_NAMES}


DEFAULT_POOLS = PromptPools(
    taskp=(
        "Examine the following options carefully and select the correct one.",
        "Please choose the most appropriate one from the following options:",
    ),
    cotp=(
        "Before providing your final answer, give the analysis steps.",
        "Please give the detailed solving process",
        "Please select the correct option from the provided choices and offer a comprehensive problem-solving process.",
    ),
    scp=(
        "And you need double-check your response for accuracy before proceeding to submit.",
        "double-check your response for accuracy before proceeding to submit",
        "before you finalize your answer, please reexamine it to ensure its correctness",
        "please review your response carefully to make sure it is correct before submitting",
    ),
)


def load_pools(path: str | Path) -> PromptPools:
    """Load a prompt-pool file: a JSON object with taskp/cotp/scp string lists."""
    path = Path(path)
    if not path.exists():
        raise PoolFileError(f"pool file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PoolFileError(f"pool file {path} is not valid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise PoolFileError(f"pool file {path} must hold a JSON object")
    pools = {}
    for name in POOL_NAMES:
        if name not in doc:
            raise PoolFileError(f"pool {name} missing")
        section = doc[name]
        if not isinstance(section, list):
            raise PoolFileError(f"pool {name} malformed: expected a list of strings")
        pools[name] = tuple(section)
    return PromptPools(**pools)


def write_pools(pools: PromptPools, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pools.to_dict(), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


@dataclass(frozen=True)
class ComposedQuestion:
    question_id: str
    text: str
    parts: tuple[tuple[str, str], ...]
    seed: int


def render_question_body(q: QuestionRecord) -> str:
    options = " ".join(f"{label}. {text}" for label, text in q.options.items())
    return f"{q.question}\n{options}"


def compose_question(q: QuestionRecord, pools: PromptPools, seed: int) -> ComposedQuestion:
    """Deterministically compose the Question block for one record and seed."""
    if len(q.options) < 2:
        raise ValueError(f"question {q.id!r} needs at least 2 options")
    rng = random.Random(seed)
    taskp = pools.taskp[rng.randrange(len(pools.taskp))]
    cotp = pools.cotp[rng.randrange(len(pools.cotp))]
    scp = pools.scp[rng.randrange(len(pools.scp))]
    tail = [(COTP, cotp), (SCP, scp), (QUESTION, render_question_body(q))]
    rng.shuffle(tail)
    parts = ((TASKP, taskp), *tail)
    text = "\n".join(part_text for _, part_text in parts)
    return ComposedQuestion(question_id=q.id, text=text, parts=parts, seed=seed)


def per_question_seed(base_seed: int, question_id: str) -> int:
    """Stable per-question seed derived from the run seed and the question id."""
    digest = hashlib.sha256(f"{base_seed}:{question_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


REWRITER_TEMPLATE = (
    "I want you act as a Prompt Rewriter. Your objective is to rewrite a given prompt "
    "to make language model to understand. The rewritten prompt must ensure that the "
    "requirement remains unchanged. #Given Prompt#: {prompt}"
)


def _normalize_ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def rewrite_prompt(
    seed_prompt: str,
    n_variants: int,
    gateway,
    params: SamplingParams | None = None,
) -> list[str]:
    """Ask the LM for up to n_variants rewrites of a prompt.

    Rewrites equal to the seed (after whitespace normalization) and duplicates
    are dropped, so the result may be shorter than requested, down to empty.
    """
    if n_variants < 1:
        raise ValueError("n_variants must be >= 1")
    params = params or SamplingParams(temperature=0.8, top_p=0.95, n=n_variants, max_tokens=256)
    req = LMRequest(
        messages=({"role": "user", "content": REWRITER_TEMPLATE.format(prompt=seed_prompt)},),
        params=SamplingParams(
            temperature=params.temperature,
            top_p=params.top_p,
            n=n_variants,
            max_tokens=params.max_tokens,
        ),
    )
    response = gateway.complete(req)
    seed_norm = _normalize_ws(seed_prompt)
    out: list[str] = []
    seen: set[str] = set()
    for completion in response.completions:
        text = completion.strip()
        norm = _normalize_ws(text)
        if not norm or norm == seed_norm or norm in seen:
            continue
        seen.add(norm)
        out.append(text)
    return out[:n_variants]
