"""Per-segment loss masks for self-correction samples.

Segments are tokenized independently and concatenated, which guarantees that
mask boundaries align with segment boundaries for any tokenizer. Question
tokens are always excluded from the loss; failed attempts are excluded under
the partial policy so only verifications and the final (corrected) attempt
update parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .builder import (
    SEG_ATTEMPT_ANSWER,
    SEG_ATTEMPT_COT,
    SEG_QUESTION,
    SEG_VERIFICATION,
    SelfCorrectionSample,
    validate_sample,
)
from .jsonio import JsonLineError, iter_jsonl, write_jsonl


class TokenizerError(ValueError):
    pass


class TokenizerAdapter(Protocol):
    @property
    def vocab_size(self) -> int: ...

    def encode(self, text: str) -> list[int]: ...


class CharTokenizer:
    """Character-level tokenizer over a fixed alphabet."""

    def __init__(self, alphabet: str):
        if not alphabet:
            raise TokenizerError("alphabet is empty")
        if len(set(alphabet)) != len(alphabet):
            raise TokenizerError("alphabet has duplicate characters")
        self.alphabet = alphabet
        self._index = {ch: i for i, ch in enumerate(alphabet)}

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> "CharTokenizer":
        chars = sorted({ch for text in texts for ch in text})
        return cls("".join(chars))

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise TokenizerError(f"character {exc.args[0]!r} not in alphabet") from None

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.alphabet[i] for i in ids)

    def to_dict(self) -> dict:
        return {"kind": "char", "alphabet": self.alphabet}

    @classmethod
    def from_dict(cls, d: dict) -> "CharTokenizer":
        return cls(d["alphabet"])


@dataclass(frozen=True)
class TokenizedSample:
    id: str
    token_ids: tuple[int, ...]
    loss_mask: tuple[int, ...]
    segment_spans: tuple[tuple[int, tuple[int, int]], ...]

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        object.__setattr__(self, "loss_mask", tuple(int(m) for m in self.loss_mask))
        object.__setattr__(
            self,
            "segment_spans",
            tuple((int(i), (int(s), int(e))) for i, (s, e) in self.segment_spans),
        )
        if len(self.token_ids) != len(self.loss_mask):
            raise ValueError(f"sample {self.id!r}: token_ids and loss_mask lengths differ")
        if any(m not in (0, 1) for m in self.loss_mask):
            raise ValueError(f"sample {self.id!r}: loss_mask entries must be 0 or 1")
        pos = 0
        for _, (start, end) in self.segment_spans:
            if start != pos or end < start:
                raise ValueError(f"sample {self.id!r}: segment spans must partition the token range")
            pos = end
        if pos != len(self.token_ids):
            raise ValueError(f"sample {self.id!r}: segment spans must cover all tokens")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "token_ids": list(self.token_ids),
            "loss_mask": list(self.loss_mask),
            "segment_spans": [[i, [s, e]] for i, (s, e) in self.segment_spans],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenizedSample":
        return cls(
            id=d["id"],
            token_ids=tuple(d["token_ids"]),
            loss_mask=tuple(d["loss_mask"]),
            segment_spans=tuple((i, (s, e)) for i, (s, e) in d["segment_spans"]),
        )


def assign_loss_flags(sample: SelfCorrectionSample) -> list[tuple[int, bool]]:
    """Partial-masking policy: per-segment loss inclusion flags.

    The question is excluded (standard input masking), every verification is
    included, and of the attempts only the final one contributes.
    """
    validate_sample(sample)
    flags: list[tuple[int, bool]] = []
    for i, seg in enumerate(sample.segments):
        if seg.kind == SEG_QUESTION:
            included = False
        elif seg.kind == SEG_VERIFICATION:
            included = True
        else:
            included = seg.attempt_index == sample.n_attempts
        flags.append((i, included))
    return flags


def full_answer_flags(sample: SelfCorrectionSample) -> list[tuple[int, bool]]:
    """Ablation policy: mask only the question, keep the whole answer in the loss."""
    validate_sample(sample)
    return [(i, seg.kind != SEG_QUESTION) for i, seg in enumerate(sample.segments)]


def tokenize_and_mask(
    sample: SelfCorrectionSample,
    tokenizer: TokenizerAdapter,
    flags: Sequence[tuple[int, bool]] | None = None,
    separator: str = "",
) -> TokenizedSample:
    """Encode each segment independently and expand segment flags to a token mask.

    A configurable separator may be inserted between segments; its tokens ride
    with the preceding segment's span so spans still partition the sequence.
    """
    flag_map = dict(flags if flags is not None else assign_loss_flags(sample))
    sep_ids = tokenizer.encode(separator) if separator else []
    token_ids: list[int] = []
    loss_mask: list[int] = []
    spans: list[tuple[int, tuple[int, int]]] = []
    last = len(sample.segments) - 1
    for i, seg in enumerate(sample.segments):
        try:
            ids = tokenizer.encode(seg.text)
        except Exception as exc:
            raise TokenizerError(f"segment {i} ({seg.kind}): {exc}") from None
        if separator and i < last:
            ids = ids + sep_ids
        start = len(token_ids)
        token_ids.extend(ids)
        loss_mask.extend([1 if flag_map[i] else 0] * len(ids))
        spans.append((i, (start, len(token_ids))))
    return TokenizedSample(
        id=sample.id,
        token_ids=tuple(token_ids),
        loss_mask=tuple(loss_mask),
        segment_spans=tuple(spans),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def masked_loss(logits, targets, mask) -> float:
    """Mean negative log-likelihood over masked-in positions; 0 when none."""
    loss, _ = masked_loss_and_grad(logits, targets, mask)
    return loss


def masked_loss_and_grad(logits, targets, mask) -> tuple[float, np.ndarray]:
    """Masked cross-entropy and its exact gradient in the logits.

    Positions with mask 0 contribute nothing: their gradient rows are exactly
    zero, not merely small.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError("logits must be a (positions, vocab) array")
    if not (logits.shape[0] == targets.shape[0] == mask.shape[0]):
        raise ValueError(
            f"length mismatch: logits {logits.shape[0]}, targets {targets.shape[0]}, mask {mask.shape[0]}"
        )
    grad = np.zeros_like(logits)
    selected = mask == 1
    n = int(selected.sum())
    if n == 0:
        return 0.0, grad
    logp = _log_softmax(logits[selected])
    rows = np.arange(n)
    loss = float(-logp[rows, targets[selected]].mean())
    g = np.exp(logp)
    g[rows, targets[selected]] -= 1.0
    grad[selected] = g / n
    return loss, grad


def write_masked_corpus(samples: Sequence[TokenizedSample], path: str | Path) -> int:
    return write_jsonl(path, (s.to_dict() for s in samples))


def read_masked_corpus(path: str | Path) -> list[TokenizedSample]:
    out: list[TokenizedSample] = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(TokenizedSample.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise JsonLineError(path, lineno, f"bad tokenized sample: {exc}") from None
    return out
