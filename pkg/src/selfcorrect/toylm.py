"""Desk-scale autoregressive trainer used to demonstrate loss masking.

The model is a bigram logit table: position t is predicted from token t-1
through row W[token[t-1]]. That keeps every gradient analytic and cheap to
verify against finite differences, which is the whole point: masked-out
positions must contribute exactly zero gradient, and rows whose only data
exposure is masked out must not move at all.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .masking import TokenizedSample, _log_softmax, masked_loss_and_grad

ARCH_BIGRAM = "bigram-table"

#: Gate for analytic-vs-finite-difference agreement, used by the CLI as well.
GRAD_CHECK_TOLERANCE = 1e-5

GROUP_INPUT = "input"
GROUP_EXCLUDED = "excluded"
GROUP_INCLUDED = "included"


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step


@dataclass(frozen=True)
class ToyLMConfig:
    vocab_size: int
    context_length: int = 8
    hidden_size: int = 4  # unused by the bigram table, kept for config completeness
    architecture: str = ARCH_BIGRAM
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 1 or self.hidden_size < 1:
            raise ValueError("sizes must be positive")
        if self.context_length < 2:
            raise ValueError("context_length must be >= 2")
        if self.architecture != ARCH_BIGRAM:
            raise ValueError(f"unknown architecture {self.architecture!r}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "context_length": self.context_length,
            "hidden_size": self.hidden_size,
            "architecture": self.architecture,
            "seed": self.seed,
        }


@dataclass
class BigramModel:
    config: ToyLMConfig
    W: np.ndarray  # (vocab, vocab) next-token logits keyed by previous token

    @property
    def param_count(self) -> int:
        return self.W.size


def init_model(config: ToyLMConfig) -> BigramModel:
    rng = np.random.default_rng(config.seed)
    W = rng.standard_normal((config.vocab_size, config.vocab_size)) * 0.01
    return BigramModel(config=config, W=W)


def param_checksum(model: BigramModel) -> str:
    return hashlib.sha256(np.ascontiguousarray(model.W).tobytes()).hexdigest()


def _check_sample(sample: TokenizedSample, vocab_size: int) -> None:
    if any(not (0 <= t < vocab_size) for t in sample.token_ids):
        raise ValueError(f"sample {sample.id!r}: token id out of range for vocab {vocab_size}")


def _masked_counts(samples: Sequence[TokenizedSample], vocab_size: int) -> np.ndarray:
    """Transition counts over loss positions: C[prev, next] for t >= 1 with mask 1."""
    C = np.zeros((vocab_size, vocab_size), dtype=np.float64)
    for sample in samples:
        ids = sample.token_ids
        mask = sample.loss_mask
        for t in range(1, len(ids)):
            if mask[t]:
                C[ids[t - 1], ids[t]] += 1.0
    return C


def _loss_from_counts(W: np.ndarray, C: np.ndarray) -> float:
    n = C.sum()
    if n == 0:
        return 0.0
    logp = _log_softmax(W)
    return float(-(C * logp).sum() / n)


def _loss_and_grad_from_counts(W: np.ndarray, C: np.ndarray) -> tuple[float, np.ndarray]:
    n = C.sum()
    if n == 0:
        return 0.0, np.zeros_like(W)
    logp = _log_softmax(W)
    loss = float(-(C * logp).sum() / n)
    P = np.exp(logp)
    rowmass = C.sum(axis=1)
    grad = (P * rowmass[:, None] - C) / n
    return loss, grad


def masked_corpus_loss(model: BigramModel, samples: Sequence[TokenizedSample]) -> float:
    C = _masked_counts(samples, model.config.vocab_size)
    return _loss_from_counts(model.W, C)


def sample_loss_and_grad(model: BigramModel, sample: TokenizedSample) -> tuple[float, np.ndarray]:
    """Masked loss and parameter gradient for one sample."""
    _check_sample(sample, model.config.vocab_size)
    C = _masked_counts([sample], model.config.vocab_size)
    return _loss_and_grad_from_counts(model.W, C)


def position_logits(model: BigramModel, token_ids: Sequence[int]) -> np.ndarray:
    """Per-position next-token logits: row t predicts token_ids[t+1]."""
    ids = np.asarray(token_ids, dtype=np.int64)
    return model.W[ids[:-1]]


def sequence_logprob(model: BigramModel, token_ids: Sequence[int]) -> float:
    """Sum of log p(token_t | token_{t-1}) over t >= 1."""
    if len(token_ids) < 2:
        raise ValueError("sequence must have length >= 2")
    ids = np.asarray(token_ids, dtype=np.int64)
    logp = _log_softmax(model.W[ids[:-1]])
    return float(logp[np.arange(len(ids) - 1), ids[1:]].sum())


def _span_logprob(W: np.ndarray, ids: Sequence[int], start: int, end: int) -> float:
    """Log-likelihood of the tokens in [start, end); position 0 has no context."""
    lo = max(start, 1)
    if lo >= end:
        return 0.0
    prev = np.asarray(ids[lo - 1 : end - 1], dtype=np.int64)
    nxt = np.asarray(ids[lo:end], dtype=np.int64)
    logp = _log_softmax(W[prev])
    return float(logp[np.arange(len(nxt)), nxt].sum())


def _span_group(sample: TokenizedSample, seg_index: int, start: int, end: int) -> str:
    if seg_index == 0:
        return GROUP_INPUT
    if end > start and sample.loss_mask[start] == 1:
        return GROUP_INCLUDED
    return GROUP_EXCLUDED


@dataclass
class TrainReport:
    steps: int
    final_masked_loss: float
    loss_curve: list[float]
    span_deltas: list[dict] = field(default_factory=list)
    group_deltas: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "final_masked_loss": self.final_masked_loss,
            "loss_curve": self.loss_curve,
            "span_deltas": self.span_deltas,
            "group_deltas": self.group_deltas,
            "config": self.config,
        }


def _collect_span_deltas(
    W0: np.ndarray, W1: np.ndarray, samples: Sequence[TokenizedSample]
) -> tuple[list[dict], dict[str, float]]:
    by_segment: dict[tuple[int, str], list[float]] = {}
    for sample in samples:
        for seg_index, (start, end) in sample.segment_spans:
            group = _span_group(sample, seg_index, start, end)
            before = _span_logprob(W0, sample.token_ids, start, end)
            after = _span_logprob(W1, sample.token_ids, start, end)
            entry = by_segment.setdefault((seg_index, group), [0.0, 0.0])
            entry[0] += before
            entry[1] += after
    span_deltas = [
        {
            "segment_index": seg_index,
            "group": group,
            "logprob_initial": before,
            "logprob_final": after,
            "delta": after - before,
        }
        for (seg_index, group), (before, after) in sorted(by_segment.items())
    ]
    group_deltas: dict[str, float] = {GROUP_INPUT: 0.0, GROUP_EXCLUDED: 0.0, GROUP_INCLUDED: 0.0}
    for row in span_deltas:
        group_deltas[row["group"]] += row["delta"]
    return span_deltas, group_deltas


def train(
    model: BigramModel,
    masked_corpus: Sequence[TokenizedSample],
    steps: int,
    learning_rate: float,
) -> TrainReport:
    """Full-batch gradient descent on the masked loss.

    The report carries the loss curve (one entry per step, evaluated before
    each update) and per-span log-likelihood deltas from initialization to
    the final parameters.
    """
    if not masked_corpus:
        raise ValueError("masked_corpus must be non-empty")
    vocab = model.config.vocab_size
    for sample in masked_corpus:
        _check_sample(sample, vocab)
        trainable = sum(sample.loss_mask[1:])
        if trainable == 0:
            raise ValueError(f"sample {sample.id!r} has no trainable masked-in positions")
    C = _masked_counts(masked_corpus, vocab)
    W0 = model.W.copy()
    curve: list[float] = []
    for step in range(steps):
        loss, grad = _loss_and_grad_from_counts(model.W, C)
        if not np.isfinite(loss):
            raise DivergenceError(step, loss)
        curve.append(loss)
        model.W -= learning_rate * grad
    final_loss = _loss_from_counts(model.W, C)
    if not np.isfinite(final_loss):
        raise DivergenceError(steps, final_loss)
    span_deltas, group_deltas = _collect_span_deltas(W0, model.W, masked_corpus)
    return TrainReport(
        steps=steps,
        final_masked_loss=final_loss,
        loss_curve=curve,
        span_deltas=span_deltas,
        group_deltas=group_deltas,
        config=model.config.to_dict(),
    )


def grad_check(model: BigramModel, sample: TokenizedSample, epsilon: float) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    All parameters are checked for vocabularies up to 64; beyond that, the
    rows actually used as contexts plus row 0. The relative-error denominator
    is floored at 1e-6 so parameters with negligible gradient cannot inflate
    the ratio through finite-difference round-off.
    """
    if not (0 < epsilon <= 1e-2):
        raise ValueError("epsilon must be in (0, 1e-2]")
    _check_sample(sample, model.config.vocab_size)
    C = _masked_counts([sample], model.config.vocab_size)
    _, analytic = _loss_and_grad_from_counts(model.W, C)
    if not np.all(np.isfinite(analytic)):
        raise ValueError("analytic gradient is not finite")
    vocab = model.config.vocab_size
    if vocab <= 64:
        rows = range(vocab)
    else:
        used = sorted({int(r) for r in np.nonzero(C.sum(axis=1))[0]})
        rows = sorted(set(used) | {0})
    W = model.W.copy()
    max_rel = 0.0
    for r in rows:
        for c in range(vocab):
            original = W[r, c]
            W[r, c] = original + epsilon
            plus = _loss_from_counts(W, C)
            W[r, c] = original - epsilon
            minus = _loss_from_counts(W, C)
            W[r, c] = original
            fd = (plus - minus) / (2 * epsilon)
            if not np.isfinite(fd):
                raise ValueError(f"finite-difference gradient not finite at ({r}, {c})")
            a = analytic[r, c]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            max_rel = max(max_rel, rel)
    return max_rel
