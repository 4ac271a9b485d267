"""Decomposed training loss, sentence-token accuracy, and LR schedules.

The target partition splits on membership in the sentence-token set: by
default the loss partition counts both ``<SENT_i>`` and ``<EOSEN>`` as
sentence-set tokens, while accuracy counts only ``<SENT_i>`` positions
(``<EOSEN>`` is trivially predictable).  Both choices are configurable.

Weighting schemes:

* ``token_avg`` -- one mean over all counted tokens; sentence and
  reconstruction losses are the partition's shares of that mean, so
  ``total == sentence + reconstruction``.
* ``sum_of_means`` -- mean over sentence-set positions plus mean over the
  rest (upweights the rare sentence tokens).
* ``sentence_x5`` -- like sum_of_means with the sentence mean weighted 5x.

For all schemes the reported sentence/reconstruction fields are the two
addends of ``total``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .tokenizer import Vocab

SCHEMES = ("token_avg", "sum_of_means", "sentence_x5")

# per-eval metrics CSV columns, in order
METRIC_COLUMNS = (
    "step",
    "lr",
    "total",
    "sentence_loss",
    "reconstruction_loss",
    "sent_acc_shuffled",
    "sent_acc_unshuffled",
    "realized_mask_rate",
)


class ObjectiveError(ValueError):
    pass


@dataclass
class LossBreakdown:
    total: torch.Tensor  # 0-dim, differentiable
    sentence_loss: torch.Tensor
    reconstruction_loss: torch.Tensor
    n_total: int
    n_sentence: int
    scheme: str


def sentence_set_tensor(vocab: Vocab, include_eosen: bool = True) -> torch.Tensor:
    ids = list(vocab.sentence_ids)
    if include_eosen:
        ids.append(vocab.eosen_id)
    return torch.tensor(ids, dtype=torch.long)


def loss_breakdown(
    logits: torch.Tensor,
    target_ids: torch.Tensor,
    vocab: Vocab,
    scheme: str = "token_avg",
    include_eosen: bool = True,
    empty_ok: bool = False,
) -> LossBreakdown:
    """Cross-entropy decomposed into sentence vs reconstruction parts.

    ``logits`` is (B, L, V) or (L, V); ``target_ids`` matches its leading
    dims, with pad positions marked by ``vocab.pad_id`` and excluded from
    every count.
    """
    if scheme not in SCHEMES:
        raise ObjectiveError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if logits.dim() == 2:
        logits = logits.unsqueeze(0)
        target_ids = target_ids.unsqueeze(0)
    if logits.shape[:2] != target_ids.shape:
        raise ObjectiveError(
            f"logits {tuple(logits.shape)} and targets {tuple(target_ids.shape)} disagree"
        )

    log_probs = torch.log_softmax(logits, dim=-1)
    nll = -log_probs.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)
    counted = target_ids != vocab.pad_id
    in_sentence = torch.isin(target_ids, sentence_set_tensor(vocab, include_eosen)) & counted
    in_reconstruction = counted & ~in_sentence

    n_total = int(counted.sum().item())
    n_sentence = int(in_sentence.sum().item())
    if n_total == 0:
        if not empty_ok:
            raise ObjectiveError("no counted target tokens in batch (N = 0)")
        zero = logits.sum() * 0.0
        return LossBreakdown(zero, zero.clone(), zero.clone(), 0, 0, scheme)

    sum_sentence = (nll * in_sentence).sum()
    sum_reconstruction = (nll * in_reconstruction).sum()

    if scheme == "token_avg":
        total = (nll * counted).sum() / n_total
        sentence = sum_sentence / n_total
        reconstruction = sum_reconstruction / n_total
    else:
        sentence_mean = sum_sentence / max(n_sentence, 1)
        reconstruction_mean = sum_reconstruction / max(n_total - n_sentence, 1)
        weight = 5.0 if scheme == "sentence_x5" else 1.0
        sentence = weight * sentence_mean
        reconstruction = reconstruction_mean
        total = sentence + reconstruction
    return LossBreakdown(total, sentence, reconstruction, n_total, n_sentence, scheme)


def sentence_accuracy(
    logits: torch.Tensor,
    target_ids: torch.Tensor,
    vocab: Vocab,
    include_eosen: bool = False,
) -> float | None:
    """Fraction of sentence-token target positions predicted exactly.

    Returns None when the targets contain no such position (the metric is
    undefined for t5-style examples).
    """
    if logits.dim() == 2:
        logits = logits.unsqueeze(0)
        target_ids = target_ids.unsqueeze(0)
    positions = torch.isin(target_ids, sentence_set_tensor(vocab, include_eosen))
    n = int(positions.sum().item())
    if n == 0:
        return None
    predictions = logits.argmax(dim=-1)
    correct = int(((predictions == target_ids) & positions).sum().item())
    return correct / n


@dataclass
class LRSchedule:
    peak_lr: float = 1e-4
    warmup_steps: int = 10_000
    total_steps: int = 100_000
    mode: str = "linear"  # or "inv_sqrt"

    def __post_init__(self) -> None:
        if self.mode not in ("linear", "inv_sqrt"):
            raise ObjectiveError(f"unknown schedule mode {self.mode!r}")
        if self.warmup_steps > self.total_steps:
            raise ObjectiveError("warmup_steps must not exceed total_steps")


def lr_at(step: int, schedule: LRSchedule) -> float:
    """Linear ramp to peak over warmup, then linear decay to zero at
    total_steps or peak * sqrt(warmup / step)."""
    if step < 0:
        raise ObjectiveError(f"step must be >= 0, got {step}")
    warmup = schedule.warmup_steps
    if step <= warmup:
        return schedule.peak_lr * (step / warmup if warmup > 0 else 1.0)
    if schedule.mode == "inv_sqrt":
        return schedule.peak_lr * math.sqrt(warmup / step)
    remaining = schedule.total_steps - step
    if remaining <= 0:
        return 0.0
    return schedule.peak_lr * remaining / (schedule.total_steps - warmup)
