"""Training objectives: key / domain cross-entropy, the cross-keyboard
supervised contrastive loss, and their weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_dom: float = 0.5
    lambda_con: float = 0.1
    temperature: float = 0.07

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.lambda_dom < 0 or self.lambda_con < 0:
            raise ValueError("loss weights must be >= 0")


def cross_entropy(posteriors: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-probability of the true labels.

    Rows are probability distributions; probabilities are clamped at 1e-12
    so a zero at the true label yields a large finite loss.
    """
    if posteriors.shape[0] != labels.shape[0]:
        raise ValueError("posteriors and labels must align")
    picked = posteriors.gather(-1, labels.long().unsqueeze(-1)).squeeze(-1)
    return -torch.log(torch.clamp(picked, min=LOG_FLOOR)).mean()


class SupConResult(NamedTuple):
    loss: torch.Tensor
    num_anchors: int
    degenerate: bool


def supcon_loss(embeddings: torch.Tensor, key_labels: torch.Tensor,
                domain_ids: torch.Tensor, temperature: float = 0.07) -> SupConResult:
    """Supervised contrastive loss with cross-keyboard positives.

    For anchor i, positives are same-key samples from *other* domains and
    negatives are different-key samples; the denominator runs over exactly
    that union, so same-key same-domain samples (including the anchor
    itself) never appear. Anchors without positives contribute nothing and
    are excluded from the average; a batch with no valid anchor returns 0
    with the degenerate flag set.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    n = embeddings.shape[0]
    if n < 2:
        raise ValueError("contrastive batch needs at least 2 samples")

    same_key = key_labels.unsqueeze(0) == key_labels.unsqueeze(1)
    same_dom = domain_ids.unsqueeze(0) == domain_ids.unsqueeze(1)
    pos = same_key & ~same_dom
    neg = ~same_key
    denom_mask = pos | neg

    sim = embeddings @ embeddings.T / temperature
    neg_inf = torch.finfo(sim.dtype).min
    masked = torch.where(denom_mask, sim, torch.full_like(sim, neg_inf))
    row_max = masked.max(dim=1, keepdim=True).values
    row_max = torch.where(torch.isfinite(row_max), row_max,
                          torch.zeros_like(row_max))
    exp = torch.exp(sim - row_max) * denom_mask
    log_denom = torch.log(torch.clamp(exp.sum(dim=1, keepdim=True), min=1e-300
                                      if sim.dtype == torch.float64 else 1e-38))
    log_prob = (sim - row_max) - log_denom

    pos_counts = pos.sum(dim=1)
    valid = pos_counts > 0
    num_anchors = int(valid.sum())
    if num_anchors == 0:
        return SupConResult(torch.zeros((), dtype=embeddings.dtype,
                                        device=embeddings.device), 0, True)
    per_anchor = -(log_prob * pos).sum(dim=1)[valid] / pos_counts[valid]
    return SupConResult(per_anchor.mean(), num_anchors, False)


def total_loss(l_key: torch.Tensor, l_dom: torch.Tensor,
               l_supcon: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """l_key + lambda_dom * l_dom + lambda_con * l_supcon."""
    return l_key + weights.lambda_dom * l_dom + weights.lambda_con * l_supcon
