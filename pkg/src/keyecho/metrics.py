"""Key-level and sequence-level evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class KeyMetrics:
    top1: float
    top5: float
    confusion: np.ndarray  # [true, predicted] counts

    def __post_init__(self):
        if not 0.0 <= self.top1 <= 1.0 or not 0.0 <= self.top5 <= 1.0:
            raise ValueError("accuracies must lie in [0, 1]")
        if self.top5 < self.top1:
            raise ValueError("top5 cannot be below top1")


@dataclass(frozen=True)
class SequenceMetrics:
    char_accuracy: float
    exact_match: float
    norm_levenshtein: float


def key_metrics(posteriors: np.ndarray, labels: Sequence[int]) -> KeyMetrics:
    """Top-1/top-5 accuracy and confusion counts.

    Ties are broken by the fixed label order (lower index wins).
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if posteriors.ndim != 2 or len(labels) != posteriors.shape[0]:
        raise ValueError("posteriors and labels must align")
    n, n_keys = posteriors.shape
    order = np.argsort(-posteriors, axis=1, kind="stable")
    predicted = order[:, 0]
    top1 = float((predicted == labels).mean()) if n else 0.0
    in_top5 = (order[:, :min(5, n_keys)] == labels[:, None]).any(axis=1)
    top5 = float(in_top5.mean()) if n else 0.0
    confusion = np.zeros((n_keys, n_keys), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    return KeyMetrics(top1=top1, top5=top5, confusion=confusion)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance, two-row dynamic program."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, sym_a in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, sym_b in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (sym_a != sym_b))
        prev = cur
    return prev[len(b)]


def norm_levenshtein(a: Sequence, b: Sequence) -> float:
    """Edit distance divided by max length; 0 for two empty sequences."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def sequence_metrics(predicted: Sequence, reference: Sequence) -> SequenceMetrics:
    """Alignment-based character accuracy, exact match, and edit distance.

    Character accuracy is 1 minus the normalized edit distance, which stays
    well-defined when the lengths differ.
    """
    dist = norm_levenshtein(predicted, reference)
    return SequenceMetrics(
        char_accuracy=1.0 - dist,
        exact_match=float(tuple(predicted) == tuple(reference)),
        norm_levenshtein=dist,
    )


def mean_sequence_metrics(pairs: Sequence[tuple[Sequence, Sequence]]) -> SequenceMetrics:
    """Average sequence metrics over (predicted, reference) pairs."""
    if not pairs:
        raise ValueError("no sequence pairs to score")
    scores = [sequence_metrics(p, r) for p, r in pairs]
    return SequenceMetrics(
        char_accuracy=float(np.mean([s.char_accuracy for s in scores])),
        exact_match=float(np.mean([s.exact_match for s in scores])),
        norm_levenshtein=float(np.mean([s.norm_levenshtein for s in scores])),
    )
