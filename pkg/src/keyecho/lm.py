"""Character n-gram language model with add-alpha smoothing, plus the
scorer protocol external language models plug into.

Labels are atomic symbols: single characters for text, or reserved names
("Backspace", "Enter", ...) for special keys.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

from .errors import DataError

BOS = "\x02"  # history padding for sequence starts; never in the vocabulary


@runtime_checkable
class SequenceScorer(Protocol):
    """Anything that can score next-symbol continuations of a prefix."""

    def next_logprobs(self, prefix: Sequence[str],
                      labels: Sequence[str]) -> Mapping[str, float]:
        """Log-probability of each requested label following the prefix."""
        ...


@dataclass
class CharNgramLM:
    """Add-alpha smoothed n-gram model over a fixed symbol vocabulary.

    Conditionals sum to 1 over the vocabulary. Out-of-vocabulary labels are
    scored with the zero-count smoothed mass, so any string gets a finite
    score.
    """

    order: int
    alpha: float
    vocabulary: tuple[str, ...]
    counts: dict = field(repr=False)
    context_totals: dict = field(repr=False)

    def _history(self, prefix: Sequence[str]) -> tuple[str, ...]:
        padded = (BOS,) * (self.order - 1) + tuple(prefix)
        return padded[len(padded) - (self.order - 1):] if self.order > 1 else ()

    def logprob(self, prefix: Sequence[str], label: str) -> float:
        history = self._history(prefix)
        total = self.context_totals.get(history, 0)
        count = self.counts.get(history, {}).get(label, 0)
        v = len(self.vocabulary)
        return math.log((count + self.alpha) / (total + self.alpha * v))

    def next_logprobs(self, prefix: Sequence[str],
                      labels: Sequence[str]) -> dict[str, float]:
        history = self._history(prefix)
        total = self.context_totals.get(history, 0)
        seen = self.counts.get(history, {})
        v = len(self.vocabulary)
        denom = math.log(total + self.alpha * v)
        return {lab: math.log(seen.get(lab, 0) + self.alpha) - denom
                for lab in labels}

    def sequence_logprob(self, sequence: Sequence[str]) -> float:
        return sum(self.logprob(sequence[:i], sequence[i])
                   for i in range(len(sequence)))


def train_char_lm(corpus: str | Iterable[Sequence[str]], order: int,
                  alpha: float = 0.1,
                  extra_vocab: Sequence[str] = ()) -> CharNgramLM:
    """Fit an add-alpha n-gram model.

    ``corpus`` is either one text (a single symbol sequence) or an iterable
    of sequences, each padded independently at its start.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    sequences = [corpus] if isinstance(corpus, str) else [tuple(s) for s in corpus]
    sequences = [s for s in sequences if len(s)]
    if not sequences:
        raise DataError("training corpus is empty")

    vocab = sorted({sym for seq in sequences for sym in seq} | set(extra_vocab))
    counts: dict[tuple, Counter] = defaultdict(Counter)
    totals: dict[tuple, int] = defaultdict(int)
    pad = (BOS,) * (order - 1)
    for seq in sequences:
        padded = pad + tuple(seq)
        for i in range(order - 1, len(padded)):
            history = padded[i - (order - 1):i]
            counts[history][padded[i]] += 1
            totals[history] += 1
    return CharNgramLM(order=order, alpha=alpha, vocabulary=tuple(vocab),
                       counts={k: dict(v) for k, v in counts.items()},
                       context_totals=dict(totals))


def lm_score(lm: CharNgramLM, prefix: Sequence[str], next_label: str) -> float:
    """Incremental log-probability; sums over a sequence telescope exactly."""
    return lm.logprob(prefix, next_label)
