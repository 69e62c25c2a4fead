"""Constrained beam search over per-timestep key posteriors with shallow
language-model fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DecodeError
from .lm import SequenceScorer

_PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class Candidate:
    label: str
    logp: float


@dataclass(frozen=True)
class Hypothesis:
    labels: tuple[str, ...]
    acoustic: float
    lm: float

    def combined(self, lm_weight: float) -> float:
        return self.acoustic + lm_weight * self.lm


@dataclass(frozen=True)
class DecodeResult:
    labels: tuple[str, ...]
    acoustic: float
    lm: float
    combined: float


def validate_posteriors(posteriors: np.ndarray) -> np.ndarray:
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2:
        raise ValueError("posteriors must be a (timesteps, keys) matrix")
    sums = posteriors.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(
            f"posterior row {worst} sums to {sums[worst]:.8f}, not 1")
    return posteriors


def topk_candidates(posteriors: np.ndarray, labels: Sequence[str],
                    k: int) -> list[list[Candidate]]:
    """Top-k labels per timestep, ties broken by lower vocabulary index.

    Log-probabilities are carried unrenormalized.
    """
    posteriors = validate_posteriors(posteriors)
    n_keys = posteriors.shape[1]
    if len(labels) != n_keys:
        raise ValueError("labels must match the posterior width")
    if not 1 <= k <= n_keys:
        raise ValueError(f"k must be in [1, {n_keys}], got {k}")
    steps = []
    for row in posteriors:
        order = np.argsort(-row, kind="stable")[:k]
        steps.append([Candidate(labels[int(i)],
                                math.log(max(row[int(i)], _PROB_FLOOR)))
                      for i in order])
    return steps


def beam_decode(candidates: list[list[Candidate]],
                lm: SequenceScorer | None = None,
                lm_weight: float = 0.5,
                beam: int = 8) -> DecodeResult:
    """Maximize acoustic log-prob plus lm_weight times LM log-prob.

    With ``beam`` at least the product of per-step candidate counts this is
    exact exhaustive maximization. Ties break on score, then lexicographic
    label order, so decoding is deterministic.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    if not candidates:
        raise DecodeError("no timesteps to decode")
    hyps = [Hypothesis(labels=(), acoustic=0.0, lm=0.0)]
    for t, step in enumerate(candidates):
        if not step:
            raise DecodeError(
                f"empty candidate set at step {t}; upstream stage must emit "
                "at least one candidate per timestep")
        expanded = []
        for hyp in hyps:
            if lm is not None and lm_weight != 0.0:
                try:
                    scores = lm.next_logprobs(hyp.labels,
                                              [c.label for c in step])
                except Exception as exc:
                    raise DecodeError(f"language-model scorer failed at "
                                      f"step {t}: {exc}") from exc
            else:
                scores = {}
            for cand in step:
                lm_inc = scores.get(cand.label, 0.0) if scores else 0.0
                if scores and cand.label not in scores:
                    raise DecodeError(
                        f"scorer returned no score for label {cand.label!r}")
                expanded.append(Hypothesis(
                    labels=hyp.labels + (cand.label,),
                    acoustic=hyp.acoustic + cand.logp,
                    lm=hyp.lm + lm_inc))
        expanded.sort(key=lambda h: (-h.combined(lm_weight), h.labels))
        hyps = expanded[:beam]
    best = hyps[0]
    return DecodeResult(labels=best.labels, acoustic=best.acoustic,
                        lm=best.lm, combined=best.combined(lm_weight))
