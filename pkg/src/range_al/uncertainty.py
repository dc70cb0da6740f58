"""Pixel-wise Bayesian uncertainty heuristics over MC prediction tensors.

All heuristics produce maps where higher means more informative, so a single
descending ranking rule serves every acquisition kind. Natural logarithms
throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import BadParam, EmptyPool
from .projection import PixelScoreMap
from .rng import RngStream


class HeuristicKind(enum.Enum):
    RANDOM = "random"
    CERTAINTY = "certainty"
    ENTROPY = "entropy"
    VARIANCE = "variance"
    BALD = "bald"


@dataclass
class McProbTensor:
    """(H, W, C, T) class probabilities across T stochastic forward passes."""

    probs: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 4:
            raise BadParam("probs must be (H, W, C, T)")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    @property
    def mc_iterations(self) -> int:
        return self.probs.shape[3]

    def check(self, tol: float = 1e-5) -> None:
        assert self.mc_iterations >= 1 and self.num_classes >= 2
        sums = self.probs[self.valid].sum(axis=-2)
        assert np.all(np.abs(sums - 1.0) <= tol)
        assert np.all((self.probs >= 0.0) & (self.probs <= 1.0))


@dataclass(frozen=True)
class SampleScore:
    sample_id: int
    score: float


def mean_prediction(t: McProbTensor) -> np.ndarray:
    """MC-averaged class probabilities, (H, W, C) float64."""
    return np.asarray(t.probs, dtype=np.float64).mean(axis=3)


def _entropy(p: np.ndarray, axis: int) -> np.ndarray:
    # 0 * ln 0 := 0; log is evaluated only where p > 0
    logp = np.zeros_like(p)
    np.log(p, out=logp, where=p > 0.0)
    logp *= p
    return -logp.sum(axis=axis)


def entropy_map(t: McProbTensor) -> PixelScoreMap:
    """Entropy of the mean prediction."""
    return PixelScoreMap(scores=_entropy(mean_prediction(t), axis=2), valid=t.valid.copy())


def certainty_map(t: McProbTensor) -> PixelScoreMap:
    """1 - (least confident class probability across the most confident MC pass).

    The raw statistic is min over classes of max over passes; storing its
    complement keeps "higher = more informative" like the other heuristics.
    """
    certainty = np.asarray(t.probs, dtype=np.float64).max(axis=3).min(axis=2)
    return PixelScoreMap(scores=1.0 - certainty, valid=t.valid.copy())


def variance_map(t: McProbTensor) -> PixelScoreMap:
    """Per-class population variance over passes, averaged across classes."""
    p = np.asarray(t.probs, dtype=np.float64)
    var = p.var(axis=3)  # 1/T normalization
    return PixelScoreMap(scores=var.mean(axis=2), valid=t.valid.copy())


def bald_map(t: McProbTensor) -> PixelScoreMap:
    """Information gain: entropy of the mean minus mean entropy of the passes.

    Nonnegative in exact arithmetic (Jensen); float noise down to -1e-9 is
    clamped to 0.
    """
    p = np.asarray(t.probs, dtype=np.float64)
    gain = _entropy(p.mean(axis=3), axis=2) - _entropy(p, axis=2).mean(axis=2)
    return PixelScoreMap(scores=np.maximum(gain, 0.0), valid=t.valid.copy())


_MAP_FNS = {
    HeuristicKind.CERTAINTY: certainty_map,
    HeuristicKind.ENTROPY: entropy_map,
    HeuristicKind.VARIANCE: variance_map,
    HeuristicKind.BALD: bald_map,
}


def heuristic_map(kind: HeuristicKind, t: McProbTensor) -> PixelScoreMap:
    if kind not in _MAP_FNS:
        raise BadParam(f"{kind} has no pixel map")
    return _MAP_FNS[kind](t)


def aggregate(m: PixelScoreMap, method: str = "sum") -> float:
    """Reduce a score map to one scalar; invalid pixels contribute nothing."""
    vals = m.scores[m.valid]
    if method == "sum":
        return float(vals.sum())
    if method == "mean":  # diagnostic only
        return float(vals.mean()) if vals.size else 0.0
    raise BadParam(f"unknown aggregation {method!r}")


def rank_and_select(scores, budget: int, kind: HeuristicKind, rng: RngStream):
    """Ids of the budget most informative samples, ordered by rank.

    Uncertainty kinds take the highest scores with ties broken by ascending
    sample id; Random draws uniformly from the stream.
    """
    if budget < 1:
        raise BadParam("budget must be >= 1")
    scores = list(scores)
    if not scores:
        raise EmptyPool("no samples to select from")
    k = min(budget, len(scores))
    if kind is HeuristicKind.RANDOM:
        ids = np.array(sorted(s.sample_id for s in scores))
        picked = rng.generator().choice(ids, size=k, replace=False)
        return [int(i) for i in picked]
    ranked = sorted(scores, key=lambda s: (-s.score, s.sample_id))
    return [int(s.sample_id) for s in ranked[:k]]
