"""Shot boundary detection and budgeted key-shot selection.

Boundaries come from kernel change-point detection: dynamic programming
minimises the total within-segment scatter of the feature dot-product kernel,
and the segment count is chosen by a model-selection penalty.  Shots are then
scored by averaging per-step importance, and a 0/1 knapsack picks the subset
of shots with maximal total importance mass under a length budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptySequenceError, NonFiniteError, ShapeError

__all__ = [
    "ShotPartition",
    "ShotScores",
    "SummaryMask",
    "kts_segment",
    "shot_scores",
    "select_summary",
]


@dataclass
class ShotPartition:
    """Boundary indices [0, s_1, ..., n]; shot i spans [S[i], S[i+1])."""

    boundaries: np.ndarray

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=np.int64).reshape(-1)
        if self.boundaries.size < 2:
            raise ValueError("a partition needs at least [0, n]")
        if self.boundaries[0] != 0:
            raise ValueError(f"first boundary must be 0, got {self.boundaries[0]}")
        if not (np.diff(self.boundaries) > 0).all():
            raise ValueError(f"boundaries must be strictly increasing: {self.boundaries}")

    @property
    def m(self) -> int:
        return self.boundaries.size - 1

    @property
    def n(self) -> int:
        return int(self.boundaries[-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def shots(self):
        """(start, stop) half-open index pairs, one per shot."""
        return list(zip(self.boundaries[:-1].tolist(), self.boundaries[1:].tolist()))

    def to_json(self) -> str:
        return json.dumps([int(b) for b in self.boundaries])

    @classmethod
    def from_json(cls, text: str) -> "ShotPartition":
        return cls(np.asarray(json.loads(text)))


@dataclass
class ShotScores:
    scores: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.lengths = np.asarray(self.lengths, dtype=np.int64).reshape(-1)
        if self.scores.size != self.lengths.size:
            raise ShapeError(
                f"{self.scores.size} scores for {self.lengths.size} shot lengths")
        if self.scores.size == 0:
            raise EmptySequenceError("no shots")
        if (self.lengths < 1).any():
            raise ValueError("every shot must span at least one step")
        if not np.isfinite(self.scores).all():
            raise NonFiniteError("non-finite shot scores")

    @property
    def m(self) -> int:
        return self.scores.size


@dataclass
class SummaryMask:
    """Per-step boolean selection; aligned to whole shots by construction."""

    selected: np.ndarray

    def __post_init__(self):
        self.selected = np.asarray(self.selected, dtype=bool).reshape(-1)

    def __len__(self):
        return self.selected.size

    @property
    def frame_count(self) -> int:
        return int(np.count_nonzero(self.selected))


def _segment_scatter_table(x: np.ndarray) -> np.ndarray:
    """scat[a, b] = within-segment scatter of steps [a, b) under a dot kernel.

    Equal to sum_i ||x_i||^2 - ||sum_i x_i||^2 / (b - a) over the segment,
    computed from prefix sums so the full triangular table costs O(n^2 d).
    """
    n = x.shape[0]
    sq = np.concatenate([[0.0], np.cumsum(np.sum(x * x, axis=1))])
    vec = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    scat = np.zeros((n + 1, n + 1))
    for a in range(n):
        diff = vec[a + 1 :] - vec[a]
        lens = np.arange(1, n - a + 1, dtype=np.float64)
        scat[a, a + 1 :] = (sq[a + 1 :] - sq[a]) - np.sum(diff * diff, axis=1) / lens
    return scat


def _partition_cost_tables(scat: np.ndarray, m_max: int):
    """DP over (segment count, prefix length); returns (cost, predecessor)."""
    n = scat.shape[0] - 1
    cost = np.full((m_max + 1, n + 1), np.inf)
    prev = np.full((m_max + 1, n + 1), -1, dtype=np.int64)
    cost[0, 0] = 0.0
    for k in range(1, m_max + 1):
        for t in range(k, n + 1):
            cand = cost[k - 1, k - 1 : t] + scat[k - 1 : t, t]
            j = int(np.argmin(cand))
            cost[k, t] = cand[j]
            prev[k, t] = k - 1 + j
    return cost, prev


def _selection_penalty(n: int, m: int, penalty: float) -> float:
    return penalty * m * (math.log(n / m) + 1.0)


def kts_segment(features, max_shots: int, penalty: float = 1.0) -> ShotPartition:
    """Change-point partition of a feature sequence into at most max_shots.

    The dot-product kernel's within-segment scatter is minimised exactly by
    dynamic programming for every shot count up to max_shots, then the count
    m minimising total scatter + penalty*m*(log(n/m)+1) is kept.  Larger
    penalties favour fewer shots; a constant sequence always yields one shot.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptySequenceError(f"need a (steps, dim) feature matrix, got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteError("non-finite feature entries")
    if max_shots < 1:
        raise ValueError(f"max_shots must be >= 1, got {max_shots}")
    if penalty < 0:
        raise ValueError(f"penalty must be >= 0, got {penalty}")
    n = x.shape[0]
    m_max = min(max_shots, n)
    scat = _segment_scatter_table(x)
    cost, prev = _partition_cost_tables(scat, m_max)
    objectives = [cost[m, n] + _selection_penalty(n, m, penalty)
                  for m in range(1, m_max + 1)]
    best_m = 1 + int(np.argmin(objectives))
    bounds = [n]
    t = n
    for k in range(best_m, 0, -1):
        t = int(prev[k, t])
        bounds.append(t)
    return ShotPartition(np.asarray(bounds[::-1]))


def shot_scores(part: ShotPartition, p, use_sum: bool = False) -> ShotScores:
    """Per-shot mean of the step scores.

    ``use_sum`` switches to the plain sum, which weights long shots by
    their length."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.size != part.n:
        raise ShapeError(f"partition covers {part.n} steps, scores have {p.size}")
    reduce = np.sum if use_sum else np.mean
    vals = [reduce(p[lo:hi]) for lo, hi in part.shots()]
    return ShotScores(np.asarray(vals), part.lengths)


def select_summary(scores: ShotScores, part: ShotPartition,
                   budget_fraction: float = 0.15) -> SummaryMask:
    """Exact 0/1 knapsack over shots.

    Maximises sum(score_i * length_i) of the selected shots subject to
    sum(length_i) <= floor(budget_fraction * n).  Ties are broken
    deterministically in favour of lower shot indices.  An empty selection
    is valid when no shot fits the budget.
    """
    if not 0 < budget_fraction <= 1:
        raise ConfigError(f"budget_fraction must be in (0, 1], got {budget_fraction}")
    if scores.m != part.m or (scores.lengths != part.lengths).any():
        raise ShapeError("shot scores do not match the partition's shots")
    n = part.n
    budget = int(math.floor(budget_fraction * n))
    lengths = part.lengths.tolist()
    values = (scores.scores * part.lengths).tolist()
    m = part.m

    table = np.zeros((m + 1, budget + 1))
    for i in range(1, m + 1):
        table[i] = table[i - 1]
        w, v = lengths[i - 1], values[i - 1]
        if w <= budget:
            cand = table[i - 1, : budget + 1 - w] + v
            table[i, w:] = np.maximum(table[i - 1, w:], cand)

    # a shot is in the optimum iff its row improved the table at the
    # remaining budget; equal rows mean the tie went to an earlier shot
    selected = np.zeros(n, dtype=bool)
    w = budget
    for i in range(m, 0, -1):
        if table[i, w] != table[i - 1, w]:
            lo, hi = part.boundaries[i - 1], part.boundaries[i]
            selected[lo:hi] = True
            w -= lengths[i - 1]
    return SummaryMask(selected)
