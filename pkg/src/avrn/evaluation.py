"""Summary-quality metrics.

Precision/recall/F-measure compare frame selections against each human
annotator, aggregated per dataset convention (best annotator or mean).
Rank correlations compare predicted score curves against annotated ones;
both handle ties: Kendall's coefficient uses the tie-corrected denominator
and a mergesort inversion count, Spearman's uses mid-ranks (tied values get
the average of their rank positions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DataError, EmptySequenceError, ShapeError
from .segmentation import ShotPartition, SummaryMask, select_summary, shot_scores

__all__ = [
    "AggregateMode",
    "EvalResult",
    "RankCorrelation",
    "VideoEvalResult",
    "prf",
    "aggregate",
    "kendall_tau",
    "spearman_rho",
    "rank_correlation",
    "expand_to_frames",
    "evaluate_video",
]


class AggregateMode(str, Enum):
    MAX = "max"
    MEAN = "mean"


@dataclass
class EvalResult:
    precision: float
    recall: float
    f_measure: float
    per_annotator: list = field(default_factory=list)


@dataclass
class RankCorrelation:
    kendall_tau: float
    spearman_rho: float
    kendall_degenerate: bool = False
    spearman_degenerate: bool = False


def _as_mask(x) -> np.ndarray:
    if isinstance(x, SummaryMask):
        return x.selected
    return np.asarray(x, dtype=bool).reshape(-1)


def prf(pred, human, standard_f: bool = True):
    """(precision, recall, F) of two frame masks.

    With ``standard_f`` (default) F is the harmonic mean 2PR/(P+R); setting
    it False drops the factor 2, giving half the usual value.  Empty masks
    yield zeros instead of division errors.
    """
    pred = _as_mask(pred)
    human = _as_mask(human)
    if pred.size != human.size:
        raise ShapeError(f"mask lengths differ: {pred.size} vs {human.size}")
    overlap = float(np.count_nonzero(pred & human))
    n_pred = np.count_nonzero(pred)
    n_human = np.count_nonzero(human)
    precision = overlap / n_pred if n_pred else 0.0
    recall = overlap / n_human if n_human else 0.0
    if precision + recall == 0.0:
        f = 0.0
    else:
        f = (precision * recall) / (precision + recall)
        if standard_f:
            f *= 2.0
    return precision, recall, f


def aggregate(results, mode: AggregateMode = AggregateMode.MAX) -> EvalResult:
    """Collapse per-annotator (P, R, F) triples into one EvalResult.

    MAX reports the triple of the annotator with the highest F (first such
    annotator on ties); MEAN averages each component independently.
    """
    results = [tuple(float(v) for v in r) for r in results]
    if not results:
        raise EmptySequenceError("aggregate: no per-annotator results")
    mode = AggregateMode(mode)
    if mode is AggregateMode.MAX:
        best = max(range(len(results)), key=lambda i: (results[i][2], -i))
        p, r, f = results[best]
    else:
        p, r, f = (float(np.mean([res[k] for res in results])) for k in range(3))
    return EvalResult(p, r, f, per_annotator=results)


# ---------------------------------------------------------------------------
# Rank correlations
# ---------------------------------------------------------------------------


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"score lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise ShapeError(f"need at least 2 scores, got {a.size}")
    return a, b


def _sort_counting_inversions(arr: np.ndarray):
    """Mergesort that counts pairs (i < j) with arr[i] > arr[j]."""
    n = arr.size
    if n <= 1:
        return arr, 0
    left, c_left = _sort_counting_inversions(arr[: n // 2])
    right, c_right = _sort_counting_inversions(arr[n // 2 :])
    # for each right element, the left elements strictly above it are inverted
    positions = np.searchsorted(left, right, side="right")
    cross = int(np.sum(left.size - positions))
    merged = np.sort(np.concatenate([left, right]), kind="mergesort")
    return merged, c_left + c_right + cross


def _tie_term(values) -> int:
    """sum t*(t-1)/2 over groups of equal values."""
    _, counts = np.unique(values, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _kendall_parts(a, b):
    n = a.size
    n0 = n * (n - 1) // 2
    order = np.lexsort((b, a))
    b_sorted = b[order]
    n1 = _tie_term(a)
    n2 = _tie_term(b)
    n3 = _tie_term_pairs(np.stack([a, b], axis=1))
    _, swaps = _sort_counting_inversions(b_sorted)
    con_minus_dis = n0 - n1 - n2 + n3 - 2 * swaps
    return con_minus_dis, n0, n1, n2


def _tie_term_pairs(stacked) -> int:
    _, counts = np.unique(stacked, axis=0, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def kendall_tau(a, b) -> float:
    """Tie-corrected rank agreement in [-1, 1]; 0 when either side is all ties.

    Counted in O(n log n): pairs are sorted by (a, b) and the discordant
    count is the number of inversions left in b.
    """
    a, b = _check_pair(a, b)
    con_minus_dis, n0, n1, n2 = _kendall_parts(a, b)
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        return 0.0
    return _clamp_unit(con_minus_dis / denom)


def _clamp_unit(x: float) -> float:
    return float(min(1.0, max(-1.0, x)))


def _midranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values sharing the mean of their positions."""
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    group_rank = starts + (counts + 1) / 2.0
    return group_rank[inverse]


def spearman_rho(a, b) -> float:
    """Linear correlation of mid-ranks; 0 when either rank vector is constant."""
    a, b = _check_pair(a, b)
    ra = _midranks(a)
    rb = _midranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    var_a = float(np.sum(da * da))
    var_b = float(np.sum(db * db))
    if var_a == 0.0 or var_b == 0.0:
        return 0.0
    return _clamp_unit(float(np.sum(da * db)) / math.sqrt(var_a * var_b))


def rank_correlation(a, b) -> RankCorrelation:
    """Both coefficients plus flags marking degenerate (all-tied) inputs."""
    a, b = _check_pair(a, b)
    con_minus_dis, n0, n1, n2 = _kendall_parts(a, b)
    k_denom = math.sqrt((n0 - n1) * (n0 - n2))
    kendall_degenerate = k_denom == 0.0
    tau = 0.0 if kendall_degenerate else _clamp_unit(con_minus_dis / k_denom)
    ra, rb = _midranks(a), _midranks(b)
    spearman_degenerate = bool(np.all(ra == ra[0]) or np.all(rb == rb[0]))
    rho = 0.0 if spearman_degenerate else spearman_rho(a, b)
    return RankCorrelation(tau, rho, kendall_degenerate, spearman_degenerate)


# ---------------------------------------------------------------------------
# Whole-video protocol
# ---------------------------------------------------------------------------


def expand_to_frames(values, stride: int, n_frames: int) -> np.ndarray:
    """Repeat each per-step value over its span of original frames.

    Step k covers frames [k*stride, (k+1)*stride); the result is cut to
    n_frames, and any trailing frames past the last step reuse its value.
    """
    values = np.asarray(values).reshape(-1)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if values.size == 0:
        raise EmptySequenceError("no step values to expand")
    expanded = np.repeat(values, stride)
    if expanded.size < n_frames:
        expanded = np.concatenate(
            [expanded, np.full(n_frames - expanded.size, values[-1])])
    return expanded[:n_frames]


@dataclass
class VideoEvalResult:
    result: EvalResult
    correlation: RankCorrelation
    mask: SummaryMask
    frame_mask: np.ndarray


def evaluate_video(p, annotation, part: ShotPartition,
                   budget_fraction: float = 0.15,
                   mode: AggregateMode = AggregateMode.MAX,
                   use_sum: bool = False) -> VideoEvalResult:
    """Full per-video protocol: segment scores -> knapsack -> metrics.

    ``p`` holds per-step predicted scores on the subsampled grid; the
    annotation carries frame-level human summaries and/or score vectors at
    the original frame rate plus the stride between grid steps.  The
    predicted mask and curve are expanded to frames before comparison.
    Correlations are averaged over annotators; a flag is set if any pairing
    was degenerate (its contribution counted as 0).
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    scores = shot_scores(part, p, use_sum=use_sum)
    mask = select_summary(scores, part, budget_fraction)
    frame_mask = expand_to_frames(mask.selected, annotation.stride,
                                  annotation.n_frames).astype(bool)

    if not annotation.summaries:
        raise DataError(f"{annotation.video_id}: no human summaries to score against")
    triples = [prf(frame_mask, human) for human in annotation.summaries]
    result = aggregate(triples, mode)

    score_vectors = annotation.scores
    if not score_vectors:
        score_vectors = [np.asarray(s, dtype=np.float64) for s in annotation.summaries]
    p_frames = expand_to_frames(p, annotation.stride, annotation.n_frames)
    pair_results = [rank_correlation(p_frames, s) for s in score_vectors]
    correlation = RankCorrelation(
        kendall_tau=float(np.mean([r.kendall_tau for r in pair_results])),
        spearman_rho=float(np.mean([r.spearman_rho for r in pair_results])),
        kendall_degenerate=any(r.kendall_degenerate for r in pair_results),
        spearman_degenerate=any(r.spearman_degenerate for r in pair_results),
    )
    return VideoEvalResult(result, correlation, mask, frame_mask)
