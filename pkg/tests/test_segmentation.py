"""Segmentation and selection against brute force.

The change-point DP is checked against exhaustive enumeration of every
partition (small n), and the knapsack against enumeration of every shot
subset.  Both oracles are written directly from the objective definitions,
sharing no code with the implementation.
"""

import itertools

import numpy as np
import numpy.testing as npt
import pytest

from avrn import segmentation as seg
from avrn.errors import ConfigError, EmptySequenceError, NonFiniteError, ShapeError


def _scatter(x, lo, hi):
    block = x[lo:hi]
    mu = block.mean(axis=0)
    return float(np.sum((block - mu) ** 2))


def _partition_objective(x, boundaries, penalty):
    n = x.shape[0]
    m = len(boundaries) - 1
    total = sum(_scatter(x, boundaries[i], boundaries[i + 1]) for i in range(m))
    return total + penalty * m * (np.log(n / m) + 1.0)


def _best_partition_brute_force(x, max_shots, penalty):
    """Exhaustive minimum over every partition with at most max_shots parts."""
    n = x.shape[0]
    best = np.inf
    for m in range(1, min(max_shots, n) + 1):
        for cuts in itertools.combinations(range(1, n), m - 1):
            bounds = [0, *cuts, n]
            best = min(best, _partition_objective(x, bounds, penalty))
    return best


@pytest.mark.parametrize("seed", range(10))
def test_kts_matches_exhaustive_minimum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 15))
    d = int(rng.integers(1, 4))
    x = rng.normal(size=(n, d)) * rng.uniform(0.5, 3)
    penalty = float(rng.uniform(0.0, 2.0))
    part = seg.kts_segment(x, max_shots=3, penalty=penalty)
    got = _partition_objective(x, part.boundaries.tolist(), penalty)
    want = _best_partition_brute_force(x, 3, penalty)
    assert got == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_kts_recovers_planted_boundary(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(20, 40))
    cut = int(rng.integers(5, n - 5))
    x = rng.normal(size=(n, 3)) * 0.5
    x[cut:] += 3.0
    part = seg.kts_segment(x, max_shots=2, penalty=1.0)
    assert part.m == 2
    assert abs(int(part.boundaries[1]) - cut) <= 1


def test_constant_sequence_yields_one_shot():
    x = np.ones((30, 4)) * 2.5
    part = seg.kts_segment(x, max_shots=8, penalty=1.0)
    assert part.m == 1
    npt.assert_array_equal(part.boundaries, [0, 30])


def test_more_shots_than_steps_is_capped():
    x = np.arange(3, dtype=float).reshape(-1, 1) * 10
    part = seg.kts_segment(x, max_shots=10, penalty=0.0)
    assert part.m <= 3
    assert part.n == 3


def test_kts_input_guards():
    with pytest.raises(EmptySequenceError):
        seg.kts_segment(np.zeros((0, 2)), 3)
    with pytest.raises(NonFiniteError):
        seg.kts_segment(np.array([[1.0], [np.nan]]), 3)
    with pytest.raises(ValueError):
        seg.kts_segment(np.ones((4, 1)), 0)
    with pytest.raises(ValueError):
        seg.kts_segment(np.ones((4, 1)), 3, penalty=-1.0)


def test_scatter_table_matches_direct_computation():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(12, 3))
    scat = seg._segment_scatter_table(x)
    for a in range(12):
        for b in range(a + 1, 13):
            assert scat[a, b] == pytest.approx(_scatter(x, a, b), abs=1e-9)


def test_partition_validation():
    part = seg.ShotPartition(np.array([0, 3, 7, 10]))
    assert part.m == 3 and part.n == 10
    npt.assert_array_equal(part.lengths, [3, 4, 3])
    assert list(part.shots()) == [(0, 3), (3, 7), (7, 10)]
    with pytest.raises(ValueError):
        seg.ShotPartition(np.array([1, 3, 10]))  # must start at 0
    with pytest.raises(ValueError):
        seg.ShotPartition(np.array([0, 5, 5, 10]))  # strictly increasing
    with pytest.raises(ValueError):
        seg.ShotPartition(np.array([0]))


def test_partition_json_round_trip():
    part = seg.ShotPartition(np.array([0, 4, 9]))
    again = seg.ShotPartition.from_json(part.to_json())
    npt.assert_array_equal(again.boundaries, part.boundaries)


def test_shot_scores_mean_and_sum():
    part = seg.ShotPartition(np.array([0, 2, 5]))
    p = np.array([0.2, 0.4, 0.6, 0.6, 0.6])
    mean_scores = seg.shot_scores(part, p)
    npt.assert_allclose(mean_scores.scores, [0.3, 0.6])
    sum_scores = seg.shot_scores(part, p, use_sum=True)
    npt.assert_allclose(sum_scores.scores, [0.6, 1.8])
    with pytest.raises(ShapeError):
        seg.shot_scores(part, np.ones(4))


def _brute_force_best_value(values, lengths, budget):
    m = len(values)
    best = 0.0
    for mask in itertools.product([0, 1], repeat=m):
        weight = sum(l for l, keep in zip(lengths, mask) if keep)
        if weight <= budget:
            best = max(best, sum(v for v, keep in zip(values, mask) if keep))
    return best


@pytest.mark.parametrize("seed", range(20))
def test_knapsack_matches_subset_enumeration(seed):
    rng = np.random.default_rng(200 + seed)
    m = int(rng.integers(1, 9))
    lengths = rng.integers(1, 7, size=m)
    n = int(lengths.sum())
    boundaries = np.concatenate([[0], np.cumsum(lengths)])
    part = seg.ShotPartition(boundaries)
    scores = rng.uniform(0.0, 1.0, size=m)
    bf = float(rng.uniform(0.1, 0.9))
    mask = seg.select_summary(seg.ShotScores(scores, lengths), part, bf)

    budget = int(np.floor(bf * n))
    assert mask.frame_count <= budget  # hard constraint

    per_shot = np.array([mask.selected[lo:hi].all() or not mask.selected[lo:hi].any()
                         for lo, hi in part.shots()])
    assert per_shot.all()  # whole shots only
    chosen_value = sum(
        s * l for s, l, (lo, hi) in zip(scores, lengths, part.shots())
        if mask.selected[lo])
    want = _brute_force_best_value((scores * lengths).tolist(), lengths.tolist(), budget)
    assert chosen_value == pytest.approx(want, abs=1e-9)


def test_knapsack_tie_goes_to_earlier_shot():
    # identical shots, budget fits exactly one
    part = seg.ShotPartition(np.array([0, 5, 10]))
    scores = seg.ShotScores(np.array([0.5, 0.5]), np.array([5, 5]))
    mask = seg.select_summary(scores, part, budget_fraction=0.5)
    assert mask.selected[:5].all()
    assert not mask.selected[5:].any()


def test_knapsack_empty_when_nothing_fits():
    part = seg.ShotPartition(np.array([0, 10]))
    scores = seg.ShotScores(np.array([0.9]), np.array([10]))
    mask = seg.select_summary(scores, part, budget_fraction=0.15)
    assert mask.frame_count == 0


def test_knapsack_full_budget_takes_everything():
    part = seg.ShotPartition(np.array([0, 3, 8]))
    scores = seg.ShotScores(np.array([0.2, 0.9]), np.array([3, 5]))
    mask = seg.select_summary(scores, part, budget_fraction=1.0)
    assert mask.frame_count == 8


def test_select_summary_guards():
    part = seg.ShotPartition(np.array([0, 4, 8]))
    scores = seg.ShotScores(np.array([0.1, 0.2]), np.array([4, 4]))
    with pytest.raises(ConfigError):
        seg.select_summary(scores, part, budget_fraction=0.0)
    with pytest.raises(ShapeError):
        seg.select_summary(seg.ShotScores(np.array([0.1]), np.array([8])), part)


def test_shot_scores_validation():
    with pytest.raises(ShapeError):
        seg.ShotScores(np.array([0.1, 0.2]), np.array([4]))
    with pytest.raises(ValueError):
        seg.ShotScores(np.array([0.1]), np.array([0]))
    with pytest.raises(NonFiniteError):
        seg.ShotScores(np.array([np.inf]), np.array([3]))
