import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisonforge.errors import DegenerateStatisticsError, ValidationError
from poisonforge.selection import (
    SelectionReport,
    SelectionStrategy,
    class_weights,
    compose_with_stealth,
    rank_order,
    score_diversity,
    score_forget,
    score_res,
    score_scalar,
    select,
)
from poisonforge.training_log import MisclassStats, PredictionLog


def make_stats(events, target_label=0):
    events = np.asarray(events, dtype=np.int64)
    return MisclassStats(
        target_label=target_label,
        num_classes=events.shape[1],
        indices=np.arange(len(events)),
        events=events,
        forget_counts=events.sum(axis=1),
    )


def random_stats(rng, n, k, target_label=0, max_count=8):
    events = rng.integers(0, max_count, size=(n, k))
    events[:, target_label] = 0
    return make_stats(events, target_label)


# --- score_forget ----------------------------------------------------------

def test_forget_scores_and_ranks():
    stats = make_stats([[0, 3, 0], [0, 0, 0], [0, 2, 3]])
    scores = score_forget(stats)
    assert scores.tolist() == [3.0, 0.0, 5.0]
    order = rank_order(scores, stats.indices)
    assert order.tolist() == [2, 0, 1]  # ranks: 2nd, 3rd, 1st


def test_forget_all_zero_falls_back_to_index_order():
    stats = make_stats([[0, 0], [0, 0], [0, 0]])
    scores = score_forget(stats)
    order = rank_order(scores, stats.indices)
    assert order.tolist() == [0, 1, 2]


def test_forget_matches_sort_oracle():
    rng = np.random.default_rng(42)
    stats = random_stats(rng, 200, 10)
    scores = score_forget(stats)
    order = rank_order(scores, stats.indices)
    oracle = sorted(range(200), key=lambda i: (-stats.forget_counts[i], i))
    assert order.tolist() == oracle


# --- score_diversity --------------------------------------------------------

def test_diversity_balanced_row_is_maximal():
    stats = make_stats([[0, 2, 2, 2], [0, 6, 0, 0], [0, 1, 2, 3]])
    scores = score_diversity(stats)
    assert scores[0] == 0.0
    assert scores[0] > scores[2] > scores[1]
    assert scores[1] == pytest.approx(-math.sqrt(24), abs=1e-12)


def test_diversity_greedy_equals_exhaustive_subset_objective():
    # exhaustive argmin over all size-2 subsets of 6 samples equals greedy top-2
    rng = np.random.default_rng(3)
    stats = random_stats(rng, 6, 5)
    scores = score_diversity(stats)
    deviations = -scores
    best = min(
        itertools.combinations(range(6), 2),
        key=lambda pair: sum(deviations[list(pair)]),
    )
    greedy = rank_order(scores, stats.indices)[:2]
    assert sum(deviations[list(best)]) == pytest.approx(
        sum(deviations[greedy]), abs=1e-12
    )


def test_diversity_global_mu_mode_differs():
    stats = make_stats([[0, 9, 9], [0, 0, 0]])
    per_sample = score_diversity(stats, mu_mode="per-sample")
    global_mu = score_diversity(stats, mu_mode="global")
    assert per_sample.tolist() == [0.0, 0.0]
    assert global_mu[0] != 0.0


# --- class_weights ----------------------------------------------------------

def test_class_weights_log_hand_trace():
    # K=3, aggregate Num=[3,5] over classes 1 and 2
    stats = make_stats([[0, 3, 1], [0, 0, 4]])
    w = class_weights(stats, "log")
    total = math.log(4) + math.log(6)
    assert w.weights[1] == pytest.approx(1 - math.log(4) / total, abs=1e-12)
    assert w.weights[2] == pytest.approx(1 - math.log(6) / total, abs=1e-12)
    assert w.weights[1] == pytest.approx(0.5638, abs=1e-4)
    assert w.weights[2] == pytest.approx(0.4362, abs=1e-4)


def test_class_weights_symmetry():
    stats = make_stats([[0, 4, 4]])
    for fn in ("log", "x", "x2", "exp"):
        w = class_weights(stats, fn)
        assert w.weights[1] == pytest.approx(0.5, abs=1e-12)
        assert w.weights[2] == pytest.approx(0.5, abs=1e-12)


def test_class_weights_exp_hand_trace():
    stats = make_stats([[0, 0, 4]])
    w = class_weights(stats, "exp")
    total = 1.0 + math.exp(-4)
    assert w.weights[1] == pytest.approx(1 - 1.0 / total, abs=1e-12)
    assert w.weights[1] == pytest.approx(0.0180, abs=1e-4)
    assert w.weights[2] == pytest.approx(0.9820, abs=1e-4)


def test_class_weights_degenerate_statistics():
    stats = make_stats([[0, 0, 0]])
    for fn in ("log", "x", "x2"):
        with pytest.raises(DegenerateStatisticsError, match="degenerate"):
            class_weights(stats, fn)
    # exp has a nonzero denominator even with all-zero counts
    w = class_weights(stats, "exp")
    assert np.isfinite(w.weights).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_class_weights_complements_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 12))
    stats = random_stats(rng, int(rng.integers(1, 50)), k)
    for fn in ("log", "x", "x2", "exp"):
        try:
            w = class_weights(stats, fn)
        except DegenerateStatisticsError:
            assert stats.events.sum() == 0
            continue
        non_target = [m for m in range(k) if m != 0]
        assert sum(1 - w.weights[m] for m in non_target) == pytest.approx(1.0, abs=1e-9)
        assert ((w.weights >= 0) & (w.weights <= 1)).all()


def test_res_ranking_invariant_to_log_base():
    rng = np.random.default_rng(9)
    stats = random_stats(rng, 100, 10)
    w = class_weights(stats, "log")
    scores = score_res(stats, w)
    # log2 transcription
    num = stats.events.sum(axis=0).astype(float)
    cols = [m for m in range(10) if m != 0]
    t = np.array([math.log2(1 + num[m]) for m in cols])
    weights2 = np.zeros(10)
    weights2[cols] = 1 - t / t.sum()
    scores2 = stats.events @ weights2
    assert rank_order(scores, stats.indices).tolist() == rank_order(
        scores2, stats.indices
    ).tolist()
    # the ratio of logs is base-independent, so even the weights agree
    assert np.allclose(w.weights, weights2)


# --- score_res ---------------------------------------------------------------

def test_res_log_worked_example():
    stats = make_stats([[0, 3, 1], [0, 0, 4]])
    w = class_weights(stats, "log")
    scores = score_res(stats, w)
    assert scores[0] == pytest.approx(2.1277, abs=1e-3)
    assert scores[1] == pytest.approx(1.7449, abs=1e-3)
    assert scores[0] > scores[1]


def test_res_zero_row_scores_zero():
    stats = make_stats([[0, 0, 0], [0, 2, 1]])
    w = class_weights(stats, "log")
    assert score_res(stats, w)[0] == 0.0


def test_res_with_uniform_weights_matches_forget():
    stats = make_stats([[0, 3, 1], [0, 0, 4], [0, 1, 1]])
    from poisonforge.selection import ClassWeights

    uniform = ClassWeights(
        target_label=0, weights=np.array([0.0, 0.5, 0.5]), negative_function="x"
    )
    scores = score_res(stats, uniform)
    assert np.allclose(scores, 0.5 * stats.forget_counts)
    assert rank_order(scores, stats.indices).tolist() == rank_order(
        score_forget(stats), stats.indices
    ).tolist()


def test_res_scores_non_negative():
    rng = np.random.default_rng(17)
    stats = random_stats(rng, 300, 10)
    for fn in ("log", "x", "x2", "exp"):
        scores = score_res(stats, class_weights(stats, fn))
        assert (scores >= 0).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_res_monotonic_in_events(seed, bump):
    rng = np.random.default_rng(seed)
    stats = random_stats(rng, 10, 6)
    w = class_weights(stats, "log")
    i = int(rng.integers(0, 10))
    m = int(rng.integers(1, 6))
    before = score_res(stats, w)[i]
    bumped = stats.events.copy()
    bumped[i, m] += bump
    after = score_res(make_stats(bumped), w)[i]
    if w.weights[m] > 0:
        assert after > before


# --- score_scalar ------------------------------------------------------------

def test_scalar_selection():
    log = PredictionLog(
        true_labels=np.array([0, 0, 0]),
        predictions=np.zeros((3, 2), dtype=np.int64),
        losses=np.array([[0.0, 0.1], [0.0, 2.3], [0.0, 0.7]]),
    )
    scores = score_scalar(log, "loss", np.arange(3))
    strategy = SelectionStrategy(metric="loss", target_label=0, count=1)
    report = select(strategy, scores, np.arange(3))
    assert report.chosen == [1]


def test_scalar_missing_field_errors():
    log = PredictionLog(
        true_labels=np.array([0]), predictions=np.zeros((1, 1), dtype=np.int64)
    )
    with pytest.raises(ValidationError, match="no loss column"):
        score_scalar(log, "loss", np.arange(1))


def test_scalar_ties_break_by_index():
    scores = np.array([1.0, 1.0, 1.0])
    strategy = SelectionStrategy(metric="loss", target_label=0, count=2)
    report = select(strategy, scores, np.array([4, 7, 9]))
    assert report.chosen == [4, 7]


def test_scalar_matches_sort_oracle():
    rng = np.random.default_rng(100)
    scores = rng.random(500)
    indices = np.arange(500)
    for k in (0, 1, 17, 499, 500):
        strategy = SelectionStrategy(metric="grad", target_label=0, count=k)
        report = select(strategy, scores, indices)
        oracle = sorted(range(500), key=lambda i: (-scores[i], i))[:k]
        assert report.chosen == oracle


# --- select ------------------------------------------------------------------

def test_select_count_equals_pool_takes_all():
    scores = np.array([5.0, 1.0, 3.0])
    strategy = SelectionStrategy(metric="forget", target_label=0, count=3)
    report = select(strategy, scores, np.array([10, 20, 30]))
    assert sorted(report.chosen) == [10, 20, 30]


def test_select_zero_is_empty():
    strategy = SelectionStrategy(metric="forget", target_label=0, count=0)
    report = select(strategy, np.array([1.0]), np.array([0]))
    assert report.chosen == []


def test_select_count_exceeding_pool_errors():
    strategy = SelectionStrategy(metric="forget", target_label=0, count=4)
    with pytest.raises(ValidationError, match="exceeds"):
        select(strategy, np.array([1.0, 2.0]), np.array([0, 1]))


def test_select_random_is_seed_reproducible():
    strategy = SelectionStrategy(metric="random", target_label=0, count=5, seed=7)
    pool = np.arange(40)
    a = select(strategy, None, pool)
    b = select(strategy, None, pool)
    assert a.chosen == b.chosen
    assert a.to_json() == b.to_json()
    other = select(
        SelectionStrategy(metric="random", target_label=0, count=5, seed=8), None, pool
    )
    assert set(other.chosen) != set(a.chosen) or other.chosen != a.chosen


def test_select_is_byte_deterministic():
    rng = np.random.default_rng(2)
    scores = rng.random(64)
    pool = np.arange(64)
    strategy = SelectionStrategy(metric="res-log", target_label=0, rate=0.25)
    a = select(strategy, scores, pool).to_json()
    b = select(strategy, scores, pool).to_json()
    assert a == b


def test_report_json_round_trip():
    strategy = SelectionStrategy(metric="forget", target_label=1, count=2)
    report = select(strategy, np.array([3.0, 1.0, 2.0]), np.array([5, 6, 7]))
    back = SelectionReport.from_json(report.to_json())
    assert back.chosen == report.chosen
    assert back.metric == report.metric
    assert back.target_label == report.target_label


def test_strategy_validation():
    with pytest.raises(ValidationError):
        SelectionStrategy(metric="forget", target_label=0)  # neither count nor rate
    with pytest.raises(ValidationError):
        SelectionStrategy(metric="forget", target_label=0, count=1, rate=0.5)
    with pytest.raises(ValidationError):
        SelectionStrategy(metric="nope", target_label=0, count=1)
    with pytest.raises(ValidationError):
        SelectionStrategy(metric="forget", target_label=0, rate=1.5)


# --- compose_with_stealth ----------------------------------------------------

def compose_oracle(chosen, stealth, alpha_s):
    ordered = sorted(chosen, key=lambda i: (stealth[i], i))
    return ordered[: math.floor(alpha_s * len(chosen))]


def make_report(chosen):
    return SelectionReport(
        metric="forget",
        target_label=0,
        indices=list(chosen),
        scores=[0.0] * len(chosen),
        ranks=list(range(1, len(chosen) + 1)),
        chosen=list(chosen),
    )


def test_compose_identity_at_alpha_one():
    report = make_report([3, 1, 4, 1 + 4])
    stealth = {3: 0.4, 1: 0.1, 4: 0.3, 5: 0.2}
    out = compose_with_stealth(report, stealth, 1.0)
    assert sorted(out.chosen) == sorted(report.chosen)


def test_compose_hand_example():
    # GMSD [0.4, 0.1, 0.3, 0.2] over four candidates, keep half
    report = make_report([0, 1, 2, 3])
    stealth = {0: 0.4, 1: 0.1, 2: 0.3, 3: 0.2}
    out = compose_with_stealth(report, stealth, 0.5)
    assert out.chosen == [1, 3]  # the 0.1 and 0.2 candidates, ascending


def test_compose_rounds_to_zero_errors():
    report = make_report([0, 1])
    with pytest.raises(ValidationError, match="zero"):
        compose_with_stealth(report, {0: 0.1, 1: 0.2}, 0.2)


def test_compose_missing_score_errors():
    report = make_report([0, 1])
    with pytest.raises(ValidationError, match="missing"):
        compose_with_stealth(report, {0: 0.1}, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compose_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    chosen = rng.choice(1000, size=n, replace=False).tolist()
    stealth = {i: float(rng.random()) for i in chosen}
    alpha_s = float(rng.uniform(1.0 / n, 1.0))
    out = compose_with_stealth(make_report(chosen), stealth, alpha_s)
    assert out.chosen == compose_oracle(chosen, stealth, alpha_s)
    assert set(out.chosen) <= set(chosen)
    assert len(out.chosen) == math.floor(alpha_s * n)
