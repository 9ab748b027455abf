"""Hardness-based poison-sample selection and the stealth-composition step.

Scoring metrics over target-class samples: raw forgetting counts, category
diversity (how evenly a sample's misclassification events spread over the
non-target classes), ingested loss / gradient-norm scalars, and the Res
family, which weights each sample's per-class event counts by class
weights derived from a negative function of the aggregate counts. Four
negative-function rates are supported: log, linear, square, exp.

Selection is always deterministic: descending score with ties broken by
ascending dataset index, and seeded draws for the random baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStatisticsError, ValidationError
from .training_log import MisclassStats, PredictionLog

METRICS = (
    "random",
    "loss",
    "grad",
    "forget",
    "diversity",
    "res-log",
    "res-x",
    "res-x2",
    "res-exp",
)

#: negative-function tag used by each res metric
RES_FUNCTIONS = {
    "res-log": "log",
    "res-x": "x",
    "res-x2": "x2",
    "res-exp": "exp",
}

NEGATIVE_FUNCTIONS = ("log", "x", "x2", "exp")


@dataclass(frozen=True)
class SelectionStrategy:
    """What to rank by and how many samples to keep.

    Exactly one of ``count`` / ``rate`` must be set; ``rate`` is a fraction
    of the target subset (0, 1]. ``seed`` drives the random baseline only.
    """

    metric: str
    target_label: int
    count: int | None = None
    rate: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValidationError(f"unknown metric {self.metric!r}")
        if (self.count is None) == (self.rate is None):
            raise ValidationError("exactly one of count/rate must be set")
        if self.count is not None and self.count < 0:
            raise ValidationError("count must be >= 0")
        # rate 0 is allowed as an explicit no-poison run
        if self.rate is not None and not 0.0 <= self.rate <= 1.0:
            raise ValidationError("rate must be in [0, 1]")

    def resolve_count(self, subset_size: int) -> int:
        if self.count is not None:
            return self.count
        return math.floor(self.rate * subset_size)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class weights from a negative function of aggregate event counts.

    ``weights[m]`` is in [0, 1] for each non-target class m; the target
    column is fixed at 0 so that ``events @ weights`` scores samples
    directly. The complements 1 - weights[m] sum to 1 over the weighted
    class set.
    """

    target_label: int
    weights: np.ndarray
    negative_function: str


@dataclass(frozen=True)
class SelectionReport:
    """Per-sample scores, ranks, and the chosen poison indices."""

    metric: str
    target_label: int
    indices: list[int]
    scores: list[float] | None
    ranks: list[int] | None
    chosen: list[int]
    count: int | None = None
    rate: float | None = None
    seed: int | None = None
    composed: dict | None = field(default=None)

    def to_json(self) -> str:
        payload = {
            "metric": self.metric,
            "target_label": self.target_label,
            "count": self.count,
            "rate": self.rate,
            "seed": self.seed,
            "candidates": None
            if self.scores is None
            else [
                {"index": int(i), "score": float(s), "rank": int(r)}
                for i, s, r in zip(self.indices, self.scores, self.ranks)
            ],
            "chosen": [int(i) for i in self.chosen],
            "composed": self.composed,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "SelectionReport":
        payload = json.loads(text)
        candidates = payload.get("candidates")
        if candidates is None:
            indices, scores, ranks = payload.get("chosen", []), None, None
        else:
            indices = [c["index"] for c in candidates]
            scores = [c["score"] for c in candidates]
            ranks = [c["rank"] for c in candidates]
        return SelectionReport(
            metric=payload["metric"],
            target_label=payload["target_label"],
            indices=indices,
            scores=scores,
            ranks=ranks,
            chosen=payload["chosen"],
            count=payload.get("count"),
            rate=payload.get("rate"),
            seed=payload.get("seed"),
            composed=payload.get("composed"),
        )


def score_forget(stats: MisclassStats) -> np.ndarray:
    """Raw forgetting-event counts, one per target sample."""
    if len(stats) == 0:
        raise ValidationError("empty statistics")
    return stats.forget_counts.astype(np.float64)


def score_diversity(stats: MisclassStats, mu_mode: str = "per-sample") -> np.ndarray:
    """Balance of each sample's events over non-target classes.

    Score is the negated l2 deviation of the sample's non-target event
    counts from their mean, so perfectly balanced rows score highest. The
    global mode replaces the per-sample mean with one shared over all
    samples, kept behind a flag for comparison.
    """
    if len(stats) == 0:
        raise ValidationError("empty statistics")
    if stats.num_classes < 2:
        raise ValidationError("diversity needs at least two classes")
    if mu_mode not in ("per-sample", "global"):
        raise ValidationError(f"unknown mu mode {mu_mode!r}")
    cols = [m for m in range(stats.num_classes) if m != stats.target_label]
    rows = stats.events[:, cols].astype(np.float64)
    if mu_mode == "per-sample":
        mu = rows.mean(axis=1, keepdims=True)
    else:
        mu = rows.mean()
    return -np.sqrt(((rows - mu) ** 2).sum(axis=1))


def class_weights(stats: MisclassStats, negative_function: str) -> ClassWeights:
    """Aggregate event counts per class and turn them into weights.

    Num[m] sums every target sample's events into class m; the weight for
    class m is one minus that class's share after the negative function is
    applied: log -> log(1+Num)/Sum, x -> Num/Sum, x2 -> Num^2/Sum,
    exp -> e^(-Num)/Sum, each Sum normalizing over the non-target classes.
    """
    if negative_function not in NEGATIVE_FUNCTIONS:
        raise ValidationError(f"unknown negative function {negative_function!r}")
    if len(stats) == 0:
        raise ValidationError("empty statistics")
    num = stats.events.sum(axis=0).astype(np.float64)
    if stats.target_label >= 0:
        cols = np.array(
            [m for m in range(stats.num_classes) if m != stats.target_label]
        )
    else:
        cols = np.arange(stats.num_classes)
    vals = num[cols]
    if negative_function == "log":
        transformed = np.log1p(vals)
    elif negative_function == "x":
        transformed = vals
    elif negative_function == "x2":
        transformed = vals * vals
    else:
        # shift by the min count before exponentiating; the share
        # e^(-Num)/Sum is shift-invariant and this avoids underflow
        transformed = np.exp(-(vals - vals.min()))
    total = transformed.sum()
    if total == 0.0:
        raise DegenerateStatisticsError(
            "degenerate statistics: no misclassification events for any class"
        )
    weights = np.zeros(stats.num_classes)
    weights[cols] = 1.0 - transformed / total
    return ClassWeights(
        target_label=stats.target_label,
        weights=weights,
        negative_function=negative_function,
    )


def score_res(stats: MisclassStats, weights: ClassWeights) -> np.ndarray:
    """Weighted event counts: sum over classes of Cls[m] * events[i, m]."""
    if weights.weights.shape != (stats.num_classes,):
        raise ValidationError("class weights do not match the statistics class set")
    if weights.target_label != stats.target_label:
        raise ValidationError("class weights were built for a different target label")
    return stats.events.astype(np.float64) @ weights.weights


def score_scalar(
    log: PredictionLog, field_name: str, indices: np.ndarray
) -> np.ndarray:
    """Final-epoch loss or gradient-norm scalars for the given samples."""
    if field_name == "loss":
        values = log.final_loss
    elif field_name == "grad_norm":
        values = log.final_grad_norm
    else:
        raise ValidationError(f"unknown scalar field {field_name!r}")
    if values is None:
        raise ValidationError(
            f"log has no {field_name} column; re-run pretraining with it enabled"
        )
    return values[indices].astype(np.float64)


def rank_order(scores: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Positions sorted by descending score, ties by ascending index."""
    order = np.lexsort((indices, -scores))
    return order


def select(
    strategy: SelectionStrategy,
    scores: np.ndarray | None,
    target_indices: np.ndarray,
) -> SelectionReport:
    """Pick the top-k samples by score (or a seeded random draw).

    ``target_indices`` are dataset indices of the candidate pool, aligned
    with ``scores``. Metric strategies keep the k best scores (descending,
    index tie-break); the random strategy draws k without replacement from
    the seed and reports the chosen set in ascending index order.
    """
    target_indices = np.asarray(target_indices, dtype=np.int64)
    k = strategy.resolve_count(len(target_indices))
    if k > len(target_indices):
        raise ValidationError(
            f"poison count {k} exceeds target subset size {len(target_indices)}"
        )
    if strategy.metric == "random":
        rng = np.random.default_rng(strategy.seed if strategy.seed is not None else 0)
        chosen = rng.choice(target_indices, size=k, replace=False)
        return SelectionReport(
            metric=strategy.metric,
            target_label=strategy.target_label,
            indices=target_indices.tolist(),
            scores=None,
            ranks=None,
            chosen=sorted(int(i) for i in chosen),
            count=strategy.count,
            rate=strategy.rate,
            seed=strategy.seed,
        )
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != target_indices.shape:
        raise ValidationError("scores and target indices must align")
    order = rank_order(scores, target_indices)
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    chosen = target_indices[order[:k]]
    return SelectionReport(
        metric=strategy.metric,
        target_label=strategy.target_label,
        indices=target_indices.tolist(),
        scores=[float(s) for s in scores],
        ranks=[int(r) for r in ranks],
        chosen=[int(i) for i in chosen],
        count=strategy.count,
        rate=strategy.rate,
        seed=strategy.seed,
    )


def compute_scores(
    metric: str,
    stats: MisclassStats | None,
    log: PredictionLog | None = None,
    mu_mode: str = "per-sample",
) -> np.ndarray:
    """Dispatch a metric name to its scoring routine."""
    if metric == "forget":
        return score_forget(stats)
    if metric == "diversity":
        return score_diversity(stats, mu_mode=mu_mode)
    if metric in RES_FUNCTIONS:
        weights = class_weights(stats, RES_FUNCTIONS[metric])
        return score_res(stats, weights)
    if metric in ("loss", "grad"):
        field_name = "loss" if metric == "loss" else "grad_norm"
        if log is None:
            raise ValidationError(f"metric {metric!r} needs the prediction log")
        return score_scalar(log, field_name, stats.indices)
    raise ValidationError(f"metric {metric!r} has no scores")


def compose_with_stealth(
    report: SelectionReport,
    stealth_scores: dict[int, float],
    alpha_s: float,
) -> SelectionReport:
    """Keep the stealthiest fraction of an existing selection.

    Sorts the chosen indices by ascending stealth score (ties by index) and
    keeps the first floor(alpha_s * n), preserving that order.
    """
    if not 0.0 < alpha_s <= 1.0:
        raise ValidationError("alpha_s must be in (0, 1]")
    missing = [i for i in report.chosen if i not in stealth_scores]
    if missing:
        raise ValidationError(
            f"stealth score missing for indices {missing[:5]}"
            + ("..." if len(missing) > 5 else "")
        )
    keep = math.floor(alpha_s * len(report.chosen))
    if keep == 0:
        raise ValidationError(
            f"alpha_s {alpha_s} keeps zero of {len(report.chosen)} candidates"
        )
    ordered = sorted(report.chosen, key=lambda i: (stealth_scores[i], i))
    kept = ordered[:keep]
    return SelectionReport(
        metric=report.metric,
        target_label=report.target_label,
        indices=list(kept),
        scores=[float(stealth_scores[i]) for i in kept],
        ranks=list(range(1, keep + 1)),
        chosen=list(kept),
        count=report.count,
        rate=report.rate,
        seed=report.seed,
        composed={"alpha_s": alpha_s, "from_count": len(report.chosen)},
    )
