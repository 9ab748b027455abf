"""Per-epoch prediction logs and the training-dynamics statistics built on them.

The log is a CSV produced by an external pretraining run, one row per
(epoch, sample) cell over a dense grid:

    epoch,sample_index,true_label,predicted_label[,loss[,grad_norm]]

Epochs are 1-based, sample indices 0-based, UTF-8, LF line endings. From a
parsed log we derive, per target-class sample, the forgetting-event count
and the per-class misclassification-event matrix that the selection
metrics consume.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_BASE_COLUMNS = ["epoch", "sample_index", "true_label", "predicted_label"]
_OPTIONAL_COLUMNS = ["loss", "grad_norm"]


@dataclass(frozen=True)
class PredictionLog:
    """Dense per-epoch predictions for N samples over E epochs.

    ``losses`` and ``grad_norms`` are (N, E) matrices when the log carries
    those columns, else None. The per-sample scalars used by loss/gradient
    selection are the final-epoch values.
    """

    true_labels: np.ndarray
    predictions: np.ndarray
    losses: np.ndarray | None = None
    grad_norms: np.ndarray | None = None

    @property
    def num_samples(self) -> int:
        return self.predictions.shape[0]

    @property
    def num_epochs(self) -> int:
        return self.predictions.shape[1]

    @property
    def final_loss(self) -> np.ndarray | None:
        return None if self.losses is None else self.losses[:, -1]

    @property
    def final_grad_norm(self) -> np.ndarray | None:
        return None if self.grad_norms is None else self.grad_norms[:, -1]


@dataclass(frozen=True)
class MisclassStats:
    """Forgetting counts and misclassification-event matrix for target samples.

    ``indices`` are the sample indices (ascending) whose true label is the
    target label; ``events[i, m]`` counts this sample's events into class m,
    with the target-label column pinned at zero. ``forget_counts`` is the
    row sum of ``events``.
    """

    target_label: int
    num_classes: int
    indices: np.ndarray
    events: np.ndarray
    forget_counts: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def parse_log(path) -> PredictionLog:
    """Parse and validate a prediction-log CSV.

    Rejects ragged grids (missing cells), duplicate (epoch, sample) rows,
    and non-integer labels.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty log file") from None
        header = [h.strip() for h in header]
        if header[: len(_BASE_COLUMNS)] != _BASE_COLUMNS:
            raise ValidationError(
                f"bad log header {header!r}; expected it to start with {_BASE_COLUMNS}"
            )
        extra = header[len(_BASE_COLUMNS) :]
        if extra not in ([], ["loss"], ["loss", "grad_norm"]):
            raise ValidationError(f"unsupported optional columns {extra!r}")
        has_loss = "loss" in extra
        has_grad = "grad_norm" in extra

        cells: dict[tuple[int, int], tuple] = {}
        epochs: set[int] = set()
        samples: set[int] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"line {lineno}: expected {len(header)} fields")
            try:
                epoch = int(row[0])
                sample = int(row[1])
                true_label = int(row[2])
                predicted = int(row[3])
            except ValueError:
                raise ValidationError(f"line {lineno}: non-integer field") from None
            loss = float(row[4]) if has_loss else None
            grad = float(row[5]) if has_grad else None
            if epoch < 1:
                raise ValidationError(f"line {lineno}: epochs are 1-based")
            if sample < 0 or true_label < 0 or predicted < 0:
                raise ValidationError(f"line {lineno}: negative index or label")
            key = (epoch, sample)
            if key in cells:
                raise ValidationError(f"duplicate row for epoch {epoch}, sample {sample}")
            cells[key] = (true_label, predicted, loss, grad)
            epochs.add(epoch)
            samples.add(sample)

    if not cells:
        raise ValidationError("log contains no data rows")
    num_epochs = max(epochs)
    num_samples = max(samples) + 1
    if epochs != set(range(1, num_epochs + 1)) or samples != set(range(num_samples)):
        raise ValidationError("sparse log: epoch or sample indices are not contiguous")
    if len(cells) != num_epochs * num_samples:
        raise ValidationError("sparse log: missing (epoch, sample) cells")

    true_labels = np.zeros(num_samples, dtype=np.int64)
    predictions = np.zeros((num_samples, num_epochs), dtype=np.int64)
    losses = np.zeros((num_samples, num_epochs)) if has_loss else None
    grads = np.zeros((num_samples, num_epochs)) if has_grad else None
    seen_label: dict[int, int] = {}
    for (epoch, sample), (true_label, predicted, loss, grad) in cells.items():
        if sample in seen_label and seen_label[sample] != true_label:
            raise ValidationError(f"sample {sample}: inconsistent true_label across epochs")
        seen_label[sample] = true_label
        true_labels[sample] = true_label
        predictions[sample, epoch - 1] = predicted
        if has_loss:
            losses[sample, epoch - 1] = loss
        if has_grad:
            grads[sample, epoch - 1] = grad
    return PredictionLog(
        true_labels=true_labels,
        predictions=predictions,
        losses=losses,
        grad_norms=grads,
    )


def write_log(log: PredictionLog, path) -> None:
    """Serialize a log to CSV in canonical (epoch-major) row order."""
    columns = list(_BASE_COLUMNS)
    if log.losses is not None:
        columns.append("loss")
        if log.grad_norms is not None:
            columns.append("grad_norm")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for epoch in range(1, log.num_epochs + 1):
            for sample in range(log.num_samples):
                row = [
                    str(epoch),
                    str(sample),
                    str(int(log.true_labels[sample])),
                    str(int(log.predictions[sample, epoch - 1])),
                ]
                if log.losses is not None:
                    row.append(repr(float(log.losses[sample, epoch - 1])))
                    if log.grad_norms is not None:
                        row.append(repr(float(log.grad_norms[sample, epoch - 1])))
                fh.write(",".join(row) + "\n")


def _epoch_window(log: PredictionLog, epoch_range: tuple[int, int] | None) -> np.ndarray:
    if epoch_range is None:
        return log.predictions
    lo, hi = epoch_range
    if not (1 <= lo <= hi <= log.num_epochs):
        raise ValidationError(
            f"epoch range {lo}..{hi} outside 1..{log.num_epochs}"
        )
    return log.predictions[:, lo - 1 : hi]


def compute_misclass_stats(
    log: PredictionLog,
    target_label: int,
    num_classes: int,
    events_mode: str = "transitions",
    epoch_range: tuple[int, int] | None = None,
) -> MisclassStats:
    """Forgetting events and per-class event counts over the target subset.

    Under the default ``transitions`` mode an event is counted at epoch e
    (e >= 2) iff the sample was predicted as the target label at e-1 and as
    some other class m at e; the event increments the class-m cell. The
    ``epochs`` mode instead counts every misclassified epoch, provided for
    sensitivity studies. Epoch 1 can never host a transition event.
    """
    if events_mode not in ("transitions", "epochs"):
        raise ValidationError(f"unknown events mode {events_mode!r}")
    if not 0 <= target_label < num_classes:
        raise ValidationError(
            f"target label {target_label} out of range for {num_classes} classes"
        )
    if log.predictions.size and log.predictions.max() >= num_classes:
        raise ValidationError("predicted label out of range for class count")
    preds = _epoch_window(log, epoch_range)
    indices = np.flatnonzero(log.true_labels == target_label)
    if len(indices) == 0:
        raise ValidationError(f"no samples with target label {target_label} in log")
    sub = preds[indices]
    events = np.zeros((len(indices), num_classes), dtype=np.int64)
    if events_mode == "transitions":
        if sub.shape[1] >= 2:
            was_target = sub[:, :-1] == target_label
            now = sub[:, 1:]
            forgotten = was_target & (now != target_label)
            rows, cols = np.nonzero(forgotten)
            np.add.at(events, (rows, now[rows, cols]), 1)
    else:
        rows, cols = np.nonzero(sub != target_label)
        np.add.at(events, (rows, sub[rows, cols]), 1)
    events[:, target_label] = 0
    return MisclassStats(
        target_label=target_label,
        num_classes=num_classes,
        indices=indices,
        events=events,
        forget_counts=events.sum(axis=1),
    )


def compute_ownlabel_stats(
    log: PredictionLog,
    num_classes: int,
    events_mode: str = "transitions",
    epoch_range: tuple[int, int] | None = None,
) -> MisclassStats:
    """All-classes variant used by ``--scope all`` (poisoned-label replication).

    Every sample is treated with its own true label in place of the target
    label; the returned ``target_label`` is -1 to mark the mode.
    """
    if events_mode not in ("transitions", "epochs"):
        raise ValidationError(f"unknown events mode {events_mode!r}")
    if log.predictions.size and log.predictions.max() >= num_classes:
        raise ValidationError("predicted label out of range for class count")
    if log.true_labels.size and log.true_labels.max() >= num_classes:
        raise ValidationError("true label out of range for class count")
    preds = _epoch_window(log, epoch_range)
    n = log.num_samples
    events = np.zeros((n, num_classes), dtype=np.int64)
    own = log.true_labels[:, None]
    if events_mode == "transitions":
        if preds.shape[1] >= 2:
            was_own = preds[:, :-1] == own
            now = preds[:, 1:]
            forgotten = was_own & (now != own)
            rows, cols = np.nonzero(forgotten)
            np.add.at(events, (rows, now[rows, cols]), 1)
    else:
        rows, cols = np.nonzero(preds != own)
        np.add.at(events, (rows, preds[rows, cols]), 1)
    events[np.arange(n), log.true_labels] = 0
    return MisclassStats(
        target_label=-1,
        num_classes=num_classes,
        indices=np.arange(n),
        events=events,
        forget_counts=events.sum(axis=1),
    )
