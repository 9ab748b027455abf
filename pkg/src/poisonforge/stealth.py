"""Visual-insensitivity ranking of poisoning candidates.

Two full-reference scores are provided. Local patch triggers are ranked by
the mean squared error between the stamped patch content and what the
image already holds there: the closer the image region is to the trigger,
the less the eye has to notice. Global triggers are ranked by Gradient
Magnitude Similarity Deviation (GMSD): Prewitt gradient magnitudes of the
reference and distorted images are compared pointwise,

    GMS(i) = (2 m_r(i) m_d(i) + c) / (m_r^2(i) + m_d^2(i) + c),

and the final index is the standard deviation of the GMS map. Identical
images score exactly 0; the index never exceeds 0.5. Lower is stealthier
for both metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from . import triggers as _triggers

#: standard stability constant for [0,1]-normalized intensities (170/255^2)
DEFAULT_GMSD_C = 0.0026

#: Rec. 709 luminance weights, also used for the color-to-gray reduction
LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)


@dataclass(frozen=True)
class GmsdParams:
    """GMSD configuration: stability constant and color handling.

    ``color_mode`` is ``luminance`` (reduce RGB to luma before gradients)
    or ``per-channel`` (mean of the three single-channel indices), the
    latter for triggers that perturb channels unequally.
    """

    c: float = DEFAULT_GMSD_C
    color_mode: str = "luminance"

    def __post_init__(self) -> None:
        if self.c <= 0:
            raise ValidationError("GMSD stability constant must be positive")
        if self.color_mode not in ("luminance", "per-channel"):
            raise ValidationError(f"unknown color mode {self.color_mode!r}")


@dataclass(frozen=True)
class StealthRanking:
    """Candidate indices with stealth scores, ascending (stealthiest first)."""

    metric: str
    entries: list[tuple[int, float]]

    def scores_by_index(self) -> dict[int, float]:
        return {i: s for i, s in self.entries}


def prewitt_gradient_magnitude(channel: np.ndarray) -> np.ndarray:
    """Gradient-magnitude map of a single channel via 3x3 Prewitt kernels.

    Kernel entries are +-1/3; borders use replicate-edge padding so the
    output has the input's size. Input values are expected in [0, 1].
    """
    a = np.asarray(channel, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 3 or a.shape[1] < 3:
        raise ValidationError(f"need a 2-D matrix of at least 3x3, got shape {a.shape}")
    p = np.pad(a, 1, mode="edge")
    left = p[:-2, :-2] + p[1:-1, :-2] + p[2:, :-2]
    right = p[:-2, 2:] + p[1:-1, 2:] + p[2:, 2:]
    gx = (left - right) / 3.0
    top = p[:-2, :-2] + p[:-2, 1:-1] + p[:-2, 2:]
    bottom = p[2:, :-2] + p[2:, 1:-1] + p[2:, 2:]
    gy = (top - bottom) / 3.0
    return np.sqrt(gx * gx + gy * gy)


def _luminance(image: np.ndarray) -> np.ndarray:
    r, g, b = LUMA_WEIGHTS
    planes = image.astype(np.float64) / 255.0
    return r * planes[0] + g * planes[1] + b * planes[2]


def _gmsd_map(ref: np.ndarray, dist: np.ndarray, c: float) -> float:
    m_r = prewitt_gradient_magnitude(ref)
    m_d = prewitt_gradient_magnitude(dist)
    gms = (2.0 * m_r * m_d + c) / (m_r * m_r + m_d * m_d + c)
    gmsm = gms.mean()
    return float(np.sqrt(((gms - gmsm) ** 2).mean()))


def gmsd(
    reference: np.ndarray,
    distorted: np.ndarray,
    params: GmsdParams = GmsdParams(),
) -> float:
    """GMSD between two images (uint8, shape (3, H, W)); 0 means identical."""
    if reference.shape != distorted.shape:
        raise ValidationError(
            f"dimension mismatch: {reference.shape} vs {distorted.shape}"
        )
    if params.color_mode == "luminance":
        return _gmsd_map(_luminance(reference), _luminance(distorted), params.c)
    per_channel = [
        _gmsd_map(
            reference[ch].astype(np.float64) / 255.0,
            distorted[ch].astype(np.float64) / 255.0,
            params.c,
        )
        for ch in range(3)
    ]
    return float(np.mean(per_channel))


def mse_patch_score(
    image: np.ndarray,
    patch: np.ndarray,
    position: tuple[int, int] | None = None,
) -> tuple[float, tuple[int, int]]:
    """Mean squared error between a patch and the image content under it.

    With a fixed ``position`` (row, col of the patch's top-left corner) the
    score is the mean over patch pixels and channels of the squared
    difference on the 0-255 scale. With ``position=None`` every valid
    placement is scanned and the minimum is returned; ties resolve to the
    smallest row, then column. Returns ``(score, position)``.
    """
    patch = np.asarray(patch)
    if patch.ndim != 3 or patch.shape[0] != image.shape[0]:
        raise ValidationError("patch must have shape (3, h, w)")
    ph, pw = patch.shape[1], patch.shape[2]
    h, w = image.shape[1], image.shape[2]
    if ph > h or pw > w:
        raise ValidationError(f"patch {ph}x{pw} larger than image {h}x{w}")
    img = image.astype(np.float64)
    pat = patch.astype(np.float64)
    if position is not None:
        row, col = position
        if not (0 <= row <= h - ph and 0 <= col <= w - pw):
            raise ValidationError(f"patch does not fit at position {position}")
        window = img[:, row : row + ph, col : col + pw]
        return float(((window - pat) ** 2).mean()), (row, col)
    best = None
    best_pos = None
    for row in range(h - ph + 1):
        for col in range(w - pw + 1):
            window = img[:, row : row + ph, col : col + pw]
            score = float(((window - pat) ** 2).mean())
            if best is None or score < best:
                best = score
                best_pos = (row, col)
    return best, best_pos


def default_metric_for(trigger) -> str:
    """MSE for local patch triggers, GMSD for global ones."""
    return "mse" if isinstance(trigger, _triggers.BadnetsSpec) else "gmsd"


def _score_one(image: np.ndarray, trigger, metric: str, params: GmsdParams) -> float:
    poisoned = _triggers.apply_trigger(image, trigger)
    if metric == "gmsd":
        return gmsd(image, poisoned, params)
    if isinstance(trigger, _triggers.BadnetsSpec):
        # restrict to the stamped patch so the score matches the patch model
        r, c = trigger.row, trigger.col
        window = slice(r, r + trigger.height), slice(c, c + trigger.width)
        orig = image[:, window[0], window[1]].astype(np.float64)
        stamped = poisoned[:, window[0], window[1]].astype(np.float64)
        return float(((orig - stamped) ** 2).mean())
    orig = image.astype(np.float64)
    return float(((orig - poisoned.astype(np.float64)) ** 2).mean())


def rank_stealth(
    images: Sequence[np.ndarray],
    trigger,
    metric: str | None = None,
    params: GmsdParams = GmsdParams(),
    indices: Sequence[int] | None = None,
) -> StealthRanking:
    """Score each candidate against its own poisoned version and sort.

    ``indices`` labels the candidates (defaults to 0..n-1). The ranking is
    ascending by score with ties broken by index, so the stealthiest
    candidates come first.
    """
    if metric is None:
        metric = default_metric_for(trigger)
    if metric not in ("mse", "gmsd"):
        raise ValidationError(f"unknown stealth metric {metric!r}")
    if indices is None:
        indices = list(range(len(images)))
    if len(indices) != len(images):
        raise ValidationError("indices and images must align")
    scored = [
        (int(i), _score_one(img, trigger, metric, params))
        for i, img in zip(indices, images)
    ]
    scored.sort(key=lambda e: (e[1], e[0]))
    return StealthRanking(metric=metric, entries=scored)
