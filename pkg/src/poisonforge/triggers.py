"""Trigger synthesis and dataset poisoning.

Three trigger families are supported, each with per-channel poisoning
intensity:

* Badnets: a small patch stamped at a fixed position; each channel gets
  one of the patterns {0: black/white checker, 1: all-black, 2: all-white,
  3: vanilla (channel untouched)}.
* Blended: per-channel alpha compositing of a same-size trigger image.
* MultiBpp: per-channel color quantization onto an N-level lattice, with
  optional Floyd-Steinberg error-diffusion dithering.

All application functions are pure: they return new images and never touch
labels. ``poison_dataset`` enforces the clean-label contract (only samples
already carrying the target label may be poisoned).
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dataset_io import LabeledDataset, serialize_dataset, validate_image
from .errors import ValidationError

PATTERN_CHECKER = 0
PATTERN_BLACK = 1
PATTERN_WHITE = 2
PATTERN_VANILLA = 3

#: Floyd-Steinberg shares for (right, down-right, down, down-left)
DEFAULT_DIFFUSION = (7 / 16, 1 / 16, 5 / 16, 3 / 16)


def _round_half_away(v):
    """Round half away from zero, elementwise."""
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


@dataclass(frozen=True)
class BadnetsSpec:
    """Patch trigger: size, top-left position, per-channel patterns."""

    height: int
    width: int
    row: int
    col: int
    patterns: tuple[int, int, int]

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValidationError("patch size must be >= 1")
        if self.row < 0 or self.col < 0:
            raise ValidationError("patch position must be non-negative")
        if len(self.patterns) != 3 or any(p not in (0, 1, 2, 3) for p in self.patterns):
            raise ValidationError("patterns must be three values in {0,1,2,3}")


@dataclass(frozen=True)
class BlendedSpec:
    """Global blend trigger: same-size trigger image and per-channel alphas."""

    trigger_image: np.ndarray
    alphas: tuple[float, float, float]
    procedural: bool = False

    def __post_init__(self) -> None:
        validate_image(self.trigger_image)
        if len(self.alphas) != 3 or any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ValidationError("alphas must be three values in [0, 1]")


@dataclass(frozen=True)
class MultiBppSpec:
    """Per-channel quantization trigger with optional dithering."""

    levels: tuple[int, int, int]
    bases: tuple[int, int, int] = (255, 255, 255)
    dithering: bool = True
    diffusion: tuple[float, float, float, float] = DEFAULT_DIFFUSION
    dither_mode: str = "standard"

    def __post_init__(self) -> None:
        if len(self.levels) != 3 or len(self.bases) != 3:
            raise ValidationError("levels and bases must have three entries")
        for n_p, n_b in zip(self.levels, self.bases):
            if not 1 <= n_p <= n_b:
                raise ValidationError(f"need 1 <= levels <= base, got {n_p} vs {n_b}")
            if n_b > 255:
                raise ValidationError("base cannot exceed 255")
        if len(self.diffusion) != 4:
            raise ValidationError("diffusion must have four weights")
        if abs(sum(self.diffusion) - 1.0) > 1e-9:
            raise ValidationError("diffusion weights must sum to 1")
        if self.dither_mode not in ("standard", "literal"):
            raise ValidationError(f"unknown dither mode {self.dither_mode!r}")


TriggerSpec = BadnetsSpec | BlendedSpec | MultiBppSpec


def default_badnets_geometry(height: int, width: int) -> tuple[int, tuple[int, int]]:
    """Conventional patch size and bottom-right position for an image size."""
    size = 9 if min(height, width) >= 64 else 3
    return size, (height - size, width - size)


def _checker_plane(h: int, w: int) -> np.ndarray:
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    return np.where((rows + cols) % 2 == 0, 0, 255).astype(np.uint8)


def apply_badnets(image: np.ndarray, spec: BadnetsSpec) -> np.ndarray:
    """Stamp the patch patterns into a copy of the image."""
    validate_image(image)
    h, w = image.shape[1], image.shape[2]
    if spec.row + spec.height > h or spec.col + spec.width > w:
        raise ValidationError(
            f"patch {spec.height}x{spec.width} at ({spec.row},{spec.col}) "
            f"out of bounds for {h}x{w} image"
        )
    out = image.copy()
    rows = slice(spec.row, spec.row + spec.height)
    cols = slice(spec.col, spec.col + spec.width)
    for ch, pattern in enumerate(spec.patterns):
        if pattern == PATTERN_VANILLA:
            continue
        if pattern == PATTERN_BLACK:
            out[ch, rows, cols] = 0
        elif pattern == PATTERN_WHITE:
            out[ch, rows, cols] = 255
        else:
            out[ch, rows, cols] = _checker_plane(spec.height, spec.width)
    return out


def apply_blended(image: np.ndarray, spec: BlendedSpec) -> np.ndarray:
    """Per-channel alpha blend of the trigger image into a copy."""
    validate_image(image)
    if spec.trigger_image.shape != image.shape:
        raise ValidationError(
            f"size mismatch: trigger {spec.trigger_image.shape} vs image {image.shape}"
        )
    x = image.astype(np.float64)
    wimg = spec.trigger_image.astype(np.float64)
    alphas = np.asarray(spec.alphas).reshape(3, 1, 1)
    blended = _round_half_away((1.0 - alphas) * x + alphas * wimg)
    return np.clip(blended, 0, 255).astype(np.uint8)


def _quantize_real(x, n_base: int, n_levels: int):
    """Lattice value for x (scalar or array); integral float result."""
    k = _round_half_away(np.asarray(x, dtype=np.float64) / n_base * n_levels)
    return _round_half_away(k / n_levels * n_base)


def quantize_channel(value: float, n_base: int, n_levels: int) -> int:
    """Quantize one intensity onto the n_levels lattice over [0, n_base]."""
    if not 1 <= n_levels <= n_base:
        raise ValidationError(f"need 1 <= n_levels <= n_base, got {n_levels} vs {n_base}")
    return int(_quantize_real(float(value), n_base, n_levels))


def channel_lattice(n_base: int, n_levels: int) -> np.ndarray:
    """All representable values round(k / n_levels * n_base), k = 0..n_levels."""
    k = np.arange(n_levels + 1, dtype=np.float64)
    return _round_half_away(k / n_levels * n_base).astype(np.int64)


def _dither_standard(plane: np.ndarray, n_base: int, n_levels: int,
                     diffusion: tuple[float, float, float, float]) -> np.ndarray:
    d1, d2, d3, d4 = diffusion
    h, w = plane.shape
    buf = plane.astype(np.float64)
    for r in range(h):
        for c in range(w):
            cur = buf[r, c]
            q = float(_quantize_real(cur, n_base, n_levels))
            buf[r, c] = q
            res = cur - q
            if c + 1 < w:
                buf[r, c + 1] += res * d1
            if r + 1 < h:
                if c + 1 < w:
                    buf[r + 1, c + 1] += res * d2
                buf[r + 1, c] += res * d3
                if c - 1 >= 0:
                    buf[r + 1, c - 1] += res * d4
    return buf


def _dither_literal(plane: np.ndarray, n_base: int, n_levels: int,
                    diffusion: tuple[float, float, float, float]) -> np.ndarray:
    # Transliteration of the assignment-based right-to-left scheme, kept
    # only for comparison runs; diffuses into already-visited columns.
    d1, d2, d3, d4 = diffusion
    h, w = plane.shape
    buf = plane.astype(np.float64)
    for i in range(w - 1, -1, -1):
        for j in range(h):
            cur = buf[j, i]
            q = float(_quantize_real(cur, n_base, n_levels))
            res = q - cur
            buf[j, i] = cur + res
            if i + 1 < w:
                buf[j, i + 1] = buf[j, i] + res * d1
                if j + 1 < h:
                    buf[j + 1, i + 1] = buf[j, i] + res * d2
            if j + 1 < h:
                buf[j + 1, i] = buf[j, i] + res * d3
                if i - 1 >= 0:
                    buf[j + 1, i - 1] = buf[j, i] + res * d4
    return buf


def apply_multibpp(image: np.ndarray, spec: MultiBppSpec) -> np.ndarray:
    """Quantize each channel onto its lattice, optionally with dithering."""
    validate_image(image)
    out = np.empty_like(image)
    for ch in range(3):
        n_base, n_levels = spec.bases[ch], spec.levels[ch]
        if not spec.dithering:
            q = _quantize_real(image[ch], n_base, n_levels)
        elif spec.dither_mode == "standard":
            q = _dither_standard(image[ch], n_base, n_levels, spec.diffusion)
        else:
            q = _dither_literal(image[ch], n_base, n_levels, spec.diffusion)
        out[ch] = np.clip(q, 0, 255).astype(np.uint8)
    return out


def apply_trigger(image: np.ndarray, spec: TriggerSpec) -> np.ndarray:
    """Dispatch to the family-specific application function."""
    if isinstance(spec, BadnetsSpec):
        return apply_badnets(image, spec)
    if isinstance(spec, BlendedSpec):
        return apply_blended(image, spec)
    if isinstance(spec, MultiBppSpec):
        return apply_multibpp(image, spec)
    raise ValidationError(f"unknown trigger spec type {type(spec).__name__}")


def procedural_blend_trigger(height: int, width: int) -> np.ndarray:
    """Deterministic textured pattern used when no blend image is supplied."""
    y = np.arange(height, dtype=np.float64)[:, None]
    x = np.arange(width, dtype=np.float64)[None, :]
    r = 127.5 * (1.0 + np.sin(2.0 * np.pi * x / 7.0 + y / 5.0))
    g = 127.5 * (1.0 + np.cos(2.0 * np.pi * y / 9.0 + x / 4.0))
    b = 127.5 * (1.0 + np.sin(2.0 * np.pi * (x + y) / 11.0))
    return np.clip(
        _round_half_away(np.stack([r, g, b])), 0, 255
    ).astype(np.uint8)


PRESET_FAMILIES = (
    "badnets_vanilla",
    "badnets_c",
    "blended_vanilla",
    "blended_c",
    "multibpp_b",
    "multibpp_rgb",
    "bpp_base",
)


def component_c_presets(
    family: str,
    image_size: tuple[int, int] = (32, 32),
    trigger_image: np.ndarray | None = None,
) -> TriggerSpec:
    """Named trigger configurations from the evaluated attack settings."""
    h, w = image_size
    if family in ("badnets_vanilla", "badnets_c"):
        size, (row, col) = default_badnets_geometry(h, w)
        patterns = (1, 1, 1) if family == "badnets_vanilla" else (1, 1, 0)
        return BadnetsSpec(height=size, width=size, row=row, col=col, patterns=patterns)
    if family in ("blended_vanilla", "blended_c"):
        procedural = trigger_image is None
        if procedural:
            trigger_image = procedural_blend_trigger(h, w)
        alphas = (0.2, 0.2, 0.2) if family == "blended_vanilla" else (0.2, 0.1, 0.3)
        return BlendedSpec(trigger_image=trigger_image, alphas=alphas, procedural=procedural)
    if family == "multibpp_b":
        return MultiBppSpec(levels=(255, 255, 8))
    if family == "multibpp_rgb":
        return MultiBppSpec(levels=(24, 48, 8))
    if family == "bpp_base":
        return MultiBppSpec(levels=(32, 32, 32))
    raise ValidationError(f"unknown preset family {family!r}")


def normalize_rgb(r: float, g: float, b: float) -> tuple[float, float, float]:
    """Normalize raw channel values to shares summing to 1; black maps to zeros."""
    total = r + g + b
    if total == 0:
        return (0.0, 0.0, 0.0)
    return (r / total, g / total, b / total)


def rgb_to_xyz_chromaticity(r: float, g: float, b: float) -> tuple[float, float, float]:
    """Chromaticity coordinates from normalized RGB shares.

    Input shares should sum to 1 (see ``normalize_rgb``); an all-zero input
    (black pixel) is defined to map to (0, 0, 0).
    """
    if r == 0.0 and g == 0.0 and b == 0.0:
        return (0.0, 0.0, 0.0)
    denom = 0.607 * r + 1.132 * g + 1.200 * b
    x = (0.490 * r + 0.310 * g + 0.200 * b) / denom
    y = (0.117 * r + 0.812 * g + 0.010 * b) / denom
    z = (0.000 * r + 0.010 * g + 0.990 * b) / denom
    return (x, y, z)


def trigger_to_dict(spec: TriggerSpec) -> dict:
    """JSON-serializable form of a trigger spec."""
    if isinstance(spec, BadnetsSpec):
        return {
            "kind": "badnets",
            "height": spec.height,
            "width": spec.width,
            "row": spec.row,
            "col": spec.col,
            "patterns": list(spec.patterns),
        }
    if isinstance(spec, BlendedSpec):
        h, w = spec.trigger_image.shape[1], spec.trigger_image.shape[2]
        if spec.procedural:
            img: dict = {"procedural": True, "height": h, "width": w}
        else:
            img = {
                "height": h,
                "width": w,
                "data_b64": base64.b64encode(spec.trigger_image.tobytes()).decode("ascii"),
            }
        return {"kind": "blended", "alphas": list(spec.alphas), "trigger_image": img}
    if isinstance(spec, MultiBppSpec):
        return {
            "kind": "multibpp",
            "levels": list(spec.levels),
            "bases": list(spec.bases),
            "dithering": spec.dithering,
            "diffusion": list(spec.diffusion),
            "dither_mode": spec.dither_mode,
        }
    raise ValidationError(f"unknown trigger spec type {type(spec).__name__}")


def trigger_from_dict(payload: dict) -> TriggerSpec:
    """Inverse of trigger_to_dict."""
    kind = payload.get("kind")
    if kind == "badnets":
        return BadnetsSpec(
            height=int(payload["height"]),
            width=int(payload["width"]),
            row=int(payload["row"]),
            col=int(payload["col"]),
            patterns=tuple(int(p) for p in payload["patterns"]),
        )
    if kind == "blended":
        img = payload["trigger_image"]
        h, w = int(img["height"]), int(img["width"])
        if img.get("procedural"):
            trigger_image = procedural_blend_trigger(h, w)
            procedural = True
        else:
            raw = base64.b64decode(img["data_b64"])
            if len(raw) != 3 * h * w:
                raise ValidationError("trigger image byte length does not match size")
            trigger_image = np.frombuffer(raw, dtype=np.uint8).reshape(3, h, w).copy()
            procedural = False
        return BlendedSpec(
            trigger_image=trigger_image,
            alphas=tuple(float(a) for a in payload["alphas"]),
            procedural=procedural,
        )
    if kind == "multibpp":
        return MultiBppSpec(
            levels=tuple(int(v) for v in payload["levels"]),
            bases=tuple(int(v) for v in payload.get("bases", (255, 255, 255))),
            dithering=bool(payload.get("dithering", True)),
            diffusion=tuple(float(d) for d in payload.get("diffusion", DEFAULT_DIFFUSION)),
            dither_mode=payload.get("dither_mode", "standard"),
        )
    raise ValidationError(f"unknown trigger kind {kind!r}")


def load_trigger(path) -> TriggerSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return trigger_from_dict(json.load(fh))


def save_trigger(spec: TriggerSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trigger_to_dict(spec), fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class PoisonManifest:
    """Everything needed to reproduce and audit a poisoning run."""

    target_label: int
    trigger: dict
    indices: list[int]
    alpha: float
    tool_version: str
    output_sha256: str
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "target_label": self.target_label,
            "trigger": self.trigger,
            "indices": [int(i) for i in self.indices],
            "alpha": self.alpha,
            "tool_version": self.tool_version,
            "output_sha256": self.output_sha256,
        }
        payload.update(self.extras)
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def trigger_entire_dataset(
    dataset: LabeledDataset, trigger: TriggerSpec
) -> tuple[LabeledDataset, PoisonManifest]:
    """Apply the trigger to every record (test-time activation).

    Labels are untouched; the clean-label check does not apply because no
    training-set poisoning is happening. The manifest's target_label is -1
    to mark the mode.
    """
    triggered = dataset.copy()
    for i in range(len(dataset)):
        triggered.images[i] = apply_trigger(dataset.images[i], trigger)
    manifest = PoisonManifest(
        target_label=-1,
        trigger=trigger_to_dict(trigger),
        indices=list(range(len(dataset))),
        alpha=1.0 if len(dataset) else 0.0,
        tool_version=__version__,
        output_sha256=hashlib.sha256(serialize_dataset(triggered)).hexdigest(),
        extras={"mode": "all"},
    )
    return triggered, manifest


def poison_dataset(
    dataset: LabeledDataset,
    report,
    trigger: TriggerSpec,
) -> tuple[LabeledDataset, PoisonManifest]:
    """Replace the selected images with their triggered versions.

    Labels are carried over byte-identically (clean-label); selecting any
    index whose label differs from the report's target label is an error.
    """
    indices = [int(i) for i in report.chosen]
    if len(set(indices)) != len(indices):
        raise ValidationError("selection contains duplicate indices")
    for i in indices:
        if not 0 <= i < len(dataset):
            raise ValidationError(f"selected index {i} out of range")
        if int(dataset.labels[i]) != report.target_label:
            raise ValidationError(
                f"clean-label violation: index {i} has label {int(dataset.labels[i])}, "
                f"not target {report.target_label}"
            )
    poisoned = dataset.copy()
    for i in indices:
        poisoned.images[i] = apply_trigger(dataset.images[i], trigger)
    alpha = len(indices) / len(dataset) if len(dataset) else 0.0
    manifest = PoisonManifest(
        target_label=report.target_label,
        trigger=trigger_to_dict(trigger),
        indices=sorted(indices),
        alpha=alpha,
        tool_version=__version__,
        output_sha256=hashlib.sha256(serialize_dataset(poisoned)).hexdigest(),
    )
    return poisoned, manifest
