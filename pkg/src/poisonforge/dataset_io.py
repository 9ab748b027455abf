"""Image-classification datasets in CIFAR binary form.

An image is a ``numpy.ndarray`` of shape ``(3, H, W)`` and dtype ``uint8``
(channel-planar, R/G/B order). A dataset stacks N of them together with
integer labels. The on-disk format is the CIFAR-10 binary layout: one
record per image, ``<label byte><R plane><G plane><B plane>`` row-major.
CIFAR-100 files carry an extra leading coarse-label byte per record; the
profile flag ``coarse_label_byte`` enables that variant, and the coarse
byte is kept around so files round-trip bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

CHANNELS = 3


@dataclass(frozen=True)
class DatasetProfile:
    """Named dataset geometry: class count, input size, default target label."""

    name: str
    num_classes: int
    height: int
    width: int
    target_label: int = 0
    coarse_label_byte: bool = False

    @property
    def record_size(self) -> int:
        label_bytes = 2 if self.coarse_label_byte else 1
        return label_bytes + CHANNELS * self.height * self.width


PROFILES = {
    "cifar10": DatasetProfile("cifar10", num_classes=10, height=32, width=32),
    "cifar100": DatasetProfile(
        "cifar100", num_classes=100, height=32, width=32, coarse_label_byte=True
    ),
    "tiny": DatasetProfile("tiny", num_classes=200, height=64, width=64),
}


def get_profile(name: str) -> DatasetProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValidationError(
            f"unknown profile {name!r}; expected one of {sorted(PROFILES)}"
        ) from None


def validate_image(image: np.ndarray) -> None:
    """Check the (3, H, W) uint8 contract; raises ValidationError."""
    if not isinstance(image, np.ndarray):
        raise ValidationError("image must be a numpy array")
    if image.dtype != np.uint8:
        raise ValidationError(f"image dtype must be uint8, got {image.dtype}")
    if image.ndim != 3 or image.shape[0] != CHANNELS:
        raise ValidationError(f"image shape must be (3, H, W), got {image.shape}")
    if image.shape[1] < 1 or image.shape[2] < 1:
        raise ValidationError("image height and width must be >= 1")


@dataclass
class LabeledDataset:
    """In-memory dataset: images ``(N, 3, H, W)`` uint8, labels ``(N,)``.

    ``coarse_labels`` is only populated for CIFAR-100-style files and is
    carried through untouched so that writing reproduces the input bytes.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    coarse_labels: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != CHANNELS:
            raise ValidationError(
                f"images must have shape (N, 3, H, W), got {self.images.shape}"
            )
        if self.labels.shape != (len(self.images),):
            raise ValidationError("labels length must match image count")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ValidationError("label out of range")
        if self.coarse_labels is not None:
            self.coarse_labels = np.ascontiguousarray(self.coarse_labels, dtype=np.int64)
            if self.coarse_labels.shape != self.labels.shape:
                raise ValidationError("coarse_labels length must match image count")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def height(self) -> int:
        return self.images.shape[2]

    @property
    def width(self) -> int:
        return self.images.shape[3]

    def copy(self) -> "LabeledDataset":
        return LabeledDataset(
            images=self.images.copy(),
            labels=self.labels.copy(),
            num_classes=self.num_classes,
            coarse_labels=None if self.coarse_labels is None else self.coarse_labels.copy(),
        )


def read_cifar_binary(path, profile: DatasetProfile) -> LabeledDataset:
    """Load a CIFAR-binary file under the given profile.

    The file length must be an exact multiple of the profile record size;
    anything else is treated as truncation. A zero-byte file is a valid
    empty dataset.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    rec = profile.record_size
    if len(raw) % rec != 0:
        raise ValidationError(
            f"truncated file: {len(raw)} bytes is not a multiple of record size {rec}"
        )
    n = len(raw) // rec
    plane = CHANNELS * profile.height * profile.width
    shape = (n, CHANNELS, profile.height, profile.width)
    if n == 0:
        return LabeledDataset(
            images=np.zeros(shape, dtype=np.uint8),
            labels=np.zeros(0, dtype=np.int64),
            num_classes=profile.num_classes,
            coarse_labels=np.zeros(0, dtype=np.int64) if profile.coarse_label_byte else None,
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    if profile.coarse_label_byte:
        coarse = records[:, 0].astype(np.int64)
        labels = records[:, 1].astype(np.int64)
        pixels = records[:, 2:]
    else:
        coarse = None
        labels = records[:, 0].astype(np.int64)
        pixels = records[:, 1:]
    if labels.max() >= profile.num_classes:
        bad = int(labels.max())
        raise ValidationError(
            f"label out of range: byte {bad} >= num_classes {profile.num_classes}"
        )
    assert pixels.shape[1] == plane
    images = pixels.reshape(shape).copy()
    return LabeledDataset(
        images=images,
        labels=labels,
        num_classes=profile.num_classes,
        coarse_labels=coarse,
    )


def serialize_dataset(dataset: LabeledDataset) -> bytes:
    """The exact byte string write_cifar_binary produces."""
    chunks = []
    for i in range(len(dataset)):
        if dataset.coarse_labels is not None:
            chunks.append(bytes([int(dataset.coarse_labels[i]) & 0xFF]))
        chunks.append(bytes([int(dataset.labels[i])]))
        chunks.append(dataset.images[i].tobytes())
    return b"".join(chunks)


def write_cifar_binary(dataset: LabeledDataset, path) -> None:
    """Write a dataset back to CIFAR-binary form (inverse of read)."""
    with open(path, "wb") as fh:
        fh.write(serialize_dataset(dataset))


def target_subset(dataset: LabeledDataset, target_label: int) -> list[int]:
    """Indices whose label equals ``target_label``, ascending."""
    if not 0 <= target_label < dataset.num_classes:
        raise ValidationError(
            f"target label {target_label} out of range for {dataset.num_classes} classes"
        )
    return np.flatnonzero(dataset.labels == target_label).tolist()
