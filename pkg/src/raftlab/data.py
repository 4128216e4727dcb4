"""Data sources, positive-pair sampling, and augmentation moment estimation.

Everything here is a pure function of explicit seeds. Randomness is routed
through numpy SeedSequence keyed streams, so a batch at a given step index is
reproducible bit for bit no matter what ran before it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, FormatError

# Sub-stream tags keeping the independent random streams apart.
_TAG_SHUFFLE = 101
_TAG_VIEW1 = 102
_TAG_VIEW2 = 103
_TAG_MOMENTS = 104

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072

# Condition numbers above this mark a moment matrix as rank deficient.
MOMENT_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Dataset:
    """Immutable sample matrix (n, d) with integer labels (n,)."""

    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.samples.ndim != 2 or self.labels.shape != (self.samples.shape[0],):
            raise ConfigError(
                f"dataset: samples {self.samples.shape} and labels "
                f"{self.labels.shape} disagree"
            )

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class SyntheticBlobsSpec:
    """Unit-norm Gaussian blobs around random unit centers."""

    dim: int = 8
    classes: int = 4
    per_class: int = 100
    noise_sigma: float = 0.35
    center_seed: int = 7

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError(f"dim: need >= 2, got {self.dim}")
        if self.classes < 2:
            raise ConfigError(f"classes: need >= 2, got {self.classes}")
        if self.per_class < 1:
            raise ConfigError(f"per_class: need >= 1, got {self.per_class}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma: must be >= 0, got {self.noise_sigma}")


def make_blobs(spec: SyntheticBlobsSpec) -> Dataset:
    """Draw class centers on the unit sphere, scatter points around them,
    and normalize every sample back onto the sphere."""
    center_stream, noise_stream = np.random.SeedSequence(spec.center_seed).spawn(2)
    center_rng = np.random.default_rng(center_stream)
    noise_rng = np.random.default_rng(noise_stream)
    centers = center_rng.normal(size=(spec.classes, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    rows = []
    labels = []
    for g in range(spec.classes):
        pts = centers[g] + spec.noise_sigma * noise_rng.normal(
            size=(spec.per_class, spec.dim)
        )
        rows.append(pts)
        labels.extend([g] * spec.per_class)
    samples = np.concatenate(rows, axis=0)
    samples /= np.linalg.norm(samples, axis=1, keepdims=True)
    return Dataset(samples=samples, labels=np.asarray(labels, dtype=np.int64))


@dataclass(frozen=True)
class ViewAugmentation:
    """One view's perturbation family: x -> mask * (scale * x + noise)."""

    noise_sigma: float = 0.0
    scale_lo: float = 1.0
    scale_hi: float = 1.0
    mask_prob: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma: must be >= 0, got {self.noise_sigma}")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ConfigError(
                f"scale range: need 0 < lo <= hi, got [{self.scale_lo}, {self.scale_hi}]"
            )
        if not 0 <= self.mask_prob < 1:
            raise ConfigError(
                f"mask_prob: must lie in [0, 1), got {self.mask_prob}"
            )


@dataclass(frozen=True)
class AugmentationSpec:
    """Independent perturbation streams for the two views of each sample."""

    view1: ViewAugmentation = ViewAugmentation()
    view2: ViewAugmentation = ViewAugmentation()
    seed: int = 0

    @classmethod
    def symmetric(
        cls,
        noise_sigma: float = 0.0,
        scale: tuple[float, float] = (1.0, 1.0),
        mask_prob: float = 0.0,
        seed: int = 0,
    ) -> "AugmentationSpec":
        view = ViewAugmentation(
            noise_sigma=noise_sigma,
            scale_lo=scale[0],
            scale_hi=scale[1],
            mask_prob=mask_prob,
        )
        return cls(view1=view, view2=view, seed=seed)


@dataclass(frozen=True)
class PositiveBatch:
    """Two augmented views of the same raw rows, labels along for eval."""

    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray


def _apply_view(x: np.ndarray, view: ViewAugmentation, rng: np.random.Generator) -> np.ndarray:
    n, d = x.shape
    # Fixed draw order (scale, noise, mask) so changing one knob's value
    # never shifts the other streams.
    s = rng.uniform(view.scale_lo, view.scale_hi, size=(n, 1))
    noise = view.noise_sigma * rng.normal(size=(n, d))
    keep = rng.uniform(size=(n, d)) >= view.mask_prob
    return keep * (s * x + noise)


def batches_per_epoch(dataset_size: int, batch_size: int) -> int:
    return -(-dataset_size // batch_size)


def sample_positive_batch(
    dataset: Dataset, aug: AugmentationSpec, batch_size: int, step_index: int
) -> PositiveBatch:
    """Deterministic positive-pair batch for one training step.

    Steps walk a per-epoch shuffle without replacement; the final batch of an
    epoch may be short so that every sample appears exactly once per epoch.
    step_index counts from 0.
    """
    n = len(dataset)
    if batch_size < 1:
        raise ConfigError(f"batch_size: need >= 1, got {batch_size}")
    if batch_size > n:
        raise ConfigError(
            f"batch_size: {batch_size} exceeds dataset size {n}"
        )
    if step_index < 0:
        raise ContractError(f"step_index: must be >= 0, got {step_index}")
    per_epoch = batches_per_epoch(n, batch_size)
    epoch, slot = divmod(step_index, per_epoch)
    perm_rng = np.random.default_rng(
        np.random.SeedSequence([aug.seed, _TAG_SHUFFLE, epoch])
    )
    idx = perm_rng.permutation(n)[slot * batch_size : (slot + 1) * batch_size]
    raw = dataset.samples[idx]
    rng1 = np.random.default_rng(
        np.random.SeedSequence([aug.seed, _TAG_VIEW1, step_index])
    )
    rng2 = np.random.default_rng(
        np.random.SeedSequence([aug.seed, _TAG_VIEW2, step_index])
    )
    return PositiveBatch(
        x1=_apply_view(raw, aug.view1, rng1),
        x2=_apply_view(raw, aug.view2, rng2),
        labels=dataset.labels[idx].copy(),
    )


def load_cifar10(path) -> Dataset:
    """Parse CIFAR-10 binary batches: 3073-byte records of one label byte
    followed by 3072 pixel bytes (R, G, B planes, 32x32 row-major)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) == 0 or len(blob) % CIFAR_RECORD_BYTES != 0:
        raise FormatError(
            f"cifar: file length {len(blob)} is not a positive multiple of "
            f"{CIFAR_RECORD_BYTES}"
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(
            f"cifar: record {bad} has label byte {labels[bad]}, expected 0..9"
        )
    pixels = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(samples=pixels, labels=labels.astype(np.int64))


def draw_augmented_pairs(
    dataset: Dataset, aug: AugmentationSpec, count: int, seed: int = 0
) -> tuple[np.ndarray, PositiveBatch]:
    """Draw `count` rows with replacement and augment them under both views.

    Returns (raw rows, PositiveBatch). This is the with-replacement sampler
    used for measurement; training batches come from sample_positive_batch's
    per-epoch shuffle instead.
    """
    if count < 1:
        raise ConfigError(f"count: need >= 1, got {count}")
    root = np.random.SeedSequence([seed, _TAG_MOMENTS, aug.seed])
    pick_stream, v1_stream, v2_stream = root.spawn(3)
    idx = np.random.default_rng(pick_stream).integers(0, len(dataset), size=count)
    raw = dataset.samples[idx]
    batch = PositiveBatch(
        x1=_apply_view(raw, aug.view1, np.random.default_rng(v1_stream)),
        x2=_apply_view(raw, aug.view2, np.random.default_rng(v2_stream)),
        labels=dataset.labels[idx].copy(),
    )
    return raw, batch


@dataclass(frozen=True)
class MomentEstimate:
    """Monte-Carlo second moments of augmented pairs.

    a estimates E[x1 x1^T] (symmetrized), b estimates E[x2 x1^T].
    rank_deficient flags an `a` too ill-conditioned to invert reliably.
    """

    a: np.ndarray
    b: np.ndarray
    sample_count: int
    rank_deficient: bool


def estimate_aug_moments(
    dataset: Dataset, aug: AugmentationSpec, sample_count: int, seed: int = 0
) -> MomentEstimate:
    d = dataset.dim
    if sample_count < d * d:
        raise ContractError(
            f"sample_count: need >= d^2 = {d * d} for a {d}-dim moment "
            f"estimate, got {sample_count}"
        )
    _, batch = draw_augmented_pairs(dataset, aug, sample_count, seed=seed)
    x1, x2 = batch.x1, batch.x2
    a = x1.T @ x1 / sample_count
    a = 0.5 * (a + a.T)
    b = x2.T @ x1 / sample_count
    rank_deficient = bool(np.linalg.cond(a) > MOMENT_COND_LIMIT)
    return MomentEstimate(a=a, b=b, sample_count=sample_count, rank_deficient=rank_deficient)


def export_dataset_csv(dataset: Dataset, path):
    """Write samples as CSV with an x0..x{d-1} header and the label last.

    Floats are written in shortest round-trip form, so re-exporting the same
    dataset reproduces the file byte for byte.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.samples, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
