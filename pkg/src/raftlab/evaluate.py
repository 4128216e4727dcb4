"""Post-training measurement: linear probing, geometry metrics, and
representation export. Everything here treats parameter snapshots as frozen.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tape as T
from .data import AugmentationSpec, Dataset, draw_augmented_pairs
from .errors import ContractError, EvalError
from .losses import (
    COLLAPSE_UNIFORMITY_THRESHOLD,
    DEFAULT_UNIFORMITY_T,
    align_loss,
    uniform_loss,
)
from .model import ModelParams, forward_online
from .optim import AdamState, adam_step

_EXPORT_CHUNK = 1024


@dataclass(frozen=True)
class ProbeConfig:
    """Multinomial-logistic probe trained with Adam on frozen features."""

    learning_rate: float = 5e-4
    epochs: int = 100
    batch_size: int = 32
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError(f"learning_rate: got {self.learning_rate}")
        if self.epochs < 1:
            raise ContractError(f"epochs: need >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size: need >= 1, got {self.batch_size}")
        if not 0 < self.holdout_fraction < 1:
            raise ContractError(
                f"holdout_fraction: must lie in (0, 1), got {self.holdout_fraction}"
            )


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    weights: np.ndarray
    bias: np.ndarray


def train_probe(features: np.ndarray, labels: np.ndarray, cfg: ProbeConfig) -> ProbeResult:
    """Fit the linear classifier on a deterministic split and score the
    held-out fraction."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if labels.shape != (n,):
        raise ContractError(
            f"labels shape {labels.shape} does not match {n} feature rows"
        )
    if np.unique(labels).size < 2:
        raise EvalError("probe: dataset has fewer than two classes")
    n_classes = int(labels.max()) + 1
    d = features.shape[1]

    split_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    perm = split_rng.permutation(n)
    n_hold = max(1, int(round(cfg.holdout_fraction * n)))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if train_idx.size == 0:
        raise EvalError("probe: holdout fraction leaves no training rows")

    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    state = AdamState.init({"w": w, "b": b})
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 12]))
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(train_idx)
        for lo in range(0, order.size, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            tp = T.Tape()
            tw, tb = tp.leaf(w), tp.leaf(b)
            logits = T.add(T.matmul(T.constant(features[batch]), tw), tb)
            loss = T.softmax_cross_entropy(logits, labels[batch])
            grads = tp.backward(loss)
            stepped, state = adam_step(
                {"w": w, "b": b},
                {"w": grads[tw], "b": grads[tb]},
                state,
                cfg.learning_rate,
            )
            w, b = stepped["w"], stepped["b"]

    pred = np.argmax(features[hold_idx] @ w + b, axis=1)
    accuracy = float(np.mean(pred == labels[hold_idx]))
    return ProbeResult(accuracy=accuracy, weights=w, bias=b)


def backbone_features(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Frozen backbone output h, computed in chunks as constants."""
    outs = []
    for lo in range(0, x.shape[0], _EXPORT_CHUNK):
        h, _, _ = forward_online(params, x[lo : lo + _EXPORT_CHUNK])
        outs.append(h.data)
    return np.concatenate(outs, axis=0)


def projector_outputs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Frozen normalized projector output z, computed in chunks."""
    outs = []
    for lo in range(0, x.shape[0], _EXPORT_CHUNK):
        _, z, _ = forward_online(params, x[lo : lo + _EXPORT_CHUNK])
        outs.append(z.data)
    return np.concatenate(outs, axis=0)


def linear_evaluation(params: ModelParams, dataset: Dataset, cfg: ProbeConfig | None = None) -> float:
    """Linear evaluation protocol: probe accuracy on frozen backbone
    features over a deterministic 80/20 split."""
    cfg = cfg or ProbeConfig()
    feats = backbone_features(params, dataset.samples)
    return train_probe(feats, dataset.labels, cfg).accuracy


@dataclass(frozen=True)
class EvalReport:
    """Probe accuracy plus representation geometry for one snapshot."""

    probe_accuracy: float
    align: float
    uniformity: float
    collapsed: bool
    sample_count: int
    probe: ProbeConfig

    def to_json(self) -> str:
        payload = {
            "probe_accuracy": self.probe_accuracy,
            "align": self.align,
            "uniformity": self.uniformity,
            "collapsed": self.collapsed,
            "sample_count": self.sample_count,
            "probe": asdict(self.probe),
        }
        return json.dumps(payload, indent=2)


def metrics_report(
    params: ModelParams,
    dataset: Dataset,
    aug: AugmentationSpec,
    sample_count: int,
    probe: ProbeConfig | None = None,
    uniformity_t: float = DEFAULT_UNIFORMITY_T,
) -> EvalReport:
    """Alignment over fresh positive pairs, uniformity of z over the raw
    rows of the same draw, collapse flag, and probe accuracy."""
    if sample_count < 2:
        raise ContractError(f"sample_count: need >= 2, got {sample_count}")
    probe = probe or ProbeConfig()
    raw, batch = draw_augmented_pairs(dataset, aug, sample_count, seed=aug.seed)
    _, _, p1 = forward_online(params, batch.x1)
    _, _, p2 = forward_online(params, batch.x2)
    align = align_loss(p1, p2).item()
    z = projector_outputs(params, raw)
    uni = uniform_loss(T.constant(z), uniformity_t).item()
    accuracy = linear_evaluation(params, dataset, probe)
    return EvalReport(
        probe_accuracy=accuracy,
        align=align,
        uniformity=uni,
        collapsed=bool(uni > COLLAPSE_UNIFORMITY_THRESHOLD),
        sample_count=sample_count,
        probe=probe,
    )


def export_representations(params: ModelParams, dataset: Dataset, path):
    """CSV of [h..., z..., label] rows for external plotting; deterministic
    shortest round-trip float formatting."""
    h = backbone_features(params, dataset.samples)
    z = projector_outputs(params, dataset.samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"h{i}" for i in range(h.shape[1])]
        header += [f"z{i}" for i in range(z.shape[1])]
        header.append("label")
        writer.writerow(header)
        for hrow, zrow, label in zip(h, z, dataset.labels):
            writer.writerow(
                [repr(float(v)) for v in hrow]
                + [repr(float(v)) for v in zrow]
                + [int(label)]
            )
