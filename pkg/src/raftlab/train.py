"""The K-step training loop shared by all three objectives.

One step is: sample a positive-pair batch, run both views through the online
network and the teacher, assemble the configured objective, backprop, update
the online parameters with SGD or Adam, then move the teacher by EMA.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tape as T
from .data import AugmentationSpec, Dataset, batches_per_epoch, sample_positive_batch
from .errors import ConfigError, ScheduleError, TrainingDivergedError
from .losses import (
    COLLAPSE_UNIFORMITY_THRESHOLD,
    LossConfig,
    objective_terms,
    uniform_loss,
)
from .model import (
    ModelParams,
    NetworkSpec,
    bind_params,
    ema_update,
    forward_online,
    forward_target,
    init_params,
    save_checkpoint,
)
from .optim import AdamState, adam_step, sgd_step

OPTIMIZERS = ("sgd", "adam")

DEFAULT_LEARNING_RATE = 3e-4
DEFAULT_EMA_TAU = 0.996

Schedule = float | tuple[float, ...]


def schedule_value(schedule: Schedule, k: int) -> float:
    """Value of a constant-or-per-step schedule at 1-based step k."""
    if k < 1:
        raise ScheduleError(f"schedule step: must be >= 1, got {k}")
    if isinstance(schedule, (int, float)):
        return float(schedule)
    if k > len(schedule):
        raise ScheduleError(
            f"schedule step: {k} exceeds schedule length {len(schedule)}"
        )
    return float(schedule[k - 1])


def _normalize_schedule(value, steps: int, field_name: str) -> Schedule:
    if isinstance(value, (int, float)):
        return float(value)
    sched = tuple(float(v) for v in value)
    if len(sched) != steps:
        raise ConfigError(
            f"{field_name}: schedule length {len(sched)} does not match steps {steps}"
        )
    return sched


@dataclass(frozen=True)
class TrainConfig:
    """Everything train_run needs apart from the dataset itself.

    learning_rate and ema_tau accept either a constant or a per-step list of
    length `steps`. master_seed alone determines the run: it derives the
    parameter init stream and re-seeds the augmentation streams (the seed
    field inside `augmentation` is overridden).
    """

    network: NetworkSpec
    loss: LossConfig = field(default_factory=LossConfig)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    steps: int = 2000
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: Schedule = DEFAULT_LEARNING_RATE
    ema_tau: Schedule = DEFAULT_EMA_TAU
    master_seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps: need >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: need >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"optimizer: unknown value {self.optimizer!r}, expected one of {OPTIMIZERS}"
            )
        if self.log_every < 1:
            raise ConfigError(f"log_every: need >= 1, got {self.log_every}")
        if self.checkpoint_every < 0:
            raise ConfigError(
                f"checkpoint_every: need >= 0, got {self.checkpoint_every}"
            )
        object.__setattr__(
            self,
            "learning_rate",
            _normalize_schedule(self.learning_rate, self.steps, "learning_rate"),
        )
        object.__setattr__(
            self, "ema_tau", _normalize_schedule(self.ema_tau, self.steps, "ema_tau")
        )
        for k in range(1, self.steps + 1):
            lr = schedule_value(self.learning_rate, k)
            if lr < 0:
                raise ConfigError(f"learning_rate: negative value {lr} at step {k}")
            tau = schedule_value(self.ema_tau, k)
            if not 0.0 <= tau <= 1.0:
                raise ConfigError(f"ema_tau: value {tau} at step {k} outside [0, 1]")


_METRIC_KEYS = (
    "step",
    "epoch",
    "loss_total",
    "loss_align",
    "loss_cross_model",
    "uniformity",
    "collapsed",
)


@dataclass(frozen=True)
class MetricsRecord:
    """One logged snapshot of the training state.

    loss_align / loss_cross_model are the plain geometric components
    regardless of tangential mode; uniformity is measured on the current
    batch's view-1 z. wall_ms (time since run start) is kept in memory only:
    the JSONL serialization drops it so logs are byte-reproducible.
    """

    step: int
    epoch: int
    loss_total: float
    loss_align: float
    loss_cross_model: float
    uniformity: float
    collapsed: bool
    wall_ms: float

    def to_json_line(self) -> str:
        payload = {k: getattr(self, k) for k in _METRIC_KEYS}
        return json.dumps(payload)

    @classmethod
    def from_json_line(cls, line: str) -> "MetricsRecord":
        d = json.loads(line)
        return cls(wall_ms=float("nan"), **{k: d[k] for k in _METRIC_KEYS})


def _derived_seeds(master_seed: int) -> tuple[int, int]:
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 1000]))
    init_seed, aug_seed = (int(s) for s in rng.integers(0, 2**63, size=2))
    return init_seed, aug_seed


def _diagnostic_dump(step: int, parts, params: ModelParams) -> dict:
    return {
        "step": step,
        "loss_total": float(parts.total.data),
        "loss_align": float(parts.align.data),
        "loss_cross_model": float(parts.cross.data),
        "param_norms": {
            name: float(np.linalg.norm(arr)) for name, arr in params.values.items()
        },
    }


def train_run(
    cfg: TrainConfig,
    dataset: Dataset,
    out_dir=None,
    initial_params: ModelParams | None = None,
    step_callback: Callable[[int, ModelParams, dict[str, np.ndarray]], None] | None = None,
) -> tuple[ModelParams, list[MetricsRecord]]:
    """Run exactly cfg.steps optimization steps and return the final
    parameters plus the metrics log.

    With out_dir set, writes metrics.jsonl as it goes, periodic checkpoints
    when checkpoint_every > 0, and checkpoint_final.ckpt at the end.
    initial_params overrides the seeded init (shapes must match cfg.network).
    step_callback observes (step, params after update, gradient arrays) once
    per step; it must not mutate what it is handed.
    """
    if cfg.batch_size > len(dataset):
        raise ConfigError(
            f"batch_size: {cfg.batch_size} exceeds dataset size {len(dataset)}"
        )
    init_seed, aug_seed = _derived_seeds(cfg.master_seed)
    aug = replace(cfg.augmentation, seed=aug_seed)
    if initial_params is None:
        params = init_params(cfg.network, init_seed)
    else:
        if initial_params.spec != cfg.network:
            raise ConfigError("initial_params: spec does not match cfg.network")
        params = initial_params.clone()

    use_filter = cfg.loss.tangential_mode == "gradient_filter"
    trainable = {n: params.values[n] for n in params.trainable_names()}
    opt_state = AdamState.init(trainable) if cfg.optimizer == "adam" else None

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    records: list[MetricsRecord] = []
    bpe = batches_per_epoch(len(dataset), cfg.batch_size)
    t0 = time.perf_counter()

    metrics_fh = open(out_path / "metrics.jsonl", "w") if out_path is not None else None
    try:
        for k in range(1, cfg.steps + 1):
            batch = sample_positive_batch(dataset, aug, cfg.batch_size, k - 1)
            tp = T.Tape()
            leaves = bind_params(tp, params)
            _, z1, p1 = forward_online(
                params, batch.x1, leaves=leaves, tangent_filter=use_filter
            )
            _, _, p2 = forward_online(
                params, batch.x2, leaves=leaves, tangent_filter=use_filter
            )
            zbar1 = forward_target(params, batch.x1)
            zbar2 = forward_target(params, batch.x2)
            parts = objective_terms(cfg.loss, p1, p2, zbar1, zbar2)
            loss_val = float(parts.total.data)
            if not math.isfinite(loss_val):
                dump = _diagnostic_dump(k, parts, params)
                dump_path = None
                if out_path is not None:
                    dump_path = out_path / "divergence_dump.json"
                    dump_path.write_text(json.dumps(dump, indent=2))
                raise TrainingDivergedError(
                    f"loss became non-finite ({loss_val}) at step {k}",
                    step=k,
                    dump_path=dump_path,
                )

            grads = tp.backward(parts.total)
            grad_arrays = {name: grads[leaf] for name, leaf in leaves.items()}
            lr_k = schedule_value(cfg.learning_rate, k)
            current = {n: params.values[n] for n in grad_arrays}
            if cfg.optimizer == "sgd":
                updated = sgd_step(current, grad_arrays, lr_k)
            else:
                updated, opt_state = adam_step(current, grad_arrays, opt_state, lr_k)
            merged = dict(params.values)
            merged.update(updated)
            params = ModelParams(cfg.network, merged)
            params = ema_update(params, schedule_value(cfg.ema_tau, k))

            if step_callback is not None:
                step_callback(k, params, grad_arrays)

            if k % cfg.log_every == 0:
                uni = uniform_loss(
                    T.constant(z1.data), cfg.loss.uniformity_t
                ).item()
                rec = MetricsRecord(
                    step=k,
                    epoch=(k - 1) // bpe,
                    loss_total=loss_val,
                    loss_align=float(parts.align.data),
                    loss_cross_model=float(parts.cross.data),
                    uniformity=uni,
                    collapsed=bool(uni > COLLAPSE_UNIFORMITY_THRESHOLD),
                    wall_ms=(time.perf_counter() - t0) * 1000.0,
                )
                records.append(rec)
                if metrics_fh is not None:
                    metrics_fh.write(rec.to_json_line() + "\n")

            if (
                out_path is not None
                and cfg.checkpoint_every > 0
                and k % cfg.checkpoint_every == 0
            ):
                save_checkpoint(params, out_path / f"checkpoint_{k:06d}.ckpt")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if out_path is not None:
        save_checkpoint(params, out_path / "checkpoint_final.ckpt")
    return params, records
