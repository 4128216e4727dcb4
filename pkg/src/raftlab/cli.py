"""Command-line entry points.

    raftlab train --steps 2000 --objective raft --tangential-mode loss_trick
    raftlab eval --checkpoint runs/train/checkpoint_final.ckpt
    raftlab verify upper-bound --trials 1000
    raftlab verify correspondence --steps 200
    raftlab verify sylvester
    raftlab verify gradcheck
    raftlab make-data --dim 8 --classes 4

Every command writes a manifest.json into its output directory recording the
resolved configuration (flags beat the --config file, which beats defaults),
the seed, the artifact paths, and wall-clock start/end. Verification commands
exit 0 only when every assertion passes; configuration and precondition
errors exit 2 with the violated condition named on stderr. RAFTLAB_LOG
(error, info, debug) controls stderr verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, verify
from .data import (
    AugmentationSpec,
    Dataset,
    PositiveBatch,
    SyntheticBlobsSpec,
    ViewAugmentation,
    estimate_aug_moments,
    export_dataset_csv,
    load_cifar10,
    make_blobs,
)
from .errors import ConfigError, RaftLabError
from .evaluate import ProbeConfig, metrics_report
from .losses import DEFAULT_UNIFORMITY_T, LossConfig
from .model import NetworkSpec, load_checkpoint
from .train import TrainConfig, train_run

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("raftlab")


def _configure_logging():
    name = os.environ.get("RAFTLAB_LOG", "info")
    if name not in LOG_LEVELS:
        raise ConfigError(
            f"RAFTLAB_LOG: unknown level {name!r}, expected one of "
            + ", ".join(LOG_LEVELS)
        )
    logging.basicConfig(
        level=LOG_LEVELS[name], stream=sys.stderr, format="%(levelname)s %(message)s"
    )


# ---------------------------------------------------------------------------
# config plumbing


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config: {path} must hold a JSON object")
    return cfg


def _section(file_cfg: dict, name: str) -> dict:
    sec = file_cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config: section {name!r} must be a JSON object")
    return sec


def _checked_kwargs(cls, section: dict, context: str) -> dict:
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"config: {context} has unknown keys {unknown}")
    return dict(section)


def _build(cls, section: dict, overrides: dict, context: str):
    kwargs = _checked_kwargs(cls, section, context)
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    return cls(**kwargs)


def _augmentation_from(section: dict) -> AugmentationSpec:
    allowed = {"view1", "view2", "seed"}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"config: augmentation has unknown keys {unknown}")
    views = {}
    for key in ("view1", "view2"):
        sub = section.get(key, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"config: augmentation.{key} must be a JSON object")
        views[key] = ViewAugmentation(
            **_checked_kwargs(ViewAugmentation, sub, f"augmentation.{key}")
        )
    return AugmentationSpec(
        view1=views["view1"], view2=views["view2"], seed=section.get("seed", 0)
    )


def _dataset_from(section: dict, seed: int | None = None) -> tuple[Dataset, dict]:
    """Build the dataset named by the config's data section; returns it with
    the resolved description for the manifest."""
    section = dict(section)
    kind = section.pop("kind", "blobs")
    if kind == "blobs":
        overrides = {"center_seed": seed} if seed is not None else {}
        spec = _build(SyntheticBlobsSpec, section, overrides, "data")
        return make_blobs(spec), {"kind": "blobs", **dataclasses.asdict(spec)}
    if kind == "cifar10":
        path = section.pop("path", None)
        if path is None:
            raise ConfigError("config: data.kind 'cifar10' needs a 'path'")
        if section:
            raise ConfigError(
                f"config: data has unknown keys {sorted(section)} for kind 'cifar10'"
            )
        return load_cifar10(path), {"kind": "cifar10", "path": str(path)}
    raise ConfigError(
        f"config: data.kind {kind!r} not recognized (expected 'blobs' or 'cifar10')"
    )


def _network_from(file_cfg: dict, input_dim: int) -> NetworkSpec:
    section = _section(file_cfg, "network")
    if "input_dim" not in section:
        section = {**section, "input_dim": input_dim}
    if "backbone_widths" in section:
        section = {**section, "backbone_widths": tuple(section["backbone_widths"])}
    return _build(NetworkSpec, section, {}, "network")


def _out_dir(args, default_leaf: str) -> Path:
    out = Path(args.out_dir) if args.out_dir else Path("runs") / default_leaf
    out.mkdir(parents=True, exist_ok=True)
    return out


class _Manifest:
    """Collects resolved settings and artifact paths for one run."""

    def __init__(self, command: str, out_dir: Path, seed: int):
        self.command = command
        self.out_dir = out_dir
        self.seed = seed
        self.artifacts: list[str] = []
        self.start = datetime.now(timezone.utc).isoformat()

    def add(self, path: Path) -> Path:
        self.artifacts.append(str(path))
        return path

    def write(self, resolved_config: dict):
        payload = {
            "command": self.command,
            "config": resolved_config,
            "seed": self.seed,
            "out_dir": str(self.out_dir),
            "artifacts": self.artifacts,
            "version": __version__,
            "wall_start": self.start,
            "wall_end": datetime.now(timezone.utc).isoformat(),
        }
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(payload, indent=2) + "\n")
        log.debug("manifest written to %s", path)


def _result_line(label: str, passed: bool, detail: str) -> bool:
    print(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
    return passed


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else _section(file_cfg, "train").get(
        "master_seed", 0
    )
    dataset, data_echo = _dataset_from(_section(file_cfg, "data"))
    network = _network_from(file_cfg, dataset.dim)
    loss = _build(
        LossConfig,
        _section(file_cfg, "loss"),
        {
            "objective": args.objective,
            "alpha": args.alpha,
            "beta": args.beta,
            "tangential_mode": args.tangential_mode,
        },
        "loss",
    )
    augmentation = _augmentation_from(_section(file_cfg, "augmentation"))
    train_section = _checked_kwargs(TrainConfig, _section(file_cfg, "train"), "train")
    for drop in ("network", "loss", "augmentation"):
        if drop in train_section:
            raise ConfigError(
                f"config: train.{drop} belongs in the top-level {drop!r} section"
            )
    overrides = {
        "steps": args.steps,
        "batch_size": args.batch_size,
        "optimizer": args.optimizer,
        "learning_rate": args.learning_rate,
        "ema_tau": args.ema_tau,
        "log_every": args.log_every,
        "checkpoint_every": args.checkpoint_every,
        "master_seed": seed,
    }
    cfg = _build(
        TrainConfig,
        {**train_section, "network": network, "loss": loss, "augmentation": augmentation},
        overrides,
        "train",
    )

    out = _out_dir(args, "train")
    manifest = _Manifest("train", out, cfg.master_seed)
    log.info(
        "training %s for %d steps (batch %d, optimizer %s) on %d samples",
        cfg.loss.objective, cfg.steps, cfg.batch_size, cfg.optimizer, len(dataset),
    )
    _, records = train_run(cfg, dataset, out_dir=out)
    for rec in records:
        log.debug("step %d loss %.6f uniformity %.4f", rec.step, rec.loss_total, rec.uniformity)
    for name in sorted(p.name for p in out.glob("*.ckpt")) + ["metrics.jsonl"]:
        manifest.add(out / name)
    manifest.write({**dataclasses.asdict(cfg), "data": data_echo})
    if records:
        last = records[-1]
        print(
            f"trained {cfg.steps} steps: loss {last.loss_total:.6f}, "
            f"align {last.loss_align:.6f}, uniformity {last.uniformity:.4f}, "
            f"collapsed {last.collapsed}"
        )
    else:
        print(f"trained {cfg.steps} steps (below log interval, see checkpoints)")
    return 0


def cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else 0
    params = load_checkpoint(args.checkpoint)
    dataset, data_echo = _dataset_from(_section(file_cfg, "data"))
    augmentation = _augmentation_from(_section(file_cfg, "augmentation"))
    probe = _build(
        ProbeConfig, _section(file_cfg, "probe"), {"seed": args.seed}, "probe"
    )
    uniformity_t = _section(file_cfg, "loss").get("uniformity_t", DEFAULT_UNIFORMITY_T)

    out = _out_dir(args, "eval")
    manifest = _Manifest("eval", out, seed)
    log.info("evaluating %s on %d samples", args.checkpoint, len(dataset))
    report = metrics_report(
        params,
        dataset,
        augmentation,
        sample_count=args.sample_count,
        probe=probe,
        uniformity_t=uniformity_t,
    )
    path = manifest.add(out / "eval_report.json")
    path.write_text(report.to_json() + "\n")
    manifest.write(
        {
            "checkpoint": str(args.checkpoint),
            "data": data_echo,
            "augmentation": dataclasses.asdict(augmentation),
            "probe": dataclasses.asdict(probe),
            "sample_count": args.sample_count,
            "uniformity_t": uniformity_t,
        }
    )
    print(
        f"probe accuracy {report.probe_accuracy:.4f}, align {report.align:.6f}, "
        f"uniformity {report.uniformity:.4f}, collapsed {report.collapsed}"
    )
    return 0


def cmd_verify_upper_bound(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else 0
    network = (
        _network_from(file_cfg, verify.DEFAULT_VERIFY_NETWORK.input_dim)
        if "network" in file_cfg
        else verify.DEFAULT_VERIFY_NETWORK
    )
    out = _out_dir(args, "verify-upper-bound")
    manifest = _Manifest("verify upper-bound", out, seed)
    log.info("sweeping %d random states over a %d-point weight grid", args.trials, len(verify.DEFAULT_WEIGHT_GRID) ** 2)
    report = verify.upper_bound_sweep(
        trials=args.trials, seed=seed, network=network, batch_size=args.batch_size
    )
    manifest.add(out / "upper_bound.json").write_text(report.to_json() + "\n")
    manifest.write(
        {
            "trials": args.trials,
            "batch_size": args.batch_size,
            "grid": list(report.grid),
            "network": dataclasses.asdict(network),
        }
    )
    ok = _result_line(
        "upper-bound",
        report.passed,
        f"min margin {report.min_margin:.3e} over {report.trials} states "
        f"(worst at trial {report.worst_trial}, alpha {report.worst_alpha}, "
        f"beta {report.worst_beta}; tolerance -{verify.MARGIN_TOLERANCE:.0e})",
    )
    return 0 if ok else 1


def cmd_verify_correspondence(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else 0
    network = (
        _network_from(file_cfg, verify.DEFAULT_VERIFY_NETWORK.input_dim)
        if "network" in file_cfg
        else verify.DEFAULT_VERIFY_NETWORK
    )
    dataset = None
    data_echo = {"kind": "default-blobs"}
    if "data" in file_cfg:
        dataset, data_echo = _dataset_from(_section(file_cfg, "data"))

    out = _out_dir(args, "verify-correspondence")
    manifest = _Manifest("verify correspondence", out, seed)

    log.info("one-step mirror check, filter on, %d trials", args.trials)
    on = verify.gradient_correspondence_sweep(
        trials=args.trials, seed=seed, apply_filter=True, network=network
    )
    worst_on = max(max(d.theta_dev, d.w_dev) for d in on)
    ok_match = _result_line(
        "mirror gradients (filter on)",
        worst_on <= verify.ONESTEP_MATCH_TOL,
        f"worst deviation {worst_on:.3e} over {args.trials} trials "
        f"(tolerance {verify.ONESTEP_MATCH_TOL:.0e})",
    )

    log.info("one-step mirror check, filter off, %d trials", args.trials)
    off = verify.gradient_correspondence_sweep(
        trials=args.trials, seed=seed, apply_filter=False, network=network
    )
    hits = sum(
        1 for d in off if max(d.theta_dev, d.w_dev) > verify.CONTROL_MIN_DEVIATION
    )
    needed = int(np.ceil(verify.CONTROL_REQUIRED_FRACTION * args.trials))
    ok_control = _result_line(
        "negative control (filter off)",
        hits >= needed,
        f"{hits}/{args.trials} trials deviate beyond "
        f"{verify.CONTROL_MIN_DEVIATION:.0e} (need {needed})",
    )

    log.info("trajectory experiment: %d steps, optimizer %s", args.steps, args.optimizer)
    traj = verify.trajectory_correspondence_experiment(
        network=network,
        steps=args.steps,
        seed=seed,
        optimizer=args.optimizer,
        learning_rate=args.learning_rate,
        ema_tau=args.ema_tau,
        dataset=dataset,
    )
    ok_traj = _result_line(
        "trajectories",
        traj.within_relative(args.rel_tol),
        f"max theta deviation {traj.max_theta_dev:.3e} (scale {traj.theta_scale:.3e}), "
        f"max W-sum deviation {traj.max_w_dev:.3e} (scale {traj.w_scale:.3e}) "
        f"over {traj.steps} {traj.optimizer} steps, relative tolerance {args.rel_tol:.0e}",
    )

    onestep_payload = {
        "trials": args.trials,
        "filter_on_worst": worst_on,
        "filter_off_exceeding": hits,
        "filter_off_deviations": [max(d.theta_dev, d.w_dev) for d in off],
    }
    manifest.add(out / "onestep.json").write_text(
        json.dumps(onestep_payload, indent=2) + "\n"
    )
    manifest.add(out / "trajectory.json").write_text(traj.to_json() + "\n")
    verify.write_deviation_csv(traj, manifest.add(out / "deviations.csv"))
    manifest.write(
        {
            "trials": args.trials,
            "steps": args.steps,
            "optimizer": args.optimizer,
            "learning_rate": args.learning_rate,
            "ema_tau": args.ema_tau,
            "rel_tol": args.rel_tol,
            "network": dataclasses.asdict(network),
            "data": data_echo,
        }
    )
    return 0 if ok_match and ok_control and ok_traj else 1


def cmd_verify_sylvester(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args, "verify-sylvester")
    manifest = _Manifest("verify sylvester", out, seed)

    all_ok = True
    case_payload = []
    for label, w, a, b, expected in verify.analytic_sylvester_cases(args.dim):
        report = verify.sylvester_null_space(w, a, b)
        ok = report.null_dim == expected
        all_ok &= _result_line(
            f"fixed-point case '{label}'",
            ok,
            f"null dimension {report.null_dim} (expected {expected}, "
            f"system {report.system_dim}x{report.system_dim})",
        )
        case_payload.append(
            {
                "label": label,
                "null_dim": report.null_dim,
                "expected": expected,
                "rank": report.rank,
                "system_dim": report.system_dim,
            }
        )

    if "data" in file_cfg:
        dataset, data_echo = _dataset_from(_section(file_cfg, "data"))
    else:
        dataset, data_echo = make_blobs(SyntheticBlobsSpec()), {"kind": "default-blobs"}
    identity_aug = AugmentationSpec(seed=seed)
    log.info("estimating view moments from %d identity-augmented draws", args.samples)
    est = estimate_aug_moments(dataset, identity_aug, args.samples, seed=seed)
    bound = 5.0 / np.sqrt(args.samples)
    gap = float(np.abs(est.a - est.b).max())
    all_ok &= _result_line(
        "moment agreement",
        gap <= bound,
        f"max |A - B| entry {gap:.3e} under identity views "
        f"(Monte-Carlo bound {bound:.3e}, {args.samples} draws)",
    )
    log.info(
        "moment ratio distance from identity: %.3e",
        float(np.abs(np.linalg.solve(est.a.T, est.b.T).T - np.eye(dataset.dim)).max()),
    )

    payload = {
        "cases": case_payload,
        "moment_gap": gap,
        "moment_bound": bound,
        "samples": args.samples,
        "rank_deficient_moments": est.rank_deficient,
    }
    manifest.add(out / "sylvester.json").write_text(json.dumps(payload, indent=2) + "\n")
    manifest.write({"dim": args.dim, "samples": args.samples, "data": data_echo})
    return 0 if all_ok else 1


def cmd_verify_gradcheck(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else 0
    network = (
        _network_from(file_cfg, verify.DEFAULT_VERIFY_NETWORK.input_dim)
        if "network" in file_cfg
        else verify.DEFAULT_VERIFY_NETWORK
    )
    out = _out_dir(args, "verify-gradcheck")
    manifest = _Manifest("verify gradcheck", out, seed)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
    params = verify.random_model_state(network, rng)
    batch = PositiveBatch(
        x1=rng.normal(size=(args.batch_size, network.input_dim)),
        x2=rng.normal(size=(args.batch_size, network.input_dim)),
        labels=np.zeros(args.batch_size, dtype=np.int64),
    )
    all_ok = True
    errors = {}
    for objective in ("byol", "byol_prime", "raft"):
        cfg = LossConfig(objective=objective)
        log.info("central differences for objective %s", objective)
        err = verify.finite_difference_gradcheck(
            cfg, params, batch, step=args.step, max_coords=args.max_coords, seed=seed
        )
        errors[objective] = err
        all_ok &= _result_line(
            f"gradcheck '{objective}'",
            err <= verify.FD_REL_TOL,
            f"worst relative error {err:.3e} at step {args.step:.0e} "
            f"(tolerance {verify.FD_REL_TOL:.0e})",
        )

    log.info("gradient identity for the scale-invariant cross form, %d trials", args.trials)
    trick_dev = verify.trick_identity_sweep(trials=args.trials, seed=seed)
    all_ok &= _result_line(
        "scale-invariant cross gradient",
        trick_dev <= verify.TRICK_IDENTITY_TOL,
        f"worst deviation from filtered plain gradient {trick_dev:.3e} "
        f"over {args.trials} trials (tolerance {verify.TRICK_IDENTITY_TOL:.0e})",
    )

    payload = {
        "objective_errors": errors,
        "trick_deviation": trick_dev,
        "step": args.step,
        "batch_size": args.batch_size,
    }
    manifest.add(out / "gradcheck.json").write_text(json.dumps(payload, indent=2) + "\n")
    manifest.write(
        {
            "step": args.step,
            "max_coords": args.max_coords,
            "batch_size": args.batch_size,
            "trials": args.trials,
            "network": dataclasses.asdict(network),
        }
    )
    return 0 if all_ok else 1


def cmd_make_data(args) -> int:
    file_cfg = _load_config_file(args.config)
    section = dict(_section(file_cfg, "data"))
    kind = section.pop("kind", "blobs")
    if kind != "blobs":
        raise ConfigError(
            f"make-data: only the synthetic generator writes datasets, got kind {kind!r}"
        )
    overrides = {
        "dim": args.dim,
        "classes": args.classes,
        "per_class": args.per_class,
        "noise_sigma": args.noise_sigma,
        "center_seed": args.seed,
    }
    spec = _build(SyntheticBlobsSpec, section, overrides, "data")
    dataset = make_blobs(spec)

    out = _out_dir(args, "make-data")
    manifest = _Manifest("make-data", out, spec.center_seed)
    path = manifest.add(out / "dataset.csv")
    export_dataset_csv(dataset, path)
    manifest.write({"kind": "blobs", **dataclasses.asdict(spec)})
    print(f"wrote {len(dataset)} samples of dimension {dataset.dim} to {path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument(
        "--out-dir", default=None, help="output directory (default runs/<command>)"
    )
    common.add_argument("--config", default=None, help="JSON config file")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raftlab",
        description="Self-distillation objectives with certified gradient structure.",
    )
    parser.add_argument("--version", action="version", version=f"raftlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    p = sub.add_parser("train", parents=[common], help="run a training experiment")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument(
        "--objective", choices=("byol", "byol_prime", "raft"), default=None
    )
    p.add_argument(
        "--tangential-mode",
        choices=("off", "loss_trick", "gradient_filter"),
        default=None,
    )
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--ema-tau", type=float, default=None)
    p.add_argument("--log-every", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample-count", type=int, default=512)
    p.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run a numerical certification")
    vsub = v.add_subparsers(dest="check", required=True)

    p = vsub.add_parser(
        "upper-bound", parents=[common], help="two-term objective bounds the crossed one"
    )
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_verify_upper_bound)

    p = vsub.add_parser(
        "correspondence",
        parents=[common],
        help="mirrored attract/repel runs share encoder trajectories",
    )
    p.add_argument("--trials", type=int, default=100, help="one-step check count")
    p.add_argument("--steps", type=int, default=200, help="trajectory length")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--ema-tau", type=float, default=0.996)
    p.add_argument("--rel-tol", type=float, default=verify.TRAJECTORY_REL_TOL)
    p.set_defaults(func=cmd_verify_correspondence)

    p = vsub.add_parser(
        "sylvester", parents=[common], help="fixed-point system rank analysis"
    )
    p.add_argument("--dim", type=int, default=4, help="side length of analytic cases")
    p.add_argument("--samples", type=int, default=20000, help="moment draws")
    p.set_defaults(func=cmd_verify_sylvester)

    p = vsub.add_parser(
        "gradcheck", parents=[common], help="tape gradients against central differences"
    )
    p.add_argument("--step", type=float, default=verify.FD_STEP)
    p.add_argument("--max-coords", type=int, default=10000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--trials", type=int, default=100, help="gradient identity trials")
    p.set_defaults(func=cmd_verify_gradcheck)

    p = sub.add_parser("make-data", parents=[common], help="write the synthetic dataset")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.set_defaults(func=cmd_make_data)

    return parser


def main(argv=None) -> int:
    try:
        _configure_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except RaftLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
