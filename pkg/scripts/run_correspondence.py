#!/usr/bin/env python3
"""Trace mirrored attract/repel training runs and report their divergence.

Starts the attract-form and the repel-form objectives from mirrored
parameter states (shared encoder, negated linear predictor) with the
radial gradient component removed, runs both full-batch trajectories side
by side — EMA teacher included — and writes the per-step deviation trace.
The two runs should coincide to floating-point accuracy: the encoders stay
equal and the predictors stay exact negatives of each other.

Exit status is 0 iff the worst relative deviation stays within tolerance.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from raftlab.verify import (
    TRAJECTORY_REL_TOL,
    trajectory_correspondence_experiment,
    write_deviation_csv,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--optimizer", default="sgd", choices=["sgd", "adam"])
    parser.add_argument("--learning-rate", type=float, default=1e-2)
    parser.add_argument("--ema-tau", type=float, default=0.996)
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--beta", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--out-dir", type=Path, default=REPO_ROOT / "runs" / "correspondence",
        help="where the JSON report and deviation trace go",
    )
    args = parser.parse_args(argv)

    report = trajectory_correspondence_experiment(
        steps=args.steps,
        seed=args.seed,
        optimizer=args.optimizer,
        learning_rate=args.learning_rate,
        ema_tau=args.ema_tau,
        alpha=args.alpha,
        beta=args.beta,
    )

    rel_theta = report.max_theta_dev / report.theta_scale
    rel_w = report.max_w_dev / report.w_scale
    ok = report.within_relative(TRAJECTORY_REL_TOL)
    print(
        f"{args.steps} {args.optimizer} steps at lr {args.learning_rate}, "
        f"EMA tau {args.ema_tau}"
    )
    print(
        f"encoder deviation   max {report.max_theta_dev:.3e} "
        f"(relative {rel_theta:.3e})"
    )
    print(f"predictor deviation max {report.max_w_dev:.3e} (relative {rel_w:.3e})")
    print(
        f"gradient deviation  max {max(max(report.grad_theta_dev), max(report.grad_w_dev)):.3e}"
    )
    print(
        f"{'PASS' if ok else 'FAIL'}  mirrored trajectories within relative "
        f"{TRAJECTORY_REL_TOL:.0e}"
    )

    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "correspondence_report.json").write_text(report.to_json() + "\n")
    write_deviation_csv(report, args.out_dir / "deviation_trace.csv")
    print(f"report and per-step trace written under {args.out_dir}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
