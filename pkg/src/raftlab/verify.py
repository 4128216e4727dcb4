"""Numerical certification of the package's three structural claims.

1. Upper bound: at any shared forward state, the crossed-view objective is
   bounded by (1/alpha + 1/beta) times the two-term objective, with equality
   at total collapse.

2. Mirror correspondence: with the attract-form started at (theta0, W0) and
   the repel-form at (theta0, -W0), the encoder trajectories coincide and the
   predictor trajectories negate. The construction needs three conditions:
   (i) representations are compared on the unit hypersphere, (ii) the
   predictor is a single linear map, (iii) only the gradient component
   tangential to each representation is kept. gradient_correspondence_check
   certifies the one-step gradient identity on raw (unnormalized) outputs,
   where condition iii has to be enforced explicitly and switching it off is
   a meaningful negative control; trajectory_correspondence_experiment runs
   the full production training loop, whose in-graph normalization already
   realizes conditions i and iii.

3. Fixed-point analysis: the linear fixed-point equation W theta =
   theta (B A^-1) has non-trivial solutions exactly when W and B A^-1 share
   an eigenvalue; detected via the rank of the explicit Kronecker system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tape as T
from .data import AugmentationSpec, Dataset, PositiveBatch, make_blobs, SyntheticBlobsSpec
from .errors import ContractError, ShapeError, SingularMomentError
from .losses import (
    LossConfig,
    align_loss,
    cross_model_loss,
    objective_terms,
    tangential_cross_model,
)
from .model import (
    ModelParams,
    NetworkSpec,
    apply_mlp,
    bind_params,
    forward_online,
    forward_target,
    init_params,
    mirror_predictor,
)
from .train import TrainConfig, train_run

# Margin below -MARGIN_TOLERANCE falsifies the upper bound.
MARGIN_TOLERANCE = 1e-9

DEFAULT_WEIGHT_GRID = (0.1, 0.5, 1.0, 2.0, 10.0)

# One-step mirror check: with the filter on, gradients must agree to this;
# with it off, a trial only counts as a working negative control when the
# deviation clears CONTROL_MIN_DEVIATION, and at least
# CONTROL_REQUIRED_FRACTION of trials must do so.
ONESTEP_MATCH_TOL = 1e-10
CONTROL_MIN_DEVIATION = 1e-4
CONTROL_REQUIRED_FRACTION = 0.95

# Full-trajectory deviation budget, relative to parameter scale.
TRAJECTORY_REL_TOL = 1e-6

# Central-difference certification of analytic gradients.
FD_STEP = 1e-5
FD_REL_TOL = 1e-4

# Gradient identity between the scale-invariant cross form and the
# explicitly filtered plain form.
TRICK_IDENTITY_TOL = 1e-10

# Compact model used by the certification harnesses by default.
DEFAULT_VERIFY_NETWORK = NetworkSpec(
    input_dim=8,
    backbone_widths=(16,),
    representation_dim=12,
    projection_dim=8,
    predictor="linear",
)

# Explicit Kronecker systems are capped at this side length per factor.
MAX_SYLVESTER_DIM = 12

DEFAULT_PIVOT_TOL = 1e-10

LINEAR_PREDICTOR_MESSAGE = "condition ii: predictor must be linear"


def _require_linear_predictor(spec: NetworkSpec):
    if spec.predictor != "linear":
        raise ContractError(LINEAR_PREDICTOR_MESSAGE)


# ---------------------------------------------------------------------------
# upper bound


@dataclass(frozen=True)
class StateLosses:
    """Plain loss values at one forward state."""

    align: float
    cross: float
    byol: float


def state_losses(params: ModelParams, batch: PositiveBatch) -> StateLosses:
    """Evaluate alignment, same-view cross, and crossed-view objective on
    one shared forward pass."""
    _, _, p1 = forward_online(params, batch.x1)
    _, _, p2 = forward_online(params, batch.x2)
    zbar1 = forward_target(params, batch.x1)
    zbar2 = forward_target(params, batch.x2)
    align = align_loss(p1, p2).item()
    cross = 0.5 * (
        cross_model_loss(p1, zbar1).item() + cross_model_loss(p2, zbar2).item()
    )
    byol = 0.5 * (
        cross_model_loss(p1, zbar2).item() + cross_model_loss(p2, zbar1).item()
    )
    return StateLosses(align=align, cross=cross, byol=byol)


def margin_from_losses(alpha: float, beta: float, losses: StateLosses) -> float:
    """(1/alpha + 1/beta) * (alpha*align + beta*cross) - byol."""
    if not (alpha > 0 and beta > 0):
        raise ContractError(f"weights must be positive, got alpha={alpha}, beta={beta}")
    two_term = alpha * losses.align + beta * losses.cross
    return (1.0 / alpha + 1.0 / beta) * two_term - losses.byol


def check_upper_bound(
    alpha: float, beta: float, params: ModelParams, batch: PositiveBatch
) -> float:
    """Margin of the bound at one state; negative beyond MARGIN_TOLERANCE
    would be a counterexample."""
    return margin_from_losses(alpha, beta, state_losses(params, batch))


@dataclass(frozen=True)
class UpperBoundReport:
    trials: int
    batch_size: int
    grid: tuple[float, ...]
    min_margin: float
    worst_trial: int
    worst_alpha: float
    worst_beta: float

    @property
    def passed(self) -> bool:
        return self.min_margin >= -MARGIN_TOLERANCE

    def to_json(self) -> str:
        return json.dumps(
            {
                "trials": self.trials,
                "batch_size": self.batch_size,
                "grid": list(self.grid),
                "min_margin": self.min_margin,
                "worst_trial": self.worst_trial,
                "worst_alpha": self.worst_alpha,
                "worst_beta": self.worst_beta,
                "margin_tolerance": MARGIN_TOLERANCE,
                "passed": self.passed,
            },
            indent=2,
        )


def random_model_state(spec: NetworkSpec, rng: np.random.Generator) -> ModelParams:
    """Independent online and teacher parameters (the teacher is replaced by
    a second draw so the two paths genuinely differ).

    Biases are re-drawn from the weight law rather than left at their zero
    training default: the certifications quantify over generic parameter
    positions, and nonzero biases also keep every ReLU path almost surely
    alive, so no sampled state can hit the degenerate zero-representation
    guard."""
    s1, s2 = (int(v) for v in rng.integers(0, 2**63, size=2))
    params = init_params(spec, s1)
    donor = init_params(spec, s2)
    values = dict(params.values)
    for name in params.target_names():
        values[name] = donor.values[name]
    for name, arr in values.items():
        if name.endswith(".b"):
            fan_in = values[name[:-2] + ".w"].shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            values[name] = rng.uniform(-bound, bound, size=arr.shape)
    return ModelParams(spec, values)


def upper_bound_sweep(
    trials: int = 1000,
    seed: int = 0,
    grid: Sequence[float] = DEFAULT_WEIGHT_GRID,
    network: NetworkSpec | None = None,
    batch_size: int = 16,
) -> UpperBoundReport:
    """Randomized search for a counterexample to the bound over a grid of
    (alpha, beta) weights; the per-state forward is shared across the grid."""
    if trials < 1:
        raise ContractError(f"trials: need >= 1, got {trials}")
    network = network or DEFAULT_VERIFY_NETWORK
    grid = tuple(float(g) for g in grid)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 21]))
    min_margin = float("inf")
    worst = (0, grid[0], grid[0])
    for trial in range(trials):
        params = random_model_state(network, rng)
        batch = PositiveBatch(
            x1=rng.normal(size=(batch_size, network.input_dim)),
            x2=rng.normal(size=(batch_size, network.input_dim)),
            labels=np.zeros(batch_size, dtype=np.int64),
        )
        losses = state_losses(params, batch)
        for alpha in grid:
            for beta in grid:
                margin = margin_from_losses(alpha, beta, losses)
                if margin < min_margin:
                    min_margin = margin
                    worst = (trial, alpha, beta)
    return UpperBoundReport(
        trials=trials,
        batch_size=batch_size,
        grid=grid,
        min_margin=min_margin,
        worst_trial=worst[0],
        worst_alpha=worst[1],
        worst_beta=worst[2],
    )


# ---------------------------------------------------------------------------
# mirror correspondence: one-step gradient identity


@dataclass(frozen=True)
class GradientDeviations:
    """max |g_theta difference| and max |g_W sum| between the two forms."""

    theta_dev: float
    w_dev: float
    filter_on: bool


def _raw_online_outputs(params: ModelParams, x: np.ndarray, leaves, gate: bool):
    # Unnormalized forward: backbone, projector, then the linear predictor,
    # with no l2 step. Condition iii only has teeth here, because nothing
    # else removes radial gradient components.
    spec = params.spec
    h = apply_mlp(leaves, "backbone", T.constant(np.asarray(x, dtype=np.float64)),
                  len(spec.backbone_dims()), False)
    z_pre = apply_mlp(leaves, "projector", h, 2, False)
    out = T.matmul(z_pre, leaves["predictor.w"])
    return T.tangent_gate(out) if gate else out


def _raw_target_outputs(params: ModelParams, x: np.ndarray) -> T.Tensor:
    table = {
        name[len("target."):]: value
        for name, value in params.values.items()
        if name.startswith("target.")
    }
    h = apply_mlp(table, "backbone", T.constant(np.asarray(x, dtype=np.float64)),
                  len(params.spec.backbone_dims()), False)
    return apply_mlp(table, "projector", h, 2, False)


def _raw_gradients(
    params: ModelParams,
    batch: PositiveBatch,
    cross_sign: float,
    gate: bool,
    alpha: float,
    beta: float,
) -> dict[str, np.ndarray]:
    tp = T.Tape()
    leaves = bind_params(tp, params)
    out1 = _raw_online_outputs(params, batch.x1, leaves, gate)
    out2 = _raw_online_outputs(params, batch.x2, leaves, gate)
    t1 = _raw_target_outputs(params, batch.x1)
    t2 = _raw_target_outputs(params, batch.x2)
    align = align_loss(out1, out2)
    cross = T.scale(
        T.add(cross_model_loss(out1, t1), cross_model_loss(out2, t2)), 0.5
    )
    total = T.add(T.scale(align, alpha), T.scale(cross, cross_sign * beta))
    grads = tp.backward(total)
    return {name: grads[leaf] for name, leaf in leaves.items()}


def gradient_correspondence_check(
    params: ModelParams,
    batch: PositiveBatch,
    apply_filter: bool = True,
    alpha: float = 1.0,
    beta: float = 1.0,
) -> GradientDeviations:
    """Evaluate the attract-form at (theta, W) and the repel-form at
    (theta, -W) on the same batch with the same teacher, and measure how far
    the encoder gradients are from equal and the predictor gradients from
    opposite. With the tangential filter on, both deviations sit at rounding
    level; with it off, the differing radial components surface."""
    _require_linear_predictor(params.spec)
    g_attract = _raw_gradients(params, batch, +1.0, apply_filter, alpha, beta)
    mirrored = mirror_predictor(params)
    g_repel = _raw_gradients(mirrored, batch, -1.0, apply_filter, alpha, beta)
    theta_dev = 0.0
    for name in g_attract:
        if name == "predictor.w":
            continue
        theta_dev = max(theta_dev, float(np.abs(g_attract[name] - g_repel[name]).max()))
    w_dev = float(np.abs(g_attract["predictor.w"] + g_repel["predictor.w"]).max())
    return GradientDeviations(theta_dev=theta_dev, w_dev=w_dev, filter_on=apply_filter)


def gradient_correspondence_sweep(
    trials: int = 100,
    seed: int = 0,
    apply_filter: bool = True,
    network: NetworkSpec | None = None,
    batch_size: int = 8,
) -> list[GradientDeviations]:
    """Repeat the one-step mirror check across random parameter states and
    batches; teacher parameters are drawn independently of the online ones."""
    if trials < 1:
        raise ContractError(f"trials: need >= 1, got {trials}")
    network = network or DEFAULT_VERIFY_NETWORK
    _require_linear_predictor(network)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 22]))
    out = []
    for _ in range(trials):
        params = random_model_state(network, rng)
        batch = PositiveBatch(
            x1=rng.normal(size=(batch_size, network.input_dim)),
            x2=rng.normal(size=(batch_size, network.input_dim)),
            labels=np.zeros(batch_size, dtype=np.int64),
        )
        out.append(gradient_correspondence_check(params, batch, apply_filter))
    return out


# ---------------------------------------------------------------------------
# scale-invariant cross term vs filtered plain gradient


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def trick_gradient_identity_check(p: np.ndarray, zbar: np.ndarray) -> float:
    """Max entrywise deviation between the gradient of the scale-invariant
    cross form (distance divided by the stopped inner product) and the
    tangentially filtered gradient of the plain cross distance. Rows of p
    must be unit; the two are algebraically identical there."""
    p = np.asarray(p, dtype=np.float64)
    zbar = np.asarray(zbar, dtype=np.float64)
    tp = T.Tape()
    leaf = tp.leaf(p)
    g_trick = tp.backward(tangential_cross_model(leaf, T.constant(zbar)))[leaf]
    tp2 = T.Tape()
    leaf2 = tp2.leaf(p)
    g_plain = tp2.backward(cross_model_loss(leaf2, T.constant(zbar)))[leaf2]
    filtered = T.tangential_filter(g_plain, p)
    return float(np.abs(g_trick - filtered).max())


def trick_identity_sweep(
    trials: int = 100, seed: int = 0, batch_size: int = 16, dim: int = 8
) -> float:
    """Worst-case deviation of the gradient identity over random unit
    configurations."""
    if trials < 1:
        raise ContractError(f"trials: need >= 1, got {trials}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    worst = 0.0
    for _ in range(trials):
        p = unit_rows(rng, batch_size, dim)
        zbar = unit_rows(rng, batch_size, dim)
        worst = max(worst, trick_gradient_identity_check(p, zbar))
    return worst


# ---------------------------------------------------------------------------
# mirror correspondence: full trajectories


@dataclass(frozen=True)
class CorrespondenceReport:
    """Per-step deviations between the mirrored runs.

    theta_dev[k] and w_dev[k] compare the parameter snapshots after step k
    (index 0 is the initial state); grad_theta_dev and grad_w_dev compare the
    gradients used at each executed step. theta_scale / w_scale are the
    largest parameter magnitudes seen, for relative readings.
    """

    steps: int
    optimizer: str
    learning_rate: float
    ema_tau: float
    theta_dev: tuple[float, ...]
    w_dev: tuple[float, ...]
    grad_theta_dev: tuple[float, ...]
    grad_w_dev: tuple[float, ...]
    theta_scale: float
    w_scale: float

    @property
    def max_theta_dev(self) -> float:
        return max(self.theta_dev)

    @property
    def max_w_dev(self) -> float:
        return max(self.w_dev)

    def within_relative(self, rel_tol: float) -> bool:
        return (
            self.max_theta_dev <= rel_tol * self.theta_scale
            and self.max_w_dev <= rel_tol * self.w_scale
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "steps": self.steps,
                "optimizer": self.optimizer,
                "learning_rate": self.learning_rate,
                "ema_tau": self.ema_tau,
                "theta_dev": list(self.theta_dev),
                "w_dev": list(self.w_dev),
                "grad_theta_dev": list(self.grad_theta_dev),
                "grad_w_dev": list(self.grad_w_dev),
                "theta_scale": self.theta_scale,
                "w_scale": self.w_scale,
                "max_theta_dev": self.max_theta_dev,
                "max_w_dev": self.max_w_dev,
            },
            indent=2,
        )


def write_deviation_csv(report: CorrespondenceReport, path):
    with open(path, "w") as fh:
        fh.write("step,theta_dev,w_dev\n")
        for k, (td, wd) in enumerate(zip(report.theta_dev, report.w_dev)):
            fh.write(f"{k},{td!r},{wd!r}\n")


class _TrajectoryRecorder:
    def __init__(self):
        self.params: list[dict[str, np.ndarray]] = []
        self.grads: list[dict[str, np.ndarray]] = []

    def __call__(self, step: int, params: ModelParams, grads: dict[str, np.ndarray]):
        self.params.append(params.values)
        self.grads.append(grads)


def _theta_names(params: ModelParams) -> list[str]:
    # Encoder comparison covers the online backbone+projector and the
    # teacher copy; the teacher must track identically since it is an EMA of
    # identical trajectories.
    return [n for n in params.values if n != "predictor.w"]


def trajectory_correspondence_experiment(
    network: NetworkSpec | None = None,
    steps: int = 200,
    seed: int = 0,
    optimizer: str = "sgd",
    learning_rate: float = 1e-2,
    ema_tau: float = 0.996,
    dataset: Dataset | None = None,
    augmentation: AugmentationSpec | None = None,
    alpha: float = 1.0,
    beta: float = 1.0,
) -> CorrespondenceReport:
    """Train the attract-form and the repel-form from mirrored inits with
    identical batches and optimizer, and log how far the trajectories drift
    from the predicted correspondence (encoders equal, predictors negated).

    Defaults run full batch so the certified statement does not depend on
    batching; the optimizer can be "sgd" or "adam" (the mirror symmetry
    commutes with both: first moments negate for W, second moments match).
    """
    if steps < 0:
        raise ContractError(f"steps: need >= 0, got {steps}")
    network = network or DEFAULT_VERIFY_NETWORK
    _require_linear_predictor(network)
    dataset = dataset or make_blobs(SyntheticBlobsSpec())
    augmentation = augmentation or AugmentationSpec.symmetric(
        noise_sigma=0.1, scale=(0.9, 1.1)
    )
    params0 = init_params(network, seed)
    mirrored0 = mirror_predictor(params0)

    snapshots_a: list[dict[str, np.ndarray]] = [params0.values]
    snapshots_r: list[dict[str, np.ndarray]] = [mirrored0.values]
    grads_a: list[dict[str, np.ndarray]] = []
    grads_r: list[dict[str, np.ndarray]] = []

    if steps > 0:
        def run(objective: str, initial: ModelParams, rec: _TrajectoryRecorder):
            cfg = TrainConfig(
                network=network,
                loss=LossConfig(
                    objective=objective,
                    alpha=alpha,
                    beta=beta,
                    tangential_mode="gradient_filter",
                ),
                augmentation=augmentation,
                steps=steps,
                batch_size=len(dataset),
                optimizer=optimizer,
                learning_rate=learning_rate,
                ema_tau=ema_tau,
                master_seed=seed,
                log_every=10**9,
            )
            train_run(cfg, dataset, initial_params=initial, step_callback=rec)

        rec_a = _TrajectoryRecorder()
        run("byol_prime", params0, rec_a)
        rec_r = _TrajectoryRecorder()
        run("raft", mirrored0, rec_r)
        snapshots_a += rec_a.params
        snapshots_r += rec_r.params
        grads_a, grads_r = rec_a.grads, rec_r.grads

    names = _theta_names(params0)
    theta_dev = []
    w_dev = []
    theta_scale = 0.0
    w_scale = 0.0
    for va, vr in zip(snapshots_a, snapshots_r):
        dev = max(float(np.abs(va[n] - vr[n]).max()) for n in names)
        theta_dev.append(dev)
        w_dev.append(float(np.abs(va["predictor.w"] + vr["predictor.w"]).max()))
        theta_scale = max(
            theta_scale, max(float(np.abs(va[n]).max()) for n in names)
        )
        w_scale = max(w_scale, float(np.abs(va["predictor.w"]).max()))
    grad_theta_dev = []
    grad_w_dev = []
    for ga, gr in zip(grads_a, grads_r):
        grad_theta_dev.append(
            max(
                float(np.abs(ga[n] - gr[n]).max())
                for n in ga
                if n != "predictor.w"
            )
        )
        grad_w_dev.append(
            float(np.abs(ga["predictor.w"] + gr["predictor.w"]).max())
        )
    return CorrespondenceReport(
        steps=steps,
        optimizer=optimizer,
        learning_rate=float(learning_rate),
        ema_tau=float(ema_tau),
        theta_dev=tuple(theta_dev),
        w_dev=tuple(w_dev),
        grad_theta_dev=tuple(grad_theta_dev),
        grad_w_dev=tuple(grad_w_dev),
        theta_scale=theta_scale,
        w_scale=w_scale,
    )


# ---------------------------------------------------------------------------
# fixed-point analysis


@dataclass(frozen=True)
class SylvesterReport:
    """Rank analysis of M = I_m (x) W - (B A^-1)^T (x) I_n."""

    a: np.ndarray
    b: np.ndarray
    ba_inv: np.ndarray
    system_dim: int
    rank: int
    null_dim: int
    nontrivial: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "a": self.a.tolist(),
                "b": self.b.tolist(),
                "ba_inv": self.ba_inv.tolist(),
                "system_dim": self.system_dim,
                "rank": self.rank,
                "null_dim": self.null_dim,
                "nontrivial": self.nontrivial,
            },
            indent=2,
        )


def pivoted_rank(mat: np.ndarray, rel_tol: float = DEFAULT_PIVOT_TOL) -> int:
    """Numerical rank by Gaussian elimination with partial pivoting; pivots
    are kept when they exceed rel_tol times the largest pivot."""
    if rel_tol <= 0:
        raise ContractError(f"rel_tol: must be positive, got {rel_tol}")
    a = np.array(mat, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"pivoted_rank: needs a matrix, got shape {a.shape}")
    rows, cols = a.shape
    scale = float(np.abs(a).max()) if a.size else 0.0
    if scale == 0.0:
        return 0
    r = 0
    pivots: list[float] = []
    for c in range(cols):
        if r == rows:
            break
        lead = r + int(np.argmax(np.abs(a[r:, c])))
        piv = abs(a[lead, c])
        # Columns numerically dead relative to the matrix scale are skipped
        # instead of being eliminated with a noise pivot.
        if piv <= rel_tol * scale:
            continue
        if lead != r:
            a[[r, lead]] = a[[lead, r]]
        pivots.append(abs(a[r, c]))
        factors = a[r + 1 :, c] / a[r, c]
        a[r + 1 :, c:] -= np.outer(factors, a[r, c:])
        r += 1
    if not pivots:
        return 0
    largest = max(pivots)
    return sum(1 for p in pivots if p > rel_tol * largest)


def sylvester_null_space(
    w: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    pivot_tol: float = DEFAULT_PIVOT_TOL,
) -> SylvesterReport:
    """Build the Kronecker system for W theta = theta (B A^-1) and report its
    rank and null-space dimension. A non-trivial null space means non-zero
    encoders can satisfy the fixed-point equation, i.e. collapse to zero is
    not forced."""
    w = np.asarray(w, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"w: need a square matrix, got shape {w.shape}")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"a: need a square matrix, got shape {a.shape}")
    if b.shape != a.shape:
        raise ShapeError(f"b: shape {b.shape} does not match a {a.shape}")
    n = w.shape[0]
    m = a.shape[0]
    if n > MAX_SYLVESTER_DIM or m > MAX_SYLVESTER_DIM:
        raise ContractError(
            f"dimensions n={n}, m={m} exceed the explicit-system cap "
            f"{MAX_SYLVESTER_DIM}"
        )
    if pivot_tol <= 0:
        raise ContractError(f"pivot_tol: must be positive, got {pivot_tol}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1.0 / pivot_tol:
        raise SingularMomentError(
            f"a: condition number {cond:.3e} exceeds 1/pivot_tol = {1.0 / pivot_tol:.3e}"
        )
    ba_inv = np.linalg.solve(a.T, b.T).T
    system = np.kron(np.eye(m), w) - np.kron(ba_inv.T, np.eye(n))
    rank = pivoted_rank(system, pivot_tol)
    null_dim = n * m - rank
    return SylvesterReport(
        a=a,
        b=b,
        ba_inv=ba_inv,
        system_dim=n * m,
        rank=rank,
        null_dim=null_dim,
        nontrivial=null_dim > 0,
    )


def analytic_sylvester_cases(n: int = 4) -> list[tuple[str, np.ndarray, np.ndarray, np.ndarray, int]]:
    """Hand-checkable (label, w, a, b, expected_null_dim) instances.

    With a = b = I the moment ratio is the identity, so the system reduces
    to I (x) W - I (x) I and the null space is spanned by eigvectors of W
    at eigenvalue 1.
    """
    if not 1 <= n <= MAX_SYLVESTER_DIM:
        raise ContractError(f"n: need 1..{MAX_SYLVESTER_DIM}, got {n}")
    eye = np.eye(n)
    return [
        # every direction is fixed: the system vanishes identically
        ("identity", eye, eye, eye, n * n),
        # no shared eigenvalue (2 vs 1): only the zero map satisfies it
        ("doubled", 2.0 * eye, eye, eye, 0),
        # exactly one predictor eigenvalue matches: one free row per column
        ("partial-overlap", np.diag([1.0, 2.0]), np.eye(2), np.eye(2), 2),
    ]


# ---------------------------------------------------------------------------
# finite differences


def fd_gradients(
    fn: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    step: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradients of a scalar function of several arrays."""
    if step <= 0:
        raise ContractError(f"step: must be positive, got {step}")
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = []
    for ai, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            bumped = [a.copy() for a in arrays]
            bumped[ai].reshape(-1)[i] = flat[i] + step
            hi = fn(bumped)
            bumped[ai].reshape(-1)[i] = flat[i] - step
            lo = fn(bumped)
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max over coordinates of |analytic - numeric| / max(|a|, |n|, 1e-6)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ShapeError(
            f"gradient shapes {analytic.shape} and {numeric.shape} differ"
        )
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float((np.abs(analytic - numeric) / denom).max())


def finite_difference_gradcheck(
    loss_cfg: LossConfig,
    params: ModelParams,
    batch: PositiveBatch,
    step: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
) -> float:
    """Compare tape gradients of the configured objective against central
    differences over every trainable coordinate (a seeded subsample above
    max_coords); returns the worst relative error.

    Only tangential_mode="off" is accepted: the other modes deliberately
    change the derivative away from the derivative of the forward value, so
    a finite-difference comparison would be measuring the wrong thing. Their
    gradients are certified by the dedicated identity checks instead.
    """
    if step <= 0:
        raise ContractError(f"step: must be positive, got {step}")
    if loss_cfg.tangential_mode != "off":
        raise ContractError(
            "finite differences need tangential_mode='off'; the tangential "
            "modes redefine the derivative on purpose"
        )

    zbar1 = forward_target(params, batch.x1)
    zbar2 = forward_target(params, batch.x2)

    def loss_at(values: dict[str, np.ndarray]) -> float:
        probe = ModelParams(params.spec, values)
        _, _, p1 = forward_online(probe, batch.x1)
        _, _, p2 = forward_online(probe, batch.x2)
        return objective_terms(loss_cfg, p1, p2, zbar1, zbar2).total.item()

    tp = T.Tape()
    leaves = bind_params(tp, params)
    _, _, p1 = forward_online(params, batch.x1, leaves=leaves)
    _, _, p2 = forward_online(params, batch.x2, leaves=leaves)
    total = objective_terms(loss_cfg, p1, p2, zbar1, zbar2).total
    grads = tp.backward(total)

    coords = [
        (name, i)
        for name in params.trainable_names()
        for i in range(params.values[name].size)
    ]
    if len(coords) > max_coords:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(i)] for i in picked]

    worst = 0.0
    for name, i in coords:
        base = params.values[name]
        bumped = dict(params.values)
        plus = base.copy()
        plus.reshape(-1)[i] += step
        bumped[name] = plus
        hi = loss_at(bumped)
        minus = base.copy()
        minus.reshape(-1)[i] -= step
        bumped[name] = minus
        lo = loss_at(bumped)
        fd = (hi - lo) / (2.0 * step)
        an = float(grads[leaves[name]].reshape(-1)[i])
        err = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
        worst = max(worst, err)
    return worst
