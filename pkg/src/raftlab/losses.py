"""Objectives over paired unit-norm representations.

All losses are built from tape ops, so calling them on tracked tensors gives
gradients and calling them on constants gives plain evaluation. Rows are
expected to be unit-norm (the model normalizes before these are applied);
distances are nevertheless computed directly rather than through the
cosine shortcut, so slightly off-sphere inputs stay well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import ConfigError, ContractError, InsufficientBatchError, NearOrthogonalError
from .tape import Tensor

OBJECTIVES = ("byol", "byol_prime", "raft")
TANGENTIAL_MODES = ("off", "loss_trick", "gradient_filter")

# Coupling temperature for the pairwise-repulsion diagnostic.
DEFAULT_UNIFORMITY_T = 2.0

# Uniformity above this marks a representation cloud as collapsed; sits
# between observed collapsed values (around -0.1) and healthy ones (around -2).
COLLAPSE_UNIFORMITY_THRESHOLD = -0.2

# |lambda| below this means the online and target rows are numerically
# orthogonal and the rescaled-distance form would divide by noise.
LAMBDA_EPS = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Which objective to optimize and how its terms are weighted.

    tangential_mode selects how radial gradient components are suppressed:
    "off" does nothing, "loss_trick" swaps each online-vs-target distance for
    its rescaled form whose gradient is automatically tangential, and
    "gradient_filter" asks the model forward to project gradients at the
    normalized outputs instead.
    """

    objective: str = "byol_prime"
    alpha: float = 1.0
    beta: float = 1.0
    uniformity_t: float = DEFAULT_UNIFORMITY_T
    symmetrize_views: bool = True
    tangential_mode: str = "off"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(
                f"objective: unknown value {self.objective!r}, expected one of {OBJECTIVES}"
            )
        if not self.alpha > 0:
            raise ConfigError(f"alpha: must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise ConfigError(f"beta: must be positive, got {self.beta}")
        if not self.uniformity_t > 0:
            raise ConfigError(f"uniformity_t: must be positive, got {self.uniformity_t}")
        if self.tangential_mode not in TANGENTIAL_MODES:
            raise ConfigError(
                f"tangential_mode: unknown value {self.tangential_mode!r}, "
                f"expected one of {TANGENTIAL_MODES}"
            )


def align_loss(p1, p2) -> Tensor:
    """Mean squared distance between the two views' online outputs.

    Lives in [0, 4] for unit rows; 0 iff the views match row for row.
    """
    return T.batch_mean(T.squared_distance(p1, p2))


def uniform_loss(z, t: float = DEFAULT_UNIFORMITY_T) -> Tensor:
    """log of the mean Gaussian-kernel affinity over ordered distinct pairs.

    For unit rows the value lies in [-4t, 0]; it reaches 0 when every row
    coincides, so it acts as the collapse detector. Needs at least two rows.
    """
    z = T.as_tensor(z)
    if float(t) <= 0:
        raise ConfigError(f"uniformity t: must be positive, got {t}")
    if z.ndim != 2:
        raise ContractError(f"uniform_loss: needs a matrix, got shape {z.shape}")
    n = z.shape[0]
    if n < 2:
        raise InsufficientBatchError(f"uniform_loss: needs >= 2 rows, got {n}")
    sq = T.row_dot(z, z)
    gram = T.matmul(z, T.transpose(z))
    # D_ij = |z_i|^2 + |z_j|^2 - 2 <z_i, z_j>, assembled without broadcasting
    # so every step stays on the tape.
    d = T.row_add(T.transpose(T.row_add(T.transpose(T.scale(gram, -2.0)), sq)), sq)
    kernel = T.exp(T.scale(d, -float(t)))
    # The diagonal contributes exp(0) = 1 per row; subtract it to keep only
    # the ordered distinct pairs.
    off_diag = T.add_scalar(T.sum_all(kernel), -float(n))
    return T.log(T.scale(off_diag, 1.0 / (n * (n - 1))))


def cross_model_loss(p, zbar) -> Tensor:
    """Mean squared distance between online and target outputs of one view."""
    return T.batch_mean(T.squared_distance(p, zbar))


def tangential_cross_model(p, zbar, lambda_eps: float = LAMBDA_EPS) -> Tensor:
    """Rescaled online-vs-target distance |zbar - lambda p|^2 / lambda with
    lambda = <p, zbar> held out of the gradient.

    Its p-gradient equals the plain cross_model_loss gradient with the radial
    component removed, which is the whole point of the form. Rows where
    |lambda| < lambda_eps are numerically orthogonal and raise.
    """
    p = T.as_tensor(p)
    zbar = T.as_tensor(zbar)
    lam = T.stop_gradient(T.row_dot(p, zbar))
    small = np.abs(lam.data) < lambda_eps
    if np.any(small):
        worst = int(np.argmin(np.abs(lam.data)))
        raise NearOrthogonalError(
            f"tangential_cross_model: row {worst} has <p, zbar> = "
            f"{lam.data[worst]:.3e}, below threshold {lambda_eps}"
        )
    per_row = T.div(T.squared_distance(zbar, T.scale_rows(p, lam)), lam)
    return T.batch_mean(per_row)


def byol_loss(p1, zbar2, p2=None, zbar1=None, symmetrize: bool = True) -> Tensor:
    """Crossed-view bootstrap loss: view-1 online against view-2 target,
    averaged with the swapped pairing when symmetrize is set."""
    first = cross_model_loss(p1, zbar2)
    if not symmetrize:
        return first
    if p2 is None or zbar1 is None:
        raise ContractError("byol_loss: symmetrized form needs p2 and zbar1")
    return T.scale(T.add(first, cross_model_loss(p2, zbar1)), 0.5)


@dataclass(frozen=True)
class LossParts:
    """Optimized objective plus its plain diagnostic components.

    align and cross are always the unmodified geometric quantities, even when
    the total was assembled from the rescaled tangential form.
    """

    total: Tensor
    align: Tensor
    cross: Tensor


def objective_terms(cfg: LossConfig, p1, p2, zbar1, zbar2) -> LossParts:
    """Assemble the configured objective from the four view outputs.

    p1, p2 are the online outputs of the two views; zbar1, zbar2 the target
    outputs of the matching views.
    """
    align = align_loss(p1, p2)
    cross = _paired_cross(cross_model_loss, p1, p2, zbar1, zbar2, cfg.symmetrize_views)
    if cfg.tangential_mode == "loss_trick":
        cross_term = _paired_cross(
            tangential_cross_model, p1, p2, zbar1, zbar2, cfg.symmetrize_views
        )
    else:
        cross_term = cross

    if cfg.objective == "byol":
        if cfg.tangential_mode == "loss_trick":
            total = _crossed_views(tangential_cross_model, p1, p2, zbar1, zbar2,
                                   cfg.symmetrize_views)
        else:
            total = _crossed_views(cross_model_loss, p1, p2, zbar1, zbar2,
                                   cfg.symmetrize_views)
    elif cfg.objective == "byol_prime":
        total = T.add(T.scale(align, cfg.alpha), T.scale(cross_term, cfg.beta))
    else:  # raft
        total = T.sub(T.scale(align, cfg.alpha), T.scale(cross_term, cfg.beta))
    return LossParts(total=total, align=align, cross=cross)


def total_loss(cfg: LossConfig, p1, p2, zbar1, zbar2) -> Tensor:
    return objective_terms(cfg, p1, p2, zbar1, zbar2).total


def _paired_cross(term, p1, p2, zbar1, zbar2, symmetrize: bool) -> Tensor:
    # Same-view pairing: online view i against target view i.
    if not symmetrize:
        return term(p1, zbar1)
    return T.scale(T.add(term(p1, zbar1), term(p2, zbar2)), 0.5)


def _crossed_views(term, p1, p2, zbar1, zbar2, symmetrize: bool) -> Tensor:
    # Crossed pairing: online view 1 against target view 2 and vice versa.
    if not symmetrize:
        return term(p1, zbar2)
    return T.scale(T.add(term(p1, zbar2), term(p2, zbar1)), 0.5)
