"""Online network (backbone, projector, predictor), its EMA teacher, and
checkpoint serialization.

Parameter layout is a flat ordered dict of named float64 arrays. Weight
matrices are stored (fan_in, fan_out) and applied as x @ W. The teacher is a
shape-identical copy of the backbone and projector under the "target." prefix;
it is evaluated as constants, so no gradient can ever reach it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tape as T
from .errors import ConfigError, EmptyBatchError, FormatError, ShapeError
from .tape import Tape, Tensor

PREDICTOR_KINDS = ("mlp", "linear", "identity")
PREDICTOR_INITS = ("random", "identity", "mirrored")

CHECKPOINT_MAGIC = b"RAFTCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Shapes and wiring of the model.

    The backbone is an MLP with ReLU on its hidden layers and a plain linear
    output at representation_dim. The projector is Linear+ReLU+Linear with
    hidden width equal to representation_dim, and its output is normalized to
    give z. The predictor consumes the unnormalized projector output:
    "linear" is a single bias-free square matrix, "mlp" mirrors the
    projector's two-layer shape, "identity" passes through (so p coincides
    with z).
    """

    input_dim: int
    backbone_widths: tuple[int, ...] = (64, 64)
    representation_dim: int = 32
    projection_dim: int = 16
    predictor: str = "linear"
    predictor_init: str = "random"

    def __post_init__(self):
        object.__setattr__(self, "backbone_widths", tuple(self.backbone_widths))
        for field_name in ("input_dim", "representation_dim", "projection_dim"):
            v = getattr(self, field_name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{field_name}: must be a positive int, got {v!r}")
        for w in self.backbone_widths:
            if not isinstance(w, int) or w < 1:
                raise ConfigError(f"backbone_widths: bad width {w!r}")
        if self.predictor not in PREDICTOR_KINDS:
            raise ConfigError(
                f"predictor: unknown kind {self.predictor!r}, expected one of {PREDICTOR_KINDS}"
            )
        if self.predictor_init not in PREDICTOR_INITS:
            raise ConfigError(
                f"predictor_init: unknown mode {self.predictor_init!r}, "
                f"expected one of {PREDICTOR_INITS}"
            )
        if self.predictor_init in ("identity", "mirrored") and self.predictor != "linear":
            raise ConfigError(
                f"predictor_init: {self.predictor_init!r} needs the linear predictor "
                f"(a square matrix), got kind {self.predictor!r}"
            )

    @property
    def predictor_hidden(self) -> int:
        return self.representation_dim

    def backbone_dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.backbone_widths, self.representation_dim]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass
class ModelParams:
    """A named-parameter snapshot. Treat the arrays as immutable; every
    update path in this package builds a new dict instead of writing in
    place."""

    spec: NetworkSpec
    values: dict[str, np.ndarray]

    def online_names(self) -> list[str]:
        return [
            n
            for n in self.values
            if n.startswith(("backbone.", "projector."))
        ]

    def predictor_names(self) -> list[str]:
        return [n for n in self.values if n.startswith("predictor")]

    def trainable_names(self) -> list[str]:
        return [n for n in self.values if not n.startswith("target.")]

    def target_names(self) -> list[str]:
        return [n for n in self.values if n.startswith("target.")]

    def clone(self) -> "ModelParams":
        return ModelParams(self.spec, {k: v.copy() for k, v in self.values.items()})


def _online_layer_names(spec: NetworkSpec) -> list[tuple[str, tuple[int, int], bool]]:
    """(prefix, (fan_in, fan_out), has_bias) for backbone+projector+predictor."""
    out = []
    for i, dims in enumerate(spec.backbone_dims()):
        out.append((f"backbone.{i}", dims, True))
    r, p = spec.representation_dim, spec.projection_dim
    out.append(("projector.0", (r, r), True))
    out.append(("projector.1", (r, p), True))
    if spec.predictor == "linear":
        out.append(("predictor", (p, p), False))
    elif spec.predictor == "mlp":
        h = spec.predictor_hidden
        out.append(("predictor.0", (p, h), True))
        out.append(("predictor.1", (h, p), True))
    return out


def init_params(spec: NetworkSpec, seed: int, predictor_w0: np.ndarray | None = None) -> ModelParams:
    """Draw weight matrices from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    start biases at zero, and copy backbone+projector into the teacher.

    Zero biases keep the layer means proportional to the propagated signal,
    so normalized representations start spread out instead of clustered
    around a bias-dominated direction.

    predictor_w0 is consumed only by predictor_init="mirrored": the predictor
    becomes exactly -predictor_w0.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    values: dict[str, np.ndarray] = {}
    for prefix, (fan_in, fan_out), has_bias in _online_layer_names(spec):
        bound = 1.0 / np.sqrt(fan_in)
        if prefix == "predictor" and spec.predictor_init == "identity":
            values["predictor.w"] = np.eye(fan_in)
            continue
        if prefix == "predictor" and spec.predictor_init == "mirrored":
            if predictor_w0 is None:
                raise ConfigError(
                    "predictor_init: 'mirrored' needs the predictor_w0 matrix to negate"
                )
            w0 = np.asarray(predictor_w0, dtype=np.float64)
            if w0.shape != (fan_in, fan_out):
                raise ConfigError(
                    f"predictor_w0: expected shape {(fan_in, fan_out)}, got {w0.shape}"
                )
            values["predictor.w"] = -w0
            continue
        values[f"{prefix}.w"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        if has_bias:
            values[f"{prefix}.b"] = np.zeros(fan_out)
    for name in list(values):
        if name.startswith(("backbone.", "projector.")):
            values[f"target.{name}"] = values[name].copy()
    return ModelParams(spec, values)


def mirror_predictor(params: ModelParams) -> ModelParams:
    """Copy of the snapshot with the linear predictor negated; the teacher
    and the rest of theta are shared bit for bit."""
    if params.spec.predictor != "linear":
        raise ConfigError("mirror_predictor: needs the linear predictor kind")
    out = params.clone()
    out.values["predictor.w"] = -params.values["predictor.w"]
    return out


def bind_params(tp: Tape, params: ModelParams) -> dict[str, Tensor]:
    """Register every trainable array as a leaf on the tape.

    Bind once per tape and reuse across both view forwards so gradient
    contributions from the two views accumulate onto the same leaves.
    """
    return {name: tp.leaf(params.values[name]) for name in params.trainable_names()}


def _check_batch(spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(
            f"expected a batch shaped (n, {spec.input_dim}), got {x.shape}"
        )
    if x.shape[0] == 0:
        raise EmptyBatchError("forward: empty batch")
    return x


def apply_mlp(table: Mapping, prefix: str, x, n_layers: int, activation_last: bool):
    out = x
    for i in range(n_layers):
        out = T.add(T.matmul(out, T.as_tensor(table[f"{prefix}.{i}.w"])),
                    T.as_tensor(table[f"{prefix}.{i}.b"]))
        if activation_last or i + 1 < n_layers:
            out = T.relu(out)
    return out


def forward_online(
    params: ModelParams,
    x,
    leaves: Mapping[str, Tensor] | None = None,
    tangent_filter: bool = False,
) -> tuple[Tensor, Tensor, Tensor]:
    """Run the online path; returns (h, z, p).

    h is the backbone output (linear last layer), z the normalized projector
    output, p the normalized predictor output (the same node as z for the
    identity predictor). Pass `leaves` from bind_params to record on a tape;
    without it everything evaluates as constants. tangent_filter inserts a
    backward-only projection at the normalized outputs, leaving forward
    values untouched.
    """
    spec = params.spec
    x = _check_batch(spec, x)
    table: Mapping = leaves if leaves is not None else params.values
    h = apply_mlp(table, "backbone", T.as_tensor(x), len(spec.backbone_dims()), False)
    z_pre = apply_mlp(table, "projector", h, 2, False)
    z = T.l2_normalize(z_pre)
    if spec.predictor == "identity":
        p = T.tangent_gate(z) if tangent_filter else z
        return h, z, p
    if spec.predictor == "linear":
        p_pre = T.matmul(z_pre, T.as_tensor(table["predictor.w"]))
    else:
        p_pre = apply_mlp(table, "predictor", z_pre, 2, False)
    p = T.l2_normalize(p_pre)
    if tangent_filter:
        p = T.tangent_gate(p)
    return h, z, p


def forward_target(params: ModelParams, x) -> Tensor:
    """Teacher forward: backbone+projector under the target parameters,
    normalized. Evaluated entirely as constants, which is what makes the
    teacher a stop-gradient: no tape node exists for anything it computes."""
    spec = params.spec
    x = _check_batch(spec, x)
    table = {
        name[len("target."):]: value
        for name, value in params.values.items()
        if name.startswith("target.")
    }
    h = apply_mlp(table, "backbone", T.constant(x), len(spec.backbone_dims()), False)
    z_pre = apply_mlp(table, "projector", h, 2, False)
    return T.l2_normalize(z_pre)


def ema_update(params: ModelParams, tau: float) -> ModelParams:
    """Teacher update: target <- tau * target + (1 - tau) * online."""
    tau = float(tau)
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"ema_tau: must lie in [0, 1], got {tau}")
    values = dict(params.values)
    for name in params.target_names():
        online = params.values[name[len("target."):]]
        values[name] = tau * params.values[name] + (1.0 - tau) * online
    return ModelParams(params.spec, values)


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(params: ModelParams, path):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(params.values)))
        for name, arr in params.values.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("checkpoint: truncated file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> ModelParams:
    """Parse a checkpoint and rebuild the NetworkSpec from the stored names
    and shapes. The predictor init mode is not stored (it only matters at
    init time) and comes back as "random"."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError("checkpoint: bad magic bytes")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint: unsupported format version {version}")
    count = r.u32()
    values: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u64() for _ in range(rank))
        n_items = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(n_items * 8), dtype="<f8").reshape(shape)
        values[name] = arr.astype(np.float64)
    if r.pos != len(blob):
        raise FormatError("checkpoint: trailing bytes after last parameter")
    return ModelParams(_spec_from_values(values), values)


def _spec_from_values(values: dict[str, np.ndarray]) -> NetworkSpec:
    try:
        n_backbone = 0
        while f"backbone.{n_backbone}.w" in values:
            n_backbone += 1
        if n_backbone == 0:
            raise FormatError("checkpoint: no backbone layers")
        dims = [values[f"backbone.{i}.w"].shape for i in range(n_backbone)]
        input_dim = dims[0][0]
        widths = tuple(int(d[1]) for d in dims[:-1])
        rep_dim = int(dims[-1][1])
        proj_dim = int(values["projector.1.w"].shape[1])
        if "predictor.w" in values:
            kind = "linear"
        elif "predictor.0.w" in values:
            kind = "mlp"
        else:
            kind = "identity"
        spec = NetworkSpec(
            input_dim=int(input_dim),
            backbone_widths=widths,
            representation_dim=rep_dim,
            projection_dim=proj_dim,
            predictor=kind,
        )
    except (KeyError, ConfigError) as exc:
        raise FormatError(f"checkpoint: inconsistent parameter set ({exc})") from exc
    expected = {name for name, _, _ in _expected_entries(spec)}
    got = set(values)
    if expected != got:
        raise FormatError(
            f"checkpoint: parameter names do not form a valid model "
            f"(missing {sorted(expected - got)}, extra {sorted(got - expected)})"
        )
    for name, shape, _ in _expected_entries(spec):
        if values[name].shape != shape:
            raise FormatError(
                f"checkpoint: {name} has shape {values[name].shape}, expected {shape}"
            )
    return spec


def _expected_entries(spec: NetworkSpec):
    out = []
    for prefix, (fan_in, fan_out), has_bias in _online_layer_names(spec):
        out.append((f"{prefix}.w", (fan_in, fan_out), True))
        if has_bias:
            out.append((f"{prefix}.b", (fan_out,), True))
    for name, shape, _ in list(out):
        if name.startswith(("backbone.", "projector.")):
            out.append((f"target.{name}", shape, True))
    return out
