"""Differentiable surrogate of a search strategy.

The model maps a strategy parameter vector (normalized to [-1, 1] per
dimension) through a small tanh MLP to outcome statistics: per-probe
conditional hit probabilities for probe search, or a success probability and
an expected search duration for spiral search. The environment is captured in
the weights, not the inputs; training/finetuning on execution records
conditions the model on the concrete hole distribution. Failure probability
and expected cycle time have closed forms in these statistics, so both can be
minimized by gradient descent through the same graph that training uses.
"""
from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import adgraph as ag
from .adgraph import Tensor
from .errors import ContractError, IntegrityError
from .rng import TAG_WEIGHTS, make_rng
from .sim import (
    DEFAULT_TIMING,
    ExecutionRecord,
    N_PROBE_POINTS,
    ParamBounds,
    StrategyKind,
    StrategyParams,
    TimingConfig,
    default_bounds,
)

logger = logging.getLogger("shadowsearch.shadow")

HIDDEN_SIZES = (128, 128, 128)
LAMBDA_TAU = 0.1
DURATION_SCALE = 10.0  # seconds; spiral duration head predicts duration/scale

# strictly-lower cumulative matrix: (SP @ _CUM)[n, k] = sum_{j<k} SP[n, j]
_CUM_PREV = np.triu(np.ones((N_PROBE_POINTS, N_PROBE_POINTS)), k=1)
_ONES_ROW = np.ones((N_PROBE_POINTS, 1))


class ShadowModel:
    """MLP surrogate with per-kind structure; weights are AD leaves.

    Probe models share one point encoder across the 16 touch points: the
    conditional hit probability of probe k is a learned 2D field evaluated at
    touch point k. This weight tying is what lets a finetune on passively
    collected data (one fixed pattern) reshape the predicted landscape at
    *other* patterns: each observed (touch point, hit) pair is evidence about
    the field near that location, not about one output unit of a monolithic
    vector regression. Spiral models map the full 8D parameter vector through
    the same stack of hidden layers to a success head and a duration head.
    """

    def __init__(self, kind: StrategyKind, bounds: ParamBounds, weights: list[Tensor],
                 duration_scale: float = DURATION_SCALE, meta: dict | None = None):
        self.kind = kind
        self.bounds = bounds
        self.weights = weights
        self.duration_scale = duration_scale
        self.meta = dict(meta or {})

    # -- construction -------------------------------------------------------

    @classmethod
    def initialize(cls, kind: StrategyKind, seed: int = 0,
                   bounds: ParamBounds | None = None) -> "ShadowModel":
        kind = StrategyKind(kind)
        bounds = bounds if bounds is not None else default_bounds(kind)
        rng = make_rng(seed, TAG_WEIGHTS)
        in_dim = 2 if kind is StrategyKind.PROBE else kind.param_dim
        sizes = [in_dim, *HIDDEN_SIZES]
        weights: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights += _init_layer(rng, fan_in, fan_out)
        if kind is StrategyKind.PROBE:
            weights += _init_layer(rng, sizes[-1], 1)  # per-point hit logit
        else:
            weights += _init_layer(rng, sizes[-1], 1)  # success head
            weights += _init_layer(rng, sizes[-1], 1)  # duration head
        return cls(kind, bounds, weights, meta={"seed": int(seed)})

    def copy(self) -> "ShadowModel":
        return ShadowModel(
            self.kind,
            self.bounds,
            [ag.leaf(w.data.copy()) for w in self.weights],
            self.duration_scale,
            dict(self.meta),
        )

    # -- forward ------------------------------------------------------------

    def normalize(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds.lo, self.bounds.hi
        return 2.0 * (x - lo) / (hi - lo) - 1.0

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds.lo, self.bounds.hi
        return (z + 1.0) * 0.5 * (hi - lo) + lo

    def forward_logits(self, z: Tensor):
        """Normalized inputs (n, d) -> raw head outputs, on the tape."""
        if z.data.ndim != 2 or z.shape[1] != self.kind.param_dim:
            raise ContractError(
                f"expected (n, {self.kind.param_dim}) inputs, got {z.shape}"
            )
        n_hidden = len(HIDDEN_SIZES)
        base = 2 * n_hidden
        if self.kind is StrategyKind.PROBE:
            n = z.shape[0]
            h = ag.reshape(z, (n * N_PROBE_POINTS, 2))
            for i in range(n_hidden):
                h = ag.tanh(ag.affine(h, self.weights[2 * i], self.weights[2 * i + 1]))
            logits = ag.affine(h, self.weights[base], self.weights[base + 1])
            return ag.reshape(logits, (n, N_PROBE_POINTS))
        h = z
        for i in range(n_hidden):
            h = ag.tanh(ag.affine(h, self.weights[2 * i], self.weights[2 * i + 1]))
        zs = ag.affine(h, self.weights[base], self.weights[base + 1])
        zd = ag.affine(h, self.weights[base + 2], self.weights[base + 3])
        return zs, zd


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> list[Tensor]:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return [ag.leaf(w), ag.leaf(b)]


@dataclass
class OutcomeStats:
    """Predicted outcome statistics, still attached to the tape.

    Probe: q[k] is the probability probe k hits given probes 1..k-1 missed.
    Spiral: p_success plus the expected search duration tau (seconds).
    """

    kind: StrategyKind
    logits: Tensor | None = None          # probe: (1, 16)
    success_logit: Tensor | None = None   # spiral: (1, 1)
    duration_raw: Tensor | None = None    # spiral: (1, 1) pre-softplus
    duration_scale: float = DURATION_SCALE
    input_tensor: Tensor | None = None    # normalized input leaf, for x-grads

    @property
    def q(self) -> Tensor:
        if self.kind is not StrategyKind.PROBE:
            raise ContractError("q is defined for probe stats only")
        return ag.sigmoid(self.logits)

    @property
    def p_success(self) -> Tensor:
        if self.kind is not StrategyKind.SPIRAL:
            raise ContractError("p_success is defined for spiral stats only")
        return ag.sigmoid(self.success_logit)

    @property
    def tau(self) -> Tensor:
        if self.kind is not StrategyKind.SPIRAL:
            raise ContractError("tau is defined for spiral stats only")
        return ag.scale(ag.softplus(self.duration_raw), self.duration_scale)

    @classmethod
    def from_probs(cls, q) -> "OutcomeStats":
        q = np.asarray(q, dtype=np.float64).reshape(1, -1)
        if q.shape[1] != N_PROBE_POINTS or np.any(q <= 0) or np.any(q >= 1):
            raise ContractError("q must be 16 probabilities strictly in (0,1)")
        return cls(kind=StrategyKind.PROBE, logits=ag.leaf(np.log(q / (1.0 - q))))

    @classmethod
    def from_spiral(cls, p_success: float, tau: float,
                    duration_scale: float = DURATION_SCALE) -> "OutcomeStats":
        if not 0.0 < p_success < 1.0 or tau <= 0:
            raise ContractError("need p_success in (0,1) and tau > 0")
        zs = np.log(p_success / (1.0 - p_success))
        zd = np.log(np.expm1(tau / duration_scale))
        return cls(
            kind=StrategyKind.SPIRAL,
            success_logit=ag.leaf(np.full((1, 1), zs)),
            duration_raw=ag.leaf(np.full((1, 1), zd)),
            duration_scale=duration_scale,
        )


def predict(model: ShadowModel, x: StrategyParams | np.ndarray) -> OutcomeStats:
    """Forward pass for one parameter vector; gradients are available both
    for the weights (training) and the normalized input leaf (inversion)."""
    vec = x.to_vector() if hasattr(x, "to_vector") else np.asarray(x, dtype=np.float64)
    if vec.shape != (model.kind.param_dim,):
        raise ContractError(f"parameter vector shape {vec.shape} != ({model.kind.param_dim},)")
    if not model.bounds.contains(vec):
        logger.warning("input outside parameter bounds; clamping")
        vec = model.bounds.clip(vec)
    z = ag.leaf(model.normalize(vec)[None, :])
    if model.kind is StrategyKind.PROBE:
        logits = model.forward_logits(z)
        return OutcomeStats(kind=model.kind, logits=logits, input_tensor=z)
    zs, zd = model.forward_logits(z)
    return OutcomeStats(
        kind=model.kind,
        success_logit=zs,
        duration_raw=zd,
        duration_scale=model.duration_scale,
        input_tensor=z,
    )


# -- derived metrics (batched forms used by inversion) -----------------------


def probe_fail_from_logits(logits: Tensor) -> Tensor:
    """(n, 16) logits -> (n, 1) failure probability prod_k (1 - q_k).

    Computed as exp(-sum_k softplus(z_k)), which is the same product in a
    numerically safe form.
    """
    return ag.exp(ag.scale(ag.tsum(ag.softplus(logits), axis=1), -1.0))


def probe_cycle_from_logits(logits: Tensor, timing: TimingConfig = DEFAULT_TIMING) -> Tensor:
    """(n, 16) logits -> (n, 1) expected duration of the probe chain."""
    sp = ag.softplus(logits)
    cum_prev = ag.matmul(sp, ag.constant(_CUM_PREV))     # sum_{j<k} softplus(z_j)
    reach = ag.exp(ag.scale(cum_prev, -1.0))             # P(reach probe k)
    expected_probes = ag.matmul(reach, ag.constant(_ONES_ROW))
    p_fail = probe_fail_from_logits(logits)
    return (
        ag.scale(expected_probes, timing.t_probe)
        + ag.scale(p_fail, timing.t_fail)
        + timing.t_setup
    )


def spiral_fail_from_logits(success_logit: Tensor) -> Tensor:
    return ag.sigmoid(ag.scale(success_logit, -1.0))


def spiral_cycle_from_logits(success_logit: Tensor, duration_raw: Tensor,
                             duration_scale: float,
                             timing: TimingConfig = DEFAULT_TIMING) -> Tensor:
    tau = ag.scale(ag.softplus(duration_raw), duration_scale)
    return tau + ag.scale(spiral_fail_from_logits(success_logit), timing.t_fail)


def derived_fail(stats: OutcomeStats) -> Tensor:
    """Scalar failure probability, differentiable."""
    if stats.kind is StrategyKind.PROBE:
        return ag.tsum(probe_fail_from_logits(stats.logits))
    return ag.tsum(spiral_fail_from_logits(stats.success_logit))


def derived_cycle(stats: OutcomeStats, timing: TimingConfig = DEFAULT_TIMING) -> Tensor:
    """Scalar expected cycle time (seconds), differentiable."""
    if stats.kind is StrategyKind.PROBE:
        return ag.tsum(probe_cycle_from_logits(stats.logits, timing))
    return ag.tsum(
        spiral_cycle_from_logits(
            stats.success_logit, stats.duration_raw, stats.duration_scale, timing
        )
    )


# -- training loss ------------------------------------------------------------


def batch_inputs(model: ShadowModel, records: list[ExecutionRecord]) -> np.ndarray:
    return np.stack([model.normalize(r.params.to_vector()) for r in records])


def record_arrays(model: ShadowModel, records: list[ExecutionRecord]):
    """Precompute (inputs, targets, mask) arrays for repeated batching.

    Probe: (x, hit flags, probed mask), each (n, 16)-shaped where applicable.
    Spiral: (x, success flags (n,1), normalized durations (n,1)).
    """
    if not records:
        raise ContractError("record_arrays: empty record list")
    if any(r.kind is not model.kind for r in records):
        raise ContractError("record_arrays: heterogeneous strategy kinds")
    x = batch_inputs(model, records)
    if model.kind is StrategyKind.PROBE:
        y = np.array([[float(h) for _, h in r.probe_outcomes] for r in records])
        mask = np.array([[float(p) for p, _ in r.probe_outcomes] for r in records])
        return x, y, mask
    y = np.array([[float(r.success)] for r in records])
    dur = np.array([[r.duration / model.duration_scale] for r in records])
    return x, y, dur


def loss_from_arrays(model: ShadowModel, x: np.ndarray, y: np.ndarray,
                     aux: np.ndarray) -> Tensor:
    """Batch loss from precomputed arrays; see training_loss for semantics."""
    n = x.shape[0]
    xt = ag.constant(x)
    if model.kind is StrategyKind.PROBE:
        logits = model.forward_logits(xt)
        # BCE from logits: softplus(z) - y*z, restricted to probed entries
        bce = ag.mul(ag.constant(aux), ag.softplus(logits) - ag.mul(ag.constant(y), logits))
        return ag.scale(ag.tsum(bce), 1.0 / n)
    zs, zd = model.forward_logits(xt)
    bce = ag.softplus(zs) - ag.mul(ag.constant(y), zs)
    resid = ag.softplus(zd) - ag.constant(aux)
    sq = ag.mul(ag.constant(y), ag.mul(resid, resid))
    return ag.scale(ag.tsum(bce) + ag.scale(ag.tsum(sq), LAMBDA_TAU), 1.0 / n)


def training_loss(model: ShadowModel, records: list[ExecutionRecord]) -> Tensor:
    """Self-supervised loss over a batch of execution records.

    Probe: binary cross-entropy of each conditional hit probability against
    the observed outcome, restricted to indices that were actually probed.
    Spiral: cross-entropy on success plus a success-masked squared error on
    the normalized search duration.
    """
    x, y, aux = record_arrays(model, records)
    return loss_from_arrays(model, x, y, aux)


# -- checkpoint format --------------------------------------------------------

_CKPT_MAGIC = b"SSCK"
_CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIBBdQQQQI")


def save_checkpoint(model: ShadowModel, path) -> None:
    kind_code = 0 if model.kind is StrategyKind.SPIRAL else 1
    meta = model.meta
    shapes = b"".join(
        struct.pack("<B", w.data.ndim) + struct.pack(f"<{w.data.ndim}I", *w.data.shape)
        for w in model.weights
    )
    body = b"".join(w.data.astype("<f8").tobytes() for w in model.weights)
    norm = model.bounds.lo.astype("<f8").tobytes() + model.bounds.hi.astype("<f8").tobytes()
    head = _CKPT_HEAD.pack(
        _CKPT_MAGIC,
        _CKPT_VERSION,
        kind_code,
        len(model.weights),
        model.duration_scale,
        int(meta.get("m_tasks", 0)),
        int(meta.get("n_per_task", 0)),
        int(meta.get("seed", 0)),
        int(meta.get("finetune_seed", 0)),
        zlib.crc32(body),
    )
    with open(path, "wb") as f:
        f.write(head)
        f.write(shapes)
        f.write(norm)
        f.write(body)


def load_checkpoint(path) -> ShadowModel:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _CKPT_HEAD.size:
        raise IntegrityError(f"{path}: truncated checkpoint")
    magic, version, kind_code, n_weights, dscale, m_tasks, n_per, seed, ft_seed, crc = (
        _CKPT_HEAD.unpack_from(raw)
    )
    if magic != _CKPT_MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    if version != _CKPT_VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    kind = StrategyKind.SPIRAL if kind_code == 0 else StrategyKind.PROBE
    off = _CKPT_HEAD.size
    shapes = []
    for _ in range(n_weights):
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        shapes.append(shape)
    d = kind.param_dim
    lo = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    hi = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    body = raw[off:]
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"{path}: checksum mismatch")
    weights = []
    pos = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
        weights.append(ag.leaf(arr))
    meta = {"m_tasks": m_tasks, "n_per_task": n_per, "seed": seed, "finetune_seed": ft_seed}
    return ShadowModel(kind, ParamBounds(lo, hi), weights, dscale, meta)
