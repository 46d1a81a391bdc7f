"""Scripted simulator for spiral and probe search executions.

Contact is a pure distance predicate: a probe or spiral vertex finds the hole
iff it comes within the region's hole clearance. Durations come from a fixed
per-probe cost (probe search) or a trapezoidal velocity profile over traversed
arc length (spiral search). Simulations are pure functions of (params, hole,
timing); all sampling lives in the caller.
"""
from __future__ import annotations

import enum
import io
import struct
import threading
import zlib
from dataclasses import dataclass

import numpy as np

from .envproc import GaussianMixture2D, HolePose, HoleProcess
from .errors import ConfigError, ContractError, IntegrityError
from .rng import TAG_ORACLE, TAG_PARAMS, make_rng


@dataclass(frozen=True)
class SearchRegion:
    """Square search region geometry (mm)."""

    half_extent: float = 10.0
    hole_clearance: float = 0.5

    def __post_init__(self):
        if self.half_extent <= 0:
            raise ContractError("half_extent must be > 0")
        if not 0.0 < self.hole_clearance < self.half_extent:
            raise ContractError("hole_clearance must be in (0, half_extent)")


DEFAULT_REGION = SearchRegion()


@dataclass(frozen=True)
class TimingConfig:
    """Fixed timing costs (seconds)."""

    t_setup: float = 0.5
    t_probe: float = 0.8
    t_fail: float = 1.0


DEFAULT_TIMING = TimingConfig()

N_PROBE_POINTS = 16


class StrategyKind(str, enum.Enum):
    SPIRAL = "spiral"
    PROBE = "probe"

    @property
    def param_dim(self) -> int:
        return 8 if self is StrategyKind.SPIRAL else 2 * N_PROBE_POINTS


@dataclass(frozen=True)
class ParamBounds:
    """Box bounds on the flattened parameter vector."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
            raise ContractError("bounds must satisfy lo < hi elementwise")

    @property
    def dim(self) -> int:
        return self.lo.size

    def clip(self, vec: np.ndarray) -> np.ndarray:
        return np.clip(vec, self.lo, self.hi)

    def contains(self, vec: np.ndarray, atol: float = 1e-9) -> bool:
        return bool(np.all(vec >= self.lo - atol) and np.all(vec <= self.hi + atol))

    def sample_uniform(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))


def default_bounds(kind: StrategyKind, region: SearchRegion = DEFAULT_REGION) -> ParamBounds:
    h = region.half_extent
    if kind is StrategyKind.PROBE:
        return ParamBounds(np.full(32, -h), np.full(32, h))
    lo = np.array([-h, -h, -np.pi / 2, 0.5, 0.5, 1.0, 5.0, 50.0])
    hi = np.array([h, h, np.pi / 2, h, h, 12.0, 50.0, 500.0])
    return ParamBounds(lo, hi)


@dataclass(frozen=True)
class SpiralParams:
    """Elliptical Archimedean spiral: center, orientation, semi-axes (a, b),
    winding count, motion velocity and acceleration."""

    center: tuple[float, float]
    orientation: float
    extents: tuple[float, float]
    windings: float
    velocity: float
    acceleration: float

    def __post_init__(self):
        a, b = self.extents
        if a <= 0 or b <= 0 or self.windings <= 0 or self.velocity <= 0 or self.acceleration <= 0:
            raise ContractError(f"spiral parameters must be positive: {self}")

    @property
    def kind(self) -> StrategyKind:
        return StrategyKind.SPIRAL

    def to_vector(self) -> np.ndarray:
        return np.array(
            [
                self.center[0],
                self.center[1],
                self.orientation,
                self.extents[0],
                self.extents[1],
                self.windings,
                self.velocity,
                self.acceleration,
            ]
        )

    @classmethod
    def from_vector(cls, v) -> "SpiralParams":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (8,):
            raise ContractError(f"spiral vector must have shape (8,), got {v.shape}")
        return cls(
            center=(float(v[0]), float(v[1])),
            orientation=float(v[2]),
            extents=(float(v[3]), float(v[4])),
            windings=float(v[5]),
            velocity=float(v[6]),
            acceleration=float(v[7]),
        )

    def validate(self, region: SearchRegion = DEFAULT_REGION):
        h = region.half_extent
        if abs(self.center[0]) > h or abs(self.center[1]) > h:
            raise ContractError(f"spiral center {self.center} outside region +-{h}")


@dataclass(frozen=True)
class ProbeParams:
    """Ordered touch points for probe search; exactly 16 XY points."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (N_PROBE_POINTS, 2):
            raise ContractError(f"probe needs {N_PROBE_POINTS} XY points, got {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def kind(self) -> StrategyKind:
        return StrategyKind.PROBE

    def to_vector(self) -> np.ndarray:
        return self.points.reshape(-1).copy()

    @classmethod
    def from_vector(cls, v) -> "ProbeParams":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (32,):
            raise ContractError(f"probe vector must have shape (32,), got {v.shape}")
        return cls(points=v.reshape(N_PROBE_POINTS, 2))

    def validate(self, region: SearchRegion = DEFAULT_REGION):
        if np.any(np.abs(self.points) > region.half_extent + 1e-9):
            raise ContractError("probe points outside search region")

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


StrategyParams = SpiralParams | ProbeParams


def params_from_vector(kind: StrategyKind, v) -> StrategyParams:
    return SpiralParams.from_vector(v) if kind is StrategyKind.SPIRAL else ProbeParams.from_vector(v)


@dataclass(frozen=True)
class ExecutionRecord:
    """Outcome of one simulated search execution."""

    params: StrategyParams
    hole: HolePose
    success: bool
    success_index: float | None  # 1-based probe index, or spiral contact angle
    duration: float
    probe_outcomes: tuple[tuple[bool, bool], ...] | None = None  # (probed, hit) x16

    @property
    def kind(self) -> StrategyKind:
        return self.params.kind


def validate_record(rec: ExecutionRecord) -> None:
    """Check the per-record invariants; raises ContractError on violation."""
    if rec.duration <= 0:
        raise ContractError("duration must be positive")
    if rec.kind is StrategyKind.PROBE:
        if rec.probe_outcomes is None or len(rec.probe_outcomes) != N_PROBE_POINTS:
            raise ContractError("probe record needs 16 (probed, hit) outcomes")
        hit_seen = False
        for probed, hit in rec.probe_outcomes:
            if hit and not probed:
                raise ContractError("hit implies probed")
            if hit_seen and probed:
                raise ContractError("no probing after the first hit")
            hit_seen = hit_seen or hit
        if rec.success != hit_seen:
            raise ContractError("success must equal 'some probe hit'")
    else:
        if rec.success != (rec.success_index is not None):
            raise ContractError("spiral success must equal 'contact parameter exists'")


# ---------------------------------------------------------------------------
# Execution metering: harness code charges simulator calls to a method budget.

_meters = threading.local()


class ExecutionMeter:
    """Counts simulate_* calls made while installed via `metered`."""

    def __init__(self):
        self.count = 0


class metered:
    def __init__(self, meter: ExecutionMeter):
        self.meter = meter

    def __enter__(self) -> ExecutionMeter:
        stack = getattr(_meters, "stack", None)
        if stack is None:
            stack = _meters.stack = []
        stack.append(self.meter)
        return self.meter

    def __exit__(self, *exc):
        _meters.stack.pop()
        return False


def _charge_executions(n: int = 1) -> None:
    stack = getattr(_meters, "stack", None)
    if stack:
        stack[-1].count += n


# ---------------------------------------------------------------------------
# Probe search


def simulate_probe(
    params: ProbeParams,
    hole: HolePose,
    timing: TimingConfig = DEFAULT_TIMING,
    region: SearchRegion = DEFAULT_REGION,
) -> ExecutionRecord:
    """Touch points in order until one lands within clearance of the hole."""
    params.validate(region)
    _charge_executions()
    d = np.linalg.norm(params.points - hole.xy, axis=1)
    hits = d <= region.hole_clearance
    outcomes = []
    success_index = None
    for k in range(N_PROBE_POINTS):
        if success_index is not None:
            outcomes.append((False, False))
            continue
        if hits[k]:
            success_index = k + 1
            outcomes.append((True, True))
        else:
            outcomes.append((True, False))
    if success_index is not None:
        duration = timing.t_setup + success_index * timing.t_probe
    else:
        duration = timing.t_setup + N_PROBE_POINTS * timing.t_probe + timing.t_fail
    return ExecutionRecord(
        params=params,
        hole=hole,
        success=success_index is not None,
        success_index=success_index,
        duration=duration,
        probe_outcomes=tuple(outcomes),
    )


# ---------------------------------------------------------------------------
# Spiral search


def spiral_path(
    params: SpiralParams, region: SearchRegion = DEFAULT_REGION
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Discretized spiral: (points (n,2), cumulative arc length (n,), theta (n,)).

    The angle step is chosen from the analytic speed bound |q'(theta)| <=
    max(a,b)/(2 pi n) * sqrt(1 + theta_max^2) so that no polyline segment
    exceeds clearance/4; the distance predicate then cannot tunnel past a hole.
    """
    a, b = params.extents
    theta_max = 2.0 * np.pi * params.windings
    c = max(a, b) / theta_max
    max_seg = region.hole_clearance / 4.0
    speed_bound = c * np.sqrt(1.0 + theta_max**2)
    n_steps = max(8, int(np.ceil(theta_max * speed_bound / max_seg)))
    theta = np.linspace(0.0, theta_max, n_steps + 1)
    r = theta / theta_max
    xs = a * r * np.cos(theta)
    ys = b * r * np.sin(theta)
    phi = params.orientation
    cp, sp = np.cos(phi), np.sin(phi)
    pts = np.empty((theta.size, 2))
    pts[:, 0] = params.center[0] + cp * xs - sp * ys
    pts[:, 1] = params.center[1] + sp * xs + cp * ys
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cumlen = np.concatenate([[0.0], np.cumsum(seg)])
    return pts, cumlen, theta


def trapezoid_time(arc_len, velocity: float, acceleration: float):
    """Travel time under a symmetric trapezoidal velocity profile.

    Accelerate at `acceleration` to `velocity`, cruise, decelerate; moves too
    short to reach cruise speed follow a triangular profile.
    """
    s = np.asarray(arc_len, dtype=np.float64)
    s_crit = velocity * velocity / acceleration  # accel + decel distance
    tri = 2.0 * np.sqrt(s / acceleration)
    trap = s / velocity + velocity / acceleration
    out = np.where(s <= s_crit, tri, trap)
    return float(out) if np.isscalar(arc_len) or s.ndim == 0 else out


def simulate_spiral(
    params: SpiralParams,
    hole: HolePose,
    timing: TimingConfig = DEFAULT_TIMING,
    region: SearchRegion = DEFAULT_REGION,
) -> ExecutionRecord:
    """Slide along the spiral until passing within clearance of the hole."""
    params.validate(region)
    _charge_executions()
    pts, cumlen, theta = spiral_path(params, region)
    d2 = np.einsum("ij,ij->i", pts - hole.xy, pts - hole.xy)
    within = d2 <= region.hole_clearance**2
    if within.any():
        i = int(np.argmax(within))
        duration = timing.t_setup + trapezoid_time(cumlen[i], params.velocity, params.acceleration)
        return ExecutionRecord(
            params=params,
            hole=hole,
            success=True,
            success_index=float(theta[i]),
            duration=duration,
            probe_outcomes=None,
        )
    duration = (
        timing.t_setup
        + trapezoid_time(cumlen[-1], params.velocity, params.acceleration)
        + timing.t_fail
    )
    return ExecutionRecord(
        params=params,
        hole=hole,
        success=False,
        success_index=None,
        duration=duration,
        probe_outcomes=None,
    )


def simulate(
    params: StrategyParams,
    hole: HolePose,
    timing: TimingConfig = DEFAULT_TIMING,
    region: SearchRegion = DEFAULT_REGION,
) -> ExecutionRecord:
    if isinstance(params, ProbeParams):
        return simulate_probe(params, hole, timing, region)
    return simulate_spiral(params, hole, timing, region)


# ---------------------------------------------------------------------------
# Ground-truth oracle

_ORACLE_CHUNK = 256


def success_prob_oracle(
    params: StrategyParams,
    mixture: GaussianMixture2D,
    n_samples: int,
    seed: int = 0,
    timing: TimingConfig = DEFAULT_TIMING,
    region: SearchRegion = DEFAULT_REGION,
) -> tuple[float, float]:
    """Monte-Carlo (success probability, mean duration) for params vs mixture.

    Vectorized but outcome-identical to per-sample simulate_* calls; used only
    for reporting and for evolutionary fitness, never charged to method data
    budgets (callers meter separately when appropriate).
    """
    if n_samples < 1:
        raise ContractError("n_samples must be >= 1")
    rng = make_rng(seed, TAG_ORACLE)
    holes = mixture.sample(rng, n_samples)
    clear2 = region.hole_clearance**2
    if isinstance(params, ProbeParams):
        params.validate(region)
        diff = holes[:, None, :] - params.points[None, :, :]
        within = np.einsum("nkj,nkj->nk", diff, diff) <= clear2
        any_hit = within.any(axis=1)
        first = np.argmax(within, axis=1)  # 0-based index of first hit
        durations = np.where(
            any_hit,
            timing.t_setup + (first + 1) * timing.t_probe,
            timing.t_setup + N_PROBE_POINTS * timing.t_probe + timing.t_fail,
        )
        return float(any_hit.mean()), float(durations.mean())
    params.validate(region)
    pts, cumlen, _ = spiral_path(params, region)
    success = np.zeros(n_samples, dtype=bool)
    arc = np.full(n_samples, cumlen[-1])
    for start in range(0, n_samples, _ORACLE_CHUNK):
        chunk = holes[start : start + _ORACLE_CHUNK]
        diff = chunk[:, None, :] - pts[None, :, :]
        within = np.einsum("nij,nij->ni", diff, diff) <= clear2
        hit = within.any(axis=1)
        first = np.argmax(within, axis=1)
        success[start : start + _ORACLE_CHUNK] = hit
        arc[start : start + _ORACLE_CHUNK] = np.where(hit, cumlen[first], cumlen[-1])
    times = timing.t_setup + trapezoid_time(arc, params.velocity, params.acceleration)
    durations = np.where(success, times, times + timing.t_fail)
    return float(success.mean()), float(durations.mean())


# ---------------------------------------------------------------------------
# Task datasets

_DATASET_MAGIC = b"SSDS"
_DATASET_VERSION = 1


@dataclass
class TaskDataset:
    """Execution records collected against one hole process."""

    kind: StrategyKind
    records: list[ExecutionRecord]
    mixture: GaussianMixture2D | None = None

    def __len__(self) -> int:
        return len(self.records)


def uniform_params_sampler(kind: StrategyKind, seed: int, region: SearchRegion = DEFAULT_REGION):
    """Sampler drawing params uniformly from the box bounds (pretraining mode)."""
    bounds = default_bounds(kind, region)
    rng = make_rng(seed, TAG_PARAMS)
    def sample() -> StrategyParams:
        return params_from_vector(kind, bounds.sample_uniform(rng, 1)[0])
    return sample


def fixed_params_sampler(params: StrategyParams):
    """Sampler repeating one fixed parameterization (passive mode)."""
    def sample() -> StrategyParams:
        return params
    return sample


def collect_task_dataset(
    process: HoleProcess,
    params_sampler,
    n: int,
    timing: TimingConfig = DEFAULT_TIMING,
    region: SearchRegion = DEFAULT_REGION,
) -> TaskDataset:
    """Execute the sampled params n times; the process advances once per
    execution (each record observes the distribution of its own timestep)."""
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    mixture = process.current_mixture()
    records = []
    for _ in range(n):
        params = params_sampler()
        hole = process.sample_hole()
        records.append(simulate(params, hole, timing, region))
        process.advance()
    return TaskDataset(kind=records[0].kind, records=records, mixture=mixture)


# Binary record layout (little-endian):
#   header: magic 4s | version u32 | kind u8 | n u64 | param_dim u32 | crc32 u32
#   per record: params f64*dim | hole f64*2 | success u8 | success_index f64
#              | duration f64 | probed u16 bitmask | hit u16 bitmask
_HEADER = struct.Struct("<4sIBQII")


def _pack_records(ds: TaskDataset) -> bytes:
    dim = ds.kind.param_dim
    rec_struct = struct.Struct(f"<{dim}d2dBddHH")
    buf = io.BytesIO()
    for rec in ds.records:
        probed = hit = 0
        if rec.probe_outcomes is not None:
            for i, (p, h) in enumerate(rec.probe_outcomes):
                probed |= int(p) << i
                hit |= int(h) << i
        idx = -1.0 if rec.success_index is None else float(rec.success_index)
        buf.write(
            rec_struct.pack(
                *rec.params.to_vector(),
                rec.hole.x,
                rec.hole.y,
                int(rec.success),
                idx,
                rec.duration,
                probed,
                hit,
            )
        )
    return buf.getvalue()


def save_dataset(ds: TaskDataset, path) -> None:
    body = _pack_records(ds)
    kind_code = 0 if ds.kind is StrategyKind.SPIRAL else 1
    header = _HEADER.pack(
        _DATASET_MAGIC, _DATASET_VERSION, kind_code, len(ds.records), ds.kind.param_dim,
        zlib.crc32(body),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(body)


def load_dataset(path) -> TaskDataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{path}: truncated dataset header")
    magic, version, kind_code, n, dim, crc = _HEADER.unpack_from(raw)
    if magic != _DATASET_MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    if version != _DATASET_VERSION:
        raise IntegrityError(f"{path}: unsupported dataset version {version}")
    kind = StrategyKind.SPIRAL if kind_code == 0 else StrategyKind.PROBE
    if dim != kind.param_dim:
        raise IntegrityError(f"{path}: param dimension {dim} inconsistent with {kind}")
    body = raw[_HEADER.size :]
    if zlib.crc32(body) != crc:
        raise IntegrityError(f"{path}: checksum mismatch")
    rec_struct = struct.Struct(f"<{dim}d2dBddHH")
    if len(body) != n * rec_struct.size:
        raise IntegrityError(f"{path}: body length {len(body)} != {n} records")
    records = []
    for off in range(0, len(body), rec_struct.size):
        vals = rec_struct.unpack_from(body, off)
        params = params_from_vector(kind, np.array(vals[:dim]))
        hx, hy, success, idx, duration, probed, hit = vals[dim:]
        outcomes = None
        if kind is StrategyKind.PROBE:
            outcomes = tuple(
                (bool(probed >> i & 1), bool(hit >> i & 1)) for i in range(N_PROBE_POINTS)
            )
        success_index = None if idx < 0 else (int(idx) if kind is StrategyKind.PROBE else idx)
        records.append(
            ExecutionRecord(
                params=params,
                hole=HolePose(hx, hy),
                success=bool(success),
                success_index=success_index,
                duration=duration,
                probe_outcomes=outcomes,
            )
        )
    return TaskDataset(kind=kind, records=records)


def export_dataset_csv(ds: TaskDataset, path) -> None:
    """Lossless CSV mirror of the binary dataset, for inspection."""
    dim = ds.kind.param_dim
    cols = [f"p{i}" for i in range(dim)]
    cols += ["hole_x", "hole_y", "success", "success_index", "duration", "probed_bits", "hit_bits"]
    lines = [",".join(cols)]
    for rec in ds.records:
        probed = hit = 0
        if rec.probe_outcomes is not None:
            for i, (p, h) in enumerate(rec.probe_outcomes):
                probed |= int(p) << i
                hit |= int(h) << i
        idx = -1.0 if rec.success_index is None else float(rec.success_index)
        vals = [repr(float(v)) for v in rec.params.to_vector()]
        vals += [repr(rec.hole.x), repr(rec.hole.y), str(int(rec.success)), repr(idx),
                 repr(rec.duration), str(probed), str(hit)]
        lines.append(",".join(vals))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
