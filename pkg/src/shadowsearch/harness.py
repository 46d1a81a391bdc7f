"""Experiment orchestration: benchmark runners, metrics CSVs, SVG overlays.

Every run is reproducible from its config: all sampling flows through seeds
derived from the config's seed fields, oracle scoring is separate from method
data budgets, and each CSV row carries the config hash so rows from different
configs can never be merged silently. Wall-clock timings are written to a
sidecar file so the metrics CSVs stay byte-identical across repeated runs.
"""
from __future__ import annotations

import enum
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import shadow as sh
from . import trainers as tr
from .cache import ArtifactCache, config_hash, resolve_cache_dir
from .envproc import (
    GaussianMixture2D,
    HoleProcess,
    MixtureSpec,
    ProcessKind,
    brownian_process,
    drift_process,
    sample_mixture,
    shift_process,
    stationary_process,
)
from .errors import ConfigError, DegenerateInputError, InsufficientDataError
from .inversion import InversionConfig, Objective, Regularizer, invert
from .plotting import plot_pattern
from .rng import derive_seed
from .sim import (
    ExecutionMeter,
    StrategyKind,
    StrategyParams,
    collect_task_dataset,
    fixed_params_sampler,
    metered,
    simulate,
    success_prob_oracle,
    uniform_params_sampler,
)

FORMAT_VERSION = 1

METRICS_HEADER = "method,seed,success_rate,mean_cycle_s,executions_used,config_hash"
STEP_HEADER = "process,method,seed,t,executed_success,oracle_success,cum_failures,config_hash"
META_HEADER = "method,task,n_adapt,heldout_bce,config_hash"


class ExperimentKind(str, enum.Enum):
    SPIRAL_STATIONARY = "spiral-stationary"
    PROBE_STATIONARY = "probe-stationary"
    PROBE_NONSTATIONARY = "probe-nonstationary"
    META_COMPARISON = "meta-comparison"


_SPIRAL_ONLY = {"pca"}
_PROBE_ONLY = {"gmm", "dpse-cdist"}
_STATIONARY_METHODS = {"dpse", "dpse-linit", "dpse-cdist", "fixed", "pca", "gmm", "nsga2"}
_META_METHODS = {"dpse", "fomaml", "reptile"}
BUFFER_CONSUMERS = {"pca", "gmm", "dpse", "dpse-linit", "dpse-cdist"}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentKind = ExperimentKind.PROBE_STATIONARY
    methods: tuple[str, ...] = ("fixed", "gmm", "nsga2", "dpse", "dpse-linit", "dpse-cdist")
    seeds: tuple[int, ...] = tuple(range(10))
    m_train: int = 200
    n_train: int = 128
    n_test: int = 128
    eval_samples: int = 10_000
    horizon: int = 100
    seed: int = 0
    out_dir: str = "runs/experiment"
    mixture: MixtureSpec = MixtureSpec()
    nsga: bl.Nsga2Config = bl.Nsga2Config(budget=300)
    pretrain: tr.TrainConfig = tr.TrainConfig.pretrain_default()
    finetune: tr.TrainConfig = tr.TrainConfig.finetune_default()
    inversion: InversionConfig = InversionConfig()
    continuous_inversion: InversionConfig = InversionConfig(steps=150, restarts=4)
    continuous_finetune: tr.TrainConfig = tr.TrainConfig(epochs=30, batch_size=64, lr=3e-4)
    processes: tuple[str, ...] = ("drift", "brownian", "shift")
    drift_offset: tuple[float, float] = (0.05, 0.0)
    brownian_stddev: float = 0.05
    p_shift: float = 0.05
    shift_max_offset: float = 2.0
    meta_eval_tasks: int = 10
    meta_heldout: int = 256

    def __post_init__(self):
        kind = ExperimentKind(self.experiment)
        if not self.methods:
            raise ConfigError("method list must not be empty")
        for c in (self.m_train, self.n_train, self.n_test, self.eval_samples, self.horizon):
            if c < 1:
                raise ConfigError("all experiment counts must be positive")
        valid = _META_METHODS if kind is ExperimentKind.META_COMPARISON else _STATIONARY_METHODS
        for m in self.methods:
            if m not in valid:
                raise ConfigError(f"method {m!r} invalid for experiment {kind.value}")
            if kind is ExperimentKind.SPIRAL_STATIONARY and m in _PROBE_ONLY:
                raise ConfigError(f"method {m!r} applies to probe search only")
            if kind in (ExperimentKind.PROBE_STATIONARY, ExperimentKind.PROBE_NONSTATIONARY):
                if m in _SPIRAL_ONLY:
                    raise ConfigError(f"method {m!r} applies to spiral search only")
        for p in self.processes:
            ProcessKind(p)

    @property
    def strategy_kind(self) -> StrategyKind:
        if ExperimentKind(self.experiment) is ExperimentKind.SPIRAL_STATIONARY:
            return StrategyKind.SPIRAL
        return StrategyKind.PROBE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["experiment"] = ExperimentKind(self.experiment).value
        d["methods"] = list(self.methods)
        d["seeds"] = list(self.seeds)
        d["processes"] = list(self.processes)
        d["nsga"] = asdict(self.nsga)
        d["format_version"] = FORMAT_VERSION
        return d

    def content_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")  # output location does not affect results
        return config_hash(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d.pop("format_version", None)
        if "mixture" in d and isinstance(d["mixture"], dict):
            d["mixture"] = MixtureSpec(**d["mixture"])
        if "nsga" in d and isinstance(d["nsga"], dict):
            d["nsga"] = bl.Nsga2Config(**d["nsga"])
        for key in ("pretrain", "finetune", "continuous_finetune"):
            if key in d and isinstance(d[key], dict):
                d[key] = tr.TrainConfig(**d[key])
        for key in ("inversion", "continuous_inversion"):
            if key in d and isinstance(d[key], dict):
                d[key] = InversionConfig(**d[key])
        for key in ("methods", "seeds", "processes", "drift_offset"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def preset(name: str) -> ExperimentConfig:
    """Desk-scale presets mirroring the benchmark protocols."""
    if name == "spiral-stationary":
        return ExperimentConfig(
            experiment=ExperimentKind.SPIRAL_STATIONARY,
            methods=("fixed", "pca", "nsga2", "dpse"),
            mixture=MixtureSpec(count_min=6, count_max=6),
            nsga=bl.Nsga2Config(mu=25, lam=25, budget=250),
            out_dir="runs/spiral-stationary",
        )
    if name == "probe-stationary":
        return ExperimentConfig(
            experiment=ExperimentKind.PROBE_STATIONARY,
            methods=("fixed", "gmm", "nsga2", "dpse", "dpse-linit", "dpse-cdist"),
            nsga=bl.Nsga2Config(mu=25, lam=25, budget=300),
            out_dir="runs/probe-stationary",
        )
    if name == "probe-nonstationary":
        return ExperimentConfig(
            experiment=ExperimentKind.PROBE_NONSTATIONARY,
            methods=("fixed", "gmm", "dpse-cdist"),
            seeds=tuple(range(5)),
            mixture=MixtureSpec(count_min=2, count_max=2),
            horizon=100,
            out_dir="runs/probe-nonstationary",
        )
    if name == "meta-comparison":
        return ExperimentConfig(
            experiment=ExperimentKind.META_COMPARISON,
            methods=("dpse", "fomaml", "reptile"),
            m_train=50,
            out_dir="runs/meta-comparison",
        )
    raise ConfigError(f"unknown preset {name!r}")


# ---------------------------------------------------------------------------
# Shared pieces


def _objective_for(kind: StrategyKind, method: str, x0: StrategyParams) -> Objective:
    alpha_cycle = 0.02 if kind is StrategyKind.SPIRAL else 0.0
    reg = Regularizer.NONE
    if method == "dpse-linit":
        reg = Regularizer.INIT
    elif method == "dpse-cdist":
        reg = Regularizer.CDIST
    return Objective(
        alpha_cycle=alpha_cycle,
        alpha_fail=1.0,
        regularizer=reg,
        x0=x0.to_vector(),
    )


def _pretrain_key(cfg: ExperimentConfig, kind: StrategyKind) -> str:
    return config_hash(
        {
            "what": "pretrain",
            "format_version": FORMAT_VERSION,
            "kind": kind.value,
            "m_train": cfg.m_train,
            "n_train": cfg.n_train,
            "mixture": asdict(cfg.mixture),
            "train": asdict(cfg.pretrain),
            "seed": cfg.seed,
            "hidden": list(sh.HIDDEN_SIZES),
        }
    )


def ensure_pretrained(cfg: ExperimentConfig, cache: ArtifactCache,
                      no_train: bool = False, out_dir: Path | None = None) -> sh.ShadowModel:
    """Load the pretrained model for this config from cache, or train it."""
    kind = cfg.strategy_kind
    key = _pretrain_key(cfg, kind)
    if cache.has_checkpoint(key):
        return cache.load_model(key)
    if no_train:
        raise ConfigError(
            f"--no-train given but no cached checkpoint for key {key}"
        )
    source = tr.build_source_dataset(
        kind, cfg.m_train, cfg.n_train,
        seed=derive_seed(cfg.seed, 11),
        mixture_spec=cfg.mixture,
    )
    loss_log: list = []
    model = tr.pretrain(source, replace(cfg.pretrain, seed=derive_seed(cfg.seed, 12)), loss_log)
    if out_dir is not None:
        tr.write_loss_log(loss_log, Path(out_dir) / f"pretrain-loss-{key}.csv")
    cache.save_model(key, model)
    return model


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: str, rows: list[list]) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt_float(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Stationary benchmark


def _stationary_method_params(
    method: str,
    cfg: ExperimentConfig,
    pretrained: sh.ShadowModel | None,
    buffer_ds,
    mixture: GaussianMixture2D,
    x0: StrategyParams,
    seed_entry: int,
) -> tuple[StrategyParams, str | None]:
    kind = cfg.strategy_kind
    if method == "fixed":
        return x0, None
    if method == "pca":
        try:
            return (
                bl.baseline_pca_spiral([r.hole for r in buffer_ds.records]),
                "oracle-privileged: fitted to ground-truth poses",
            )
        except DegenerateInputError:
            return x0, "oracle-privileged; degenerate poses, fell back to fixed"
    if method == "gmm":
        try:
            return (
                bl.baseline_gmm_probe(buffer_ds, seed=derive_seed(seed_entry, 23)),
                None,
            )
        except InsufficientDataError as exc:
            return x0, f"fell back to fixed grid: {exc}"
    if method == "nsga2":
        alpha_cycle = 0.02 if kind is StrategyKind.SPIRAL else 0.0
        result = bl.nsga2_optimize(
            kind, mixture,
            replace(cfg.nsga, seed=derive_seed(seed_entry, 24)),
            alpha_fail=1.0, alpha_cycle=alpha_cycle,
        )
        from .sim import params_from_vector

        return params_from_vector(kind, result.best.vector), None
    if method in ("dpse", "dpse-linit", "dpse-cdist"):
        if pretrained is None:
            raise ConfigError(f"method {method} needs a pretrained model")
        model = tr.finetune(
            pretrained, buffer_ds.records,
            replace(cfg.finetune, seed=derive_seed(seed_entry, 25)),
        )
        result = invert(
            model, x0, _objective_for(kind, method, x0),
            replace(cfg.inversion, seed=derive_seed(seed_entry, 26)),
        )
        return result.params, None
    raise ConfigError(f"unknown method {method!r}")


def _run_seed_stationary(cfg: ExperimentConfig, pretrained, seed_entry: int,
                         out: Path, chash: str):
    kind = cfg.strategy_kind
    mixture = sample_mixture(seed_entry, cfg.mixture)
    process = stationary_process(mixture, seed=derive_seed(seed_entry, 21))
    x0 = bl.baseline_fixed(kind)
    buf_meter = ExecutionMeter()
    with metered(buf_meter):
        buffer_ds = collect_task_dataset(process, fixed_params_sampler(x0), cfg.n_test)
    rows, notes, timings = [], [], []
    for method in cfg.methods:
        t0 = time.perf_counter()
        meter = ExecutionMeter()
        with metered(meter):
            params, note = _stationary_method_params(
                method, cfg, pretrained, buffer_ds, mixture, x0, seed_entry
            )
        executions = meter.count + (buf_meter.count if method in BUFFER_CONSUMERS else 0)
        success, cycle = success_prob_oracle(
            params, mixture, cfg.eval_samples, seed=derive_seed(seed_entry, 22)
        )
        svg = plot_pattern(mixture, params)
        (out / f"pattern-{method}-seed{seed_entry}.svg").write_text(svg)
        rows.append([method, seed_entry, float(success), float(cycle), executions, chash])
        timings.append([method, seed_entry, time.perf_counter() - t0])
        if note:
            notes.append({"method": method, "seed": seed_entry, "note": note})
    return rows, notes, timings


def run_stationary(cfg: ExperimentConfig, no_train: bool = False, threads: int = 1) -> Path:
    """Benchmark all configured methods over the seeded test distributions."""
    if ExperimentKind(cfg.experiment) not in (
        ExperimentKind.SPIRAL_STATIONARY, ExperimentKind.PROBE_STATIONARY
    ):
        raise ConfigError(f"run_stationary got experiment {cfg.experiment}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = ArtifactCache(resolve_cache_dir(out / "cache"))
    chash = cfg.content_hash()
    needs_model = any(m.startswith("dpse") for m in cfg.methods)
    pretrained = ensure_pretrained(cfg, cache, no_train, out) if needs_model else None

    def worker(seed_entry: int):
        return _run_seed_stationary(cfg, pretrained, seed_entry, out, chash)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_seed = list(pool.map(worker, cfg.seeds))
    else:
        per_seed = [worker(s) for s in cfg.seeds]

    rows = [r for seed_rows, _, _ in per_seed for r in seed_rows]
    notes = [n for _, seed_notes, _ in per_seed for n in seed_notes]
    timings = [t for _, _, seed_timings in per_seed for t in seed_timings]
    _write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    _write_aggregate(out / "aggregate.csv", rows, chash)
    _write_csv(out / "timings.csv", "method,seed,wall_clock_s", timings)
    (out / "report.json").write_text(
        json.dumps(
            {
                "config_hash": chash,
                "experiment": ExperimentKind(cfg.experiment).value,
                "methods": list(cfg.methods),
                "notes": notes,
                "config": cfg.to_dict(),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return out / "metrics.csv"


def _write_aggregate(path: Path, rows: list[list], chash: str) -> None:
    methods: dict[str, list] = {}
    for method, _, success, cycle, executions, _ in rows:
        methods.setdefault(method, []).append((success, cycle, executions))
    agg_rows = []
    for method in sorted(methods):
        vals = np.array(methods[method], dtype=np.float64)
        agg_rows.append(
            [method, float(vals[:, 0].mean()), float(vals[:, 1].mean()),
             float(vals[:, 2].mean()), chash]
        )
    _write_csv(path, "method,mean_success_rate,mean_cycle_s,mean_executions,config_hash", agg_rows)


# ---------------------------------------------------------------------------
# Nonstationary benchmark


def _make_process(cfg: ExperimentConfig, pkind: str, mixture: GaussianMixture2D,
                  seed: int) -> HoleProcess:
    p = ProcessKind(pkind)
    if p is ProcessKind.STATIONARY:
        return stationary_process(mixture, seed=seed)
    if p is ProcessKind.DRIFT:
        return drift_process(mixture, cfg.drift_offset, seed=seed)
    if p is ProcessKind.BROWNIAN:
        return brownian_process(mixture, cfg.brownian_stddev, seed=seed)
    return shift_process(mixture, cfg.p_shift, cfg.shift_max_offset, seed=seed)


def _run_nonstationary_cell(cfg: ExperimentConfig, pretrained, pkind: str, method: str,
                            seed_entry: int, chash: str, out: Path):
    """One (process kind, method, seed) cell of the nonstationary benchmark."""
    kind = StrategyKind.PROBE
    mixture = sample_mixture(seed_entry, cfg.mixture)
    process = _make_process(cfg, pkind, mixture, seed=derive_seed(seed_entry, 41))
    x0 = bl.baseline_fixed(kind)
    meter = ExecutionMeter()
    with metered(meter):
        bootstrap = collect_task_dataset(process, fixed_params_sampler(x0), cfg.n_test)
    buffer = tr.RingBuffer(cfg.n_test)
    buffer.extend(bootstrap.records)
    state = None
    if method.startswith("dpse"):
        state = tr.ContinuousState(
            pretrained=pretrained,
            buffer=buffer,
            params=x0,
            objective=_objective_for(kind, method, x0),
            inversion_cfg=cfg.continuous_inversion,
            finetune_cfg=cfg.continuous_finetune,
            seed=derive_seed(seed_entry, 42),
        )
    params = x0
    rows = []
    snapshots = []
    cum_failures = 0
    for t in range(cfg.horizon):
        if state is not None:
            with metered(meter):
                outcome = tr.continuous_step(state, process)
            rec = outcome.record
            executed_params = rec.params
            params = state.params
        else:
            process.advance()
            hole = process.sample_hole()
            with metered(meter):
                rec = simulate(params, hole)
            executed_params = params
            if method == "gmm":
                buffer.append(rec)
                try:
                    params = bl.baseline_gmm_probe(
                        _as_task_dataset(buffer), seed=derive_seed(seed_entry, 43, t)
                    )
                except InsufficientDataError:
                    params = x0
        cum_failures += 0 if rec.success else 1
        oracle_succ, _ = success_prob_oracle(
            executed_params, process.current_mixture(), cfg.eval_samples,
            seed=derive_seed(seed_entry, 44, t),
        )
        rows.append(
            [pkind, method, seed_entry, t, int(rec.success), float(oracle_succ),
             cum_failures, chash]
        )
        if t % 20 == 0:
            snapshots.append(executed_params)
    if seed_entry == cfg.seeds[0]:
        svg = plot_pattern(process.current_mixture(), params, trajectory=snapshots)
        (out / f"trajectory-{pkind}-{method}-seed{seed_entry}.svg").write_text(svg)
    return rows, meter.count


def _as_task_dataset(buffer: tr.RingBuffer):
    from .sim import TaskDataset

    records = buffer.records()
    return TaskDataset(kind=records[0].kind, records=records)


def run_nonstationary(cfg: ExperimentConfig, no_train: bool = False) -> Path:
    """Continuous-operation benchmark over the configured process kinds."""
    if ExperimentKind(cfg.experiment) is not ExperimentKind.PROBE_NONSTATIONARY:
        raise ConfigError(f"run_nonstationary got experiment {cfg.experiment}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = ArtifactCache(resolve_cache_dir(out / "cache"))
    chash = cfg.content_hash()
    needs_model = any(m.startswith("dpse") for m in cfg.methods)
    pretrained = ensure_pretrained(cfg, cache, no_train, out) if needs_model else None
    rows = []
    executions = {}
    for pkind in cfg.processes:
        for method in cfg.methods:
            for seed_entry in cfg.seeds:
                cell_rows, used = _run_nonstationary_cell(
                    cfg, pretrained, pkind, method, seed_entry, chash, out
                )
                rows.extend(cell_rows)
                executions[(pkind, method, seed_entry)] = used
    _write_csv(out / "steps.csv", STEP_HEADER, rows)
    summary = _summarize_nonstationary(rows, cfg, executions, chash)
    _write_csv(
        out / "summary.csv",
        "process,method,failures,steps,failure_rate,rel_reduction_vs_fixed,executions_used,config_hash",
        summary,
    )
    (out / "report.json").write_text(
        json.dumps(
            {"config_hash": chash, "experiment": cfg.experiment.value,
             "config": cfg.to_dict()},
            indent=2, sort_keys=True,
        )
    )
    return out / "steps.csv"


def _summarize_nonstationary(rows, cfg, executions, chash) -> list[list]:
    failures: dict[tuple[str, str], int] = {}
    steps: dict[tuple[str, str], int] = {}
    for pkind, method, _seed, _t, executed_success, _osucc, _cum, _h in rows:
        key = (pkind, method)
        failures[key] = failures.get(key, 0) + (1 - executed_success)
        steps[key] = steps.get(key, 0) + 1
    out = []
    for pkind in cfg.processes:
        base = failures.get((pkind, "fixed"))
        for method in cfg.methods:
            key = (pkind, method)
            f, s = failures[key], steps[key]
            rel = float("nan") if not base else (base - f) / base
            execs = sum(v for (p, m, _), v in executions.items() if p == pkind and m == method)
            out.append([pkind, method, f, s, float(f / s), float(rel), execs, chash])
    return out


# ---------------------------------------------------------------------------
# Meta-learning comparison


def _source_checksum(tasks) -> str:
    from .sim import _pack_records  # stable record encoding

    digest = hashlib.sha256()
    for t in tasks:
        digest.update(_pack_records(t))
    return digest.hexdigest()[:16]


def run_meta_comparison(cfg: ExperimentConfig, no_train: bool = False) -> Path:
    """Train the transfer and meta-learning variants on one shared source
    dataset, adapt each to held-out tasks, and report held-out losses."""
    if ExperimentKind(cfg.experiment) is not ExperimentKind.META_COMPARISON:
        raise ConfigError(f"run_meta_comparison got experiment {cfg.experiment}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = ArtifactCache(resolve_cache_dir(out / "cache"))
    chash = cfg.content_hash()
    kind = StrategyKind.PROBE
    source = tr.build_source_dataset(
        kind, cfg.m_train, cfg.n_train, seed=derive_seed(cfg.seed, 11),
        mixture_spec=cfg.mixture,
    )
    checksum = _source_checksum(source.tasks)

    variants: list[tuple[str, tr.TrainerKind, int]] = []
    for method in cfg.methods:
        if method == "dpse":
            variants.append(("pretrain-finetune-128", tr.TrainerKind.PRETRAIN_FINETUNE, 128))
        elif method == "fomaml":
            variants.append(("fomaml-5", tr.TrainerKind.FOMAML, 5))
            variants.append(("fomaml-128", tr.TrainerKind.FOMAML, 128))
        elif method == "reptile":
            variants.append(("reptile-128", tr.TrainerKind.REPTILE, 128))

    base_models: dict[tr.TrainerKind, sh.ShadowModel] = {}
    for _, trainer_kind, _ in variants:
        if trainer_kind in base_models:
            continue
        if trainer_kind is tr.TrainerKind.PRETRAIN_FINETUNE:
            tcfg = replace(cfg.pretrain, seed=derive_seed(cfg.seed, 12))
        elif trainer_kind is tr.TrainerKind.FOMAML:
            tcfg = tr.TrainConfig.fomaml_default(seed=derive_seed(cfg.seed, 13))
        else:
            tcfg = tr.TrainConfig.reptile_default(seed=derive_seed(cfg.seed, 14))
        tcfg = replace(tcfg, kind=trainer_kind)
        key = config_hash(
            {"what": "meta-base", "trainer": asdict(tcfg), "source_seed": derive_seed(cfg.seed, 11),
             "m": cfg.m_train, "n": cfg.n_train, "mixture": asdict(cfg.mixture),
             "format_version": FORMAT_VERSION, "kind": trainer_kind.value}
        )
        if cache.has_checkpoint(key):
            base_models[trainer_kind] = cache.load_model(key)
            continue
        if no_train:
            raise ConfigError(f"--no-train given but no cached model for {trainer_kind.value}")
        model = tr.train(source, tcfg)
        cache.save_model(key, model)
        base_models[trainer_kind] = model

    x0 = bl.baseline_fixed(kind)
    rows = []
    for i in range(cfg.meta_eval_tasks):
        mixture = sample_mixture(derive_seed(cfg.seed, 31, i), cfg.mixture)
        adapt_proc = stationary_process(mixture, seed=derive_seed(cfg.seed, 32, i))
        adapt_ds = collect_task_dataset(adapt_proc, fixed_params_sampler(x0), 128)
        held_proc = stationary_process(mixture, seed=derive_seed(cfg.seed, 33, i))
        held_ds = collect_task_dataset(
            held_proc, uniform_params_sampler(kind, derive_seed(cfg.seed, 34, i)),
            cfg.meta_heldout,
        )
        for name, trainer_kind, n_meta in variants:
            adapted = tr.finetune(
                base_models[trainer_kind], adapt_ds.records[:n_meta],
                replace(cfg.finetune, seed=derive_seed(cfg.seed, 35, i)),
            )
            loss = tr.heldout_loss(adapted, held_ds.records)
            rows.append([name, i, n_meta, float(loss), chash])
    _write_csv(out / "meta.csv", META_HEADER, rows)

    means: dict[str, float] = {}
    for name, _, _, loss, _ in rows:
        means.setdefault(name, 0.0)
        means[name] += loss / cfg.meta_eval_tasks
    findings = []
    pf = means.get("pretrain-finetune-128")
    if pf is not None:
        for rival in ("fomaml-128", "reptile-128"):
            if rival in means and pf > means[rival]:
                findings.append(
                    f"expected pretrain-finetune <= {rival}, got {pf:.4f} > {means[rival]:.4f}"
                )
    if "fomaml-5" in means and "fomaml-128" in means and means["fomaml-5"] <= means["fomaml-128"]:
        findings.append(
            f"expected fomaml-5 worse than fomaml-128, got {means['fomaml-5']:.4f} "
            f"<= {means['fomaml-128']:.4f}"
        )
    (out / "report.json").write_text(
        json.dumps(
            {
                "config_hash": chash,
                "experiment": cfg.experiment.value,
                "source_checksum": checksum,
                "mean_heldout_bce": means,
                "ordering_findings": findings,
                "config": cfg.to_dict(),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return out / "meta.csv"


# ---------------------------------------------------------------------------
# Aggregation / report


def aggregate_report(out_dir) -> str:
    """Human-readable summary of whatever metrics files exist in out_dir."""
    out = Path(out_dir)
    lines = []
    metrics = out / "metrics.csv"
    if metrics.exists():
        lines.append(f"== {metrics} ==")
        rows = [ln.split(",") for ln in metrics.read_text().strip().splitlines()[1:]]
        methods: dict[str, list] = {}
        for method, _seed, success, cycle, execs, _h in rows:
            methods.setdefault(method, []).append((float(success), float(cycle), float(execs)))
        for method in sorted(methods):
            vals = np.array(methods[method])
            lines.append(
                f"{method:12s} success={vals[:, 0].mean():.3f} "
                f"cycle={vals[:, 1].mean():.2f}s executions={vals[:, 2].mean():.0f}"
            )
    summary = out / "summary.csv"
    if summary.exists():
        lines.append(f"== {summary} ==")
        lines.extend(summary.read_text().strip().splitlines())
    meta = out / "meta.csv"
    if meta.exists():
        lines.append(f"== {meta} ==")
        rows = [ln.split(",") for ln in meta.read_text().strip().splitlines()[1:]]
        means: dict[str, list] = {}
        for name, _task, _n, loss, _h in rows:
            means.setdefault(name, []).append(float(loss))
        for name in sorted(means):
            lines.append(f"{name:22s} heldout_bce={np.mean(means[name]):.4f}")
    if not lines:
        lines.append(f"no metrics found in {out}")
    return "\n".join(lines)
