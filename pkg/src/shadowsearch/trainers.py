"""Training regimes for the shadow model.

The workhorse is plain transfer learning: pretrain on many simulated tasks,
finetune on the ring buffer of recent executions, and in continuous operation
refit from the *original* pretrained weights every step so stale buffers can
never compound into catastrophic forgetting. First-order MAML and Reptile are
provided as alternatives for the meta-learning comparison; both share the
architecture and data pipeline and adapt at test time with the same finetune.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace

import numpy as np

from . import adgraph as ag
from . import shadow as sh
from .envproc import HoleProcess, MixtureSpec, sample_mixture, stationary_process
from .errors import ConfigError, ContractError
from .rng import TAG_META, TAG_TRAIN, derive_seed, make_rng
from .sim import (
    DEFAULT_REGION,
    DEFAULT_TIMING,
    ExecutionRecord,
    SearchRegion,
    StrategyKind,
    StrategyParams,
    TaskDataset,
    TimingConfig,
    collect_task_dataset,
    fixed_params_sampler,
    simulate,
    uniform_params_sampler,
)


class TrainerKind(str, enum.Enum):
    PRETRAIN_FINETUNE = "pretrain-finetune"
    FOMAML = "fomaml"
    REPTILE = "reptile"


@dataclass(frozen=True)
class TrainConfig:
    kind: TrainerKind = TrainerKind.PRETRAIN_FINETUNE
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    # meta-learning knobs
    inner_steps: int = 5
    inner_lr: float = 0.01
    meta_lr: float = 1e-3
    meta_batch_size: int = 4
    n_meta: int = 128
    support_size: int = 96

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError(f"invalid training config: {self}")
        if self.inner_steps < 0 or self.inner_lr <= 0 or self.meta_lr < 0:
            raise ConfigError(f"invalid meta-learning config: {self}")
        if self.meta_batch_size < 1 or self.n_meta < 1 or self.support_size < 1:
            raise ConfigError(f"invalid meta-learning sizes: {self}")
        TrainerKind(self.kind)

    @classmethod
    def pretrain_default(cls, seed: int = 0) -> "TrainConfig":
        return cls(epochs=20, batch_size=64, lr=1e-3, seed=seed)

    @classmethod
    def finetune_default(cls, seed: int = 0) -> "TrainConfig":
        return cls(epochs=50, batch_size=64, lr=3e-4, seed=seed)

    @classmethod
    def fomaml_default(cls, seed: int = 0) -> "TrainConfig":
        return cls(kind=TrainerKind.FOMAML, epochs=20, seed=seed,
                   inner_steps=5, inner_lr=0.01, meta_lr=1e-3, meta_batch_size=4)

    @classmethod
    def reptile_default(cls, seed: int = 0) -> "TrainConfig":
        return cls(kind=TrainerKind.REPTILE, epochs=20, seed=seed,
                   inner_steps=10, inner_lr=0.01, meta_lr=0.25)


@dataclass
class SourceDataset:
    """Union of task datasets used for pretraining / meta-training."""

    tasks: list[TaskDataset]

    def __post_init__(self):
        if not self.tasks:
            raise ContractError("source dataset needs at least one task")
        kinds = {t.kind for t in self.tasks}
        if len(kinds) != 1:
            raise ContractError(f"tasks mix strategy kinds: {kinds}")

    @property
    def kind(self) -> StrategyKind:
        return self.tasks[0].kind

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def pooled_records(self) -> list[ExecutionRecord]:
        return [r for t in self.tasks for r in t.records]


class RingBuffer:
    """Fixed-capacity FIFO of execution records; full inserts evict oldest."""

    def __init__(self, capacity: int = 128):
        if capacity < 1:
            raise ConfigError(f"ring buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: list[ExecutionRecord] = []

    def append(self, record: ExecutionRecord) -> None:
        self._items.append(record)
        if len(self._items) > self.capacity:
            del self._items[0]

    def extend(self, records) -> None:
        for r in records:
            self.append(r)

    def records(self) -> list[ExecutionRecord]:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


def build_source_dataset(
    kind: StrategyKind,
    m_tasks: int,
    n_per_task: int,
    seed: int,
    mixture_spec: MixtureSpec = MixtureSpec(),
    passive_params: StrategyParams | None = None,
    timing: TimingConfig = DEFAULT_TIMING,
    region: SearchRegion = DEFAULT_REGION,
) -> SourceDataset:
    """Simulate m task datasets, each against its own random mixture.

    Pretraining mode samples params uniformly per execution; passing
    `passive_params` instead repeats that one parameterization (passive mode).
    """
    if m_tasks < 1:
        raise ConfigError("need at least one task")
    tasks = []
    for i in range(m_tasks):
        mixture = sample_mixture(derive_seed(seed, TAG_META, i, 0), mixture_spec)
        process = stationary_process(mixture, seed=derive_seed(seed, TAG_META, i, 1))
        if passive_params is None:
            sampler = uniform_params_sampler(kind, derive_seed(seed, TAG_META, i, 2), region)
        else:
            sampler = fixed_params_sampler(passive_params)
        tasks.append(collect_task_dataset(process, sampler, n_per_task, timing, region))
    return SourceDataset(tasks=tasks)


# ---------------------------------------------------------------------------
# Plain training loops


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    idx = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield idx[s : s + batch_size]


def _train_epochs(model: sh.ShadowModel, records: list[ExecutionRecord], epochs: int,
                  batch_size: int, lr: float, rng: np.random.Generator,
                  loss_log: list | None = None, split: str = "train") -> sh.ShadowModel:
    x, y, aux = sh.record_arrays(model, records)
    opt = ag.Adam(model.weights, lr=lr)
    n = len(records)
    for epoch in range(epochs):
        losses = []
        for b in _epoch_batches(n, batch_size, rng):
            loss = sh.loss_from_arrays(model, x[b], y[b], aux[b])
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
            losses.append(loss.item())
        if loss_log is not None:
            loss_log.append((epoch, split, float(np.mean(losses))))
    return model


def write_loss_log(loss_log: list, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "split", "loss"])
        w.writerows(loss_log)


def pretrain(source: SourceDataset, cfg: TrainConfig,
             loss_log: list | None = None) -> sh.ShadowModel:
    """Minimize the mean training loss over the pooled source records."""
    model = sh.ShadowModel.initialize(source.kind, seed=cfg.seed)
    records = source.pooled_records()
    rng = make_rng(cfg.seed, TAG_TRAIN, 0)
    _train_epochs(model, records, cfg.epochs, cfg.batch_size, cfg.lr, rng,
                  loss_log, split="pretrain")
    model.meta.update(
        m_tasks=source.n_tasks,
        n_per_task=len(source.tasks[0]),
        seed=cfg.seed,
    )
    return model


def finetune(pretrained: sh.ShadowModel, buffer: RingBuffer | list[ExecutionRecord],
             cfg: TrainConfig, loss_log: list | None = None) -> sh.ShadowModel:
    """Continue training from the pretrained weights on the buffer only.

    The pretrained model is never touched: every call copies it, so repeated
    refits always restart from the original checkpoint.
    """
    records = buffer.records() if isinstance(buffer, RingBuffer) else list(buffer)
    if not records:
        raise ContractError("finetune: empty buffer")
    model = pretrained.copy()
    model.meta["finetune_seed"] = cfg.seed
    if cfg.epochs == 0:
        return model
    rng = make_rng(cfg.seed, TAG_TRAIN, 1)
    _train_epochs(model, records, cfg.epochs, cfg.batch_size, cfg.lr, rng,
                  loss_log, split="finetune")
    return model


def heldout_loss(model: sh.ShadowModel, records: list[ExecutionRecord]) -> float:
    """Mean training loss on held-out records (no gradient step)."""
    x, y, aux = sh.record_arrays(model, records)
    return sh.loss_from_arrays(model, x, y, aux).item()


# ---------------------------------------------------------------------------
# Continuous operation (nonstationary processes)

MIN_WARMUP_RECORDS = 16


@dataclass
class ContinuousState:
    """Mutable state of the execute -> refit -> optimize cycle."""

    pretrained: sh.ShadowModel
    buffer: RingBuffer
    params: StrategyParams
    objective: "object"          # inversion.Objective (kept loose to avoid a cycle)
    inversion_cfg: "object"      # inversion.InversionConfig
    finetune_cfg: TrainConfig
    timing: TimingConfig = DEFAULT_TIMING
    region: SearchRegion = DEFAULT_REGION
    seed: int = 0
    t: int = 0
    model: sh.ShadowModel | None = None


@dataclass(frozen=True)
class StepOutcome:
    record: ExecutionRecord
    params: StrategyParams
    predicted_fail: float
    predicted_cycle: float


def continuous_step(state: ContinuousState, process: HoleProcess) -> StepOutcome:
    """One cycle: execute current params on the advanced process, refit the
    surrogate from the original pretrained weights, reoptimize the params."""
    from .inversion import invert  # local import; inversion depends on shadow

    if len(state.buffer) < MIN_WARMUP_RECORDS:
        raise ContractError(
            f"continuous_step needs >= {MIN_WARMUP_RECORDS} buffered records, "
            f"have {len(state.buffer)}"
        )
    process.advance()
    hole = process.sample_hole()
    record = simulate(state.params, hole, state.timing, state.region)
    state.buffer.append(record)
    ft_cfg = replace(state.finetune_cfg, seed=derive_seed(state.seed, TAG_TRAIN, 2, state.t))
    state.model = finetune(state.pretrained, state.buffer, ft_cfg)
    result = invert(
        state.model,
        state.params,
        state.objective,
        replace(state.inversion_cfg, seed=derive_seed(state.seed, TAG_TRAIN, 3, state.t)),
    )
    state.params = result.params
    state.t += 1
    return StepOutcome(
        record=record,
        params=result.params,
        predicted_fail=result.predicted_fail,
        predicted_cycle=result.predicted_cycle,
    )


# ---------------------------------------------------------------------------
# Meta-learning alternatives


def _task_split(task: TaskDataset, support_size: int, seed: int):
    idx = make_rng(seed, TAG_META, 7).permutation(len(task.records))
    support = [task.records[i] for i in idx[:support_size]]
    query = [task.records[i] for i in idx[support_size:]]
    return support, query


def _inner_adapt(model: sh.ShadowModel, records: list[ExecutionRecord], steps: int,
                 lr: float) -> sh.ShadowModel:
    fast = model.copy()
    if not records or steps == 0:
        return fast
    x, y, aux = sh.record_arrays(fast, records)
    for _ in range(steps):
        loss = sh.loss_from_arrays(fast, x, y, aux)
        for w in fast.weights:
            w.grad = None
        ag.backward(loss)
        ag.sgd_step(fast.weights, lr)
    return fast


def meta_train_fomaml(source: SourceDataset, cfg: TrainConfig,
                      loss_log: list | None = None) -> sh.ShadowModel:
    """First-order MAML: the query-set gradient at the adapted weights is
    applied to the initial weights by the meta optimizer."""
    if source.n_tasks < 2:
        raise ContractError("meta-training needs at least 2 tasks")
    model = sh.ShadowModel.initialize(source.kind, seed=cfg.seed)
    meta_opt = ag.Adam(model.weights, lr=cfg.meta_lr)
    rng = make_rng(cfg.seed, TAG_META, 1)
    splits = [
        _task_split(t, cfg.support_size, derive_seed(cfg.seed, TAG_META, 2, i))
        for i, t in enumerate(source.tasks)
    ]
    for epoch in range(cfg.epochs):
        order = rng.permutation(source.n_tasks)
        epoch_losses = []
        for s in range(0, source.n_tasks, cfg.meta_batch_size):
            batch = order[s : s + cfg.meta_batch_size]
            meta_grads = [np.zeros(w.shape) for w in model.weights]
            batch_loss = 0.0
            for ti in batch:
                support, query = splits[ti]
                fast = _inner_adapt(model, support, cfg.inner_steps, cfg.inner_lr)
                qx, qy, qaux = sh.record_arrays(fast, query)
                qloss = sh.loss_from_arrays(fast, qx, qy, qaux)
                for w in fast.weights:
                    w.grad = None
                ag.backward(qloss)
                for g, w in zip(meta_grads, fast.weights):
                    g += (w.grad if w.grad is not None else 0.0) / len(batch)
                batch_loss += qloss.item() / len(batch)
            for w, g in zip(model.weights, meta_grads):
                w.grad = g
            meta_opt.step()
            epoch_losses.append(batch_loss)
        if loss_log is not None:
            loss_log.append((epoch, "fomaml", float(np.mean(epoch_losses))))
    model.meta.update(m_tasks=source.n_tasks, n_per_task=len(source.tasks[0]), seed=cfg.seed)
    return model


def meta_train_reptile(source: SourceDataset, cfg: TrainConfig,
                       loss_log: list | None = None) -> sh.ShadowModel:
    """Reptile: move the initial weights a fraction meta_lr toward the weights
    adapted on a single sampled task."""
    if source.n_tasks < 2:
        raise ContractError("meta-training needs at least 2 tasks")
    model = sh.ShadowModel.initialize(source.kind, seed=cfg.seed)
    rng = make_rng(cfg.seed, TAG_META, 3)
    eps = cfg.meta_lr
    for epoch in range(cfg.epochs):
        order = rng.permutation(source.n_tasks)
        epoch_gap = []
        for ti in order:
            task = source.tasks[ti]
            fast = _inner_adapt(model, task.records, cfg.inner_steps, cfg.inner_lr)
            for w, fw in zip(model.weights, fast.weights):
                w.data = w.data + eps * (fw.data - w.data)
            epoch_gap.append(
                float(np.mean([np.abs(fw.data - w.data).mean()
                               for w, fw in zip(model.weights, fast.weights)]))
            )
        if loss_log is not None:
            loss_log.append((epoch, "reptile", float(np.mean(epoch_gap))))
    model.meta.update(m_tasks=source.n_tasks, n_per_task=len(source.tasks[0]), seed=cfg.seed)
    return model


def train(source: SourceDataset, cfg: TrainConfig,
          loss_log: list | None = None) -> sh.ShadowModel:
    """Dispatch on the configured trainer kind."""
    kind = TrainerKind(cfg.kind)
    if kind is TrainerKind.PRETRAIN_FINETUNE:
        return pretrain(source, cfg, loss_log)
    if kind is TrainerKind.FOMAML:
        return meta_train_fomaml(source, cfg, loss_log)
    return meta_train_reptile(source, cfg, loss_log)
