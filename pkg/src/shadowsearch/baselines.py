"""Comparison methods: fixed parameterizations, the PCA spiral heuristic,
the 16-mode GMM probe heuristic, and mu+lambda NSGA-II.

The PCA heuristic consumes ground-truth hole poses and is flagged as
oracle-privileged wherever it is reported. The GMM heuristic sees only the
observed insertion points of successful executions in the finetuning data,
which a real robot also observes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envproc import GaussianMixture2D
from .errors import ConfigError, ContractError, DegenerateInputError, InsufficientDataError, NumericError
from .rng import TAG_EVOLUTION, derive_seed, make_rng
from .sim import (
    DEFAULT_REGION,
    DEFAULT_TIMING,
    HolePose,
    N_PROBE_POINTS,
    ParamBounds,
    ProbeParams,
    SearchRegion,
    SpiralParams,
    StrategyKind,
    StrategyParams,
    TaskDataset,
    TimingConfig,
    default_bounds,
    params_from_vector,
    simulate,
)

NOMINAL_VELOCITY = 20.0
NOMINAL_ACCELERATION = 200.0


def baseline_fixed(kind: StrategyKind, region: SearchRegion = DEFAULT_REGION) -> StrategyParams:
    """Hand-tuned defaults: a 4x4 grid (probe) or a large centered spiral."""
    kind = StrategyKind(kind)
    if kind is StrategyKind.PROBE:
        lim = region.half_extent - region.hole_clearance
        axis = np.linspace(-lim, lim, 4)
        gx, gy = np.meshgrid(axis, axis, indexing="xy")
        return ProbeParams(points=np.column_stack([gx.ravel(), gy.ravel()]))
    ext = 0.9 * region.half_extent
    return SpiralParams(
        center=(0.0, 0.0),
        orientation=0.0,
        extents=(ext, ext),
        windings=8.0,
        velocity=NOMINAL_VELOCITY,
        acceleration=NOMINAL_ACCELERATION,
    )


def baseline_pca_spiral(
    holes: list[HolePose] | np.ndarray,
    region: SearchRegion = DEFAULT_REGION,
    bounds: ParamBounds | None = None,
) -> SpiralParams:
    """Fit spiral orientation and extents to ground-truth hole poses.

    Oracle-privileged: it reads the true poses, including those of failed
    searches. Extents are 2.5 sigma along the principal axes; windings are
    chosen so the winding pitch along the minor axis stays within twice the
    hole clearance (adjacent coverage bands overlap).
    """
    pts = np.asarray([h.xy for h in holes] if holes and isinstance(holes[0], HolePose) else holes,
                     dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise DegenerateInputError("PCA heuristic needs >= 2 ground-truth points")
    if np.allclose(pts, pts[0], atol=1e-12):
        raise DegenerateInputError("PCA heuristic needs >= 2 distinct points")
    bounds = bounds if bounds is not None else default_bounds(StrategyKind.SPIRAL, region)
    center = pts.mean(axis=0)
    cov = np.cov(pts.T, ddof=1)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    if evals[-1] <= 1e-12:
        raise DegenerateInputError("zero covariance in ground-truth points")
    major = evecs[:, 1]
    phi = np.arctan2(major[1], major[0])
    # orientation is mod pi; fold into [-pi/2, pi/2]
    if phi > np.pi / 2:
        phi -= np.pi
    elif phi < -np.pi / 2:
        phi += np.pi
    a = float(np.clip(2.5 * np.sqrt(evals[1]), bounds.lo[3], bounds.hi[3]))
    b = float(np.clip(2.5 * np.sqrt(max(evals[0], 0.0)), bounds.lo[4], bounds.hi[4]))
    windings = float(np.clip(b / (2.0 * region.hole_clearance), bounds.lo[5], bounds.hi[5]))
    cx = float(np.clip(center[0], bounds.lo[0], bounds.hi[0]))
    cy = float(np.clip(center[1], bounds.lo[1], bounds.hi[1]))
    return SpiralParams(
        center=(cx, cy),
        orientation=float(phi),
        extents=(a, b),
        windings=windings,
        velocity=NOMINAL_VELOCITY,
        acceleration=NOMINAL_ACCELERATION,
    )


# ---------------------------------------------------------------------------
# GMM probe heuristic

_COV_FLOOR = 1e-4  # mm^2 eigenvalue floor keeps components from collapsing


def _kmeanspp_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    centers = [pts[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.einsum("nj,nj->n", pts - c, pts - c) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(pts[rng.integers(n)])
            continue
        centers.append(pts[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def _floor_spd(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clip covariance eigenvalues at `floor`; the constrained M-step optimum."""
    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    evals = np.maximum(evals, floor)
    return evecs @ np.diag(evals) @ evecs.T


def fit_gmm_em(
    pts: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
    cov_floor: float = _COV_FLOOR,
) -> tuple[np.ndarray, list[float]]:
    """EM for a k-component 2D GMM with k-means++ init.

    Covariances are eigenvalue-floored, which is the exact M-step maximizer on
    the floored PSD cone, so the log-likelihood is non-decreasing per
    iteration; this is checked after every M-step.
    """
    n = pts.shape[0]
    rng = make_rng(seed, TAG_EVOLUTION, 17)
    means = _kmeanspp_init(pts, k, rng)
    covs = np.tile(np.eye(2)[None, :, :], (k, 1, 1))
    weights = np.full(k, 1.0 / k)
    ll_history: list[float] = []
    prev_ll = -np.inf
    for iteration in range(max_iters):
        # E-step: log responsibilities
        log_p = np.empty((n, k))
        for j in range(k):
            chol = np.linalg.cholesky(covs[j])
            d = pts - means[j]
            y0 = d[:, 0] / chol[0, 0]
            y1 = (d[:, 1] - chol[1, 0] * y0) / chol[1, 1]
            log_norm = np.log(2 * np.pi) + np.log(chol[0, 0] * chol[1, 1])
            log_p[:, j] = np.log(weights[j] + 1e-300) - log_norm - 0.5 * (y0**2 + y1**2)
        m = log_p.max(axis=1, keepdims=True)
        log_sum = m[:, 0] + np.log(np.exp(log_p - m).sum(axis=1))
        ll = float(log_sum.sum())
        if ll + 1e-9 * max(1.0, abs(ll)) < prev_ll:
            raise NumericError(f"EM log-likelihood decreased at iteration {iteration}")
        ll_history.append(ll)
        if iteration > 0 and abs(ll - prev_ll) < tol:
            break
        prev_ll = ll
        resp = np.exp(log_p - log_sum[:, None])
        # M-step
        nk = resp.sum(axis=0)
        for j in range(k):
            if nk[j] < 1e-12:
                continue  # dead component keeps its parameters
            means[j] = resp[:, j] @ pts / nk[j]
            d = pts - means[j]
            scatter = (resp[:, j][:, None] * d).T @ d / nk[j]
            covs[j] = _floor_spd(scatter, cov_floor)
        weights = nk / n
    return means, ll_history


def success_contact_points(dataset: TaskDataset) -> np.ndarray:
    """Observed insertion locations of the successful executions."""
    return np.array([[r.hole.x, r.hole.y] for r in dataset.records if r.success])


def baseline_gmm_probe(
    dataset: TaskDataset,
    region: SearchRegion = DEFAULT_REGION,
    seed: int = 0,
) -> ProbeParams:
    """Place the 16 touch points at the means of a 16-mode GMM fitted to the
    insertion points of the successful finetuning executions."""
    if dataset.kind is not StrategyKind.PROBE:
        raise ContractError("GMM heuristic applies to probe datasets")
    pts = success_contact_points(dataset)
    if pts.shape[0] < N_PROBE_POINTS:
        raise InsufficientDataError(
            f"GMM heuristic needs >= {N_PROBE_POINTS} successes, have {pts.shape[0]}"
        )
    means, _ = fit_gmm_em(pts, N_PROBE_POINTS, seed=seed)
    means = np.clip(means, -region.half_extent, region.half_extent)
    return ProbeParams(points=means)


# ---------------------------------------------------------------------------
# NSGA-II


@dataclass(frozen=True)
class Nsga2Config:
    mu: int = 25
    lam: int = 25
    generations: int = 1000
    budget: int = 250  # total simulator executions
    evals_per_individual: int = 8
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    p_crossover: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.mu < 2 or self.lam < 2:
            raise ConfigError("mu and lambda must both be >= 2")
        if self.budget < self.mu:
            raise ConfigError(f"budget {self.budget} < mu {self.mu}")
        if self.generations < 1 or self.evals_per_individual < 1:
            raise ConfigError("generations and evals_per_individual must be >= 1")


@dataclass
class Individual:
    vector: np.ndarray
    fail: float = np.nan
    cycle: float = np.nan
    rank: int = -1
    crowding: float = 0.0

    def objectives(self) -> tuple[float, float]:
        return (self.fail, self.cycle)


def fast_nondominated_sort(objs: np.ndarray) -> tuple[list[list[int]], np.ndarray]:
    """Deb's fast non-dominated sort on an (n, 2) minimization objective array."""
    n = objs.shape[0]
    dominates = (
        (objs[:, None, :] <= objs[None, :, :]).all(axis=2)
        & (objs[:, None, :] < objs[None, :, :]).any(axis=2)
    )
    dom_count = dominates.sum(axis=0)  # how many dominate i
    fronts: list[list[int]] = []
    ranks = np.full(n, -1, dtype=int)
    current = [i for i in range(n) if dom_count[i] == 0]
    r = 0
    while current:
        fronts.append(current)
        for i in current:
            ranks[i] = r
        nxt = []
        for i in current:
            for j in np.nonzero(dominates[i])[0]:
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(int(j))
        current = sorted(set(nxt))
        r += 1
    return fronts, ranks


def crowding_distance(objs: np.ndarray, front: list[int]) -> np.ndarray:
    """Crowding distances for one front; extremes get the +inf sentinel."""
    dist = np.zeros(len(front))
    if len(front) <= 2:
        return np.full(len(front), np.inf)
    sub = objs[front]
    for m in range(objs.shape[1]):
        order = np.argsort(sub[:, m], kind="stable")
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        span = sub[order[-1], m] - sub[order[0], m]
        if span <= 0:
            continue
        for pos in range(1, len(front) - 1):
            dist[order[pos]] += (sub[order[pos + 1], m] - sub[order[pos - 1], m]) / span
    return dist


def _sbx_crossover(p1: np.ndarray, p2: np.ndarray, bounds: ParamBounds, eta: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    c1, c2 = p1.copy(), p2.copy()
    for i in range(p1.size):
        if rng.uniform() > 0.5 or abs(p1[i] - p2[i]) < 1e-14:
            continue
        x1, x2 = sorted((p1[i], p2[i]))
        lo, hi = bounds.lo[i], bounds.hi[i]
        u = rng.uniform()
        beta = 1.0 + 2.0 * (x1 - lo) / (x2 - x1)
        alpha = 2.0 - beta ** -(eta + 1.0)
        bq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha else (
            1.0 / (2.0 - u * alpha)
        ) ** (1.0 / (eta + 1.0))
        o1 = 0.5 * ((x1 + x2) - bq * (x2 - x1))
        beta = 1.0 + 2.0 * (hi - x2) / (x2 - x1)
        alpha = 2.0 - beta ** -(eta + 1.0)
        bq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha else (
            1.0 / (2.0 - u * alpha)
        ) ** (1.0 / (eta + 1.0))
        o2 = 0.5 * ((x1 + x2) + bq * (x2 - x1))
        o1, o2 = np.clip(o1, lo, hi), np.clip(o2, lo, hi)
        if rng.uniform() < 0.5:
            o1, o2 = o2, o1
        c1[i], c2[i] = o1, o2
    return c1, c2


def _poly_mutation(vec: np.ndarray, bounds: ParamBounds, eta: float, p_mut: float,
                   rng: np.random.Generator) -> np.ndarray:
    out = vec.copy()
    for i in range(vec.size):
        if rng.uniform() >= p_mut:
            continue
        lo, hi = bounds.lo[i], bounds.hi[i]
        span = hi - lo
        x = out[i]
        d1 = (x - lo) / span
        d2 = (hi - x) / span
        u = rng.uniform()
        mpow = 1.0 / (eta + 1.0)
        if u < 0.5:
            xy = 1.0 - d1
            val = 2.0 * u + (1.0 - 2.0 * u) * xy ** (eta + 1.0)
            delta = val**mpow - 1.0
        else:
            xy = 1.0 - d2
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy ** (eta + 1.0)
            delta = 1.0 - val**mpow
        out[i] = np.clip(x + delta * span, lo, hi)
    return out


@dataclass
class Nsga2Result:
    best: Individual
    front: list[Individual]
    population: list[Individual]
    best_history: list[float]  # best scalarized objective per generation
    executions_used: int


def nsga2_optimize(
    kind: StrategyKind,
    mixture: GaussianMixture2D,
    cfg: Nsga2Config,
    alpha_fail: float = 1.0,
    alpha_cycle: float = 0.02,
    timing: TimingConfig = DEFAULT_TIMING,
    region: SearchRegion = DEFAULT_REGION,
) -> Nsga2Result:
    """mu+lambda NSGA-II over (failure rate, mean cycle time).

    Each individual is scored once, on `evals_per_individual` fresh simulator
    executions drawn from its own seed; every execution is deducted from the
    budget. The individual minimizing the scalarized objective is guaranteed
    to survive selection, so the population best never regresses.
    """
    kind = StrategyKind(kind)
    bounds = default_bounds(kind, region)
    epi = cfg.evals_per_individual
    if cfg.budget // epi < 2:
        raise ConfigError(
            f"budget {cfg.budget} cannot evaluate two individuals at {epi} executions each"
        )
    rng = make_rng(cfg.seed, TAG_EVOLUTION, 0)
    used = 0
    eval_counter = 0

    def scalarized(ind: Individual) -> float:
        return alpha_fail * ind.fail + alpha_cycle * ind.cycle

    def evaluate(ind: Individual) -> None:
        nonlocal used, eval_counter
        holes = mixture.sample(make_rng(cfg.seed, TAG_EVOLUTION, 1, eval_counter), epi)
        eval_counter += 1
        params = params_from_vector(kind, ind.vector)
        recs = [simulate(params, HolePose(*h), timing, region) for h in holes]
        used += epi
        ind.fail = 1.0 - float(np.mean([r.success for r in recs]))
        ind.cycle = float(np.mean([r.duration for r in recs]))

    n_init = min(cfg.mu, (cfg.budget - used) // epi)
    population = [Individual(vector=v) for v in bounds.sample_uniform(rng, n_init)]
    for ind in population:
        evaluate(ind)
    _assign_rank_crowding(population)
    best_ever = min(population, key=scalarized)
    best_history = [scalarized(best_ever)]

    for _ in range(cfg.generations):
        n_off = min(cfg.lam, (cfg.budget - used) // epi)
        if n_off < 1:
            break
        offspring: list[Individual] = []
        while len(offspring) < n_off:
            p1 = _tournament(population, rng)
            p2 = _tournament(population, rng)
            if rng.uniform() < cfg.p_crossover:
                c1, c2 = _sbx_crossover(p1.vector, p2.vector, bounds, cfg.eta_crossover, rng)
            else:
                c1, c2 = p1.vector.copy(), p2.vector.copy()
            for child in (c1, c2):
                if len(offspring) >= n_off:
                    break
                mutated = _poly_mutation(child, bounds, cfg.eta_mutation, 1.0 / child.size, rng)
                offspring.append(Individual(vector=mutated))
        for ind in offspring:
            evaluate(ind)
        combined = population + offspring
        population = _environmental_selection(combined, cfg.mu)
        gen_best = min(combined, key=scalarized)
        if scalarized(gen_best) < scalarized(best_ever):
            best_ever = gen_best
        if best_ever not in population:
            population[-1] = best_ever
            _assign_rank_crowding(population)
        best_history.append(scalarized(best_ever))

    _assign_rank_crowding(population)
    front = [ind for ind in population if ind.rank == 0]
    return Nsga2Result(
        best=best_ever,
        front=front,
        population=population,
        best_history=best_history,
        executions_used=used,
    )


def _assign_rank_crowding(population: list[Individual]) -> None:
    objs = np.array([ind.objectives() for ind in population])
    fronts, ranks = fast_nondominated_sort(objs)
    for i, ind in enumerate(population):
        ind.rank = int(ranks[i])
    for front in fronts:
        dist = crowding_distance(objs, front)
        for d, i in zip(dist, front):
            population[i].crowding = float(d)


def _tournament(population: list[Individual], rng: np.random.Generator) -> Individual:
    i, j = rng.integers(len(population)), rng.integers(len(population))
    a, b = population[i], population[j]
    if (a.rank, -a.crowding) <= (b.rank, -b.crowding):
        return a
    return b


def _environmental_selection(combined: list[Individual], mu: int) -> list[Individual]:
    objs = np.array([ind.objectives() for ind in combined])
    fronts, ranks = fast_nondominated_sort(objs)
    for i, ind in enumerate(combined):
        ind.rank = int(ranks[i])
    selected: list[Individual] = []
    for front in fronts:
        dist = crowding_distance(objs, front)
        for d, i in zip(dist, front):
            combined[i].crowding = float(d)
        if len(selected) + len(front) <= mu:
            selected.extend(combined[i] for i in front)
        else:
            order = sorted(range(len(front)), key=lambda p: (-dist[p], front[p]))
            selected.extend(combined[front[p]] for p in order[: mu - len(selected)])
            break
    return selected
