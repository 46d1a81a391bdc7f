"""Independent oracles used by the tests.

Everything here is deliberately written against the *definitions* (direct
summation, Monte-Carlo simulation, quadrature, brute-force enumeration), not
against the library code paths it checks.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import quad


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def direct_mixture_log_density(weights, means, covs, point) -> float:
    """Plain sum of weighted Gaussian densities, via dense inverses."""
    total = 0.0
    point = np.asarray(point, dtype=np.float64)
    for w, mu, cov in zip(weights, means, covs):
        d = point - np.asarray(mu)
        inv = np.linalg.inv(cov)
        det = np.linalg.det(cov)
        total += w * np.exp(-0.5 * d @ inv @ d) / (2.0 * np.pi * np.sqrt(det))
    return float(np.log(total))


def disk_union_mass(points: np.ndarray, sampler, clearance: float, n: int) -> float:
    """MC mass of the union of clearance disks around `points`.

    `sampler(n)` draws hole positions; the union predicate is order-free and
    independent of the simulator's sequential probe logic.
    """
    holes = sampler(n)
    d2 = ((holes[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    return float((d2.min(axis=1) <= clearance**2).mean())


def bernoulli_chain(q: np.ndarray, t_setup: float, t_probe: float, t_fail: float,
                    trials: int, seed: int) -> tuple[float, float]:
    """Simulate the sequential probe chain with per-step hit probabilities q.

    Returns (failure frequency, mean duration).
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(trials, q.size))
    hits = u < q[None, :]
    any_hit = hits.any(axis=1)
    first = np.argmax(hits, axis=1)
    durations = np.where(
        any_hit,
        t_setup + (first + 1) * t_probe,
        t_setup + q.size * t_probe + t_fail,
    )
    return float(1.0 - any_hit.mean()), float(durations.mean())


def spiral_arc_length_quad(a: float, b: float, windings: float) -> float:
    """Arc length of the elliptical Archimedean spiral by quadrature."""
    theta_max = 2.0 * np.pi * windings

    def speed(t):
        r = t / theta_max
        dx = (a / theta_max) * np.cos(t) - a * r * np.sin(t)
        dy = (b / theta_max) * np.sin(t) + b * r * np.cos(t)
        return np.hypot(dx, dy)

    total, _ = quad(speed, 0.0, theta_max, limit=400)
    return float(total)


def trapezoid_time_oracle(s: float, v: float, acc: float) -> float:
    """Symmetric trapezoidal/triangular profile time, derived independently."""
    s_ramp = v * v / (2.0 * acc)
    if s <= 2.0 * s_ramp:
        peak = np.sqrt(s * acc)
        return 2.0 * peak / acc
    t_cruise = (s - 2.0 * s_ramp) / v
    return 2.0 * v / acc + t_cruise


def brute_force_ranks(objs: np.ndarray) -> np.ndarray:
    """Dominance ranks by repeatedly peeling the non-dominated set."""
    n = objs.shape[0]
    ranks = np.full(n, -1, dtype=int)
    remaining = list(range(n))
    r = 0
    while remaining:
        front = []
        for i in remaining:
            dominated = False
            for j in remaining:
                if j == i:
                    continue
                if (objs[j] <= objs[i]).all() and (objs[j] < objs[i]).any():
                    dominated = True
                    break
            if not dominated:
                front.append(i)
        for i in front:
            ranks[i] = r
        remaining = [i for i in remaining if i not in front]
        r += 1
    return ranks


def expected_probe_duration(q: np.ndarray, t_setup: float, t_probe: float,
                            t_fail: float) -> float:
    """Closed-form expectation of the probe chain duration."""
    reach = np.concatenate([[1.0], np.cumprod(1.0 - q)])
    e_probes = reach[:-1].sum()
    p_fail = reach[-1]
    return t_setup + t_probe * e_probes + t_fail * p_fail
