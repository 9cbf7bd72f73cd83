"""Brute-force oracles for the inequalities the stepsize rules rely on.

Each check returns a :class:`CheckResult` whose ``margin`` is the smallest
slack seen (positive means the inequality held everywhere, for equality
checks it is ``tolerance - worst error``).
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from .blocks import BlockParams
from .schedules import joint_objective, joint_optimum, optimal_sampling


class CheckResult(NamedTuple):
    name: str
    passed: bool
    margin: float
    cases: int
    detail: str = ""


# -- Bernoulli coupling ------------------------------------------------------


def coupling_sides(p: float, a: float, x: float, b: float) -> tuple[float, float]:
    """Exact ``E[1/(r1 x + r2 (a - x) + b)]`` and ``E[1/(r3 a + b)]`` for Bernoulli(p) draws."""
    lhs = 0.0
    for r1, r2 in itertools.product((0, 1), repeat=2):
        prob = (p if r1 else 1 - p) * (p if r2 else 1 - p)
        lhs += prob / (r1 * x + r2 * (a - x) + b)
    rhs = (1 - p) / b + p / (a + b)
    return lhs, rhs


def check_coupling(pairs=((2.0, 1.0), (1.0, 1.0), (10.0, 0.1), (0.5, 3.0), (5.0, 5.0)),
                   grid: int = 50, tol: float = 1e-12) -> CheckResult:
    worst = np.inf
    for a, b in pairs:
        for p in np.linspace(0, 1, grid + 2)[1:-1]:
            for x in np.linspace(0, a, grid):
                lhs, rhs = coupling_sides(p, a, x, b)
                worst = min(worst, rhs - lhs)
    cases = len(pairs) * grid * grid
    return CheckResult("coupling", bool(worst >= -tol), float(worst), cases)


# -- recursive sums ----------------------------------------------------------


def recursive_sum_sides(p: float, a0: float, b) -> tuple[float, float]:
    """Both sides of ``sum_{s<=t} a_s <= sum_{s=1..t} b_s + a_0 / p`` for
    ``a_t = p b_t + (1 - p) a_{t-1}``."""
    a = a0
    total = a0
    for bt in b:
        a = p * bt + (1 - p) * a
        total += a
    return total, float(np.sum(b)) + a0 / p


def check_recursive_sum(instances: int = 100, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(instances):
        p = rng.uniform(0.01, 0.99)
        t = int(rng.integers(1, 200))
        b = rng.exponential(rng.uniform(0.1, 10.0), size=t)
        a0 = rng.exponential(5.0)
        lhs, rhs = recursive_sum_sides(p, a0, b)
        worst = min(worst, (rhs - lhs) / max(1.0, rhs))
    # b = 0 has the geometric closed form a0 (1 - (1-p)^(t+1)) / p
    p, a0, t = 0.3, 2.0, 25
    lhs, _ = recursive_sum_sides(p, a0, np.zeros(t))
    closed_err = abs(lhs - a0 * (1 - (1 - p) ** (t + 1)) / p)
    passed = bool(worst >= -tol and closed_err < 1e-12)
    return CheckResult("recursive_sum", passed, float(worst), instances + 1,
                       f"closed-form error {closed_err:.2e}")


# -- joint stepsize/probability problem ---------------------------------------


def simplex_grid(n: int, step: float) -> np.ndarray:
    """All points of the ``n``-simplex with coordinates on a ``step`` lattice, strictly positive."""
    k = int(round(1 / step))
    if n == 2:
        i = np.arange(1, k)
        return np.stack([i, k - i], axis=1) / k
    if n == 3:
        i, j = np.meshgrid(np.arange(1, k), np.arange(1, k), indexing="ij")
        keep = i + j < k
        i, j = i[keep], j[keep]
        return np.stack([i, j, k - i - j], axis=1) / k
    raise ValueError("grid search implemented for 2 or 3 blocks")


def _refine(fn, n, centre, width, step):
    # local box lattice in the first n - 1 coordinates; the last one closes the simplex
    ticks = np.arange(-width, width + step / 2, step)
    free = np.stack(np.meshgrid(*[ticks] * (n - 1), indexing="ij"), axis=-1).reshape(-1, n - 1)
    free = free + centre[: n - 1]
    pts = np.column_stack([free, 1.0 - free.sum(axis=1)])
    pts = pts[np.all(pts > 0, axis=1)]
    vals = fn(pts)
    return pts[np.argmin(vals)], float(vals.min())


def grid_minimize_simplex(fn: Callable[[np.ndarray], np.ndarray], n: int,
                          coarse: float = 2e-3, fine: float = 2e-3, width: float = 0.02):
    """Coarse lattice search on the simplex followed by one local refinement."""
    pts = simplex_grid(n, coarse)
    vals = fn(pts)
    best = pts[np.argmin(vals)]
    return _refine(fn, n, best, width, fine)


def joint_reduced(a, b):
    """``min_x`` of the joint objective for each row of ``Y``, by AM-GM per coordinate."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return lambda Y: np.sum(2.0 * np.sqrt(a / (b * Y)), axis=1)


def check_joint_optimum(instances: int = 10, seed: int = 1, tol: float = 1e-3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for k in range(instances):
        n = 2 + k % 2
        a = rng.uniform(0.1, 10.0, n)
        b = rng.uniform(0.1, 10.0, n)
        x, y = joint_optimum(a, b)
        closed = joint_objective(x, y, a, b)
        _, grid_best = grid_minimize_simplex(joint_reduced(a, b), n)
        worst = min(worst, grid_best + tol - closed)
    return CheckResult("joint_optimum", bool(worst >= 0), float(worst), instances)


def sampling_bound(M, D, T: int = 100, rho: float = 1.0):
    """Stepsize-optimized bound ``min_beta sum (T+1) M^2 / (2 rho beta) + beta D / p`` as a function of ``p``."""
    M, D = np.asarray(M, float), np.asarray(D, float)
    A = (T + 1) * M**2 / (2 * rho)
    return lambda P: np.sum(2.0 * np.sqrt(A * D / P), axis=1)


def check_optimal_sampling(instances: int = 10, seed: int = 2, tol: float = 1e-3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(instances):
        params = BlockParams(rng.uniform(0.1, 10.0, 3), rng.uniform(0.1, 10.0, 3))
        p = optimal_sampling(params).p
        p_grid, _ = grid_minimize_simplex(sampling_bound(params.M, params.D), 3,
                                          coarse=2e-3, fine=1e-4, width=0.004)
        worst = min(worst, tol - float(np.max(np.abs(p - p_grid))))
    return CheckResult("optimal_sampling", bool(worst >= 0), float(worst), instances)


# -- Binomial expectation ------------------------------------------------------


def binomial_expectation_exact(n: int, t: int, lam: Fraction = Fraction(1)) -> Fraction:
    """``E[1 / (lam (l + 1))]`` for ``l ~ Binomial(t, 1/n)``, as an exact rational."""
    q = Fraction(1, n)
    return sum(math.comb(t, k) * q**k * (1 - q) ** (t - k) / (lam * (k + 1)) for k in range(t + 1))


def binomial_expectation_closed(n: int, t: int, lam: float = 1.0) -> float:
    return n / (lam * (t + 1)) * (1 - ((n - 1) / n) ** (t + 1))


def check_binomial(ns=(2, 3, 5), t_max: int = 12, tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    bound_ok = True
    cases = 0
    for n in ns:
        for t in range(t_max + 1):
            exact = float(binomial_expectation_exact(n, t))
            closed = binomial_expectation_closed(n, t)
            worst = max(worst, abs(exact - closed))
            bound_ok &= exact <= n / (t + 1) + tol
            cases += 1
    return CheckResult("binomial", bool(worst <= tol and bound_ok), tol - worst, cases)


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "coupling": check_coupling,
    "recursive_sum": check_recursive_sum,
    "joint_optimum": check_joint_optimum,
    "optimal_sampling": check_optimal_sampling,
    "binomial": check_binomial,
}


def run_checks(names=None) -> list[CheckResult]:
    names = list(CHECKS) if names is None else list(names)
    return [CHECKS[name]() for name in names]
