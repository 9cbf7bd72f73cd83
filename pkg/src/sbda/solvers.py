"""Stochastic block dual averaging and the baselines it is compared against.

All solvers share the same randomness layout: the run seed is split into a
block-sampling stream and a data stream, so methods that consume the same
data samples (e.g. single-block SBDA-u and full dual averaging) see
identical ``xi`` sequences.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .blocks import BlockParams, BlockVector
from .geometry import Regularizer, _solve
from .oracles import QueryMeter, StochasticOracle
from .schedules import SamplingDistribution, Schedule, ScheduleError

DEFAULT_LOG_POINTS = 200


class UnsupportedConfiguration(ValueError):
    pass


class TracePoint(NamedTuple):
    t: int
    queries: int
    passes: float
    objective: float
    ms: float


@dataclass
class RunResult:
    x_final: np.ndarray
    x_avg: np.ndarray
    trace: list[TracePoint] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def final_objective(self) -> float:
        return self.trace[-1].objective


def rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """``(block_rng, data_rng)`` derived from one run seed."""
    ss = np.random.SeedSequence(int(seed))
    block_ss, data_ss = ss.spawn(2)
    return np.random.default_rng(block_ss), np.random.default_rng(data_ss)


def log_cadence(T: int, log_every: int | None = None) -> int:
    if log_every is None:
        return max(1, math.ceil(T / DEFAULT_LOG_POINTS))
    if log_every < 1:
        raise ValueError("log_every must be at least 1")
    return int(log_every)


def average_output(iterates, weights) -> np.ndarray:
    """Weighted mean ``sum w_t x_t / sum w_t``."""
    X = np.asarray([np.asarray(getattr(x, "data", x), dtype=float) for x in iterates])
    w = np.asarray(weights, dtype=float)
    if w.shape != (X.shape[0],):
        raise ValueError("need exactly one weight per iterate")
    if np.any(w < 0):
        raise ValueError("averaging weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("averaging weights are all zero")
    return (w @ X) / total


class _Recorder:
    """Running weighted average of the iterates plus the objective trace."""

    def __init__(self, oracle, meter, T, log_every, record_time, x0):
        self.oracle = oracle
        self.meter = meter
        self.cadence = log_cadence(T, log_every)
        self.T = T
        self.record_time = record_time
        self.start = time.perf_counter()
        self.acc = np.zeros_like(x0)
        self.wsum = 0.0
        self.trace = []
        self._log(0, x0)

    def accumulate(self, x, w):
        if w:
            self.acc += w * x
            self.wsum += w

    def add(self, t, x, w):
        self.accumulate(x, w)
        if t % self.cadence == 0 or t == self.T:
            self._log(t, self.average(fallback=x))

    def average(self, fallback=None):
        if self.wsum > 0:
            return self.acc / self.wsum
        if fallback is None:
            raise ValueError("no positive averaging weight accumulated")
        return fallback.copy()

    def _log(self, t, point):
        ms = (time.perf_counter() - self.start) * 1e3 if self.record_time else 0.0
        obj = self.oracle.objective(point)
        self.trace.append(TracePoint(t, self.meter.queries, self.meter.passes, float(obj), ms))


def _center(oracle, center):
    if center is None:
        return np.zeros(oracle.dim)
    c = np.asarray(getattr(center, "data", center), dtype=float)
    if c.shape != (oracle.dim,):
        raise ValueError("prox centre has the wrong length")
    return c.copy()


def _initial_point(center, reg):
    # argmin of sum gamma_i d_i over X: the centre, projected onto a box
    if reg.kind == "box":
        return np.clip(center, reg.lo, reg.hi)
    return center.copy()


def _meta(oracle, seed, algo, **extra):
    meta = {"algorithm": algo, "seed": int(seed), "problem": oracle.kind, "n_blocks": oracle.partition.n_blocks}
    meta.update(extra)
    return meta


def _finish(x, rec, meter, meta):
    meta.update(block_queries=meter.block_queries, full_queries=meter.full_queries, passes=meter.passes)
    return RunResult(x.copy(), rec.average(fallback=x), rec.trace, meta)


def sbda_u(oracle: StochasticOracle, schedule: Schedule, T: int, seed: int = 0, *,
           center=None, averaging: str = "algorithm", log_every: int | None = None,
           record_time: bool = False) -> RunResult:
    """Uniformly randomized stochastic block dual averaging.

    Each iteration samples one block uniformly, queries that block of a
    stochastic subgradient, adds it (weighted by ``alpha_t``) to the dual
    average and re-solves only that block's prox subproblem.

    ``averaging`` picks the output: ``"algorithm"`` uses the weights
    ``alpha_{t-1} - (n-1)/n alpha_t``, ``"uniform"`` the plain mean and
    ``"linear"`` weights ``t`` for ``x_t``.
    """
    part = oracle.partition
    n = part.n_blocks
    if schedule.n_blocks != n:
        raise UnsupportedConfiguration("schedule and oracle disagree on the number of blocks")
    if T < 1:
        raise ValueError("T must be at least 1")
    reg = oracle.regularizer
    if averaging == "algorithm":
        weights = schedule.output_weights(T)
    elif averaging == "uniform":
        weights = np.ones(T)
    elif averaging == "linear":
        weights = np.arange(1, T + 1, dtype=float)
    else:
        raise ValueError(f"unknown averaging mode {averaging!r}")

    block_rng, data_rng = rng_streams(seed)
    sampler = SamplingDistribution.uniform(n)
    blocks = sampler.sample(block_rng, T)
    xis = oracle.sample(data_rng, T)

    c = _center(oracle, center)
    x = _initial_point(c, reg)
    gbar = np.zeros_like(x)
    slices = [part.slice(i) for i in range(n)]
    state = schedule.start()
    meter = QueryMeter(oracle)
    rec = _Recorder(oracle, meter, T, log_every, record_time, x)

    for t in range(T):
        i = int(blocks[t])
        sl = slices[i]
        schedule.advance(state, i)
        g = meter.block_subgradient(x, i, xis[t])
        gbar[sl] += state.alpha * g
        x[sl] = _solve(gbar[sl], state.l[i], reg, state.gamma[i], c[sl])
        rec.add(t + 1, x, weights[t])

    meta = _meta(oracle, seed, "sbda_u", schedule=schedule.describe(), sampler="uniform",
                 averaging=averaging)
    return _finish(x, rec, meter, meta)


def sbda_r(oracle: StochasticOracle, schedule: Schedule, sampler: SamplingDistribution, T: int,
           seed: int = 0, *, center=None, log_every: int | None = None,
           record_time: bool = False) -> RunResult:
    """Nonuniformly randomized stochastic block dual averaging.

    Blocks are drawn from ``sampler``; the sampled block subgradient enters the
    dual average scaled by ``alpha_t / p_i`` and the prox weight of block ``i``
    is ``gamma_i / p_i``. Output is ``sum alpha_t x_t / sum alpha_t`` over
    ``t = 0 .. T``.
    """
    part = oracle.partition
    n = part.n_blocks
    reg = oracle.regularizer
    if reg.kind not in ("zero", "box"):
        raise UnsupportedConfiguration("sbda_r handles a zero regularizer (or a box feasible set) only")
    if schedule.n_blocks != n or sampler.n_blocks != n:
        raise UnsupportedConfiguration("schedule, sampler and oracle disagree on the number of blocks")
    if T < 1:
        raise ValueError("T must be at least 1")
    alphas = np.array([schedule.alpha(t) for t in range(T + 1)], dtype=float)
    if np.any(alphas < 0) or not alphas.sum() > 0:
        raise ScheduleError("sbda_r needs nonnegative weights alpha_t with positive sum")

    block_rng, data_rng = rng_streams(seed)
    blocks = sampler.sample(block_rng, T)
    xis = oracle.sample(data_rng, T)
    p = sampler.p

    c = _center(oracle, center)
    x = _initial_point(c, reg)
    gbar = np.zeros_like(x)
    slices = [part.slice(i) for i in range(n)]
    state = schedule.start()
    meter = QueryMeter(oracle)
    rec = _Recorder(oracle, meter, T, log_every, record_time, x)
    rec.accumulate(x, alphas[0])

    for t in range(T):
        i = int(blocks[t])
        sl = slices[i]
        schedule.advance(state, i)
        g = meter.block_subgradient(x, i, xis[t])
        gbar[sl] += (state.alpha / p[i]) * g
        x[sl] = c[sl] - gbar[sl] / (state.gamma[i] / p[i])
        if reg.kind == "box":
            np.clip(x[sl], reg.lo, reg.hi, out=x[sl])
        rec.add(t + 1, x, alphas[t + 1])

    meta = _meta(oracle, seed, "sbda_r", schedule=schedule.describe(), sampler=p.tolist(),
                 sampler_floored=sampler.floored)
    return _finish(x, rec, meter, meta)


def _as_schedule_fn(beta):
    if isinstance(beta, Schedule):
        if beta.n_blocks != 1:
            raise UnsupportedConfiguration("a dual averaging schedule must have a single block")
        return beta
    if callable(beta):
        return beta
    value = float(beta)
    return lambda t: value


def baseline_da(oracle: StochasticOracle, beta, T: int, seed: int = 0, *, center=None,
                stochastic: bool = True, log_every: int | None = None,
                record_time: bool = False) -> RunResult:
    """Full-vector (regularized) dual averaging.

    ``x_{t+1} = argmin <sum_{s<=t} alpha_s G_s, x> + l_t omega(x) + beta_t d(x)``.
    ``beta`` is a constant, a callable ``t -> beta_t`` (with ``alpha = 1``) or
    a single-block :class:`Schedule`. ``stochastic=False`` uses exact
    subgradients.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    reg = oracle.regularizer
    rule = _as_schedule_fn(beta)
    _, data_rng = rng_streams(seed)
    xis = oracle.sample(data_rng, T) if stochastic else [None] * T

    c = _center(oracle, center)
    x = _initial_point(c, reg)
    gbar = np.zeros_like(x)
    meter = QueryMeter(oracle)
    rec = _Recorder(oracle, meter, T, log_every, record_time, x)
    if isinstance(rule, Schedule):
        state = rule.start()
        weights = rule.output_weights(T)
    else:
        state, weights, l = None, np.ones(T), 0.0

    for t in range(T):
        if state is not None:
            rule.advance(state, 0)
            alpha, gamma, l = state.alpha, state.gamma[0], state.l[0]
        else:
            alpha, gamma = 1.0, float(rule(t))
            l += 1.0
        g = meter.subgradient(x, xis[t])
        gbar += alpha * g
        x = _solve(gbar, l, reg, gamma, c)
        rec.add(t + 1, x, weights[t])

    meta = _meta(oracle, seed, "da", stochastic=stochastic)
    return _finish(x, rec, meter, meta)


def baseline_md(oracle: StochasticOracle, rule: str = "SM1", T: int = 1000, seed: int = 0, *,
                scale: float = 1.0, center=None, stochastic: bool = False,
                log_every: int | None = None, record_time: bool = False) -> RunResult:
    """Composite subgradient mirror descent with Euclidean prox.

    ``SM1``: ``eta_t = scale / sqrt(t + 1)``. ``SM2``: ``eta_t = scale / ||g_t||``
    (``SM1`` value when ``g_t = 0``). Output is the ``eta``-weighted average.
    With ``stochastic=True`` this is plain stochastic (mirror) descent.
    """
    if rule not in ("SM1", "SM2"):
        raise ValueError(f"unknown stepsize rule {rule!r}")
    if not scale > 0:
        raise ValueError("stepsize scale must be positive")
    reg = oracle.regularizer
    _, data_rng = rng_streams(seed)
    xis = oracle.sample(data_rng, T) if stochastic else [None] * T
    c = _center(oracle, center)
    x = _initial_point(c, reg)
    meter = QueryMeter(oracle)
    rec = _Recorder(oracle, meter, T, log_every, record_time, x)

    for t in range(T):
        g = meter.subgradient(x, xis[t])
        eta = scale / math.sqrt(t + 1.0)
        if rule == "SM2":
            gn = float(np.linalg.norm(g))
            if gn > 0:
                eta = scale / gn
        x = _solve(eta * g, eta, reg, 1.0, x)
        rec.add(t + 1, x, eta)

    meta = _meta(oracle, seed, "md", rule=rule, scale=scale, stochastic=stochastic)
    return _finish(x, rec, meter, meta)


def sbmd_stepsize(params: BlockParams, T: int) -> float:
    """Constant scalar stepsize ``sqrt(2 n sum D / (T sum M^2))`` for block mirror descent."""
    n = params.n_blocks
    return math.sqrt(2.0 * n * params.D.sum() / (T * float(np.sum(params.M**2))))


def baseline_sbmd(oracle: StochasticOracle, stepsize: float | Callable[[int], float], T: int,
                  seed: int = 0, sampler: SamplingDistribution | None = None, *, center=None,
                  log_every: int | None = None, record_time: bool = False) -> RunResult:
    """Stochastic block mirror descent with one scalar stepsize for every block.

    This is an approximation of the block mirror descent method used as a
    comparison target: the sampled block takes a prox step of length
    ``eta_t`` along its stochastic block subgradient, other blocks are frozen,
    and the output is the ``eta``-weighted average.
    """
    part = oracle.partition
    n = part.n_blocks
    reg = oracle.regularizer
    sampler = SamplingDistribution.uniform(n) if sampler is None else sampler
    if sampler.n_blocks != n:
        raise UnsupportedConfiguration("sampler and oracle disagree on the number of blocks")
    eta_fn = stepsize if callable(stepsize) else (lambda t, v=float(stepsize): v)
    block_rng, data_rng = rng_streams(seed)
    blocks = sampler.sample(block_rng, T)
    xis = oracle.sample(data_rng, T)
    c = _center(oracle, center)
    x = _initial_point(c, reg)
    slices = [part.slice(i) for i in range(n)]
    meter = QueryMeter(oracle)
    rec = _Recorder(oracle, meter, T, log_every, record_time, x)

    for t in range(T):
        i = int(blocks[t])
        sl = slices[i]
        eta = float(eta_fn(t))
        if not eta > 0:
            raise ValueError("stepsize must be positive")
        g = meter.block_subgradient(x, i, xis[t])
        x[sl] = _solve(eta * g, eta, reg, 1.0, x[sl])
        rec.add(t + 1, x, eta)

    meta = _meta(oracle, seed, "sbmd", sampler=sampler.p.tolist())
    return _finish(x, rec, meter, meta)
