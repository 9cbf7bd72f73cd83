"""Block-wise stepsize rules, averaging weights and block sampling laws.

Every rule keeps a per-block stepsize vector ``gamma``, the accumulated weight
``l`` of each block and the scalar weight ``alpha_t``. A rule only ever raises
the stepsize of the block sampled at the current iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import BlockParams

PROB_FLOOR = 1e-6


class ScheduleError(ValueError):
    pass


@dataclass
class ScheduleState:
    gamma: np.ndarray
    l: np.ndarray
    alpha: float
    t: int = -1


class Schedule:
    """Base rule: ``alpha_t = 1`` and constant stepsizes."""

    name = "base"
    requires_horizon = False

    def __init__(self, n_blocks: int):
        if n_blocks < 1:
            raise ScheduleError("need at least one block")
        self.n_blocks = int(n_blocks)

    def alpha(self, t: int) -> float:
        return 1.0

    def initial_gamma(self) -> np.ndarray:
        raise NotImplementedError

    def update_gamma(self, gamma: np.ndarray, t: int, i: int) -> None:
        """Set ``gamma_t`` in place given ``gamma_{t-1}`` and sampled block ``i``."""

    def start(self) -> ScheduleState:
        return ScheduleState(
            gamma=np.array(self.initial_gamma(), dtype=float),
            l=np.zeros(self.n_blocks),
            alpha=self.alpha(-1),
        )

    def advance(self, state: ScheduleState, i: int) -> None:
        """Move ``state`` from iteration ``t - 1`` to ``t`` with block ``i`` sampled."""
        t = state.t + 1
        before = state.gamma[i]
        self.update_gamma(state.gamma, t, i)
        if state.gamma[i] < before:
            raise ScheduleError(f"{self.name}: stepsize of block {i} decreased at t={t}")
        state.t = t
        state.alpha = self.alpha(t)
        state.l[i] += state.alpha

    def output_weights(self, T: int) -> np.ndarray:
        """Weights ``alpha_{t-1} - (n-1)/n * alpha_t`` of ``x_1 .. x_T``.

        Raises if any weight is negative or they sum to zero, since the output
        would then not be an average.
        """
        n = self.n_blocks
        alphas = np.array([self.alpha(t) for t in range(T + 1)], dtype=float)
        w = alphas[:-1] - (n - 1) / n * alphas[1:]
        if np.any(w < -1e-12 * np.abs(alphas[1:])):
            raise ScheduleError(f"{self.name}: output weights become negative")
        w = np.maximum(w, 0.0)
        if not w.sum() > 0:
            raise ScheduleError(f"{self.name}: output weights sum to zero")
        return w

    def describe(self) -> dict:
        return {"name": self.name}


def _ratio(params: BlockParams, rho: float) -> np.ndarray:
    if rho <= 0:
        raise ScheduleError("modulus rho must be positive")
    return params.M**2 / (rho * params.D)


def _need_horizon(T):
    if T is None or int(T) < 1:
        raise ScheduleError("constant stepsize rules need a horizon T >= 1")
    return int(T)


class ConstantConvex(Schedule):
    """``gamma^(i) = sqrt(5 T M_i^2 / (n rho D_i))``, ``alpha_t = 1``."""

    name = "const_convex"
    requires_horizon = True

    def __init__(self, params: BlockParams, T: int, rho: float = 1.0):
        super().__init__(params.n_blocks)
        self.T = _need_horizon(T)
        self.rho = rho
        self._gamma = np.sqrt(5.0 * self.T * _ratio(params, rho) / self.n_blocks)

    def initial_gamma(self):
        return self._gamma

    def describe(self):
        return {"name": self.name, "T": self.T, "rho": self.rho}


class AdaptiveConvex(Schedule):
    """``gamma_t^(i_t) = sqrt(10 M^2 (t+1) / (n rho D))`` on the sampled block only."""

    name = "adaptive_convex"

    def __init__(self, params: BlockParams, rho: float = 1.0):
        super().__init__(params.n_blocks)
        self.rho = rho
        self._u = np.sqrt(10.0 * _ratio(params, rho) / self.n_blocks)

    def initial_gamma(self):
        return self._u

    def update_gamma(self, gamma, t, i):
        gamma[i] = self._u[i] * np.sqrt(t + 1.0)

    def describe(self):
        return {"name": self.name, "rho": self.rho}


class StronglyConvexSimple(Schedule):
    """``alpha_t = 1`` and ``gamma = lambda / rho`` on every block."""

    name = "strong_simple"

    def __init__(self, lam: float, n_blocks: int, rho: float = 1.0):
        super().__init__(n_blocks)
        if not lam > 0:
            raise ScheduleError("strong convexity modulus must be positive")
        self.lam, self.rho = lam, rho

    def initial_gamma(self):
        return np.full(self.n_blocks, self.lam / self.rho)

    def describe(self):
        return {"name": self.name, "lam": self.lam, "rho": self.rho}


class StronglyConvexAggressive(Schedule):
    """``alpha_t = n + t`` (``alpha_{-1} = 0``), ``gamma = lambda (2n + T) / rho``.

    Algorithm output weights reduce to ``t / n`` for ``x_t``, i.e. the
    ``sum t x_t / sum t`` average.
    """

    name = "strong_aggressive"
    requires_horizon = True

    def __init__(self, lam: float, n_blocks: int, T: int, rho: float = 1.0):
        super().__init__(n_blocks)
        if not lam > 0:
            raise ScheduleError("strong convexity modulus must be positive")
        self.lam, self.rho, self.T = lam, rho, _need_horizon(T)

    def alpha(self, t):
        return 0.0 if t < 0 else float(self.n_blocks + t)

    def initial_gamma(self):
        return np.full(self.n_blocks, self.lam * (2 * self.n_blocks + self.T) / self.rho)

    def describe(self):
        return {"name": self.name, "lam": self.lam, "rho": self.rho, "T": self.T}


class SBDARConstant(Schedule):
    """``gamma^(i) = sqrt((1 + T) p_i M_i^2 / (2 rho D_i))`` for any positive ``p``."""

    name = "r_const"
    requires_horizon = True

    def __init__(self, params: BlockParams, T: int, p: "SamplingDistribution", rho: float = 1.0):
        super().__init__(params.n_blocks)
        _check_sizes(params, p)
        self.T, self.rho = _need_horizon(T), rho
        self._gamma = np.sqrt((1.0 + self.T) * p.p * _ratio(params, rho) / 2.0)

    def initial_gamma(self):
        return self._gamma

    def describe(self):
        return {"name": self.name, "T": self.T, "rho": self.rho}


class SBDARAdaptive(Schedule):
    """``gamma_t^(i_t) = sqrt((t + 1) p_i M_i^2 / (rho D_i))``; ``gamma_{-1}`` is the ``t = 0`` value."""

    name = "r_adaptive"

    def __init__(self, params: BlockParams, p: "SamplingDistribution", rho: float = 1.0):
        super().__init__(params.n_blocks)
        _check_sizes(params, p)
        self.rho = rho
        self._u = np.sqrt(p.p * _ratio(params, rho))

    def initial_gamma(self):
        return self._u

    def update_gamma(self, gamma, t, i):
        gamma[i] = self._u[i] * np.sqrt(t + 1.0)

    def describe(self):
        return {"name": self.name, "rho": self.rho}


def _check_sizes(params, p):
    if p.n_blocks != params.n_blocks:
        raise ScheduleError("sampling distribution and block parameters disagree on n")


def const_gamma_convex(params, T, rho=1.0):
    return ConstantConvex(params, T, rho)


def adaptive_gamma_convex(params, rho=1.0):
    return AdaptiveConvex(params, rho)


def strongly_convex_simple(lam, n_blocks, rho=1.0):
    return StronglyConvexSimple(lam, n_blocks, rho)


def strongly_convex_aggressive(lam, n_blocks, T, rho=1.0):
    return StronglyConvexAggressive(lam, n_blocks, T, rho)


def sbda_r_const_gamma(params, T, p, rho=1.0):
    return SBDARConstant(params, T, p, rho)


def sbda_r_adaptive_gamma(params, p, rho=1.0):
    return SBDARAdaptive(params, p, rho)


def optimal_const_gamma(params: BlockParams, T: int, rho: float = 1.0) -> np.ndarray:
    """``sqrt((1 + T) / (2 rho C)) M^{4/3} D^{-1/3}`` with ``C = sum M^{2/3} D^{1/3}``."""
    C = float(np.sum(params.M ** (2 / 3) * params.D ** (1 / 3)))
    return np.sqrt((1.0 + T) / (2.0 * rho * C)) * params.M ** (4 / 3) * params.D ** (-1 / 3)


# -- sampling ---------------------------------------------------------------


@dataclass(frozen=True)
class SamplingDistribution:
    """Strictly positive probability mass over blocks.

    Entries below ``PROB_FLOOR`` are raised to it and the mass renormalized;
    ``floored`` records whether that happened.
    """

    p: np.ndarray
    cumulative: np.ndarray = field(init=False, repr=False)
    floored: bool = field(init=False, default=False)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).ravel()
        if p.size == 0 or np.any(~np.isfinite(p)) or np.any(p < 0) or not p.sum() > 0:
            raise ValueError(f"invalid sampling weights {p}")
        p = p / p.sum()
        floored = bool(np.any(p < PROB_FLOOR))
        if floored:
            p = np.maximum(p, PROB_FLOOR)
            p = p / p.sum()
        cum = np.cumsum(p)
        cum[-1] = 1.0
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "cumulative", cum)
        object.__setattr__(self, "floored", floored)

    @classmethod
    def uniform(cls, n_blocks: int) -> "SamplingDistribution":
        return cls(np.full(n_blocks, 1.0 / n_blocks))

    @property
    def n_blocks(self) -> int:
        return self.p.shape[0]

    def sample(self, rng: np.random.Generator, size: int | None = None):
        u = rng.random(size)
        idx = np.searchsorted(self.cumulative, u, side="right")
        return np.minimum(idx, self.n_blocks - 1)


def sample_block(dist: SamplingDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one block index."""
    return int(dist.sample(rng))


def optimal_sampling(params: BlockParams) -> SamplingDistribution:
    """``p_i`` proportional to ``M_i^{2/3} D_i^{1/3}``."""
    return SamplingDistribution(params.M ** (2 / 3) * params.D ** (1 / 3))


def joint_objective(x, y, a, b) -> float:
    """``sum_i a_i / x_i + x_i / (b_i y_i)``."""
    x, y, a, b = (np.asarray(v, dtype=float) for v in (x, y, a, b))
    return float(np.sum(a / x + x / (b * y)))


def joint_optimum(a, b):
    """Closed-form minimizer of :func:`joint_objective` over ``x > 0`` and ``y`` in the simplex.

    Returns ``(x, y)`` with ``y_i = (a_i / b_i)^{1/3} W`` and
    ``x_i = a_i^{2/3} b_i^{1/3} sqrt(W)``, ``W = 1 / sum (a_i / b_i)^{1/3}``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("a and b must be nonempty vectors of equal length")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("joint_optimum needs strictly positive inputs")
    r = np.cbrt(a / b)
    W = 1.0 / r.sum()
    return a ** (2 / 3) * b ** (1 / 3) * np.sqrt(W), r * W
