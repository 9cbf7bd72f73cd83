"""Prox geometry: quadratic distance functions, simple regularizers, and the
closed-form block subproblems solved by the dual averaging updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BlockPartition, BlockVector


class InvalidStepsize(ValueError):
    pass


class InvalidDistribution(ValueError):
    pass


@dataclass(frozen=True)
class DistanceFunction:
    """``d_i(x) = 0.5 * ||x - c^(i)||^2`` on every block, modulus 1."""

    center: BlockVector
    modulus: float = 1.0

    @classmethod
    def zero_centered(cls, partition: BlockPartition) -> "DistanceFunction":
        return cls(BlockVector.zeros(partition))

    @property
    def partition(self) -> BlockPartition:
        return self.center.partition

    def value(self, x, i: int) -> float:
        diff = np.asarray(x, dtype=float) - self.center.block(i)
        return 0.5 * float(diff @ diff)

    def gradient(self, x, i: int) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.center.block(i)

    def total(self, x: BlockVector) -> float:
        diff = x.data - self.center.data
        return 0.5 * float(diff @ diff)


def bregman(d: DistanceFunction, z: BlockVector, x: BlockVector, i: int) -> float:
    """``V_i(z, x) = d_i(x) - d_i(z) - <grad d_i(z), x - z>`` on block ``i``."""
    zi, xi = z.block(i), x.block(i)
    v = d.value(xi, i) - d.value(zi, i) - float(d.gradient(zi, i) @ (xi - zi))
    # exact arithmetic gives 0.5*||x - z||^2 >= 0; clip cancellation noise
    return max(v, 0.0)


@dataclass(frozen=True)
class Regularizer:
    """Block-separable simple term ``omega``.

    ``kind`` is one of ``"zero"``, ``"l1"`` (``weight * ||x||_1``),
    ``"sql2"`` (``weight / 2 * ||x||^2``) or ``"box"`` (indicator of
    ``[lo, hi]`` per coordinate).
    """

    kind: str = "zero"
    weight: float = 0.0
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if self.kind not in ("zero", "l1", "sql2", "box"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("regularizer weight must be nonnegative")
        if self.kind == "box" and not self.lo <= self.hi:
            raise ValueError("box needs lo <= hi")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def l1(cls, weight: float):
        return cls("l1", weight)

    @classmethod
    def sql2(cls, modulus: float):
        return cls("sql2", modulus)

    @classmethod
    def box(cls, lo: float, hi: float):
        return cls("box", 0.0, lo, hi)

    @property
    def strong_convexity(self) -> float:
        return self.weight if self.kind == "sql2" else 0.0

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.weight * float(np.abs(x).sum())
        if self.kind == "sql2":
            return 0.5 * self.weight * float(x @ x)
        inside = np.all((x >= self.lo) & (x <= self.hi))
        return 0.0 if inside else np.inf

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("l1", "sql2"):
            out["weight"] = self.weight
        if self.kind == "box":
            out["lo"], out["hi"] = self.lo, self.hi
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Regularizer":
        return cls(
            data.get("kind", "zero"),
            float(data.get("weight", 0.0)),
            float(data.get("lo", -np.inf)),
            float(data.get("hi", np.inf)),
        )


def soft_threshold(v, threshold: float) -> np.ndarray:
    """Shrink towards zero; ``|v| == threshold`` maps to exactly 0."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def prox_step_u(gbar_i, l_i: float, omega_i: Regularizer, gamma_i: float,
                d_i: DistanceFunction, i: int) -> np.ndarray:
    """Minimize ``<gbar_i, x> + l_i * omega_i(x) + gamma_i * d_i(x)`` over block ``i``."""
    if not gamma_i > 0:
        raise InvalidStepsize(f"stepsize must be positive, got {gamma_i}")
    if l_i < 0:
        raise InvalidStepsize(f"accumulated weight must be nonnegative, got {l_i}")
    c = d_i.center.block(i)
    return _solve(np.asarray(gbar_i, dtype=float), l_i, omega_i, gamma_i, c)


def _solve(g, l, omega, gamma, c):
    kind = omega.kind
    if kind == "zero":
        return c - g / gamma
    if kind == "sql2":
        return (gamma * c - g) / (gamma + l * omega.weight)
    if kind == "l1":
        return soft_threshold(gamma * c - g, l * omega.weight) / gamma
    return np.clip(c - g / gamma, omega.lo, omega.hi)


def prox_step_r(gbar_i, gamma_i: float, p_i: float, d_i: DistanceFunction, i: int,
                bounds: tuple[float, float] | None = None) -> np.ndarray:
    """Minimize ``<gbar_i, x> + (gamma_i / p_i) * d_i(x)``, clamped to ``bounds`` if given."""
    if not gamma_i > 0:
        raise InvalidStepsize(f"stepsize must be positive, got {gamma_i}")
    if not 0 < p_i <= 1:
        raise InvalidDistribution(f"sampling probability must lie in (0, 1], got {p_i}")
    # dividing by gamma / p keeps p = 1 bit-identical to the uniform step
    x = d_i.center.block(i) - np.asarray(gbar_i, dtype=float) / (gamma_i / p_i)
    if bounds is not None:
        x = np.clip(x, bounds[0], bounds[1])
    return x


def subproblem_objective(x, gbar_i, l_i, omega_i, gamma_i, d_i, i) -> float:
    """Value of the block-``i`` objective minimized by :func:`prox_step_u`."""
    x = np.asarray(x, dtype=float)
    return float(np.dot(gbar_i, x)) + l_i * omega_i(x) + gamma_i * d_i.value(x, i)
