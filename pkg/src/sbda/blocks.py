"""Block partitions of R^N and block-addressable dense vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BlockPartition:
    """Split of ``N`` coordinates into ``n`` contiguous blocks.

    Block ``i`` owns the coordinates ``offsets[i]:offsets[i + 1]``.
    """

    sizes: tuple[int, ...]
    offsets: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 1:
            raise ValueError("a partition needs at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "offsets", (0, *np.cumsum(sizes).tolist()))

    @classmethod
    def even(cls, total: int, n_blocks: int) -> "BlockPartition":
        """``n_blocks`` equal blocks; the last one absorbs any remainder."""
        if total < 1 or n_blocks < 1:
            raise ValueError("total and n_blocks must be positive")
        if n_blocks > total:
            raise ValueError(f"cannot split {total} coordinates into {n_blocks} blocks")
        base = total // n_blocks
        sizes = [base] * n_blocks
        sizes[-1] += total - base * n_blocks
        return cls(tuple(sizes))

    @property
    def n_blocks(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return self.offsets[-1]

    def slice(self, i: int) -> slice:
        if not 0 <= i < self.n_blocks:
            raise IndexError(f"block index {i} out of range for {self.n_blocks} blocks")
        return slice(self.offsets[i], self.offsets[i + 1])

    def fractions(self) -> np.ndarray:
        """Fraction of all coordinates held by each block."""
        return np.asarray(self.sizes, dtype=float) / self.total

    def block_ids(self) -> np.ndarray:
        """Block index of every coordinate, length ``N``."""
        return np.repeat(np.arange(self.n_blocks), self.sizes)


class BlockVector:
    """Dense vector of length ``partition.total`` addressed by block.

    ``block(i)`` returns a numpy view, so writing into it mutates the vector.
    """

    __slots__ = ("data", "partition")

    def __init__(self, data, partition: BlockPartition):
        data = np.asarray(data, dtype=float)
        if data.ndim != 1 or data.shape[0] != partition.total:
            raise ValueError(
                f"data of shape {data.shape} does not match partition total {partition.total}"
            )
        self.data = data
        self.partition = partition

    @classmethod
    def zeros(cls, partition: BlockPartition) -> "BlockVector":
        return cls(np.zeros(partition.total), partition)

    @classmethod
    def from_blocks(cls, blocks: Sequence, partition: BlockPartition) -> "BlockVector":
        return cls(np.concatenate([np.asarray(b, dtype=float).ravel() for b in blocks]), partition)

    def block(self, i: int) -> np.ndarray:
        return self.data[self.partition.slice(i)]

    def blocks(self) -> list[np.ndarray]:
        return [self.block(i) for i in range(self.partition.n_blocks)]

    def block_norm(self, i: int) -> float:
        return float(np.linalg.norm(self.block(i)))

    def block_norms(self) -> np.ndarray:
        sq = np.add.reduceat(self.data**2, np.asarray(self.partition.offsets[:-1]))
        return np.sqrt(sq)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def copy(self) -> "BlockVector":
        return BlockVector(self.data.copy(), self.partition)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"BlockVector({self.data!r}, sizes={self.partition.sizes})"


def block_view(v: BlockVector, i: int) -> np.ndarray:
    """Coordinates of block ``i`` of ``v`` as a writable view."""
    return v.block(i)


def block_norm(v: BlockVector, i: int) -> float:
    """Euclidean norm of block ``i``. Euclidean blocks are self-dual."""
    return v.block_norm(i)


PARAM_FLOOR = 1e-8


@dataclass(frozen=True)
class BlockParams:
    """Per-block subgradient moment bounds ``M`` and distance bounds ``D``.

    Both are floored at ``PARAM_FLOOR`` so stepsize and sampling formulas stay
    finite.
    """

    M: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        M = np.maximum(np.asarray(self.M, dtype=float).ravel(), PARAM_FLOOR)
        D = np.maximum(np.asarray(self.D, dtype=float).ravel(), PARAM_FLOOR)
        if M.shape != D.shape:
            raise ValueError("M and D must have one entry per block")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(D))):
            raise ValueError("block parameters must be finite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "D", D)

    @property
    def n_blocks(self) -> int:
        return self.M.shape[0]

    def to_dict(self) -> dict:
        return {"M": self.M.tolist(), "D": self.D.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "BlockParams":
        return cls(np.asarray(data["M"]), np.asarray(data["D"]))
