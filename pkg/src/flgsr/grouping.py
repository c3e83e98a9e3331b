"""Contiguous column groups and the grouped penalties built on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .regularizer import CappedPhi, phi_eval

ZERO_TOL = 1e-10


@dataclass(frozen=True)
class GroupPartition:
    """Contiguous partition of ``total`` columns into groups of ``sizes``."""

    sizes: tuple[int, ...]
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise DomainError(f"group sizes must be positive, got {list(self.sizes)}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "offsets", (0, *np.cumsum(sizes).tolist()))

    @property
    def total(self) -> int:
        return self.offsets[-1]

    @property
    def count(self) -> int:
        return len(self.sizes)

    def __len__(self):
        return len(self.sizes)

    def slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def slices(self):
        return [self.slice(i) for i in range(len(self.sizes))]


def make_partition(n: int, s: int) -> GroupPartition:
    """Split ``n`` columns into ``s`` contiguous groups of near-equal size.

    The first ``n % s`` groups receive one extra column.
    """
    if not 1 <= s <= n:
        raise DomainError(f"group count must satisfy 1 <= s <= n, got s={s}, n={n}")
    base, extra = divmod(n, s)
    return GroupPartition(tuple(base + 1 if i < extra else base for i in range(s)))


@dataclass
class GroupedFactor:
    """A factor matrix whose columns are split by ``partition``."""

    data: np.ndarray
    partition: GroupPartition

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != self.partition.total:
            raise DomainError(
                f"factor has shape {self.data.shape} but the partition covers "
                f"{self.partition.total} columns"
            )

    def block(self, i: int) -> np.ndarray:
        return self.data[:, self.partition.slice(i)]


def group_norms(F: GroupedFactor, p: float = 2.0) -> np.ndarray:
    """Entrywise l_p norm of every column group."""
    if not p > 0:
        raise DomainError(f"p must be positive, got {p}")
    out = np.empty(len(F.partition))
    for i, sl in enumerate(F.partition.slices()):
        blk = F.data[:, sl]
        if p == 2:
            out[i] = np.linalg.norm(blk)
        else:
            out[i] = np.sum(np.abs(blk) ** p) ** (1.0 / p)
    return out


def group_support(F: GroupedFactor, p: float = 2.0, zero_tol: float = ZERO_TOL) -> set[int]:
    """Indices of groups whose norm exceeds ``zero_tol``."""
    return {int(i) for i in np.flatnonzero(group_norms(F, p) > zero_tol)}


def lp0_norm(F: GroupedFactor, p: float = 2.0, zero_tol: float = ZERO_TOL) -> int:
    """Size-weighted count of nonzero groups."""
    sizes = F.partition.sizes
    return int(sum(sizes[i] for i in group_support(F, p, zero_tol)))


def phi_penalty(F: GroupedFactor, phi: CappedPhi, p: float = 2.0) -> float:
    """``sum_i n_i * phi(||X_i||_p)``."""
    norms = group_norms(F, p)
    return float(sum(n * phi_eval(phi, t) for n, t in zip(F.partition.sizes, norms)))
