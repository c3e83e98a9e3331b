"""Masked sampling operator, its adjoint and the projection onto the data ball.

The feasible set is ``{C : ||A(C) - b||_2 <= sigma}`` where ``A`` reads the
observed entries of ``C`` in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SamplingProblem:
    """Observed entries of an ``rows x cols`` matrix.

    ``mask`` holds flat row-major indices (``row * cols + col``), strictly
    increasing; ``b[k]`` is the observation at ``mask[k]``.
    """

    rows: int
    cols: int
    mask: np.ndarray
    b: np.ndarray
    sigma: float = 0.0
    _bool_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.int64).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if self.rows < 1 or self.cols < 1:
            raise DomainError(f"matrix dimensions must be positive, got {self.rows}x{self.cols}")
        if mask.size and (mask[0] < 0 or mask[-1] >= self.rows * self.cols):
            raise DomainError("mask index out of bounds")
        if mask.size > 1 and np.any(np.diff(mask) <= 0):
            raise DomainError("mask indices must be strictly increasing (row-major, no duplicates)")
        if b.shape != mask.shape:
            raise DomainError(f"b has length {b.size} but the mask has {mask.size} entries")
        if not self.sigma >= 0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        mask.setflags(write=False)
        b.setflags(write=False)
        bm = np.zeros(self.rows * self.cols, dtype=bool)
        bm[mask] = True
        bm = bm.reshape(self.rows, self.cols)
        bm.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "_bool_mask", bm)

    @classmethod
    def from_pairs(cls, rows, cols, pairs, b, sigma=0.0):
        """Build from ``(row, col)`` pairs; pairs and ``b`` are reordered row-major."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size and (pairs.min() < 0 or pairs[:, 0].max() >= rows or pairs[:, 1].max() >= cols):
            raise DomainError("mask index out of bounds")
        flat = pairs[:, 0] * cols + pairs[:, 1]
        order = np.argsort(flat, kind="stable")
        return cls(rows, cols, flat[order], np.asarray(b, dtype=float)[order], sigma)

    @classmethod
    def from_matrix(cls, M, observed, sigma=0.0):
        """Observe ``M`` on the boolean matrix ``observed``."""
        M = np.asarray(M, dtype=float)
        flat = np.flatnonzero(np.asarray(observed, dtype=bool).ravel())
        return cls(M.shape[0], M.shape[1], flat, M.ravel()[flat], sigma)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def observed(self) -> np.ndarray:
        """Boolean ``rows x cols`` view of the mask."""
        return self._bool_mask

    @property
    def nobs(self) -> int:
        return int(self.mask.size)

    def pairs(self) -> np.ndarray:
        """Mask as an ``(p, 2)`` array of ``(row, col)`` pairs."""
        return np.stack(np.divmod(self.mask, self.cols), axis=1)

    def _check_matrix(self, C):
        C = np.asarray(C, dtype=float)
        if C.shape != self.shape:
            raise DomainError(f"expected a {self.rows}x{self.cols} matrix, got shape {C.shape}")
        return C

    def apply(self, C) -> np.ndarray:
        return self._check_matrix(C).ravel()[self.mask]

    def adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).ravel()
        if v.size != self.mask.size:
            raise DomainError(f"expected a vector of length {self.mask.size}, got {v.size}")
        out = np.zeros(self.rows * self.cols)
        out[self.mask] = v
        return out.reshape(self.shape)

    def zero_filled(self) -> np.ndarray:
        """Observations scattered into an otherwise zero matrix."""
        return self.adjoint(self.b)

    def residual_norm(self, C) -> float:
        return float(np.linalg.norm(self.apply(C) - self.b))

    def project_theta(self, Z) -> np.ndarray:
        """Euclidean projection of ``Z`` onto the feasible set."""
        Z = self._check_matrix(Z)
        r = Z.ravel()[self.mask] - self.b
        rnorm = float(np.linalg.norm(r))
        out = Z.copy()
        if rnorm <= self.sigma:
            return out
        flat = out.reshape(-1)
        if self.sigma == 0.0:
            flat[self.mask] = self.b
        else:
            flat[self.mask] = self.b + (self.sigma / rnorm) * r
        return out


def apply(P: SamplingProblem, C) -> np.ndarray:
    return P.apply(C)


def adjoint(P: SamplingProblem, v) -> np.ndarray:
    return P.adjoint(v)


def project_theta(P: SamplingProblem, Z) -> np.ndarray:
    return P.project_theta(Z)
