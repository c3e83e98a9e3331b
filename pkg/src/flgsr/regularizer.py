r"""Capped folded concave penalties and their proximal operators.

Two members of the capped family are provided. Both satisfy
:math:`\phi(0) = 0`, are concave and nondecreasing on :math:`[0, \infty)`
and saturate at 1 for :math:`t \ge \nu`:

* ``CapL1``:  :math:`\min(t/\nu, 1)`
* ``CapLog``: :math:`\min(\log(1 + t/\theta) / \log(1 + \nu/\theta), 1)`

The scalar proximal map is solved exactly by enumerating a finite candidate
set, and the group (Frobenius-norm) proximal map reduces to it along the ray
through the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError

# candidates whose objectives agree this closely are treated as ties
TIE_TOL = 1e-12


class PhiKind(str, Enum):
    CAPL1 = "CapL1"
    CAPLOG = "CapLog"


@dataclass(frozen=True)
class CappedPhi:
    """A capped folded concave function with cap threshold ``nu``.

    ``theta`` is the shape parameter of ``CapLog`` and is ignored by ``CapL1``.
    """

    kind: PhiKind = PhiKind.CAPLOG
    nu: float = 1.0
    theta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", PhiKind(self.kind))
        if not self.nu > 0:
            raise DomainError(f"nu must be positive, got {self.nu}")
        if self.kind is PhiKind.CAPLOG and not self.theta > 0:
            raise DomainError(f"theta must be positive, got {self.theta}")

    @property
    def log_norm(self) -> float:
        """``log(1 + nu/theta)``, the CapLog normaliser."""
        return math.log1p(self.nu / self.theta)


def phi_eval(phi: CappedPhi, t: float) -> float:
    """Evaluate the penalty at ``t >= 0``."""
    if t < 0:
        raise DomainError(f"phi is defined on [0, inf), got t={t}")
    if t >= phi.nu:
        return 1.0
    if phi.kind is PhiKind.CAPL1:
        return t / phi.nu
    return math.log1p(t / phi.theta) / phi.log_norm


def phi_derivative(phi: CappedPhi, t: float) -> float:
    """Right derivative of the penalty at ``t`` (zero in the capped region)."""
    if t < 0:
        raise DomainError(f"phi is defined on [0, inf), got t={t}")
    if t >= phi.nu:
        return 0.0
    if phi.kind is PhiKind.CAPL1:
        return 1.0 / phi.nu
    return 1.0 / ((phi.theta + t) * phi.log_norm)


def phi_left_derivative_at_nu(phi: CappedPhi) -> float:
    """Limit of the derivative as ``t`` increases to ``nu``."""
    if phi.kind is PhiKind.CAPL1:
        return 1.0 / phi.nu
    return 1.0 / ((phi.theta + phi.nu) * phi.log_norm)


def prox_objective(phi: CappedPhi, lam: float, z: float, x: float) -> float:
    """``lam * phi(x) + (x - z)**2 / 2``."""
    return lam * phi_eval(phi, x) + 0.5 * (x - z) ** 2


def _stationary_points(phi: CappedPhi, lam: float, z: float) -> list[float]:
    # stationary points of the smooth branch strictly inside (0, nu)
    if phi.kind is PhiKind.CAPL1:
        pts = [z - lam / phi.nu]
    else:
        # (x + theta)(x - z) + lam / log(1 + nu/theta) = 0
        disc = (z + phi.theta) ** 2 - 4.0 * lam / phi.log_norm
        if disc < 0:
            return []
        root = math.sqrt(disc)
        pts = [0.5 * (z - phi.theta - root), 0.5 * (z - phi.theta + root)]
    return [x for x in pts if 0.0 < x < phi.nu]


def prox_candidates(phi: CappedPhi, lam: float, z: float) -> list[float]:
    """The finite candidate set that contains a global minimiser."""
    cands = [0.0, phi.nu]
    if z >= phi.nu:
        cands.append(z)
    cands.extend(_stationary_points(phi, lam, z))
    return sorted(cands)


def scalar_prox(phi: CappedPhi, lam: float, z: float) -> float:
    """Global minimiser of ``lam*phi(x) + (x - z)^2/2`` over ``x >= 0``.

    Ties (within ``TIE_TOL``) resolve to the smaller candidate.
    """
    if not lam > 0:
        raise DomainError(f"prox weight must be positive, got {lam}")
    if z < 0:
        raise DomainError(f"scalar prox takes z >= 0, got {z}")
    best_x, best_val = 0.0, prox_objective(phi, lam, z, 0.0)
    for x in prox_candidates(phi, lam, z):
        val = prox_objective(phi, lam, z, x)
        if val < best_val - TIE_TOL:
            best_x, best_val = x, val
    return best_x


def block_prox(phi: CappedPhi, lam: float, Z: np.ndarray) -> np.ndarray:
    """Proximal map of ``lam * phi(||.||_F)`` evaluated at the block ``Z``.

    The result is ``scalar_prox(phi, lam, ||Z||_F) * Z / ||Z||_F`` and zero for
    ``Z = 0``.
    """
    Z = np.asarray(Z, dtype=float)
    znorm = float(np.linalg.norm(Z))
    if znorm == 0.0:
        if not lam > 0:
            raise DomainError(f"prox weight must be positive, got {lam}")
        return np.zeros_like(Z)
    return scalar_prox(phi, lam, znorm) * Z / znorm
