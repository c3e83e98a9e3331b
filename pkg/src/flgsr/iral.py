r"""Inexact restarted augmented Lagrangian outer loop.

Each outer iteration solves the augmented Lagrangian subproblem with
:func:`~flgsr.elam.elam_solve`, warm-started from the previous iterate, and
then either restarts (multiplier reset to zero, penalty kept) or escalates
(multiplier step, penalty increase). The restart branch is taken during the
first ``vartheta`` iterations and afterwards whenever the feasibility
residual beats ``rho1`` times the smallest of the last ``vartheta`` residuals.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .elam import ElamConfig, elam_solve
from .errors import DomainError, NumericalFailure
from .grouping import GroupPartition, make_partition
from .linops import SamplingProblem
from .regularizer import CappedPhi, phi_derivative


class InitKind(str, Enum):
    SVD = "svd"
    DATA_IDENTITY = "DataIdentity"
    SPECTRAL_WARM = "SpectralWarm"


@dataclass
class IralConfig:
    """Outer-loop parameters.

    ``reg_weight`` multiplies the group penalty of both factors. It leaves the
    set of feasible minimizers unchanged in the limit of exact feasibility
    and sets how aggressively the early, small-``eta`` subproblems prune.
    ``restart=False`` forces the escalation branch on every iteration.

    The inner solver runs to ``min(eps_k, elam.inner_tol)``. The default
    ceiling 3e-3 keeps early subproblems loose, so restarts (which shrink
    ``eps_k`` slowly) stay cheap while escalations tighten it quickly.
    """

    eta0: float = 1e-3
    rho1: float = 0.999
    rho2: float = 0.5
    rho3: float = 0.5
    vartheta: int = 10
    eps0: float = 10.0
    max_outer: int = 200
    outer_tol: float = 1e-5
    groups: int = 32
    reg_weight: float = 0.01
    init: InitKind = InitKind.SVD
    restart: bool = True
    phi: CappedPhi = field(default_factory=CappedPhi)
    elam: ElamConfig = field(default_factory=lambda: ElamConfig(inner_tol=3e-3))

    def __post_init__(self):
        self.init = InitKind(self.init)
        for name in ("rho1", "rho2", "rho3"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise DomainError(f"{name} must lie in (0, 1), got {v}")
        for name in ("eta0", "eps0", "outer_tol", "reg_weight"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("vartheta", "max_outer", "groups"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be a positive integer, got {getattr(self, name)}")
            setattr(self, name, int(getattr(self, name)))


@dataclass
class RecoveryResult:
    C_hat: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    partition: GroupPartition
    outer_iters: int
    residual_history: list
    restarts: int
    wall_time: float
    sweeps: int = 0
    eta: float = 0.0
    active: Optional[np.ndarray] = None
    multiplier: Optional[np.ndarray] = field(default=None, repr=False)
    branches: list = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return float(np.linalg.norm(self.X @ self.Y.T - self.C_hat))

    @property
    def active_columns(self) -> int:
        return int(sum(n for n, a in zip(self.partition.sizes, self.active) if a))


def restart_check(history, new_residual: float, rho1: float) -> bool:
    """True iff ``new_residual <= rho1 * min(history)``."""
    history = list(history)
    if not history:
        raise RuntimeError("restart test needs at least one past residual")
    return new_residual <= rho1 * min(history)


def update_multiplier(S, eta: float, X, Y, C) -> np.ndarray:
    """``S + eta (X Y^T - C)``."""
    return S + eta * (X @ Y.T - C)


@dataclass
class OuterState:
    """Multiplier, penalty and tolerance carried between outer iterations."""

    S: np.ndarray
    eta: float
    eps: float
    history: deque
    restarts: int = 0


def outer_update(k: int, residual: float, state: OuterState, cfg: IralConfig,
                 step: Callable[[], np.ndarray]) -> str:
    """Apply the restart/escalation rule after outer iteration ``k``.

    ``step`` returns ``X Y^T - C`` at the new iterate and is only called on
    the escalation branch. Returns the branch taken (``"a"``, ``"b"`` or
    ``"c"``) and appends ``residual`` to the history ring buffer.
    """
    if cfg.restart and k <= cfg.vartheta:
        branch = "a"
        state.S = np.zeros_like(state.S)
    elif cfg.restart and restart_check(state.history, residual, cfg.rho1):
        branch = "b"
        state.S = np.zeros_like(state.S)
        state.eps *= math.sqrt(cfg.rho1)
        state.restarts += 1
    else:
        branch = "c"
        state.S = state.S + state.eta * step()
        state.eta /= cfg.rho2
        state.eps *= cfg.rho3
    state.history.append(residual)
    return branch


def initialize(P: SamplingProblem, s: int, init=InitKind.SVD):
    """Starting factors with ``X0 Y0^T = M_Omega`` and ``C0 = Pi(M_Omega)``.

    ``svd`` balances the singular values of ``M_Omega`` between the factors,
    ``DataIdentity`` uses ``(M_Omega, I)`` and ``SpectralWarm`` the same pair
    rescaled by the square root of the spectral norm. ``s`` is accepted for
    interface symmetry; every init fills all ``n`` columns.
    """
    init = InitKind(init)
    M0 = P.zero_filled()
    m, n = M0.shape
    if init is InitKind.SVD:
        U, sv, Vt = np.linalg.svd(M0, full_matrices=False)
        r = sv.size
        X0 = np.zeros((m, n), order="F")
        Y0 = np.zeros((n, n), order="F")
        X0[:, :r] = U * np.sqrt(sv)
        Y0[:, :r] = Vt.T * np.sqrt(sv)
    elif init is InitKind.DATA_IDENTITY:
        X0 = np.asfortranarray(M0)
        Y0 = np.eye(n, order="F")
    else:
        nrm = float(np.linalg.norm(M0, 2))
        scale = math.sqrt(nrm) if nrm > 0 else 1.0
        X0 = np.asfortranarray(M0 / scale)
        Y0 = np.eye(n, order="F") * scale
    C0 = P.project_theta(X0 @ Y0.T)
    return X0, Y0, C0


def kkt_residual(X, Y, C, multiplier, phi: CappedPhi, partition: GroupPartition,
                 weight: float = 1.0, active=None) -> float:
    """Norm of the first-order residual of the factor blocks.

    ``multiplier`` is ``S + eta (X Y^T - C)``. Active groups use the gradient
    of the penalty along ``X_i/||X_i||``; inactive groups report how far
    ``Lambda Y_i`` (resp. ``Lambda^T X_i``) lies outside the ball of radius
    ``weight n_i phi'(0)``.
    """
    dphi0 = phi_derivative(phi, 0.0)
    LY = multiplier @ Y
    LX = multiplier.T @ X
    tot = 0.0
    for i, (n_i, sl) in enumerate(zip(partition.sizes, partition.slices())):
        for B, G in ((X[:, sl], LY[:, sl]), (Y[:, sl], LX[:, sl])):
            nb = float(np.linalg.norm(B))
            if nb > 0 and (active is None or active[i]):
                g = weight * n_i * phi_derivative(phi, nb) * B / nb + G
                tot += float(np.sum(g * g))
            else:
                tot += max(0.0, float(np.linalg.norm(G)) - weight * n_i * dphi0) ** 2
    return math.sqrt(tot)


def iral_solve(P: SamplingProblem, cfg: IralConfig, partition: Optional[GroupPartition] = None,
               start=None, callback: Optional[Callable[[dict], None]] = None,
               elam_monitor=None) -> RecoveryResult:
    """Recover ``C`` from the sampling problem ``P``.

    ``partition`` defaults to ``cfg.groups`` near-equal contiguous groups and
    ``start`` to :func:`initialize` with ``cfg.init``. ``callback`` receives a
    dict per outer iteration; ``elam_monitor`` is forwarded to every inner
    solve.
    """
    t0 = time.perf_counter()
    m, n = P.shape
    if partition is None:
        if cfg.groups > n:
            raise DomainError(f"groups={cfg.groups} exceeds the {n} columns")
        partition = make_partition(n, cfg.groups)
    X, Y, C = initialize(P, len(partition), cfg.init) if start is None else start
    st = OuterState(np.zeros((m, n)), cfg.eta0, cfg.eps0, deque(maxlen=cfg.vartheta))
    active = None
    history, branches = [], []
    sweeps = 0
    multiplier = None
    k = 0
    for k in range(cfg.max_outer):
        tol = min(st.eps, cfg.elam.inner_tol)
        try:
            res = elam_solve(X, Y, C, st.S, st.eta, cfg.phi, P, cfg.elam, partition,
                             weight=cfg.reg_weight, active=active, inner_tol=tol,
                             monitor=elam_monitor)
        except NumericalFailure as exc:
            raise NumericalFailure(f"outer iteration {k}: {exc}", sweep=exc.sweep, outer=k) from exc
        X, Y, C, active = res.X, res.Y, res.C, res.active
        sweeps += res.sweeps
        H = X @ Y.T - C
        r = float(np.linalg.norm(H))
        history.append(r)
        multiplier = st.S + st.eta * H
        cnorm = float(np.linalg.norm(C))
        if callback is not None:
            callback(dict(k=k, residual=r, eta=st.eta, eps=st.eps, sweeps=res.sweeps,
                          active=int(active.sum()), X=X, Y=Y, C=C))
        if r / (1.0 + cnorm) <= cfg.outer_tol:
            break
        branches.append(outer_update(k, r, st, cfg, lambda: H))
        if not math.isfinite(st.eta):
            raise NumericalFailure(f"outer iteration {k}: penalty eta overflowed", outer=k)
    return RecoveryResult(
        C_hat=C, X=X, Y=Y, partition=partition, outer_iters=k + 1,
        residual_history=history, restarts=st.restarts,
        wall_time=time.perf_counter() - t0, sweeps=sweeps, eta=st.eta, active=active,
        multiplier=multiplier, branches=branches,
    )
