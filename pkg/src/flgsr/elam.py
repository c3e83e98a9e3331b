r"""Extrapolated linearized alternating minimization for the ALM subproblem.

One sweep visits the column groups in order; for group ``i`` it takes a
momentum-extrapolated, linearized proximal step on ``X_i`` and then on
``Y_i``, always using the groups ``l < i`` already updated in the same
sweep. Groups that vanish are pruned, and ``C`` is projected onto the data
ball once per sweep.

The coupling term ``X_i Y_i^T - G_i`` is never formed from its definition.
A residual ``R = X Y^T - C + S/eta`` is kept up to date with rank-``n_i``
corrections after every block update and rebuilt exactly after the ``C``
step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import DomainError, NumericalFailure
from .grouping import GroupPartition
from .linops import SamplingProblem
from .regularizer import CappedPhi, block_prox, phi_eval


@dataclass
class ElamConfig:
    """Step-size, extrapolation and stopping parameters of the inner solver."""

    gamma: float = 1.1
    delta: float = 0.99
    eps_floor: float = 1e-8
    max_inner: int = 100
    inner_tol: float = 1e-3
    prune_tol: float = 1e-10

    def __post_init__(self):
        if not self.gamma > 1:
            raise DomainError(f"gamma must exceed 1, got {self.gamma}")
        if not 0 < self.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.eps_floor > 0:
            raise DomainError(f"eps_floor must be positive, got {self.eps_floor}")
        if int(self.max_inner) < 1:
            raise DomainError(f"max_inner must be a positive integer, got {self.max_inner}")
        if not self.inner_tol > 0:
            raise DomainError(f"inner_tol must be positive, got {self.inner_tol}")
        if not self.prune_tol >= 0:
            raise DomainError(f"prune_tol must be nonnegative, got {self.prune_tol}")
        self.max_inner = int(self.max_inner)

    @property
    def momentum_cap(self) -> float:
        """``delta (gamma - 1) / (2 (gamma + 1))``."""
        return self.delta * (self.gamma - 1.0) / (2.0 * (self.gamma + 1.0))


def t_next(t_prev: float) -> float:
    """Next term of the recursion ``t <- (1 + sqrt(1 + 4 t^2)) / 2``."""
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))


def extrapolation_weight(t_prev: float, t_cur: float, tau_prev: float, tau_cur: float,
                         cfg: ElamConfig) -> float:
    """``min((t_prev - 1)/t_cur, momentum_cap * sqrt(tau_prev/tau_cur))``."""
    return min((t_prev - 1.0) / t_cur, cfg.momentum_cap * math.sqrt(tau_prev / tau_cur))


def _fortran(a):
    return np.array(a, dtype=float, order="F", copy=True)


@dataclass
class ElamState:
    """Iterates of one subproblem solve.

    ``tau_X``/``tau_Y`` hold the step sizes used for each group in the most
    recent sweep, ``t`` the current value of the momentum recursion and
    ``momentum`` the ratio ``(t_{i-1} - 1)/t_i`` for the group being updated.
    """

    X: np.ndarray
    Y: np.ndarray
    C: np.ndarray
    S: np.ndarray
    eta: float
    partition: GroupPartition
    weight: float = 1.0
    active: Optional[np.ndarray] = None
    X_prev: np.ndarray = field(default=None)
    Y_prev: np.ndarray = field(default=None)
    R: np.ndarray = field(default=None)
    tau_X: np.ndarray = field(default=None)
    tau_Y: np.ndarray = field(default=None)
    t: float = 1.0
    momentum: float = 0.0
    sweep: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError(f"penalty eta must be positive, got {self.eta}")
        self.X = _fortran(self.X)
        self.Y = _fortran(self.Y)
        self.C = np.asarray(self.C, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        m, n = self.X.shape
        if self.Y.shape[1] != n or self.partition.total != n:
            raise DomainError("X and Y must share the column partition")
        if self.C.shape != (m, self.Y.shape[0]) or self.S.shape != self.C.shape:
            raise DomainError("C and S must have shape (rows of X, rows of Y)")
        s = len(self.partition)
        if self.active is None:
            self.active = np.ones(s, dtype=bool)
        else:
            self.active = np.array(self.active, dtype=bool)
        # the compiled sweep works in place on Fortran-ordered float64 buffers
        self.X_prev = self.X.copy(order="F") if self.X_prev is None else _fortran(self.X_prev)
        self.Y_prev = self.Y.copy(order="F") if self.Y_prev is None else _fortran(self.Y_prev)
        self.tau_X = np.ones(s) if self.tau_X is None else np.array(self.tau_X, dtype=float)
        self.tau_Y = np.ones(s) if self.tau_Y is None else np.array(self.tau_Y, dtype=float)
        if self.R is None:
            self.refresh_residual()
        else:
            self.R = _fortran(self.R)

    def fresh_residual(self) -> np.ndarray:
        return self.X @ self.Y.T - self.C + self.S / self.eta

    def refresh_residual(self):
        self.R = np.asfortranarray(self.fresh_residual())

    def residual_drift(self) -> float:
        """Relative gap between the maintained and a recomputed residual."""
        exact = self.fresh_residual()
        return float(np.linalg.norm(self.R - exact) / max(1.0, np.linalg.norm(exact)))


def _spectral_sq(B: np.ndarray) -> tuple[float, np.ndarray]:
    # ||B||_2^2 and the Gram matrix B^T B
    gram = B.T @ B
    if gram.shape[0] == 1:
        return float(gram[0, 0]), gram
    return max(float(np.linalg.eigvalsh(gram)[-1]), 0.0), gram


def update_group_X(i: int, state: ElamState, phi: CappedPhi, eta: float, cfg: ElamConfig) -> np.ndarray:
    """Linearized proximal step on ``X_i`` at the extrapolated point.

    Updates ``state`` in place (``X``, ``X_prev``, ``R``, ``tau_X``) and
    returns the new block.
    """
    if not eta > 0:
        raise DomainError(f"penalty eta must be positive, got {eta}")
    sl = state.partition.slice(i)
    n_i = state.partition.sizes[i]
    Yi = state.Y[:, sl]
    Xi = state.X[:, sl].copy(order="F")
    lip, gram = _spectral_sq(Yi)
    tau = max(cfg.gamma * lip, cfg.eps_floor)
    if not math.isfinite(tau):
        raise NumericalFailure(f"non-finite step size for X group {i}")
    w = min(state.momentum, cfg.momentum_cap * math.sqrt(state.tau_X[i] / tau))
    Xbar = Xi + w * (Xi - state.X_prev[:, sl])
    grad = state.R @ Yi + (Xbar - Xi) @ gram
    Xnew = block_prox(phi, state.weight * n_i / (eta * tau), Xbar - grad / tau)
    state.R += (Xnew - Xi) @ Yi.T
    state.X_prev[:, sl] = Xi
    state.X[:, sl] = Xnew
    state.tau_X[i] = tau
    return Xnew


def update_group_Y(i: int, state: ElamState, phi: CappedPhi, eta: float, cfg: ElamConfig) -> np.ndarray:
    """Mirror of :func:`update_group_X` for ``Y_i``, using the fresh ``X_i``."""
    if not eta > 0:
        raise DomainError(f"penalty eta must be positive, got {eta}")
    sl = state.partition.slice(i)
    n_i = state.partition.sizes[i]
    Xi = state.X[:, sl]
    Yi = state.Y[:, sl].copy(order="F")
    lip, gram = _spectral_sq(Xi)
    tau = max(cfg.gamma * lip, cfg.eps_floor)
    if not math.isfinite(tau):
        raise NumericalFailure(f"non-finite step size for Y group {i}")
    w = min(state.momentum, cfg.momentum_cap * math.sqrt(state.tau_Y[i] / tau))
    Ybar = Yi + w * (Yi - state.Y_prev[:, sl])
    grad = state.R.T @ Xi + (Ybar - Yi) @ gram
    Ynew = block_prox(phi, state.weight * n_i / (eta * tau), Ybar - grad / tau)
    state.R += Xi @ (Ynew - Yi).T
    state.Y_prev[:, sl] = Yi
    state.Y[:, sl] = Ynew
    state.tau_Y[i] = tau
    return Ynew


def sweep_groups_python(state: ElamState, phi: CappedPhi, eta: float, cfg: ElamConfig):
    """Steps 1-4 for every active group, in order."""
    for i in np.flatnonzero(state.active):
        t_cur = t_next(state.t)
        state.momentum = (state.t - 1.0) / t_cur
        state.t = t_cur
        update_group_X(int(i), state, phi, eta, cfg)
        update_group_Y(int(i), state, phi, eta, cfg)


def sweep_groups(state: ElamState, phi: CappedPhi, eta: float, cfg: ElamConfig, backend=None):
    """Run one group sweep with the selected backend (compiled when available)."""
    backend = _kernels.backend() if backend is None else backend
    if backend == "python":
        sweep_groups_python(state, phi, eta, cfg)
        return
    state.t, state.momentum = _kernels.compiled_sweep(
        state.X, state.Y, state.X_prev, state.Y_prev, state.R,
        np.asarray(state.partition.offsets, dtype=np.int64),
        state.active.view(np.uint8), state.tau_X, state.tau_Y,
        state.t, eta, state.weight,
        0 if phi.kind.value == "CapL1" else 1, phi.nu, phi.theta,
        cfg.gamma, cfg.delta, cfg.eps_floor,
    )


def prune_zero_groups(state: ElamState, cfg: ElamConfig) -> list[int]:
    """Zero and deactivate groups whose blocks both fall below ``prune_tol``.

    Shapes never change. Returns the indices pruned by this call.
    """
    pruned = []
    for i in np.flatnonzero(state.active):
        sl = state.partition.slice(int(i))
        if max(np.linalg.norm(state.X[:, sl]), np.linalg.norm(state.Y[:, sl])) <= cfg.prune_tol:
            state.X[:, sl] = 0.0
            state.Y[:, sl] = 0.0
            state.X_prev[:, sl] = 0.0
            state.Y_prev[:, sl] = 0.0
            state.active[i] = False
            pruned.append(int(i))
    return pruned


def update_C(state: ElamState, P: SamplingProblem, eta: float, S: np.ndarray) -> np.ndarray:
    """Project ``X Y^T + S/eta`` onto the data ball and rebuild the residual."""
    W = state.X @ state.Y.T + S / eta
    C = P.project_theta(W)
    state.C = C
    state.R = np.asfortranarray(W - C)
    return C


def lagrangian(X, Y, C, S, eta, phi: CappedPhi, partition: GroupPartition, weight=1.0) -> float:
    """Augmented Lagrangian value, assuming ``C`` is feasible."""
    pen = 0.0
    for n_i, sl in zip(partition.sizes, partition.slices()):
        pen += n_i * (phi_eval(phi, float(np.linalg.norm(X[:, sl])))
                      + phi_eval(phi, float(np.linalg.norm(Y[:, sl]))))
    H = X @ Y.T - C
    return weight * pen + float(np.sum(H * S)) + 0.5 * eta * float(np.sum(H * H))


@dataclass
class SweepRecord:
    """Per-sweep diagnostics collected when a monitor is attached."""

    sweep: int
    lagrangian_before: float
    lagrangian_after: float
    descent_bound: float
    residual_drift: float
    change: float


@dataclass
class ElamResult:
    X: np.ndarray
    Y: np.ndarray
    C: np.ndarray
    sweeps: int
    final_change: float
    active: np.ndarray
    state: ElamState = field(repr=False, default=None)


def _descent_bound(state, eta, cfg, dX_prev, dY_prev, tX_prev, tY_prev, dX, dY, dC):
    k = (cfg.gamma - 1.0) / (4.0 * cfg.gamma)
    d2 = cfg.delta ** 2
    b = -0.5 * eta * dC * dC
    b += k * eta * float(np.sum(tX_prev * d2 * dX_prev ** 2 - state.tau_X * dX ** 2))
    b += k * eta * float(np.sum(tY_prev * d2 * dY_prev ** 2 - state.tau_Y * dY ** 2))
    return b


def _block_diffs(A, B, partition):
    return np.array([np.linalg.norm(A[:, sl] - B[:, sl]) for sl in partition.slices()])


def elam_solve(X0, Y0, C0, S, eta: float, phi: CappedPhi, P: SamplingProblem, cfg: ElamConfig,
               partition: GroupPartition, weight: float = 1.0, active=None,
               inner_tol: Optional[float] = None,
               monitor: Optional[Callable[[SweepRecord], None]] = None,
               backend: Optional[str] = None) -> ElamResult:
    """Solve the augmented Lagrangian subproblem approximately.

    Sweeps stop once the largest of the changes in ``X``, ``Y`` and ``C``
    (Frobenius norm, divided by ``1 + ||C||_F``) falls to ``inner_tol``
    (``cfg.inner_tol`` when omitted) or after ``cfg.max_inner`` sweeps.

    ``monitor`` receives a :class:`SweepRecord` after every sweep; recording
    evaluates the Lagrangian twice per sweep and is meant for diagnostics.
    """
    tol = cfg.inner_tol if inner_tol is None else inner_tol
    state = ElamState(X0, Y0, C0, S, eta, partition, weight, active)
    if not all(np.isfinite(a).all() for a in (state.X, state.Y, state.C, state.S)):
        raise NumericalFailure("non-finite starting point", sweep=0)
    s = len(partition)
    dX_prev = np.zeros(s)
    dY_prev = np.zeros(s)
    change = math.inf
    sweeps = 0
    for j in range(cfg.max_inner):
        X_old = state.X.copy(order="F")
        Y_old = state.Y.copy(order="F")
        C_old = state.C
        tX_prev = state.tau_X.copy()
        tY_prev = state.tau_Y.copy()
        if monitor is not None:
            L_before = lagrangian(state.X, state.Y, state.C, S, eta, phi, partition, weight)
        try:
            sweep_groups(state, phi, eta, cfg, backend)
        except NumericalFailure as exc:
            raise NumericalFailure(f"inner sweep {j}: {exc}", sweep=j) from exc
        drift = state.residual_drift() if monitor is not None else math.nan
        prune_zero_groups(state, cfg)
        update_C(state, P, eta, S)
        state.sweep += 1
        sweeps = j + 1
        if not (np.isfinite(state.X).all() and np.isfinite(state.Y).all() and np.isfinite(state.C).all()):
            raise NumericalFailure(f"non-finite iterate in inner sweep {j}", sweep=j)
        dX = np.linalg.norm(state.X - X_old)
        dY = np.linalg.norm(state.Y - Y_old)
        dC = np.linalg.norm(state.C - C_old)
        change = max(dX, dY, dC) / (1.0 + np.linalg.norm(state.C))
        if monitor is not None:
            gX = _block_diffs(state.X, X_old, partition)
            gY = _block_diffs(state.Y, Y_old, partition)
            bound = _descent_bound(state, eta, cfg, dX_prev, dY_prev, tX_prev, tY_prev, gX, gY, dC)
            L_after = lagrangian(state.X, state.Y, state.C, S, eta, phi, partition, weight)
            monitor(SweepRecord(j, L_before, L_after, bound, drift, change))
            dX_prev, dY_prev = gX, gY
        if change <= tol:
            break
    return ElamResult(state.X, state.Y, state.C, sweeps, float(change), state.active.copy(), state)
