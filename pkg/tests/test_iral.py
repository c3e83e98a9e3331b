import math
import os
from collections import deque

import numpy as np
import pytest

from flgsr.cli import build_instance
from flgsr.config import expand_runs, load_config
from flgsr.elam import ElamConfig, lagrangian
from flgsr.errors import DomainError, NumericalFailure
from flgsr.grouping import make_partition
from flgsr.iral import (InitKind, IralConfig, OuterState, initialize, iral_solve, kkt_residual,
                        outer_update, restart_check, update_multiplier)
from flgsr.linops import SamplingProblem
from flgsr.regularizer import CappedPhi


def test_restart_check_examples():
    assert restart_check([1.0, 0.9, 0.8], 0.79, 0.999)
    assert not restart_check([1.0, 0.9, 0.8], 0.80, 0.999)
    assert restart_check([3.0, 1e-9], 0.0, 0.5)
    with pytest.raises(RuntimeError):
        restart_check([], 0.1, 0.999)


def test_update_multiplier_examples(rng):
    X, Y = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    S = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(update_multiplier(S, 3.0, X, Y, X @ Y.T), S)
    C = rng.standard_normal((4, 4))
    E = X @ Y.T - C
    np.testing.assert_allclose(update_multiplier(np.zeros((4, 4)), 2.0, X, Y, C), 2 * E, atol=1e-15)
    out = update_multiplier(S, 0.7, X, Y, C)
    for i in range(4):
        for j in range(4):
            assert out[i, j] == pytest.approx(S[i, j] + 0.7 * (sum(X[i, l] * Y[j, l] for l in range(3)) - C[i, j]))


def test_config_domain():
    for bad in (dict(rho1=1.0), dict(rho2=0.0), dict(rho3=-0.1), dict(eta0=0.0), dict(eps0=-1.0),
                dict(vartheta=0), dict(max_outer=0)):
        with pytest.raises(DomainError):
            IralConfig(**bad)


def scripted(residuals, cfg):
    """Drive outer_update with a fixed residual sequence and a constant step matrix."""
    E = np.arange(4.0).reshape(2, 2) - 1.5
    st = OuterState(np.ones((2, 2)), cfg.eta0, cfg.eps0, deque(maxlen=cfg.vartheta))
    trace = []
    for k, r in enumerate(residuals):
        S_before, eta_before, eps_before = st.S.copy(), st.eta, st.eps
        b = outer_update(k, r, st, cfg, lambda: E)
        trace.append((b, S_before, eta_before, eps_before, st.S.copy(), st.eta, st.eps))
    return trace, E, st


def test_scripted_branch_trace():
    cfg = IralConfig(vartheta=3, rho1=0.999, rho2=0.5, rho3=0.25, eta0=2.0, eps0=8.0)
    # k: 0..3 forced restarts; history then [.9, .95, .89]
    seq = [1.0, 0.9, 0.95, 0.89, 0.95, 0.5, 0.6, 0.49, 0.499]
    expected = ["a", "a", "a", "a", "c", "b", "c", "b", "c"]
    trace, E, st = scripted(seq, cfg)
    assert [t[0] for t in trace] == expected
    for b, S0, eta0, eps0, S1, eta1, eps1 in trace:
        if b == "a":
            assert np.all(S1 == 0) and eta1 == eta0 and eps1 == eps0
        elif b == "b":
            assert np.all(S1 == 0) and eta1 == eta0
            assert eps1 == pytest.approx(math.sqrt(0.999) * eps0, rel=1e-15)
        else:
            np.testing.assert_allclose(S1, S0 + eta0 * E, rtol=1e-15)
            assert eta1 == pytest.approx(eta0 / 0.5, rel=1e-15)
            assert eps1 == pytest.approx(0.25 * eps0, rel=1e-15)
    assert st.restarts == 2
    assert list(st.history) == [0.6, 0.49, 0.499]


def test_restart_disabled_always_escalates():
    cfg = IralConfig(vartheta=3, restart=False)
    trace, _, st = scripted([1.0, 0.5, 0.25, 0.1, 0.05], cfg)
    assert [t[0] for t in trace] == ["c"] * 5
    assert st.restarts == 0
    assert st.eta == pytest.approx(cfg.eta0 * 2 ** 5)


def test_tolerance_decays_after_vartheta():
    cfg = IralConfig(vartheta=4, rho1=0.81, rho3=0.7)
    rng = np.random.default_rng(0)
    seq = list(np.cumprod(rng.uniform(0.5, 1.3, 40)))
    trace, _, _ = scripted(seq, cfg)
    eps = [t[3] for t in trace] + [trace[-1][6]]
    q = max(math.sqrt(cfg.rho1), cfg.rho3)
    # iteration vartheta still takes the forced restart, so decay starts one step later
    assert eps[cfg.vartheta + 1] == eps[cfg.vartheta]
    for k in range(cfg.vartheta + 1, len(eps)):
        assert eps[k] <= q ** (k - cfg.vartheta - 1) * eps[cfg.vartheta] * (1 + 1e-12)


def sampled(rng, m=12, n=10, r=2, frac=0.7, sigma=0.0):
    M = rng.uniform(0, 1, (m, r)) @ rng.uniform(0, 1, (r, n))
    obs = rng.random(M.shape) < frac
    return M, SamplingProblem.from_matrix(M, obs, sigma)


@pytest.mark.parametrize("init", list(InitKind))
def test_inits_reproduce_zero_filled(rng, init):
    M, P = sampled(rng)
    X0, Y0, C0 = initialize(P, 3, init)
    np.testing.assert_allclose(X0 @ Y0.T, P.zero_filled(), atol=1e-12)
    np.testing.assert_allclose(C0, P.project_theta(P.zero_filled()), atol=1e-12)
    part = make_partition(10, 3)
    L = lagrangian(X0, Y0, C0, np.zeros_like(C0), 1e-3, CappedPhi(), part)
    assert math.isfinite(L)


def test_identity_inits_are_exact(rng):
    _, P = sampled(rng)
    X0, Y0, _ = initialize(P, 2, InitKind.DATA_IDENTITY)
    np.testing.assert_array_equal(X0 @ Y0.T, P.zero_filled())
    np.testing.assert_array_equal(Y0, np.eye(10))


def test_full_observation_converges(rng):
    M = rng.uniform(0, 1, (20, 2)) @ rng.uniform(0, 1, (2, 15))
    P = SamplingProblem.from_matrix(M, np.ones(M.shape, bool), 0.0)
    cfg = IralConfig(groups=5)
    res = iral_solve(P, cfg)
    assert res.outer_iters <= 5
    np.testing.assert_array_equal(res.C_hat, M)
    assert res.final_residual / (1 + np.linalg.norm(res.C_hat)) <= cfg.outer_tol


def test_output_is_feasible_and_records_history(rng):
    M, P = sampled(rng, 15, 12, 2, 0.6, sigma=0.05)
    ks = []
    cfg = IralConfig(groups=4, max_outer=25, vartheta=5)
    res = iral_solve(P, cfg, callback=lambda d: ks.append(d["k"]))
    assert np.linalg.norm(P.apply(res.C_hat) - P.b) <= P.sigma + 1e-10
    assert ks == list(range(res.outer_iters))
    assert len(res.residual_history) == res.outer_iters
    assert res.residual_history[-1] == pytest.approx(res.final_residual, rel=1e-12)
    assert res.restarts == res.branches.count("b")
    assert all(b == "a" for b in res.branches[:cfg.vartheta + 1])
    assert res.wall_time > 0


def test_kkt_residual_zero_at_stationary_point(rng):
    # flat penalty above nu plus a zero multiplier: every active block is stationary
    X = 5 * rng.standard_normal((6, 4))
    Y = 5 * rng.standard_normal((5, 4))
    part = make_partition(4, 2)
    assert kkt_residual(X, Y, X @ Y.T, np.zeros((6, 5)), CappedPhi(), part) == pytest.approx(0.0, abs=1e-12)
    # pruned group plus a multiplier orthogonal to the surviving blocks
    X[:, :2] = 0
    Y[:, :2] = 0
    Qx = np.linalg.qr(X[:, 2:])[0]
    Qy = np.linalg.qr(Y[:, 2:])[0]
    L = rng.standard_normal((6, 5))
    L = (L - Qx @ (Qx.T @ L)) @ (np.eye(5) - Qy @ Qy.T)
    assert kkt_residual(X, Y, X @ Y.T, L, CappedPhi(), part, active=[False, True]) < 1e-12
    assert kkt_residual(X, Y, X @ Y.T, L + 1.0, CappedPhi(), part, active=[False, True]) > 1.0


def test_numerical_failure_carries_outer_index(rng):
    M, P = sampled(rng)
    X0, Y0, C0 = initialize(P, 2)
    X0 = X0.copy()
    X0[0, 0] = np.inf
    with pytest.raises(NumericalFailure) as exc:
        iral_solve(P, IralConfig(groups=2), start=(X0, Y0, C0))
    assert exc.value.outer == 0 and exc.value.sweep == 0


def test_penalty_overflow_is_a_failure(rng):
    _, P = sampled(rng)
    cfg = IralConfig(groups=2, eta0=1e300, restart=False, outer_tol=1e-300, max_outer=50,
                     elam=ElamConfig(max_inner=2))
    with pytest.raises(NumericalFailure) as exc:
        iral_solve(P, cfg)
    assert exc.value.outer is not None


def test_too_many_groups_rejected(rng):
    _, P = sampled(rng)
    with pytest.raises(DomainError):
        iral_solve(P, IralConfig(groups=11))


def test_synthetic_default_run_is_stationary():
    cfg = load_config(os.path.join(os.path.dirname(__file__), "..", "configs", "synthetic.yaml"))
    M, P, _ = build_instance(expand_runs(cfg)[0], cfg)
    res = iral_solve(P, cfg.solver)
    kkt = kkt_residual(res.X, res.Y, res.C_hat, res.multiplier, cfg.solver.phi, res.partition,
                       cfg.solver.reg_weight, res.active)
    assert kkt <= 1e-2
    assert np.linalg.norm(P.apply(res.C_hat) - P.b) <= P.sigma + 1e-10
