import numpy as np
import pytest

from flgsr.regularizer import CappedPhi, prox_objective


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_min(phi: CappedPhi, lam: float, z: float, step: float = 1e-5) -> float:
    """Smallest prox objective over a uniform grid covering every minimiser."""
    hi = max(z, phi.nu) + step
    x = np.arange(0.0, hi + step, step)
    if phi.kind.value == "CapL1":
        f = np.minimum(x / phi.nu, 1.0)
    else:
        f = np.minimum(np.log1p(x / phi.theta) / phi.log_norm, 1.0)
    vals = lam * f + 0.5 * (x - z) ** 2
    return float(vals.min())


def brute_objective(phi, lam, z, x):
    return prox_objective(phi, lam, z, x)
