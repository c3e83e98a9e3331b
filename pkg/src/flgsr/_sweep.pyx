# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled group sweep; mirrors ``elam.sweep_groups_python`` step for step."""

from libc.math cimport sqrt, log1p, INFINITY, NAN
from scipy.linalg.cython_blas cimport dgemm
from scipy.linalg.cython_lapack cimport dsyev

import numpy as np

cdef double TIE_TOL = 1e-12


cdef inline double _phi(int kind, double nu, double theta, double lnorm, double t) noexcept nogil:
    if t >= nu:
        return 1.0
    if kind == 0:
        return t / nu
    return log1p(t / theta) / lnorm


cdef inline double _objective(int kind, double nu, double theta, double lnorm,
                              double lam, double z, double x) noexcept nogil:
    return lam * _phi(kind, nu, theta, lnorm, x) + 0.5 * (x - z) * (x - z)


cdef double _scalar_prox(int kind, double nu, double theta, double lnorm,
                         double lam, double z) noexcept nogil:
    cdef double c[5]
    cdef int nc = 0, a, b
    cdef double disc, root, x, tmp, val, best_x, best_val
    c[nc] = 0.0; nc += 1
    c[nc] = nu; nc += 1
    if z >= nu:
        c[nc] = z; nc += 1
    if kind == 0:
        x = z - lam / nu
        if 0.0 < x < nu:
            c[nc] = x; nc += 1
    else:
        disc = (z + theta) * (z + theta) - 4.0 * lam / lnorm
        if disc >= 0:
            root = sqrt(disc)
            x = 0.5 * (z - theta - root)
            if 0.0 < x < nu:
                c[nc] = x; nc += 1
            x = 0.5 * (z - theta + root)
            if 0.0 < x < nu:
                c[nc] = x; nc += 1
    for a in range(1, nc):
        b = a
        while b > 0 and c[b - 1] > c[b]:
            tmp = c[b]; c[b] = c[b - 1]; c[b - 1] = tmp
            b -= 1
    best_x = 0.0
    best_val = _objective(kind, nu, theta, lnorm, lam, z, 0.0)
    for a in range(nc):
        val = _objective(kind, nu, theta, lnorm, lam, z, c[a])
        if val < best_val - TIE_TOL:
            best_x = c[a]
            best_val = val
    return best_x


cdef double _max_eig(double* gram, int k, double* scratch, double* evals, double* work, int lwork) noexcept nogil:
    # largest eigenvalue of a k x k symmetric matrix, clipped at zero
    cdef char jobz = b'N'
    cdef char uplo = b'L'
    cdef int info = 0, i
    cdef double v
    if k == 1:
        return gram[0] if gram[0] > 0 else 0.0
    for i in range(k * k):
        scratch[i] = gram[i]
    dsyev(&jobz, &uplo, &k, scratch, &k, evals, work, &lwork, &info)
    v = evals[k - 1]
    return v if v > 0 else 0.0


cdef void _block_step(double* B, double* Bp, double* other, int rows, int cols_other, int k,
                      double* R, int m, bint transpose_R,
                      double* tau_arr, int gi, double momentum, double cap,
                      double gamma, double eps_floor, double eta, double weight,
                      int kind, double nu, double theta, double lnorm,
                      double* gram, double* old, double* bar, double* grad,
                      double* scratch, double* evals, double* work, int lwork) noexcept nogil:
    # One linearized prox step on block B (rows x k) whose partner block is
    # ``other`` (cols_other x k). For the X step R is used as-is, for the Y
    # step as R^T.
    cdef char N = b'N'
    cdef char T = b'T'
    cdef double one = 1.0, zero = 0.0
    cdef int size = rows * k, j
    cdef double lip, tau, w, r, znorm, x, lam
    dgemm(&T, &N, &k, &k, &cols_other, &one, other, &cols_other, other, &cols_other, &zero, gram, &k)
    lip = _max_eig(gram, k, scratch, evals, work, lwork)
    tau = gamma * lip
    if tau < eps_floor:
        tau = eps_floor
    w = cap * sqrt(tau_arr[gi] / tau)
    if momentum < w:
        w = momentum
    for j in range(size):
        old[j] = B[j]
        bar[j] = B[j] + w * (B[j] - Bp[j])
    if transpose_R:
        dgemm(&T, &N, &rows, &k, &m, &one, R, &m, other, &m, &zero, grad, &rows)
    else:
        dgemm(&N, &N, &rows, &k, &cols_other, &one, R, &m, other, &cols_other, &zero, grad, &rows)
    for j in range(size):
        scratch[j] = bar[j] - old[j]
    dgemm(&N, &N, &rows, &k, &k, &one, scratch, &rows, gram, &k, &one, grad, &rows)
    znorm = 0.0
    for j in range(size):
        grad[j] = bar[j] - grad[j] / tau
        znorm += grad[j] * grad[j]
    znorm = sqrt(znorm)
    if znorm == 0.0:
        x = 0.0
    elif not (znorm < INFINITY and tau < INFINITY):
        x = NAN  # let non-finite input surface instead of pruning it away
    else:
        lam = weight * k / (eta * tau)
        x = _scalar_prox(kind, nu, theta, lnorm, lam, znorm)
    for j in range(size):
        B[j] = x * grad[j] / znorm if znorm != 0.0 else 0.0
        scratch[j] = B[j] - old[j]
        Bp[j] = old[j]
    if transpose_R:
        # R += X_i (Y_new - Y_old)^T
        dgemm(&N, &T, &m, &rows, &k, &one, other, &m, scratch, &rows, &one, R, &m)
    else:
        # R += (X_new - X_old) Y_i^T
        dgemm(&N, &T, &m, &cols_other, &k, &one, scratch, &m, other, &cols_other, &one, R, &m)
    tau_arr[gi] = tau


def sweep_groups(double[::1, :] X, double[::1, :] Y, double[::1, :] X_prev, double[::1, :] Y_prev,
                 double[::1, :] R, const long long[::1] offsets, unsigned char[::1] active,
                 double[::1] tau_X, double[::1] tau_Y, double t, double eta, double weight,
                 int kind, double nu, double theta, double gamma, double delta, double eps_floor):
    """Update every active group of ``X`` and ``Y`` in place.

    Returns the advanced extrapolation parameter ``t`` and the last momentum ratio.
    """
    cdef int m = X.shape[0]
    cdef int n = Y.shape[0]
    cdef int s = active.shape[0]
    cdef int i, off, k, kmax = 1, rows_max = m if m > n else n
    cdef double cap = delta * (gamma - 1.0) / (2.0 * (gamma + 1.0))
    cdef double lnorm = log1p(nu / theta) if kind == 1 else 1.0
    cdef double t_cur, momentum = 0.0
    if R.shape[0] != m or R.shape[1] != n or X.shape[1] != n or Y.shape[1] != n:
        raise ValueError("inconsistent shapes")
    for i in range(s):
        if offsets[i + 1] - offsets[i] > kmax:
            kmax = <int>(offsets[i + 1] - offsets[i])
    cdef int lwork = 3 * kmax
    cdef double[::1] gram = np.empty(kmax * kmax)
    cdef double[::1] old = np.empty(rows_max * kmax)
    cdef double[::1] bar = np.empty(rows_max * kmax)
    cdef double[::1] grad = np.empty(rows_max * kmax)
    cdef double[::1] scratch = np.empty(max(rows_max * kmax, kmax * kmax))
    cdef double[::1] evals = np.empty(kmax)
    cdef double[::1] work = np.empty(lwork)
    with nogil:
        for i in range(s):
            if not active[i]:
                continue
            off = <int>offsets[i]
            k = <int>(offsets[i + 1] - offsets[i])
            t_cur = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
            momentum = (t - 1.0) / t_cur
            t = t_cur
            _block_step(&X[0, off], &X_prev[0, off], &Y[0, off], m, n, k, &R[0, 0], m, False,
                        &tau_X[0], i, momentum, cap, gamma, eps_floor, eta, weight,
                        kind, nu, theta, lnorm, &gram[0], &old[0], &bar[0], &grad[0],
                        &scratch[0], &evals[0], &work[0], lwork)
            _block_step(&Y[0, off], &Y_prev[0, off], &X[0, off], n, m, k, &R[0, 0], m, True,
                        &tau_Y[0], i, momentum, cap, gamma, eps_floor, eta, weight,
                        kind, nu, theta, lnorm, &gram[0], &old[0], &bar[0], &grad[0],
                        &scratch[0], &evals[0], &work[0], lwork)
    return t, momentum
