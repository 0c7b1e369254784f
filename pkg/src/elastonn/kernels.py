"""Hot numeric kernels: numba-jitted with pure-numpy fallbacks.

Set ``ELASTONN_DISABLE_NUMBA=1`` to force the numpy path (same results, no
JIT warm-up). ``benchmarks/bench_kernels.py`` compares both. The public
functions dispatch on the flag at import time; the ``*_nb`` / ``*_np``
variants stay importable for tests and benchmarks.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("ELASTONN_DISABLE_NUMBA", "").strip() not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap(args[0]) if args and callable(args[0]) else wrap


# ---------------------------------------------------------------------------
# Gaussian-process covariance builds
# ---------------------------------------------------------------------------


def sq_exp_cov_np(x, corr_length):
    d = x[:, None] - x[None, :]
    return np.exp(-0.5 * (d / corr_length) ** 2)


@njit(cache=True)
def sq_exp_cov_nb(x, corr_length):
    n = x.shape[0]
    k = np.empty((n, n))
    inv = 0.5 / (corr_length * corr_length)
    for i in range(n):
        k[i, i] = 1.0
        for j in range(i):
            d = x[i] - x[j]
            v = np.exp(-d * d * inv)
            k[i, j] = v
            k[j, i] = v
    return k


def periodic_cov_np(x, corr_length, period):
    d = np.sin(np.pi * (x[:, None] - x[None, :]) / period)
    return np.exp(-2.0 * d * d / corr_length**2)


@njit(cache=True)
def periodic_cov_nb(x, corr_length, period):
    n = x.shape[0]
    k = np.empty((n, n))
    inv = 2.0 / (corr_length * corr_length)
    for i in range(n):
        k[i, i] = 1.0
        for j in range(i):
            s = np.sin(np.pi * (x[i] - x[j]) / period)
            v = np.exp(-s * s * inv)
            k[i, j] = v
            k[j, i] = v
    return k


# ---------------------------------------------------------------------------
# quadratic-element 1D FEM assembly
#
# Element nodes (2e, 2e+1, 2e+2); reference shape functions on [-1, 1]:
#   N = [xi(xi-1)/2, 1-xi^2, xi(xi+1)/2]
# Symmetric banded storage is scipy's upper form: ab[2 + i - j, j], i <= j.
# ---------------------------------------------------------------------------

GAUSS_XI = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS_W = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def shape_values(xi):
    xi = np.asarray(xi, dtype=np.float64)
    return np.stack([0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)], axis=-1)


def shape_derivs(xi):
    xi = np.asarray(xi, dtype=np.float64)
    return np.stack([xi - 0.5, -2.0 * xi, xi + 0.5], axis=-1)


def load_vector_np(f_quad, h):
    """Assemble the consistent load vector from f at the 3 Gauss points per element."""
    n_el = f_quad.shape[0]
    n = 2 * n_el + 1
    nq = shape_values(GAUSS_XI)  # (3q, 3a)
    local = (f_quad * GAUSS_W) @ nq * (0.5 * h)  # (n_el, 3a)
    b = np.zeros(n)
    idx = 2 * np.arange(n_el)[:, None] + np.arange(3)[None, :]
    np.add.at(b, idx, local)
    return b


@njit(cache=True)
def load_vector_nb(f_quad, h):
    n_el = f_quad.shape[0]
    n = 2 * n_el + 1
    b = np.zeros(n)
    xi = np.array([-0.7745966692414834, 0.0, 0.7745966692414834])
    w = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
    for e in range(n_el):
        for q in range(3):
            x = xi[q]
            n1 = 0.5 * x * (x - 1.0)
            n2 = 1.0 - x * x
            n3 = 0.5 * x * (x + 1.0)
            c = f_quad[e, q] * w[q] * 0.5 * h
            b[2 * e] += c * n1
            b[2 * e + 1] += c * n2
            b[2 * e + 2] += c * n3
    return b


def stiffness_banded(n_el, h):
    """Upper-banded stiffness of -u'' on a uniform quadratic mesh."""
    # local K = 1/(3h) [[7, -8, 1], [-8, 16, -8], [1, -8, 7]]
    n = 2 * n_el + 1
    ab = np.zeros((3, n))
    k = np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / (3.0 * h)
    for e in range(n_el):
        base = 2 * e
        for a in range(3):
            for b_ in range(a, 3):
                ab[2 + (base + a) - (base + b_), base + b_] += k[a, b_]
    return ab


def newton_assemble_a_np(u, h, load):
    """Residual and banded tangent of the nonlinear bar's weak form.

    Returns (ok, R, ab): ok=False if the stretch 1+u' is non-positive at any
    Gauss point (R, ab are then partial and must be discarded).
    """
    n_el = (u.shape[0] - 1) // 2
    n = u.shape[0]
    dn = shape_derivs(GAUSS_XI) * (2.0 / h)  # (3q, 3a) physical derivatives
    u_el = np.lib.stride_tricks.sliding_window_view(u, 3)[::2]  # (n_el, 3)
    du_q = u_el @ dn.T  # (n_el, 3q)
    F = 1.0 + du_q
    if np.any(F <= 0.0):
        return False, None, None
    P = 1.5 * (np.sqrt(F) - 1.0)
    dP = 0.75 / np.sqrt(F)
    wq = GAUSS_W * 0.5 * h

    R = -load.copy()
    local_r = (P * wq) @ dn  # (n_el, 3a)
    idx = 2 * np.arange(n_el)[:, None] + np.arange(3)[None, :]
    np.add.at(R, idx, local_r)

    ab = np.zeros((3, n))
    coeff = dP * wq  # (n_el, 3q)
    blocks = np.einsum("eq,qa,qb->eab", coeff, dn, dn)
    for a in range(3):
        for b_ in range(a, 3):
            np.add.at(ab[2 + a - b_], idx[:, b_], blocks[:, a, b_])
    return True, R, ab


@njit(cache=True)
def newton_assemble_a_nb(u, h, load):
    n = u.shape[0]
    n_el = (n - 1) // 2
    xi = np.array([-0.7745966692414834, 0.0, 0.7745966692414834])
    w = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
    R = -load.copy()
    ab = np.zeros((3, n))
    dn = np.empty((3, 3))
    for q in range(3):
        dn[q, 0] = (xi[q] - 0.5) * 2.0 / h
        dn[q, 1] = -2.0 * xi[q] * 2.0 / h
        dn[q, 2] = (xi[q] + 0.5) * 2.0 / h
    for e in range(n_el):
        base = 2 * e
        for q in range(3):
            du = u[base] * dn[q, 0] + u[base + 1] * dn[q, 1] + u[base + 2] * dn[q, 2]
            F = 1.0 + du
            if F <= 0.0:
                return False, R, ab
            sf = np.sqrt(F)
            P = 1.5 * (sf - 1.0)
            dP = 0.75 / sf
            wq = w[q] * 0.5 * h
            for a in range(3):
                R[base + a] += P * dn[q, a] * wq
                for b_ in range(a, 3):
                    ab[2 + a - b_, base + b_] += dP * dn[q, a] * dn[q, b_] * wq
    return True, R, ab


if NUMBA_ENABLED:
    sq_exp_cov = sq_exp_cov_nb
    periodic_cov = periodic_cov_nb
    load_vector = load_vector_nb
    newton_assemble_a = newton_assemble_a_nb
else:
    sq_exp_cov = sq_exp_cov_np
    periodic_cov = periodic_cov_np
    load_vector = load_vector_np
    newton_assemble_a = newton_assemble_a_np
