"""Hot path-generation kernels.

Two interchangeable implementations of the per-path market recursion: a
numba-compiled loop and a pure-numpy vectorized fallback.  The backend is
selected by the ``REBKYLE_BACKEND`` environment variable (``numba``,
``numpy``, or unset for automatic).  Both implementations perform the same
elementwise operations in the same order, so their outputs are bit-identical;
the test suite asserts this.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


def get_backend() -> str:
    """Resolve the active backend from the environment."""
    choice = os.environ.get("REBKYLE_BACKEND", "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("REBKYLE_BACKEND=numba but numba is not installed")
        return "numba"
    return "numba" if HAVE_NUMBA else "numpy"


def _paths_numpy(lam, mu, rv, sv, b_i, b_r, a_r, v, a, dw):
    n_paths = v.shape[0]
    n = lam.shape[0]
    dth_i = np.empty((n_paths, n))
    dth_r = np.empty((n_paths, n))
    y = np.empty((n_paths, n))
    p = np.empty((n_paths, n))
    q = np.empty((n_paths, n))
    p_prev = np.zeros(n_paths)
    q_prev = np.zeros(n_paths)
    thr_prev = np.zeros(n_paths)
    for k in range(n):
        d_i = b_i[k] * (v - p_prev)
        d_r = b_r[k] * (a - thr_prev) + a_r[k] * q_prev
        yk = d_i + d_r + dw[:, k]
        pk = p_prev + lam[k] * yk + mu[k] * q_prev
        qk = q_prev + rv[k] * yk + sv[k] * q_prev
        dth_i[:, k] = d_i
        dth_r[:, k] = d_r
        y[:, k] = yk
        p[:, k] = pk
        q[:, k] = qk
        p_prev = pk
        q_prev = qk
        thr_prev = thr_prev + d_r
    return dth_i, dth_r, y, p, q


@njit(cache=True)
def _paths_numba(lam, mu, rv, sv, b_i, b_r, a_r, v, a, dw):  # pragma: no cover
    n_paths = v.shape[0]
    n = lam.shape[0]
    dth_i = np.empty((n_paths, n))
    dth_r = np.empty((n_paths, n))
    y = np.empty((n_paths, n))
    p = np.empty((n_paths, n))
    q = np.empty((n_paths, n))
    for i in range(n_paths):
        p_prev = 0.0
        q_prev = 0.0
        thr_prev = 0.0
        for k in range(n):
            d_i = b_i[k] * (v[i] - p_prev)
            d_r = b_r[k] * (a[i] - thr_prev) + a_r[k] * q_prev
            yk = d_i + d_r + dw[i, k]
            pk = p_prev + lam[k] * yk + mu[k] * q_prev
            qk = q_prev + rv[k] * yk + sv[k] * q_prev
            dth_i[i, k] = d_i
            dth_r[i, k] = d_r
            y[i, k] = yk
            p[i, k] = pk
            q[i, k] = qk
            p_prev = pk
            q_prev = qk
            thr_prev = thr_prev + d_r
    return dth_i, dth_r, y, p, q


def simulate_paths(lam, mu, rv, sv, b_i, b_r, a_r, v, a, dw, backend=None):
    """Run the market recursion for every path.

    Parameters are per-period coefficient arrays of length N, primitive draws
    ``v``/``a`` of length P, and noise increments ``dw`` of shape (P, N).
    Returns (dtheta_i, dtheta_r, y, p, q), each of shape (P, N).
    """
    args = tuple(np.ascontiguousarray(x, dtype=np.float64)
                 for x in (lam, mu, rv, sv, b_i, b_r, a_r, v, a, dw))
    if backend is None:
        backend = get_backend()
    if backend == "numba":
        return _paths_numba(*args)
    return _paths_numpy(*args)
