"""Inner loops of the coupled adoption-opinion iteration.

Every public function here dispatches to a numba-compiled loop when numba is
available (see ``_accel``) and to an equivalent numpy loop otherwise. The two
paths agree to floating-point reassociation (~1e-15), not bit for bit; each
path on its own is deterministic.

Arrays are plain float64 vectors; ``influence`` is the per-community weight in
the adoption pressure ``c * influence @ a`` (``m`` for the literal model,
``m * f`` for the population-weighted variant).
"""

import numpy as np

from ._accel import NUMBA_AVAILABLE, njit

# status codes returned by the looping kernels
OK = 0
MAX_STEPS = 1
VIOLATION = 2


def step_arrays(a, d, x, anchor, influence, m, c, beta, gamma, delta, lam, xi, W):
    """One step of the vector form. Returns ``(s, a, d, x)`` at t+1."""
    pressure = c * (influence @ a)
    a_next = a - delta * a + beta * x * m * (1.0 - a - d) * pressure
    d_next = d - gamma * x * d + delta * a
    x_next = (1.0 - lam - xi) * anchor + lam * (W @ x) + xi * pressure
    s_next = 1.0 - a_next - d_next
    return s_next, a_next, d_next, x_next


def out_of_range(tol, *vectors):
    for v in vectors:
        if v.size and (v.min() < -tol or v.max() > 1.0 + tol):
            return True
    return False


# ---------------------------------------------------------------------------
# numba loops


@njit(cache=True)
def _step_inplace(a, d, x, anchor, influence, m, c, beta, gamma, delta, lam, xi, W, a_out, d_out, x_out):
    n = a.shape[0]
    acc = 0.0
    for j in range(n):
        acc += influence[j] * a[j]
    pressure = c * acc
    for i in range(n):
        a_out[i] = a[i] - delta[i] * a[i] + beta * x[i] * m[i] * (1.0 - a[i] - d[i]) * pressure
        d_out[i] = d[i] - gamma * x[i] * d[i] + delta[i] * a[i]
        wx = 0.0
        for j in range(n):
            wx += W[i, j] * x[j]
        x_out[i] = (1.0 - lam[i] - xi[i]) * anchor[i] + lam[i] * wx + xi[i] * pressure


@njit(cache=True)
def _violates(a, d, x, tol):
    n = a.shape[0]
    for i in range(n):
        s = 1.0 - a[i] - d[i]
        if a[i] < -tol or a[i] > 1.0 + tol:
            return True
        if d[i] < -tol or d[i] > 1.0 + tol:
            return True
        if s < -tol or s > 1.0 + tol:
            return True
        if x[i] < -tol or x[i] > 1.0 + tol:
            return True
    return False


@njit(cache=True)
def _simulate_nb(a0, d0, x0, anchor, influence, m, c, beta, gamma, delta, lam, xi, W, horizon, tol):
    n = a0.shape[0]
    A = np.empty((horizon + 1, n))
    D = np.empty((horizon + 1, n))
    X = np.empty((horizon + 1, n))
    A[0] = a0
    D[0] = d0
    X[0] = x0
    for t in range(horizon):
        _step_inplace(A[t], D[t], X[t], anchor, influence, m, c, beta, gamma, delta, lam, xi, W,
                      A[t + 1], D[t + 1], X[t + 1])
        if _violates(A[t + 1], D[t + 1], X[t + 1], tol):
            return A, D, X, t + 1
    return A, D, X, -1


@njit(cache=True)
def _converge_nb(a0, d0, x0, anchor, influence, m, c, beta, gamma, delta, lam, xi, W, tol, max_steps, vtol):
    n = a0.shape[0]
    a = a0.copy()
    d = d0.copy()
    x = x0.copy()
    a2 = np.empty(n)
    d2 = np.empty(n)
    x2 = np.empty(n)
    diff = np.inf
    for t in range(max_steps):
        _step_inplace(a, d, x, anchor, influence, m, c, beta, gamma, delta, lam, xi, W, a2, d2, x2)
        if _violates(a2, d2, x2, vtol):
            return a2, d2, x2, t + 1, VIOLATION, diff
        diff = 0.0
        for i in range(n):
            diff = max(diff, abs(a2[i] - a[i]), abs(d2[i] - d[i]), abs(x2[i] - x[i]))
        a, a2 = a2, a
        d, d2 = d2, d
        x, x2 = x2, x
        if diff < tol:
            return a, d, x, t + 1, OK, diff
    return a, d, x, max_steps, MAX_STEPS, diff


# ---------------------------------------------------------------------------
# numpy loops


def _simulate_np(a0, d0, x0, anchor, influence, m, c, beta, gamma, delta, lam, xi, W, horizon, tol):
    n = a0.shape[0]
    A = np.empty((horizon + 1, n))
    D = np.empty((horizon + 1, n))
    X = np.empty((horizon + 1, n))
    A[0], D[0], X[0] = a0, d0, x0
    for t in range(horizon):
        s, A[t + 1], D[t + 1], X[t + 1] = step_arrays(
            A[t], D[t], X[t], anchor, influence, m, c, beta, gamma, delta, lam, xi, W)
        if out_of_range(tol, A[t + 1], D[t + 1], s, X[t + 1]):
            return A, D, X, t + 1
    return A, D, X, -1


def _converge_np(a0, d0, x0, anchor, influence, m, c, beta, gamma, delta, lam, xi, W, tol, max_steps, vtol):
    a, d, x = a0.copy(), d0.copy(), x0.copy()
    diff = np.inf
    for t in range(max_steps):
        s2, a2, d2, x2 = step_arrays(a, d, x, anchor, influence, m, c, beta, gamma, delta, lam, xi, W)
        if out_of_range(vtol, a2, d2, s2, x2):
            return a2, d2, x2, t + 1, VIOLATION, diff
        diff = max(np.abs(a2 - a).max(), np.abs(d2 - d).max(), np.abs(x2 - x).max())
        a, d, x = a2, d2, x2
        if diff < tol:
            return a, d, x, t + 1, OK, diff
    return a, d, x, max_steps, MAX_STEPS, diff


def _f64(v):
    return np.ascontiguousarray(v, dtype=np.float64)


def simulate_arrays(a0, d0, x0, anchor, influence, m, c, beta, gamma, delta, lam, xi, W, horizon, tol=1e-9):
    """Iterate ``horizon`` steps. Returns ``(A, D, X, bad_step)``; ``bad_step`` is -1
    when every state stayed in range, otherwise the first offending step (arrays
    are filled up to and including that row)."""
    fn = _simulate_nb if NUMBA_AVAILABLE else _simulate_np
    A, D, X, bad = fn(_f64(a0), _f64(d0), _f64(x0), _f64(anchor), _f64(influence), _f64(m), float(c),
                      float(beta), float(gamma), _f64(delta), _f64(lam), _f64(xi), _f64(W), int(horizon), float(tol))
    return A, D, X, int(bad)


def converge_arrays(a0, d0, x0, anchor, influence, m, c, beta, gamma, delta, lam, xi, W,
                    tol=1e-10, max_steps=1_000_000, vtol=1e-9):
    """Iterate until the sup-norm change between consecutive states drops below ``tol``.

    Returns ``(a, d, x, steps, status, last_diff)`` with status one of OK,
    MAX_STEPS, VIOLATION.
    """
    fn = _converge_nb if NUMBA_AVAILABLE else _converge_np
    a, d, x, steps, status, diff = fn(_f64(a0), _f64(d0), _f64(x0), _f64(anchor), _f64(influence), _f64(m),
                                      float(c), float(beta), float(gamma), _f64(delta), _f64(lam), _f64(xi),
                                      _f64(W), float(tol), int(max_steps), float(vtol))
    return a, d, x, int(steps), int(status), float(diff)
