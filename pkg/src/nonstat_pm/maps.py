"""Pomeau-Manneville intermittent maps on [0, 1].

``T_alpha(x) = x (1 + 2^alpha x^alpha)`` on ``[0, 1/2)`` and ``2x - 1`` on
``[1/2, 1]``.  ``alpha = 0`` is the doubling map.  Every function accepts
scalars or numpy arrays.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

INVERSE_TOL = 1e-14
_MAX_NEWTON = 200


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"map parameter must lie in [0, 1), got {alpha!r}")
    return alpha


def _check_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("points must lie in [0, 1]")
    return arr


def _power(x: np.ndarray, alpha: float) -> np.ndarray:
    # x**alpha via exp(alpha log x) with x == 0 short-circuited
    out = np.zeros_like(x)
    pos = x > 0.0
    out[pos] = np.exp(alpha * np.log(x[pos]))
    return out


def _left(alpha: float, x: np.ndarray) -> np.ndarray:
    if alpha == 0.0:
        return 2.0 * x
    return x * (1.0 + 2.0**alpha * _power(x, alpha))


def _left_derivative(alpha: float, x: np.ndarray) -> np.ndarray:
    if alpha == 0.0:
        return np.full_like(x, 2.0)
    return 1.0 + 2.0**alpha * (1.0 + alpha) * _power(x, alpha)


def _unwrap(out: np.ndarray, like):
    return float(out.reshape(-1)[0]) if np.ndim(like) == 0 else out


def apply_map(alpha: float, x):
    """Evaluate ``T_alpha`` at ``x``; x = 1/2 belongs to the right branch."""
    alpha = _check_alpha(alpha)
    arr = np.atleast_1d(_check_points(x))
    out = np.where(arr < 0.5, _left(alpha, arr), 2.0 * arr - 1.0)
    return _unwrap(np.clip(out, 0.0, 1.0), x)


def map_derivative(alpha: float, x):
    """One-sided derivative of ``T_alpha``; equals 2 on ``[1/2, 1]``."""
    alpha = _check_alpha(alpha)
    arr = np.atleast_1d(_check_points(x))
    out = np.where(arr < 0.5, _left_derivative(alpha, arr), 2.0)
    return _unwrap(out, x)


def left_inverse(alpha: float, x) -> np.ndarray:
    """Solve ``y (1 + 2^alpha y^alpha) = x`` for ``y`` in ``[0, 1/2]``.

    Newton iteration safeguarded by the bracket ``[x/2, min(x, 1/2)]``
    (valid because ``y <= T(y) <= 2y`` on the left branch); a Newton step
    leaving the current bracket is replaced by bisection.
    """
    alpha = _check_alpha(alpha)
    x = np.atleast_1d(_check_points(x)).astype(float)
    if alpha == 0.0:
        return 0.5 * x
    lo = 0.5 * x
    hi = np.minimum(x, 0.5)
    y = 0.5 * (lo + hi)
    active = hi - lo > 0.0
    for _ in range(_MAX_NEWTON):
        if not active.any():
            break
        ya = y[active]
        resid = _left(alpha, ya) - x[active]
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(resid < 0.0, ya, lo_a)
        hi_a = np.where(resid > 0.0, ya, hi_a)
        step = resid / _left_derivative(alpha, ya)
        y_new = ya - step
        outside = (y_new < lo_a) | (y_new > hi_a)
        y_new = np.where(outside, 0.5 * (lo_a + hi_a), y_new)
        done = (np.abs(y_new - ya) <= 0.25 * INVERSE_TOL) | (resid == 0.0) | (hi_a - lo_a <= INVERSE_TOL)
        y[active] = np.where(resid == 0.0, ya, y_new)
        lo[active], hi[active] = lo_a, hi_a
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    else:
        raise RuntimeError("left-branch inversion did not converge")
    y = np.clip(y, 0.0, 0.5)
    y[x >= 1.0] = 0.5
    return y


def inverse_branches(alpha: float, x):
    """Return the two preimages ``(y_left, y_right)`` of ``x`` under ``T_alpha``."""
    arr = _check_points(x)
    left = left_inverse(alpha, arr)
    right = 0.5 * (np.atleast_1d(arr) + 1.0)
    if np.ndim(x) == 0:
        return float(left[0]), float(right[0])
    return left, right


def iterate(schedule_prefix: Iterable[float], x):
    """Apply ``T_{alpha_n} o ... o T_{alpha_1}`` for a finite list of parameters."""
    out = x
    for alpha in schedule_prefix:
        out = apply_map(alpha, out)
    return out
