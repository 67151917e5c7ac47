"""Distances to Gaussian laws and asymptotic covariances.

* :func:`wasserstein1_to_normal`: one-dimensional W1 between an empirical
  law and ``N(0, sigma^2)``, exact on every order-statistic interval.
* :func:`smooth_test_distance`: expectations of smooth bounded test
  functions against their Gaussian values, for any dimension.
* :func:`green_kubo`: covariance of the central limit under an invariant
  measure, as a summed autocorrelation series.
* :func:`sigma_t_integral`, :func:`rds_sigma_sq`: time-averaged and
  selection-averaged versions of it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .observables import Observable
from .schedules import QdsArray, RandomProcess, sample_omega
from .transfer import (GridDensity, GridLike, PiecewiseLinear, as_grid, invariant_linear,
                       build_ulam, lag_profile)

GK_K_MAX = 200
GK_TAIL_TOL = 1e-10
PHI_MC_POINTS = 2**20
_PHI_SCRAMBLES = 8
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


# -- one-dimensional Wasserstein distance ----------------------------------

def wasserstein1_to_normal(samples, sigma: float) -> float:
    """``∫_0^1 |F_emp^{-1}(u) - sigma Φ^{-1}(u)| du``.

    On the ``i``-th interval ``[(i-1)/M, i/M]`` the empirical quantile is
    the order statistic ``s_i``; the integral of ``|s_i - q(u)|`` splits at
    ``u* = Φ(s_i / sigma)`` and uses ``∫ Φ^{-1} = -φ(Φ^{-1})``.
    """
    s = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if s.size < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples contain non-finite values")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    M = s.size
    if sigma == 0:
        return float(np.abs(s).mean())
    a = np.arange(M) / M
    b = np.arange(1, M + 1) / M
    with np.errstate(over="ignore"):  # tiny sigma: s/sigma -> ±inf is the correct limit
        u_star = np.clip(ndtr(s / sigma), a, b)

    def partial(u):
        # ∫_0^u σ Φ^{-1}(v) dv = -σ φ(Φ^{-1}(u)), zero at u in {0, 1}
        z = ndtri(u)
        return np.where((u <= 0) | (u >= 1), 0.0, -sigma * _pdf(np.where(np.isfinite(z), z, 0.0)))

    Qa, Qs, Qb = partial(a), partial(u_star), partial(b)
    left = s * (u_star - a) - (Qs - Qa)
    right = (Qb - Qs) - s * (b - u_star)
    return float(np.sum(left + right))


def wasserstein1_empirical(x, y) -> float:
    """W1 between two empirical laws with equal sample counts."""
    x = np.sort(np.asarray(x, dtype=float).reshape(-1))
    y = np.sort(np.asarray(y, dtype=float).reshape(-1))
    if x.size != y.size:
        raise ValueError("equal sample counts required")
    return float(np.abs(x - y).mean())


def wasserstein1_stderr(samples, sigma: float, n_boot: int = 50, seed: int = 0) -> float:
    """Bootstrap standard error of :func:`wasserstein1_to_normal`."""
    s = np.asarray(samples, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    vals = [wasserstein1_to_normal(s[rng.integers(0, s.size, s.size)], sigma) for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))


# -- smooth test functions -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestFunction:
    """``h : R^d -> R`` with sup-norm bounds ``D1..D3`` of its derivatives.

    ``kind == "cosine_linear"`` means ``h(x) = cos(a·x)``; its Gaussian
    expectation is available in closed form.
    """

    __test__ = False  # not a pytest class

    kind: str
    func: Callable[[np.ndarray], np.ndarray]
    D1: float
    D2: float
    D3: float
    a: np.ndarray | None = None
    name: str = ""

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(np.asarray(x, dtype=float))), dtype=float)


def cosine_test(a) -> TestFunction:
    a = np.array(a, dtype=float).reshape(-1)
    n = float(np.linalg.norm(a))
    return TestFunction("cosine_linear", lambda x: np.cos(x @ a), n, n**2, n**3, a,
                        "cos(" + ",".join(f"{v:g}" for v in a) + ")")


def _saturating_bounds() -> tuple[float, float, float]:
    u = np.linspace(-20.0, 20.0, 400_001)
    q = 1.0 + u * u
    d1 = 3 * u**2 * q**-2.5
    d2 = (6 * u - 9 * u**3) * q**-3.5
    d3 = (6 - 63 * u**2 + 36 * u**4) * q**-4.5
    return tuple(float(np.abs(d).max()) for d in (d1, d2, d3))


_SAT = _saturating_bounds()


def saturating_cubic_test(v) -> TestFunction:
    """``h(x) = u^3 / (1 + u^2)^{3/2}`` with ``u = v·x``; bounded by 1."""
    v = np.array(v, dtype=float).reshape(-1)
    n = float(np.linalg.norm(v))

    def h(x):
        u = x @ v
        return u**3 / (1.0 + u * u) ** 1.5

    return TestFunction("saturating_cubic", h, _SAT[0] * n, _SAT[1] * n**2, _SAT[2] * n**3, v,
                        "satcubic(" + ",".join(f"{c:g}" for c in v) + ")")


def monomial_test(index: int, power: int, dim: int) -> TestFunction:
    """``x_index ** power`` (unbounded; for checks of the Gaussian integrator)."""
    def h(x):
        return x[:, index] ** power
    return TestFunction("monomial", h, math.inf, math.inf, math.inf, None, f"x{index}^{power}")


def constant_test(c: float) -> TestFunction:
    return TestFunction("constant", lambda x: np.full(x.shape[0], float(c)), 0.0, 0.0, 0.0, None,
                        f"const({c:g})")


def _cosine_directions(d: int) -> list[np.ndarray]:
    if d == 1:
        return [np.array([s]) for s in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)]
    e = np.eye(d)
    k = np.arange(1, d + 1, dtype=float)
    ones = np.ones(d)
    signs = (-1.0) ** np.arange(d)
    return [e[0], e[-1], ones / math.sqrt(d), 1.5 * signs / math.sqrt(d),
            2.0 * k / np.linalg.norm(k), 0.75 * k[::-1] / np.linalg.norm(k)]


def cosine_battery(d: int) -> list[TestFunction]:
    """Six cosines of fixed linear forms on ``R^d``."""
    return [cosine_test(a) for a in _cosine_directions(d)]


def default_battery(d: int) -> list[TestFunction]:
    """:func:`cosine_battery` plus one saturating cubic."""
    v = np.ones(d) / math.sqrt(d)
    return cosine_battery(d) + [saturating_cubic_test(v)]


def _check_cov(Sigma) -> np.ndarray:
    S = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if S.shape[0] != S.shape[1]:
        raise ValueError("Sigma must be square")
    if not np.allclose(S, S.T, atol=1e-12, rtol=0):
        raise ValueError("Sigma must be symmetric")
    if np.linalg.eigvalsh(0.5 * (S + S.T)).min() < -1e-10:
        raise ValueError("Sigma must be positive semi-definite")
    return 0.5 * (S + S.T)


def psd_sqrt(Sigma) -> np.ndarray:
    """Symmetric square root of a PSD matrix."""
    w, V = np.linalg.eigh(_check_cov(Sigma))
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


@dataclass(frozen=True)
class GaussianValue:
    value: float
    stderr: float

    def __float__(self):
        return self.value


def phi_sigma(h: TestFunction, Sigma, n_points: int = PHI_MC_POINTS, seed: int = 0) -> GaussianValue:
    """``E h(Z)`` for ``Z ~ N(0, Sigma)``.

    Closed form for cosines; otherwise ``n_points`` scrambled Sobol points
    split into independent scrambles, whose spread gives the standard error.
    """
    S = _check_cov(Sigma)
    if h.kind == "cosine_linear":
        if h.a.size != S.shape[0]:
            raise ValueError("dimension mismatch between test function and Sigma")
        return GaussianValue(float(math.exp(-0.5 * h.a @ S @ h.a)), 0.0)
    if h.kind == "constant":
        return GaussianValue(float(h(np.zeros((1, S.shape[0])))[0]), 0.0)
    d = S.shape[0]
    root = psd_sqrt(S)
    per = max(n_points // _PHI_SCRAMBLES, 2)
    m = int(round(math.log2(per)))
    vals = []
    for r in range(_PHI_SCRAMBLES):
        u = qmc.Sobol(d, scramble=True, seed=np.random.default_rng([seed, r])).random_base2(m)
        z = ndtri(np.clip(u, 1e-300, 1 - 1e-16)) @ root
        vals.append(float(np.mean(h(z))))
    vals = np.asarray(vals)
    return GaussianValue(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)))


def smooth_test_distance(samples, Sigma, battery: Sequence[TestFunction] | None = None) -> np.ndarray:
    """``|mean_h(samples) - Φ_Σ(h)|`` for each test function."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    S = _check_cov(Sigma)
    if X.shape[1] != S.shape[0]:
        raise ValueError(f"samples have dimension {X.shape[1]}, Sigma {S.shape[0]}")
    battery = default_battery(X.shape[1]) if battery is None else battery
    out = []
    for h in battery:
        if h.a is not None and h.a.size != X.shape[1]:
            raise ValueError(f"test function {h.name} has the wrong dimension")
        out.append(abs(float(np.mean(h(X))) - phi_sigma(h, S).value))
    return np.asarray(out)


def test_function_stderr(samples, battery: Sequence[TestFunction]) -> np.ndarray:
    """Monte Carlo standard error of each battery mean over ``samples``."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.asarray([float(np.std(h(X), ddof=1)) / math.sqrt(X.shape[0]) for h in battery])


test_function_stderr.__test__ = False


# -- Green-Kubo ----------------------------------------------------------------

def green_kubo_terms(alpha: float, f: Observable, grid: GridLike | None = None, K_max: int = GK_K_MAX,
                     tail_tol: float = GK_TAIL_TOL) -> np.ndarray:
    """Lag covariances ``C_k[a, b] = μ̂(f̂_a · f̂_b ∘ T^k)``, ``k = 0..K``.

    Computed as ``∫ f̂_b L^k(f̂_a ĥ) dm``.  Stops after the first ``k >= 1``
    whose entries are all below ``tail_tol``, or at ``K_max``.
    """
    g = as_grid(grid)
    if f.lip == 0:
        return np.zeros((1, f.dim, f.dim))
    h = invariant_linear(alpha, g)
    fv = f(g.gauss_points())
    fhat = fv - h.integrate(fv)
    p = h.times(fhat)
    op = build_ulam(alpha, g)
    terms = [p.integrate(fhat)]
    for _ in range(K_max):
        p = op.apply_linear(p)
        c = p.integrate(fhat)
        terms.append(c)
        if np.abs(c).max() < tail_tol:
            break
    return np.asarray(terms)


def series_sum(terms: np.ndarray) -> np.ndarray:
    """``C_0 + Σ_{k>=1} (C_k + C_k^T)``, symmetrised."""
    S = terms[0] + (terms[1:] + np.swapaxes(terms[1:], 1, 2)).sum(axis=0)
    return 0.5 * (S + S.T)


@lru_cache(maxsize=512)
def _green_kubo_cached(alpha, f, grid, K_max, tail_tol) -> np.ndarray:
    out = series_sum(green_kubo_terms(alpha, f, grid, K_max, tail_tol))
    out.setflags(write=False)
    return out


def green_kubo(alpha: float, f: Observable, grid: GridLike | None = None, K_max: int = GK_K_MAX,
               tail_tol: float = GK_TAIL_TOL) -> np.ndarray:
    """Asymptotic covariance of the centred Birkhoff sums of ``f`` under ``T_alpha``.

    ``grid`` defaults to the graded grid; pass ``2**12`` for a uniform one.
    """
    return np.array(_green_kubo_cached(float(alpha), f, as_grid(grid), int(K_max), float(tail_tol)))


def sigma_t_integral(array: QdsArray, f: Observable, t: float, n_quad: int = 32,
                     grid: GridLike | None = None, K_max: int = GK_K_MAX, tail_tol: float = GK_TAIL_TOL,
                     start: float = 0.0) -> np.ndarray:
    """``∫_start^t Σ̂_s ds`` by the midpoint rule on ``n_quad`` nodes, ``Σ̂_s`` at ``τ(s)``."""
    if not 0.0 <= start <= t <= 1.0:
        raise ValueError("need 0 <= start <= t <= 1")
    if n_quad < 1:
        raise ValueError("n_quad must be positive")
    if t == start:
        return np.zeros((f.dim, f.dim))
    h = (t - start) / n_quad
    nodes = start + h * (np.arange(n_quad) + 0.5)
    alphas = np.clip(np.asarray(array.tau(nodes), dtype=float), 0.0, array.beta_star)
    total = np.zeros((f.dim, f.dim))
    for a in alphas:
        total += green_kubo(float(a), f, grid, K_max, tail_tol)
    return h * total


# -- random selections -------------------------------------------------------

def rds_sigma_sq(process: RandomProcess, f: Observable, mu: GridDensity | PiecewiseLinear,
                 K_max: int = 40, i_burn: int = 200, n_omega: int = 50, return_draws: bool = False):
    """``Σ_k (2 - δ_{k0}) E[cov_μ(f_i, f_{i+k})]`` at ``i = i_burn``.

    One lag profile per draw ``ω`` (stream ids ``0..n_omega-1``), averaged
    over draws.  With ``return_draws`` also returns each draw's series sum.
    """
    if n_omega < 2:
        raise ValueError("n_omega must be at least 2")
    if f.dim != 1:
        raise ValueError("rds_sigma_sq takes a scalar observable")
    if f.lip == 0:
        return (0.0, np.zeros(n_omega)) if return_draws else 0.0
    weights = np.full(K_max + 1, 2.0)
    weights[0] = 1.0
    per = np.empty((n_omega, K_max + 1))
    for j in range(n_omega):
        omega = sample_omega(process, i_burn + K_max, stream_id=j).take(i_burn + K_max)
        per[j] = lag_profile(omega, f, f, i_burn, K_max, mu)[:, 0, 0]
    value = float(weights @ per.mean(axis=0))
    if return_draws:
        return value, per @ weights
    return value


# -- result records ------------------------------------------------------------

def result_record(experiment_id: str, params: dict, value, std_error=None, provenance: str = "") -> dict:
    """``{experiment_id, params, value, std_error, provenance}`` with JSON-safe numbers."""
    def clean(v):
        if isinstance(v, np.ndarray):
            return [clean(x) for x in v.tolist()]
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        if isinstance(v, (np.floating, float)):
            v = float(v)
            return v if math.isfinite(v) else str(v)
        if isinstance(v, np.integer):
            return int(v)
        return v

    return {"experiment_id": experiment_id, "params": clean(params), "value": clean(value),
            "std_error": clean(std_error), "provenance": provenance}


def write_records(path: str | Path, records: Sequence[dict]) -> None:
    Path(path).write_text(json.dumps(list(records), indent=2, sort_keys=False) + "\n")
