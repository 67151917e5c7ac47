"""Bound shapes and exponents for the convergence rates, with constant 1.

All logarithms are natural.  Only exponents are meaningful: the constants
in the underlying bounds are not quantified, so comparisons with data fit
a constant at the smallest ``N`` first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaincc, gammaln

KINDS = ("thm21", "thm22", "cor23", "prop25", "quenched", "qds_theta", "qds_covariance",
         "stein_rhs", "rho")
DEFAULT_DELTA = 0.01
DEFAULT_EPSILON = 0.01
_TAIL_DIRECT = 2**18


def _beta(beta_star: float, upper: float = 0.5) -> float:
    b = float(beta_star)
    if not 0.0 < b < upper:
        raise ValueError(f"beta_star must lie in (0, {upper}), got {beta_star!r}")
    return b


def rho(n, beta_star: float):
    """``n^{1 - 1/β}(ln n)^{1/β}`` for ``n >= 2``; ``ρ(0) = ρ(1) = 1``."""
    b = _beta(beta_star, 1.0)
    n_arr = np.asarray(n)
    if np.any(n_arr < 0) or np.any(n_arr != np.floor(n_arr)):
        raise ValueError("n must be a non-negative integer")
    x = np.maximum(n_arr.astype(float), 2.0)
    out = np.where(n_arr >= 2, np.exp((1.0 - 1.0 / b) * np.log(x) + np.log(np.log(x)) / b), 1.0)
    return float(out) if out.ndim == 0 else out


def rho_peak(beta_star: float) -> float:
    """``ρ`` increases on ``[2, x*]`` and decreases beyond ``x* = e^{1/(1-β)}``."""
    return math.exp(1.0 / (1.0 - _beta(beta_star, 1.0)))


def rho_integral(x0: float, beta_star: float) -> float:
    """``∫_{x0}^∞ x^{1-1/β}(ln x)^{1/β} dx`` for ``x0 > 1`` and ``β < 1/2``."""
    b = _beta(beta_star)
    if x0 <= 1.0:
        raise ValueError("x0 must exceed 1")
    p = 1.0 / b
    c = p - 2.0
    # substitute x = e^u: ∫_{ln x0}^∞ u^p e^{-c u} du = c^{-(p+1)} Γ(p+1, c ln x0)
    log_gamma = gammaln(p + 1.0) - (p + 1.0) * math.log(c)
    return float(math.exp(log_gamma) * gammaincc(p + 1.0, c * math.log(x0)))


def rho_tail(K, beta_star: float) -> np.ndarray | float:
    """``Σ_{i=K+1}^∞ ρ(i)``: direct sum plus a midpoint-rule integral remainder."""
    b = _beta(beta_star)
    K_arr = np.asarray(K, dtype=np.int64)
    if np.any(K_arr < 0):
        raise ValueError("K must be non-negative")
    top = int(K_arr.max()) + _TAIL_DIRECT
    terms = rho(np.arange(1, top + 1), b)
    suffix = np.cumsum(terms[::-1])[::-1]  # suffix[j] = Σ_{i=j+1}^{top} ρ(i)
    remainder = rho_integral(top + 0.5, b)
    out = suffix[K_arr] + remainder
    return float(out) if np.ndim(out) == 0 else out


def stein_rhs(N: int, K, beta_star: float, rho_tilde: Callable[[np.ndarray, float], np.ndarray] | None = None):
    """``(K+1)/√N + Σ_{i>K} ρ(i) + √N ρ̃(K)`` with ``ρ̃ = ρ`` by default."""
    N = int(N)
    K_arr = np.asarray(K, dtype=np.int64)
    if np.any(K_arr < 0) or np.any(K_arr >= N):
        raise ValueError("need 0 <= K < N")
    rt = rho if rho_tilde is None else rho_tilde
    sq = math.sqrt(N)
    out = (K_arr + 1) / sq + rho_tail(K_arr, beta_star) + sq * np.asarray(rt(K_arr, beta_star))
    return float(out) if np.ndim(out) == 0 else out


def stein_k_choice(N: int, beta_star: float) -> int:
    """``K = ⌊N^β⌋`` (guarded against rounding at exact powers)."""
    return int(math.floor(N ** _beta(beta_star) * (1.0 + 1e-12)))


def stein_min(N: int, beta_star: float, K_min: int = 1) -> tuple[int, float]:
    """Brute-force ``argmin_K`` and minimum of :func:`stein_rhs` over ``K_min <= K < N``."""
    K = np.arange(K_min, int(N))
    vals = stein_rhs(N, K, beta_star)
    j = int(np.argmin(vals))
    return int(K[j]), float(vals[j])


def qds_theta(eta: float, beta_star: float) -> float:
    """``θ = 1 / (12/(η(1-β)) + 1)``."""
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")
    b = _beta(beta_star, 1.0 / 3.0)
    return 1.0 / (12.0 / (eta * (1.0 - b)) + 1.0)


def qds_covariance_exponent(phi: float, psi: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """``max{(ψ - φψ)/(φ + ψ + 1) + ε, -1/6}``."""
    if phi <= 1 or psi <= 0 or epsilon < 0:
        raise ValueError("need phi > 1, psi > 0, epsilon >= 0")
    return max((psi - phi * psi) / (phi + psi + 1.0) + epsilon, -1.0 / 6.0)


@dataclass(frozen=True)
class RateSpec:
    """A bound shape ``kind`` with its parameters; see :data:`REQUIRED`."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown rate kind {self.kind!r}; choose from {KINDS}")
        missing = [p for p in REQUIRED[self.kind] if p not in self.params]
        if missing:
            raise ValueError(f"{self.kind} needs parameters {missing}")
        _validate(self.kind, self.params)


REQUIRED = {
    "thm21": ("beta_star", "N"),
    "thm22": ("beta_star", "N", "sigma_sq"),
    "cor23": ("beta_star", "N", "epsilon_var"),
    "prop25": ("beta_star", "N"),
    "quenched": ("beta_star", "N", "gamma"),
    "qds_theta": ("eta", "beta_star"),
    "qds_covariance": ("phi", "psi", "n"),
    "stein_rhs": ("beta_star", "N", "K"),
    "rho": ("beta_star", "n"),
}


def _validate(kind: str, p: dict) -> None:
    if "beta_star" in p:
        _beta(p["beta_star"], 1.0 if kind == "rho" else 0.5)
    for key in ("N", "n"):
        if key in p and kind != "rho" and not p[key] >= 2:
            raise ValueError(f"{key} must be at least 2")
    if kind == "cor23" and not 0.0 <= p["epsilon_var"] <= 1.0:
        raise ValueError("epsilon_var must lie in [0, 1]")
    if kind == "quenched" and not p["gamma"] > 0:
        raise ValueError("gamma must be positive")
    if kind == "thm22" and not p["sigma_sq"] > 0:
        raise ValueError("sigma_sq must be positive")


def _thm21(b: float, N: float) -> float:
    return N ** (b - 0.5) * math.log(N) ** (1.0 / b)


def rate_exponent(spec: RateSpec) -> float:
    """Power of ``N`` (or ``n``) in the bound; log factors excluded."""
    p = spec.params
    k = spec.kind
    if k in ("thm21", "thm22"):
        return p["beta_star"] - 0.5
    if k == "cor23":
        return 1.0 - 1.5 * p["epsilon_var"] + p["beta_star"]
    if k == "prop25":
        return (2.0 * p["beta_star"] - 1.0) / 6.0
    if k == "quenched":
        e = p["beta_star"] - 0.5
        return max(e, -p["gamma"] / 2.0) if p["gamma"] < 1 else e
    if k == "qds_theta":
        return -qds_theta(p["eta"], p["beta_star"])
    if k == "qds_covariance":
        return qds_covariance_exponent(p["phi"], p["psi"], p.get("epsilon", DEFAULT_EPSILON))
    if k == "rho":
        return 1.0 - 1.0 / p["beta_star"]
    raise ValueError(f"{k} has no single exponent")


def rate_value(spec: RateSpec) -> float:
    """Bound shape with constant 1.  ``qds_theta`` returns ``θ`` itself."""
    p = spec.params
    k = spec.kind
    if k == "thm21":
        return _thm21(p["beta_star"], p["N"])
    if k == "thm22":
        return max(1.0, 1.0 / p["sigma_sq"]) * _thm21(p["beta_star"], p["N"])
    if k == "cor23":
        b, N = p["beta_star"], p["N"]
        return N ** (1.0 - 1.5 * p["epsilon_var"] + b) * math.log(N) ** (1.0 / b)
    if k == "prop25":
        b, N = p["beta_star"], p["N"]
        return N ** ((2.0 * b - 1.0) / 6.0) * math.log(N) ** (1.0 / b)
    if k == "quenched":
        b, N, g = p["beta_star"], p["N"], p["gamma"]
        base = _thm21(b, N)
        if g < 1:
            base += N ** (-g / 2.0) * math.log(N) ** (1.5 + p.get("delta", DEFAULT_DELTA))
        return base
    if k == "qds_theta":
        return qds_theta(p["eta"], p["beta_star"])
    if k == "qds_covariance":
        return p["n"] ** rate_exponent(spec)
    if k == "stein_rhs":
        return stein_rhs(int(p["N"]), int(p["K"]), p["beta_star"])
    if k == "rho":
        return rho(int(p["n"]), p["beta_star"])
    raise AssertionError(k)


def quenched_variance_rate(N: float, gamma: float, delta: float = DEFAULT_DELTA) -> float:
    """Shape of ``|σ_N²(ω) - σ²|`` by mixing regime (``γ > 1``, ``= 1``, ``< 1``)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    L = math.log(N)
    if gamma > 1:
        return N**-0.5 * L ** (1.5 + delta)
    if gamma == 1:
        return N ** (-0.5 + delta)
    return N ** (-gamma / 2.0) * L ** (1.5 + delta)


def fit_loglog(pairs: Sequence[tuple[float, float]]) -> dict:
    """Least squares of ``ln d`` on ``ln N``: ``{slope, intercept, r2}``."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] != 2:
        raise ValueError("need at least three (N, distance) pairs")
    if np.any(arr[:, 1] <= 0) or np.any(arr[:, 0] <= 0):
        raise ValueError("N and distances must be positive")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def fit_constant(N0: float, measured: float, spec_at: Callable[[float], float]) -> float:
    """``C`` with ``C * shape(N0) = measured``."""
    return measured / spec_at(N0)
