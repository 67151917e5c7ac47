"""Parameter sequences selecting the map applied at each time step.

Three regimes: deterministic admissible sequences, stationary random
selection processes (iid or a finite Markov chain started in its
stationary law) and quasistatic triangular arrays ``alpha_{n,k}`` that
follow a limit curve ``tau`` on [0, 1].

Index convention: entry ``k`` of a schedule (0-based) is the parameter of
the map applied at step ``k + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from . import _rng

DEFAULT_BETA_STAR = 0.3


class InadmissibleError(ValueError):
    def __init__(self, index: int, value: float, beta_star: float):
        super().__init__(f"inadmissible at index {index}: {value!r} not in [0, {beta_star}]")
        self.index = index
        self.value = value


def _check_beta_star(beta_star: float) -> float:
    beta_star = float(beta_star)
    if not 0.0 <= beta_star < 1.0:
        raise ValueError(f"beta_star must lie in [0, 1), got {beta_star!r}")
    return beta_star


def _check_values(values: np.ndarray, beta_star: float, offset: int = 0) -> None:
    bad = np.flatnonzero(~((values >= 0.0) & (values <= beta_star)))
    if bad.size:
        i = int(bad[0])
        raise InadmissibleError(offset + i, float(values[i]), beta_star)


@dataclass(frozen=True, eq=False)
class FixedSchedule:
    """Deterministic sequence ``alpha_1, alpha_2, ...`` in ``[0, beta_star]``.

    Either a finite list (optionally repeated cyclically) or a rule
    ``i -> alpha`` on 0-based indices.  Rules are checked as values are
    emitted.
    """

    values: np.ndarray | None = None
    rule: Callable[[int], float] | None = None
    beta_star: float = DEFAULT_BETA_STAR
    cyclic: bool = False
    kind: str = "fixed"
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta_star", _check_beta_star(self.beta_star))
        if (self.values is None) == (self.rule is None):
            raise ValueError("give exactly one of values or rule")
        if self.values is not None:
            v = np.array(self.values, dtype=float).reshape(-1)
            if self.cyclic and v.size == 0:
                raise ValueError("a cyclic schedule needs at least one value")
            _check_values(v, self.beta_star)
            v.setflags(write=False)
            object.__setattr__(self, "values", v)

    @property
    def is_finite(self) -> bool:
        return self.values is not None and not self.cyclic

    def __len__(self) -> int:
        if not self.is_finite:
            raise TypeError("schedule is infinite")
        return self.values.size

    def take(self, n: int) -> np.ndarray:
        """First ``n`` parameters as an array."""
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        if self.rule is not None:
            out = np.array([float(self.rule(i)) for i in range(n)], dtype=float)
            _check_values(out, self.beta_star)
            return out
        if self.cyclic:
            return self.values[np.arange(n) % self.values.size].copy()
        if n > self.values.size:
            raise ValueError(f"schedule has only {self.values.size} entries, {n} requested")
        return self.values[:n].copy()

    def __getitem__(self, i):
        if isinstance(i, slice):
            if i.stop is None and not self.is_finite:
                raise TypeError("open slice of an infinite schedule")
            stop = i.stop if i.stop is not None else len(self)
            return self.take(stop)[i]
        i = int(i)
        if i < 0:
            raise IndexError("negative index")
        if self.rule is not None:
            v = float(self.rule(i))
            _check_values(np.array([v]), self.beta_star, offset=i)
            return v
        if self.cyclic:
            return float(self.values[i % self.values.size])
        return float(self.values[i])


def fixed_schedule(list_or_rule: Union[float, Sequence[float], Callable[[int], float]],
                   beta_star: float = DEFAULT_BETA_STAR, cyclic: bool = False) -> FixedSchedule:
    """Schedule from a constant, a list of values or a rule ``i -> alpha``."""
    if callable(list_or_rule):
        return FixedSchedule(rule=list_or_rule, beta_star=beta_star)
    if np.ndim(list_or_rule) == 0:
        return FixedSchedule(values=[float(list_or_rule)], beta_star=beta_star, cyclic=True,
                             kind="constant")
    return FixedSchedule(values=list_or_rule, beta_star=beta_star, cyclic=cyclic)


def alternating(a: float, b: float, beta_star: float = DEFAULT_BETA_STAR) -> FixedSchedule:
    """``a, b, a, b, ...``"""
    return FixedSchedule(values=[a, b], beta_star=beta_star, cyclic=True, kind="alternating")


# -- stationary random selection ---------------------------------------------

@dataclass(frozen=True, eq=False)
class RandomProcess:
    """Stationary selection process; build with :func:`iid_uniform` or :func:`finite_markov`."""

    kind: str
    beta_star: float = DEFAULT_BETA_STAR
    seed: int = 0
    low: float = 0.0
    high: float = 0.0
    states: np.ndarray | None = field(default=None, repr=False)
    transition: np.ndarray | None = field(default=None, repr=False)
    initial: np.ndarray | None = field(default=None, repr=False)


def iid_uniform(low: float = 0.0, high: float | None = None, beta_star: float = DEFAULT_BETA_STAR,
                seed: int = 0) -> RandomProcess:
    beta_star = _check_beta_star(beta_star)
    high = beta_star if high is None else float(high)
    if not 0.0 <= low <= high <= beta_star:
        raise ValueError(f"need 0 <= low <= high <= beta_star, got [{low}, {high}] with beta_star={beta_star}")
    return RandomProcess("iid_uniform", beta_star, int(seed), float(low), high)


def stationary_vector(transition: np.ndarray) -> np.ndarray:
    """A probability vector ``pi`` with ``pi P = pi`` (minimum-norm solution for reducible chains)."""
    P = np.asarray(transition, dtype=float)
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def finite_markov(states: Sequence[float], transition, beta_star: float = DEFAULT_BETA_STAR,
                  seed: int = 0) -> RandomProcess:
    """Markov chain on the parameter values ``states``, started from stationarity."""
    beta_star = _check_beta_star(beta_star)
    s = np.array(states, dtype=float).reshape(-1)
    P = np.array(transition, dtype=float)
    if P.shape != (s.size, s.size):
        raise ValueError(f"transition must be {s.size}x{s.size}")
    if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("transition rows must be probability vectors")
    _check_values(s, beta_star)
    for a in (s, P):
        a.setflags(write=False)
    pi = stationary_vector(P)
    pi.setflags(write=False)
    return RandomProcess("finite_markov", beta_star, int(seed), states=s, transition=P, initial=pi)


def sample_omega(process: RandomProcess, length: int, stream_id: int = 0) -> FixedSchedule:
    """One realisation ``omega_1..omega_length``; a function of ``(seed, stream_id)`` only.

    Shorter draws are prefixes of longer ones with the same key.
    """
    length = int(length)
    if length < 1:
        raise ValueError("length must be at least 1")
    u = _rng.stream(process.seed, _rng.OMEGA, stream_id).random(length)
    if process.kind == "iid_uniform":
        values = process.low + (process.high - process.low) * u
        values = np.clip(values, process.low, process.high)
    elif process.kind == "finite_markov":
        n = process.states.size
        cum = np.cumsum(process.transition, axis=1)
        start = np.cumsum(process.initial)
        idx = np.empty(length, dtype=np.int64)
        s = min(int(np.searchsorted(start, u[0], side="right")), n - 1)
        idx[0] = s
        for i in range(1, length):
            s = min(int(np.searchsorted(cum[s], u[i], side="right")), n - 1)
            idx[i] = s
        values = process.states[idx]
    else:
        raise ValueError(f"unsupported process kind {process.kind!r}")
    return FixedSchedule(values=values, beta_star=process.beta_star, kind=process.kind, seed=process.seed)


@dataclass(frozen=True)
class MixingProfile:
    """Shape of the mixing-coefficient bound ``n -> C * rate**n`` (``C = 1``).

    ``rate`` is 0 for iid selections.  ``mixing`` is False when the bound
    does not decay; ``gamma`` is the polynomial mixing exponent the bound
    certifies (infinite for geometric decay).
    """

    kind: str
    rate: float
    mixing: bool

    @property
    def gamma(self) -> float:
        return math.inf if self.mixing else 0.0

    def __call__(self, n):
        n = np.asarray(n)
        if np.any(n < 0):
            raise ValueError("n must be non-negative")
        out = np.where(n == 0, 1.0, float(self.rate) ** np.maximum(n, 1))
        return float(out) if out.ndim == 0 else out


def mixing_profile(process: RandomProcess) -> MixingProfile:
    if process.kind == "iid_uniform":
        return MixingProfile("iid_uniform", 0.0, True)
    if process.kind == "finite_markov":
        ev = np.sort(np.abs(np.linalg.eigvals(process.transition)))[::-1]
        rate = float(ev[1]) if ev.size > 1 else 0.0
        rate = min(rate, 1.0)
        return MixingProfile("finite_markov", rate, rate < 1.0 - 1e-12)
    raise ValueError(f"unsupported process kind {process.kind!r}")


# -- quasistatic arrays -------------------------------------------------------

@dataclass(frozen=True)
class LinearCurve:
    """``t -> a0 + slope * t``."""

    a0: float
    slope: float = 0.0

    def __call__(self, t):
        return self.a0 + self.slope * np.asarray(t, dtype=float)

    @property
    def modulus(self) -> float:
        return abs(self.slope)

    @property
    def exponent(self) -> float:
        return 1.0


def linear_tau(a0: float, slope: float = 0.0) -> LinearCurve:
    return LinearCurve(float(a0), float(slope))


@dataclass(frozen=True, eq=False)
class QdsArray:
    """Triangular array ``alpha_{n,k} = clamp(tau(k/n) + c_pert n^-eta zeta_{n,k}, 0, beta_star)``.

    ``zeta_{n,k}`` in [-1, 1] are keyed uniforms (one stream per level ``n``).
    ``tau_modulus`` is the Lipschitz (or Hölder) constant of ``tau``; a
    :class:`LinearCurve` supplies it.
    """

    tau: Callable = field(default_factory=lambda: linear_tau(0.05, 0.2))
    eta: float = 1.0
    c_pert: float = 0.0
    beta_star: float = DEFAULT_BETA_STAR
    seed: int = 0
    tau_modulus: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta_star", _check_beta_star(self.beta_star))
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.c_pert < 0:
            raise ValueError("c_pert must be non-negative")
        t = np.linspace(0.0, 1.0, 1025)
        vals = np.asarray(self.tau(t), dtype=float)
        if np.any(vals < 0.0) or np.any(vals > self.beta_star):
            raise ValueError(f"tau leaves [0, {self.beta_star}] on [0, 1]")
        if self.tau_modulus is None and hasattr(self.tau, "modulus"):
            object.__setattr__(self, "tau_modulus", float(self.tau.modulus))

    def perturbation(self, n: int) -> np.ndarray:
        """``zeta_{n,k}`` for ``k = 0..n``."""
        if self.c_pert == 0.0:
            return np.zeros(n + 1)
        return _rng.stream(self.seed, _rng.QDS_PERTURBATION, n).uniform(-1.0, 1.0, n + 1)

    def level(self, n: int) -> np.ndarray:
        """``alpha_{n,k}`` for ``k = 0..n``."""
        n = int(n)
        if n < 1:
            raise ValueError("n must be at least 1")
        k = np.arange(n + 1)
        raw = np.asarray(self.tau(k / n), dtype=float) + self.c_pert * n ** (-self.eta) * self.perturbation(n)
        return np.clip(raw, 0.0, self.beta_star)


def qds_row(array: QdsArray, n: int) -> FixedSchedule:
    """Row ``alpha_{n,1..n}``: entry ``k - 1`` drives step ``k``."""
    return FixedSchedule(values=array.level(n)[1:], beta_star=array.beta_star, kind="qds", seed=array.seed)


# -- text format ---------------------------------------------------------------

def write_schedule(path: str | Path, schedule: FixedSchedule, length: int | None = None) -> None:
    """Header ``#schedule kind=... beta_star=... seed=...`` then one value per line (17 digits)."""
    values = schedule.take(len(schedule) if length is None else length)
    seed = "none" if schedule.seed is None else str(schedule.seed)
    lines = [f"#schedule kind={schedule.kind} beta_star={schedule.beta_star:.17g} seed={seed}"]
    lines += [f"{v:.17g}" for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_schedule(path: str | Path) -> FixedSchedule:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#schedule"):
        raise ValueError(f"{path}: missing '#schedule' header")
    meta = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    for key in ("kind", "beta_star", "seed"):
        if key not in meta:
            raise ValueError(f"{path}: header lacks {key}=")
    values = [float(s) for s in lines[1:] if s.strip()]
    seed = None if meta["seed"] == "none" else int(meta["seed"])
    return FixedSchedule(values=values, beta_star=float(meta["beta_star"]), kind=meta["kind"], seed=seed)
