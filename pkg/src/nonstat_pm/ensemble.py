"""Monte Carlo samples of centred Birkhoff sums along a schedule.

``S_N = sum_{i<N} (f(x_i) - mu(f o T~_i))`` with ``x_0 ~ mu`` and
``x_{i+1} = T_{alpha_{i+1}}(x_i)``; ``W = S_N / sqrt(N)``; the quasistatic
fluctuation ``xi_n(t)`` interpolates ``S_k / sqrt(n)`` linearly in ``nt``.

Centering is either ``transfer_exact`` (means pushed forward by the
transfer operators, the default) or ``ensemble_mean`` (sample means, for
cross-checks only).

Samples are processed in chunks of :data:`CHUNK` trajectories.  Each
chunk draws from its own keyed stream, so results are bitwise identical
for any number of worker threads.

Floating-point doubling (``alpha = 0``) discards one mantissa bit per
step and would collapse every orbit to 0 after ~53 steps.  On ``alpha = 0``
steps the lost bit is replaced by a fresh random bit, which keeps the
uniform law on the ``2^-53`` lattice invariant.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from . import _rng
from .observables import Observable
from .schedules import DEFAULT_BETA_STAR, FixedSchedule, QdsArray, qds_row
from .transfer import GridDensity, GridLike, PiecewiseLinear, as_grid, cone_check, mean_along

CENTERINGS = ("transfer_exact", "ensemble_mean")
CHUNK = 16384
THREADS_ENV = "NONSTAT_PM_THREADS"
_HALF_ULP = 2.0**-53


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``$NONSTAT_PM_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        threads = int(env) if env else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


@dataclass(frozen=True, eq=False)
class InitialMeasure:
    """Probability measure with a grid density, sampled by inverse CDF."""

    density: GridDensity
    beta_star: float = DEFAULT_BETA_STAR
    check_cone: bool = True
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.density.validate()
        if self.check_cone:
            report = cone_check(self.density, self.beta_star)
            if not report.is_member:
                raise ValueError(f"initial density is outside the cone at beta_star={self.beta_star}: "
                                 f"{report.violations}")
        object.__setattr__(self, "_cdf", self.density.cdf_edges())

    @classmethod
    def lebesgue(cls, grid: GridLike | None = None, beta_star: float = DEFAULT_BETA_STAR) -> "InitialMeasure":
        return cls(GridDensity.uniform(as_grid(grid)), beta_star)

    @classmethod
    def from_function(cls, func, grid: GridLike | None = None,
                      beta_star: float = DEFAULT_BETA_STAR) -> "InitialMeasure":
        return cls(GridDensity.from_function(func, as_grid(grid)), beta_star)

    @property
    def grid(self):
        return self.density.grid

    @property
    def linear(self) -> PiecewiseLinear:
        return PiecewiseLinear.from_density(self.density)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Inverse of the piecewise-linear CDF."""
        u = np.asarray(u, dtype=float)
        edges = self.grid.edges
        cells = self.density.cells
        i = np.clip(np.searchsorted(self._cdf, u, side="right") - 1, 0, cells.size - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = edges[i] + (u - self._cdf[i]) / cells[i]
        x = np.where(cells[i] > 0, x, edges[i])
        return np.clip(x, edges[i], edges[i + 1])

    def sample(self, M: int, rng: np.random.Generator) -> np.ndarray:
        return self.quantile(rng.random(M))


@njit(cache=True)
def _advance(x, alpha):
    c = 2.0**alpha
    for k in range(x.size):
        v = x[k]
        if v < 0.5:
            if v > 0.0:
                v = v * (1.0 + c * np.exp(alpha * np.log(v)))
        else:
            v = 2.0 * v - 1.0
        x[k] = min(max(v, 0.0), 1.0)


@njit(cache=True)
def _advance_doubling(x, bits, half_ulp):
    for k in range(x.size):
        v = 2.0 * x[k]
        if v >= 1.0:
            v -= 1.0
        if v < 1.0:
            v += bits[k] * half_ulp
        x[k] = v


def advance(x: np.ndarray, alpha: float, rng: np.random.Generator | None = None) -> None:
    """One map step in place; ``rng`` supplies refresh bits when ``alpha == 0``."""
    if alpha == 0.0 and rng is not None:
        _advance_doubling(x, rng.integers(0, 2, size=x.size, dtype=np.uint8), _HALF_ULP)
    else:
        _advance(x, float(alpha))


def _alphas(schedule, n: int) -> np.ndarray:
    if isinstance(schedule, FixedSchedule):
        return schedule.take(n)
    a = np.asarray(schedule, dtype=float).reshape(-1)
    if a.size < n:
        raise ValueError(f"schedule has {a.size} entries, {n} needed")
    return a[:n]


@dataclass
class _ChunkOut:
    sums: np.ndarray                 # (n_checkpoints, m, d)
    first: np.ndarray | None = None  # (N, d) sums of f(x_i)
    second: np.ndarray | None = None


def _run_chunk(chunk: int, m: int, alphas: np.ndarray, f: Observable, centre: np.ndarray | None,
               mu: InitialMeasure, checkpoints: np.ndarray, seed: int, moments: bool) -> _ChunkOut:
    rng = _rng.stream(seed, _rng.ENSEMBLE, chunk)
    x = mu.sample(m, rng)
    N = int(checkpoints[-1])
    acc = np.zeros((m, f.dim))
    sums = np.empty((checkpoints.size, m, f.dim))
    first = np.zeros((N, f.dim)) if moments else None
    second = np.zeros((N, f.dim)) if moments else None
    slot = 0
    while slot < checkpoints.size and checkpoints[slot] == 0:
        sums[slot] = 0.0
        slot += 1
    for i in range(N):
        fx = f(x)
        if moments:
            first[i] = fx.sum(axis=0)
            second[i] = (fx * fx).sum(axis=0)
        if centre is not None:
            fx -= centre[i]
        acc += fx
        while slot < checkpoints.size and checkpoints[slot] == i + 1:
            sums[slot] = acc
            slot += 1
        if i + 1 < N:
            advance(x, alphas[i], rng)
    return _ChunkOut(sums, first, second)


@dataclass
class BirkhoffSample:
    """Centred sums ``S_N`` for each checkpoint ``N``; ``sums`` has shape ``(n_checkpoints, M, d)``."""

    checkpoints: np.ndarray
    sums: np.ndarray
    centering: str
    seed: int
    centre: np.ndarray | None

    def at(self, N: int) -> np.ndarray:
        idx = np.flatnonzero(self.checkpoints == N)
        if not idx.size:
            raise KeyError(f"no checkpoint at N={N}")
        return self.sums[idx[0]]


def _chunks(M: int) -> list[tuple[int, int]]:
    return [(c, min(CHUNK, M - c * CHUNK)) for c in range(math.ceil(M / CHUNK))]


def _simulate(alphas, f, mu, checkpoints, M, centering, seed, threads, moments=False):
    if centering not in CENTERINGS:
        raise ValueError(f"centering must be one of {CENTERINGS}, got {centering!r}")
    if M < 2:
        raise ValueError("M must be at least 2")
    cps = np.array(sorted(set(int(n) for n in checkpoints)), dtype=np.int64)
    if cps.size == 0 or cps[0] < 0:
        raise ValueError("checkpoints must be non-negative")
    N = int(cps[-1])
    centre = None
    if centering == "transfer_exact" and N > 0:
        centre = mean_along(alphas, f, N, mu.linear)
    if N == 0:
        return cps, np.zeros((cps.size, M, f.dim)), centre, None
    work = _chunks(M)

    def job(cm):
        return _run_chunk(cm[0], cm[1], alphas, f, centre, mu, cps, seed, moments)

    n_threads = min(resolve_threads(threads), len(work))
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            outs = list(pool.map(job, work))
    else:
        outs = [job(cm) for cm in work]
    sums = np.concatenate([o.sums for o in outs], axis=1)
    if centering == "ensemble_mean":
        sums = sums - sums.mean(axis=1, keepdims=True)
    stats = None
    if moments:
        first = np.zeros_like(outs[0].first)
        second = np.zeros_like(outs[0].second)
        for o in outs:
            first += o.first
            second += o.second
        stats = (first, second)
    return cps, sums, centre, stats


def birkhoff_sums(schedule, f: Observable, mu: InitialMeasure, checkpoints: Sequence[int], M: int,
                  centering: str = "transfer_exact", seed: int = 0,
                  threads: int | None = None) -> BirkhoffSample:
    """``S_N`` samples at several ``N`` from one set of trajectories."""
    N = max(int(n) for n in checkpoints)
    alphas = _alphas(schedule, max(N - 1, 0))
    cps, sums, centre, _ = _simulate(alphas, f, mu, checkpoints, M, centering, seed, threads)
    return BirkhoffSample(cps, sums, centering, seed, centre)


@dataclass
class EnsembleResult:
    """``M x d`` samples of ``W``, ``S`` or ``xi_n(t)``."""

    samples: np.ndarray
    N: int
    centering: str
    seed: int
    kind: str = "W"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise ValueError("samples must be an M x d array with M >= 2")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def to_csv(self, path: str | Path) -> None:
        header = f"# N={self.N} M={self.M} d={self.d} seed={self.seed} centering={self.centering}"
        body = "\n".join(",".join(f"{v:.17g}" for v in row) for row in self.samples)
        Path(path).write_text(header + "\n" + body + "\n")

    @classmethod
    def from_csv(cls, path: str | Path, kind: str = "W") -> "EnsembleResult":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError(f"{path}: missing header")
        meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()])
        if rows.shape != (int(meta["M"]), int(meta["d"])):
            raise ValueError(f"{path}: body shape {rows.shape} disagrees with header")
        return cls(rows, int(meta["N"]), meta["centering"], int(meta["seed"]), kind)


def simulate_S(schedule, f: Observable, mu: InitialMeasure, N: int, M: int,
               centering: str = "transfer_exact", seed: int = 0, threads: int | None = None) -> EnsembleResult:
    if N < 1:
        raise ValueError("N must be at least 1")
    b = birkhoff_sums(schedule, f, mu, [N], M, centering, seed, threads)
    return EnsembleResult(b.at(N), N, centering, seed, "S")


def simulate_W(schedule, f: Observable, mu: InitialMeasure, N: int, M: int,
               centering: str = "transfer_exact", seed: int = 0, threads: int | None = None) -> EnsembleResult:
    """``W = N^{-1/2} S_N``."""
    s = simulate_S(schedule, f, mu, N, M, centering, seed, threads)
    return EnsembleResult(s.samples / math.sqrt(N), N, centering, seed, "W")


def simulate_xi(array: QdsArray, n: int, t: float, f: Observable, mu: InitialMeasure, M: int,
                centering: str = "transfer_exact", seed: int = 0, threads: int | None = None) -> EnsembleResult:
    """``xi_n(t)`` along row ``n`` of the array, linear in ``nt`` between integers."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    nt = n * t
    k = int(math.floor(nt + 1e-9))
    frac = nt - k if abs(nt - round(nt)) > 1e-9 else 0.0
    cps = [k] if frac == 0.0 else [k, k + 1]
    row = qds_row(array, n)
    b = birkhoff_sums(row, f, mu, cps, M, centering, seed, threads)
    s = b.at(k)
    if frac:
        s = s + frac * (b.at(k + 1) - s)
    info = {"n": n, "t": t}
    return EnsembleResult(s / math.sqrt(n), k, centering, seed, "xi", info)


def per_time_moments(schedule, f: Observable, mu: InitialMeasure, N: int, M: int, seed: int = 0,
                     threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample means of ``f(x_i)``, ``i < N``, and their standard errors; each ``(N, d)``."""
    alphas = _alphas(schedule, N - 1)
    _, _, _, (first, second) = _simulate(alphas, f, mu, [N], M, "ensemble_mean", seed, threads,
                                         moments=True)
    mean = first / M
    var = np.maximum(second / M - mean**2, 0.0) * M / (M - 1)
    return mean, np.sqrt(var / M)


def empirical_covariance(result: EnsembleResult) -> np.ndarray:
    """``(1/M) sum w w^T``; centred first unless the centering is exact.

    Eigenvalues below ``-1e-10`` raise; smaller negative ones are clamped.
    """
    X = result.samples
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain non-finite values")
    if result.centering != "transfer_exact":
        X = X - X.mean(axis=0)
    C = X.T @ X / X.shape[0]
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    if w.min() < -1e-10:
        raise ValueError(f"covariance has eigenvalue {w.min():.3e}")
    if w.min() < 0:
        C = (V * np.maximum(w, 0.0)) @ V.T
        C = 0.5 * (C + C.T)
    return C


def covariance_stderr(result: EnsembleResult) -> np.ndarray:
    """Entrywise Monte Carlo standard error of :func:`empirical_covariance`."""
    X = result.samples
    if result.centering != "transfer_exact":
        X = X - X.mean(axis=0)
    prods = X[:, :, None] * X[:, None, :]
    return prods.std(axis=0, ddof=1) / math.sqrt(X.shape[0])
