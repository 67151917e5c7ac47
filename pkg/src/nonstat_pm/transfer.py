"""Ulam discretisation of the transfer operators ``L_alpha``.

Densities are cell averages on a partition of [0, 1] (:class:`Grid`).  The
operator is assembled from exact branch preimages of the cell edges: the
pieces ``cell_j ∩ T^{-1}(cell_i)`` are intervals whose endpoints are grid
edges or preimages of grid edges, so their lengths are exact up to the
root-finding tolerance.  The Ulam matrix entry is
``m(cell_j ∩ T^{-1} cell_i) / m(cell_i)`` (``G * m(...)`` on uniform grids).

Every operator also carries a first-order extension acting on cell
averages plus Legendre slopes (:class:`PiecewiseLinear`).  Piecewise
constants alone lose the linear part of an observable within a few
``log2 G`` doubling steps; the first-order scheme is exact for the doubling
map with linear observables and is what all correlation integrals use.

Uniform grids cannot resolve laminar phases at the neutral fixed point
(escape from a cell of width ``h`` near 0 takes about ``h^{-alpha}``
steps), which makes Green-Kubo sums converge only like ``G^{-(1-2alpha)}``.
:meth:`Grid.graded` refines geometrically towards 0 and is the default for
the correlation machinery.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy import sparse
from numba import njit
from scipy.sparse.linalg import spsolve

from .observables import Observable

DEFAULT_GRID_SIZE = 2**12
CONE_SLACK = 1e-6

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GL_W = 0.5 * _GL_WEIGHTS  # normalised to the unit interval


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    """Partition of [0, 1] with ``1/2`` as an edge."""

    edges: np.ndarray = field(repr=False)
    key: str

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 3 or e[0] != 0.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0):
            raise ValueError("edges must increase strictly from 0 to 1")
        if not np.any(e == 0.5):
            raise ValueError("1/2 must be a grid edge")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def size(self) -> int:
        return self.edges.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def is_uniform(self) -> bool:
        return self.key.startswith("uniform")

    def gauss_points(self) -> np.ndarray:
        """4-point Gauss-Legendre nodes in every cell, shape ``(G, 4)``."""
        return _gauss_points(self)

    @classmethod
    def uniform(cls, grid_size: int = DEFAULT_GRID_SIZE) -> "Grid":
        grid_size = int(grid_size)
        if grid_size < 2 or grid_size % 2:
            raise ValueError("uniform grids need an even number (>= 2) of cells")
        return _uniform(grid_size)

    @classmethod
    def graded(cls, spacing: float = 2.0**-12, ratio: float = 1.0 / 32, x_min: float = 1e-13) -> "Grid":
        """Uniform ``spacing`` on ``[spacing/ratio, 1]``, geometric cells below.

        Cells below the crossover grow by the factor ``1 + ratio`` (about),
        down to a first cell ``[0, x_min]``.  ``spacing`` must divide 1/2
        and ``spacing/ratio`` must be a multiple of ``spacing``.
        """
        return _graded(float(spacing), float(ratio), float(x_min))


@lru_cache(maxsize=None)
def _uniform(grid_size: int) -> Grid:
    return Grid(np.arange(grid_size + 1) / grid_size, f"uniform({grid_size})")


@lru_cache(maxsize=None)
def _graded(spacing: float, ratio: float, x_min: float) -> Grid:
    cross = spacing / ratio
    n_half = 0.5 / spacing
    if abs(n_half - round(n_half)) > 1e-9 or abs(cross / spacing - round(cross / spacing)) > 1e-9:
        raise ValueError("spacing must divide 1/2 and spacing/ratio must be a multiple of spacing")
    if not 0 < x_min < cross < 0.5:
        raise ValueError("need 0 < x_min < spacing/ratio < 1/2")
    n_geo = int(np.ceil(np.log(cross / x_min) / np.log1p(ratio)))
    geo = x_min * (cross / x_min) ** (np.arange(n_geo) / n_geo)
    n_uni = int(round((1.0 - cross) / spacing))
    uni = cross + spacing * np.arange(n_uni + 1)
    uni[-1] = 1.0
    edges = np.concatenate([[0.0], geo, uni])
    return Grid(edges, f"graded({spacing!r},{ratio!r},{x_min!r})")


@lru_cache(maxsize=16)
def _gauss_points(grid: Grid) -> np.ndarray:
    pts = grid.midpoints[:, None] + 0.5 * grid.widths[:, None] * _GL_NODES[None, :]
    pts.setflags(write=False)
    return pts


GridLike = Union[int, Grid]


def as_grid(grid: GridLike | None) -> Grid:
    if grid is None:
        return default_grid()
    if isinstance(grid, Grid):
        return grid
    return Grid.uniform(int(grid))


def default_grid() -> Grid:
    """Graded grid with uniform spacing ``2^-12`` away from the origin."""
    return Grid.graded()


@dataclass
class GridDensity:
    """Cell averages of a probability density."""

    cells: np.ndarray
    grid: Grid = None  # type: ignore[assignment]

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=float)
        if self.cells.ndim != 1 or self.cells.size < 2:
            raise ValueError("cells must be a 1-d array with at least two entries")
        if self.grid is None:
            self.grid = Grid.uniform(self.cells.size)
        elif self.grid.size != self.cells.size:
            raise GridMismatchError("cells and grid have different sizes")

    @property
    def grid_size(self) -> int:
        return self.cells.size

    def mass(self) -> float:
        return float(self.cells @ self.grid.widths)

    def midpoints(self) -> np.ndarray:
        return self.grid.midpoints

    def validate(self, tol: float = 1e-10) -> None:
        if np.any(self.cells < 0):
            raise ValueError("density has negative cells")
        if abs(self.mass() - 1.0) > tol:
            raise ValueError(f"density mass {self.mass()!r} differs from 1")

    def cdf_edges(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.cells * self.grid.widths)])

    @classmethod
    def uniform(cls, grid: GridLike | None = DEFAULT_GRID_SIZE) -> "GridDensity":
        g = as_grid(grid)
        return cls(np.ones(g.size), g)

    @classmethod
    def from_function(cls, func, grid: GridLike | None = DEFAULT_GRID_SIZE, normalize: bool = True) -> "GridDensity":
        """Cell averages of ``func`` by 4-point Gauss-Legendre per cell."""
        g = as_grid(grid)
        cells = (np.asarray(func(g.gauss_points()), dtype=float) * _GL_W).sum(axis=1)
        d = cls(cells, g)
        if normalize:
            d.cells = d.cells / d.mass()
        return d


@dataclass
class PiecewiseLinear:
    """Signed function ``avg_i + slope_i * 2(x - m_i)/w_i`` on each cell.

    ``avg`` and ``slope`` have shape ``(G,)`` or ``(G, d)``.
    """

    avg: np.ndarray
    slope: np.ndarray
    grid: Grid

    def at_gauss(self) -> np.ndarray:
        """Values at the Gauss nodes, shape ``(G, 4) + trailing``."""
        xi = _GL_NODES.reshape((1, -1) + (1,) * (self.avg.ndim - 1))
        return self.avg[:, None, ...] + self.slope[:, None, ...] * xi

    def integrate(self, g: Observable | np.ndarray | None = None) -> np.ndarray:
        """``∫ p ⊗ g dm``; ``g`` is an observable or its values at the Gauss nodes.

        Without ``g`` returns ``∫ p dm``.  Exact for polynomial ``g`` of degree <= 6
        on each cell.
        """
        w = self.grid.widths
        if g is None:
            return w @ self.avg
        gv = g(self.grid.gauss_points()) if callable(g) else np.asarray(g)
        pv = self.at_gauss()
        G, Q = pv.shape[:2]
        wq = (self.grid.widths[:, None] * _GL_W).reshape(-1)
        gm = gv.reshape(G * Q, -1)
        if pv.ndim == 2:
            return (pv.reshape(-1) * wq) @ gm
        return (pv.reshape(G * Q, -1) * wq[:, None]).T @ gm

    def times(self, f: Observable | np.ndarray) -> "PiecewiseLinear":
        """First-order projection of ``f * p`` for scalar ``p``; ``d``-valued result."""
        if self.avg.ndim != 1:
            raise ValueError("can only multiply a scalar function")
        fv = f(self.grid.gauss_points()) if callable(f) else np.asarray(f)
        pv = self.at_gauss()
        avg = ((pv * _GL_W)[:, :, None] * fv).sum(axis=1)
        slope = 3.0 * ((pv * (_GL_W * _GL_NODES))[:, :, None] * fv).sum(axis=1)
        return PiecewiseLinear(avg, slope, self.grid)

    def __add__(self, other: "PiecewiseLinear") -> "PiecewiseLinear":
        return PiecewiseLinear(self.avg + other.avg, self.slope + other.slope, self.grid)

    def scaled(self, c: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.avg * c, self.slope * c, self.grid)

    def to_density(self) -> GridDensity:
        return GridDensity(np.array(self.avg, dtype=float), self.grid)

    @classmethod
    def from_density(cls, d: GridDensity) -> "PiecewiseLinear":
        return cls(np.array(d.cells, dtype=float), np.zeros(d.grid_size), d.grid)

    @classmethod
    def zeros(cls, grid: Grid, dim: int) -> "PiecewiseLinear":
        return cls(np.zeros((grid.size, dim)), np.zeros((grid.size, dim)), grid)


@dataclass(frozen=True, eq=False)
class UlamOperator:
    """Transfer operator of ``T_alpha`` on a grid.

    ``blocks`` are sparse ``G x G`` matrices ``(aa, ab, ba, bb)`` acting on
    ``(avg, slope)``; ``aa`` is the Ulam matrix.
    """

    alpha: float
    grid: Grid
    blocks: tuple = field(repr=False)

    @property
    def grid_size(self) -> int:
        return self.grid.size

    @property
    def matrix(self) -> sparse.csr_matrix:
        return self.blocks[0]

    def apply_cells(self, cells: np.ndarray) -> np.ndarray:
        return self.blocks[0] @ cells

    def apply_linear(self, p: PiecewiseLinear) -> PiecewiseLinear:
        aa, ab, ba, bb = self.blocks
        return PiecewiseLinear(aa @ p.avg + ab @ p.slope, ba @ p.avg + bb @ p.slope, p.grid)

    def block_matrix(self) -> sparse.csr_matrix:
        aa, ab, ba, bb = self.blocks
        return sparse.bmat([[aa, ab], [ba, bb]], format="csr")


def _round_alpha(alpha: float) -> float:
    return round(float(alpha), 12)


@njit(cache=True)
def _left_value(alpha, y):
    if y <= 0.0:
        return 0.0
    return y * (1.0 + 2.0**alpha * np.exp(alpha * np.log(y)))


@njit(cache=True)
def _left_preimages(alpha, edges):
    """Left-branch preimages of all edges (Newton with bisection safeguard)."""
    n = edges.size
    out = np.empty(n)
    c = 2.0**alpha
    for k in range(n):
        x = edges[k]
        if alpha == 0.0 or x == 0.0:
            out[k] = 0.5 * x
            continue
        lo = 0.5 * x
        hi = min(x, 0.5)
        y = out[k - 1] if k > 0 and out[k - 1] > lo else 0.5 * (lo + hi)
        for _ in range(200):
            p = np.exp(alpha * np.log(y))
            r = y * (1.0 + c * p) - x
            if r == 0.0:
                break
            if r < 0.0:
                lo = y
            else:
                hi = y
            y_new = y - r / (1.0 + c * (1.0 + alpha) * p)
            if y_new <= lo or y_new >= hi:
                y_new = 0.5 * (lo + hi)
            if abs(y_new - y) <= 2.5e-15 or hi - lo <= 1e-15:
                y = y_new
                break
            y = y_new
        out[k] = min(max(y, 0.0), 0.5)
    out[0] = 0.0
    out[n - 1] = 0.5
    for k in range(1, n):
        if out[k] < out[k - 1]:
            out[k] = out[k - 1]
    return out


@njit(cache=True)
def _assemble(alpha, edges, half, nodes, weights):
    """COO triplets of the four first-order blocks.

    Walks the merged, sorted lists of branch preimages of the edges and of
    source-cell edges; each gap between consecutive cuts is one piece
    ``cell_j ∩ T^{-1}(cell_i)``.
    """
    G = edges.size - 1
    cap = 4 * (G + 2)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    vals = np.empty((4, cap))
    yl = _left_preimages(alpha, edges)
    yr = np.empty(G + 1)
    for k in range(G + 1):
        yr[k] = 0.5 * (edges[k] + 1.0)
    yr[G] = 1.0
    nq = nodes.size
    c = 0
    for branch in range(2):
        pre = yl if branch == 0 else yr
        j = 0 if branch == 0 else half
        j_end = half if branch == 0 else G
        i = 0
        cur = pre[0]
        while i < G and j < j_end:
            nxt = min(pre[i + 1], edges[j + 1])
            if nxt > cur:
                length = nxt - cur
                wi = edges[i + 1] - edges[i]
                wj = edges[j + 1] - edges[j]
                mi = 0.5 * (edges[i + 1] + edges[i])
                mj = 0.5 * (edges[j + 1] + edges[j])
                s1 = 0.0
                s2 = 0.0
                s3 = 0.0
                for q in range(nq):
                    y = cur + length * 0.5 * (1.0 + nodes[q])
                    w = length * weights[q]
                    phi = 2.0 * (y - mj) / wj
                    if branch == 0:
                        img = _left_value(alpha, y)
                    else:
                        img = 2.0 * y - 1.0
                    psi = 2.0 * (img - mi) / wi
                    s1 += w * phi
                    s2 += w * psi
                    s3 += w * phi * psi
                rows[c] = i
                cols[c] = j
                vals[0, c] = length / wi
                vals[1, c] = s1 / wi
                vals[2, c] = 3.0 * s2 / wi
                vals[3, c] = 3.0 * s3 / wi
                c += 1
            if pre[i + 1] <= nxt:
                i += 1
            if edges[j + 1] <= nxt:
                j += 1
            cur = nxt
    return rows[:c], cols[:c], vals[:, :c]


@lru_cache(maxsize=256)
def _build_cached(alpha: float, grid: Grid) -> UlamOperator:
    G = grid.size
    half = int(np.flatnonzero(grid.edges == 0.5)[0])
    rows, cols, vals = _assemble(alpha, np.asarray(grid.edges), half, _GL_NODES, _GL_W)
    order = np.argsort(rows, kind="stable")
    indptr = np.zeros(G + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=G), out=indptr[1:])
    cols = cols[order]
    blocks = tuple(sparse.csr_matrix((vals[k][order], cols, indptr), shape=(G, G)) for k in range(4))
    return UlamOperator(alpha, grid, blocks)


def build_ulam(alpha: float, grid_size: GridLike = DEFAULT_GRID_SIZE) -> UlamOperator:
    """Assemble (or fetch from cache) the transfer operator of ``T_alpha``.

    ``grid_size`` is a cell count (uniform grid) or a :class:`Grid`.
    Operators are cached per ``(alpha rounded to 1e-12, grid)``.
    """
    alpha = _round_alpha(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"map parameter must lie in [0, 1), got {alpha!r}")
    return _build_cached(alpha, as_grid(grid_size))


def transfer_apply(op: UlamOperator, d: GridDensity) -> GridDensity:
    if d.grid != op.grid:
        raise GridMismatchError(f"operator grid {op.grid.key} vs density grid {d.grid.key}")
    return GridDensity(op.apply_cells(d.cells), d.grid)


def _fixed_point(matrix: sparse.csr_matrix, mass_row: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    system = (matrix - sparse.identity(n, format="csr")).tolil()
    system[0, :] = mass_row
    rhs = np.zeros(n)
    rhs[0] = 1.0
    return spsolve(system.tocsr(), rhs)


def invariant_density(alpha: float, grid_size: GridLike = DEFAULT_GRID_SIZE, tol: float = 1e-12,
                      max_iter: int = 200_000, warm_start: bool = True) -> GridDensity:
    """Fixed density of the Ulam matrix.

    Power iteration until the L¹ change drops below ``tol``.  With
    ``warm_start`` the iteration starts from a sparse direct solve of the
    fixed-point equation instead of the uniform density (the polynomial
    memory loss near the neutral fixed point makes cold starts slow).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    op = build_ulam(alpha, grid_size)
    w = op.grid.widths
    cells = np.ones(op.grid_size)
    if warm_start and alpha > 0:
        guess = _fixed_point(op.matrix, w)
        if np.all(np.isfinite(guess)):
            cells = np.maximum(guess, 0.0)
            cells /= cells @ w
    change = np.inf
    for _ in range(max_iter):
        new = op.apply_cells(cells)
        new /= new @ w
        change = float(np.abs(new - cells) @ w)
        cells = new
        if change < tol:
            return GridDensity(cells, op.grid)
    raise ConvergenceError(f"power iteration for alpha={alpha} did not converge in {max_iter} steps", change)


def invariant_linear(alpha: float, grid_size: GridLike = DEFAULT_GRID_SIZE, tol: float = 1e-12,
                     max_iter: int = 200_000) -> PiecewiseLinear:
    """Fixed point of the first-order operator, normalised to unit mass."""
    op = build_ulam(alpha, grid_size)
    grid = op.grid
    G = grid.size
    if alpha == 0.0:
        return PiecewiseLinear(np.ones(G), np.zeros(G), grid)
    sol = _fixed_point(op.block_matrix(), np.concatenate([grid.widths, np.zeros(G)]))
    p = PiecewiseLinear(sol[:G], sol[G:], grid)
    change = np.inf
    for _ in range(max_iter):
        new = op.apply_linear(p)
        new = new.scaled(1.0 / new.integrate())
        change = float((np.abs(new.avg - p.avg) + np.abs(new.slope - p.slope)) @ grid.widths)
        p = new
        if change < tol:
            return p
    raise ConvergenceError(f"first-order fixed point for alpha={alpha} did not converge", change)


@dataclass
class ConeReport:
    is_member: bool
    violations: dict[str, int | None]


def cone_check(d: GridDensity, alpha: float, slack: float = CONE_SLACK) -> ConeReport:
    """Test the four cone conditions at cell midpoints.

    ``violations`` maps each criterion to the first offending cell (or None).
    Monotonicity is only compared between adjacent cells.
    """
    f = d.cells
    x = d.midpoints()
    mass = d.mass()
    scale = max(float(np.abs(f).max()), 1e-300)

    def first(bad):
        idx = np.flatnonzero(bad)
        return int(idx[0]) if idx.size else None

    g = x ** (alpha + 1.0) * f
    bound = 2.0**alpha * (2.0 + alpha) * x ** (-alpha) * mass
    violations = {
        "nonnegative": first(f < -slack * scale),
        "decreasing": first(f[1:] > f[:-1] * (1.0 + slack)),
        "weighted_increasing": first(g[1:] < g[:-1] * (1.0 - slack)),
        "upper_bound": first(f > bound * (1.0 + slack)),
    }
    return ConeReport(all(v is None for v in violations.values()), violations)


def _op(alpha: float, grid: Grid) -> UlamOperator:
    return build_ulam(alpha, grid)


def push_density(schedule_prefix: Sequence[float], d: GridDensity) -> GridDensity:
    """Law of ``T_n o ... o T_1`` under ``d`` by repeated Ulam steps."""
    cells = np.array(d.cells, dtype=float)
    for a in schedule_prefix:
        cells = _op(a, d.grid).apply_cells(cells)
    return GridDensity(cells, d.grid)


def push_linear(schedule_prefix: Sequence[float], p: PiecewiseLinear) -> PiecewiseLinear:
    for a in schedule_prefix:
        p = _op(a, p.grid).apply_linear(p)
    return p


def _as_linear(mu: GridDensity | PiecewiseLinear) -> PiecewiseLinear:
    return mu if isinstance(mu, PiecewiseLinear) else PiecewiseLinear.from_density(mu)


def _check_schedule(schedule: Sequence[float], needed: int) -> None:
    if len(schedule) < needed:
        raise ValueError(f"schedule has {len(schedule)} entries, {needed} needed")


def mean_along(schedule: Sequence[float], f: Observable, N: int,
               mu_density: GridDensity | PiecewiseLinear) -> np.ndarray:
    """``[μ(f ∘ T̃_i)]_{i=0..N-1}`` as an ``(N, d)`` array.

    ``schedule[k]`` is the parameter of the map applied at step ``k + 1``.
    Integrals use 4-point Gauss-Legendre per cell on the first-order push-forward.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    _check_schedule(schedule, N - 1)
    if f.lip == 0:
        # a 0-Lipschitz observable is constant; skip the rounding of ∫ c·p
        return np.repeat(f(np.zeros(1)), N, axis=0)
    p = _as_linear(mu_density)
    fv = f(p.grid.gauss_points())
    out = np.empty((N, f.dim))
    for i in range(N):
        out[i] = p.integrate(fv)
        if i < N - 1:
            p = _op(schedule[i], p.grid).apply_linear(p)
    return out


def lag_correlation(schedule: Sequence[float], f: Observable, g: Observable, i: int, k: int,
                    mu_density: GridDensity | PiecewiseLinear):
    """``μ(f_i g_{i+k}) - μ(f_i) μ(g_{i+k})`` with ``f_i = f ∘ T̃_i``.

    Computed as ``∫ g · L_{i+k}⋯L_{i+1}(f d_i) dm`` minus the product of
    means, ``d_i`` being the push-forward of ``mu_density`` by the first
    ``i`` maps.  Returns a float for scalar observables, else a
    ``(d_f, d_g)`` matrix.
    """
    if i < 0 or k < 0:
        raise ValueError("i and k must be non-negative")
    _check_schedule(schedule, i + k)
    d_i = push_linear(schedule[:i], _as_linear(mu_density))
    weighted = d_i.times(f)
    mean_f = d_i.integrate(f)
    d_ik = d_i
    for a in schedule[i:i + k]:
        op = _op(a, d_i.grid)
        d_ik = op.apply_linear(d_ik)
        weighted = op.apply_linear(weighted)
    out = weighted.integrate(g) - np.outer(mean_f, d_ik.integrate(g))
    return float(out[0, 0]) if out.shape == (1, 1) else out


def lag_profile(schedule: Sequence[float], f: Observable, g: Observable, i: int, K: int,
                mu_density: GridDensity | PiecewiseLinear) -> np.ndarray:
    """``lag_correlation`` for ``k = 0..K`` in one sweep; shape ``(K + 1, d_f, d_g)``."""
    if i < 0 or K < 0:
        raise ValueError("i and K must be non-negative")
    _check_schedule(schedule, i + K)
    d = push_linear(schedule[:i], _as_linear(mu_density))
    gv = g(d.grid.gauss_points())
    weighted = d.times(f)
    mean_f = d.integrate(f)
    out = np.empty((K + 1, f.dim, g.dim))
    for k in range(K + 1):
        out[k] = weighted.integrate(gv) - np.outer(mean_f, d.integrate(gv))
        if k < K:
            op = _op(schedule[i + k], d.grid)
            d = op.apply_linear(d)
            weighted = op.apply_linear(weighted)
    return out


def covariance_along(schedule: Sequence[float], f: Observable, N: int,
                     mu_density: GridDensity | PiecewiseLinear,
                     checkpoints: Sequence[int] | None = None) -> dict[int, np.ndarray]:
    """Second moments ``μ(S_n ⊗ S_n)`` of the centred Birkhoff sums.

    ``S_n = Σ_{i<n} (f ∘ T̃_i - μ(f ∘ T̃_i))``.  With ``A_n`` the push-forward
    of ``S_n dμ`` and ``d_n`` that of ``μ``, ``A_{n+1} = L_{n+1}(A_n + f̄_n d_n)``
    and ``E[S_{n+1}²] = E[S_n²] + ∫A_n⊗f̄_n + ∫f̄_n⊗A_n + ∫f̄_n⊗f̄_n d_n``,
    so the whole table costs ``N`` operator applications.  Returns
    ``{n: (d, d) matrix}`` for each checkpoint (default ``[N]``).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    _check_schedule(schedule, N - 1)
    wanted = set(checkpoints) if checkpoints is not None else {N}
    if min(wanted) < 0 or max(wanted) > N:
        raise ValueError("checkpoints must lie in [0, N]")
    if f.lip == 0:
        return {n: np.zeros((f.dim, f.dim)) for n in wanted}
    d = _as_linear(mu_density)
    grid = d.grid
    fv = f(grid.gauss_points())
    A = PiecewiseLinear.zeros(grid, f.dim)
    second = np.zeros((f.dim, f.dim))
    out: dict[int, np.ndarray] = {}
    if 0 in wanted:
        out[0] = second.copy()
    for n in range(N):
        fbar = fv - d.integrate(fv)
        cross = A.integrate(fbar)
        src = d.times(fbar)
        second = second + cross + cross.T + src.integrate(fbar)
        if n + 1 in wanted:
            out[n + 1] = 0.5 * (second + second.T)
        if n + 1 < N and n + 1 < max(wanted) + 1:
            op = _op(schedule[n], grid)
            A = op.apply_linear(A + src)
            d = op.apply_linear(d)
        if n + 1 >= max(wanted):
            break
    return out


# -- binary cache of Ulam matrices ------------------------------------------

_ULAM_MAGIC = b"ULAM"
_ULAM_VERSION = 1
_HEADER = struct.Struct("<4sIQd")


def save_ulam_matrix(path: str | Path, op: UlamOperator) -> None:
    """Dense Ulam matrix: 24-byte header (magic, u32 version, u64 G, f64 alpha), then G*G LE doubles row-major."""
    if not op.grid.is_uniform:
        raise ValueError("the binary cache only describes uniform grids")
    dense = op.matrix.toarray()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_ULAM_MAGIC, _ULAM_VERSION, op.grid_size, float(op.alpha)))
        fh.write(np.ascontiguousarray(dense, dtype="<f8").tobytes())


def load_ulam_matrix(path: str | Path) -> tuple[float, np.ndarray]:
    """Read a file written by :func:`save_ulam_matrix`; returns ``(alpha, matrix)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated Ulam cache header")
    magic, version, G, alpha = _HEADER.unpack_from(raw)
    if magic != _ULAM_MAGIC:
        raise ValueError("not an Ulam cache file")
    if version != _ULAM_VERSION:
        raise ValueError(f"unsupported Ulam cache version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * G * G:
        raise ValueError("Ulam cache body has wrong length")
    return alpha, np.frombuffer(body, dtype="<f8").reshape(G, G).copy()
