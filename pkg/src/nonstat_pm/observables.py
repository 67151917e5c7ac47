"""Vector-valued Lipschitz observables on [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Observable:
    """``f : [0,1] -> R^d`` evaluated elementwise.

    ``func`` maps an array of points of any shape to ``shape + (dim,)``.
    ``lip`` and ``sup`` are the declared Lipschitz constant and sup-norm
    (max over components).
    """

    name: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    lip: float
    sup: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.func(x), dtype=float)
        if out.shape != x.shape + (self.dim,):
            out = out.reshape(x.shape + (self.dim,))
        return out

    def check_lipschitz(self, n_pairs: int = 1000, seed: int = 0) -> bool:
        rng = np.random.default_rng(seed)
        x, y = rng.random(n_pairs), rng.random(n_pairs)
        diff = np.abs(self(x) - self(y)).max(axis=-1)
        return bool(np.all(diff <= self.lip * np.abs(x - y) * (1 + 1e-12) + 1e-15))

    def stack(self, other: "Observable", name: str | None = None) -> "Observable":
        """Concatenate components of two observables."""
        return Observable(
            name or f"{self.name}+{other.name}",
            self.dim + other.dim,
            lambda x: np.concatenate([self(x), other(x)], axis=-1),
            max(self.lip, other.lip),
            max(self.sup, other.sup),
        )


def constant(c: float = 1.0) -> Observable:
    return Observable(f"const({c})", 1, lambda x: np.full(np.shape(x) + (1,), float(c)), 0.0, abs(c))


def x_minus_half() -> Observable:
    return Observable("x_minus_half", 1, lambda x: (x - 0.5)[..., None], 1.0, 0.5)


def identity() -> Observable:
    return Observable("x", 1, lambda x: np.asarray(x)[..., None], 1.0, 1.0)


def cos2pi() -> Observable:
    return Observable("cos2pi", 1, lambda x: np.cos(2 * np.pi * x)[..., None], 2 * np.pi, 1.0)


def lip_pair_2d() -> Observable:
    """``(x - 1/2, cos 2πx)``."""
    return x_minus_half().stack(cos2pi(), name="lip_pair_2d")


BUILTINS: dict[str, Callable[[], Observable]] = {
    "x_minus_half": x_minus_half,
    "cos2pi": cos2pi,
    "lip_pair_2d": lip_pair_2d,
    "identity": identity,
}


def builtin(name: str) -> Observable:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown observable {name!r}; choose from {sorted(BUILTINS)}") from None
