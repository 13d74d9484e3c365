"""Univariate function bases for continuous tensor trains."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def gauss_legendre(order: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


@dataclass(frozen=True)
class UnivariateBasis:
    """A finite set of functions ``b_1..b_n`` on ``[-M, M]``.

    ``evaluate(x)`` returns an ``(len(x), n)`` matrix.  Integrals and the
    Gram (mass) matrix use the stored Gauss-Legendre rule.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    n: int
    M: float
    quad_order: int = 64
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    integrals: np.ndarray = field(init=False, repr=False)
    gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("basis must be nonempty")
        if self.M <= 0:
            raise ValueError("domain half-width M must be positive")
        nodes, weights = gauss_legendre(self.quad_order, -self.M, self.M)
        vals = self(nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "integrals", weights @ vals)
        object.__setattr__(self, "gram", vals.T @ (weights[:, None] * vals))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.asarray(self.evaluate(x))
        if out.shape != (x.size, self.n):
            raise ValueError(f"basis evaluation returned shape {out.shape}")
        return out

    def function_values(self, coef: np.ndarray, x) -> np.ndarray:
        """Values of ``sum_l coef[l] b_l(x)``."""
        return self(x) @ coef

    def coefficients_of(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """L2 projection of ``f`` onto the span of the basis."""
        rhs = self(self.nodes).T @ (self.weights * f(self.nodes))
        return np.linalg.solve(self.gram, rhs)


@dataclass(frozen=True)
class _GaussianBumps:
    centers: np.ndarray
    width: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.exp(-((x[:, None] - self.centers[None, :]) ** 2) / (2.0 * self.width**2))


def gaussian_kernel_basis(
    n: int = 20, M: float = 2.5, dx: float | None = None, quad_order: int = 64
) -> UnivariateBasis:
    """Gaussian bumps ``exp(-(x + M - (l-1) dx)^2 / (2 dx^2))``, l = 1..n.

    The default spacing ``dx = 2M/18`` places bump 1 at ``-M`` and bump 19
    at ``M``; bump 20 sits one spacing outside the domain.
    """
    if n < 2:
        raise ValueError("need at least two basis functions")
    if dx is None:
        dx = 2.0 * M / 18.0
    centers = -M + dx * np.arange(n)
    return UnivariateBasis(_GaussianBumps(centers, float(dx)), n=n, M=M, quad_order=quad_order)


def gaussian_centers(basis: UnivariateBasis) -> np.ndarray:
    return basis.evaluate.centers
