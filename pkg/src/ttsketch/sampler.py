"""Exact i.i.d. sampling from tensor-train densities by the chain rule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import UnivariateBasis
from .tt_core import TensorTrain

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    def __init__(self, mode: int, message: str):
        super().__init__(message)
        self.mode = mode


def _mode_weights(tt: TensorTrain, basis: UnivariateBasis | None) -> list[np.ndarray]:
    if basis is None:
        return [np.ones(n) for n in tt.dims]
    if any(n != basis.n for n in tt.dims):
        raise ValueError("continuous tensor train does not match the basis size")
    return [basis.integrals] * tt.d


def right_messages(tt: TensorTrain, basis: UnivariateBasis | None = None) -> list[np.ndarray]:
    """``R[k]`` = vector of the tail ``k..d-1`` summed (or integrated) out."""
    w = _mode_weights(tt, basis)
    R = [None] * (tt.d + 1)
    R[tt.d] = np.ones(1)
    for k in range(tt.d - 1, -1, -1):
        R[k] = np.einsum("axb,x,b->a", tt.cores[k], w[k], R[k + 1])
    return R


def tt_marginal_1d(tt: TensorTrain, mode: int, basis: UnivariateBasis | None = None) -> np.ndarray:
    """Unnormalized marginal of one mode.

    Discrete: table over the mode's indices.  Continuous: basis coefficients
    of the marginal function, ``marginal(x) = basis(x) @ coef``.
    """
    if not 0 <= mode < tt.d:
        raise IndexError(f"mode {mode} out of range")
    w = _mode_weights(tt, basis)
    left = np.ones(1)
    for k in range(mode):
        left = left @ np.einsum("axb,x->ab", tt.cores[k], w[k])
    right = np.ones(1)
    for k in range(tt.d - 1, mode, -1):
        right = np.einsum("axb,x,b->a", tt.cores[k], w[k], right)
    return np.einsum("a,axb,b->x", left, tt.cores[mode], right)


def marginal_density(tt: TensorTrain, mode: int, basis: UnivariateBasis, x) -> np.ndarray:
    """Normalized continuous marginal of ``mode`` evaluated at ``x``."""
    coef = tt_marginal_1d(tt, mode, basis)
    mass = basis.integrals @ coef
    if mass == 0:
        raise ZeroDivisionError("marginal has zero mass")
    return basis(x) @ (coef / mass)


def sampling_grid(basis: UnivariateBasis) -> np.ndarray:
    """Quadrature nodes plus the two interval endpoints."""
    return np.concatenate([[-basis.M], basis.nodes, [basis.M]])


@dataclass
class ConditionalChainState:
    """Vectorized conditional chain over a batch of partial samples.

    ``left`` holds the prefix contractions (rescaled per sample to avoid
    under/overflow), ``prefix`` the coordinates fixed so far and ``table`` the
    most recent conditional (rows sum to one after clamping).
    """

    tt: TensorTrain
    basis: UnivariateBasis | None
    grid: np.ndarray | None
    right: list[np.ndarray]
    left: np.ndarray
    prefix: list[np.ndarray] = field(default_factory=list)
    table: np.ndarray | None = None
    clamped: float = 0.0
    total: float = 0.0

    @classmethod
    def start(cls, tt: TensorTrain, count: int, basis: UnivariateBasis | None = None, grid=None):
        if basis is not None and grid is None:
            grid = sampling_grid(basis)
        right = right_messages(tt, basis)
        dtype = np.result_type(tt.dtype, np.float64)
        return cls(tt, basis, grid, right, np.ones((count, 1), dtype=dtype))

    @property
    def mode(self) -> int:
        return len(self.prefix)

    def _core_values(self, k: int, pts: np.ndarray | None = None) -> np.ndarray:
        """Core ``k`` as ``(r0, m, r1)`` on the grid or at given points."""
        G = self.tt.cores[k]
        if self.basis is None:
            return G
        x = self.grid if pts is None else pts
        return np.einsum("axb,mx->amb", G, self.basis(x))

    def conditional(self) -> np.ndarray:
        """Clamped, normalized conditional of the next mode, ``(count, m)``.

        Discrete rows are probabilities; continuous rows are density values
        on ``grid`` normalized by the trapezoid rule.
        """
        k = self.mode
        vals = np.einsum("ia,axb,b->ix", self.left, self._core_values(k), self.right[k + 1])
        if np.iscomplexobj(vals):
            vals = vals.real
        # conditional = joint / prefix marginal, so a negative prefix flips the sign
        prefix = np.real(self.left @ self.right[k])
        vals = vals * np.where(prefix < 0, -1.0, 1.0)[:, None]
        if self.basis is None:
            integrate = lambda v: v.sum(axis=1)  # noqa: E731
        else:
            dx = np.diff(self.grid)
            integrate = lambda v: (0.5 * (v[:, 1:] + v[:, :-1]) * dx).sum(axis=1)  # noqa: E731
        self.clamped += float(integrate(np.clip(-vals, 0.0, None)).sum())
        self.total += float(integrate(np.abs(vals)).sum())
        vals = np.clip(vals, 0.0, None)
        mass = integrate(vals)
        bad = ~(mass > 0)
        if bad.any():
            raise SamplingError(k, f"conditional of mode {k} is nonpositive everywhere for {int(bad.sum())} samples")
        self.table = vals / mass[:, None]
        return self.table

    def advance(self, u: np.ndarray) -> np.ndarray:
        """Fix the next coordinate by inverting the conditional CDF at ``u``.

        Continuous conditionals are linear between grid points, so the CDF
        is the exact piecewise-quadratic integral of the trapezoid density.
        """
        k = self.mode
        table = self.conditional()
        if self.basis is None:
            cdf = np.cumsum(table, axis=1)
            y = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
            y = np.minimum(y, table.shape[1] - 1)
            step = np.transpose(self.tt.cores[k][:, y, :], (1, 0, 2))
        else:
            g = self.grid
            cell = 0.5 * (table[:, 1:] + table[:, :-1]) * np.diff(g)
            cdf = np.concatenate([np.zeros((len(u), 1)), np.cumsum(cell, axis=1)], axis=1)
            target = u * cdf[:, -1]
            j = np.clip((cdf < target[:, None]).sum(axis=1) - 1, 0, len(g) - 2)
            rows = np.arange(len(u))
            lo = cdf[rows, j]
            hi = cdf[rows, j + 1]
            # density is linear inside the cell: solve the quadratic CDF for the offset
            fa, fb = table[rows, j], table[rows, j + 1]
            q = np.where(hi > lo, (target - lo) / np.where(hi > lo, hi - lo, 1.0), 0.5)
            q = np.clip(q, 0.0, 1.0) * 0.5 * (fa + fb)
            disc = np.sqrt(np.clip(fa * fa + 2.0 * (fb - fa) * q, 0.0, None))
            den = fa + disc
            frac = np.where(den > 0, 2.0 * q / np.where(den > 0, den, 1.0), 0.5)
            y = g[j] + np.clip(frac, 0.0, 1.0) * (g[j + 1] - g[j])
            step = np.transpose(self._core_values(k, y), (1, 0, 2))
        left = np.einsum("ia,iab->ib", self.left, step)
        scale = np.abs(left).max(axis=1, keepdims=True)
        self.left = left / np.where(scale > 0, scale, 1.0)
        self.prefix.append(y)
        return y

    @property
    def clamped_fraction(self) -> float:
        return self.clamped / self.total if self.total > 0 else 0.0


@dataclass
class SampleResult:
    points: np.ndarray
    clamped_fraction: float


def total_mass(tt: TensorTrain, basis: UnivariateBasis | None = None) -> float:
    m = right_messages(tt, basis)[0][0]
    return float(np.real(m))


def tt_sample(
    tt: TensorTrain,
    rng: np.random.Generator,
    count: int,
    basis: UnivariateBasis | None = None,
    grid: np.ndarray | None = None,
) -> SampleResult:
    """Draw ``count`` i.i.d. samples mode by mode.

    Discrete samples are integer index arrays ``(count, d)``; continuous
    samples are real coordinates.  All uniforms are drawn up front so the
    result depends only on the generator state.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if total_mass(tt, basis) <= 0:
        raise SamplingError(-1, "tensor train has nonpositive total mass")
    U = rng.random((count, tt.d))
    state = ConditionalChainState.start(tt, count, basis, grid)
    for k in range(tt.d):
        state.advance(U[:, k])
    pts = np.stack(state.prefix, axis=1)
    if basis is None:
        pts = pts.astype(np.intp)
    frac = state.clamped_fraction
    if frac > 0:
        log.debug("clamped %.3e of the conditional mass", frac)
    return SampleResult(pts, frac)


def conditional_chain_product(tt: TensorTrain, point) -> float:
    """Product of the (unclamped) discrete conditionals along ``point``."""
    right = right_messages(tt)
    left = np.ones(1)
    prob = 1.0
    for k, x in enumerate(point):
        vals = np.einsum("a,axb,b->x", left, tt.cores[k], right[k + 1])
        prob *= vals[x] / vals.sum()
        left = left @ tt.cores[k][:, x, :]
    return float(np.real(prob))
