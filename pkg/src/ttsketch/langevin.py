"""Fokker-Planck evolution of continuous tensor-train densities.

Each step samples particles from the current density, advances them with
Euler-Maruyama under ``dx = -grad V dt + sqrt(2/beta) dW`` inside the box
``[-M, M]^d`` (reflecting walls), and re-estimates the density from the
particles with a cluster-basis sketch.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .basis import UnivariateBasis, gaussian_kernel_basis
from .oracle import gl_transfer_marginal, quad_marginal_1d
from .sampler import marginal_density, tt_sample
from .sketch import DeltaEnsemble, SketchFamily, TrimReport, estimate_tt_from_particles
from .tt_core import TensorTrain, tt_full_sum, tt_scale

__all__ = [
    "Potential",
    "double_well",
    "ginzburg_landau",
    "LangevinConfig",
    "em_advance",
    "reflect",
    "fpe_step",
    "gaussian_kernel_basis",
    "equilibrium_reference",
    "marginal_error",
    "NumericalAbort",
    "MAX_CLAMPED",
    "FpeInfo",
    "fit_density",
    "l1_normalize",
    "MarginalReference",
    "gl_monte_carlo",
    "gl_reference_table",
    "config_hash",
]

log = logging.getLogger(__name__)

MAX_CLAMPED = 0.2


class NumericalAbort(RuntimeError):
    def __init__(self, message: str, mode: int | None = None, bond: int | None = None):
        super().__init__(message)
        self.mode = mode
        self.bond = bond


@dataclass(frozen=True)
class Potential:
    """Potential energy with its gradient, both acting on ``(N, d)`` arrays."""

    kind: str
    d: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.value(np.atleast_2d(np.asarray(x, dtype=float)))

    def grad(self, x) -> np.ndarray:
        return self.gradient(np.atleast_2d(np.asarray(x, dtype=float)))


def double_well(d: int, coef: float = 0.3) -> Potential:
    """``(x_1^2 - 1)^2 + coef * sum_{j>=2} x_j^2``."""

    def value(x):
        return (x[:, 0] ** 2 - 1.0) ** 2 + coef * np.sum(x[:, 1:] ** 2, axis=1)

    def gradient(x):
        g = 2.0 * coef * x
        g[:, 0] = 4.0 * x[:, 0] * (x[:, 0] ** 2 - 1.0)
        return g

    return Potential("double-well", d, value, gradient, {"coef": coef})


def ginzburg_landau(d: int, lam: float = 0.03) -> Potential:
    """Discrete Ginzburg-Landau chain with pinned ends ``U_0 = U_{d+1} = 0``.

    ``V = sum_{i=1}^{d+1} lam/2 ((U_i - U_{i-1})/h)^2 + (1 - U_i^2)^2 / (4 lam)``
    with ``h = 1/(d+1)``; the ``i = d+1`` site term is the constant ``1/(4 lam)``.
    """
    h = 1.0 / (d + 1)
    c = lam / (2.0 * h * h)

    def padded(x):
        z = np.zeros((x.shape[0], 1))
        return np.concatenate([z, x, z], axis=1)

    def value(x):
        u = padded(x)
        grad_term = c * np.sum(np.diff(u, axis=1) ** 2, axis=1)
        site = np.sum((1.0 - u[:, 1:] ** 2) ** 2, axis=1) / (4.0 * lam)
        return grad_term + site

    def gradient(x):
        u = padded(x)
        lap = 2.0 * u[:, 1:-1] - u[:, :-2] - u[:, 2:]
        return 2.0 * c * lap - x * (1.0 - x**2) / lam

    return Potential("ginzburg-landau", d, value, gradient, {"lam": lam})


@dataclass(frozen=True)
class LangevinConfig:
    beta: float
    dt: float
    N: int
    M: float = 2.5
    substeps: int = 1
    boundary: str = "reflect"

    def __post_init__(self):
        if self.beta <= 0 or self.dt <= 0:
            raise ValueError("beta and dt must be positive")
        if self.M <= 0:
            raise ValueError("M must be positive")
        if self.substeps < 1 or self.N < 1:
            raise ValueError("substeps and N must be at least 1")
        if self.boundary != "reflect":
            raise ValueError(f"unsupported boundary policy {self.boundary!r}")

    @property
    def substep(self) -> float:
        return self.dt / self.substeps


def reflect(x: np.ndarray, M: float) -> np.ndarray:
    """Fold coordinates back into ``[-M, M]`` by mirror reflection at the walls."""
    period = 4.0 * M
    y = np.mod(x + M, period)
    y = np.where(y > 2.0 * M, period - y, y)
    return y - M


def em_advance(points: np.ndarray, potential: Potential, config: LangevinConfig, rng: np.random.Generator):
    """Euler-Maruyama over ``config.dt`` in ``config.substeps`` substeps."""
    x = np.array(points, dtype=float, copy=True)
    step = config.substep
    noise = np.sqrt(2.0 * step / config.beta) if np.isfinite(config.beta) else 0.0
    for _ in range(config.substeps):
        g = potential.gradient(x)
        if not np.all(np.isfinite(g)):
            raise NumericalAbort("non-finite potential gradient")
        x = x - step * g
        if noise:
            x = x + noise * rng.standard_normal(x.shape)
        x = reflect(x, config.M)
    return x


def l1_normalize(density: TensorTrain, basis: UnivariateBasis) -> TensorTrain:
    mass = float(np.real(tt_full_sum(density, [basis.integrals] * density.d)))
    if not mass > 0:
        raise NumericalAbort("estimated density has nonpositive mass")
    return tt_scale(density, 1.0 / mass)


@dataclass
class FpeInfo:
    clamped_fraction: float = 0.0
    trim: TrimReport | None = None
    points: np.ndarray | None = field(default=None, repr=False)


def fit_density(points, sketch: SketchFamily, svd_threshold: float, basis: UnivariateBasis, max_rank=None):
    tt, trim = estimate_tt_from_particles(DeltaEnsemble(points), sketch, svd_threshold, max_rank=max_rank)
    return l1_normalize(tt, basis), trim


def fpe_step(
    density: TensorTrain | None,
    potential: Potential,
    config: LangevinConfig,
    basis: UnivariateBasis,
    sketch: SketchFamily,
    svd_threshold: float,
    rng: np.random.Generator,
    max_rank: int | None = None,
) -> tuple[TensorTrain, FpeInfo]:
    """Sample, advance and re-estimate.  ``density=None`` means uniform on the box."""
    d = potential.d
    if density is None:
        pts = rng.uniform(-config.M, config.M, size=(config.N, d))
        clamped = 0.0
    else:
        res = tt_sample(density, rng, config.N, basis)
        pts, clamped = res.points, res.clamped_fraction
        if clamped > MAX_CLAMPED:
            raise NumericalAbort(f"clamped conditional mass {clamped:.3f} exceeds {MAX_CLAMPED}")
    pts = em_advance(pts, potential, config, rng)
    new, trim = fit_density(pts, sketch, svd_threshold, basis, max_rank)
    return new, FpeInfo(clamped_fraction=clamped, trim=trim, points=pts)


# ----------------------------------------------------------------------
# references and errors
# ----------------------------------------------------------------------


@dataclass
class MarginalReference:
    """Reference density of one mode, callable on ``[-M, M]``."""

    mode: int
    density: Callable[[np.ndarray], np.ndarray]
    source: str

    def __call__(self, x) -> np.ndarray:
        return self.density(np.asarray(x, dtype=float))


def _histogram_density(samples: np.ndarray, M: float, bins: int):
    counts, edges = np.histogram(samples, bins=bins, range=(-M, M))
    width = edges[1] - edges[0]
    dens = counts / (counts.sum() * width)
    centers = 0.5 * (edges[1:] + edges[:-1])

    def density(x):
        return np.interp(x, centers, dens)

    return density, counts, edges


def gl_monte_carlo(
    d: int,
    lam: float,
    beta: float,
    M: float,
    mode: int,
    particles: int,
    dt: float,
    t_end: float,
    seed: int,
    chunk: int = 100_000,
) -> np.ndarray:
    """Samples of one GL coordinate after a long Langevin run from uniform."""
    pot = ginzburg_landau(d, lam)
    steps = int(round(t_end / dt))
    cfg = LangevinConfig(beta=beta, dt=dt * steps, N=1, M=M, substeps=steps)
    ss = np.random.SeedSequence(seed)
    out = []
    for child, start in zip(ss.spawn((particles + chunk - 1) // chunk), range(0, particles, chunk)):
        rng = np.random.default_rng(child)
        n = min(chunk, particles - start)
        x = rng.uniform(-M, M, size=(n, d))
        x = em_advance(x, pot, cfg, rng)
        out.append(x[:, mode])
    return np.concatenate(out)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def gl_reference_table(
    cache_dir: str | Path | None,
    d: int = 16,
    lam: float = 0.03,
    beta: float = 0.125,
    M: float = 2.5,
    mode: int = 7,
    particles: int = 1_000_000,
    dt: float = 0.002,
    t_end: float = 2.0,
    seed: int = 0,
    bins: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram density ``(centers, values)`` of the long-run GL oracle, cached as CSV."""
    meta = dict(d=d, lam=lam, beta=beta, M=M, mode=mode, particles=particles, dt=dt, t_end=t_end, seed=seed, bins=bins)
    h = config_hash(meta)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"gl_reference_{h}.csv"
        if path.exists():
            data = np.loadtxt(path, delimiter=",", comments="#", skiprows=2)
            return data[:, 0], data[:, 1]
    samples = gl_monte_carlo(d, lam, beta, M, mode, particles, dt, t_end, seed)
    counts, edges = np.histogram(samples, bins=bins, range=(-M, M))
    centers = 0.5 * (edges[1:] + edges[:-1])
    dens = counts / (counts.sum() * (edges[1] - edges[0]))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(f"# seed={seed} config_hash={h} config={json.dumps(meta, sort_keys=True)}\n")
            fh.write("x,density\n")
            for c, v in zip(centers, dens):
                fh.write(f"{c:.17g},{v:.17g}\n")
    return centers, dens


def equilibrium_reference(
    potential: Potential,
    beta: float,
    basis: UnivariateBasis,
    modes=None,
    cache_dir: str | Path | None = None,
    method: str = "auto",
    **mc_options,
) -> dict[int, MarginalReference]:
    """Equilibrium marginals of the requested modes.

    Double-well: exact 1D quadrature of the separable factors.  GL: the
    long-run Monte Carlo histogram (``method="mc"``, default) or the
    transfer-operator quadrature (``method="transfer"``).
    """
    modes = [0] if modes is None else list(modes)
    out = {}
    if potential.kind == "double-well":
        coef = potential.params["coef"]
        for m in modes:
            if m == 0:
                f = quad_marginal_1d(lambda x: (x**2 - 1.0) ** 2, beta, basis)
            else:
                f = quad_marginal_1d(lambda x: coef * x**2, beta, basis)
            out[m] = MarginalReference(m, f, "quadrature")
        return out
    if potential.kind == "ginzburg-landau":
        lam = potential.params["lam"]
        for m in modes:
            if method == "transfer":
                x, w, dens = gl_transfer_marginal(potential.d, lam, beta, basis.M, m)
                out[m] = MarginalReference(m, _interp_density(x, dens), "transfer")
            else:
                centers, dens = gl_reference_table(cache_dir, potential.d, lam, beta, basis.M, m, **mc_options)
                out[m] = MarginalReference(m, _interp_density(centers, dens), "monte-carlo")
        return out
    raise ValueError(f"no equilibrium reference for potential kind {potential.kind!r}")


def _interp_density(x, dens):
    x = np.asarray(x)
    dens = np.asarray(dens)

    def f(t):
        return np.interp(t, x, dens)

    return f


def marginal_error(density: TensorTrain, reference, mode: int, basis: UnivariateBasis) -> float:
    """Relative L2 error of the normalized mode marginal on the quadrature grid."""
    x, w = basis.nodes, basis.weights
    ref = np.asarray(reference(x), dtype=float)
    nref = np.sqrt(w @ ref**2)
    if nref == 0:
        raise ZeroDivisionError("reference marginal has zero norm")
    est = np.real(marginal_density(density, mode, basis, x))
    return float(np.sqrt(w @ (est - ref) ** 2) / nref)
