"""Transverse-field Ising ground states by imaginary-time AFQMC with sketching.

The Hamiltonian is ``H = -sum_{i,j} J_ij Z_i Z_j - h sum_i X_i`` with the
double sum over ordered pairs, so a bond of strength 1 has
``J_ij = J_ji = 1/2``.  Site basis index 0 is spin up (``Z = +1``).

One imaginary-time step applies the exact one-body factor
``exp(dt h X)`` per site, then replaces ``exp(-dt H_2)`` by an average of
``N`` rank-1 Hubbard-Stratonovich propagators ``exp(i theta . Z)``, and
re-estimates the resulting particle sum as a tensor train by sketching.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .oracle import lanczos_ground
from .sketch import DiagonalEnsemble, SketchFamily, TrimReport, estimate_tt_from_particles
from .tt_core import (
    MatrixProductOperator,
    TensorTrain,
    apply_site_matrices,
    random_tt,
    rank1_tt,
    tt_add,
    tt_normalize,
    tt_round,
    tt_scale,
    tt_sum,
)

log = logging.getLogger(__name__)

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


def ring_adjacency(d: int) -> np.ndarray:
    A = np.zeros((d, d))
    for i in range(d):
        j = (i + 1) % d
        if i != j:
            A[i, j] = A[j, i] = 1.0
    return A


def lattice_adjacency(rows: int, cols: int) -> np.ndarray:
    """Periodic square lattice; site ``(r, c)`` has index ``r * cols + c``."""
    d = rows * cols
    A = np.zeros((d, d))
    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            for t in (r * cols + (c + 1) % cols, ((r + 1) % rows) * cols + c):
                if t != s:
                    A[s, t] = A[t, s] = 1.0
    return A


def serpentine_order(rows: int, cols: int) -> list[int]:
    """Boustrophedon order: TT position ``p`` holds site ``order[p]``."""
    order = []
    for r in range(rows):
        cs = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        order.extend(r * cols + c for c in cs)
    return order


@dataclass(frozen=True)
class IsingModel:
    J: np.ndarray
    h: float
    ordering: tuple[int, ...] | None = None

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("J must be a square matrix")
        object.__setattr__(self, "J", J)
        order = tuple(range(J.shape[0])) if self.ordering is None else tuple(int(i) for i in self.ordering)
        if sorted(order) != list(range(J.shape[0])):
            raise ValueError("ordering must be a permutation of the sites")
        object.__setattr__(self, "ordering", order)

    @property
    def d(self) -> int:
        return self.J.shape[0]

    @property
    def couplings(self) -> np.ndarray:
        """Couplings re-indexed by TT position."""
        o = np.asarray(self.ordering)
        return self.J[np.ix_(o, o)]

    @classmethod
    def ring(cls, d: int, h: float = 1.0, coupling: float = 1.0) -> "IsingModel":
        """1D periodic chain with bond strength ``coupling``."""
        return cls(0.5 * coupling * ring_adjacency(d), h)

    @classmethod
    def lattice(cls, rows: int, cols: int, h: float = 1.0, coupling: float = 1.0) -> "IsingModel":
        """2D periodic lattice ordered along the serpentine curve."""
        return cls(0.5 * coupling * lattice_adjacency(rows, cols), h, tuple(serpentine_order(rows, cols)))


@dataclass(frozen=True)
class HSDecomposition:
    """PSD-shifted quadratic form ``Q + cI = U diag(lam) U^T``.

    ``H_2 = sum_ij Q_ij Z_i Z_j`` and the shift adds the constant ``c * d``,
    which the per-step normalization absorbs.
    """

    lam: np.ndarray
    U: np.ndarray
    shift: float
    dt: float

    @property
    def constant(self) -> float:
        return self.shift * len(self.lam)

    @property
    def field_map(self) -> np.ndarray:
        """``theta = field_map @ k`` maps auxiliary fields to site angles."""
        return self.U * np.sqrt(2.0 * self.dt * self.lam)[None, :]


def hs_from_quadratic(Q: np.ndarray, dt: float) -> HSDecomposition:
    if dt <= 0:
        raise ValueError("dt must be positive")
    Q = np.asarray(Q, dtype=float)
    if not np.allclose(Q, Q.T, atol=1e-14, rtol=0):
        raise ValueError("non-symmetric coupling matrix")
    lam0 = np.linalg.eigvalsh(Q)
    shift = max(0.0, -float(lam0[0]))
    lam, U = np.linalg.eigh(Q + shift * np.eye(Q.shape[0]))
    lam = np.where(lam < 0, 0.0, lam)  # clip rounding noise
    return HSDecomposition(lam=lam, U=U, shift=shift, dt=float(dt))


def build_hs(model: IsingModel, dt: float) -> HSDecomposition:
    """HS decomposition of the coupling term of ``model`` (in TT order)."""
    return hs_from_quadratic(-model.couplings, dt)


@dataclass(frozen=True)
class PropagatorSample:
    k: np.ndarray
    theta: np.ndarray

    @property
    def site_matrices(self) -> list[np.ndarray]:
        return [np.diag([np.exp(1j * t), np.exp(-1j * t)]) for t in self.theta]

    def mpo(self) -> MatrixProductOperator:
        return MatrixProductOperator.from_site_matrices(self.site_matrices)


def sample_fields(hs: HSDecomposition, N: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``N`` standard-normal field vectors and their site angles ``(N, d)``."""
    if N < 1:
        raise ValueError("need at least one sample")
    k = rng.standard_normal((N, len(hs.lam)))
    return k, k @ hs.field_map.T


def sample_propagators(hs: HSDecomposition, N: int, rng: np.random.Generator) -> list[PropagatorSample]:
    k, theta = sample_fields(hs, N, rng)
    return [PropagatorSample(k[i], theta[i]) for i in range(N)]


def block_fields(hs: HSDecomposition, N: int, seed: int, iteration: int, block: int = 256):
    """Fields drawn in fixed-size particle blocks, each from its own stream
    keyed by ``(seed, iteration, block index)``."""
    d = len(hs.lam)
    k = np.empty((N, d))
    for j, start in enumerate(range(0, N, block)):
        stop = min(start + block, N)
        k[start:stop] = np.random.default_rng([seed, iteration, j]).standard_normal((stop - start, d))
    return k


def propagator_diagonals(theta: np.ndarray) -> np.ndarray:
    """Site diagonals ``(N, d, 2)`` of ``exp(i theta_m Z_m)``."""
    ph = np.exp(1j * theta)
    return np.stack([ph, ph.conj()], axis=-1)


def onebody_matrix(h: float, dt: float) -> np.ndarray:
    """``exp(dt h X) = cosh(dt h) I + sinh(dt h) X``."""
    return np.cosh(dt * h) * np.eye(2) + np.sinh(dt * h) * PAULI_X


def apply_onebody(model: IsingModel, dt: float, tt: TensorTrain) -> TensorTrain:
    if any(n != 2 for n in tt.dims):
        raise ValueError("spin tensor trains have mode size 2")
    m = onebody_matrix(model.h, dt)
    return apply_site_matrices([m] * tt.d, tt)


# ----------------------------------------------------------------------
# energy estimators
# ----------------------------------------------------------------------


def _transfer(env: np.ndarray, bra: np.ndarray, ket: np.ndarray, op: np.ndarray | None = None) -> np.ndarray:
    if op is not None:
        ket = np.einsum("xy,ayb->axb", op, ket)
    t = np.tensordot(env, ket, axes=(1, 0))  # (rb, n, rk')
    return np.tensordot(bra.conj(), t, axes=([0, 1], [0, 1]))


def hamiltonian_matrix_element(bra: TensorTrain, ket: TensorTrain, model: IsingModel):
    """``<bra, H ket>`` and ``<bra, ket>`` via left/right environments."""
    d = ket.d
    J = model.couplings
    dtype = np.result_type(bra.dtype, ket.dtype)
    left = [np.ones((1, 1), dtype=dtype)]
    for k in range(d):
        left.append(_transfer(left[-1], bra.cores[k], ket.cores[k]))
    right = [None] * (d + 1)
    right[d] = np.ones((1, 1), dtype=dtype)
    for k in range(d - 1, -1, -1):
        # right[k][a, c] = sum conj(bra[a,x,b]) ket[c,x,e] right[k+1][b,e]
        t = np.tensordot(ket.cores[k], right[k + 1], axes=(2, 1))  # (rk, n, rb)
        right[k] = np.tensordot(bra.cores[k].conj(), t, axes=([1, 2], [1, 2]))
    overlap = left[d][0, 0]

    def close(env, k):
        return np.sum(env * right[k])

    energy = -np.trace(J) * overlap
    for i in range(d):
        ex = _transfer(left[i], bra.cores[i], ket.cores[i], PAULI_X)
        energy -= model.h * close(ex, i + 1)
    for i in range(d):
        js = [j for j in range(i + 1, d) if J[i, j] != 0 or J[j, i] != 0]
        if not js:
            continue
        env = _transfer(left[i], bra.cores[i], ket.cores[i], PAULI_Z)
        for j in range(i + 1, js[-1] + 1):
            if j in js:
                zz = _transfer(env, bra.cores[j], ket.cores[j], PAULI_Z)
                energy -= (J[i, j] + J[j, i]) * close(zz, j + 1)
            env = _transfer(env, bra.cores[j], ket.cores[j])
    return energy, overlap


def energy_symmetric(state: TensorTrain, model: IsingModel) -> float:
    """Rayleigh quotient ``<phi, H phi> / <phi, phi>``."""
    num, den = hamiltonian_matrix_element(state, state, model)
    if abs(den) == 0:
        raise ZeroDivisionError("zero-norm state")
    val = num / den
    if abs(np.imag(val)) > 1e-8 * max(1.0, abs(val)):
        log.warning("symmetric estimator has imaginary part %.3e", np.imag(val))
    return float(np.real(val))


def uniform_reference(d: int) -> TensorTrain:
    """Equal-amplitude product state used as the mixed-estimator reference."""
    return rank1_tt([np.full(2, 1.0 / np.sqrt(2.0))] * d)


def energy_mixed(state: TensorTrain, reference: TensorTrain, model: IsingModel) -> float:
    """``<ref, H phi> / <ref, phi>`` (real part)."""
    num, den = hamiltonian_matrix_element(reference, state, model)
    if abs(den) <= 1e-300:
        raise ZeroDivisionError("vanishing overlap with the reference state")
    return float(np.real(num / den))


def window_average(values: Sequence[float], window: int) -> float:
    """Mean of the trailing ``window`` entries."""
    vals = np.asarray(values, dtype=float)
    return float(vals[-window:].mean())


def lanczos_oracle(model: IsingModel, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    """Exact ground energy and vector (TT-ordered sites), d <= 16."""
    return lanczos_ground(model.couplings, model.h, tol=tol)


# ----------------------------------------------------------------------
# time stepping
# ----------------------------------------------------------------------


def random_initial_state(d: int, rank: int, rng: np.random.Generator) -> TensorTrain:
    """Normalized random MPS with i.i.d. normal entries."""
    return tt_normalize(random_tt([2] * d, rank, rng).astype(np.complex128))


@dataclass
class StepInfo:
    trim: TrimReport | None = None
    k: np.ndarray | None = field(default=None, repr=False)


def afqmc_step(
    state: TensorTrain,
    model: IsingModel,
    hs: HSDecomposition,
    N: int,
    sketch: SketchFamily,
    svd_threshold: float,
    rng: np.random.Generator | None,
    strang: bool = False,
    max_rank: int | None = None,
    fields: np.ndarray | None = None,
    threads: int = 1,
) -> tuple[TensorTrain, StepInfo]:
    """One sampled imaginary-time step followed by sketching and L2 normalization.

    ``fields`` overrides the sampled auxiliary fields (``(N, d)``).
    """
    dt = hs.dt
    phi = apply_onebody(model, dt / 2 if strang else dt, state)
    if fields is None:
        k, theta = sample_fields(hs, N, rng)
    else:
        k = np.asarray(fields, dtype=float)
        theta = k @ hs.field_map.T
    ens = DiagonalEnsemble(phi, propagator_diagonals(theta))
    new, trim = estimate_tt_from_particles(ens, sketch, svd_threshold, max_rank=max_rank, threads=threads)
    if strang:
        new = apply_onebody(model, dt / 2, new)
    return tt_normalize(new), StepInfo(trim=trim, k=k)


def particle_sum_step(
    state: TensorTrain,
    model: IsingModel,
    hs: HSDecomposition,
    N: int,
    max_rank: int,
    rng: np.random.Generator | None,
    round_tol: float = 0.0,
    fields: np.ndarray | None = None,
) -> TensorTrain:
    """Baseline step: add particles as tensor trains, rounding whenever the
    rank would exceed ``max_rank``."""
    phi = apply_onebody(model, hs.dt, state)
    if fields is None:
        _, theta = sample_fields(hs, N, rng)
    else:
        theta = np.asarray(fields, dtype=float) @ hs.field_map.T
    diag = propagator_diagonals(theta)
    r_state = max(phi.bond_dims) if phi.d > 1 else 1
    per_block = max(1, max_rank // r_state)
    acc = None
    for start in range(0, N, per_block):
        block = [
            TensorTrain([c * diag[i, k][None, :, None] for k, c in enumerate(phi.cores)])
            for i in range(start, min(start + per_block, N))
        ]
        part = tt_sum(block)
        acc = part if acc is None else tt_add(acc, part)
        if max(acc.bond_dims) > max_rank:
            acc = tt_round(acc, round_tol, max_rank)
    acc = tt_round(acc, round_tol, max_rank)
    return tt_normalize(tt_scale(acc, 1.0 / N))
