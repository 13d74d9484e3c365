"""Brute-force references used by the tests and acceptance runs.

Nothing here is used on the production path of the solvers.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as sla

from .basis import UnivariateBasis
from .tt_core import MatrixProductOperator, TensorTrain

DENSE_CAP = 2**16
EXPM_CAP = 2**12


class OracleSizeError(ValueError):
    pass


def densify(tt: TensorTrain, cap: int = DENSE_CAP) -> np.ndarray:
    """Full tensor of shape ``tt.dims`` by sequential contraction."""
    size = int(np.prod(tt.dims))
    if size > cap:
        raise OracleSizeError(f"dense size {size} exceeds cap {cap}")
    out = tt.cores[0].reshape(tt.dims[0], -1)
    for c in tt.cores[1:]:
        r0, n, r1 = c.shape
        out = (out @ c.reshape(r0, n * r1)).reshape(-1, r1)
    return out.reshape(tt.dims)


def densify_mpo(op: MatrixProductOperator) -> np.ndarray:
    """Dense matrix of an MPO, rows and columns in row-major multi-index order."""
    full = op.cores[0][0]  # (n, n', r)
    for c in op.cores[1:]:
        full = np.einsum("xyr,rabs->xaybs", full, c)
        x, a, y, b, s = full.shape
        full = full.reshape(x * a, y * b, s)
    return full[:, :, 0]


def spin_configs(d: int) -> np.ndarray:
    """``(2^d, d)`` array of +-1 spins; index bit 0 (value +1) is spin up on each site.

    Site 0 is the most significant bit, matching row-major ``densify``.
    """
    idx = np.arange(2**d)
    bits = (idx[:, None] >> np.arange(d - 1, -1, -1)[None, :]) & 1
    return 1 - 2 * bits


def ising_diagonal(J: np.ndarray) -> np.ndarray:
    """Diagonal of ``-sum_{i,j} J_ij Z_i Z_j`` over all basis states."""
    d = J.shape[0]
    z = spin_configs(d).astype(float)
    return -np.einsum("si,ij,sj->s", z, J, z)


def dense_hamiltonian_apply(J: np.ndarray, h: float, v: np.ndarray, diag: np.ndarray | None = None):
    """``H v`` for ``H = -sum_{i,j} J_ij Z_i Z_j - h sum_i X_i`` without forming H."""
    d = J.shape[0]
    if 2**d > DENSE_CAP:
        raise OracleSizeError(f"d={d} exceeds the dense cap")
    v = np.asarray(v)
    if diag is None:
        diag = ising_diagonal(J)
    out = diag * v
    idx = np.arange(2**d)
    for m in range(d):
        out = out - h * v[idx ^ (1 << (d - 1 - m))]
    return out


def explicit_hamiltonian(J: np.ndarray, h: float) -> np.ndarray:
    """Dense matrix from Kronecker products (small d only)."""
    d = J.shape[0]
    Z = np.diag([1.0, -1.0])
    X = np.array([[0.0, 1.0], [1.0, 0.0]])

    def site(op, i):
        out = np.ones((1, 1))
        for k in range(d):
            out = np.kron(out, op if k == i else np.eye(2))
        return out

    H = np.zeros((2**d, 2**d))
    for i in range(d):
        for j in range(d):
            if J[i, j] != 0:
                H -= J[i, j] * site(Z, i) @ site(Z, j)
        H -= h * site(X, i)
    return H


def dense_expm_apply(apply: Callable[[np.ndarray], np.ndarray], dt: float, v: np.ndarray, tol: float = 1e-12):
    """``exp(-dt A) v`` by a Taylor series with step splitting.

    ``apply`` is a matrix-free linear map.  The interval is split so that each
    substep's series converges quickly; an operator-norm estimate comes from
    a few power iterations.
    """
    v = np.asarray(v)
    if v.size > EXPM_CAP:
        raise OracleSizeError(f"vector length {v.size} exceeds the expm cap {EXPM_CAP}")
    if dt == 0:
        return v.copy()
    w = np.random.default_rng(0).standard_normal(v.shape)
    for _ in range(20):
        w = apply(w)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        w = w / nw
    norm_est = 2.0 * np.linalg.norm(apply(w)) + 1e-300
    steps = max(1, int(np.ceil(abs(dt) * norm_est)))
    h = dt / steps
    out = v.astype(np.result_type(v.dtype, np.float64))
    for _ in range(steps):
        term = out
        acc = out.copy()
        for k in range(1, 200):
            term = -h * apply(term) / k
            acc = acc + term
            if np.linalg.norm(term) <= tol * np.linalg.norm(acc):
                break
        else:
            raise RuntimeError("Taylor series did not converge")
        out = acc
    return out


def expm_dense(A: np.ndarray, dt: float, v: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring reference (scipy)."""
    return scipy.linalg.expm(-dt * A) @ v


def lanczos_ground(J: np.ndarray, h: float, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    """Ground energy and vector of the transverse-field Ising Hamiltonian."""
    d = J.shape[0]
    if 2**d > DENSE_CAP:
        raise OracleSizeError(f"d={d} exceeds the Lanczos cap of 16 sites")
    diag = ising_diagonal(J)
    if d <= 4:
        w, V = np.linalg.eigh(explicit_hamiltonian(J, h))
        return float(w[0]), V[:, 0]
    op = sla.LinearOperator(
        (2**d, 2**d), matvec=lambda x: dense_hamiltonian_apply(J, h, x.ravel(), diag), dtype=float
    )
    v0 = np.ones(2**d) / np.sqrt(2**d)
    w, V = sla.eigsh(op, k=1, which="SA", tol=tol, v0=v0, ncv=40)
    return float(w[0]), V[:, 0]


def quad_marginal_1d(potential_1d: Callable[[np.ndarray], np.ndarray], beta: float, basis: UnivariateBasis):
    """Normalized Boltzmann density ``exp(-beta V(x)) / Z`` on ``[-M, M]``.

    Returns a callable density; normalization uses the basis quadrature rule.
    """
    x, w = basis.nodes, basis.weights
    z = w @ np.exp(-beta * potential_1d(x))

    def density(t):
        t = np.asarray(t, dtype=float)
        return np.exp(-beta * potential_1d(t)) / z

    return density


def l2_on_grid(f: np.ndarray, basis: UnivariateBasis) -> float:
    return float(np.sqrt(basis.weights @ (np.abs(f) ** 2)))


def gl_transfer_marginal(
    d: int, lam: float, beta: float, M: float, mode: int, grid_order: int = 400
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact Ginzburg-Landau marginal of one site by transfer-operator quadrature.

    The Boltzmann density of the chain factorizes into nearest-neighbour
    terms, so the marginal of site ``mode`` is a product of left and right
    transfer-operator messages evaluated on a Gauss-Legendre grid on
    ``[-M, M]``.  Returns ``(nodes, weights, density)``.
    """
    from .basis import gauss_legendre

    x, w = gauss_legendre(grid_order, -M, M)
    hh = 1.0 / (d + 1)
    coup = lam / (2.0 * hh * hh)
    site = np.exp(-beta * (1.0 / (4.0 * lam)) * (1.0 - x**2) ** 2)
    K = np.exp(-beta * coup * (x[:, None] - x[None, :]) ** 2)
    boundary = np.exp(-beta * coup * x**2)  # coupling to U_0 = 0 and U_{d+1} = 0
    left = boundary * site
    for _ in range(mode):
        left = (K @ (w * left)) * site
        left /= left.max()
    right = boundary * site
    for _ in range(d - 1 - mode):
        right = (K @ (w * right)) * site
        right /= right.max()
    dens = left * right / site
    dens /= w @ dens
    return x, w, dens
