"""Tensor-train estimation from particles by sketching.

Notation (0-based).  Bond ``b`` (1 <= b <= d-1) separates modes ``< b`` from
modes ``>= b``.  The left sketch ``S_b`` is a separable function of the modes
``< b`` with index set ``Xi_b``; the right sketch ``T_b`` is a separable
function of the modes ``>= b`` with index set ``Gamma_b``.  For a particle
ensemble ``u = (1/N) sum_i f_i``::

    A_b[xi, g]       = sum_x S_b(x_<b, xi) u(x) T_b(x_>=b, g)
    B_k[xi, x_k, g]  = sum_x S_k(x_<k, xi) u(x) T_{k+1}(x_>k, g)

with ``|Xi_0| = |Gamma_d| = 1`` (constant sketches).  The cores solve
``B_k = A_k G_k``; truncated SVDs of the ``A_b`` both regularize the solve
and trim the bond dimensions.

Every sketch function is a product of one factor per mode.  Factors are
stored per mode as an array ``(P, q_j)`` over a global index set of size
``P``; ``left_active[b]`` / ``right_active[b]`` select the functions that
belong to bond ``b``.  For discrete modes ``q_j = n_j`` (factor values).  For
continuous modes the factor is a combination of the dictionary
``{1, b_1, ..., b_n}`` and ``q_j = n + 1``.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .basis import UnivariateBasis
from .tt_core import StructureError, TensorTrain


class SketchCollapseError(RuntimeError):
    """Every singular value at some bond fell below the threshold."""

    def __init__(self, bond: int, message: str):
        super().__init__(message)
        self.bond = bond


@dataclass(frozen=True)
class SketchFamily:
    kind: str
    dims: tuple[int, ...]
    left: tuple[np.ndarray, ...]
    right: tuple[np.ndarray, ...]
    left_active: tuple[np.ndarray, ...]
    right_active: tuple[np.ndarray, ...]
    basis: UnivariateBasis | None = None
    seed: int | None = None
    cluster: int | None = None

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def continuous(self) -> bool:
        return self.basis is not None

    def left_size(self, b: int) -> int:
        return len(self.left_active[b])

    def right_size(self, b: int) -> int:
        return len(self.right_active[b])

    def left_function(self, b: int, xi: int, points: np.ndarray) -> np.ndarray:
        """Evaluate ``S_b(., xi)`` at discrete or continuous points ``(m, d)``."""
        g = self.left_active[b][xi]
        out = np.ones(points.shape[0])
        for j in range(b):
            out = out * (self._dictionary(j, points[:, j]) @ self.left[j][g])
        return out

    def right_function(self, b: int, g: int, points: np.ndarray) -> np.ndarray:
        gg = self.right_active[b][g]
        out = np.ones(points.shape[0])
        for j in range(b, self.d):
            out = out * (self._dictionary(j, points[:, j]) @ self.right[j][gg])
        return out

    def _dictionary(self, j: int, y: np.ndarray) -> np.ndarray:
        """Dictionary values at points: one-hot rows (discrete) or ``[1, b(y)]``."""
        if self.basis is None:
            return np.eye(self.dims[j])[np.asarray(y, dtype=np.intp)]
        return np.concatenate([np.ones((len(y), 1)), self.basis(y)], axis=1)

    def coefficient_functionals(self, j: int, side: str) -> np.ndarray:
        """Factor matrices ``(P, n_j)`` acting on core coefficients.

        Discrete: the factor values themselves.  Continuous: entries
        ``int h_p(x) b_l(x) dx``.
        """
        fac = self.left[j] if side == "left" else self.right[j]
        if self.basis is None:
            return fac
        dictionary = np.concatenate([self.basis.integrals[None, :], self.basis.gram], axis=0)
        return fac @ dictionary

    def tested_matrix(self, j: int) -> np.ndarray:
        """Map from core coefficients to the free-mode entries of ``B_k``."""
        if self.basis is None:
            return np.eye(self.dims[j])
        return self.basis.gram


def _all_active(P: int, d: int) -> tuple[np.ndarray, ...]:
    act = [np.zeros(1, dtype=np.intp)] + [np.arange(P, dtype=np.intp)] * (d - 1)
    return tuple(act)


def make_random_sketch(
    dims: Sequence[int],
    size: int,
    seed: int | None = None,
    ones: bool = False,
) -> SketchFamily:
    """Random tensor sketch with i.i.d. standard normal per-mode factors.

    Left and right families both have ``size`` functions at every internal
    bond.  ``ones=True`` replaces every factor by 1 (used in tests).
    """
    if size < 1:
        raise ValueError("sketch size must be at least 1")
    dims = tuple(int(n) for n in dims)
    rng = np.random.default_rng(seed)
    if ones:
        left = tuple(np.ones((size, n)) for n in dims)
        right = tuple(np.ones((size, n)) for n in dims)
    else:
        left = tuple(rng.standard_normal((size, n)) for n in dims)
        right = tuple(rng.standard_normal((size, n)) for n in dims)
    d = len(dims)
    left_active = _all_active(size, d) + (np.arange(size, dtype=np.intp),)
    right_active = (np.zeros(1, dtype=np.intp),) + tuple(
        np.arange(size, dtype=np.intp) for _ in range(1, d)
    ) + (np.zeros(1, dtype=np.intp),)
    return SketchFamily(
        kind="random",
        dims=dims,
        left=left,
        right=right,
        left_active=left_active,
        right_active=right_active,
        seed=seed,
    )


def random_factor_tensor(sketch: SketchFamily, side: str = "left") -> np.ndarray:
    """Stack the per-mode factors as ``(d, size, n)`` (equal mode sizes only)."""
    fac = sketch.left if side == "left" else sketch.right
    return np.stack(fac)


def cluster_sizes(d: int, n: int, c: int) -> tuple[list[int], list[int]]:
    """``|Xi_b|`` and ``|Gamma_b|`` for b = 0..d of a c-cluster basis sketch."""
    xi = [1] + [comb(b, c) * n**c for b in range(1, d)] + [comb(d, c) * n**c]
    gamma = [comb(d, c) * n**c] + [comb(d - b, c) * n**c for b in range(1, d)] + [1]
    return xi, gamma


def make_cluster_sketch(basis: UnivariateBasis, c: int, dims: Sequence[int] | int) -> SketchFamily:
    """Cluster basis sketch: products of ``c`` basis functions on ``c`` distinct modes."""
    if c not in (1, 2):
        raise ValueError("cluster size must be 1 or 2")
    d = dims if isinstance(dims, int) else len(dims)
    n = basis.n
    if not isinstance(dims, int) and any(m != n for m in dims):
        raise StructureError("continuous mode sizes must equal the basis size")
    if c > d:
        raise StructureError(f"cluster size {c} exceeds the number of modes {d}")
    clusters = list(itertools.combinations(range(d), c))
    labels = list(itertools.product(range(n), repeat=c))
    P = len(clusters) * len(labels)
    fac = [np.zeros((P, n + 1)) for _ in range(d)]
    for f in fac:
        f[:, 0] = 1.0
    lo = np.empty(P, dtype=np.intp)  # smallest mode in the cluster
    hi = np.empty(P, dtype=np.intp)  # largest mode
    p = 0
    for modes in clusters:
        for ls in labels:
            for j, l in zip(modes, ls):
                fac[j][p, 0] = 0.0
                fac[j][p, 1 + l] = 1.0
            lo[p] = modes[0]
            hi[p] = modes[-1]
            p += 1
    fac = tuple(fac)
    left_active = [np.zeros(1, dtype=np.intp)]
    right_active = []
    for b in range(1, d):
        left_active.append(np.flatnonzero(hi < b))
    for b in range(0, d):
        right_active.append(np.flatnonzero(lo >= b) if b > 0 else np.zeros(1, dtype=np.intp))
    left_active.append(np.arange(P, dtype=np.intp))
    right_active.append(np.zeros(1, dtype=np.intp))
    return SketchFamily(
        kind="cluster",
        dims=(n,) * d,
        left=fac,
        right=fac,
        left_active=tuple(left_active),
        right_active=tuple(right_active),
        basis=basis,
        cluster=c,
    )


# ----------------------------------------------------------------------
# particle ensembles
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class DeltaEnsemble:
    """Point masses ``(1/N) sum_i delta(x - x^i)``; ``points`` is ``(N, d)``."""

    points: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]

    def shard(self, start: int, stop: int) -> "DeltaEnsemble":
        return DeltaEnsemble(self.points[start:stop])


@dataclass(frozen=True)
class TTEnsemble:
    """An arbitrary list of tensor-train particles."""

    tts: tuple[TensorTrain, ...]

    def __len__(self) -> int:
        return len(self.tts)

    def shard(self, start: int, stop: int) -> "TTEnsemble":
        return TTEnsemble(self.tts[start:stop])


@dataclass(frozen=True)
class DiagonalEnsemble:
    """Particles ``f_i = D_i base`` with site-diagonal rank-1 operators.

    ``diag[i, k, x]`` is the diagonal of the site-``k`` matrix of particle
    ``i``.  This is the form produced by Hubbard-Stratonovich propagators.
    """

    base: TensorTrain
    diag: np.ndarray

    def __len__(self) -> int:
        return self.diag.shape[0]

    def shard(self, start: int, stop: int) -> "DiagonalEnsemble":
        return DiagonalEnsemble(self.base, self.diag[start:stop])

    def particle(self, i: int) -> TensorTrain:
        return TensorTrain([c * self.diag[i, k][None, :, None] for k, c in enumerate(self.base.cores)])


# ----------------------------------------------------------------------
# moments
# ----------------------------------------------------------------------


@dataclass
class MomentPair:
    """``A`` is ``None`` for core 0, which has no left sketch."""

    A: np.ndarray | None
    B: np.ndarray


@dataclass
class Moments:
    """Sums of per-particle sketch contractions plus the particle count."""

    A_sum: list
    B_sum: list
    count: int

    def pairs(self) -> list[MomentPair]:
        out = []
        for k in range(len(self.B_sum)):
            A = None if self.A_sum[k] is None else self.A_sum[k] / self.count
            out.append(MomentPair(A, self.B_sum[k] / self.count))
        return out

    def merge(self, other: "Moments") -> "Moments":
        A = [None if a is None else a + b for a, b in zip(self.A_sum, other.A_sum)]
        B = [a + b for a, b in zip(self.B_sum, other.B_sum)]
        return Moments(A, B, self.count + other.count)

    @property
    def d(self) -> int:
        return len(self.B_sum)


def merge_moments(parts: Sequence[Moments]) -> Moments:
    if not parts:
        raise ValueError("nothing to merge")
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


def _delta_tables(sketch: SketchFamily, points: np.ndarray):
    """Prefix/suffix products of factor values at the points, and tested vectors."""
    d = sketch.d
    N = points.shape[0]
    left_vals = []
    right_vals = []
    tested = []
    for j in range(d):
        D = sketch._dictionary(j, points[:, j])  # (N, q)
        left_vals.append(D @ sketch.left[j].T)
        right_vals.append(D @ sketch.right[j].T)
        tested.append(D if sketch.basis is None else D[:, 1:])
    PL = [np.ones((N, sketch.left[0].shape[0]))]
    for j in range(d - 1):
        PL.append(PL[-1] * left_vals[j])
    PR = [None] * (d + 1)
    PR[d] = np.ones((N, sketch.right[0].shape[0]))
    for j in range(d - 1, 0, -1):
        PR[j] = PR[j + 1] * right_vals[j]
    return PL, PR, tested


def _accumulate_delta(ens: DeltaEnsemble, sketch: SketchFamily) -> Moments:
    d = sketch.d
    PL, PR, tested = _delta_tables(sketch, ens.points)
    A_sum = [None]
    B_sum = []
    for b in range(1, d):
        L = PL[b][:, sketch.left_active[b]]
        R = PR[b][:, sketch.right_active[b]]
        A_sum.append(L.T @ R)
    N = ens.points.shape[0]
    for k in range(d):
        L = PL[k][:, sketch.left_active[k]]
        R = PR[k + 1][:, sketch.right_active[k + 1]]
        e = tested[k]
        ER = (e[:, :, None] * R[:, None, :]).reshape(N, -1)
        B_sum.append((L.T @ ER).reshape(L.shape[1], e.shape[1], R.shape[1]))
    return Moments(A_sum, B_sum, N)


def _diag_messages(sketch: SketchFamily, cores: Sequence[np.ndarray], diag: np.ndarray | None):
    """Right messages ``R[b]`` of shape ``(N, r_b, P_R)`` for all bonds."""
    d = sketch.d
    N = 1 if diag is None else diag.shape[0]
    dtype = cores[0].dtype if diag is None else np.result_type(cores[0].dtype, diag.dtype)
    PRs = sketch.right[0].shape[0]
    R = [None] * (d + 1)
    R[d] = np.ones((N, 1, PRs), dtype=dtype)
    cur = np.ones((N, PRs, 1), dtype=dtype)  # (N, P, r) layout so each step is one GEMM
    for b in range(d - 1, 0, -1):
        G = cores[b]
        r0, n, r1 = G.shape
        Kr = sketch.coefficient_functionals(b, "right")  # (P, n)
        T = (cur.reshape(-1, r1) @ G.reshape(r0 * n, r1).T).reshape(N, PRs, r0, n)
        W = Kr[None] if diag is None else diag[:, b, None, :] * Kr[None]  # (N|1, P, n)
        cur = sum(T[..., x] * W[:, :, None, x] for x in range(n))
        R[b] = np.transpose(cur, (0, 2, 1))
    return R


def _accumulate_tt_batch(
    sketch: SketchFamily, cores: Sequence[np.ndarray], diag: np.ndarray | None
) -> Moments:
    """Moments of the particles ``diag[i] (.) base`` sharing the same base cores.

    ``diag=None`` means a single particle equal to the base.
    """
    d = sketch.d
    N = 1 if diag is None else diag.shape[0]
    R = _diag_messages(sketch, cores, diag)
    dtype = R[d].dtype
    PL = sketch.left[0].shape[0]
    L = np.ones((N, PL, 1), dtype=dtype)
    A_sum = [None]
    B_sum = []
    for k in range(d):
        G = cores[k]
        r0, n, r1 = G.shape
        actL = sketch.left_active[k]
        actR = sketch.right_active[k + 1]
        if k > 0:
            Lk = L[:, actL, :]
            Rk = R[k][:, :, sketch.right_active[k]]
            A_sum.append(
                np.transpose(Lk, (1, 0, 2)).reshape(len(actL), N * r0)
                @ Rk.reshape(N * r0, Rk.shape[2])
            )
        T = np.matmul(L, G.reshape(1, r0, n * r1)).reshape(N, PL, n, r1)
        Td = T if diag is None else T * diag[:, k, None, :, None]
        # B_k[xi, m, g] = sum_i sum_x E[m, x] Td[i, xi, x, beta] R[k+1][i, beta, g]
        E = sketch.tested_matrix(k)
        Tk = Td[:, actL]
        Rn = R[k + 1][:, :, actR]
        M = np.transpose(Tk, (1, 2, 0, 3)).reshape(len(actL) * n, N * r1)
        Bx = (M @ Rn.reshape(N * r1, len(actR))).reshape(len(actL), n, len(actR))
        B_sum.append(np.einsum("mx,axg->amg", E, Bx) if sketch.basis is not None else Bx)
        if k < d - 1:
            Kl = sketch.coefficient_functionals(k, "left")  # (P, n)
            L = np.einsum("ipxb,px->ipb", Td, Kl, optimize=True)
    return Moments(A_sum, B_sum, N)


def _iter_shards(n: int, shard_size: int):
    for start in range(0, n, shard_size):
        yield start, min(start + shard_size, n)


def _ordered_sum(fn, shards, threads: int = 1) -> list:
    """Sum ``fn(a, b)`` over shards, always adding in shard order.

    Shards are fixed by the particle count, and partial sums are combined
    in the same order whatever the thread count, so results are bitwise
    reproducible.
    """
    shards = list(shards)
    if threads > 1 and len(shards) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda ab: fn(*ab), shards))
    else:
        parts = [fn(a, b) for a, b in shards]
    total = parts[0]
    for p in parts[1:]:
        total = [x + y for x, y in zip(total, p)]
    return total


def accumulate_moments(ensemble, sketch: SketchFamily, shard_size: int = 256) -> Moments:
    """Sketch moments summed over the particles of ``ensemble``.

    The particles are processed in fixed-size shards whose partial sums are
    merged in order, so results do not depend on how shards are scheduled.
    """
    n = len(ensemble)
    if n == 0:
        raise ValueError("empty ensemble")
    parts = []
    if isinstance(ensemble, DeltaEnsemble):
        if ensemble.points.shape[1] != sketch.d:
            raise StructureError("particle dimension does not match the sketch")
        for a, b in _iter_shards(n, max(shard_size, 1024)):
            parts.append(_accumulate_delta(ensemble.shard(a, b), sketch))
    elif isinstance(ensemble, DiagonalEnsemble):
        if ensemble.base.dims != sketch.dims:
            raise StructureError("particle dims do not match the sketch")
        for a, b in _iter_shards(n, shard_size):
            parts.append(_accumulate_tt_batch(sketch, ensemble.base.cores, ensemble.diag[a:b]))
    elif isinstance(ensemble, TTEnsemble):
        for tt in ensemble.tts:
            if tt.dims != sketch.dims:
                raise StructureError("particle dims do not match the sketch")
            parts.append(_accumulate_tt_batch(sketch, tt.cores, None))
    elif isinstance(ensemble, TensorTrain):
        return accumulate_moments(TTEnsemble((ensemble,)), sketch)
    else:
        raise TypeError(f"unsupported ensemble type {type(ensemble).__name__}")
    return merge_moments(parts)


# ----------------------------------------------------------------------
# solving the core-determining equations
# ----------------------------------------------------------------------


@dataclass
class TrimReport:
    ranks: list[int]
    kept: list[np.ndarray] = field(default_factory=list)
    discarded: list[np.ndarray] = field(default_factory=list)
    threshold: float = 0.0


def _trim(A: np.ndarray, threshold: float, bond: int, max_rank: int | None):
    u, s, vh = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise SketchCollapseError(bond, f"sketch matrix at bond {bond} is zero")
    keep = int(np.count_nonzero(s >= threshold * s[0]))
    if keep == 0:
        raise SketchCollapseError(bond, f"no singular value above threshold at bond {bond}")
    if max_rank is not None:
        keep = min(keep, max_rank)
    return u[:, :keep], s[:keep], vh[:keep].conj().T, s[keep:]


def _solve_gram(gram: np.ndarray | None, core: np.ndarray) -> np.ndarray:
    """Convert tested entries of the free mode to basis coefficients."""
    if gram is None:
        return core
    r0, n, r1 = core.shape
    sol = np.linalg.solve(gram, np.moveaxis(core, 1, 0).reshape(n, r0 * r1))
    return np.moveaxis(sol.reshape(n, r0, r1), 0, 1)


def trim_bonds(moments: Sequence[MomentPair], svd_threshold: float, max_rank: int | None = None):
    """Truncated SVDs ``A_b = U S V^H`` for every bond b = 1..d-1."""
    out = []
    for b in range(1, len(moments)):
        out.append(_trim(moments[b].A, svd_threshold, b, max_rank))
    return out


def solve_cores(
    moments: Sequence[MomentPair] | Moments,
    svd_threshold: float,
    gram: np.ndarray | None = None,
    max_rank: int | None = None,
) -> tuple[TensorTrain, TrimReport]:
    """Solve ``B_k = A_k G_k`` and trim the bonds by truncated SVD projectors.

    Singular values of ``A_b`` below ``svd_threshold * sigma_max`` are
    dropped.  With ``A_b ~ U S V^H`` the trimmed cores are
    ``B_0 V_1``, ``S_k^{-1} U_k^H B_k V_{k+1}`` and ``S_{d-1}^{-1} U^H B_{d-1}``.
    ``gram`` converts tested continuous modes to basis coefficients.
    """
    if isinstance(moments, Moments):
        moments = moments.pairs()
    d = len(moments)
    for k in range(1, d):
        A, B = moments[k].A, moments[k].B
        if A.shape[0] != B.shape[0]:
            raise StructureError(f"A_{k} and B_{k} disagree on the left sketch size")
        if A.shape[1] != moments[k - 1].B.shape[2]:
            raise StructureError(f"A_{k} does not chain with B_{k - 1}")
    trims = trim_bonds(moments, svd_threshold, max_rank)
    report = TrimReport(ranks=[], threshold=svd_threshold)
    for u, s, v, rest in trims:
        report.ranks.append(len(s))
        report.kept.append(s)
        report.discarded.append(rest)
    cores = []
    for k in range(d):
        B = moments[k].B
        if k > 0:
            u, s, _, _ = trims[k - 1]
            B = np.tensordot(u.conj().T / s[:, None], B, axes=(1, 0))
        if k < d - 1:
            v = trims[k][2]
            B = np.tensordot(B, v, axes=(2, 0))
        cores.append(_solve_gram(gram, B))
    return TensorTrain(cores), report


# ----------------------------------------------------------------------
# projected fast path for point particles
# ----------------------------------------------------------------------


def _projected_delta(ens: DeltaEnsemble, sketch: SketchFamily, trims) -> list[np.ndarray]:
    """Unnormalized trimmed cores ``S^-1 U^H B_k V`` summed over ``ens``."""
    d = sketch.d
    PL, PR, tested = _delta_tables(sketch, ens.points)
    out = []
    for k in range(d):
        L = PL[k][:, sketch.left_active[k]]
        if k > 0:
            u, s, _, _ = trims[k - 1]
            L = L @ (u.conj() / s[None, :])
        R = PR[k + 1][:, sketch.right_active[k + 1]]
        if k < d - 1:
            R = R @ trims[k][2]
        out.append(np.einsum("ia,im,ib->amb", L, tested[k], R, optimize=True))
    return out


def _diag_left_messages(sketch: SketchFamily, cores, diag: np.ndarray):
    """Left messages ``L[k]`` of shape ``(N, P_L, r_k)`` for k = 0..d-1."""
    N = diag.shape[0]
    P = sketch.left[0].shape[0]
    L = [np.ones((N, P, 1), dtype=np.result_type(cores[0].dtype, diag.dtype))]
    for k in range(sketch.d - 1):
        G = cores[k]
        r0, n, r1 = G.shape
        T = (L[-1].reshape(-1, r0) @ G.reshape(r0, n * r1)).reshape(N, P, n, r1)
        W = diag[:, k, None, :] * sketch.coefficient_functionals(k, "left")[None]  # (N, P, n)
        L.append(sum(T[:, :, x] * W[:, :, x, None] for x in range(n)))
    return L


def _diag_A(sketch: SketchFamily, cores, diag: np.ndarray) -> list[np.ndarray]:
    d = sketch.d
    N = diag.shape[0]
    L = _diag_left_messages(sketch, cores, diag)
    R = _diag_messages(sketch, cores, diag)
    out = []
    for b in range(1, d):
        Lb = L[b][:, sketch.left_active[b]]
        Rb = R[b][:, :, sketch.right_active[b]]
        r = Lb.shape[2]
        out.append(np.transpose(Lb, (1, 0, 2)).reshape(-1, N * r) @ Rb.reshape(N * r, -1))
    return out


def _projected_diag(sketch: SketchFamily, cores, diag: np.ndarray, trims) -> list[np.ndarray]:
    """Trimmed cores ``S^-1 U^H B_k V`` accumulated without forming ``B_k``."""
    d = sketch.d
    N = diag.shape[0]
    L = _diag_left_messages(sketch, cores, diag)
    R = _diag_messages(sketch, cores, diag)
    out = []
    for k in range(d):
        G = cores[k]
        r0, n, r1 = G.shape
        Lk = L[k][:, sketch.left_active[k]]
        if k > 0:
            u, s, _, _ = trims[k - 1]
            Lk = np.einsum("ipa,pq->iqa", Lk, u.conj() / s[None, :], optimize=True)
        Rk = R[k + 1][:, :, sketch.right_active[k + 1]]
        if k < d - 1:
            Rk = Rk @ trims[k][2]
        q = Lk.shape[1]
        T = (Lk.reshape(-1, r0) @ G.reshape(r0, n * r1)).reshape(N, q, n, r1) * diag[:, k, None, :, None]
        M = np.transpose(T, (1, 2, 0, 3)).reshape(q * n, N * r1)
        core = (M @ Rk.reshape(N * r1, -1)).reshape(q, n, -1)
        if sketch.basis is not None:
            core = np.einsum("mx,axg->amg", sketch.tested_matrix(k), core)
        out.append(core)
    return out


def estimate_tt_from_particles(
    ensemble,
    sketch: SketchFamily,
    svd_threshold: float,
    max_rank: int | None = None,
    shard_size: int | None = None,
    threads: int = 1,
) -> tuple[TensorTrain, TrimReport]:
    """Accumulate moments and solve for a trimmed tensor train.

    Point and diagonal-propagator ensembles take a two-pass route: the
    ``A_b`` are accumulated first, and the second pass sketches directly
    against the trimmed left/right bases, so the full ``B_k`` are never
    formed.  The result equals ``solve_cores(accumulate_moments(...))`` up
    to rounding.
    """
    gram = sketch.basis.gram if sketch.basis is not None else None
    if isinstance(ensemble, DiagonalEnsemble):
        return _estimate_diag(ensemble, sketch, svd_threshold, max_rank, gram, shard_size or 512, threads)
    if not isinstance(ensemble, DeltaEnsemble):
        return solve_cores(accumulate_moments(ensemble, sketch), svd_threshold, gram, max_rank)
    n = len(ensemble)
    if n == 0:
        raise ValueError("empty ensemble")
    d = sketch.d
    shards = list(_iter_shards(n, shard_size or 4096))

    def a_part(a, b):
        PL, PR, _ = _delta_tables(sketch, ensemble.points[a:b])
        return [PL[bond][:, sketch.left_active[bond]].T @ PR[bond][:, sketch.right_active[bond]] for bond in range(1, d)]

    A_sum = _ordered_sum(a_part, shards, threads)
    pairs = [MomentPair(None, np.zeros((1, 1, 1)))] + [MomentPair(A / n, None) for A in A_sum]
    trims = trim_bonds(pairs, svd_threshold, max_rank)
    cores = _ordered_sum(lambda a, b: _projected_delta(ensemble.shard(a, b), sketch, trims), shards, threads)
    return TensorTrain([_solve_gram(gram, c / n) for c in cores]), _report(trims, svd_threshold)


def _report(trims, svd_threshold: float) -> TrimReport:
    report = TrimReport(ranks=[len(t[1]) for t in trims], threshold=svd_threshold)
    report.kept = [t[1] for t in trims]
    report.discarded = [t[3] for t in trims]
    return report


def _estimate_diag(ens: DiagonalEnsemble, sketch, svd_threshold, max_rank, gram, shard_size: int = 512, threads: int = 1):
    n = len(ens)
    if n == 0:
        raise ValueError("empty ensemble")
    if ens.base.dims != sketch.dims:
        raise StructureError("particle dims do not match the sketch")
    cores = ens.base.cores
    shards = list(_iter_shards(n, shard_size))
    A_sum = _ordered_sum(lambda a, b: _diag_A(sketch, cores, ens.diag[a:b]), shards, threads)
    pairs = [MomentPair(None, np.zeros((1, 1, 1)))] + [MomentPair(A / n, None) for A in A_sum]
    trims = trim_bonds(pairs, svd_threshold, max_rank)
    B = _ordered_sum(lambda a, b: _projected_diag(sketch, cores, ens.diag[a:b], trims), shards, threads)
    return TensorTrain([_solve_gram(gram, c / n) for c in B]), _report(trims, svd_threshold)
