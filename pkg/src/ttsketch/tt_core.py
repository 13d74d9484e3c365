"""Tensor-train (MPS) and matrix-product-operator algebra.

Core ``k`` of a :class:`TensorTrain` has shape ``(r_{k-1}, n_k, r_k)`` with
``r_0 = r_d = 1``; an MPO core has shape ``(r_{k-1}, n_k, n'_k, r_k)`` where
``n'_k`` is the input (column) dimension.  All operations are pure functions
returning new objects; cores are stored read-only.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike


class StructureError(ValueError):
    """Mismatched dimensions or ranks between cores or operands."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _result_dtype(*arrays) -> np.dtype:
    return np.result_type(*[np.asarray(a).dtype for a in arrays], np.float64)


class TensorTrain:
    """A d-way tensor stored as a chain of 3-way cores.

    For continuous tensor trains the middle index of each core runs over
    basis-function coefficients; see :class:`ttsketch.basis.UnivariateBasis`.
    """

    __slots__ = ("_cores",)

    def __init__(self, cores: Sequence[ArrayLike]):
        cores = [np.asarray(c) for c in cores]
        if len(cores) == 0:
            raise StructureError("a tensor train needs at least one core")
        dtype = _result_dtype(*cores)
        checked = []
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise StructureError(f"core {k} has ndim {c.ndim}, expected 3")
            if min(c.shape) == 0:
                raise StructureError(f"core {k} has an empty extent {c.shape}")
            checked.append(_freeze(c.astype(dtype, copy=False)))
        if checked[0].shape[0] != 1 or checked[-1].shape[2] != 1:
            raise StructureError("boundary ranks must be 1")
        for k in range(len(checked) - 1):
            if checked[k].shape[2] != checked[k + 1].shape[0]:
                raise StructureError(
                    f"rank mismatch between core {k} ({checked[k].shape}) "
                    f"and core {k + 1} ({checked[k + 1].shape})"
                )
        self._cores = tuple(checked)

    @property
    def cores(self) -> tuple[np.ndarray, ...]:
        return self._cores

    @property
    def d(self) -> int:
        return len(self._cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self._cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """All d + 1 ranks, including the boundary ones."""
        return (1,) + tuple(c.shape[2] for c in self._cores)

    @property
    def bond_dims(self) -> tuple[int, ...]:
        """The d - 1 internal ranks."""
        return self.ranks[1:-1]

    @property
    def dtype(self) -> np.dtype:
        return self._cores[0].dtype

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self._cores[0])

    def astype(self, dtype) -> "TensorTrain":
        return TensorTrain([c.astype(dtype) for c in self._cores])

    def __len__(self) -> int:
        return self.d

    def __repr__(self) -> str:
        return f"TensorTrain(dims={self.dims}, ranks={self.ranks}, dtype={self.dtype})"


class MatrixProductOperator:
    """A chain of 4-way cores ``(r_{k-1}, n_k, n'_k, r_k)``."""

    __slots__ = ("_cores",)

    def __init__(self, cores: Sequence[ArrayLike]):
        cores = [np.asarray(c) for c in cores]
        if len(cores) == 0:
            raise StructureError("an MPO needs at least one core")
        dtype = _result_dtype(*cores)
        checked = []
        for k, c in enumerate(cores):
            if c.ndim != 4:
                raise StructureError(f"MPO core {k} has ndim {c.ndim}, expected 4")
            if min(c.shape) == 0:
                raise StructureError(f"MPO core {k} has an empty extent {c.shape}")
            checked.append(_freeze(c.astype(dtype, copy=False)))
        if checked[0].shape[0] != 1 or checked[-1].shape[3] != 1:
            raise StructureError("boundary ranks must be 1")
        for k in range(len(checked) - 1):
            if checked[k].shape[3] != checked[k + 1].shape[0]:
                raise StructureError(f"MPO rank mismatch between cores {k} and {k + 1}")
        self._cores = tuple(checked)

    @classmethod
    def from_site_matrices(cls, mats: Iterable[ArrayLike]) -> "MatrixProductOperator":
        """Rank-1 MPO acting as ``mats[k]`` on site ``k``."""
        return cls([np.asarray(m)[None, :, :, None] for m in mats])

    @classmethod
    def identity(cls, dims: Sequence[int], dtype=np.float64) -> "MatrixProductOperator":
        return cls.from_site_matrices(np.eye(n, dtype=dtype) for n in dims)

    @property
    def cores(self) -> tuple[np.ndarray, ...]:
        return self._cores

    @property
    def d(self) -> int:
        return len(self._cores)

    @property
    def row_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self._cores)

    @property
    def col_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self._cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[3] for c in self._cores)

    def __repr__(self) -> str:
        return f"MatrixProductOperator(dims={self.row_dims}x{self.col_dims}, ranks={self.ranks})"


# ----------------------------------------------------------------------
# constructors
# ----------------------------------------------------------------------


def rank1_tt(vectors: Sequence[ArrayLike]) -> TensorTrain:
    """Separable tensor ``v_1(x_1) v_2(x_2) ... v_d(x_d)``."""
    return TensorTrain([np.asarray(v)[None, :, None] for v in vectors])


def ones_tt(dims: Sequence[int], dtype=np.float64) -> TensorTrain:
    return rank1_tt([np.ones(n, dtype=dtype) for n in dims])


def zeros_tt(dims: Sequence[int], dtype=np.float64) -> TensorTrain:
    return rank1_tt([np.zeros(n, dtype=dtype) for n in dims])


def random_tt(
    dims: Sequence[int],
    rank: int | Sequence[int],
    rng: np.random.Generator,
    complex_: bool = False,
) -> TensorTrain:
    """Tensor train with i.i.d. standard normal core entries.

    ``rank`` is either a single bond dimension or the d - 1 internal ranks.
    Ranks are not capped by the unfolding sizes.
    """
    d = len(dims)
    if np.isscalar(rank):
        inner = [int(rank)] * (d - 1)
    else:
        inner = [int(r) for r in rank]
        if len(inner) != d - 1:
            raise StructureError(f"expected {d - 1} internal ranks, got {len(inner)}")
    r = [1] + inner + [1]
    cores = []
    for k, n in enumerate(dims):
        shape = (r[k], n, r[k + 1])
        c = rng.standard_normal(shape)
        if complex_:
            c = c + 1j * rng.standard_normal(shape)
        cores.append(c)
    return TensorTrain(cores)


# ----------------------------------------------------------------------
# evaluation and linear algebra
# ----------------------------------------------------------------------


def _check_same_dims(a: TensorTrain, b: TensorTrain) -> None:
    if a.dims != b.dims:
        raise StructureError(f"dims mismatch: {a.dims} vs {b.dims}")


def tt_eval(tt: TensorTrain, idx: Sequence[int]):
    """Value of the tensor at one multi-index."""
    if len(idx) != tt.d:
        raise StructureError(f"index of length {len(idx)} for a {tt.d}-way tensor train")
    v = np.ones((1,), dtype=tt.dtype)
    for k, (c, i) in enumerate(zip(tt.cores, idx)):
        if not 0 <= i < c.shape[1]:
            raise IndexError(f"index {i} out of range for mode {k} of size {c.shape[1]}")
        v = v @ c[:, i, :]
    return v[0]


def tt_eval_many(tt: TensorTrain, idx: ArrayLike) -> np.ndarray:
    """Vectorized :func:`tt_eval` for an ``(m, d)`` integer array."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 2 or idx.shape[1] != tt.d:
        raise StructureError(f"expected index array of shape (m, {tt.d}), got {idx.shape}")
    v = np.ones((idx.shape[0], 1), dtype=tt.dtype)
    for k, c in enumerate(tt.cores):
        v = np.einsum("ma,amb->mb", v, c[:, idx[:, k], :])
    return v[:, 0]


def tt_scale(tt: TensorTrain, alpha) -> TensorTrain:
    cores = list(tt.cores)
    cores[0] = cores[0] * alpha
    return TensorTrain(cores)


def tt_add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Exact sum; internal ranks add."""
    _check_same_dims(a, b)
    dtype = _result_dtype(a.cores[0], b.cores[0])
    d = a.d
    if d == 1:
        return TensorTrain([a.cores[0] + b.cores[0]])
    cores = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        ra0, n, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        if k == 0:
            c = np.concatenate([ca, cb], axis=2).astype(dtype, copy=False)
        elif k == d - 1:
            c = np.concatenate([ca, cb], axis=0).astype(dtype, copy=False)
        else:
            c = np.zeros((ra0 + rb0, n, ra1 + rb1), dtype=dtype)
            c[:ra0, :, :ra1] = ca
            c[ra0:, :, ra1:] = cb
        cores.append(c)
    return TensorTrain(cores)


def tt_sum(tts: Sequence[TensorTrain]) -> TensorTrain:
    """Sum of many tensor trains by block-diagonal stacking in one pass."""
    if len(tts) == 0:
        raise ValueError("empty sum")
    if len(tts) == 1:
        return tts[0]
    for t in tts[1:]:
        _check_same_dims(tts[0], t)
    d = tts[0].d
    dtype = _result_dtype(*[t.cores[0] for t in tts])
    if d == 1:
        return TensorTrain([sum(t.cores[0] for t in tts)])
    cores = []
    for k in range(d):
        blocks = [t.cores[k] for t in tts]
        if k == 0:
            cores.append(np.concatenate(blocks, axis=2).astype(dtype, copy=False))
        elif k == d - 1:
            cores.append(np.concatenate(blocks, axis=0).astype(dtype, copy=False))
        else:
            r0 = sum(b.shape[0] for b in blocks)
            r1 = sum(b.shape[2] for b in blocks)
            c = np.zeros((r0, blocks[0].shape[1], r1), dtype=dtype)
            i0 = i1 = 0
            for blk in blocks:
                c[i0 : i0 + blk.shape[0], :, i1 : i1 + blk.shape[2]] = blk
                i0 += blk.shape[0]
                i1 += blk.shape[2]
            cores.append(c)
    return TensorTrain(cores)


def tt_hadamard(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Pointwise product; ranks multiply."""
    _check_same_dims(a, b)
    cores = []
    for ca, cb in zip(a.cores, b.cores):
        ra0, n, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        c = np.einsum("anb,cnd->acnbd", ca, cb).reshape(ra0 * rb0, n, ra1 * rb1)
        cores.append(c)
    return TensorTrain(cores)


def tt_marginalize(
    tt: TensorTrain,
    modes: Iterable[int],
    weights: dict[int, ArrayLike] | Sequence[ArrayLike] | None = None,
):
    """Sum (or integrate) out the given modes.

    ``weights`` maps a mode to its summation weights; missing modes use
    all-ones weights.  For continuous tensor trains pass the basis
    integrals.  Returns a :class:`TensorTrain` over the remaining modes, or a
    0-dimensional scalar when every mode is removed.
    """
    modes = sorted(set(int(m) for m in modes))
    for m in modes:
        if not 0 <= m < tt.d:
            raise StructureError(f"mode {m} out of range for d={tt.d}")
    if not modes:
        return tt

    def w_of(k: int) -> np.ndarray:
        if weights is None:
            return np.ones(tt.dims[k])
        if isinstance(weights, dict):
            w = weights.get(k)
        else:
            w = weights[k]
        return np.ones(tt.dims[k]) if w is None else np.asarray(w)

    kept: list[np.ndarray] = []
    pending: np.ndarray | None = None  # matrix to absorb into the next kept core
    sel = set(modes)
    for k, c in enumerate(tt.cores):
        if k in sel:
            mat = np.einsum("anb,n->ab", c, w_of(k))
            pending = mat if pending is None else pending @ mat
        else:
            if pending is not None:
                c = np.einsum("ab,bnc->anc", pending, c)
                pending = None
            kept.append(c)
    if not kept:
        return np.asarray(pending[0, 0])
    if pending is not None:
        kept[-1] = np.einsum("anb,bc->anc", kept[-1], pending)
    return TensorTrain(kept)


def tt_full_sum(tt: TensorTrain, weights=None):
    """Weighted sum over every index."""
    return tt_marginalize(tt, range(tt.d), weights)[()]


def tt_inner(a: TensorTrain, b: TensorTrain):
    """``sum_x conj(a(x)) b(x)``, contracted left to right."""
    _check_same_dims(a, b)
    env = np.ones((1, 1), dtype=_result_dtype(a.cores[0], b.cores[0]))
    for ca, cb in zip(a.cores, b.cores):
        # env[a, b] -> env'[a', b']
        t = np.tensordot(env, cb, axes=(1, 0))  # (ra, n, rb')
        env = np.tensordot(ca.conj(), t, axes=([0, 1], [0, 1]))
    return env[0, 0]


def tt_norm2(tt: TensorTrain) -> float:
    """Euclidean (Frobenius) norm ``sqrt(sum_x |u(x)|^2)``."""
    val = tt_inner(tt, tt)
    return float(np.sqrt(max(np.real(val), 0.0)))


def mpo_apply(op: MatrixProductOperator, tt: TensorTrain) -> TensorTrain:
    """Matrix-vector product; ranks multiply."""
    if op.col_dims != tt.dims:
        raise StructureError(f"MPO column dims {op.col_dims} do not match TT dims {tt.dims}")
    cores = []
    for o, g in zip(op.cores, tt.cores):
        ro0, n, _, ro1 = o.shape
        rg0, _, rg1 = g.shape
        c = np.einsum("axyb,cyd->acxbd", o, g).reshape(ro0 * rg0, n, ro1 * rg1)
        cores.append(c)
    return TensorTrain(cores)


def apply_site_matrices(mats: Sequence[ArrayLike], tt: TensorTrain) -> TensorTrain:
    """Apply a rank-1 operator given by its site matrices; ranks unchanged."""
    if len(mats) != tt.d:
        raise StructureError(f"{len(mats)} site matrices for a {tt.d}-way tensor train")
    return TensorTrain([np.einsum("xy,ayb->axb", np.asarray(m), g) for m, g in zip(mats, tt.cores)])


# ----------------------------------------------------------------------
# orthogonalization and rounding
# ----------------------------------------------------------------------


def right_orthogonalize(tt: TensorTrain) -> list[np.ndarray]:
    """Cores with cores 1..d-1 right-orthogonal; the norm sits in core 0."""
    cores = [np.array(c) for c in tt.cores]
    for k in range(tt.d - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
        # q: (n r1, m), r: (m, r0)
        m = q.shape[1]
        cores[k] = q.T.reshape(m, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=(2, 0))
    return cores


def _truncation_rank(s: np.ndarray, delta: float, max_rank: int | None) -> int:
    """Smallest rank whose discarded tail has 2-norm at most ``delta``."""
    if s.size == 0:
        return 0
    tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]  # tail[j] = ||s[j:]||
    rank = s.size
    for j in range(s.size):
        if tail[j] <= delta:
            rank = j
            break
    rank = max(rank, 1)
    if max_rank is not None:
        rank = min(rank, max_rank)
    return rank


def tt_round(tt: TensorTrain, tol: float = 1e-12, max_rank: int | None = None) -> TensorTrain:
    """SVD-based rounding with relative 2-norm error at most ``tol``.

    The error budget ``tol * ||tt||`` is split evenly as ``tol/sqrt(d-1)``
    per bond.  When ``max_rank`` binds, the error bound no longer holds.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    d = tt.d
    if d == 1:
        return tt
    cores = right_orthogonalize(tt)
    nrm = np.linalg.norm(cores[0])
    delta = tol * nrm / np.sqrt(d - 1)
    for k in range(d - 1):
        r0, n, r1 = cores[k].shape
        u, s, vh = np.linalg.svd(cores[k].reshape(r0 * n, r1), full_matrices=False)
        rk = _truncation_rank(s, delta, max_rank)
        cores[k] = u[:, :rk].reshape(r0, n, rk)
        cores[k + 1] = np.tensordot(s[:rk, None] * vh[:rk], cores[k + 1], axes=(1, 0))
    return TensorTrain(cores)


def tt_normalize(tt: TensorTrain) -> TensorTrain:
    nrm = tt_norm2(tt)
    if nrm == 0:
        raise ZeroDivisionError("cannot normalize a zero tensor train")
    return tt_scale(tt, 1.0 / nrm)


def tt_from_dense(tensor: ArrayLike, tol: float = 1e-12, max_rank: int | None = None) -> TensorTrain:
    """TT-SVD of a full array with the same per-bond error budget as :func:`tt_round`."""
    a = np.asarray(tensor)
    if a.ndim == 0 or 0 in a.shape:
        raise StructureError("cannot decompose an empty or 0-dimensional array")
    dims = a.shape
    d = len(dims)
    delta = tol * np.linalg.norm(a) / np.sqrt(max(d - 1, 1))
    cores = []
    r = 1
    rest = a.reshape(1, -1)
    for k in range(d - 1):
        u, s, vh = np.linalg.svd(rest.reshape(r * dims[k], -1), full_matrices=False)
        rk = _truncation_rank(s, delta, max_rank)
        cores.append(u[:, :rk].reshape(r, dims[k], rk))
        rest = s[:rk, None] * vh[:rk]
        r = rk
    cores.append(rest.reshape(r, dims[-1], 1))
    return TensorTrain(cores)
