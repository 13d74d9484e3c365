import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttsketch.basis import gaussian_kernel_basis
from ttsketch.oracle import densify
from ttsketch.sketch import (
    DeltaEnsemble,
    DiagonalEnsemble,
    SketchCollapseError,
    TTEnsemble,
    accumulate_moments,
    estimate_tt_from_particles,
    make_cluster_sketch,
    make_random_sketch,
    merge_moments,
    random_factor_tensor,
    solve_cores,
)
from ttsketch.tt_core import StructureError, TensorTrain, random_tt, tt_eval_many, zeros_tt


def all_points(dims):
    return np.array(list(np.ndindex(*dims)))


def dense_moments(tt, sketch):
    """A_b and B_k by brute-force summation over every index."""
    X = all_points(tt.dims)
    u = densify(tt).reshape(-1)
    d = tt.d
    S = [np.stack([sketch.left_function(b, i, X) for i in range(sketch.left_size(b))], 1) for b in range(d)]
    T = [np.stack([sketch.right_function(b, g, X) for g in range(sketch.right_size(b))], 1) for b in range(1, d + 1)]
    T = [None] + T
    A = [None] + [S[b].T @ (u[:, None] * T[b]) for b in range(1, d)]
    B = []
    for k in range(d):
        onehot = np.eye(tt.dims[k])[X[:, k]]
        B.append(np.einsum("ia,ix,ig->axg", S[k], onehot * u[:, None], T[k + 1]))
    return A, B


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b))


def test_random_sketch_shapes():
    sk = make_random_sketch([2] * 16, 60, seed=3)
    assert random_factor_tensor(sk).shape == (16, 60, 2)
    assert random_factor_tensor(sk, "right").shape == (16, 60, 2)
    assert sk.left_size(5) == 60 and sk.right_size(5) == 60


def test_random_sketch_is_deterministic():
    a = make_random_sketch([2, 3, 2], 7, seed=11)
    b = make_random_sketch([2, 3, 2], 7, seed=11)
    assert all(np.array_equal(x, y) for x, y in zip(a.left + a.right, b.left + b.right))
    c = make_random_sketch([2, 3, 2], 7, seed=12)
    assert not np.array_equal(a.left[0], c.left[0])


def test_random_sketch_size_must_be_positive():
    with pytest.raises(ValueError):
        make_random_sketch([2, 2], 0)


def test_ones_sketch_gives_mean_mass():
    rng = np.random.default_rng(0)
    pts = rng.integers(0, 3, size=(50, 4))
    sk = make_random_sketch([3] * 4, 1, ones=True)
    m = accumulate_moments(DeltaEnsemble(pts), sk).pairs()
    for b in range(1, 4):
        assert m[b].A.shape == (1, 1) and m[b].A[0, 0] == pytest.approx(1.0)


def test_single_delta_with_ones_sketch():
    y = np.array([[1, 0, 2]])
    sk = make_random_sketch([3] * 3, 1, ones=True)
    m = accumulate_moments(DeltaEnsemble(y), sk).pairs()
    for k in range(3):
        assert np.array_equal(m[k].B[0, :, 0], np.eye(3)[y[0, k]])
        if k:
            assert m[k].A[0, 0] == 1.0


@pytest.mark.parametrize(
    "c,n,d,expect_left,expect_right",
    [(1, 20, 10, {9: 180}, {1: 180}), (2, 3, 5, {4: 54}, {})],
)
def test_cluster_sizes(c, n, d, expect_left, expect_right):
    basis = gaussian_kernel_basis(n=n)
    sk = make_cluster_sketch(basis, c, d)
    for b, v in expect_left.items():
        assert sk.left_size(b) == v
    for b, v in expect_right.items():
        assert sk.right_size(b) == v


def test_cluster_too_large():
    with pytest.raises(StructureError):
        make_cluster_sketch(gaussian_kernel_basis(n=3), 2, 1)


def test_cluster_functions_are_separable_products():
    basis = gaussian_kernel_basis(n=4)
    sk = make_cluster_sketch(basis, 2, 4)
    x = np.random.default_rng(1).uniform(-2, 2, size=(5, 4))
    # every left function at bond 3 is b_l(x_i) b_m(x_j) for some i<j<3
    vals = np.stack([sk.left_function(3, i, x) for i in range(sk.left_size(3))], 1)
    B = basis(x.reshape(-1)).reshape(5, 4, 4)
    ref = []
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        for l in range(4):
            for m in range(4):
                ref.append(B[:, i, l] * B[:, j, m])
    assert np.allclose(vals, np.stack(ref, 1), rtol=1e-14, atol=0)


def test_exact_tt_moments_match_dense():
    rng = np.random.default_rng(2)
    tt = random_tt([2, 3, 2, 2, 3], 3, rng)
    sk = make_random_sketch(tt.dims, 5, seed=4)
    m = accumulate_moments(tt, sk).pairs()
    A, B = dense_moments(tt, sk)
    for k in range(tt.d):
        assert rel(m[k].B, B[k]) < 1e-12
        if k:
            assert rel(m[k].A, A[k]) < 1e-12


def test_delta_moments_match_tt_route():
    rng = np.random.default_rng(3)
    pts = rng.integers(0, 2, size=(30, 5))
    sk = make_random_sketch([2] * 5, 4, seed=5)
    m1 = accumulate_moments(DeltaEnsemble(pts), sk).pairs()
    tts = []
    for p in pts:
        tts.append(TensorTrain([np.eye(2)[x][None, :, None] for x in p]))
    m2 = accumulate_moments(TTEnsemble(tuple(tts)), sk).pairs()
    for a, b in zip(m1, m2):
        assert rel(a.B, b.B) < 1e-13
        if a.A is not None:
            assert rel(a.A, b.A) < 1e-13


def test_shard_merge_equals_single_pass():
    rng = np.random.default_rng(4)
    base = random_tt([2] * 6, 3, rng, complex_=True)
    diag = np.exp(1j * rng.standard_normal((200, 6, 2)))
    sk = make_random_sketch([2] * 6, 6, seed=1)
    ens = DiagonalEnsemble(base, diag)
    whole = accumulate_moments(ens, sk, shard_size=1000)
    parts = merge_moments([accumulate_moments(ens.shard(0, 70), sk), accumulate_moments(ens.shard(70, 200), sk)])
    for a, b in zip(whole.pairs(), parts.pairs()):
        assert np.abs(a.B - b.B).max() <= 1e-13 * np.abs(a.B).max()


def test_exact_recovery_rank2():
    rng = np.random.default_rng(5)
    tt = random_tt([3] * 6, 2, rng)
    sk = make_random_sketch(tt.dims, 8, seed=9)
    est, rep = solve_cores(accumulate_moments(tt, sk), 1e-10)
    probes = rng.integers(0, 3, size=(1000, 6))
    assert rel(tt_eval_many(est, probes), tt_eval_many(tt, probes)) < 1e-8
    assert est.bond_dims == tuple(rep.ranks) == (2,) * 5


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_property_exact_recovery(d, r, n, seed):
    rng = np.random.default_rng(seed)
    tt = random_tt([n] * d, r, rng)
    sk = make_random_sketch(tt.dims, 2 * r, seed=seed + 1)
    est, rep = solve_cores(accumulate_moments(tt, sk), 1e-12)
    probes = rng.integers(0, n, size=(1000, d))
    assert rel(tt_eval_many(est, probes), tt_eval_many(tt, probes)) < 1e-8
    # trim consistency
    assert list(est.bond_dims) == rep.ranks
    for b, (kept, dropped) in enumerate(zip(rep.kept, rep.discarded), start=1):
        assert kept.min() >= 1e-12 * kept[0]
        assert rep.ranks[b - 1] <= min(sk.left_size(b), sk.right_size(b))
        if dropped.size:
            assert dropped.max() < 1e-12 * kept[0]


def test_large_threshold_forces_rank1():
    tt = random_tt([2] * 5, 3, np.random.default_rng(6))
    sk = make_random_sketch(tt.dims, 6, seed=2)
    est, rep = solve_cores(accumulate_moments(tt, sk), 1.0)
    assert est.bond_dims == (1,) * 4
    assert rep.ranks == [1] * 4


def test_collapse_names_bond():
    sk = make_random_sketch([2] * 4, 3, seed=0)
    with pytest.raises(SketchCollapseError) as exc:
        solve_cores(accumulate_moments(zeros_tt([2] * 4), sk), 1e-3)
    assert exc.value.bond == 1
    assert "bond 1" in str(exc.value)


def test_empty_ensemble():
    sk = make_random_sketch([2] * 3, 2, seed=0)
    with pytest.raises(ValueError):
        accumulate_moments(DeltaEnsemble(np.zeros((0, 3), dtype=int)), sk)


def test_density_from_samples_tv():
    rng = np.random.default_rng(7)
    src = random_tt([3] * 4, 2, rng)
    src = TensorTrain([np.abs(c) for c in src.cores])
    p = densify(src).reshape(-1)
    p = p / p.sum()
    X = all_points(src.dims)
    pts = X[rng.choice(len(p), size=100_000, p=p)]
    sk = make_random_sketch(src.dims, 4, seed=3)
    est, _ = estimate_tt_from_particles(DeltaEnsemble(pts), sk, 1e-2)
    q = densify(est).reshape(-1).real
    q = q / q.sum()
    assert 0.5 * np.abs(p - q).sum() <= 2e-2


def test_single_particle_cluster_rank1():
    basis = gaussian_kernel_basis(n=20)
    sk = make_cluster_sketch(basis, 1, 3)
    y = np.array([[0.7, -1.2, 0.1]])
    est, rep = estimate_tt_from_particles(DeltaEnsemble(y), sk, 1e-8)
    assert est.bond_dims == (1, 1)
    grid = np.linspace(-2.5, 2.5, 501)
    for k in range(3):
        f = basis(grid) @ est.cores[k][0, :, 0]
        f = f * np.sign(f[np.abs(f).argmax()])
        assert abs(grid[f.argmax()] - y[0, k]) < 0.3


def test_moment_error_scales_inverse_sqrt_n():
    src = random_tt([2] * 4, 2, np.random.default_rng(8))
    src = TensorTrain([np.abs(c) for c in src.cores])
    p = densify(src).reshape(-1)
    p /= p.sum()
    X = all_points(src.dims)
    sk = make_random_sketch(src.dims, 3, seed=1)
    exact = accumulate_moments(src, sk).pairs()
    norm = densify(src).sum()
    A_true = exact[2].A / norm
    Ns = [250, 1000, 4000, 16000]
    errs = []
    for N in Ns:
        e = []
        for rep in range(40):
            rng = np.random.default_rng([N, rep])
            pts = X[rng.choice(len(p), size=N, p=p)]
            A = accumulate_moments(DeltaEnsemble(pts), sk).pairs()[2].A
            e.append(np.linalg.norm(A - A_true))
        errs.append(np.sqrt(np.mean(np.square(e))))
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_fast_paths_match_generic_solve():
    rng = np.random.default_rng(9)
    base = random_tt([2] * 6, 3, rng, complex_=True)
    diag = np.exp(1j * rng.standard_normal((300, 6, 2)))
    sk = make_random_sketch([2] * 6, 8, seed=4)
    ens = DiagonalEnsemble(base, diag)
    a, _ = estimate_tt_from_particles(ens, sk, 1e-6)
    b, _ = solve_cores(accumulate_moments(ens, sk), 1e-6)
    assert rel(densify(a), densify(b)) < 1e-10

    basis = gaussian_kernel_basis(n=8)
    csk = make_cluster_sketch(basis, 1, 4)
    pts = rng.normal(size=(500, 4)).clip(-2.4, 2.4)
    a, _ = estimate_tt_from_particles(DeltaEnsemble(pts), csk, 1e-4, shard_size=128)
    b, _ = solve_cores(accumulate_moments(DeltaEnsemble(pts), csk), 1e-4, basis.gram)
    assert rel(densify(a), densify(b)) < 1e-10


def test_thread_count_does_not_change_result():
    rng = np.random.default_rng(10)
    base = random_tt([2] * 8, 4, rng, complex_=True)
    diag = np.exp(1j * rng.standard_normal((2000, 8, 2)))
    sk = make_random_sketch([2] * 8, 10, seed=2)
    ens = DiagonalEnsemble(base, diag)
    a, _ = estimate_tt_from_particles(ens, sk, 1e-3, threads=1)
    b, _ = estimate_tt_from_particles(ens, sk, 1e-3, threads=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.cores, b.cores))


def test_particle_dims_must_match_sketch():
    sk = make_random_sketch([2] * 3, 2, seed=0)
    with pytest.raises(StructureError):
        accumulate_moments(random_tt([2, 2, 3], 1, np.random.default_rng(0)), sk)
