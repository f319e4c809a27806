import numpy as np
import pytest

from bicgstab_mrhs.core import CsrMatrix, gen_poisson_5pt, gen_poisson_7pt
from bicgstab_mrhs.solvers import (
    BreakdownError,
    IdentityPreconditioner,
    Method,
    SyntheticPreconditioner,
    make_preconditioner,
    method_schedule,
    solve,
    verify_residual_identity,
)

ALL = list(Method)


def precond_for(method):
    return IdentityPreconditioner() if Method.parse(method).preconditioned else None


@pytest.fixture(scope="module")
def poisson10():
    a = gen_poisson_5pt(10, 10)
    b = np.random.default_rng(0).standard_normal((100, 4))
    return a, b, np.linalg.solve(a.to_dense(), b)


@pytest.mark.parametrize("method", ALL)
def test_identity_matrix_one_iteration(method):
    a = CsrMatrix.identity(9, 4.0)
    b = np.random.default_rng(1).standard_normal((9, 3))
    rep = solve(a, b, method=method, precond=precond_for(method))
    assert rep.iterations <= 1
    assert np.abs(rep.x - b / 4.0).max() <= 1e-15
    assert np.all(rep.true_residual <= 1e-14 * np.linalg.norm(b, axis=0))
    assert all(rep.converged_columns)


@pytest.mark.parametrize("formulation", ["basic", "merged"])
@pytest.mark.parametrize("method", ALL)
def test_dense_oracle(poisson10, method, formulation):
    a, b, x_ref = poisson10
    rep = solve(a, b, method=method, formulation=formulation, precond=precond_for(method), tol=1e-10)
    assert all(rep.converged_columns)
    assert np.abs(rep.x - x_ref).max() <= 1e-8
    assert len(rep.residual_history) == rep.iterations + 1


def test_cross_method_same_solution():
    a = gen_poisson_7pt(6, 5, 4)
    b = np.random.default_rng(4).standard_normal((a.n_rows, 2))
    x_ref = np.linalg.solve(a.to_dense(), b)
    for method in ALL:
        rep = solve(a, b, method=method, precond=precond_for(method), tol=1e-10)
        assert np.abs(rep.x - x_ref).max() <= 1e-6, method


@pytest.mark.parametrize("method", ALL)
def test_column_independence(method):
    a = gen_poisson_5pt(16, 12)
    b = np.random.default_rng(7).standard_normal((a.n_rows, 4))
    pc = precond_for(method)
    full = solve(a, b, method=method, precond=pc, mode="fixed", iters=12)
    for k in range(4):
        one = solve(a, b[:, k:k + 1], method=method, precond=pc, mode="fixed", iters=12)
        scale = np.abs(full.x[:, k])
        assert np.all(np.abs(one.x[:, 0] - full.x[:, k]) <= 4 * np.spacing(scale))
        hist = full.history_array()[:, k]
        assert np.all(np.abs(one.history_array()[:, 0] - hist) <= 4 * np.spacing(hist))


SCHEDULES = {
    "BiCGStab": (18, 2, 0, [(1, "none"), (1, "none"), (3, "none")]),
    "IBiCGStab": (20, 2, 0, [(7, "none")]),
    "PipeBiCGStab": (26, 2, 0, [(3, "spmv"), (4, "spmv")]),
    "PBiCGStab": (19, 2, 2, [(1, "none"), (1, "none"), (3, "none")]),
    "RBiCGStab": (21, 2, 2, [(1, "precond"), (4, "precond")]),
    "PPipeBiCGStab": (34, 2, 2, [(3, "spmv_and_precond"), (4, "spmv_and_precond")]),
}


@pytest.mark.parametrize("method", list(SCHEDULES))
def test_method_schedule(method):
    vec, n_spmv, n_prec, reds = SCHEDULES[method]
    s = method_schedule(method, "merged")
    assert s.vector_transfers == vec
    assert s.spmv_count == n_spmv and s.precond_count == n_prec
    assert sorted(s.reductions) == reds
    basic = method_schedule(method, "basic")
    assert sorted(basic.reductions) == reds


@pytest.mark.parametrize("m", [1, 3])
@pytest.mark.parametrize("method", ALL)
def test_traffic_matches_schedule(method, m):
    a = gen_poisson_5pt(20, 20)
    b = np.random.default_rng(2).standard_normal((a.n_rows, m))
    rep = solve(a, b, method=method, precond=precond_for(method), mode="fixed", iters=7)
    s = method_schedule(method, "merged")
    it = rep.iteration_traffic
    assert it.precond_applications == 7 * s.precond_count
    assert it.vector_transfers == 7 * s.vector_transfers + 2 * it.precond_applications
    assert it.spmv_calls == 7 * s.spmv_count
    assert [k for k, _ in it.reductions] == [k for k, _ in s.reductions] * 7
    assert all(cols == m for _, cols in it.reductions)


@pytest.mark.parametrize("method", ["PBiCGStab", "RBiCGStab", "PPipeBiCGStab"])
def test_synthetic_precond_bitwise_identity(method):
    a = gen_poisson_5pt(12, 12)
    b = np.random.default_rng(3).standard_normal((a.n_rows, 2))
    ref = solve(a, b, method=method, precond=IdentityPreconditioner(), mode="fixed", iters=15)
    for alpha in (2, 4, 6, 20):
        rep = solve(a, b, method=method, precond=SyntheticPreconditioner(alpha), mode="fixed", iters=15)
        assert np.array_equal(rep.x, ref.x)
        assert np.array_equal(rep.history_array(), ref.history_array())
        extra = (alpha - 2) * rep.traffic.precond_applications
        assert rep.traffic.vector_transfers == ref.traffic.vector_transfers + extra


def test_synthetic_factors_multiply_to_one():
    for alpha in range(2, 60, 2):
        assert np.prod(SyntheticPreconditioner(alpha).factors()) == 1.0
        assert len(SyntheticPreconditioner(alpha).factors()) == alpha // 2


def test_synthetic_rejects_odd_cost():
    with pytest.raises(ValueError):
        SyntheticPreconditioner(3)
    with pytest.raises(ValueError):
        make_preconditioner("synthetic")


def test_residual_identity_poisson32():
    a = gen_poisson_5pt(32, 32)
    b = np.random.default_rng(5).standard_normal((a.n_rows, 2))
    assert verify_residual_identity(a, b, iters=20) <= 1e-10
    assert verify_residual_identity(a, b, method="PBiCGStab", iters=20) <= 1e-10


def test_residual_identity_small_exact():
    a = CsrMatrix.from_dense(np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]))
    assert verify_residual_identity(a, np.array([[1.0], [2.0], [3.0]]), iters=2) <= 1e-14


def test_residual_identity_rejects_other_methods():
    with pytest.raises(ValueError):
        verify_residual_identity(gen_poisson_5pt(4, 4), np.ones((16, 1)), method="IBiCGStab")


def test_breakdown_reports_column():
    # (Ar, r) = 0 for a skew-symmetric A makes delta vanish in the first iteration
    a = CsrMatrix.from_dense(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    b = np.array([[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(BreakdownError) as exc:
        solve(a, b, method="BiCGStab")
    info = exc.value.info
    assert (info.iteration, info.column, info.scalar) == (1, 0, "delta")
    assert exc.value.report is not None and exc.value.report.breakdown == info


def test_zero_rhs_column_is_frozen():
    a = gen_poisson_5pt(6, 6)
    b = np.zeros((36, 2))
    b[:, 1] = 1.0
    rep = solve(a, b, method="IBiCGStab", tol=1e-10)
    assert rep.converged_columns == [True, True]
    assert np.all(rep.x[:, 0] == 0.0)


def test_absolute_tolerance():
    a = gen_poisson_5pt(8, 8)
    b = 1e3 * np.ones((64, 1))
    rep = solve(a, b, method="BiCGStab", tol=1e-6, tol_type="absolute")
    assert rep.converged_columns == [True]
    assert rep.residual_history[-1][0] < 1e-6


def test_converge_mode_respects_max_iters():
    a = gen_poisson_5pt(30, 30)
    rep = solve(a, np.ones((900, 1)), method="BiCGStab", tol=1e-14, iters=3)
    assert rep.iterations == 3 and rep.converged_columns == [False]


def test_fixed_mode_runs_exact_count():
    a = gen_poisson_5pt(8, 8)
    rep = solve(a, np.ones((64, 1)), method="PipeBiCGStab", mode="fixed", iters=40, tol=1e-12)
    assert rep.iterations == 40
    assert np.abs(rep.true_residual).max() < 1e-9


def test_precond_presence_checked():
    a = gen_poisson_5pt(4, 4)
    with pytest.raises(ValueError):
        solve(a, np.ones((16, 1)), method="PBiCGStab")
    with pytest.raises(ValueError):
        solve(a, np.ones((16, 1)), method="BiCGStab", precond=IdentityPreconditioner())


def test_shape_mismatch():
    a = gen_poisson_5pt(4, 4)
    with pytest.raises(ValueError):
        solve(a, np.ones((15, 1)))
    with pytest.raises(ValueError):
        solve(a, np.ones((16, 2)), x0=np.zeros((16, 1)))


def test_unknown_method_lists_valid_ids():
    with pytest.raises(ValueError, match="PPipeBiCGStab"):
        Method.parse("CG")


@pytest.mark.parametrize("method", ALL)
def test_formulation_equivalence(method):
    a = gen_poisson_5pt(64, 64)
    b = np.random.default_rng(9).standard_normal((a.n_rows, 1))
    pc = precond_for(method)
    hb = solve(a, b, method=method, formulation="basic", precond=pc, mode="fixed", iters=10).history_array()
    hm = solve(a, b, method=method, formulation="merged", precond=pc, mode="fixed", iters=10).history_array()
    assert np.all(np.abs(hb - hm) <= 1e-6 * np.abs(hm))


def test_nonzero_initial_guess():
    a = gen_poisson_5pt(10, 10)
    b = np.ones((100, 1))
    x_ref = np.linalg.solve(a.to_dense(), b)
    rep = solve(a, b, x0=x_ref + 1e-3, method="RBiCGStab", precond=IdentityPreconditioner(), tol=1e-12)
    assert np.abs(rep.x - x_ref).max() < 1e-9
