import dataclasses
import itertools

import numpy as np
import pytest

from bicgstab_mrhs import perfmodel as pm
from bicgstab_mrhs.solvers import Method, method_schedule

UNPREC = ["BiCGStab", "IBiCGStab", "PipeBiCGStab"]
PREC = ["PBiCGStab", "RBiCGStab", "PPipeBiCGStab"]


@pytest.fixture(scope="module")
def lom():
    return pm.load_machine("lomonosov")


@pytest.fixture(scope="module")
def lom2():
    return pm.load_machine("lomonosov2")


def test_t_vec(lom2):
    spec = pm.ProblemSpec(N=8_000_000, m=1, C=7.0)
    assert pm.t_vec(lom2, spec, 1) == pytest.approx(1.0667e-3, rel=1e-4)
    assert pm.t_vec(lom2, spec.with_m(2), 1) == pytest.approx(2 * pm.t_vec(lom2, spec, 1), rel=1e-15)
    assert pm.t_vec(lom2, spec, 2) == pytest.approx(pm.t_vec(lom2, spec, 1) / 2, rel=1e-15)


def test_sigma_mul():
    assert pm.sigma_mul(pm.ProblemSpec(N=1, m=1, C=1e-300)) == pytest.approx(12.0)
    assert pm.sigma_mul(pm.ProblemSpec(N=8_000_000, m=4, C=7.0)) == pytest.approx(2.752e9, rel=1e-12)


def test_t_mul(lom2):
    assert pm.t_mul(lom2, pm.ProblemSpec(N=8_000_000, m=1, C=7.0), 1) == pytest.approx(0.02027, rel=1e-3)


def test_t_local(lom):
    assert pm.t_local(lom, 0) == 2.4e-6
    assert pm.t_local(lom, 2048) == pytest.approx(2.4e-6 + 6.9e-8 * 2048**0.56, rel=1e-12)
    assert pm.t_local(lom, 2048) == pytest.approx(7.33e-6, rel=2e-3)
    assert pm.t_local(lom, 2049) == pytest.approx(7.30e-6, rel=2e-3)


def test_t_global(lom):
    assert pm.t_global(lom, 1, 8) == pytest.approx(6.13e-6, rel=2e-3)
    assert pm.t_global(lom, 128, 24) == pytest.approx(4.9e-5, rel=2e-2)
    flat = dataclasses.replace(lom, global_fit=pm.GlobalFit(c0=3e-6, c1=0.0))
    assert pm.t_global(flat, 77, 1234) == 3e-6


def test_t_spmv_branches(lom):
    big = pm.ProblemSpec(N=10**8, m=1, C=5.0, halo_bytes=8.0)
    assert pm.t_spmv(lom, big, 1) == pm.t_mul(lom, big, 1)
    tiny = pm.ProblemSpec(N=10, m=1, C=5.0, halo_bytes=8000.0)
    assert pm.t_spmv(lom, tiny, 1000) == pm.t_local(lom, 8000.0)
    spec = pm.ProblemSpec(N=10**6, m=1, C=5.0, halo_bytes=8000.0)
    mach = dataclasses.replace(lom, ram_bandwidth=34e9)
    tm = 10**6 * (8 * 6 + 4 * 16) / (34e9 * 100)
    assert pm.t_spmv(mach, spec, 100) == pytest.approx(max(tm, 3.2e-6 + 2e-9 * 8000), rel=1e-12)


def test_overlapped():
    assert pm.overlapped(3.0, 2.0, 1.0) == 5.0
    assert pm.overlapped(3.0, 2.0, 0.0) == 3.0
    assert pm.overlapped(10e-6, 4e-6, 0.5) == pytest.approx(12e-6)


def test_overlap_bounds():
    for tc, tg, g in itertools.product([0.0, 1e-6, 5e-5], [0.0, 2e-6, 1e-4], [0.0, 0.3, 1.0]):
        v = pm.overlapped(tc, tg, g)
        assert max(tc, tg) <= v <= tc + tg


def hand_estimate(mach, spec, method, p, gamma):
    # the six closed forms written out term by term
    tv, ts = pm.t_vec(mach, spec, p), pm.t_spmv(mach, spec, p)
    tp = spec.precond_alpha * tv
    tg = lambda k: mach.global_fit(p, 8 * spec.m * k)  # noqa: E731
    ov = lambda tc, t: max(tc + gamma * t, t)  # noqa: E731
    return {
        "BiCGStab": 18 * tv + 2 * ts + tg(3) + 2 * tg(1),
        "IBiCGStab": 20 * tv + 2 * ts + tg(7),
        "PipeBiCGStab": 26 * tv + ov(ts, tg(3)) + ov(ts, tg(4)),
        "PBiCGStab": 19 * tv + 2 * ts + 2 * tp + tg(3) + 2 * tg(1),
        "RBiCGStab": 21 * tv + 2 * ts + ov(tp, tg(1)) + ov(tp, tg(4)),
        "PPipeBiCGStab": 34 * tv + ov(ts + tp, tg(3)) + ov(ts + tp, tg(4)),
    }[method]


@pytest.mark.parametrize("method", UNPREC + PREC)
@pytest.mark.parametrize("p,gamma,m", [(1, 1.0, 1), (37, 0.5, 4), (512, 0.0, 16)])
def test_t_iteration_matches_closed_forms(lom, method, p, gamma, m):
    spec = pm.FIG5_PROBLEM.with_m(m).with_alpha(20.0)
    assert pm.t_iteration(lom, spec, method, p, gamma) == pytest.approx(
        hand_estimate(lom, spec, method, p, gamma), rel=1e-12)


def test_table5_first_entries(lom2):
    assert 0.057 <= pm.t_iteration(lom2, pm.TABLE5_PROBLEM, "BiCGStab", 1) <= 0.060
    assert 0.077 <= pm.t_iteration(lom2, pm.TABLE5_PROBLEM, "PPipeBiCGStab", 1) <= 0.082


def test_gamma_affects_only_reductions(lom):
    a = pm.iteration_terms(lom, pm.FIG5_PROBLEM, "PipeBiCGStab", 64, gamma=1.0)
    b = pm.iteration_terms(lom, pm.FIG5_PROBLEM, "PipeBiCGStab", 64, gamma=0.0)
    assert a["vec"] == b["vec"] and a["spmv"] == b["spmv"]
    assert a["reductions"] > b["reductions"]


def test_preconditioned_needs_alpha(lom):
    with pytest.raises(ValueError):
        pm.t_iteration(lom, pm.ProblemSpec(N=100, m=1, C=5.0), "PBiCGStab", 1)


def test_vec_coefficient_matches_solver_schedule(lom):
    spec = pm.ProblemSpec(N=1000, m=1, C=5.0, precond_alpha=2.0)
    for mt in Method:
        terms = pm.iteration_terms(lom, spec, mt, 1)
        assert terms["vec"] / pm.t_vec(lom, spec, 1) == pytest.approx(method_schedule(mt).vector_transfers)
    assert [method_schedule(mt).vector_transfers for mt in Method] == [18, 20, 26, 19, 21, 34]


def test_monotonicity(lom):
    rng = np.random.default_rng(0)
    for _ in range(40):
        mt = Method(rng.choice([m.value for m in Method]))
        p = int(rng.integers(1, 1025))
        spec = pm.ProblemSpec(N=int(rng.integers(10**3, 10**8)), m=1, C=float(rng.uniform(3, 27)),
                              halo_bytes=float(rng.uniform(0, 1e5)), precond_alpha=float(rng.integers(1, 50)))
        g = float(rng.uniform(0, 1))
        t = pm.t_iteration(lom, spec, mt, p, g)
        fast = dataclasses.replace(lom, ram_bandwidth=2 * lom.ram_bandwidth)
        assert pm.t_iteration(fast, spec, mt, p, g) <= t
        assert pm.t_iteration(lom, spec, mt, p, min(1.0, g + 0.2)) >= t
        assert pm.t_iteration(lom, spec.with_m(4), mt, p, g) >= t
        assert pm.t_iteration(lom, spec.with_alpha(spec.precond_alpha + 5), mt, p, g) >= t


def test_relative_performance_single_method(lom):
    r = pm.relative_performance(lom, pm.FIG5_PROBLEM, ["IBiCGStab"], [1, 10, 100])
    assert np.all(r[Method.IBICGSTAB] == 1.0)


def test_relative_performance_table(lom):
    ps = list(range(1, 200, 7))
    r = pm.relative_performance(lom, pm.FIG5_PROBLEM, UNPREC, ps, gamma=0.5)
    arr = np.vstack(list(r.values()))
    assert np.all((arr > 0) & (arr <= 1))
    assert np.all(arr.max(axis=0) == 1.0)
    times = {mt: [pm.t_iteration(lom, pm.FIG5_PROBLEM, mt, p, 0.5) for p in ps] for mt in r}
    for k in range(len(ps)):
        best = min(times, key=lambda mt: times[mt][k])
        assert r[best][k] == 1.0


def test_bicgstab_best_at_one_node(lom, lom2):
    for mach in (lom, lom2):
        for bw in ("ram", "llc"):
            r = pm.relative_performance(mach, pm.FIG5_PROBLEM, UNPREC, [1], 1.0, bw)
            assert r[Method.BICGSTAB][0] == 1.0


def test_ibicgstab_best_at_large_scale_without_overlap(lom):
    r = pm.relative_performance(lom, pm.FIG5_PROBLEM, UNPREC, [128, 256, 512, 1024], 1.0)
    assert np.all(r[Method.IBICGSTAB] == 1.0)


def test_crossover_exists_and_shifts_with_m(lom):
    ps = range(1, 1025)
    p1 = pm.crossover(lom, pm.FIG5_PROBLEM, "BiCGStab", "IBiCGStab", ps, 1.0)
    p4 = pm.crossover(lom, pm.FIG5_PROBLEM.with_m(4), "BiCGStab", "IBiCGStab", ps, 1.0)
    p16 = pm.crossover(lom, pm.FIG5_PROBLEM.with_m(16), "BiCGStab", "IBiCGStab", ps, 1.0)
    assert 2 <= p1 <= 128
    assert p1 <= p4 <= p16


def test_pipelined_wins_with_full_overlap(lom):
    ps = list(range(1, 1025))
    r = pm.relative_performance(lom, pm.FIG5_PROBLEM, UNPREC, ps, 0.0)
    wins = [p for p, v in zip(ps, r[Method.PIPEBICGSTAB]) if v == 1.0]
    assert wins and 1 < wins[0] < wins[-1]


def test_speedup():
    assert pm.speedup([4.0, 2.0, 1.0]).tolist() == [1.0, 2.0, 4.0]
    with pytest.raises(ValueError):
        pm.speedup([])


def test_speedup_ideal_scaling(lom):
    nocomm = dataclasses.replace(lom, global_fit=pm.GlobalFit(0, 0, 0, 0),
                                 local_fit=pm.LocalFit(0, 0, 0, 2048, 0, 0))
    ps = [1, 2, 8, 64]
    t = [pm.t_iteration(nocomm, pm.FIG5_PROBLEM, "BiCGStab", p) for p in ps]
    assert np.allclose(pm.speedup(t), ps, rtol=1e-12)


def test_relative_speedup_baseline(lom):
    r = pm.relative_speedup(lom, pm.FIG5_PROBLEM, UNPREC, [1, 16])
    assert r[Method.BICGSTAB][0] == 1.0
    rp = pm.relative_speedup(lom, pm.FIG5_PROBLEM, PREC, [1])
    assert rp[Method.PBICGSTAB][0] == 1.0


def test_breakeven():
    assert pm.breakeven_elements(20e-6, 1e11) == pytest.approx(2.5e5)
    assert pm.breakeven_elements(0.0, 1e11) == 0.0
    assert pm.breakeven_elements(20e-6, 2e11) == pytest.approx(2 * pm.breakeven_elements(20e-6, 1e11))


def test_halo_from_matrix():
    from bicgstab_mrhs.core import gen_poisson_5pt

    spec = pm.ProblemSpec.from_matrix(gen_poisson_5pt(50, 40), m=2)
    assert spec.halo_bytes == 8 * 2 * 50
    assert pm.FIG5_PROBLEM.halo_bytes == 8000.0
    assert pm.FIG5_PROBLEM.with_m(4).halo_bytes == 32000.0


def test_scan_rows_and_csv(lom, tmp_path):
    rows = pm.scan(lom, pm.FIG5_PROBLEM, UNPREC + PREC, [1, 8], gammas=[1.0, 0.0], alphas=[2, 20],
                   ms=[1, 4], bw_modes=["ram", "llc"])
    # unpreconditioned: 3 methods x 2 p x 2 gamma x 2 m x 2 bw; preconditioned doubles over alpha
    assert len(rows) == 3 * 2 * 2 * 2 * 2 + 3 * 2 * 2 * 2 * 2 * 2
    text = pm.write_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "method,p,gamma,alpha,m,bw_mode,T_seconds,R"
    assert len(lines) == len(rows) + 1 and text.splitlines() == lines
    groups = {}
    for r in rows:
        groups.setdefault((r.method in PREC, r.p, r.gamma, r.alpha, r.m, r.bw_mode), []).append(r.R)
    assert all(max(v) == 1.0 for v in groups.values())


def test_scan_single_row(lom):
    rows = pm.scan(lom, pm.FIG5_PROBLEM, ["BiCGStab"], [4], ms=[1], bw_modes=["ram"])
    assert len(rows) == 1 and rows[0].R == 1.0


def test_scan_empty_ranges(lom):
    with pytest.raises(ValueError):
        pm.scan(lom, pm.FIG5_PROBLEM, UNPREC, [])
    with pytest.raises(ValueError):
        pm.scan(lom, pm.FIG5_PROBLEM, [], [1])


def test_machine_roundtrip(lom, tmp_path):
    pm.save_machine(lom, tmp_path / "m.json")
    assert pm.load_machine(tmp_path / "m.json") == lom


def test_machine_validation():
    with pytest.raises(ValueError):
        pm.MachineModel("x", 1e9, 1e9, gamma=1.5)
    with pytest.raises(ValueError):
        pm.MachineModel("x", 1e9, 1e9, global_fit=pm.GlobalFit(c0=-1.0))
    with pytest.raises(ValueError):
        pm.MachineModel.from_dict({"name": "x", "ram_bandwidth": 1e9, "llc_bandwidth": 1e9, "colour": 1})
    with pytest.raises(FileNotFoundError):
        pm.load_machine("no-such-machine")


def test_presets_match_machine_table(lom, lom2):
    assert (lom.ram_bandwidth, lom.llc_bandwidth) == (16e9, 46e9)
    assert (lom2.ram_bandwidth, lom2.llc_bandwidth) == (60e9, 288e9)
    assert lom.global_fit == pm.GlobalFit(3.5e-6, 1.7e-6, 0.21, 0.54)
    assert lom.effective_bandwidth is not None
    assert lom.bandwidth("effective") == lom.effective_bandwidth
    assert lom2.bandwidth("effective") == lom2.ram_bandwidth


def test_effective_bandwidth_fit_recovers_synthetic(lom):
    truth = dataclasses.replace(lom, ram_bandwidth=27e9)
    obs = [(pm.TABLE5_PROBLEM.with_m(m), mt, pm.t_iteration(truth, pm.TABLE5_PROBLEM.with_m(m), mt, 1))
           for m in (1, 4) for mt in Method]
    assert pm.fit_bandwidth(lom, obs) == pytest.approx(27e9, rel=1e-6)
