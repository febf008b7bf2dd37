"""Acceptance suite: one criterion per test, one printed pass/fail line each.

Run with  pytest tests/test_acceptance.py -v -s  to see the lines as they go.
All tolerances are pinned here; nothing is calibrated at run time except the
measured grid error that criterion 7 reuses from criterion 3's corpus data.
"""

import math
import time

import numpy as np
import pytest

from constop import corpus, diagnostics, dual, oracle, solver
from constop.lattice import build_lattice
from constop.model import NEG_INF, make_problem
from conftest import wald_problem

N_CORPUS = 20
REL_GAP_TOL = 0.02          # criterion 3: relaxed-DP vs LP, relative
SANDWICH_TOL = 1e-9


def _report(criterion, ok, detail):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def _rel_gap(v, ref):
    return abs(v - ref) / max(abs(ref), 1e-12)


@pytest.fixture(scope="module")
def corpus_results():
    """Shared solves of the constrained corpus (criteria 3, 4 and 7)."""
    out = []
    for seed in range(N_CORPUS):
        prob = corpus.constrained_instance(seed)
        lat = build_lattice(prob, mode="tree")
        enum = oracle.enumerate_pure(prob, lat)
        lp = oracle.solve_lp(prob, lattice=lat)
        g65 = solver.BudgetGrid.for_problem(prob, points=65, lattice=lat)
        vt_p, pt_p = solver.solve(prob, grid=g65, mode=solver.PURE, lattice=lat)
        vt_r, pt_r = solver.solve(prob, grid=g65, mode=solver.RELAXED, lattice=lat)
        g129 = solver.BudgetGrid.for_problem(prob, points=129, lattice=lat)
        vt_r129, _ = solver.solve(prob, grid=g129, mode=solver.RELAXED, lattice=lat)
        out.append({
            "problem": prob,
            "lattice": lat,
            "enum": enum,
            "lp": lp,
            "pure65": vt_p.root_value,
            "relaxed65": vt_r.root_value,
            "relaxed129": vt_r129.root_value,
            "vt_r": vt_r,
            "pt_r": pt_r,
        })
    return out


def test_criterion_1_unconstrained_equivalence(put_problem):
    t0 = time.time()
    problems = [put_problem] + [corpus.unconstrained_instance(s) for s in range(20)]
    worst = 0.0
    for prob in problems:
        lat = build_lattice(prob)
        ref, _ = oracle.backward_induction(lat)
        vt, _ = solver.solve(prob, mode=solver.PURE, lattice=lat)
        worst = max(worst, abs(vt.root_value - ref))
    elapsed = time.time() - t0
    ok = worst <= 1e-12 and elapsed < 5.0
    _report(1, ok, f"max |DP - backward induction| = {worst:.2e} over "
                   f"{len(problems)} instances in {elapsed:.2f}s")


def test_criterion_2_wald_exactness():
    worst_lp = worst_dp = 0.0
    for z in (1.0, 2.0, 3.0):
        prob = wald_problem(z)
        lat = build_lattice(prob, mode="tree")
        lp = oracle.solve_lp(prob, lattice=lat)
        vt, _ = solver.solve(prob, mode=solver.RELAXED, lattice=lat)
        worst_lp = max(worst_lp, abs(lp.value - z))
        worst_dp = max(worst_dp, abs(vt.root_value - z))
    ok = worst_lp <= 1e-9 and worst_dp <= 1e-9
    _report(2, ok, f"max |LP - z| = {worst_lp:.2e}, max |relaxed DP - z| = "
                   f"{worst_dp:.2e} for z in (1, 2, 3)")


def test_criterion_3_strong_weak_probe(corpus_results):
    gaps65, gaps129 = [], []
    ok = True
    detail = []
    for r in corpus_results:
        lp = r["lp"].value
        scale = 0.02 * max(1.0, abs(lp))
        if not r["enum"] <= r["pure65"] + scale:
            ok = False
            detail.append(f"{r['problem'].name}: enum {r['enum']} > pure {r['pure65']}")
        if not r["pure65"] <= r["relaxed65"] + SANDWICH_TOL:
            ok = False
            detail.append(f"{r['problem'].name}: pure > relaxed")
        g65 = _rel_gap(r["relaxed65"], lp)
        g129 = _rel_gap(r["relaxed129"], lp)
        gaps65.append(g65)
        gaps129.append(g129)
        if g65 > REL_GAP_TOL:
            ok = False
            detail.append(f"{r['problem'].name}: 65-point gap {g65:.3%}")
    mean65 = float(np.mean(gaps65))
    mean129 = float(np.mean(gaps129))
    if mean129 > mean65 + 1e-12:
        ok = False
        detail.append(f"mean gap grew on refinement: {mean65:.2e} -> {mean129:.2e}")
    _report(3, ok, f"{N_CORPUS} instances: max gap65 = {max(gaps65):.2e}, "
                   f"mean gap 65/129 = {mean65:.2e}/{mean129:.2e}"
                   + ("; " + "; ".join(detail) if detail else ""))


def test_criterion_4_duality(corpus_results, gap_problem, wald3):
    violations = 0
    worst_strong = 0.0
    certs_ok = True
    cases = list(corpus_results) + [
        {"problem": p, "lattice": build_lattice(p, mode="tree"), "lp": oracle.solve_lp(p)}
        for p in (gap_problem, wald3)
    ]
    rng = np.random.default_rng(2024)
    for r in cases:
        prob, lat, lp = r["problem"], r["lattice"], r["lp"]
        if not lp.feasible:
            continue
        n_l = prob.constraints.n_inequality
        n_e = prob.constraints.n_equality
        lam = rng.uniform(0, 8, size=(128, n_l))
        for pos in range(n_l):
            if not math.isfinite(prob.root_budget.y[pos]):
                lam[:, pos] = 0.0
        eta = rng.uniform(-8, 8, size=(128, n_e))
        vals = dual.dual_values_batch(prob, lam, eta, lat)
        violations += int(np.sum(vals < lp.value - 1e-9))
        point = dual.DualPoint(lam=tuple(lp.lam), eta=tuple(lp.eta))
        worst_strong = max(worst_strong, abs(dual.dual_value(prob, point, lat) - lp.value))
        report = oracle.lp_certificates(lp, tol=1e-9, raise_on_fail=False)
        certs_ok &= report.passed
    ok = violations == 0 and worst_strong <= 1e-8 and certs_ok
    _report(4, ok, f"weak-duality violations = {violations}, "
                   f"max |dual(LP multipliers) - LP| = {worst_strong:.2e}, "
                   f"certificates at 1e-9: {'pass' if certs_ok else 'fail'}")


def test_criterion_5_mixture_identity(gap_problem):
    prob = make_problem(drift=0.0, diffusion=1.0, terminal={"family": "quadratic"},
                        running=0.2, n_steps=4, dt=0.5, x0=0.3)
    lat = build_lattice(prob, mode="tree")
    pay = diagnostics.total_reward_payoff(prob)
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        hz = [rng.uniform(0, 1, lat.n_nodes(k)) for k in range(lat.n_steps)]
        prof = diagnostics.StopRuleProfile.from_hazards(lat, hz)
        worst = max(worst, diagnostics.mixture_identity_check(prof, pay))
    glat = build_lattice(gap_problem, mode="tree")
    prof = diagnostics.StopRuleProfile(glat, [np.array([0.5])])
    min_gap, mix_err = diagnostics.level_cost_spread(
        prof, diagnostics.cost_payoff(gap_problem, 0), 0.5)
    ok = worst <= 1e-12 and min_gap > 10 * 1e-9 and mix_err <= 1e-12
    _report(5, ok, f"max residual over 100 rules = {worst:.2e}; non-mixing demo: "
                   f"per-level violation {min_gap:.3f} with mixture error {mix_err:.2e}")


def test_criterion_6_martingale_diagnostic():
    prob = make_problem(drift=0.0, diffusion=1.0, terminal=0.0,
                        n_steps=20, dt=0.05, x0=0.0)
    t0 = time.time()
    stats = diagnostics.martingale_check(prob, 0.0, 100_000, seed=7)
    faithful = diagnostics.martingale_passed(stats)
    corrupted = diagnostics.martingale_check(prob, 0.0, 100_000, seed=7,
                                             noise_drift=0.5)
    detected = not diagnostics.martingale_passed(corrupted)
    elapsed = time.time() - t0
    worst = max(abs(s.z) for s in stats if not s.skipped)
    ok = faithful and detected and elapsed < 30.0
    _report(6, ok, f"faithful worst |z| = {worst:.2f} (pass={faithful}), "
                   f"drift-injected detected = {detected}, {elapsed:.1f}s")


def test_criterion_7_dpp_consistency(corpus_results, put_problem):
    lat = build_lattice(put_problem, mode="tree")
    vt, pt = solver.solve(put_problem, mode=solver.PURE, lattice=lat)
    uncon = max(diagnostics.dpp_consistency_check(vt, pt, lat, k) for k in (1, 2))

    wald_worst = 0.0
    for z in (1.0, 2.0, 3.0):
        prob = wald_problem(z)
        wlat = build_lattice(prob, mode="tree")
        wvt, wpt = solver.solve(prob, mode=solver.RELAXED, lattice=wlat)
        for k in range(1, prob.n_steps + 1):
            wald_worst = max(wald_worst,
                             diagnostics.dpp_consistency_check(wvt, wpt, wlat, k))

    eps_grid = max(
        max(abs(r["relaxed65"] - r["lp"].value) for r in corpus_results), 1e-9
    )
    corpus_worst = 0.0
    for r in corpus_results:
        prob = r["problem"]
        for k in range(1, prob.n_steps + 1):
            corpus_worst = max(
                corpus_worst,
                diagnostics.dpp_consistency_check(r["vt_r"], r["pt_r"], r["lattice"], k),
            )
    ok = uncon == 0.0 and wald_worst <= 1e-9 and corpus_worst <= eps_grid
    _report(7, ok, f"residuals: unconstrained = {uncon:.1e}, Wald = {wald_worst:.1e}, "
                   f"corpus = {corpus_worst:.1e} (measured grid error {eps_grid:.1e})")


def test_criterion_8_gap_regression(gap_problem):
    lat = build_lattice(gap_problem, mode="tree")
    vp, _ = solver.solve(gap_problem, mode=solver.PURE, lattice=lat)
    vr, _ = solver.solve(gap_problem, mode=solver.RELAXED, lattice=lat)
    lp = oracle.solve_lp(gap_problem, lattice=lat)
    _, dual_min = dual.minimize_dual(gap_problem, lattice=lat,
                                     warm_starts=(dual.DualPoint(eta=tuple(lp.eta)),))
    ok = (
        vp.root_value == NEG_INF
        and vr.root_value == pytest.approx(0.5, abs=1e-12)
        and lp.value == pytest.approx(0.5, abs=1e-12)
        and dual_min == pytest.approx(0.5, abs=1e-9)
    )
    _report(8, ok, f"pure = {vp.root_value}, relaxed = {vr.root_value!r}, "
                   f"LP = {lp.value!r}, dual min = {dual_min!r}")
