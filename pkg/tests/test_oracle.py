import numpy as np
import pytest

from constop import corpus, oracle
from constop.lattice import build_lattice
from constop.model import NEG_INF, make_problem
from conftest import wald_problem


class TestBackwardInduction:
    def test_two_step_put(self, put_problem):
        lat = build_lattice(put_problem, mode="tree")
        value, slices = oracle.backward_induction(lat)
        assert value == 0.5
        # hand recursion: stop values at step 1 are (1, 0); continuation ties
        assert list(slices[1]) == [1.0, 0.0]

    def test_agrees_between_layouts(self, put_problem):
        v_tree, _ = oracle.backward_induction(build_lattice(put_problem, mode="tree"))
        v_rec, _ = oracle.backward_induction(build_lattice(put_problem))
        assert v_tree == pytest.approx(v_rec, abs=1e-12)


class TestEnumeratePure:
    def test_unconstrained_put(self, put_problem):
        assert oracle.enumerate_pure(put_problem) == 0.5

    def test_gap_instance_infeasible(self, gap_problem):
        assert oracle.enumerate_pure(gap_problem) == NEG_INF

    def test_wald_integer_budget(self, wald3):
        # stopping everywhere at step 3 gives expected duration 3 exactly
        assert oracle.enumerate_pure(wald3) == pytest.approx(3.0, abs=1e-12)

    def test_cap_enforced(self):
        prob = make_problem(drift=0.0, diffusion=1.0, terminal=0.0, n_steps=6,
                            control_set=(0.0, 1.0))
        with pytest.raises(oracle.EnumerationCapError):
            oracle.enumerate_pure(prob, cap=1000)

    def test_never_exceeds_lp(self):
        for seed in range(6):
            prob = corpus.constrained_instance(seed)
            lat = build_lattice(prob, mode="tree")
            enum = oracle.enumerate_pure(prob, lat)
            lp = oracle.solve_lp(prob, lattice=lat).value
            assert enum <= lp + 1e-9


class TestSolveLp:
    def test_gap_instance(self, gap_problem):
        sol = oracle.solve_lp(gap_problem)
        assert sol.value == pytest.approx(0.5, abs=1e-12)
        assert sol.achieved[0] == pytest.approx(0.5, abs=1e-12)
        assert sol.eta[0] == pytest.approx(-1.0, abs=1e-9)

    def test_wald(self, wald3):
        sol = oracle.solve_lp(wald3)
        assert sol.value == pytest.approx(3.0, abs=1e-9)

    def test_unconstrained_put_has_no_cost_rows(self, put_problem):
        sol = oracle.solve_lp(put_problem)
        assert sol.value == pytest.approx(0.5, abs=1e-12)
        assert len(sol.lp.b_ub) == 0

    def test_slack_budget_matches_backward_induction(self):
        for seed in range(5):
            prob = corpus.unconstrained_instance(seed, max_depth=6)
            lat = build_lattice(prob, mode="tree")
            ref, _ = oracle.backward_induction(lat)
            assert oracle.solve_lp(prob, lattice=lat).value == pytest.approx(ref, abs=1e-9)

    def test_infeasible_flag(self):
        prob = wald_problem(9.0)  # duration cannot exceed 4
        assert oracle.solve_lp(prob).value == NEG_INF

    def test_var_cap(self, wald3):
        with pytest.raises(oracle.LpSizeError):
            oracle.solve_lp(wald3, var_cap=10)

    def test_exact_rational_golden_values(self, gap_problem, wald3):
        st, v, _ = oracle.solve_lp_exact(gap_problem)
        assert (st, v) == (oracle.simplex.OPTIMAL, 0.5)
        st, v, _ = oracle.solve_lp_exact(wald3)
        assert (st, v) == (oracle.simplex.OPTIMAL, 3)


class TestCertificates:
    def test_gap_lp_certificates(self, gap_problem):
        sol = oracle.solve_lp(gap_problem)
        report = oracle.lp_certificates(sol, tol=1e-9)
        assert report.passed
        assert report.primal_residual <= 1e-12
        assert report.gap <= 1e-12

    def test_unconstrained_put_gap_zero(self, put_problem):
        report = oracle.lp_certificates(oracle.solve_lp(put_problem))
        assert report.gap <= 1e-12

    def test_perturbed_primal_flags_flow_row(self, gap_problem):
        sol = oracle.solve_lp(gap_problem)
        sol.x = sol.x.copy()
        sol.x[0] += 0.1  # corrupt the root stop mass
        with pytest.raises(oracle.CertificateError, match="flow"):
            oracle.lp_certificates(sol)

    def test_corpus_certificates(self):
        for seed in range(6):
            prob = corpus.constrained_instance(seed)
            sol = oracle.solve_lp(prob)
            assert oracle.lp_certificates(sol, tol=1e-9).passed


def test_lp_dump_and_solution_csv(tmp_path, gap_problem):
    sol = oracle.solve_lp(gap_problem)
    sol.lp.dump(tmp_path / "gap.lp")
    sol.write_primal_csv(tmp_path / "primal.csv")
    sol.write_dual_csv(tmp_path / "dual.csv")
    text = (tmp_path / "gap.lp").read_text()
    assert "maximize" in text and "flow[root]" in text and "cost[clock]" in text
    assert (tmp_path / "primal.csv").read_text().startswith("variable,value")
