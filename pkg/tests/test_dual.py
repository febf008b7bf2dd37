import numpy as np
import pytest

from constop import corpus, oracle
from constop.dual import DualPoint, DualSearchConfig, dual_value, dual_values_batch, minimize_dual
from constop.lattice import build_lattice
from constop.model import ValidationError
from conftest import wald_problem


class TestDualValue:
    def test_zero_multipliers_give_unconstrained_value(self, put_problem):
        assert dual_value(put_problem, DualPoint()) == 0.5

    def test_gap_hand_minimax(self, gap_problem):
        # d(eta) = max(1 + eta/2, -eta/2); at eta = -1 both branches give 1/2
        lat = build_lattice(gap_problem, mode="tree")
        assert dual_value(gap_problem, DualPoint(eta=(-1.0,)), lat) == pytest.approx(0.5)
        for eta in (-3.0, -2.0, 0.0, 1.0):
            expect = max(1 + 0.5 * eta, -0.5 * eta)
            assert dual_value(gap_problem, DualPoint(eta=(eta,)), lat) \
                == pytest.approx(expect, abs=1e-12)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValidationError):
            DualPoint(lam=(-0.5,))

    def test_inf_budget_forces_zero_multiplier(self):
        prob = corpus.unconstrained_instance(1)
        if prob.constraints.n_inequality:
            with pytest.raises(ValidationError):
                dual_value(prob, DualPoint(lam=(1.0,)))

    def test_batch_matches_scalar(self, wald3):
        lat = build_lattice(wald3, mode="tree")
        etas = np.linspace(-3, 3, 11).reshape(-1, 1)
        batch = dual_values_batch(wald3, np.zeros((11, 0)), etas, lat)
        for eta, b in zip(etas[:, 0], batch):
            assert b == pytest.approx(dual_value(wald3, DualPoint(eta=(eta,)), lat),
                                      abs=1e-12)


class TestMinimizeDual:
    def test_gap_minimizer(self, gap_problem):
        point, value = minimize_dual(gap_problem)
        assert value == pytest.approx(0.5, abs=1e-9)
        assert point.eta[0] == pytest.approx(-1.0, abs=0.05)

    def test_wald_collapses_to_budget(self, wald3):
        _, value = minimize_dual(wald3)
        assert value == pytest.approx(3.0, abs=1e-9)

    def test_slack_inequality_minimizer_at_zero(self):
        prob = corpus.unconstrained_instance(3)
        point, value = minimize_dual(prob)
        assert all(l == 0.0 for l in point.lam)
        lat = build_lattice(prob)
        assert value == pytest.approx(oracle.backward_induction(lat)[0], abs=1e-12)

    def test_warm_start_never_hurts(self, wald3):
        lat = build_lattice(wald3, mode="tree")
        sol = oracle.solve_lp(wald3, lattice=lat)
        warm = DualPoint(lam=tuple(sol.lam), eta=tuple(sol.eta))
        _, best = minimize_dual(wald3, lattice=lat, warm_starts=(warm,))
        assert best <= dual_value(wald3, warm, lat) + 1e-12


class TestDuality:
    @pytest.mark.parametrize("seed", range(6))
    def test_weak_duality_on_sampled_multipliers(self, seed):
        prob = corpus.constrained_instance(seed)
        lat = build_lattice(prob, mode="tree")
        lp = oracle.solve_lp(prob, lattice=lat).value
        rng = np.random.default_rng(seed)
        lam = rng.uniform(0, 5, size=(64, 1))
        eta = rng.uniform(-5, 5, size=(64, 1))
        vals = dual_values_batch(prob, lam, eta, lat)
        assert np.all(vals >= lp - 1e-9)

    @pytest.mark.parametrize("seed", range(6))
    def test_strong_duality_at_lp_multipliers(self, seed):
        prob = corpus.constrained_instance(seed)
        lat = build_lattice(prob, mode="tree")
        sol = oracle.solve_lp(prob, lattice=lat)
        point = DualPoint(lam=tuple(sol.lam), eta=tuple(sol.eta))
        assert dual_value(prob, point, lat) == pytest.approx(sol.value, abs=1e-8)

    def test_dual_of_pure_problem_may_exceed_enumeration(self, gap_problem):
        # the deterministic problem has a genuine duality gap here
        _, best = minimize_dual(gap_problem)
        enum = oracle.enumerate_pure(gap_problem)
        assert best >= enum   # -inf on the right: strict gap
        assert best == pytest.approx(0.5, abs=1e-9)


def test_landscape_csv(tmp_path, gap_problem):
    from constop.dual import dual_landscape_csv

    pts = [DualPoint(eta=(e,)) for e in (-2.0, -1.0, 0.0)]
    vals = [dual_value(gap_problem, p) for p in pts]
    out = tmp_path / "landscape.csv"
    dual_landscape_csv(gap_problem, pts, vals, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "eta_0,dual_value"
    assert len(lines) == 4
