import math

import numpy as np
import pytest

from constop import corpus, oracle, solver
from constop.lattice import build_lattice
from constop.model import NEG_INF, Budget, make_problem
from constop.solver import (
    CONTINUE,
    INFEASIBLE,
    MIX,
    PURE,
    RELAXED,
    STOP,
    BudgetGrid,
    bellman_step,
    concavify,
    evaluate_policy,
    feasible_to_stop,
    project_budget,
    solve,
)
from conftest import wald_problem


class TestFeasibleToStop:
    def test_positive_allowance(self):
        assert feasible_to_stop(Budget(y=(0.1,), z=()), tol=1e-9)

    def test_within_tolerance(self):
        assert feasible_to_stop(Budget(y=(-1e-12,), z=()), tol=1e-9)

    def test_open_equality_blocks(self):
        assert not feasible_to_stop(Budget(y=(), z=(0.01,)), tol=1e-9)

    def test_infinite_allowance(self):
        assert feasible_to_stop(Budget(y=(math.inf,), z=()), tol=0.0)


class TestBudgetGrid:
    def test_inf_coordinates_dropped(self):
        prob = make_problem(drift=0.0, diffusion=1.0, terminal=0.0,
                            constraints=[
                                {"kind": "inequality", "cost": 1.0, "label": "a"},
                                {"kind": "inequality", "cost": 1.0, "label": "b"},
                            ],
                            budget={"y": (math.inf, 2.0), "z": ()},
                            n_steps=2)
        grid = BudgetGrid.for_problem(prob)
        assert grid.ndim == 1
        assert grid.axes[0].cons_index == 1

    def test_equality_axis_contains_zero(self, wald3):
        grid = BudgetGrid.for_problem(wald3)
        assert np.min(np.abs(grid.axes[0].values)) == 0.0

    def test_negative_cost_axis_still_contains_zero(self):
        prob = make_problem(drift=0.0, diffusion=1.0, terminal=0.0,
                            constraints=[{"kind": "equality",
                                          "cost": {"family": "control_linear",
                                                   "intercept": -1.0, "slope": 2.0},
                                          "label": "net"}],
                            budget={"y": (), "z": (0.0,)},
                            control_set=(0.0, 1.0), n_steps=3)
        grid = BudgetGrid.for_problem(prob, points=33)
        vals = grid.axes[0].values
        assert vals[0] < 0 < vals[-1]
        assert np.min(np.abs(vals)) == 0.0

    def test_root_outside_grid_is_configuration_error(self, wald3):
        grid = BudgetGrid.for_problem(wald3, bounds={"clock": (0.0, 2.0)})
        with pytest.raises(solver.ConfigurationError, match="excludes the root"):
            solve(wald3, grid=grid, mode=PURE)


class TestSolveNamedInstances:
    def test_put_slack_equals_backward_induction(self, put_problem):
        lat = build_lattice(put_problem, mode="tree")
        vt, pt = solve(put_problem, mode=PURE, lattice=lat)
        assert vt.root_value == 0.5
        value, achieved = evaluate_policy(pt, lat)
        assert value == 0.5 and achieved.size == 0

    def test_gap_pure_infeasible(self, gap_problem):
        vt, _ = solve(gap_problem, mode=PURE)
        assert vt.root_value == NEG_INF

    def test_gap_relaxed_recovers_half(self, gap_problem):
        lat = build_lattice(gap_problem, mode="tree")
        vt, pt = solve(gap_problem, mode=RELAXED, lattice=lat)
        assert vt.root_value == pytest.approx(0.5, abs=1e-12)
        # the root decision is a two-atom mixture (m + 1 with one equality)
        root_cell = int(np.argmin(np.abs(vt.grid.axes[0].values - 0.5)))
        assert pt.decision(0, 0, root_cell) == MIX
        cells, ws = pt.mix[(0, 0, root_cell)]
        assert len(cells) == 2
        assert sorted(ws) == pytest.approx([0.5, 0.5])
        value, achieved = evaluate_policy(pt, lat)
        assert value == pytest.approx(0.5, abs=1e-12)
        assert achieved[0] == pytest.approx(0.5, abs=1e-12)

    def test_wald_relaxed_hits_budget_exactly(self, wald3):
        lat = build_lattice(wald3, mode="tree")
        vt, pt = solve(wald3, mode=RELAXED, lattice=lat)
        assert vt.root_value == pytest.approx(3.0, abs=1e-9)
        value, achieved = evaluate_policy(pt, lat)
        assert value == pytest.approx(3.0, abs=1e-9)
        assert achieved[0] == pytest.approx(3.0, abs=1e-9)

    def test_wald_all_levels(self):
        for z in (1.0, 2.0, 3.0):
            vt, _ = solve(wald_problem(z), mode=RELAXED)
            assert vt.root_value == pytest.approx(z, abs=1e-9)

    def test_equality_budget_beyond_horizon_infeasible(self):
        vt, _ = solve(wald_problem(9.0), mode=PURE)
        assert vt.root_value == NEG_INF


class TestBellmanStep:
    def test_reduces_to_stop_vs_continue_without_constraints(self, put_problem):
        lat = build_lattice(put_problem, mode="tree")
        grid = BudgetGrid.for_problem(put_problem, lattice=lat)
        _, slices = oracle.backward_induction(lat)
        next_slices = {i: np.array([v]) for i, v in enumerate(slices[1])}
        value, decision = bellman_step(next_slices, 0, 0, 0, put_problem, grid, lat,
                                       mode=PURE)
        assert value == 0.5
        assert decision["kind"] == CONTINUE

    def test_final_step_forced_stop_with_zero_equality(self, wald3):
        lat = build_lattice(wald3, mode="tree")
        vt, pt = solve(wald3, mode=PURE, lattice=lat)
        grid = vt.grid
        zero_cell = int(np.argmin(np.abs(grid.axes[0].values)))
        st = lat.stage(4)
        for node in range(lat.n_nodes(4)):
            assert vt.values[4][node, zero_cell] == st["pi"][node]
            assert pt.decision(4, node, zero_cell) == STOP

    def test_unreachable_equality_budget_is_neg_inf_not_error(self, wald3):
        lat = build_lattice(wald3, mode="tree")
        vt, pt = solve(wald3, mode=PURE, lattice=lat)
        grid = vt.grid
        # remaining budget 4 at step 1 exceeds the 3 steps left
        cell = int(np.argmin(np.abs(grid.axes[0].values - 4.0)))
        assert vt.values[1][0, cell] == NEG_INF
        assert pt.decision(1, 0, cell) == INFEASIBLE

    def test_batch_solver_matches_reference_cells(self):
        prob = corpus.constrained_instance(6)
        lat = build_lattice(prob, mode="tree")
        grid = BudgetGrid.for_problem(prob, points=17, lattice=lat)
        vt, _ = solve(prob, grid=grid, mode=PURE, lattice=lat)
        k = prob.n_steps - 1
        next_slices = {i: vt.values[k + 1][i] for i in range(lat.n_nodes(k + 1))}
        rng = np.random.default_rng(0)
        for node in range(lat.n_nodes(k)):
            for cell in rng.integers(0, grid.n_cells, 25):
                ref, _ = bellman_step(next_slices, k, node, int(cell), prob, grid, lat)
                got = vt.values[k][node, int(cell)]
                if ref == NEG_INF:
                    assert got == NEG_INF
                else:
                    assert got == pytest.approx(ref, abs=1e-10)


class TestConcavify:
    def test_chord_example(self, gap_problem):
        lat = build_lattice(gap_problem, mode="tree")
        grid = BudgetGrid.for_problem(gap_problem, lattice=lat)
        vals = np.full(grid.n_cells, NEG_INF)
        i0 = int(np.argmin(np.abs(grid.axes[0].values - 0.0)))
        i1 = int(np.argmin(np.abs(grid.axes[0].values - 1.0)))
        ih = int(np.argmin(np.abs(grid.axes[0].values - 0.5)))
        vals[i0], vals[i1] = 1.0, 0.0
        env, support = concavify(grid, vals)
        assert env[ih] == pytest.approx(0.5, abs=1e-12)
        cells, ws = support[ih]
        assert set(cells) == {i0, i1}

    def test_already_concave_unchanged(self, wald3):
        grid = BudgetGrid.for_problem(wald3)
        xs = grid.axes[0].values
        vals = -((xs - 1.7) ** 2)
        env, _ = concavify(grid, vals)
        assert np.allclose(env, vals, atol=1e-14)

    def test_more_than_two_dims_unsupported(self):
        prob = make_problem(
            drift=0.0, diffusion=1.0, terminal=0.0,
            constraints=[
                {"kind": "inequality", "cost": 1.0, "label": "a"},
                {"kind": "inequality", "cost": 2.0, "label": "b"},
                {"kind": "equality", "cost": 1.0, "label": "c"},
            ],
            budget={"y": (1.0, 1.0), "z": (1.0,)}, n_steps=2,
        )
        with pytest.raises(solver.UnsupportedModeError):
            solve(prob, mode=RELAXED,
                  grid=BudgetGrid.for_problem(prob, points=5))


class TestInvariants:
    @pytest.mark.parametrize("seed", range(6))
    def test_slack_equivalence_at_every_node(self, seed):
        prob = corpus.unconstrained_instance(seed, max_depth=8)
        lat = build_lattice(prob)
        ref_root, ref_slices = oracle.backward_induction(lat)
        vt, _ = solve(prob, mode=PURE, lattice=lat)
        for k in range(prob.n_steps + 1):
            assert np.max(np.abs(vt.values[k][:, 0] - ref_slices[k])) <= 1e-12

    @pytest.mark.parametrize("seed", [0, 2, 4])
    def test_budget_monotonicity_and_stop_lower_bound(self, seed):
        prob = corpus.constrained_instance(seed)
        lat = build_lattice(prob, mode="tree")
        grid = BudgetGrid.for_problem(prob, points=21, lattice=lat)
        vt, _ = solve(prob, grid=grid, mode=PURE, lattice=lat)
        stop_ok = grid.stop_mask(vt.tol)
        for k in range(prob.n_steps + 1):
            st = lat.stage(k)
            v = vt.values[k]
            # monotone in the inequality coordinate (axis 0)
            shaped = v.reshape(v.shape[0], *grid.shape)
            assert np.all(shaped[:, 1:, :] >= shaped[:, :-1, :] - 1e-12)
            # stop payoff is always available where stopping is feasible
            for node in range(lat.n_nodes(k)):
                feas = v[node, stop_ok]
                assert np.all(feas >= st["pi"][node] - 1e-12)

    @pytest.mark.parametrize("seed", [1, 3, 5])
    def test_mode_dominance_cellwise(self, seed):
        prob = corpus.constrained_instance(seed)
        lat = build_lattice(prob, mode="tree")
        grid = BudgetGrid.for_problem(prob, points=21, lattice=lat)
        vp, _ = solve(prob, grid=grid, mode=PURE, lattice=lat)
        vr, _ = solve(prob, grid=grid, mode=RELAXED, lattice=lat)
        for k in range(prob.n_steps + 1):
            a, b = vp.values[k], vr.values[k]
            both = np.isfinite(a)
            assert np.all(b[both] >= a[both] - 1e-9)
            # relaxed never loses feasibility
            assert np.all(b[both] > NEG_INF)

    def test_value_bounded_below_by_terminal_floor(self, wald3):
        vt, _ = solve(wald3, mode=PURE)
        floor = wald3.rewards.terminal_lower_bound
        for k, slab in enumerate(vt.values):
            fin = slab[np.isfinite(slab)]
            assert np.all(fin >= floor)

    def test_forward_value_matches_root(self):
        for seed in (0, 1, 2, 3):
            prob = corpus.constrained_instance(seed)
            lat = build_lattice(prob, mode="tree")
            vt, pt = solve(prob, mode=RELAXED, lattice=lat)
            if vt.root_value == NEG_INF:
                continue
            value, achieved = evaluate_policy(pt, lat)
            assert value == pytest.approx(vt.root_value, abs=1e-9)
            y, z = prob.root_budget.y[0], prob.root_budget.z[0]
            assert achieved[0] <= y + 1e-9 * prob.n_steps
            assert achieved[1] == pytest.approx(z, abs=1e-9 * prob.n_steps)

    def test_policy_lattice_mismatch_detected(self, put_problem, wald3):
        lat_put = build_lattice(put_problem, mode="tree")
        _, pt = solve(put_problem, mode=PURE, lattice=lat_put)
        lat_wald = build_lattice(wald3, mode="tree")
        with pytest.raises(Exception, match="different lattice"):
            evaluate_policy(pt, lat_wald)


class TestTablesCsv:
    def test_schema_and_neg_inf_token(self, tmp_path, gap_problem):
        lat = build_lattice(gap_problem, mode="tree")
        vt, pt = solve(gap_problem, mode=PURE, lattice=lat)
        out = tmp_path / "tables.csv"
        solver.write_tables_csv(vt, pt, lat, out)
        lines = out.read_text().splitlines()
        assert lines[0].split(",")[:6] == [
            "step", "node_id", "z_idx_0", "value", "decision", "control"]
        assert any(",-inf," in line for line in lines[1:])
        rows = 1 + (1 + 2) * vt.grid.n_cells
        assert len(lines) == rows

    def test_byte_identical_reruns(self, tmp_path, wald3):
        lat = build_lattice(wald3, mode="tree")
        blobs = []
        for tag in ("a", "b"):
            vt, pt = solve(wald3, mode=RELAXED, lattice=lat)
            out = tmp_path / f"{tag}.csv"
            solver.write_tables_csv(vt, pt, lat, out, tmp_path / f"{tag}.mix.csv")
            blobs.append(out.read_bytes() + (tmp_path / f"{tag}.mix.csv").read_bytes())
        assert blobs[0] == blobs[1]
