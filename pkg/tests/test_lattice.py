import numpy as np
import pytest

from constop.lattice import SizingError, build_lattice, simulate_paths, transition
from constop.model import make_problem


def walk(n_steps=2, dt=0.25, x0=0.0, drift=0.0, sigma=1.0, **kw):
    return make_problem(drift=drift, diffusion=sigma, terminal=0.0,
                        n_steps=n_steps, dt=dt, x0=x0, **kw)


class TestBuildLattice:
    def test_root_children_scale_with_sqrt_dt(self):
        lat = build_lattice(walk(dt=0.25), mode="tree")
        kids = sorted(lat.states[1])
        assert kids == [-0.5, 0.5]
        for (_, prob) in transition(lat, (0, 0), 0.0):
            assert prob == 0.5

    def test_zero_diffusion_gives_deterministic_chain(self):
        lat = build_lattice(walk(n_steps=4, dt=0.5, drift=1.0, sigma=0.0), mode="tree")
        for k in range(5):
            assert np.allclose(lat.states[k], 0.5 * k)

    def test_recombining_two_step_states(self):
        lat = build_lattice(walk(n_steps=2, dt=1.0, x0=100.0))
        assert lat.mode == "recombining"
        assert list(lat.states[2]) == [98.0, 100.0, 102.0]
        # composed root probabilities {1/4, 1/2, 1/4}
        mass = np.zeros(3)
        for (k1, c1), p1 in transition(lat, (0, 0), 0.0):
            for (k2, c2), p2 in transition(lat, (1, c1), 0.0):
                mass[c2] += p1 * p2
        assert np.allclose(mass, [0.25, 0.5, 0.25])

    def test_flow_conservation_under_any_control(self):
        prob = walk(n_steps=5, drift={"family": "control_linear", "slope": 1.0},
                    control_set=(0.0, 1.0))
        lat = build_lattice(prob, mode="tree_control")
        for u in prob.control_set:
            mass = {(0, 0): 1.0}
            for k in range(lat.n_steps):
                nxt = {}
                for node, p in mass.items():
                    for child, q in transition(lat, node, u):
                        nxt[child] = nxt.get(child, 0.0) + p * q
                assert abs(sum(nxt.values()) - 1.0) < 1e-15
                mass = nxt

    def test_one_step_moment_match(self):
        # increments reproduce mean b*dt and variance sigma^2*dt exactly
        prob = walk(dt=0.3, drift=0.7, sigma=1.3)
        lat = build_lattice(prob, mode="tree")
        children = lat.states[1]
        mean = 0.5 * (children[0] + children[1])
        var = 0.5 * sum((c - mean) ** 2 for c in children)
        assert mean == pytest.approx(0.7 * 0.3, abs=1e-15)
        assert var == pytest.approx(1.3**2 * 0.3, abs=1e-13)

    def test_node_cap(self):
        with pytest.raises(SizingError, match="node_cap"):
            build_lattice(walk(n_steps=25), mode="tree", node_cap=2**20)

    def test_unknown_node_and_control(self):
        lat = build_lattice(walk(), mode="tree")
        with pytest.raises(ValueError):
            transition(lat, (0, 5), 0.0)
        with pytest.raises(ValueError):
            transition(lat, (0, 0), 9.0)

    def test_dump_csv(self, tmp_path):
        lat = build_lattice(walk(n_steps=2), mode="tree")
        path = tmp_path / "lattice.csv"
        lat.dump_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,node_id,parent_id,control,child_id,prob,state"
        assert len(lines) == 1 + 1 * 2 + 2 * 2 + 4  # root rows, step-1 rows, leaves


class TestSimulatePaths:
    def test_zero_coefficients_keep_paths_constant(self):
        ens = simulate_paths(walk(drift=0.0, sigma=0.0, x0=3.0, n_steps=6), 0.0, 50, seed=1)
        assert np.all(ens.states == 3.0)

    def test_same_seed_identical(self):
        prob = walk(n_steps=8)
        a = simulate_paths(prob, 0.0, 200, seed=42)
        b = simulate_paths(prob, 0.0, 200, seed=42)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.brownian, b.brownian)

    def test_different_seed_differs(self):
        prob = walk(n_steps=8)
        a = simulate_paths(prob, 0.0, 200, seed=42)
        b = simulate_paths(prob, 0.0, 200, seed=43)
        assert not np.array_equal(a.states, b.states)

    def test_terminal_moments_at_unit_horizon(self):
        # frozen Monte-Carlo bounds from the exact walk moments:
        # X_N ~ sum of 20 steps of +/- sqrt(0.05); mean 0, variance 1
        prob = walk(n_steps=20, dt=0.05)
        ens = simulate_paths(prob, 0.0, 100_000, seed=7)
        xn = ens.states[:, -1]
        assert abs(xn.mean()) <= 4.0 / np.sqrt(100_000)
        assert abs(xn.var() - 1.0) <= 0.05

    def test_running_reward_and_costs_recorded(self):
        prob = make_problem(drift=0.0, diffusion=1.0, terminal=0.0, running=0.5,
                            constraints=[{"kind": "inequality", "cost": 2.0, "label": "c"}],
                            budget={"y": (float("inf"),), "z": ()},
                            n_steps=4, dt=0.5, x0=0.0)
        ens = simulate_paths(prob, 0.0, 10, seed=3)
        assert np.allclose(ens.running_reward, 0.5 * 4 * 0.5)
        assert np.allclose(ens.costs[0], 2.0 * 4 * 0.5)

    def test_bad_policy_object(self):
        with pytest.raises(Exception):
            simulate_paths(walk(), object(), 10, seed=1)
