"""An equality budget on expected duration, and the identity that pins it.

On the symmetric unit walk from zero, E[x_tau^2] = E[tau] for every bounded
stopping rule (optional stopping applied to x^2 - t).  So if the expected
duration is pinned to z, the optimal value IS z: analytic ground truth with
no optimization left.  The relaxed solver, the LP, the dual bound and the
forward policy evaluation should all report z exactly.
"""

from constop import build_lattice, evaluate_policy, make_problem, minimize_dual
from constop import solve, solve_lp, RELAXED

for z in (1.0, 2.0, 3.0):
    problem = make_problem(
        drift=0.0,
        diffusion=1.0,
        terminal={"family": "quadratic"},
        constraints=[{"kind": "equality", "cost": 1.0, "label": "clock"}],
        budget={"y": (), "z": (z,)},
        n_steps=4,
        dt=1.0,
        x0=0.0,
        name=f"duration-{z}",
    )
    lattice = build_lattice(problem, mode="tree")
    vt, pt = solve(problem, mode=RELAXED, lattice=lattice)
    fwd, achieved = evaluate_policy(pt, lattice)
    lp = solve_lp(problem, lattice=lattice)
    _, dual_min = minimize_dual(problem, lattice=lattice)
    print(f"z={z}: relaxed DP {vt.root_value:.12f}  LP {lp.value:.12f}  "
          f"dual {dual_min:.12f}  achieved E[duration] {achieved[0]:.12f}")
    assert abs(vt.root_value - z) < 1e-9 and abs(lp.value - z) < 1e-9

print("\nthe budget axis contains the integers, so the recursion is exact:")
vt, pt = solve(make_problem(
    drift=0.0, diffusion=1.0, terminal={"family": "quadratic"},
    constraints=[{"kind": "equality", "cost": 1.0, "label": "clock"}],
    budget={"y": (), "z": (3.0,)}, n_steps=4, dt=1.0, x0=0.0), mode=RELAXED)
grid = vt.grid.axes[0].values
print("equality axis spacing:", grid[1] - grid[0], "(3.0 sits on the grid)")
