"""Why deterministic rules are not enough under equality budgets.

Depth one: stopping now pays 1, stopping at the horizon pays 0, and the
expected duration must equal exactly one half.  A deterministic rule spends
either 0 or 1, never 0.5, so the pure problem is infeasible; tossing a fair
coin at the root meets the budget and collects 0.5.  The relaxed solver
realizes that coin as the upper concave envelope of the stage value over the
budget coordinate, and the LP and dual bound confirm the number.

Refining the clock (same horizon cut into more steps) gives deterministic
rules more expected durations to hit, so the pure value climbs back up to
the relaxed one: the deterministic-vs-randomized gap is a coarseness
artifact of this instance, not a fixed law.
"""

from constop import build_lattice, make_problem, minimize_dual
from constop import solve, solve_lp, PURE, RELAXED
from constop.model import NEG_INF


def clocked_instance(n_steps):
    dt = 1.0 / n_steps
    return make_problem(
        drift=0.0,
        diffusion=1.0,
        terminal={"family": "time_affine", "intercept": 1.0, "slope": -1.0},
        constraints=[{"kind": "equality", "cost": 1.0, "label": "clock"}],
        budget={"y": (), "z": (0.5,)},
        n_steps=n_steps,
        dt=dt,
        x0=0.0,
        name=f"gap-{n_steps}",
    )


problem = clocked_instance(1)
lattice = build_lattice(problem, mode="tree")
vp, _ = solve(problem, mode=PURE, lattice=lattice)
vr, pr = solve(problem, mode=RELAXED, lattice=lattice)
lp = solve_lp(problem, lattice=lattice)
point, dual_min = minimize_dual(problem, lattice=lattice)
print(f"depth 1: pure {vp.root_value}  relaxed {vr.root_value}  "
      f"LP {lp.value}  dual {dual_min} at eta={point.eta[0]:+.2f}")
assert vp.root_value == NEG_INF and abs(vr.root_value - 0.5) < 1e-12

print("\ndriver refinement (same horizon, finer clock):")
for n in (1, 2, 4, 8):
    problem = clocked_instance(n)
    lattice = build_lattice(problem, mode="tree")
    vp, _ = solve(problem, mode=PURE, lattice=lattice)
    vr, _ = solve(problem, mode=RELAXED, lattice=lattice)
    pure = "infeasible" if vp.root_value == NEG_INF else f"{vp.root_value:.6f}"
    print(f"  {n} steps: pure {pure:>10}  relaxed {vr.root_value:.6f}")
