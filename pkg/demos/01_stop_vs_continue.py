"""Classic stop-vs-continue on a binary lattice, no budgets.

A two-step symmetric unit walk starts at 100 and pays (100 - x)^+ when we
stop.  Waiting is free, so the only question is whether the chance of the
walk drifting down is worth giving up today's payoff.  Three independent
routes must agree: plain backward induction, the budget solver fed a slack
budget, and the occupation-measure LP.
"""

import numpy as np

from constop import backward_induction, build_lattice, evaluate_policy, make_problem
from constop import solve, solve_lp, PURE

problem = make_problem(
    drift=0.0,
    diffusion=1.0,
    terminal={"family": "put", "strike": 100.0},
    n_steps=2,
    dt=1.0,
    x0=100.0,
    name="put2",
)

lattice = build_lattice(problem, mode="tree")
print("states per step:", [list(s) for s in lattice.states])

value, slices = backward_induction(lattice)
print(f"backward induction root value: {value}")
print("  step-1 values:", list(slices[1]), "(stop at 99 is worth the whole chord)")

vt, pt = solve(problem, mode=PURE, lattice=lattice)
print(f"budget solver with slack budget: {vt.root_value}")

fwd, _ = evaluate_policy(pt, lattice)
print(f"forward policy expectation:      {fwd}")

lp = solve_lp(problem, lattice=lattice)
print(f"occupation LP (randomized rules): {lp.value}")
print("stop mass per node:", np.round(lp.stop_mass, 6))

assert value == vt.root_value == fwd == lp.value == 0.5
print("\nall four numbers agree at 0.5: randomization buys nothing without constraints")
