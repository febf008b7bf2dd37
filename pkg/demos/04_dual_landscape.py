"""The multiplier landscape of a constrained instance.

Pricing the equality budget into the reward with a multiplier eta gives an
unconstrained problem whose value upper-bounds the constrained one for every
eta.  On the depth-one coin instance the bound is max(1 + eta/2, -eta/2): a
piecewise-linear vee whose bottom sits at eta = -1, value 0.5, exactly the
LP optimum and exactly the LP's dual multiplier.  The landscape goes to a
CSV for plotting.
"""

import numpy as np

from constop import DualPoint, build_lattice, dual_value, make_problem, solve_lp
from constop.dual import dual_landscape_csv, dual_values_batch

problem = make_problem(
    drift=0.0,
    diffusion=1.0,
    terminal={"family": "time_affine", "intercept": 1.0, "slope": -1.0},
    constraints=[{"kind": "equality", "cost": 1.0, "label": "clock"}],
    budget={"y": (), "z": (0.5,)},
    n_steps=1,
    dt=1.0,
    x0=0.0,
)
lattice = build_lattice(problem, mode="tree")
lp = solve_lp(problem, lattice=lattice)

etas = np.linspace(-4.0, 2.0, 121)
values = dual_values_batch(problem, np.zeros((121, 0)), etas.reshape(-1, 1), lattice)
points = [DualPoint(eta=(e,)) for e in etas]
dual_landscape_csv(problem, points, values, "dual_landscape.csv")

best = int(np.argmin(values))
print(f"LP value {lp.value}, LP dual multiplier eta* = {lp.eta[0]:+.3f}")
print(f"grid minimum: {values[best]:.6f} at eta = {etas[best]:+.3f}")
print(f"dual at the LP multiplier: {dual_value(problem, DualPoint(eta=tuple(lp.eta)), lattice):.12f}")
print("every sampled bound sits above the LP value:",
      bool(np.all(values >= lp.value - 1e-9)))
print("landscape written to dual_landscape.csv")
