"""Seeded random instances for regression and cross-method comparisons.

Two generators: unconstrained instances for solver-vs-backward-induction
equivalence, and constrained instances (one inequality + one equality cost)
whose budgets are calibrated from a random reference rule so the instance is
guaranteed feasible for deterministic rules.  Equality costs are constant
rates and depths divide the grid resolution, which keeps every deterministic
rule's budget certificate exactly on the default grids (65 and 129 points).
"""

from __future__ import annotations

import math

import numpy as np

from .lattice import build_lattice
from .model import make_problem


def _pick_dynamics(rng):
    kind = rng.choice(["zero", "const", "sin"])
    if kind == "zero":
        drift = 0.0
    elif kind == "const":
        drift = {"family": "constant", "value": float(rng.uniform(-0.3, 0.3))}
    else:
        drift = {
            "family": "sinusoidal",
            "amplitude": float(rng.uniform(0.1, 0.4)),
            "frequency": float(rng.uniform(0.5, 1.5)),
        }
    sigma = {"family": "constant", "value": float(rng.uniform(0.6, 1.4))}
    return drift, sigma


def _pick_terminal(rng, x0):
    kind = rng.choice(["put", "call", "quad"])
    if kind == "put":
        return {"family": "put", "strike": float(x0 + rng.uniform(0.0, 1.5)),
                "scale": float(rng.uniform(0.8, 2.0))}
    if kind == "call":
        return {"family": "call", "strike": float(x0 - rng.uniform(0.0, 1.5)),
                "scale": float(rng.uniform(0.8, 2.0))}
    return {"family": "quadratic", "scale": float(rng.uniform(0.2, 0.6)),
            "center": float(x0 - rng.uniform(-1.5, 1.5))}


def _pick_running(rng, controls):
    kind = rng.choice(["zero", "const", "ctrl"])
    if kind == "zero":
        return 0.0
    if kind == "const" or len(controls) == 1:
        return {"family": "constant", "value": float(rng.uniform(-0.2, 0.4))}
    return {"family": "control_linear", "intercept": float(rng.uniform(-0.1, 0.2)),
            "slope": float(rng.uniform(0.2, 0.8))}


def unconstrained_instance(seed: int, max_depth: int = 10):
    """Random slack-budget instance; depth 3..max_depth."""
    rng = np.random.default_rng(seed)
    n_steps = int(rng.integers(3, max_depth + 1))
    dt = float(rng.choice([0.25, 0.5, 1.0]))
    x0 = float(rng.uniform(-2.0, 2.0))
    controls = (0.0,) if rng.random() < 0.5 else (0.0, 1.0)
    drift, sigma = _pick_dynamics(rng)
    constraints = []
    budget = None
    if rng.random() < 0.5:
        # exercise the slack-inequality path: +inf budget drops the coordinate
        constraints = [{"kind": "inequality",
                        "cost": {"family": "constant", "value": 1.0},
                        "label": "clock"}]
        budget = {"y": (float("inf"),), "z": ()}
    return make_problem(
        drift=drift,
        diffusion=sigma,
        terminal=_pick_terminal(rng, x0),
        running=_pick_running(rng, controls),
        constraints=constraints,
        control_set=controls,
        budget=budget,
        n_steps=n_steps,
        dt=dt,
        x0=x0,
        name=f"free-{seed}",
    )


def _random_rule_expectations(lattice, rng, root_continues=True):
    """Expected (reward, cost vector) of a random adapted deterministic rule."""
    problem = lattice.problem
    N = lattice.n_steps
    dt = lattice.dt
    n_c = len(problem.constraints)
    st = lattice.stage(N)
    vals = np.zeros((lattice.n_nodes(N), 1 + n_c))
    vals[:, 0] = st["pi"]
    for k in range(N - 1, -1, -1):
        st = lattice.stage(k)
        per_u = lattice.children[k].shape[1]
        nxt = np.zeros((lattice.n_nodes(k), 1 + n_c))
        for i in range(lattice.n_nodes(k)):
            stop = rng.random() < 0.35
            if k == 0 and root_continues:
                stop = False
            if stop:
                nxt[i, 0] = st["pi"][i]
                continue
            j = int(rng.integers(lattice.n_controls))
            ch = lattice.children[k][i, j if per_u > 1 else 0]
            stage = np.concatenate([[st["f"][i, j]], st["cost"][:, i, j]]) * dt
            nxt[i] = stage + 0.5 * (vals[ch[0]] + vals[ch[1]])
        vals = nxt
    return vals[0, 0], vals[0, 1:]


def constrained_instance(seed: int):
    """One inequality plus one equality cost, budgets from a reference rule.

    The equality cost rate is constant and depths are restricted to {2, 4},
    so every deterministic rule's conditional equality costs are exact grid
    values at resolutions with 64 or 128 intervals.
    """
    rng = np.random.default_rng(100_000 + seed)
    n_steps = int(rng.choice([2, 2, 4]))
    dt = float(rng.choice([0.25, 0.5, 1.0]))
    x0 = float(rng.uniform(-1.5, 1.5))
    controls = (0.0,) if (n_steps > 3 and rng.random() < 0.5) else ((0.0, 1.0) if rng.random() < 0.5 else (0.0,))
    drift, sigma = _pick_dynamics(rng)
    h_rate = float(rng.choice([0.5, 1.0, 2.0]))
    g_kind = rng.choice(["quad", "ctrl", "const"])
    if g_kind == "quad":
        # keep the cost range within a factor of a few of the binding level,
        # so the auto-sized budget axis actually resolves the feasible region
        g_cost = {"family": "quadratic", "scale": float(rng.uniform(0.05, 0.2)),
                  "center": float(x0 + rng.uniform(-1.0, 1.0))}
    elif g_kind == "ctrl" and len(controls) > 1:
        g_cost = {"family": "control_linear", "intercept": float(rng.uniform(0.1, 0.4)),
                  "slope": float(rng.uniform(0.2, 0.8))}
    else:
        g_cost = {"family": "constant", "value": float(rng.uniform(0.2, 0.8))}
    constraints = [
        {"kind": "inequality", "cost": g_cost, "label": "wear"},
        {"kind": "equality", "cost": {"family": "constant", "value": h_rate},
         "label": "clock"},
    ]
    base = make_problem(
        drift=drift,
        diffusion=sigma,
        terminal=_pick_terminal(rng, x0),
        running=_pick_running(rng, controls),
        constraints=constraints,
        control_set=controls,
        budget={"y": (float("inf"),), "z": (0.0,)},
        n_steps=n_steps,
        dt=dt,
        x0=x0,
        name=f"corpus-{seed}",
    )
    lattice = build_lattice(base, mode="tree")
    _, costs = _random_rule_expectations(lattice, rng)
    z = float(costs[1])
    y_raw = float(costs[0] * (1.0 + rng.uniform(0.1, 0.6)) + 0.05)
    # place the inequality level on the default 65-point axis (the 129-point
    # axis refines it), so conservative off-grid interpolation at the root
    # cannot declare a feasible instance infeasible at the boundary
    rate_hi = 0.0
    for k in range(n_steps):
        rate_hi = max(rate_hi, float(lattice.stage(k)["cost"][0].max()))
    horizon = n_steps * dt
    span_hi = max(horizon * max(0.0, rate_hi), y_raw)
    spacing = span_hi / 64.0
    y = min(max(math.ceil(y_raw / spacing - 1e-9), 1), 64) * spacing
    return make_problem(
        drift=drift,
        diffusion=sigma,
        terminal=base.rewards.terminal,
        running=base.rewards.running,
        constraints=constraints,
        control_set=controls,
        budget={"y": (y,), "z": (z,)},
        n_steps=n_steps,
        dt=dt,
        x0=x0,
        name=f"corpus-{seed}",
    )
