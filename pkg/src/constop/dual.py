"""Multiplier-penalized upper bounds.

Pricing the expected-cost constraints into the running reward turns the
problem into an unconstrained stop/control recursion whose value, plus the
constant lam . y + eta . z, upper-bounds the constrained optimum for every
admissible multiplier (lam >= 0 componentwise, eta free).  Minimizing the
bound over a multiplier box gives the dual estimate; at desk scale the
minimum coincides with the occupation-LP value, and the LP's dual
multipliers make a good warm start.

Multiplier grids are evaluated in batch: one backward induction pass carries
a whole vector of penalty points through the tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeModel, build_lattice
from .model import ProblemInstance, ValidationError


@dataclass(frozen=True)
class DualPoint:
    lam: tuple = ()     # one per inequality constraint, nonnegative
    eta: tuple = ()     # one per equality constraint, any sign

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        object.__setattr__(self, "eta", tuple(float(v) for v in self.eta))
        for v in self.lam:
            if v < 0:
                raise ValidationError(f"inequality multipliers must be nonnegative, got {v}")


@dataclass
class DualSearchConfig:
    box: float = 10.0          # per-coordinate search range
    points: int = 201          # grid points per coordinate
    refine: bool = True        # one local refinement pass around the incumbent
    max_grid_dims: int = 2     # above this, coordinate descent replaces the grid
    sweeps: int = 4            # coordinate-descent sweeps


def dual_values_batch(problem: ProblemInstance, lam, eta, lattice: LatticeModel = None):
    """Dual bound for a batch of multiplier points.

    ``lam``: (P, n_inequality) with zeros on +inf-budget coordinates;
    ``eta``: (P, n_equality).  Returns (P,) values.  One backward induction
    carries all P penalized rewards simultaneously.
    """
    if lattice is None:
        lattice = build_lattice(problem)
    budget = problem.root_budget
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    P = max(lam.shape[0], eta.shape[0])
    if lam.shape[1] != problem.constraints.n_inequality and lam.size:
        raise ValidationError("multiplier count does not match inequality constraints")
    if eta.shape[1] != problem.constraints.n_equality and eta.size:
        raise ValidationError("multiplier count does not match equality constraints")
    if np.any(lam < 0):
        raise ValidationError("inequality multipliers must be nonnegative")

    const = np.zeros(P)
    for pos in range(problem.constraints.n_inequality):
        y = budget.y[pos]
        if math.isfinite(y):
            const += lam[:, pos] * y
        elif np.any(lam[:, pos] != 0.0):
            raise ValidationError("a +inf inequality budget forces its multiplier to zero")
    for pos in range(problem.constraints.n_equality):
        const += eta[:, pos] * budget.z[pos]

    ineq = problem.constraints.inequality_indices
    eq = problem.constraints.equality_indices
    N = lattice.n_steps
    dt = lattice.dt

    v = np.repeat(lattice.stage(N)["pi"][:, None], P, axis=1)
    for k in range(N - 1, -1, -1):
        st = lattice.stage(k)
        per_u = lattice.children[k].shape[1]
        best = None
        for j in range(lattice.n_controls):
            pen = np.repeat(st["f"][:, j][:, None], P, axis=1)
            for pos, ci in enumerate(ineq):
                if math.isfinite(budget.y[pos]):
                    pen -= np.outer(st["cost"][ci, :, j], lam[:, pos])
            for pos, ci in enumerate(eq):
                pen -= np.outer(st["cost"][ci, :, j], eta[:, pos])
            ch = lattice.children[k][:, j if per_u > 1 else 0, :]
            cont = pen * dt + 0.5 * (v[ch[:, 0]] + v[ch[:, 1]])
            best = cont if best is None else np.maximum(best, cont)
        v = np.maximum(st["pi"][:, None], best)
    return v[0] + const


def dual_value(problem: ProblemInstance, point: DualPoint, lattice: LatticeModel = None) -> float:
    """Penalized unconstrained value plus the multiplier constant.

    Equals sup over stop/control rules of
    E[reward - sum lam_i (cost_i - y_i) - sum eta_j (cost_j - z_j)], computed
    by exact backward induction with running reward f - lam.g - eta.h.
    """
    if len(point.lam) != problem.constraints.n_inequality:
        raise ValidationError("multiplier count does not match inequality constraints")
    if len(point.eta) != problem.constraints.n_equality:
        raise ValidationError("multiplier count does not match equality constraints")
    lam = np.asarray(point.lam, dtype=float).reshape(1, -1)
    eta = np.asarray(point.eta, dtype=float).reshape(1, -1)
    return float(dual_values_batch(problem, lam, eta, lattice)[0])


def _free_coords(problem):
    """(is_eq, position) per searchable multiplier coordinate."""
    coords = []
    for pos in range(problem.constraints.n_inequality):
        if math.isfinite(problem.root_budget.y[pos]):
            coords.append((False, pos))
    for pos in range(problem.constraints.n_equality):
        coords.append((True, pos))
    return coords


def _point_from_vector(problem, coords, vec):
    lam = [0.0] * problem.constraints.n_inequality
    eta = [0.0] * problem.constraints.n_equality
    for (is_eq, pos), v in zip(coords, vec):
        if is_eq:
            eta[pos] = float(v)
        else:
            lam[pos] = max(float(v), 0.0)
    return DualPoint(lam=tuple(lam), eta=tuple(eta))


def _matrices_from_vectors(problem, coords, vecs):
    P = vecs.shape[0]
    lam = np.zeros((P, problem.constraints.n_inequality))
    eta = np.zeros((P, problem.constraints.n_equality))
    for c, (is_eq, pos) in enumerate(coords):
        if is_eq:
            eta[:, pos] = vecs[:, c]
        else:
            lam[:, pos] = np.maximum(vecs[:, c], 0.0)
    return lam, eta


def minimize_dual(
    problem: ProblemInstance,
    search: DualSearchConfig = None,
    lattice: LatticeModel = None,
    warm_starts=(),
):
    """Minimal dual bound over the search set; returns (best point, value).

    ``warm_starts`` may contain DualPoints (e.g. the LP dual multipliers);
    the refinement pass also runs around the best candidate found.
    """
    search = search or DualSearchConfig()
    if lattice is None:
        lattice = build_lattice(problem)
    coords = _free_coords(problem)
    best_point = _point_from_vector(problem, coords, [0.0] * max(len(coords), 1))
    best_value = dual_value(problem, best_point, lattice)
    for pt in warm_starts:
        v = dual_value(problem, pt, lattice)
        if v < best_value:
            best_value, best_point = v, pt
    if not coords:
        return best_point, best_value

    def axis_values(center, width, is_eq):
        lo, hi = center - width, center + width
        if not is_eq:
            lo, hi = max(lo, 0.0), max(hi, 0.0)
        return np.linspace(lo, hi, search.points)

    def eval_vectors(vecs):
        nonlocal best_point, best_value
        lam, eta = _matrices_from_vectors(problem, coords, vecs)
        vals = dual_values_batch(problem, lam, eta, lattice)
        j = int(np.argmin(vals))
        if vals[j] < best_value:
            best_value = float(vals[j])
            best_point = _point_from_vector(problem, coords, vecs[j])

    def grid_pass(centers, width):
        axes = [axis_values(c, width, is_eq) for c, (is_eq, _) in zip(centers, coords)]
        if len(coords) <= search.max_grid_dims:
            mesh = np.meshgrid(*axes, indexing="ij")
            eval_vectors(np.stack([m.reshape(-1) for m in mesh], axis=1))
        else:
            vec = np.array(centers)
            for _ in range(search.sweeps):
                for c in range(len(coords)):
                    vals = axis_values(vec[c], width, coords[c][0])
                    trials = np.repeat(vec[None, :], vals.shape[0], axis=0)
                    trials[:, c] = vals
                    eval_vectors(trials)
                    vec = np.array(
                        [best_point.eta[p] if e else best_point.lam[p] for e, p in coords]
                    )

    grid_pass([0.0] * len(coords), search.box)
    if search.refine:
        centers = [best_point.eta[p] if is_eq else best_point.lam[p] for is_eq, p in coords]
        step = 2.0 * search.box / max(search.points - 1, 1)
        grid_pass(centers, 2.0 * step)
    return best_point, best_value


def dual_landscape_csv(problem, points, values, path):
    """CSV of (multiplier point, dual value) rows for plotting."""
    with open(path, "w") as fh:
        n_l = problem.constraints.n_inequality
        n_e = problem.constraints.n_equality
        header = [f"lam_{i}" for i in range(n_l)] + [f"eta_{j}" for j in range(n_e)]
        fh.write(",".join(header + ["dual_value"]) + "\n")
        for pt, v in zip(points, values):
            row = [repr(x) for x in pt.lam] + [repr(x) for x in pt.eta] + [repr(v)]
            fh.write(",".join(row) + "\n")
