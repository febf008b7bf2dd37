"""Ground-truth oracles on small trees.

Three independent routes to the optimum are kept deliberately separate from
the budget-state solver so they can arbitrate it:

* ``backward_induction``   plain stop-vs-continue recursion, no constraints;
* ``enumerate_pure``       exact maximum over deterministic tree-adapted
                           stop/control rules meeting the constraints;
* ``solve_lp``             linear program over stop/continue occupation
                           masses, the randomized-rule optimum on the tree.

The LP is solved by the package's own dense simplex; tiny instances can be
re-solved in exact rational arithmetic via ``solve_lp_exact``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import simplex
from .lattice import LatticeModel, build_lattice
from .model import EQUALITY, INEQUALITY, NEG_INF, Budget, ProblemInstance, ValidationError


class EnumerationCapError(ValidationError):
    """Predicted enumeration size exceeds the configured cap."""


class LpSizeError(ValidationError):
    """LP variable count exceeds the configured cap."""


class CertificateError(AssertionError):
    """An LP optimality certificate check failed."""


def _tree_lattice(problem, lattice=None, node_cap=2**20):
    if lattice is not None:
        if lattice.mode == "recombining":
            raise ValidationError("oracles require a non-recombining tree lattice")
        return lattice
    mode = "tree_control" if problem.coefficients.control_dependent_dynamics else "tree"
    return build_lattice(problem, mode=mode, node_cap=node_cap)


# ---------------------------------------------------------------------------
# Unconstrained backward induction
# ---------------------------------------------------------------------------


def backward_induction(lattice: LatticeModel, lam=None, eta=None):
    """Optimal stop/control value without budget constraints.

    ``lam``/``eta`` optionally price the inequality/equality cost rates into
    the running reward (reward - lam.g - eta.h); used by the dual bound.
    Returns (root_value, per_step_value_arrays).
    """
    problem = lattice.problem
    N = lattice.n_steps
    dt = lattice.dt
    ineq = problem.constraints.inequality_indices
    eq = problem.constraints.equality_indices

    values = [None] * (N + 1)
    values[N] = lattice.stage(N)["pi"].copy()
    for k in range(N - 1, -1, -1):
        st = lattice.stage(k)
        f = st["f"].copy()
        if lam is not None:
            for pos, ci in enumerate(ineq):
                f -= lam[pos] * st["cost"][ci]
        if eta is not None:
            for pos, ci in enumerate(eq):
                f -= eta[pos] * st["cost"][ci]
        vnext = values[k + 1]
        per_u = lattice.children[k].shape[1]
        best = None
        for j in range(lattice.n_controls):
            ch = lattice.children[k][:, j if per_u > 1 else 0, :]
            cont = f[:, j] * dt + 0.5 * (vnext[ch[:, 0]] + vnext[ch[:, 1]])
            best = cont if best is None else np.maximum(best, cont)
        values[k] = np.maximum(st["pi"], best)
    return float(values[0][0]), values


# ---------------------------------------------------------------------------
# Pure-rule enumeration
# ---------------------------------------------------------------------------


def enumeration_size(problem: ProblemInstance) -> int:
    """Number of distinct adapted stop/control rules from the root."""
    n_u = len(problem.control_set)
    count = 1
    for _ in range(problem.n_steps):
        count = 1 + n_u * count * count
        if count > 10**18:
            return count
    return count


def enumerate_pure(
    problem: ProblemInstance,
    lattice: LatticeModel = None,
    cap: int = 2_000_000,
    eq_tol: float = 1e-12,
):
    """Exact optimum over deterministic adapted rules, or -inf if infeasible.

    Works bottom-up on the achievable set of (expected value, expected cost
    vector) pairs per node; sibling sets combine by the half/half child
    weights.  Identical cost vectors are merged keeping the best value, which
    is lossless for the final budget filter.
    """
    size = enumeration_size(problem)
    if size > cap:
        raise EnumerationCapError(
            f"instance admits {size} adapted rules, above the cap {cap}"
        )
    lattice = _tree_lattice(problem, lattice)
    N = lattice.n_steps
    dt = lattice.dt
    n_c = len(problem.constraints)
    per_u = None

    # sets[i]: (n_pts, 1 + n_c) array for node i of the current step
    st = lattice.stage(N)
    sets = [st["pi"][i].reshape(1, 1).copy() for i in range(lattice.n_nodes(N))]
    if n_c:
        sets = [np.hstack([s, np.zeros((1, n_c))]) for s in sets]

    for k in range(N - 1, -1, -1):
        st = lattice.stage(k)
        per_u = lattice.children[k].shape[1]
        new_sets = []
        for i in range(lattice.n_nodes(k)):
            rows = [np.concatenate([[st["pi"][i]], np.zeros(n_c)])[None, :]]
            for j in range(lattice.n_controls):
                ch = lattice.children[k][i, j if per_u > 1 else 0]
                a, b = sets[ch[0]], sets[ch[1]]
                comb = 0.5 * (a[:, None, :] + b[None, :, :])
                comb = comb.reshape(-1, 1 + n_c)
                stage = np.concatenate([[st["f"][i, j]], st["cost"][:, i, j]]) * dt
                comb += stage
                rows.append(comb)
            merged = np.vstack(rows)
            new_sets.append(_merge_by_cost(merged, n_c))
        sets = new_sets

    root = sets[0]
    budget = problem.root_budget
    mask = np.ones(root.shape[0], dtype=bool)
    for pos, ci in enumerate(problem.constraints.inequality_indices):
        y = budget.y[pos]
        if math.isfinite(y):
            mask &= root[:, 1 + ci] <= y + eq_tol
    for pos, ci in enumerate(problem.constraints.equality_indices):
        mask &= np.abs(root[:, 1 + ci] - budget.z[pos]) <= eq_tol
    if not np.any(mask):
        return NEG_INF
    return float(np.max(root[mask, 0]))


def _merge_by_cost(rows, n_c):
    """Keep the best value per exact cost vector."""
    if n_c == 0:
        return rows[np.argmax(rows[:, 0])].reshape(1, -1)
    order = np.lexsort(tuple(rows[:, 1 + c] for c in range(n_c)) + (-rows[:, 0],))
    rows = rows[order]
    keys = rows[:, 1:]
    keep = np.ones(rows.shape[0], dtype=bool)
    keep[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    return rows[keep]


# ---------------------------------------------------------------------------
# Occupation-measure linear program
# ---------------------------------------------------------------------------


@dataclass
class OccupationLP:
    """Dense LP over stop masses s(node) and continue masses m(node, u).

    Variables are ordered stop-first then continue; ``var_names`` and
    ``row_names`` describe the layout for dumps and certificate messages.
    Inequality cost rows live in the ub block, flow and equality cost rows in
    the eq block.
    """

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    var_names: list
    row_names_ub: list
    row_names_eq: list
    cost_rows: dict            # constraint index -> ("ub"|"eq", block row)
    stop_slice: slice
    cont_index: dict           # (step, node, u_idx) -> var index

    @property
    def n_vars(self):
        return self.c.shape[0]

    def dump(self, path):
        """Plain textual listing: objective, rows, variable bounds."""
        with open(path, "w") as fh:
            fh.write("maximize\n")
            terms = " + ".join(
                f"{self.c[j]!r} {self.var_names[j]}" for j in range(self.n_vars) if self.c[j]
            )
            fh.write("  " + (terms or "0") + "\n")
            fh.write("subject to\n")
            for A, b, names, rel in (
                (self.A_ub, self.b_ub, self.row_names_ub, "<="),
                (self.A_eq, self.b_eq, self.row_names_eq, "="),
            ):
                for i in range(len(b)):
                    terms = " + ".join(
                        f"{A[i, j]!r} {self.var_names[j]}"
                        for j in range(self.n_vars)
                        if A[i, j]
                    )
                    fh.write(f"  {names[i]}: {terms} {rel} {b[i]!r}\n")
            fh.write("bounds\n")
            for name in self.var_names:
                fh.write(f"  0 <= {name}\n")


@dataclass
class LpSolution:
    status: str
    value: float
    stop_mass: np.ndarray = None
    cont_mass: dict = None
    lam: np.ndarray = None           # inequality multipliers, 0 for slack coords
    eta: np.ndarray = None
    achieved: np.ndarray = None      # expected accumulated cost per constraint
    x: np.ndarray = None
    duals_ub: np.ndarray = None
    duals_eq: np.ndarray = None
    lp: OccupationLP = None

    @property
    def feasible(self):
        return self.status == simplex.OPTIMAL

    def write_primal_csv(self, path):
        with open(path, "w") as fh:
            fh.write("variable,value\n")
            for name, v in zip(self.lp.var_names, self.x):
                fh.write(f"{name},{v!r}\n")

    def write_dual_csv(self, path):
        with open(path, "w") as fh:
            fh.write("row,dual\n")
            for name, v in zip(self.lp.row_names_ub, self.duals_ub):
                fh.write(f"{name},{v!r}\n")
            for name, v in zip(self.lp.row_names_eq, self.duals_eq):
                fh.write(f"{name},{v!r}\n")


def build_occupation_lp(
    problem: ProblemInstance,
    budget: Budget = None,
    lattice: LatticeModel = None,
    var_cap: int = 10_000,
) -> tuple:
    """Assemble the occupation LP on the non-recombining tree."""
    lattice = _tree_lattice(problem, lattice)
    budget = problem.root_budget if budget is None else budget
    N = lattice.n_steps
    dt = lattice.dt
    n_u = lattice.n_controls

    offsets = []
    n_vars = 0
    for k in range(N + 1):
        offsets.append(n_vars)
        n_vars += lattice.n_nodes(k)
    stop_count = n_vars
    cont_index = {}
    for k in range(N):
        for i in range(lattice.n_nodes(k)):
            for j in range(n_u):
                cont_index[(k, i, j)] = n_vars
                n_vars += 1
    if n_vars > var_cap:
        raise LpSizeError(f"occupation LP needs {n_vars} variables, above the cap {var_cap}")

    c = np.zeros(n_vars)
    var_names = [None] * n_vars
    for k in range(N + 1):
        st = lattice.stage(k)
        for i in range(lattice.n_nodes(k)):
            c[offsets[k] + i] = st["pi"][i]
            var_names[offsets[k] + i] = f"s[{k},{i}]"
    for (k, i, j), v in cont_index.items():
        st = lattice.stage(k)
        c[v] = st["f"][i, j] * dt
        var_names[v] = f"m[{k},{i},u{j}]"

    # flow rows: root mass one, then conservation at every later node
    eq_rows = []
    eq_rhs = []
    eq_names = []
    row = np.zeros(n_vars)
    row[offsets[0]] = 1.0
    for j in range(n_u):
        row[cont_index[(0, 0, j)]] = 1.0
    eq_rows.append(row)
    eq_rhs.append(1.0)
    eq_names.append("flow[root]")
    for k in range(1, N + 1):
        per_u = lattice.children[k - 1].shape[1]
        for i in range(lattice.n_nodes(k)):
            row = np.zeros(n_vars)
            row[offsets[k] + i] = 1.0
            if k < N:
                for j in range(n_u):
                    row[cont_index[(k, i, j)]] = 1.0
            # inflow: parents one step up
            p = lattice.parents[k][i]
            pc = lattice.parent_controls[k][i]
            if pc >= 0:
                row[cont_index[(k - 1, int(p), int(pc))]] -= lattice.child_prob
            else:
                for j in range(n_u):
                    row[cont_index[(k - 1, int(p), j)]] -= lattice.child_prob
            eq_rows.append(row)
            eq_rhs.append(0.0)
            eq_names.append(f"flow[{k},{i}]")

    ub_rows, ub_rhs, ub_names = [], [], []
    cost_rows = {}
    for pos, ci in enumerate(problem.constraints.inequality_indices):
        y = budget.y[pos]
        if not math.isfinite(y):
            continue
        row = np.zeros(n_vars)
        for (k, i, j), v in cont_index.items():
            row[v] = lattice.stage(k)["cost"][ci, i, j] * dt
        cost_rows[ci] = ("ub", len(ub_rows))
        ub_rows.append(row)
        ub_rhs.append(y)
        ub_names.append(f"cost[{problem.constraints.records[ci].label}]")
    for pos, ci in enumerate(problem.constraints.equality_indices):
        row = np.zeros(n_vars)
        for (k, i, j), v in cont_index.items():
            row[v] = lattice.stage(k)["cost"][ci, i, j] * dt
        cost_rows[ci] = ("eq", len(eq_rows))
        eq_rows.append(row)
        eq_rhs.append(budget.z[pos])
        eq_names.append(f"cost[{problem.constraints.records[ci].label}]")

    lp = OccupationLP(
        c=c,
        A_ub=np.array(ub_rows).reshape(len(ub_rows), n_vars),
        b_ub=np.array(ub_rhs),
        A_eq=np.array(eq_rows).reshape(len(eq_rows), n_vars),
        b_eq=np.array(eq_rhs),
        var_names=var_names,
        row_names_ub=ub_names,
        row_names_eq=eq_names,
        cost_rows=cost_rows,
        stop_slice=slice(0, stop_count),
        cont_index=cont_index,
    )
    return lp, lattice


def solve_lp(
    problem: ProblemInstance,
    budget: Budget = None,
    lattice: LatticeModel = None,
    var_cap: int = 10_000,
    tol: float = 1e-9,
) -> LpSolution:
    """Optimal randomized value on the tree with primal and dual output."""
    budget = problem.root_budget if budget is None else budget
    lp, lattice = build_occupation_lp(problem, budget, lattice, var_cap)
    res = simplex.solve(
        lp.c,
        A_ub=lp.A_ub if len(lp.b_ub) else None,
        b_ub=lp.b_ub if len(lp.b_ub) else None,
        A_eq=lp.A_eq,
        b_eq=lp.b_eq,
        tol=tol,
    )
    if res.status != simplex.OPTIMAL:
        return LpSolution(status=res.status, value=NEG_INF, lp=lp)
    x = res.x
    n_ub = len(lp.b_ub)
    duals_ub = res.duals[:n_ub] if res.duals is not None else np.zeros(n_ub)
    duals_eq = res.duals[n_ub:] if res.duals is not None else np.zeros(len(lp.b_eq))
    lam = np.zeros(problem.constraints.n_inequality)
    eta = np.zeros(problem.constraints.n_equality)
    achieved = np.zeros(len(problem.constraints))
    for ci in range(len(problem.constraints)):
        row = np.zeros(lp.n_vars)
        for (k, i, j), v in lp.cont_index.items():
            row[v] = lattice.stage(k)["cost"][ci, i, j] * lattice.dt
        achieved[ci] = float(row @ x)
    for pos, ci in enumerate(problem.constraints.inequality_indices):
        if ci in lp.cost_rows:
            kind, r = lp.cost_rows[ci]
            lam[pos] = float(duals_ub[r])
    for pos, ci in enumerate(problem.constraints.equality_indices):
        kind, r = lp.cost_rows[ci]
        eta[pos] = float(duals_eq[r])
    cont = {key: float(x[v]) for key, v in lp.cont_index.items() if x[v] > 0}
    return LpSolution(
        status=res.status,
        value=res.value,
        stop_mass=x[lp.stop_slice],
        cont_mass=cont,
        lam=lam,
        eta=eta,
        achieved=achieved,
        x=x,
        duals_ub=duals_ub,
        duals_eq=duals_eq,
        lp=lp,
    )


def solve_lp_exact(problem, budget=None, lattice=None, var_cap=2_000):
    """Exact rational LP value for tiny instances (golden-value source)."""
    lp, _ = build_occupation_lp(problem, budget, lattice, var_cap)
    status, value, x = simplex.solve_exact(
        lp.c.tolist(),
        A_ub=lp.A_ub.tolist() if len(lp.b_ub) else None,
        b_ub=lp.b_ub.tolist() if len(lp.b_ub) else None,
        A_eq=lp.A_eq.tolist(),
        b_eq=lp.b_eq.tolist(),
    )
    return status, value, x


@dataclass
class CertificateReport:
    primal_residual: float
    dual_residual: float
    slackness_residual: float
    gap: float
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(self.checks.values())


def lp_certificates(solution: LpSolution, tol: float = 1e-9, raise_on_fail: bool = True):
    """Audit primal/dual feasibility, complementary slackness and the gap."""
    if not solution.feasible:
        raise CertificateError("no certificates for an infeasible LP")
    lp = solution.lp
    x = solution.x
    y_ub = solution.duals_ub
    y_eq = solution.duals_eq

    worst_primal = 0.0
    bad_row = None
    if x.min() < -tol:
        bad_row = f"variable {lp.var_names[int(np.argmin(x))]} negative ({x.min():g})"
        worst_primal = -float(x.min())
    r_eq = lp.A_eq @ x - lp.b_eq
    if len(r_eq) and np.max(np.abs(r_eq)) > max(worst_primal, 0):
        worst_primal = float(np.max(np.abs(r_eq)))
    if len(r_eq) and np.max(np.abs(r_eq)) > tol and bad_row is None:
        bad_row = f"flow/equality row {lp.row_names_eq[int(np.argmax(np.abs(r_eq)))]}"
    if len(lp.b_ub):
        r_ub = lp.A_ub @ x - lp.b_ub
        if np.max(r_ub) > tol and bad_row is None:
            bad_row = f"cost row {lp.row_names_ub[int(np.argmax(r_ub))]}"
        worst_primal = max(worst_primal, float(np.max(r_ub)))

    # dual feasibility: reduced costs c - A^T y <= tol, y_ub >= -tol
    yA = np.zeros(lp.n_vars)
    if len(lp.b_ub):
        yA += lp.A_ub.T @ y_ub
    yA += lp.A_eq.T @ y_eq
    reduced = lp.c - yA
    worst_dual = float(max(np.max(reduced), 0.0))
    if len(lp.b_ub):
        worst_dual = max(worst_dual, float(max(-np.min(y_ub), 0.0)) if len(y_ub) else 0.0)
    bad_col = None
    if np.max(reduced) > tol:
        bad_col = lp.var_names[int(np.argmax(reduced))]

    # complementary slackness
    slack = 0.0
    slack_name = None
    comp_var = np.abs(x * reduced)
    if comp_var.size and np.max(comp_var) > slack:
        slack = float(np.max(comp_var))
        slack_name = f"variable {lp.var_names[int(np.argmax(comp_var))]}"
    if len(lp.b_ub):
        comp_row = np.abs((lp.b_ub - lp.A_ub @ x) * y_ub)
        if comp_row.size and np.max(comp_row) > slack:
            slack = float(np.max(comp_row))
            slack_name = f"cost row {lp.row_names_ub[int(np.argmax(comp_row))]}"

    b_all = float(np.dot(lp.b_ub, y_ub) if len(lp.b_ub) else 0.0) + float(
        np.dot(lp.b_eq, y_eq)
    )
    gap = abs(float(lp.c @ x) - b_all)

    checks = {
        "primal_feasible": worst_primal <= tol,
        "dual_feasible": worst_dual <= tol,
        "complementary_slackness": slack <= tol,
        "duality_gap": gap <= tol,
    }
    report = CertificateReport(
        primal_residual=worst_primal,
        dual_residual=worst_dual,
        slackness_residual=slack,
        gap=gap,
        checks=checks,
    )
    if raise_on_fail and not report.passed:
        detail = []
        if not checks["primal_feasible"]:
            detail.append(f"primal infeasible at {bad_row} ({worst_primal:g})")
        if not checks["dual_feasible"]:
            detail.append(f"dual infeasible at column {bad_col} ({worst_dual:g})")
        if not checks["complementary_slackness"]:
            detail.append(f"slackness violated at {slack_name} ({slack:g})")
        if not checks["duality_gap"]:
            detail.append(f"duality gap {gap:g}")
        raise CertificateError("; ".join(detail))
    return report
