"""Binary-lattice discretization of the controlled dynamics.

The driving noise is a single +/-1 Rademacher component per step, so the
one-step increment is  b(s, x, u) * dt + sigma(s, x, u) * sqrt(dt) * xi  with
xi in {-1, +1}, each child carrying probability 1/2.  The increments match the
continuous driver's mean and covariance exactly at one step, and small trees
can be enumerated exactly, which is what the oracles rely on.

Three layouts are supported:

* ``tree``         non-recombining, children shared across controls
                   (dynamics do not depend on the control),
* ``tree_control`` non-recombining, branching on (control, noise),
* ``recombining``  integer random-walk lattice, exact only for constant
                   drift/diffusion.

Lattices are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import NEG_INF, ProblemInstance, ValidationError

SQRT_DT_SIGN = (-1.0, 1.0)  # child ordering: down move first, then up


class SizingError(ValidationError):
    """Tree would exceed the configured node cap."""


@dataclass
class LatticeModel:
    problem: ProblemInstance
    mode: str                       # "tree" | "tree_control" | "recombining"
    states: list                    # states[k]: (n_k,) float array
    children: list                  # children[k]: (n_k, n_u_eff, 2) int array
    parents: list                   # parents[k]: (n_k,) int array (k >= 1)
    parent_controls: list           # parent_controls[k]: (n_k,) int, -1 if shared
    dt: float
    n_steps: int
    noise_dim: int = 1

    #: probability of each child of a (node, control) pair
    child_prob: float = 0.5

    _stage: dict = field(default_factory=dict, repr=False)

    @property
    def n_controls(self):
        return len(self.problem.control_set)

    @property
    def control_branching(self):
        return self.mode == "tree_control"

    def n_nodes(self, k):
        return self.states[k].shape[0]

    @property
    def total_nodes(self):
        return sum(s.shape[0] for s in self.states)

    def step_time(self, k):
        return self.problem.step_time(k)

    def node_offset(self, k):
        """Global-id offset of step k (ids are contiguous per step)."""
        return sum(self.states[j].shape[0] for j in range(k))

    def child_indices(self, k, node, u_idx):
        """Child node indices at step k+1 for (node, control index)."""
        ch = self.children[k]
        if ch.shape[1] == 1:
            return ch[node, 0]
        return ch[node, u_idx]

    # -- per-step evaluated coefficient / reward / cost arrays ---------------

    def stage(self, k):
        """Evaluated stage data at step k, cached.

        Returns a dict with
          'pi'    (n_k,)            terminal reward if stopping here
          'f'     (n_k, n_u)        running reward rate per control
          'cost'  (n_c, n_k, n_u)   constraint cost rates per control
          'b','s' (n_k, n_u)        drift and diffusion values
        """
        if k in self._stage:
            return self._stage[k]
        p = self.problem
        t = self.step_time(k)
        x = self.states[k]
        n_u = self.n_controls
        f = np.empty((x.shape[0], n_u))
        b = np.empty_like(f)
        s = np.empty_like(f)
        cost = np.empty((len(p.constraints), x.shape[0], n_u))
        for j, u in enumerate(p.control_set):
            f[:, j] = p.rewards.running.eval_states(t, x, u)
            b[:, j] = p.coefficients.drift.eval_states(t, x, u)
            s[:, j] = p.coefficients.diffusion.eval_states(t, x, u)
            for c, rec in enumerate(p.constraints):
                cost[c, :, j] = rec.cost.eval_states(t, x, u)
        pi = np.asarray(p.rewards.terminal.eval_states(t, x, 0.0), dtype=float)
        pi = np.broadcast_to(pi, x.shape).copy()
        for name, arr in (("pi", pi), ("f", f), ("cost", cost), ("b", b), ("sigma", s)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite {name} value on lattice at step {k}")
        if np.min(pi) < p.rewards.terminal_lower_bound:
            raise ValidationError(
                f"terminal reward {np.min(pi):g} below its declared lower bound "
                f"{p.rewards.terminal_lower_bound:g} at step {k}"
            )
        data = {"pi": pi, "f": f, "cost": cost, "b": b, "sigma": s}
        self._stage[k] = data
        return data

    def dump_csv(self, path):
        """Write (step, node_id, parent_id, control, child_id, prob, state) rows."""
        with open(path, "w") as fh:
            fh.write("step,node_id,parent_id,control,child_id,prob,state\n")
            for k in range(self.n_steps + 1):
                off = self.node_offset(k)
                off_next = off + self.n_nodes(k)
                for i in range(self.n_nodes(k)):
                    parent = self.parents[k][i] if k > 0 else -1
                    parent_id = parent + self.node_offset(k - 1) if k > 0 else -1
                    if k == self.n_steps:
                        fh.write(f"{k},{off + i},{parent_id},,,,{self.states[k][i]!r}\n")
                        continue
                    for j, u in enumerate(self.problem.control_set):
                        u_idx = j if self.children[k].shape[1] > 1 else 0
                        for c in self.child_indices(k, i, u_idx):
                            fh.write(
                                f"{k},{off + i},{parent_id},{u!r},{off_next + c},"
                                f"{self.child_prob!r},{self.states[k][i]!r}\n"
                            )


def _auto_mode(problem: ProblemInstance) -> str:
    coeff = problem.coefficients
    if coeff.markovian and coeff.constant_dynamics:
        return "recombining"
    if coeff.control_dependent_dynamics:
        return "tree_control"
    return "tree"


def build_lattice(problem: ProblemInstance, mode="auto", node_cap=2**20) -> LatticeModel:
    """Discretize the instance into a complete depth-N lattice.

    ``mode='auto'`` picks the recombining layout when it is exact (constant
    drift and diffusion) and a non-recombining tree otherwise.  Non-recombining
    trees whose leaf count would exceed ``node_cap`` raise SizingError.
    """
    coeff = problem.coefficients
    if coeff.state_dim != 1 or coeff.noise_dim != 1:
        raise ValidationError("only scalar state and a single noise component are supported")
    if mode == "auto":
        mode = _auto_mode(problem)
    if mode == "recombining" and not coeff.constant_dynamics:
        raise ValidationError(
            "recombining layout is exact only for constant drift/diffusion; "
            "use mode='tree' for this instance"
        )
    if mode in ("tree", "tree_control"):
        if mode == "tree" and coeff.control_dependent_dynamics:
            mode = "tree_control"
        branch = 2 * (len(problem.control_set) if mode == "tree_control" else 1)
        leaves = branch ** problem.n_steps
        if leaves > node_cap:
            raise SizingError(
                f"non-recombining tree needs {leaves} leaves at depth {problem.n_steps}; "
                f"raise node_cap to at least {leaves} (current {node_cap})"
            )
    builder = {
        "tree": _build_tree,
        "tree_control": _build_tree,
        "recombining": _build_recombining,
    }
    try:
        fn = builder[mode]
    except KeyError:
        raise ValidationError(f"unknown lattice mode {mode!r}") from None
    return fn(problem, mode)


def _n_controls(problem):
    return len(problem.control_set)


def _build_tree(problem: ProblemInstance, mode: str) -> LatticeModel:
    coeff = problem.coefficients
    dt = problem.dt
    sq = math.sqrt(dt)
    n_u = _n_controls(problem)
    n_u_eff = n_u if mode == "tree_control" else 1

    states = [np.array([problem.x0])]
    children, parents, parent_controls = [], [np.array([], dtype=np.int64)], [np.array([], dtype=np.int64)]
    for k in range(problem.n_steps):
        x = states[k]
        t = problem.step_time(k)
        n_k = x.shape[0]
        ch = np.empty((n_k, n_u_eff, 2), dtype=np.int64)
        nxt = np.empty(n_k * n_u_eff * 2)
        par = np.empty(n_k * n_u_eff * 2, dtype=np.int64)
        pctl = np.empty(n_k * n_u_eff * 2, dtype=np.int64)
        for j in range(n_u_eff):
            u = problem.control_set[j] if mode == "tree_control" else problem.control_set[0]
            b = np.asarray(coeff.drift.eval_states(t, x, u), dtype=float)
            s = np.asarray(coeff.diffusion.eval_states(t, x, u), dtype=float)
            b = np.broadcast_to(b, x.shape)
            s = np.broadcast_to(s, x.shape)
            for m, sign in enumerate(SQRT_DT_SIGN):
                idx = (np.arange(n_k) * n_u_eff + j) * 2 + m
                nxt[idx] = x + b * dt + s * sq * sign
                par[idx] = np.arange(n_k)
                pctl[idx] = j if mode == "tree_control" else -1
                ch[:, j, m] = idx
        if not np.all(np.isfinite(nxt)):
            raise ValidationError(f"non-finite state produced at step {k + 1}")
        states.append(nxt)
        children.append(ch)
        parents.append(par)
        parent_controls.append(pctl)
    return LatticeModel(
        problem=problem,
        mode=mode,
        states=states,
        children=children,
        parents=parents,
        parent_controls=parent_controls,
        dt=dt,
        n_steps=problem.n_steps,
    )


def _build_recombining(problem: ProblemInstance, mode: str) -> LatticeModel:
    coeff = problem.coefficients
    dt = problem.dt
    sq = math.sqrt(dt)
    b = float(coeff.drift(problem.start_time + dt, problem.x0, problem.control_set[0]))
    s = float(coeff.diffusion(problem.start_time + dt, problem.x0, problem.control_set[0]))

    states, children, parents, parent_controls = [np.array([problem.x0])], [], [np.array([], dtype=np.int64)], [np.array([], dtype=np.int64)]
    for k in range(problem.n_steps):
        n_k = k + 1
        # lattice level m of node i at step k is 2*i - k (down-first ordering)
        ch = np.empty((n_k, 1, 2), dtype=np.int64)
        ch[:, 0, 0] = np.arange(n_k)       # down: level m - 1 -> index i
        ch[:, 0, 1] = np.arange(n_k) + 1   # up:   level m + 1 -> index i + 1
        children.append(ch)
        levels = 2.0 * np.arange(k + 2) - (k + 1)
        states.append(problem.x0 + (k + 1) * b * dt + s * sq * levels)
        # convention: parent of child i is min(i, n_k - 1); used for dumps only
        parents.append(np.minimum(np.arange(k + 2), n_k - 1).astype(np.int64))
        parent_controls.append(np.full(k + 2, -1, dtype=np.int64))
    return LatticeModel(
        problem=problem,
        mode=mode,
        states=states,
        children=children,
        parents=parents,
        parent_controls=parent_controls,
        dt=dt,
        n_steps=problem.n_steps,
    )


def transition(lattice: LatticeModel, node, u):
    """Stored one-step distribution from ``node`` under control ``u``.

    ``node`` is a (step, index) pair; returns a list of ((step+1, child_index),
    probability) with probabilities summing to one.
    """
    k, i = node
    if not (0 <= k < lattice.n_steps):
        raise ValueError(f"no transitions from step {k}")
    if not (0 <= i < lattice.n_nodes(k)):
        raise ValueError(f"unknown node {node}")
    try:
        u_idx = lattice.problem.control_set.index(float(u))
    except ValueError:
        raise ValueError(f"control {u!r} not in control set") from None
    eff = u_idx if lattice.children[k].shape[1] > 1 else 0
    return [((k + 1, int(c)), lattice.child_prob) for c in lattice.child_indices(k, i, eff)]


# ---------------------------------------------------------------------------
# Seeded path simulation (Euler scheme with the same Rademacher driver)
# ---------------------------------------------------------------------------


@dataclass
class PathEnsemble:
    seed: int
    dt: float
    start_time: float
    states: np.ndarray        # (n_paths, N+1)
    brownian: np.ndarray      # (n_paths, N+1), driver paths started at 0
    controls: np.ndarray      # (n_paths, N)
    stop_steps: np.ndarray    # (n_paths,), N when never stopped early
    running_reward: np.ndarray
    terminal_reward: np.ndarray
    costs: np.ndarray         # (n_constraints, n_paths)

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.states.shape[1] - 1

    def total_reward(self):
        return self.running_reward + self.terminal_reward


def _control_lookup(problem, policy):
    """Normalize the policy argument to a callable (k, states) -> control array."""
    if policy is None:
        u0 = problem.control_set[0]
        return lambda k, x: np.full(x.shape, u0)
    if isinstance(policy, (int, float)):
        u = float(policy)
        if u not in problem.control_set:
            raise ValidationError(f"fixed control {u!r} not in control set")
        return lambda k, x: np.full(x.shape, u)
    if callable(policy):
        return lambda k, x: np.broadcast_to(np.asarray(policy(k, x), dtype=float), x.shape)
    raise ValidationError(f"unsupported policy object {type(policy).__name__}; "
                          "use a fixed control or a callable(k, states)")


def simulate_paths(
    problem: ProblemInstance,
    policy,
    n_paths: int,
    seed: int,
    noise_drift: float = 0.0,
    stop_rule=None,
) -> PathEnsemble:
    """Simulate Euler paths under the Rademacher driver.

    ``policy`` is a fixed control value or a callable (step, states)->controls.
    ``noise_drift`` adds a deterministic drift to the driver increments and is
    meant for negative-control diagnostics only.  ``stop_rule`` is an optional
    callable (step, states)->bool array requesting early stopping; paths run
    to the horizon otherwise.  Reproducible given (seed, n_paths): the driver
    signs come from a counter-based generator keyed by the seed, one row of
    the sign array per path.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be at least 1")
    N = problem.n_steps
    dt = problem.dt
    sq = math.sqrt(dt)
    pick = _control_lookup(problem, policy)
    rng = np.random.Generator(np.random.Philox(key=seed))
    signs = rng.integers(0, 2, size=(n_paths, N)).astype(np.float64) * 2.0 - 1.0

    states = np.empty((n_paths, N + 1))
    brownian = np.zeros((n_paths, N + 1))
    controls = np.empty((n_paths, N))
    running = np.zeros(n_paths)
    costs = np.zeros((len(problem.constraints), n_paths))
    stop_steps = np.full(n_paths, N, dtype=np.int64)
    terminal = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)

    states[:, 0] = problem.x0
    coeff = problem.coefficients
    for k in range(N):
        t = problem.step_time(k)
        x = states[:, k]
        if stop_rule is not None:
            req = np.asarray(stop_rule(k, x), dtype=bool) & alive
            if np.any(req):
                terminal[req] = problem.rewards.terminal.eval_states(t, x[req], 0.0)
                stop_steps[req] = k
                alive &= ~req
        u = pick(k, x)
        controls[:, k] = u
        dw = sq * signs[:, k] + noise_drift * dt
        brownian[:, k + 1] = brownian[:, k] + dw
        b = np.zeros(n_paths)
        s = np.zeros(n_paths)
        f = np.zeros(n_paths)
        c = np.zeros((len(problem.constraints), n_paths))
        for uv in np.unique(u):
            m = u == uv
            b[m] = coeff.drift.eval_states(t, x[m], uv)
            s[m] = coeff.diffusion.eval_states(t, x[m], uv)
            f[m] = problem.rewards.running.eval_states(t, x[m], uv)
            for ci, rec in enumerate(problem.constraints):
                c[ci, m] = rec.cost.eval_states(t, x[m], uv)
        running += np.where(alive, f * dt, 0.0)
        costs += np.where(alive, c * dt, 0.0)
        states[:, k + 1] = np.where(alive, x + b * dt + s * dw, x)
    t_end = problem.step_time(N)
    if np.any(alive):
        terminal[alive] = problem.rewards.terminal.eval_states(t_end, states[alive, N], 0.0)
    if not np.all(np.isfinite(states)):
        raise ValidationError("simulation produced non-finite states")
    return PathEnsemble(
        seed=seed,
        dt=dt,
        start_time=problem.start_time,
        states=states,
        brownian=brownian,
        controls=controls,
        stop_steps=stop_steps,
        running_reward=running,
        terminal_reward=terminal,
        costs=costs,
    )
