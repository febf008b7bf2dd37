"""Structural checks: driver martingales, stopping mixtures, recursion consistency.

Three kinds of audit live here.  The martingale check is statistical: on
simulated paths, compensated test functions of (driver, state) must have
zero-mean increments bucket by bucket, and an injected driver drift must
trip it.  The mixture identity and the recursion checks are exact finite
computations; their residuals are rounding noise, so anything above 1e-12
(or the interpolation tolerance for the recursion) is a bug, not noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeModel, simulate_paths
from .model import NEG_INF, ProblemInstance, ValidationError
from .solver import INEQUALITY, PolicyTable, ValueTable, forward_flow

Z_THRESHOLD = 4.0
MIN_BUCKET = 100


# ---------------------------------------------------------------------------
# Martingale statistics
# ---------------------------------------------------------------------------


@dataclass
class MartingaleStatistic:
    phi: str                 # test function id, e.g. "w0", "x0*x0", "w0*x0"
    bucket: int
    t_lo: float
    t_hi: float
    n_samples: int
    mean: float
    se: float
    z: float
    passed: bool
    skipped: bool = False

    def row(self):
        return (
            f"{self.phi},{self.bucket},{self.t_lo!r},{self.t_hi!r},{self.n_samples},"
            f"{self.mean!r},{self.se!r},{self.z!r},"
            f"{'SKIP' if self.skipped else ('PASS' if self.passed else 'FAIL')}"
        )


def _phi_family():
    """Coordinate functions and pairwise products of (driver, state)."""
    # indices: 0 -> driver w, 1 -> state x (scalar problem)
    singles = [("w0", (0,)), ("x0", (1,))]
    pairs = [("w0*w0", (0, 0)), ("w0*x0", (0, 1)), ("x0*x0", (1, 1))]
    return singles, pairs


def martingale_check(
    problem: ProblemInstance,
    policy,
    n_paths: int,
    seed: int,
    radius: float = None,
    noise_drift: float = 0.0,
    z_threshold: float = Z_THRESHOLD,
    min_bucket: int = MIN_BUCKET,
    n_buckets: int = None,
):
    """Per-bucket z-scores of compensated test-function increments.

    Simulates paths under ``policy`` (fixed control or callable) and, for
    each test function phi in the coordinate/product family, forms the
    one-step increments of

        phi(W, X) - integral of (drift . grad phi + 0.5 tr(diffusion
        diffusion^T hess phi))

    localized at the first exit from the ball of the given radius.  A bucket
    passes when |z| <= z_threshold; buckets with fewer than ``min_bucket``
    samples are skipped with a warning flag.  ``noise_drift`` corrupts the
    driver and exists to prove the check has power.

    The compensator uses the continuous-time generator, so with a nonzero
    drift the one-step scheme's second-order bias (drift^2 * dt^2 on
    quadratic state functions) is genuinely visible at large path counts in
    buckets whose martingale noise is tiny; that is the scheme's weak error
    being detected, not a failure of the harness.
    """
    ens = simulate_paths(problem, policy, n_paths, seed, noise_drift=noise_drift)
    N = ens.n_steps
    dt = ens.dt
    n_buckets = N if n_buckets is None else min(n_buckets, N)
    coeff = problem.coefficients
    W = ens.brownian
    X = ens.states
    U = ens.controls

    # drift/diffusion per (path, step), evaluated like the simulator did
    B = np.zeros((ens.n_paths, N))
    S = np.zeros((ens.n_paths, N))
    for k in range(N):
        t = problem.step_time(k)
        for uv in np.unique(U[:, k]):
            mask = U[:, k] == uv
            B[mask, k] = coeff.drift.eval_states(t, X[mask, k], uv)
            S[mask, k] = coeff.diffusion.eval_states(t, X[mask, k], uv)

    # localization: step k contributes while sup_{j<=k} |(W_j, X_j)| < radius
    if radius is None:
        alive = np.ones((ens.n_paths, N), dtype=bool)
    else:
        norm = np.sqrt(W**2 + X**2)
        hit = np.maximum.accumulate(norm >= radius, axis=1)
        alive = ~hit[:, :-1]
        tmax = problem.start_time + radius
        times = problem.start_time + dt * np.arange(N)
        alive &= times[None, :] < tmax

    coords = {0: W, 1: X}
    bbar = {0: np.zeros_like(B), 1: B}
    cov = {(0, 0): np.ones_like(S), (0, 1): S, (1, 1): S * S}

    increments = {}
    scales = {}
    singles, pairs = _phi_family()
    for name, (i,) in singles:
        v = coords[i]
        increments[name] = v[:, 1:] - v[:, :-1] - bbar[i] * dt
        scales[name] = float(np.max(np.abs(v))) + 1.0
    for name, (i, j) in pairs:
        vi, vj = coords[i], coords[j]
        comp = bbar[i] * vj[:, :-1] + bbar[j] * vi[:, :-1] + cov[(min(i, j), max(i, j))]
        increments[name] = vi[:, 1:] * vj[:, 1:] - vi[:, :-1] * vj[:, :-1] - comp * dt
        scales[name] = float(np.max(np.abs(vi * vj))) + 1.0

    edges = np.linspace(0, N, n_buckets + 1).astype(int)
    stats = []
    for name, _ in singles + pairs:
        inc = increments[name]
        # catastrophic cancellation floor: a bucket whose increments are all
        # equal up to rounding must score zero, not infinity
        se_floor = 5e-14 * scales[name]
        for b in range(n_buckets):
            lo, hi = edges[b], edges[b + 1]
            sel = alive[:, lo:hi]
            vals = inc[:, lo:hi][sel]
            n = vals.size
            t_lo = problem.step_time(lo)
            t_hi = problem.step_time(hi)
            if n < min_bucket:
                stats.append(
                    MartingaleStatistic(name, b, t_lo, t_hi, n, float("nan"),
                                        float("nan"), float("nan"), True, skipped=True)
                )
                continue
            mean = float(vals.mean())
            sd = float(vals.std(ddof=1))
            se = max(sd / math.sqrt(n), se_floor)
            z = mean / se
            stats.append(
                MartingaleStatistic(name, b, t_lo, t_hi, n, mean, se, float(z),
                                    abs(z) <= z_threshold)
            )
    return stats


def martingale_passed(stats) -> bool:
    return all(s.passed for s in stats if not s.skipped)


def write_martingale_csv(stats, path):
    with open(path, "w") as fh:
        fh.write("phi,bucket,t_lo,t_hi,n_samples,mean,se,z,status\n")
        for s in stats:
            fh.write(s.row() + "\n")


# ---------------------------------------------------------------------------
# Randomized-stopping mixture identity
# ---------------------------------------------------------------------------


@dataclass
class StopRuleProfile:
    """A randomized adapted stopping rule on a non-recombining binary tree.

    ``mass[k][i]`` is the probability of stopping at node i of step k given
    arrival along any path through it (the remainder stops at the horizon).
    The per-scenario conditional cdf and the level map

        level_time(scenario, level) = first step where cdf > level

    turn the rule into a mixture of scenario-deterministic rules indexed by
    a uniform level in (0, 1).
    """

    lattice: LatticeModel
    mass: list
    cdf: np.ndarray = field(init=False)       # (n_scenarios, N+1) cumulative
    pmf: np.ndarray = field(init=False)       # (n_scenarios, N+1) per-step mass

    def __post_init__(self):
        lat = self.lattice
        if lat.mode != "tree":
            raise ValidationError(
                "stopping profiles need a non-recombining tree with shared children"
            )
        N = lat.n_steps
        n_sc = lat.n_nodes(N)
        pmf = np.zeros((n_sc, N + 1))
        alive = np.ones(n_sc)
        for k in range(N + 1):
            nodes = np.arange(n_sc) >> (N - k)
            q = np.asarray(self.mass[k], dtype=float) if k < N else None
            if k < N:
                if np.any(q < -1e-15) or np.any(q > 1 + 1e-15):
                    raise ValidationError("stop probabilities must lie in [0, 1]")
                step_mass = q[nodes]
            else:
                step_mass = alive.copy()
            if np.any(step_mass > alive + 1e-12):
                raise ValidationError("stop probabilities sum above 1 along a path")
            pmf[:, k] = step_mass
            alive = alive - step_mass
        self.pmf = pmf
        self.cdf = np.cumsum(pmf, axis=1)
        if np.any(self.cdf > 1 + 1e-9) or np.any(np.diff(self.cdf, axis=1) < -1e-15):
            raise ValidationError("stop rule cdf must be nondecreasing within [0, 1]")

    @property
    def n_scenarios(self):
        return self.pmf.shape[0]

    def level_time(self, scenario: int, level: float) -> int:
        """First step whose cumulative stop mass exceeds ``level``.

        The horizon cdf is one up to rounding, so the index clamps there.
        """
        row = self.cdf[scenario]
        idx = int(np.searchsorted(row, level, side="right"))
        return min(idx, row.shape[0] - 1)

    def scenario_node(self, scenario: int, k: int) -> int:
        return scenario >> (self.lattice.n_steps - k)

    @classmethod
    def from_hazards(cls, lattice: LatticeModel, hazards) -> "StopRuleProfile":
        """Build from conditional-on-arrival stop probabilities per node.

        Hazards are automatically consistent (per-path masses sum to at most
        one); any [0, 1] assignment is a valid adapted rule.
        """
        survive = np.ones(lattice.n_nodes(0))
        mass = []
        for k in range(lattice.n_steps):
            q = np.clip(np.asarray(hazards[k], dtype=float), 0.0, 1.0)
            mass.append(survive * q)
            nxt = np.empty(lattice.n_nodes(k + 1))
            ch = lattice.children[k][:, 0, :]
            for m in (0, 1):
                nxt[ch[:, m]] = survive * (1.0 - q)
            survive = nxt
        return cls(lattice, mass)


def uniform_stop_profile(lattice: LatticeModel, probability: float) -> StopRuleProfile:
    hazards = [np.full(lattice.n_nodes(k), probability) for k in range(lattice.n_steps)]
    return StopRuleProfile.from_hazards(lattice, hazards)


def mixture_identity_check(profile: StopRuleProfile, payoff) -> float:
    """|direct expectation - level-mixture expectation| for the given payoff.

    ``payoff(k, scenario, lattice) -> float`` is evaluated at the stopping
    step along the scenario's path.  Both sides are finite sums over the
    same data grouped differently (per-step masses versus level intervals),
    so the residual is pure floating rounding: <= 1e-12 on sane payoffs.
    """
    lat = profile.lattice
    N = lat.n_steps
    n_sc = profile.n_scenarios
    p_sc = 0.5 ** N

    table = np.empty((n_sc, N + 1))
    for sc in range(n_sc):
        for k in range(N + 1):
            table[sc, k] = payoff(k, sc, lat)

    lhs = float(np.sum(profile.pmf * table) * p_sc)

    levels = np.unique(np.concatenate([[0.0, 1.0], profile.cdf.reshape(-1)]))
    levels = levels[(levels >= 0.0) & (levels <= 1.0)]
    rhs = 0.0
    for a, b in zip(levels[:-1], levels[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        total = 0.0
        for sc in range(n_sc):
            k = profile.level_time(sc, mid)
            total += table[sc, k]
        rhs += (b - a) * total * p_sc
    return abs(lhs - rhs)


def total_reward_payoff(problem: ProblemInstance, u_index: int = 0):
    """Accumulated running reward plus terminal reward at the stop step."""

    def payoff(k, scenario, lattice):
        acc = 0.0
        for j in range(k):
            node = scenario >> (lattice.n_steps - j)
            acc += lattice.stage(j)["f"][node, u_index] * lattice.dt
        node_k = scenario >> (lattice.n_steps - k)
        return acc + lattice.stage(k)["pi"][node_k]

    return payoff


def cost_payoff(problem: ProblemInstance, cons_index: int, u_index: int = 0):
    """Accumulated cost of one constraint up to the stop step."""

    def payoff(k, scenario, lattice):
        acc = 0.0
        for j in range(k):
            node = scenario >> (lattice.n_steps - j)
            acc += lattice.stage(j)["cost"][cons_index, node, u_index] * lattice.dt
        return acc

    return payoff


def level_cost_spread(profile: StopRuleProfile, payoff, target: float):
    """(min over level intervals of |E[payoff | level] - target|, |mixture - target|).

    Demonstrates that individual level rules can each violate an equality
    target that the mixture meets exactly.
    """
    lat = profile.lattice
    N = lat.n_steps
    n_sc = profile.n_scenarios
    p_sc = 0.5 ** N
    table = np.empty((n_sc, N + 1))
    for sc in range(n_sc):
        for k in range(N + 1):
            table[sc, k] = payoff(k, sc, lat)
    levels = np.unique(np.concatenate([[0.0, 1.0], profile.cdf.reshape(-1)]))
    levels = levels[(levels >= 0.0) & (levels <= 1.0)]
    min_gap = math.inf
    mixture = 0.0
    for a, b in zip(levels[:-1], levels[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        cond = sum(table[sc, profile.level_time(sc, mid)] for sc in range(n_sc)) * p_sc
        min_gap = min(min_gap, abs(cond - target))
        mixture += (b - a) * cond
    return min_gap, abs(mixture - target)


# ---------------------------------------------------------------------------
# Recursion consistency and monotonicity audits
# ---------------------------------------------------------------------------


def dpp_consistency_check(
    value_table: ValueTable,
    policy_table: PolicyTable,
    lattice: LatticeModel,
    k: int,
) -> float:
    """|root value - (collected reward + surviving mass . slice k values)|.

    The policy's own child-budget allocations carry the mass to step k, so
    the residual is zero whenever every budget reached lies on the grid and
    bounded by the interpolation error otherwise.
    """
    if not 0 <= k <= lattice.n_steps:
        raise ValidationError(f"intermediate step {k} out of range")
    collected, _, frontier = forward_flow(
        policy_table, lattice, stop_at=k, check=False
    )
    total = collected
    for (node, cell), p in frontier.items():
        v = value_table.values[k][node, cell]
        if v == NEG_INF:
            return math.inf
        total += p * v
    root = value_table.root_value
    if root == NEG_INF:
        return 0.0 if not frontier and collected == 0.0 else math.inf
    return abs(total - root)


@dataclass
class MonotonicityReport:
    violations: int
    worst_gap: float
    worst_cell: tuple = None

    @property
    def passed(self):
        return self.violations == 0


def monotonicity_audit(value_table: ValueTable, slack: float = 1e-12) -> MonotonicityReport:
    """Scan all cells for a value that decreases when an inequality budget grows."""
    grid = value_table.grid
    report = MonotonicityReport(0, 0.0)
    axes_ineq = [c for c, a in enumerate(grid.axes) if a.kind == INEQUALITY]
    if not axes_ineq:
        return report
    for k, slab in enumerate(value_table.values):
        for node in range(slab.shape[0]):
            v = slab[node].reshape(grid.shape)
            for c in axes_ineq:
                lo = np.moveaxis(v, c, 0)[:-1]
                hi = np.moveaxis(v, c, 0)[1:]
                scale = np.where(np.isfinite(lo), np.abs(lo), 0.0)
                bad = hi < lo - slack * (1.0 + scale)
                if np.any(bad):
                    report.violations += int(np.count_nonzero(bad))
                    with np.errstate(invalid="ignore"):
                        gap = np.where(bad, lo - hi, 0.0)
                    g = float(np.nanmax(gap[np.isfinite(gap)])) if np.any(np.isfinite(gap)) else math.inf
                    if g > report.worst_gap:
                        report.worst_gap = g
                        report.worst_cell = (k, node, c)
    return report
