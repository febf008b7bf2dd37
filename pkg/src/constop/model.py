"""Problem definitions: dynamics coefficients, rewards, cost constraints, budgets.

A problem instance bundles everything the solvers need: drift/diffusion of the
controlled state, running and terminal rewards, a finite list of expected-cost
constraints with their budget levels, a finite control set, and the time grid.
Instances are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NEG_INF = float("-inf")

INEQUALITY = "inequality"
EQUALITY = "equality"


class ValidationError(ValueError):
    """Raised when a problem definition fails a structural or sampled check."""


# ---------------------------------------------------------------------------
# Scalar function catalog
#
# Coefficients, rewards and costs are picked from a named parametric catalog
# rather than parsed from expressions.  Every family is a callable
# (s, path, u) -> float and also supports vectorised evaluation over a batch
# of current state values, which is what the lattice code uses.
# ---------------------------------------------------------------------------


class Family:
    """A named scalar function of (time, path, control).

    Families only look at the current value of the path (the problems in the
    catalog are Markovian); the path argument is accepted for interface
    compatibility and may be a float, an array, or a PathPrefix.
    """

    name = "abstract"
    #: True when the value does not depend on the control argument.
    control_free = True
    #: True when the value does not depend on the state argument.
    state_free = False
    #: True when the value does not depend on the time argument.
    time_free = True

    def __call__(self, s, path, u):
        x = _current_value(path)
        return float(self.eval_states(s, np.asarray(x, dtype=float), u))

    def eval_states(self, s, x, u):
        """Vectorised value for an array of current states ``x``."""
        raise NotImplementedError

    def bound_on(self, lo, hi):
        """Crude [min, max] bound of the value for states in [lo, hi].

        Used only for sizing budget grids; correctness does not depend on
        tightness.
        """
        xs = np.linspace(lo, hi, 65)
        vals = self.eval_states(0.0, xs, 0.0)
        vals = np.broadcast_to(vals, xs.shape)
        return float(np.min(vals)), float(np.max(vals))


def _current_value(path):
    """Extract the current (scalar) state from a path-like argument."""
    if isinstance(path, PathPrefix):
        return path.current
    arr = np.asarray(path, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    return float(arr.reshape(-1)[-1])


class Constant(Family):
    name = "constant"
    state_free = True

    def __init__(self, value=0.0):
        self.value = float(value)

    def eval_states(self, s, x, u):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def bound_on(self, lo, hi):
        return self.value, self.value


class Affine(Family):
    """a + b * x(s)."""

    name = "affine"

    def __init__(self, intercept=0.0, slope=1.0):
        self.intercept = float(intercept)
        self.slope = float(slope)

    def eval_states(self, s, x, u):
        return self.intercept + self.slope * np.asarray(x, dtype=float)


class Geometric(Family):
    """scale * x(s), the multiplicative-in-state coefficient."""

    name = "geometric"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def eval_states(self, s, x, u):
        return self.scale * np.asarray(x, dtype=float)


class Sinusoidal(Family):
    """amplitude * sin(frequency * x(s) + phase)."""

    name = "sinusoidal"

    def __init__(self, amplitude=1.0, frequency=1.0, phase=0.0):
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.phase = float(phase)

    def eval_states(self, s, x, u):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.sin(self.frequency * x + self.phase)

    def bound_on(self, lo, hi):
        a = abs(self.amplitude)
        return -a, a


class ControlLinear(Family):
    """a + b * u; state-free, used for control-dependent rewards and costs."""

    name = "control_linear"
    control_free = False
    state_free = True

    def __init__(self, intercept=0.0, slope=1.0):
        self.intercept = float(intercept)
        self.slope = float(slope)

    def eval_states(self, s, x, u):
        val = self.intercept + self.slope * float(u)
        return np.full_like(np.asarray(x, dtype=float), val)

    def bound_on(self, lo, hi):
        return min(self.intercept, self.intercept + self.slope), max(
            self.intercept, self.intercept + self.slope
        )


class Quadratic(Family):
    """scale * (x(s) - center)**2."""

    name = "quadratic"

    def __init__(self, scale=1.0, center=0.0):
        self.scale = float(scale)
        self.center = float(center)

    def eval_states(self, s, x, u):
        d = np.asarray(x, dtype=float) - self.center
        return self.scale * d * d


class Put(Family):
    """(strike - x(s))^+ , the classic exercise payoff."""

    name = "put"

    def __init__(self, strike=100.0, scale=1.0):
        self.strike = float(strike)
        self.scale = float(scale)

    def eval_states(self, s, x, u):
        return self.scale * np.maximum(self.strike - np.asarray(x, dtype=float), 0.0)


class Call(Family):
    """(x(s) - strike)^+ ."""

    name = "call"

    def __init__(self, strike=100.0, scale=1.0):
        self.strike = float(strike)
        self.scale = float(scale)

    def eval_states(self, s, x, u):
        return self.scale * np.maximum(np.asarray(x, dtype=float) - self.strike, 0.0)


class TimeAffine(Family):
    """a + b * s; state-free, used for deadline-style terminal rewards."""

    name = "time_affine"
    state_free = True
    time_free = False

    def __init__(self, intercept=0.0, slope=0.0):
        self.intercept = float(intercept)
        self.slope = float(slope)

    def eval_states(self, s, x, u):
        val = self.intercept + self.slope * float(s)
        return np.full_like(np.asarray(x, dtype=float), val)

    def bound_on(self, lo, hi):
        return self.intercept, self.intercept


FAMILIES = {
    cls.name: cls
    for cls in (
        Constant,
        Affine,
        Geometric,
        Sinusoidal,
        ControlLinear,
        Quadratic,
        Put,
        Call,
        TimeAffine,
    )
}


def make_family(spec) -> Family:
    """Build a catalog family from a {'family': name, **params} mapping."""
    if isinstance(spec, Family):
        return spec
    if isinstance(spec, (int, float)):
        return Constant(spec)
    params = dict(spec)
    try:
        name = params.pop("family")
    except KeyError:
        raise ValidationError(f"family spec missing 'family' key: {spec!r}") from None
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ValidationError(f"unknown family {name!r}; known: {sorted(FAMILIES)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for family {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# Path prefixes and domain types
# ---------------------------------------------------------------------------


class PathPrefix:
    """A sampled path on [0, t]: times plus values, used as initial data."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.shape[0] != self.values.shape[0]:
            raise ValidationError("path prefix: times and values length mismatch")
        if self.times.shape[0] == 0:
            raise ValidationError("path prefix must contain at least one sample")

    @classmethod
    def point(cls, t, x):
        return cls([t], [float(x)])

    @property
    def current(self):
        return float(self.values[-1])

    @property
    def end_time(self):
        return float(self.times[-1])

    def sup_distance(self, other):
        return float(np.max(np.abs(self.values - other.values)))


@dataclass(frozen=True)
class CoefficientSpec:
    """Drift and diffusion of the controlled state, with a Lipschitz modulus.

    ``drift`` maps (s, path, u) to an l-vector and ``diffusion`` to an l x d
    matrix; scalar catalog families are used directly when l = d = 1.
    ``lipschitz_modulus`` is a non-decreasing function of time that dominates
    the sampled Lipschitz ratio of both coefficients in the path argument.
    """

    drift: Family
    diffusion: Family
    lipschitz_modulus: object = None  # callable s -> positive float
    state_dim: int = 1
    noise_dim: int = 1
    markovian: bool = True

    def kappa(self, s):
        if self.lipschitz_modulus is None:
            return 1.0
        return float(self.lipschitz_modulus(s))

    @property
    def constant_dynamics(self):
        """True when drift and diffusion ignore state, control and time."""
        return (
            self.drift.state_free
            and self.drift.control_free
            and self.drift.time_free
            and self.diffusion.state_free
            and self.diffusion.control_free
            and self.diffusion.time_free
        )

    @property
    def control_dependent_dynamics(self):
        return not (self.drift.control_free and self.diffusion.control_free)


@dataclass(frozen=True)
class RewardSpec:
    """Running reward (accrued while continuing) and terminal reward."""

    running: Family
    terminal: Family
    terminal_lower_bound: float = -1.0

    def __post_init__(self):
        if not self.terminal_lower_bound < 0:
            raise ValidationError("terminal_lower_bound must be a negative real")


@dataclass(frozen=True)
class ConstraintRecord:
    kind: str
    cost: Family
    label: str

    def __post_init__(self):
        if self.kind not in (INEQUALITY, EQUALITY):
            raise ValidationError(f"constraint kind must be inequality/equality, got {self.kind!r}")


@dataclass(frozen=True)
class ConstraintSpec:
    """Ordered list of expected-cost constraints; may be empty."""

    records: tuple = ()

    def __post_init__(self):
        labels = [r.label for r in self.records]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"constraint labels must be unique, got {labels}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def inequality_indices(self):
        return tuple(i for i, r in enumerate(self.records) if r.kind == INEQUALITY)

    @property
    def equality_indices(self):
        return tuple(i for i, r in enumerate(self.records) if r.kind == EQUALITY)

    @property
    def n_inequality(self):
        return len(self.inequality_indices)

    @property
    def n_equality(self):
        return len(self.equality_indices)


def evaluate_cost(constraints: ConstraintSpec, index: int, s, path, u) -> float:
    """Value of the cost integrand of constraint ``index`` at (s, path, u)."""
    if not 0 <= index < len(constraints.records):
        raise IndexError(f"constraint index {index} out of range [0, {len(constraints.records)})")
    return float(constraints.records[index].cost(s, path, u))


@dataclass(frozen=True)
class Budget:
    """Remaining constraint levels: y per inequality (may be +inf), z per equality."""

    y: tuple = ()
    z: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))
        for v in self.z:
            if not math.isfinite(v):
                raise ValidationError("equality budget levels must be finite")
        for v in self.y:
            if math.isnan(v) or v == -math.inf:
                raise ValidationError("inequality budget levels must be finite or +inf")

    def matches(self, constraints: ConstraintSpec) -> bool:
        return len(self.y) == constraints.n_inequality and len(self.z) == constraints.n_equality


def slack_budget(constraints: ConstraintSpec) -> Budget:
    """The do-nothing budget: +inf per inequality, defined only without equalities.

    Feeding this budget to the solver reproduces the unconstrained problem.
    """
    if constraints.n_equality:
        raise ValidationError("slack budget undefined: equality constraints have no slack level")
    return Budget(y=(math.inf,) * constraints.n_inequality, z=())


@dataclass(frozen=True)
class ProblemInstance:
    coefficients: CoefficientSpec
    rewards: RewardSpec
    constraints: ConstraintSpec
    control_set: tuple
    start_time: float
    initial_path: PathPrefix
    root_budget: Budget
    n_steps: int
    dt: float
    name: str = "problem"

    def __post_init__(self):
        if len(self.control_set) == 0:
            raise ValidationError("control_set must be nonempty")
        object.__setattr__(self, "control_set", tuple(float(u) for u in self.control_set))
        if self.n_steps < 1:
            raise ValidationError("n_steps must be a positive integer")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError("dt must be positive and finite")
        if not math.isfinite(self.n_steps * self.dt):
            raise ValidationError("horizon n_steps * dt must be finite")
        if not self.root_budget.matches(self.constraints):
            raise ValidationError(
                "root budget shape does not match constraints: "
                f"{len(self.root_budget.y)} y-levels for {self.constraints.n_inequality} "
                f"inequalities, {len(self.root_budget.z)} z-levels for "
                f"{self.constraints.n_equality} equalities"
            )

    @property
    def horizon(self):
        return self.start_time + self.n_steps * self.dt

    def step_time(self, k):
        return self.start_time + k * self.dt

    @property
    def x0(self):
        return self.initial_path.current


def make_problem(
    drift,
    diffusion,
    terminal,
    running=0.0,
    constraints=(),
    control_set=(0.0,),
    budget=None,
    n_steps=1,
    dt=1.0,
    t0=0.0,
    x0=0.0,
    kappa=None,
    terminal_lower_bound=-1.0,
    name="problem",
) -> ProblemInstance:
    """Convenience constructor assembling an instance from catalog specs."""
    records = []
    for i, c in enumerate(constraints):
        if isinstance(c, ConstraintRecord):
            records.append(c)
        else:
            c = dict(c)
            records.append(
                ConstraintRecord(
                    kind=c["kind"],
                    cost=make_family(c["cost"]),
                    label=c.get("label", f"c{i}"),
                )
            )
    cspec = ConstraintSpec(tuple(records))
    if budget is None:
        budget = slack_budget(cspec)
    elif not isinstance(budget, Budget):
        budget = Budget(**budget)
    return ProblemInstance(
        coefficients=CoefficientSpec(
            drift=make_family(drift),
            diffusion=make_family(diffusion),
            lipschitz_modulus=kappa,
        ),
        rewards=RewardSpec(
            running=make_family(running),
            terminal=make_family(terminal),
            terminal_lower_bound=terminal_lower_bound,
        ),
        constraints=cspec,
        control_set=tuple(control_set),
        start_time=float(t0),
        initial_path=PathPrefix.point(float(t0), float(x0)),
        root_budget=budget,
        n_steps=int(n_steps),
        dt=float(dt),
        name=name,
    )


# ---------------------------------------------------------------------------
# Sampled coefficient validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    passed: bool
    worst_ratio: float
    worst_sample: dict = field(default_factory=dict)
    kappa_monotone: bool = True
    message: str = ""

    def __bool__(self):
        return self.passed


def validate_coefficients(
    spec: CoefficientSpec,
    horizon: float,
    sampler_seed: int,
    n_samples: int = 256,
    state_range: float = 100.0,
    control_set=(0.0,),
    eps_lip: float = 1e-6,
) -> ValidationReport:
    """Sample-based check of the Lipschitz and finiteness coefficient conditions.

    Draws (time, state-pair, control) samples and verifies
    |drift(s,x,u)-drift(s,x',u)| + |diffusion(s,x,u)-diffusion(s,x',u)|
    <= kappa(s) * (1 + eps_lip) * |x - x'|, plus finiteness of the
    coefficients at the zero path.  The report records the worst observed
    ratio and the sample attaining it.
    """
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    rng = np.random.default_rng(sampler_seed)
    times = rng.uniform(horizon * 1e-6, horizon, size=n_samples)

    # kappa must be non-decreasing on a sampled grid
    grid = np.linspace(horizon * 1e-6, horizon, 64)
    kvals = np.array([spec.kappa(s) for s in grid])
    kappa_monotone = bool(np.all(np.diff(kvals) >= -1e-12))

    worst_ratio = 0.0
    worst_scaled = 0.0  # ratio relative to kappa(s); the pass criterion
    worst_sample: dict = {}
    controls = list(control_set)
    for s in times:
        xa, xb = rng.uniform(-state_range, state_range, size=2)
        if xa == xb:
            continue
        u = controls[rng.integers(len(controls))]
        ba = spec.drift(s, xa, u)
        bb = spec.drift(s, xb, u)
        sa = spec.diffusion(s, xa, u)
        sb = spec.diffusion(s, xb, u)
        for v, tag, x in ((ba, "drift", xa), (bb, "drift", xb), (sa, "diffusion", xa), (sb, "diffusion", xb)):
            if not math.isfinite(v):
                raise ValidationError(
                    f"non-finite {tag} value {v!r} at sample s={s!r}, x={x!r}, u={u!r}"
                )
        ratio = (abs(ba - bb) + abs(sa - sb)) / abs(xa - xb)
        scaled = ratio / spec.kappa(s)
        if not worst_sample or scaled > worst_scaled:
            worst_scaled = scaled
            worst_ratio = ratio
            worst_sample = {"s": float(s), "x": float(xa), "x_prime": float(xb), "u": float(u)}

    # finiteness of sup_u |b(s,0,u)|^2 + |sigma(s,0,u)|^2 on sampled times
    for s in times[:32]:
        for u in controls:
            v = spec.drift(s, 0.0, u) ** 2 + spec.diffusion(s, 0.0, u) ** 2
            if not math.isfinite(v):
                raise ValidationError(f"non-finite coefficient at zero path: s={s!r}, u={u!r}")

    passed = kappa_monotone and worst_scaled <= 1.0 + eps_lip
    msg = "ok" if passed else (
        "kappa not non-decreasing" if not kappa_monotone else
        f"Lipschitz ratio {worst_ratio:.6g} exceeds kappa at {worst_sample}"
    )
    return ValidationReport(
        passed=passed,
        worst_ratio=worst_ratio,
        worst_sample=worst_sample,
        kappa_monotone=kappa_monotone,
        message=msg,
    )
