"""Run configuration: YAML with nested sections, decimals, and the "inf" token.

A config bundles the problem (catalog family selections, control set,
budgets, grid of time steps), solver settings, oracle/dual/check settings,
the seed, and the output directory.  Flags on the command line override the
corresponding fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from .model import ProblemInstance, ValidationError, make_problem


class ConfigError(ValueError):
    pass


def _parse_level(v):
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf", ".inf", "infinity"):
            return math.inf
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"budget level {v!r} is not a decimal or 'inf'") from None
    return float(v)


@dataclass
class SolverSection:
    mode: str = "pure"
    grid_points: int = 65
    tol: float = 1e-9
    tol_alloc: float = 1e-9
    lattice: str = "auto"
    node_cap: int = 2**20
    grid_bounds: dict = field(default_factory=dict)


@dataclass
class OracleSection:
    enumeration_cap: int = 2_000_000
    lp_var_cap: int = 10_000


@dataclass
class DualSection:
    box: float = 10.0
    points: int = 201
    refine: bool = True


@dataclass
class CheckSection:
    n_paths: int = 100_000
    radius: float = None
    z_threshold: float = 4.0
    min_bucket: int = 100
    noise_drift: float = 0.0
    mixture_rules: int = 20
    dpp_tol: float = 1e-6


@dataclass
class RunConfig:
    problem: dict
    solver: SolverSection = field(default_factory=SolverSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    dual: DualSection = field(default_factory=DualSection)
    check: CheckSection = field(default_factory=CheckSection)
    seed: int = 0
    output_dir: str = "out"

    def build_problem(self) -> ProblemInstance:
        p = dict(self.problem)
        budget = p.get("budget")
        if budget is not None:
            budget = {
                "y": tuple(_parse_level(v) for v in budget.get("y", ())),
                "z": tuple(_parse_level(v) for v in budget.get("z", ())),
            }
        try:
            return make_problem(
                drift=p.get("drift", 0.0),
                diffusion=p.get("diffusion", 1.0),
                terminal=p.get("terminal_reward", 0.0),
                running=p.get("running_reward", 0.0),
                constraints=p.get("constraints", ()),
                control_set=tuple(p.get("control_set", (0.0,))),
                budget=budget,
                n_steps=int(p.get("n_steps", 1)),
                dt=float(p.get("dt", 1.0)),
                t0=float(p.get("t0", 0.0)),
                x0=float(p.get("x0", 0.0)),
                kappa=(lambda s, _k=float(p["kappa"]): _k) if "kappa" in p else None,
                terminal_lower_bound=float(p.get("terminal_lower_bound", -1.0)),
                name=str(p.get("name", "problem")),
            )
        except (ValidationError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid problem section: {exc}") from exc


def _section(cls, data, name):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return cls(**data)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict) or "problem" not in raw:
        raise ConfigError("config must be a mapping with a 'problem' section")
    known = {"problem", "solver", "oracle", "dual", "check", "seed", "output_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    return RunConfig(
        problem=raw["problem"],
        solver=_section(SolverSection, raw.get("solver"), "solver"),
        oracle=_section(OracleSection, raw.get("oracle"), "oracle"),
        dual=_section(DualSection, raw.get("dual"), "dual"),
        check=_section(CheckSection, raw.get("check"), "check"),
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "out")),
    )
