import pytest

from constop.model import make_problem


@pytest.fixture(scope="session")
def put_problem():
    # two-step exercise problem on the unit walk: root value 1/2
    return make_problem(
        drift=0.0,
        diffusion=1.0,
        terminal={"family": "put", "strike": 100.0},
        n_steps=2,
        dt=1.0,
        x0=100.0,
        name="put2",
    )


@pytest.fixture(scope="session")
def gap_problem():
    # depth-1 instance: stop now (reward 1) or at the horizon (reward 0);
    # the half-unit time budget is met by no deterministic rule
    return make_problem(
        drift=0.0,
        diffusion=1.0,
        terminal={"family": "time_affine", "intercept": 1.0, "slope": -1.0},
        constraints=[{"kind": "equality", "cost": 1.0, "label": "clock"}],
        budget={"y": (), "z": (0.5,)},
        n_steps=1,
        dt=1.0,
        x0=0.0,
        name="gap",
    )


def wald_problem(z):
    # symmetric unit walk from 0, payoff x^2, expected duration pinned to z
    return make_problem(
        drift=0.0,
        diffusion=1.0,
        terminal={"family": "quadratic"},
        constraints=[{"kind": "equality", "cost": 1.0, "label": "clock"}],
        budget={"y": (), "z": (float(z),)},
        n_steps=4,
        dt=1.0,
        x0=0.0,
        name=f"wald-{z}",
    )


@pytest.fixture(scope="session")
def wald3():
    return wald_problem(3.0)
