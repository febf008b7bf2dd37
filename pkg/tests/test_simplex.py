from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import linprog

from constop import simplex


def test_basic_maximization():
    res = simplex.solve([3, 2], A_ub=[[1, 1], [1, 3]], b_ub=[4, 6])
    assert res.status == simplex.OPTIMAL
    assert res.value == pytest.approx(12.0, abs=1e-12)
    assert res.x == pytest.approx([4.0, 0.0])


def test_equality_rows_and_duals():
    res = simplex.solve([2, 1], A_ub=[[1, 1]], b_ub=[3], A_eq=[[1, -1]], b_eq=[1])
    assert res.value == pytest.approx(5.0, abs=1e-12)
    # shadow prices: d(value)/d(b_ub) and d(value)/d(b_eq)
    assert res.duals == pytest.approx([1.5, 0.5], abs=1e-9)


def test_infeasible_and_unbounded():
    assert simplex.solve([1], A_ub=[[1]], b_ub=[-1], A_eq=[[1]], b_eq=[5]).status \
        == simplex.INFEASIBLE
    assert simplex.solve([1], A_ub=[[-1]], b_ub=[0]).status == simplex.UNBOUNDED


def test_degenerate_instance_terminates():
    # classic cycling-prone instance; Bland's rule must terminate
    c = [0.75, -150, 0.02, -6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    b = [0, 0, 1]
    res = simplex.solve(c, A_ub=A, b_ub=b)
    assert res.status == simplex.OPTIMAL
    assert res.value == pytest.approx(0.05, abs=1e-9)


def test_exact_rational_matches_float():
    status, value, x = simplex.solve_exact(
        [2, 1], A_ub=[[1, 1]], b_ub=[3], A_eq=[[1, -1]], b_eq=[1]
    )
    assert status == simplex.OPTIMAL
    assert value == Fraction(5)
    assert x == [Fraction(2), Fraction(1)]


@pytest.mark.parametrize("trial", range(60))
def test_random_against_scipy(trial):
    rng = np.random.default_rng(1000 + trial)
    n = int(rng.integers(1, 7))
    m_ub = int(rng.integers(1, 5))
    m_eq = int(rng.integers(0, 3))
    A = rng.normal(size=(m_ub, n)).round(3)
    b = rng.uniform(0.1, 2.0, size=m_ub).round(3)
    c = rng.normal(size=n).round(3)
    Ae = rng.normal(size=(m_eq, n)).round(3) if m_eq else None
    be = rng.uniform(-0.5, 0.5, size=m_eq).round(3) if m_eq else None
    mine = simplex.solve(c, A_ub=A.tolist(), b_ub=b.tolist(),
                         A_eq=Ae.tolist() if m_eq else None,
                         b_eq=be.tolist() if m_eq else None)
    ref = linprog(-np.asarray(c), A_ub=A, b_ub=b, A_eq=Ae, b_eq=be,
                  bounds=(0, None), method="highs")
    if ref.status == 0:
        assert mine.status == simplex.OPTIMAL
        assert mine.value == pytest.approx(-ref.fun, abs=1e-7)
    elif ref.status == 2:
        assert mine.status == simplex.INFEASIBLE
    elif ref.status == 3:
        assert mine.status == simplex.UNBOUNDED
