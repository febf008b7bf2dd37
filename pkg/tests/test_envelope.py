import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from constop.envelope import NEG_INF, concave_envelope_1d, concave_envelope_nd
from constop.simplex import solve as lp_solve


class TestEnvelope1D:
    def test_chord_of_endpoints(self):
        env, sup = concave_envelope_1d([0.0, 0.5, 1.0], [0.0, 0.0, 1.0])
        assert env[1] == pytest.approx(0.5, abs=1e-15)
        a, b, w = sup[1]
        assert (a, b) == (0, 2) and w == pytest.approx(0.5)

    def test_concave_input_is_fixed_point(self):
        xs = np.linspace(0, 1, 17)
        vs = -((xs - 0.37) ** 2)
        env, _ = concave_envelope_1d(xs, vs)
        assert np.array_equal(env, vs)

    def test_gap_slice(self):
        env, sup = concave_envelope_1d([0.0, 0.5, 1.0], [1.0, NEG_INF, 0.0])
        assert env[1] == pytest.approx(0.5, abs=1e-15)

    def test_all_infeasible(self):
        env, sup = concave_envelope_1d([0.0, 1.0], [NEG_INF, NEG_INF])
        assert np.all(env == NEG_INF)

    def test_outside_finite_span_stays_infeasible(self):
        env, _ = concave_envelope_1d([0.0, 0.5, 1.0], [NEG_INF, 2.0, 1.0])
        assert env[0] == NEG_INF and env[1] == 2.0 and env[2] == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=20))
    def test_majorant_and_support_consistency(self, vals):
        xs = np.arange(len(vals), dtype=float)
        vs = np.array(vals)
        env, sup = concave_envelope_1d(xs, vs)
        assert np.all(env >= vs - 1e-12)
        for i, s in enumerate(sup):
            if s is None:
                continue
            a, b, w = s
            assert env[i] == pytest.approx(w * vs[a] + (1 - w) * vs[b], abs=1e-9)
            assert xs[a] * w + xs[b] * (1 - w) == pytest.approx(xs[i], abs=1e-9)
        # concavity of the result on the finite range
        fin = np.isfinite(env)
        e = env[fin]
        if e.size >= 3:
            assert np.all(e[:-2] + e[2:] <= 2 * e[1:-1] + 1e-9)


def _true_envelope(points, values, q):
    """LP reference: best convex-combination value at q."""
    res = lp_solve(
        values.tolist(),
        A_eq=[points[:, 0].tolist(), points[:, 1].tolist(), [1.0] * len(values)],
        b_eq=[q[0], q[1], 1.0],
    )
    return res.value if res.status == "optimal" else NEG_INF


class TestEnvelope2D:
    def test_pyramid_center(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        vals = np.array([0.0, 1.0, 1.0, 0.0])
        env, sup = concave_envelope_nd(pts, vals, np.array([[0.5, 0.5]]))
        assert env[0] == pytest.approx(1.0, abs=1e-12)
        idxs, ws = sup[0]
        assert np.dot(ws, vals[idxs]) == pytest.approx(1.0, abs=1e-9)

    def test_matches_lp_reference_on_random_clouds(self):
        rng = np.random.default_rng(5)
        for _ in range(4):
            pts = rng.uniform(0, 1, (25, 2))
            vals = rng.normal(size=25)
            qs = rng.uniform(0.2, 0.8, (8, 2))
            env, sup = concave_envelope_nd(pts, vals, qs)
            for i, q in enumerate(qs):
                ref = _true_envelope(pts, vals, q)
                assert env[i] == pytest.approx(ref, abs=1e-8)
                if sup[i] is not None:
                    idxs, ws = sup[i]
                    assert sum(ws) == pytest.approx(1.0, abs=1e-9)
                    assert np.dot(ws, vals[idxs]) == pytest.approx(env[i], abs=1e-7)
                    mix = np.tensordot(ws, pts[idxs], axes=1)
                    assert mix == pytest.approx(q, abs=1e-8)

    def test_support_size_within_caratheodory_bound(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(0, 1, (40, 2))
        vals = -np.sum((pts - 0.5) ** 2, axis=1)
        env, sup = concave_envelope_nd(pts, vals, pts)
        for s in sup:
            if s is not None:
                assert len(s[0]) <= 3

    def test_collinear_points(self):
        pts = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
        vals = np.array([1.0, -1.0, 0.0])
        qs = np.array([[0.5, 0.0], [0.5, 0.3], [0.25, 0.0]])
        env, sup = concave_envelope_nd(pts, vals, qs)
        assert env[0] == pytest.approx(0.5)   # chord over the dip
        assert env[1] == NEG_INF              # off the line
        assert env[2] == pytest.approx(0.75)

    def test_affine_values_degenerate_hull(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]])
        vals = pts @ np.array([2.0, 3.0]) + 1.0
        env, sup = concave_envelope_nd(pts, vals, np.array([[0.5, 0.5], [0.1, 0.9]]))
        assert env[0] == pytest.approx(3.5, abs=1e-9)
        assert env[1] == pytest.approx(3.9, abs=1e-9)

    def test_single_point(self):
        pts = np.array([[0.25, 0.5]])
        env, sup = concave_envelope_nd(pts, np.array([2.0]),
                                       np.array([[0.25, 0.5], [0.3, 0.5]]))
        assert env[0] == 2.0 and env[1] == NEG_INF
