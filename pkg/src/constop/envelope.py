"""Upper concave envelopes of grid slices, with mixing weights.

The relaxed solver replaces a node's stage values over the budget grid by
their smallest concave majorant.  Cells lifted by the envelope also get the
supporting points and barycentric weights, which realize the lift as a
randomization over at most (dim + 1) pure decisions.

Infinite (-inf) cells mark infeasible budgets: they are excluded from the
hull, and cells outside the convex hull of the finite points stay -inf.
Envelope values come from minimizing over the upper-facet planes (each is a
supporting hyperplane); supports are resolved lazily, only where a caller
actually lifts a cell, because they are much more expensive than values.
"""

from __future__ import annotations

import itertools

import numpy as np

NEG_INF = float("-inf")


def concave_envelope_1d(xs, vs):
    """Smallest concave majorant of the points (xs[i], vs[i]) on the grid xs.

    Returns (env, support) where env[i] is the envelope value at xs[i]
    (-inf outside the span of finite points) and support[i] is
    (left_index, right_index, left_weight) such that
    env[i] = w * vs[left] + (1 - w) * vs[right].
    """
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    n = xs.shape[0]
    env = np.full(n, NEG_INF)
    support = [None] * n
    finite = np.where(np.isfinite(vs))[0]
    if finite.size == 0:
        return env, support

    # upper hull, monotone chain over grid-ordered finite points
    hull = []
    for i in finite:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (vs[i] - vs[a]) - (vs[b] - vs[a]) * (xs[i] - xs[a])
            if cross >= 0:  # b on or below the chord a -> i
                hull.pop()
            else:
                break
        hull.append(int(i))

    hx = xs[hull]
    lo, hi = finite[0], finite[-1]
    seg = 0
    for i in range(lo, hi + 1):
        x = xs[i]
        while seg < len(hull) - 2 and hx[seg + 1] < x:
            seg += 1
        a = hull[seg]
        b = hull[min(seg + 1, len(hull) - 1)]
        if a == b or xs[b] == xs[a]:
            env[i] = vs[a]
            support[i] = (a, a, 1.0)
            continue
        w = (xs[b] - x) / (xs[b] - xs[a])
        w = min(max(w, 0.0), 1.0)
        env[i] = w * vs[a] + (1.0 - w) * vs[b]
        support[i] = (a, b, w)
    # never dip below the original values (guards rounding)
    lifted = env < vs
    if np.any(lifted):
        env[lifted] = vs[lifted]
        for i in np.where(lifted)[0]:
            support[i] = (int(i), int(i), 1.0)
    return env, support


class UpperEnvelopeND:
    """Envelope of scattered finite points in m >= 2 dims.

    ``evaluate(query)`` returns envelope values (-inf outside the hull of
    the points); ``support(query_point, env_value)`` returns (indices,
    weights) over the input points realizing that value, or None when it
    cannot be certified (callers should then leave the cell unlifted).
    """

    def __init__(self, points, values):
        from scipy.spatial import ConvexHull, QhullError

        self.points = np.asarray(points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        n, m = self.points.shape
        self.m = m
        self.kind = "hull"
        self.plane_coef = None

        if n == 0:
            self.kind = "empty"
            return
        if n == 1:
            self.kind = "point"
            return
        span = self.points - self.points[0]
        if np.linalg.matrix_rank(span, tol=1e-10) <= 1:
            self.kind = "line"
            self._init_line()
            return

        # containment test: half-planes of the projected hull
        proj = ConvexHull(self.points)
        self.proj_eq = proj.equations

        lifted = np.column_stack([self.points, self.values])
        try:
            hull = ConvexHull(lifted)
        except QhullError:
            # values affine in the budget: envelope is the affine interpolant
            self.kind = "affine"
            A = np.column_stack([self.points, np.ones(n)])
            self.plane_coef, *_ = np.linalg.lstsq(A, self.values, rcond=None)
            return
        eqs = hull.equations  # a . x + c * v + d <= 0 inside; upper: c > 0
        upper = eqs[:, -2] > 1e-12
        if not np.any(upper):
            upper = eqs[:, -2] > 0
        self.ueq = eqs[upper]
        self.ufacets = hull.simplices[upper]

    # -- line degeneracy -------------------------------------------------

    def _init_line(self):
        base = self.points[0]
        d = None
        for p in self.points[1:]:
            dd = p - base
            if np.linalg.norm(dd) > 1e-14:
                d = dd / np.linalg.norm(dd)
                break
        if d is None:
            self.kind = "point"
            return
        self.line_base = base
        self.line_dir = d
        t = (self.points - base) @ d
        order = np.argsort(t)
        self.line_order = order
        self.line_t = t[order]
        self.line_env, self.line_sup = concave_envelope_1d(self.line_t, self.values[order])

    # -- evaluation -------------------------------------------------------

    def evaluate(self, query):
        query = np.asarray(query, dtype=float)
        q = query.shape[0]
        env = np.full(q, NEG_INF)
        if self.kind == "empty":
            return env
        if self.kind == "point":
            same = np.all(np.abs(query - self.points[0]) <= 1e-10, axis=1)
            env[same] = float(np.max(self.values))
            return env
        if self.kind == "line":
            on = (
                np.linalg.norm(
                    query - self.line_base
                    - np.outer((query - self.line_base) @ self.line_dir, self.line_dir),
                    axis=1,
                )
                <= 1e-10
            )
            qt = (query - self.line_base) @ self.line_dir
            for i in np.where(on)[0]:
                env[i] = self._line_value(qt[i])[0]
            return env

        inside = np.all(
            query @ self.proj_eq[:, :-1].T + self.proj_eq[:, -1] <= 1e-9, axis=1
        )
        idx = np.where(inside)[0]
        if idx.size == 0:
            return env
        if self.kind == "affine":
            env[idx] = query[idx] @ self.plane_coef[:-1] + self.plane_coef[-1]
            return env
        # min over supporting planes, blocked to bound memory
        for blk in range(0, idx.size, 8192):
            sel = idx[blk : blk + 8192]
            plane = -(query[sel] @ self.ueq[:, :-2].T + self.ueq[:, -1]) / self.ueq[:, -2]
            env[sel] = plane.min(axis=1)
        return env

    def _line_value(self, t):
        ts = self.line_t
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            return NEG_INF, None
        j = int(np.searchsorted(ts, t))
        j = min(max(j, 1), len(ts) - 1)
        a, b = j - 1, j
        if ts[b] == ts[a]:
            w = 1.0
        else:
            w = (ts[b] - t) / (ts[b] - ts[a])
        w = min(max(w, 0.0), 1.0)
        return w * self.line_env[a] + (1.0 - w) * self.line_env[b], (a, b, w)

    # -- support ----------------------------------------------------------

    def support_many(self, query, env_vals, cells):
        """supports[cell] for the listed cells; None entries when uncertified."""
        out = {}
        if self.kind in ("empty",):
            return out
        if self.kind == "point":
            j = int(np.argmax(self.values))
            for c in cells:
                if env_vals[c] > NEG_INF:
                    out[c] = ([j], [1.0])
            return out
        if self.kind == "line":
            qt = (query - self.line_base) @ self.line_dir
            for c in cells:
                if env_vals[c] == NEG_INF:
                    continue
                _, sup = self._line_value(qt[c])
                if sup is None:
                    continue
                a, b, w = sup
                atoms = {}
                for src, ww in ((a, w), (b, 1.0 - w)):
                    s = self.line_sup[src]
                    if s is None or ww == 0.0:
                        continue
                    la, lb, lw = s
                    for idx2, wt in ((la, lw * ww), (lb, (1.0 - lw) * ww)):
                        orig = int(self.line_order[idx2])
                        atoms[orig] = atoms.get(orig, 0.0) + wt
                if atoms:
                    keys = sorted(atoms)
                    out[c] = (keys, [atoms[k] for k in keys])
            return out
        if self.kind == "affine":
            from scipy.spatial import Delaunay

            tri = Delaunay(self.points)
            arr = query[cells]
            simp = tri.find_simplex(arr)
            for pos, c in enumerate(cells):
                if simp[pos] < 0 or env_vals[c] == NEG_INF:
                    continue
                verts = tri.simplices[simp[pos]]
                w = _barycentric(self.points[verts], query[c])
                if w is not None:
                    out[c] = (list(map(int, verts)), list(w))
            return out

        cells = np.asarray(cells, dtype=np.int64)
        live = cells[env_vals[cells] > NEG_INF]
        if live.size == 0:
            return out
        qs = query[live]
        plane = -(qs @ self.ueq[:, :-2].T + self.ueq[:, -1]) / self.ueq[:, -2]
        best = np.argmin(plane, axis=1)

        # fast path: closed-form barycentric on each cell's minimizing facet
        verts = self.ufacets[best]                      # (k, 3)
        p0 = self.points[verts[:, 0]]
        p1 = self.points[verts[:, 1]]
        p2 = self.points[verts[:, 2]]
        d1 = p1 - p0
        d2 = p2 - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        rhs = qs - p0
        ok = np.abs(det) > 1e-14
        w1 = np.zeros(live.size)
        w2 = np.zeros(live.size)
        w1[ok] = (rhs[ok, 0] * d2[ok, 1] - rhs[ok, 1] * d2[ok, 0]) / det[ok]
        w2[ok] = (d1[ok, 0] * rhs[ok, 1] - d1[ok, 1] * rhs[ok, 0]) / det[ok]
        w0 = 1.0 - w1 - w2
        good = ok & (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        for pos in np.where(good)[0]:
            ws = np.clip([w0[pos], w1[pos], w2[pos]], 0.0, None)
            s = ws.sum()
            out[int(live[pos])] = (list(map(int, verts[pos])), list(ws / s))
        for pos in np.where(~good)[0]:
            c = int(live[pos])
            sup = _support_fallback(
                plane[pos], self.ufacets, self.points, self.values, query[c],
                float(env_vals[c]),
            )
            if sup is not None:
                out[c] = sup
        return out


def _bary3(verts_pts, q):
    """Closed-form barycentric weights for a 2-D triangle, or None."""
    d1 = verts_pts[1] - verts_pts[0]
    d2 = verts_pts[2] - verts_pts[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(det) < 1e-14:
        return None
    r0 = q[0] - verts_pts[0][0]
    r1 = q[1] - verts_pts[0][1]
    w1 = (r0 * d2[1] - r1 * d2[0]) / det
    w2 = (d1[0] * r1 - d1[1] * r0) / det
    w0 = 1.0 - w1 - w2
    if w0 < -1e-9 or w1 < -1e-9 or w2 < -1e-9:
        return None
    w = np.clip(np.array([w0, w1, w2]), 0.0, None)
    return w / w.sum()


def _support_fallback(plane_row, ufacets, points, values, q, env_q, tol=1e-9):
    """Weights when the minimizing facet's projection misses the query.

    Ties are common on merged coplanar regions: try the tied facets, then a
    small nonnegative least-squares over their pooled vertices (the value row
    is part of the system, so the atoms realize the envelope value too).
    """
    order = np.argsort(plane_row)
    cut = plane_row[order[0]] + max(tol, tol * abs(plane_row[order[0]]))
    candidates = [int(f) for f in order[:64] if plane_row[f] <= cut]
    for f in candidates:
        verts = ufacets[f]
        w = _bary3(points[verts], q)
        if w is not None:
            return (list(map(int, verts)), list(w))
    pool = sorted({int(v) for f in candidates for v in ufacets[f]})
    if not pool:
        return None
    from scipy.optimize import nnls

    A = np.vstack([points[pool].T, np.ones(len(pool)), values[pool]])
    b = np.concatenate([q, [1.0, env_q]])
    scale = np.maximum(np.abs(b), 1.0)
    try:
        w, resid = nnls(A / scale[:, None], b / scale)
    except Exception:
        return None
    if resid > 1e-7:
        return None
    s = w.sum()
    if s <= 0:
        return None
    w = w / s
    keep = np.where(w > 1e-12)[0]
    atoms = [pool[i] for i in keep]
    weights = list(w[keep])
    m = points.shape[1]
    if len(atoms) > m + 1:
        # Caratheodory: the graph point lies on a face spanned by <= m+1 vertices
        for sub in itertools.combinations(range(len(atoms)), m + 1):
            verts = np.array([atoms[i] for i in sub])
            wsub = _barycentric(points[verts], q)
            if wsub is None:
                continue
            if abs(float(np.dot(wsub, values[verts])) - env_q) <= 1e-8 * max(1.0, abs(env_q)):
                return (list(map(int, verts)), list(wsub))
    return (atoms, weights)


def concave_envelope_nd(points, values, query, support_cells=None):
    """Envelope of scattered finite points evaluated at query points.

    Returns (env, support) with support[i] = (point_indices, weights) for the
    requested cells (all inside cells when ``support_cells`` is None).
    """
    surf = UpperEnvelopeND(points, values)
    query = np.asarray(query, dtype=float)
    env = surf.evaluate(query)
    support = [None] * query.shape[0]
    if support_cells is None:
        support_cells = [i for i in range(query.shape[0]) if env[i] > NEG_INF]
    got = surf.support_many(query, env, list(support_cells))
    for c, sup in got.items():
        support[c] = sup
    return env, support


def _barycentric(vertices, point, tol=1e-9):
    """Barycentric weights of ``point`` w.r.t. a simplex, or None if outside."""
    A = np.vstack([vertices.T, np.ones(vertices.shape[0])])
    b = np.concatenate([point, [1.0]])
    w, residuals, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if np.any(w < -tol):
        return None
    recon = A @ w
    if np.max(np.abs(recon - b)) > 1e-8:
        return None
    w = np.clip(w, 0.0, None)
    s = w.sum()
    if s <= 0:
        return None
    return w / s
