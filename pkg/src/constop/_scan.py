"""Exhaustive child-budget allocation scans.

For a two-child step the solver scans child A's budget over the whole grid
and implies child B's from the allocation identity; these kernels do that
scan for every budget cell of a node at once.  Per-coordinate lookup tables
(prebuilt in the solver) encode the implied coordinate: floor index, linear
weight, and a validity flag (0 invalid, 1 interpolate, 2 exact index).  The
implied coordinate is monotone in the candidate index, so the valid
candidates per cell form a contiguous window [jlo, jhi]; the kernels only
loop over those.

A numba-compiled version is used when numba imports; the numpy fallback has
identical semantics.  Any -inf corner entering an interpolation kills the
candidate, which keeps feasibility conservative.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")

try:  # pragma: no cover - exercised implicitly
    import numba

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False


def window_bounds(ok):
    """First/last valid candidate per cell column of an ok table."""
    any_valid = ok != 0
    n = ok.shape[0]
    jlo = np.argmax(any_valid, axis=0).astype(np.int64)
    jhi = (n - 1 - np.argmax(any_valid[::-1], axis=0)).astype(np.int64)
    empty = ~np.any(any_valid, axis=0)
    jlo[empty] = 1
    jhi[empty] = 0
    return jlo, jhi


def _py_scan_1d(va, vb, lo, w, ok, jlo, jhi, out_val, out_arg):
    # tables are transposed to [cell, candidate]
    n = out_val.shape[0]
    for cell in range(n):
        best = NEG_INF
        arg = -1
        for j in range(jlo[cell], jhi[cell] + 1):
            o = ok[cell, j]
            if o == 0:
                continue
            a = va[j]
            if a == NEG_INF:
                continue
            i = lo[cell, j]
            if o == 2:
                b = vb[i]
                if b == NEG_INF:
                    continue
            else:
                b0 = vb[i]
                b1 = vb[i + 1]
                if b0 == NEG_INF or b1 == NEG_INF:
                    continue
                b = w[cell, j] * b0 + (1.0 - w[cell, j]) * b1
            tot = 0.5 * a + 0.5 * b
            if tot > best:
                best = tot
                arg = j
        out_val[cell] = best
        out_arg[cell] = arg


def _py_scan_2d(
    va, vb, nz,
    loY, wY, okY, jloY, jhiY,
    loZ, wZ, okZ, jloZ, jhiZ,
    out_val, out_arg,
):
    # tables are transposed to [cell, candidate] so the inner loop is contiguous
    ny = loY.shape[0]
    ncz = loZ.shape[0]
    ncand_z = loZ.shape[1]
    for cy in range(ny):
        for cz in range(ncz):
            cell = cy * ncz + cz
            best = NEG_INF
            arg = -1
            for jy in range(jloY[cy], jhiY[cy] + 1):
                oy = okY[cy, jy]
                if oy == 0:
                    continue
                iy = loY[cy, jy]
                wy = wY[cy, jy]
                row0 = iy * nz
                row1 = row0 + nz
                base_a = jy * ncand_z
                for jz in range(jloZ[cz], jhiZ[cz] + 1):
                    oz = okZ[cz, jz]
                    if oz == 0:
                        continue
                    a = va[base_a + jz]
                    if a == NEG_INF:
                        continue
                    iz = loZ[cz, jz]
                    wz = wZ[cz, jz]
                    if oy == 2:
                        if oz == 2:
                            b = vb[row0 + iz]
                            if b == NEG_INF:
                                continue
                        else:
                            b0 = vb[row0 + iz]
                            b1 = vb[row0 + iz + 1]
                            if b0 == NEG_INF or b1 == NEG_INF:
                                continue
                            b = wz * b0 + (1.0 - wz) * b1
                    else:
                        if oz == 2:
                            b0 = vb[row0 + iz]
                            b1 = vb[row1 + iz]
                            if b0 == NEG_INF or b1 == NEG_INF:
                                continue
                            b = wy * b0 + (1.0 - wy) * b1
                        else:
                            b00 = vb[row0 + iz]
                            b01 = vb[row0 + iz + 1]
                            b10 = vb[row1 + iz]
                            b11 = vb[row1 + iz + 1]
                            if (
                                b00 == NEG_INF
                                or b01 == NEG_INF
                                or b10 == NEG_INF
                                or b11 == NEG_INF
                            ):
                                continue
                            b = wy * (wz * b00 + (1.0 - wz) * b01) + (1.0 - wy) * (
                                wz * b10 + (1.0 - wz) * b11
                            )
                    tot = 0.5 * a + 0.5 * b
                    if tot > best:
                        best = tot
                        arg = base_a + jz
                out_val[cell] = best
                out_arg[cell] = arg


if _HAVE_NUMBA:
    scan_1d = numba.njit(cache=True, fastmath=False)(_py_scan_1d)
    scan_2d = numba.njit(cache=True, fastmath=False)(_py_scan_2d)
else:  # pragma: no cover
    scan_1d = _py_scan_1d
    scan_2d = _py_scan_2d
