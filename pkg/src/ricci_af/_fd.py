"""Finite-difference stencils on non-uniform radial grids.

All stencils are sixth order. Interior nodes use a centred seven-point
stencil; the origin is handled by ghost nodes mirrored through ``s = 0``
with a parity sign, and the last three nodes use one-sided eight-point
stencils. Sixth order matters near the centre, where curvature divides
the derivative error by ``f^2 ~ s^2``. Weights come from a batched
Vandermonde solve, so arbitrary (strictly increasing) grids are supported.
"""

from math import factorial

import numpy as np
import scipy.sparse as sp

__all__ = ["Stencils", "stencils", "diff", "diff_matrix"]

NGHOST = 3
WIDTH = 8

_cache = {}


class Stencils:
    """Index and weight tables for first and second derivatives in ``s``."""

    def __init__(self, s):
        s = np.asarray(s, dtype=float)
        m = len(s) - 1
        if m < WIDTH:
            raise ValueError(f"need at least {WIDTH + 1} grid nodes")
        ext = np.concatenate([-s[NGHOST:0:-1], s])
        idx = np.zeros((m + 1, WIDTH), dtype=int)
        used = np.zeros((m + 1, WIDTH), dtype=bool)
        for i in range(m + 1):
            e = i + NGHOST
            if i <= m - NGHOST:
                cols = np.arange(e - NGHOST, e + NGHOST + 1)
            else:
                cols = np.arange(m + NGHOST - WIDTH + 1, m + NGHOST + 1)
            idx[i, :len(cols)] = cols
            used[i, :len(cols)] = True
        offs = np.where(used, ext[idx] - s[:, None], 0.0)
        scale = np.max(np.abs(offs), axis=1)
        d = offs / scale[:, None]
        # Vandermonde rows: d^p / p!, padded columns decoupled as identity.
        V = np.zeros((m + 1, WIDTH, WIDTH))
        for p in range(WIDTH):
            V[:, p, :] = np.where(used, d ** p / factorial(p), 0.0)
        for i in range(m + 1):
            k = used[i].sum()
            if k < WIDTH:
                V[i, k:, k:] = np.eye(WIDTH - k)
        rhs1 = np.zeros((m + 1, WIDTH))
        rhs1[:, 1] = 1.0
        rhs2 = np.zeros((m + 1, WIDTH))
        rhs2[:, 2] = 1.0
        w1 = np.linalg.solve(V, rhs1[..., None])[..., 0] / scale[:, None]
        w2 = np.linalg.solve(V, rhs2[..., None])[..., 0] / scale[:, None] ** 2
        self.s = s
        self.idx = idx
        self.w1 = np.where(used, w1, 0.0)
        self.w2 = np.where(used, w2, 0.0)

    def extend(self, v, parity):
        v = np.asarray(v, dtype=float)
        return np.concatenate([parity * v[NGHOST:0:-1], v])


def stencils(s):
    key = np.asarray(s, dtype=float).tobytes()
    st = _cache.get(key)
    if st is None:
        if len(_cache) > 64:
            _cache.clear()
        st = _cache[key] = Stencils(s)
    return st


def diff(s, v, parity):
    """Return ``(dv/ds, d2v/ds2)`` at every node.

    ``parity`` is +1 for even and -1 for odd extensions through the origin.
    """
    st = stencils(s)
    e = st.extend(v, parity)[st.idx]
    return np.sum(st.w1 * e, axis=1), np.sum(st.w2 * e, axis=1)


def diff_matrix(s, parity, order=1):
    """Sparse matrix of the ``order``-th ``s``-derivative with ghost folding."""
    st = stencils(s)
    m = len(s) - 1
    w = st.w1 if order == 1 else st.w2
    cols = st.idx - NGHOST
    sign = np.where(cols < 0, float(parity), 1.0)
    cols = np.abs(cols)
    rows = np.repeat(np.arange(m + 1), WIDTH)
    D = sp.csr_matrix(((w * sign).ravel(), (rows, cols.ravel())),
                      shape=(m + 1, m + 1))
    D.sum_duplicates()
    return D

