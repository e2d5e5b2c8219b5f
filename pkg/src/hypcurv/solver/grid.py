"""Masked Cartesian grid with a ray-wise quadratic boundary closure.

Every first and second difference is an affine map ``M @ u + B @ g`` of the
unknowns ``u`` (inside nodes) and Dirichlet data ``g`` at the points where
stencil rays cross the boundary.  A neighbour that is not an unknown is
replaced by the quadratic through the node behind, the node itself and the
boundary crossing, evaluated one step out.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..hypgeo import GraphSample
from .domain import DomainSpec

__all__ = ["Grid", "ConfigurationError", "build_grid", "DIRECTIONS"]

# axis and diagonal offsets; index k and k ^ 1 are opposite
DIRECTIONS = np.array([(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)])
_AXIS = (0, 1, 2, 3)


class ConfigurationError(ValueError):
    """The grid cannot resolve the domain (stencil ray finds no boundary)."""


def _lagrange_at_one(a, t):
    """Weights at s=1 of the quadratic through s = -a, 0, t."""
    return (1 - t) / (a * (a + t)), -(1 + a) * (1 - t) / (a * t), (1 + a) / (t * (t + a))


def _lagrange_slope_at_end(a, t):
    """Derivative weights at s=t of the quadratic through s = -a, 0, t."""
    return t / (a * (a + t)), -(t + a) / (a * t), 1 / (t + a) + 1 / t


@dataclass
class Grid:
    domain: DomainSpec
    h: float
    ij: np.ndarray            # (N, 2) integer lattice coordinates of unknowns
    nodes: np.ndarray         # (N, 2) coordinates
    crossings: np.ndarray     # (K, 2) boundary points hit by stencil rays
    ops: dict                 # name -> (M, B) for x, y, xx, yy, xy
    band: np.ndarray          # unknowns with a non-unknown stencil neighbour
    neighbours: np.ndarray    # (N, 8) unknown index or -1
    trace: tuple = field(default=None)   # (T, Tb, cos, points) one-sided slopes at crossings
    excluded: int = 0         # inside lattice points dropped for small crossing fraction

    @property
    def size(self) -> int:
        return len(self.nodes)

    def boundary_values(self, eps):
        """Dirichlet data: a constant or a callable of crossing points."""
        if callable(eps):
            return np.asarray(eps(self.crossings), dtype=float)
        return np.full(len(self.crossings), float(eps))

    def apply(self, name, u, g):
        M, B = self.ops[name]
        return M @ u + B @ g

    def sample(self, u, g) -> GraphSample:
        du = np.stack([self.apply("x", u, g), self.apply("y", u, g)], axis=-1)
        xx, yy, xy = (self.apply(k, u, g) for k in ("xx", "yy", "xy"))
        d2u = np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)
        return GraphSample(np.asarray(u, dtype=float), du, d2u)

    def normal_slopes(self, u, g):
        """Outward normal derivative of u at boundary crossings of axis rays.

        Uses the one-sided quadratic along the ray; only rays within 60 degrees
        of the normal are kept, and the boundary data must be constant.
        """
        T, Tb, cos, _ = self.trace
        return (T @ u + Tb @ g) / (self.h * cos)

    def coloring(self):
        """Nine colours such that no stencil row touches two columns of one colour."""
        return (self.ij[:, 0] % 3) * 3 + (self.ij[:, 1] % 3)


def build_grid(domain: DomainSpec, h: float, theta_min: float = 0.2, t_max: float = 6.0) -> Grid:
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    lo, hi = domain.bbox()
    pad = int(np.ceil(t_max)) + 2
    i0, i1 = int(np.floor(lo[0] / h)) - pad, int(np.ceil(hi[0] / h)) + pad
    j0, j1 = int(np.floor(lo[1] / h)) - pad, int(np.ceil(hi[1] / h)) + pad
    I, J = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    lattice = np.stack([I.ravel(), J.ravel()], axis=-1)
    pts = lattice * h
    inside = domain.level(pts) < 0
    shape = I.shape

    def flat(ij):
        return (ij[:, 0] - i0) * shape[1] + (ij[:, 1] - j0)

    # drop inside points that sit too close to the boundary along some ray
    cand = np.flatnonzero(inside)
    keep = np.ones(len(cand), dtype=bool)
    for d in DIRECTIONS:
        q = flat(lattice[cand] + d)
        out = ~inside[q]
        if out.any():
            t = domain.crossing(pts[cand[out]], np.broadcast_to(d * h, (out.sum(), 2)), t_max=1.0)
            bad = np.isnan(t) | (t < theta_min)
            keep[np.flatnonzero(out)[bad]] = False
    unknown_flat = cand[keep]
    N = len(unknown_flat)
    if N == 0:
        raise ConfigurationError(f"no interior nodes at h={h}")
    index = np.full(len(pts), -1)
    index[unknown_flat] = np.arange(N)
    ij = lattice[unknown_flat]
    nodes = ij * h

    nbr = np.stack([index[flat(ij + d)] for d in DIRECTIONS], axis=1)

    # crossing fraction for every (node, direction) whose neighbour is not an unknown
    cross_t = np.full((N, 8), np.nan)
    cross_id = np.full((N, 8), -1)
    cross_pts = []
    count = 0
    for k, d in enumerate(DIRECTIONS):
        miss = np.flatnonzero(nbr[:, k] < 0)
        if len(miss) == 0:
            continue
        t = domain.crossing(nodes[miss], np.broadcast_to(d * h, (len(miss), 2)), t_max=t_max)
        if np.any(np.isnan(t)):
            bad = miss[np.isnan(t)][0]
            raise ConfigurationError(
                f"stencil ray from node {tuple(nodes[bad])} along {tuple(d)} finds no boundary "
                f"within {t_max} cells; refine the grid")
        cross_t[miss, k] = t
        cross_id[miss, k] = count + np.arange(len(miss))
        cross_pts.append(nodes[miss] + t[:, None] * d * h)
        count += len(miss)
    crossings = np.concatenate(cross_pts) if cross_pts else np.zeros((0, 2))
    K = len(crossings)

    # neighbour value operators P_k u + C_k g
    rows_all = np.arange(N)
    P, C = [], []
    for k in range(8):
        back = k ^ 1
        pr, pc, pv, cr, cc, cv = [], [], [], [], [], []
        direct = nbr[:, k] >= 0
        pr.append(rows_all[direct]); pc.append(nbr[direct, k]); pv.append(np.ones(direct.sum()))
        g = np.flatnonzero(~direct)
        t = cross_t[g, k]
        has_back = nbr[g, back] >= 0
        a = np.where(has_back, 1.0, cross_t[g, back])
        wa, w0, wt = _lagrange_at_one(a, t)
        pr.append(g); pc.append(g); pv.append(w0)
        cr.append(g); cc.append(cross_id[g, k]); cv.append(wt)
        hb = g[has_back]
        pr.append(hb); pc.append(nbr[hb, back]); pv.append(wa[has_back])
        nb = g[~has_back]
        cr.append(nb); cc.append(cross_id[nb, back]); cv.append(wa[~has_back])
        P.append(sparse.csr_matrix((np.concatenate(pv), (np.concatenate(pr), np.concatenate(pc))), shape=(N, N)))
        C.append(sparse.csr_matrix((np.concatenate(cv), (np.concatenate(cr), np.concatenate(cc))), shape=(N, K)))

    I_N = sparse.identity(N, format="csr")
    ops = {
        "x": ((P[0] - P[1]) / (2 * h), (C[0] - C[1]) / (2 * h)),
        "y": ((P[2] - P[3]) / (2 * h), (C[2] - C[3]) / (2 * h)),
        "xx": ((P[0] - 2 * I_N + P[1]) / h**2, (C[0] + C[1]) / h**2),
        "yy": ((P[2] - 2 * I_N + P[3]) / h**2, (C[2] + C[3]) / h**2),
        "xy": ((P[4] + P[5] - P[6] - P[7]) / (4 * h**2), (C[4] + C[5] - C[6] - C[7]) / (4 * h**2)),
    }
    ops = {key: (M.tocsr(), B.tocsr()) for key, (M, B) in ops.items()}
    band = np.flatnonzero((nbr < 0).any(axis=1))

    # one-sided normal slopes at axis crossings within one cell
    tr_rows, tr_cols, tr_vals, tb_cols, cos_list, tpts = [], [], [], [], [], []
    m = 0
    for k in _AXIS:
        back = k ^ 1
        sel = np.flatnonzero((nbr[:, k] < 0) & (cross_t[:, k] <= 1.0))
        if len(sel) == 0:
            continue
        t = cross_t[sel, k]
        p = crossings[cross_id[sel, k]]
        c = domain.outward_normal(p) @ DIRECTIONS[k].astype(float)
        ok = c >= 0.5
        sel, t, p, c = sel[ok], t[ok], p[ok], c[ok]
        has_back = nbr[sel, back] >= 0
        a = np.where(has_back, 1.0, cross_t[sel, back])
        sa, s0, st = _lagrange_slope_at_end(a, t)
        r = m + np.arange(len(sel))
        tr_rows += [r, r[has_back]]
        tr_cols += [sel, nbr[sel[has_back], back]]
        tr_vals += [s0, sa[has_back]]
        tb_rows = [r, r[~has_back]]
        tb_cols.append((tb_rows, [cross_id[sel, k], cross_id[sel[~has_back], back]], [st, sa[~has_back]]))
        cos_list.append(c)
        tpts.append(p)
        m += len(sel)
    T = sparse.csr_matrix((np.concatenate(tr_vals), (np.concatenate(tr_rows), np.concatenate(tr_cols))), shape=(m, N))
    br = np.concatenate([np.concatenate(x[0]) for x in tb_cols])
    bc = np.concatenate([np.concatenate(x[1]) for x in tb_cols])
    bv = np.concatenate([np.concatenate(x[2]) for x in tb_cols])
    Tb = sparse.csr_matrix((bv, (br, bc)), shape=(m, K))
    trace = (T, Tb, np.concatenate(cos_list), np.concatenate(tpts))

    return Grid(domain, float(h), ij, nodes, crossings, ops, band, nbr, trace,
                excluded=int(len(cand) - N))
