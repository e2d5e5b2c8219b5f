"""Bounded planar domains described by a level function and a signed distance."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["DomainSpec", "parse_domain"]


def _polygon_contains(pts, verts):
    x, y = pts[..., 0], pts[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    m = len(verts)
    for k in range(m):
        (x1, y1), (x2, y2) = verts[k], verts[(k + 1) % m]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def _segment_distance(pts, verts):
    best = np.full(pts.shape[:-1], np.inf)
    m = len(verts)
    for k in range(m):
        a, b = np.asarray(verts[k]), np.asarray(verts[(k + 1) % m])
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        d = np.linalg.norm(pts - (a + t[..., None] * ab), axis=-1)
        best = np.minimum(best, d)
    return best


@dataclass(frozen=True)
class DomainSpec:
    """A bounded domain: ``ball``, ``ellipse``, ``superellipse`` or ``polygon``.

    ``params`` holds (radius,) / (a, b) / (a, b, p) / tuple of vertices.
    All shapes are centred at the origin except polygons.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "ball":
            (r,) = self.params
            ok = r > 0
        elif self.kind == "ellipse":
            a, b = self.params
            ok = a > 0 and b > 0
        elif self.kind == "superellipse":
            a, b, p = self.params
            ok = a > 0 and b > 0 and p > 0
        elif self.kind == "polygon":
            ok = len(self.params) >= 3
            object.__setattr__(self, "params", tuple(tuple(map(float, v)) for v in self.params))
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not ok:
            raise ValueError(f"invalid parameters for {self.kind}: {self.params}")

    @classmethod
    def ball(cls, radius: float = 1.0):
        return cls("ball", (float(radius),))

    @classmethod
    def ellipse(cls, a: float, b: float):
        return cls("ellipse", (float(a), float(b)))

    @classmethod
    def superellipse(cls, a: float, b: float, p: float):
        return cls("superellipse", (float(a), float(b), float(p)))

    @classmethod
    def polygon(cls, vertices):
        return cls("polygon", tuple(tuple(v) for v in vertices))

    def __str__(self):
        if self.kind == "polygon":
            return "polygon " + " ".join(f"{x!r},{y!r}" for x, y in self.params)
        return self.kind + " " + " ".join(repr(v) for v in self.params)

    # -- geometry -----------------------------------------------------------

    def level(self, x):
        """Implicit function, negative inside, zero exactly on the boundary."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return np.linalg.norm(x, axis=-1) - self.params[0]
        if self.kind == "ellipse":
            a, b = self.params
            return np.sqrt((x[..., 0] / a) ** 2 + (x[..., 1] / b) ** 2) - 1.0
        if self.kind == "superellipse":
            a, b, p = self.params
            return (np.abs(x[..., 0] / a) ** p + np.abs(x[..., 1] / b) ** p) ** (1.0 / p) - 1.0
        return self.sdf(x)

    def level_gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        if self.kind == "ellipse":
            a, b = self.params
            rho = np.sqrt((x[..., 0] / a) ** 2 + (x[..., 1] / b) ** 2)
            return np.stack([x[..., 0] / a**2, x[..., 1] / b**2], axis=-1) / rho[..., None]
        if self.kind == "superellipse":
            a, b, p = self.params
            s = np.abs(x[..., 0] / a) ** p + np.abs(x[..., 1] / b) ** p
            gx = np.sign(x[..., 0]) * np.abs(x[..., 0] / a) ** (p - 1) / a
            gy = np.sign(x[..., 1]) * np.abs(x[..., 1] / b) ** (p - 1) / b
            return np.stack([gx, gy], axis=-1) * (s ** (1.0 / p - 1.0))[..., None]
        h = 1e-7 * self.circumradius()
        g = np.empty(x.shape)
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            g[..., k] = (self.sdf(x + e) - self.sdf(x - e)) / (2 * h)
        return g

    def outward_normal(self, x):
        g = self.level_gradient(x)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def boundary_points(self, count: int = 4096):
        """Boundary samples in counterclockwise order."""
        t = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
        if self.kind == "ball":
            r = self.params[0]
            return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
        if self.kind == "ellipse":
            a, b = self.params
            return np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)
        if self.kind == "superellipse":
            a, b, p = self.params
            c, s = np.cos(t), np.sin(t)
            return np.stack([a * np.sign(c) * np.abs(c) ** (2 / p), b * np.sign(s) * np.abs(s) ** (2 / p)], axis=-1)
        verts = np.asarray(self.params)
        closed = np.vstack([verts, verts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        s = np.linspace(0.0, arc[-1], count, endpoint=False)
        k = np.searchsorted(arc, s, side="right") - 1
        frac = (s - arc[k]) / seg[k]
        return closed[k] + frac[:, None] * (closed[k + 1] - closed[k])

    def _tree(self):
        cached = getattr(self, "_kd", None)
        if cached is None:
            pts = self.boundary_points(1 << 15)
            cached = cKDTree(pts)
            object.__setattr__(self, "_kd", cached)
        return cached

    def sdf(self, x):
        """Signed Euclidean distance to the boundary, negative inside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return np.linalg.norm(x, axis=-1) - self.params[0]
        if self.kind == "polygon":
            verts = np.asarray(self.params)
            d = _segment_distance(x, verts)
            return np.where(_polygon_contains(x, verts), -d, d)
        d, _ = self._tree().query(x.reshape(-1, 2))
        d = d.reshape(x.shape[:-1])
        return np.where(self.level(x) < 0, -d, d)

    def bbox(self):
        pts = self.boundary_points(4096)
        return pts.min(axis=0), pts.max(axis=0)

    def circumball(self):
        lo, hi = self.bbox()
        c = 0.5 * (lo + hi)
        r = float(np.max(np.linalg.norm(self.boundary_points(8192) - c, axis=-1)))
        return c, r

    def circumradius(self) -> float:
        return self.circumball()[1]

    def exterior_radius(self, count: int = 2048) -> float:
        """Largest r such that every boundary point has an exterior tangent ball of radius r.

        Infinite for convex domains.
        """
        b = self.boundary_points(count)
        n = self.outward_normal(b) if self.kind != "polygon" else self._polygon_normals(b)
        diff = b[None, :, :] - b[:, None, :]
        along = np.einsum("ijk,ik->ij", diff, n)
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(along > 1e-12 * self.circumradius(), dist2 / (2 * along), np.inf)
        return float(r.min())

    def _polygon_normals(self, b):
        verts = np.asarray(self.params)
        closed = np.vstack([verts, verts[:1]])
        best = np.full(len(b), np.inf)
        normal = np.zeros_like(b)
        area = 0.5 * np.sum(closed[:-1, 0] * closed[1:, 1] - closed[1:, 0] * closed[:-1, 1])
        for k in range(len(verts)):
            a, c = closed[k], closed[k + 1]
            ab = c - a
            t = np.clip(((b - a) @ ab) / (ab @ ab), 0, 1)
            d = np.linalg.norm(b - (a + t[:, None] * ab), axis=-1)
            nk = np.array([ab[1], -ab[0]]) / np.linalg.norm(ab) * np.sign(area)
            sel = d < best
            best[sel] = d[sel]
            normal[sel] = nk
        return normal

    def inball(self, resolution: int = 201):
        lo, hi = self.bbox()
        xs = np.linspace(lo[0], hi[0], resolution)
        ys = np.linspace(lo[1], hi[1], resolution)
        X, Y = np.meshgrid(xs, ys)
        pts = np.stack([X, Y], axis=-1).reshape(-1, 2)
        d = self.sdf(pts)
        k = int(np.argmin(d))
        return pts[k], float(-d[k])

    def crossing(self, origins, directions, t_max: float = 1.0, iters: int = 64):
        """Smallest t in (0, t_max] with level(origin + t d) >= 0, by bisection.

        Returns NaN where no sign change is found on the coarse scan.
        """
        origins = np.asarray(origins, dtype=float)
        directions = np.asarray(directions, dtype=float)
        m = len(origins)
        lo = np.zeros(m)
        hi = np.full(m, np.nan)
        scan = np.arange(1, int(math.ceil(t_max * 8)) + 1) / 8.0
        for t in scan:
            todo = np.isnan(hi)
            if not todo.any():
                break
            hit = todo & (self.level(origins + t * directions) >= 0)
            hi[hit] = t
            lo[todo & ~hit] = t
        ok = ~np.isnan(hi)
        a, b = lo[ok], hi[ok]
        o, d = origins[ok], directions[ok]
        for _ in range(iters):
            mid = 0.5 * (a + b)
            out = self.level(o + mid[:, None] * d) >= 0
            b = np.where(out, mid, b)
            a = np.where(out, a, mid)
        res = np.full(m, np.nan)
        res[ok] = b
        return res


def parse_domain(text: str) -> DomainSpec:
    """``ball 1.0``, ``ellipse 1 0.5``, ``superellipse 1 1 4``, ``polygon x,y x,y ...``."""
    parts = text.split()
    if not parts:
        raise ValueError("empty domain description")
    kind, rest = parts[0], parts[1:]
    if kind == "polygon":
        verts = []
        for tok in rest:
            xs = tok.split(",")
            if len(xs) != 2:
                raise ValueError(f"polygon vertex {tok!r} is not 'x,y'")
            verts.append((float(xs[0]), float(xs[1])))
        return DomainSpec.polygon(verts)
    expected = {"ball": 1, "ellipse": 2, "superellipse": 3}
    if kind not in expected:
        raise ValueError(f"unknown domain kind {kind!r}")
    if len(rest) != expected[kind]:
        raise ValueError(f"{kind} needs {expected[kind]} parameters, got {len(rest)}")
    return DomainSpec(kind, tuple(float(v) for v in rest))
