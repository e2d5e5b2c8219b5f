"""Rotationally symmetric graphs over a ball in any dimension, as a two-point BVP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_bvp

from .. import symfunc
from ..symfunc import Quotient

__all__ = ["RadialProfile", "radial_solve", "first_curvature"]


def first_curvature(spec, rest, sigma):
    """Solve f(k, rest, ..., rest) = sigma for the distinguished curvature k.

    ``rest`` is the common value of the other n-1 curvatures.  Returns +inf
    where no positive k reaches sigma.
    """
    rest = np.asarray(rest, dtype=float)
    n = spec.n
    if isinstance(spec, Quotient):
        l = spec.l
        s = sigma ** (n - l)
        den = rest ** (n - 1) - (s * l / n * rest ** (l - 1) if l > 0 else 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = s * (n - l) / n * rest**l / den
        return np.where(den > 0, k, np.inf)
    lo = np.full(rest.shape, -40.0)
    hi = np.full(rest.shape, 40.0)

    def value(logk):
        lam = np.concatenate([np.exp(logk)[..., None], np.repeat(rest[..., None], n - 1, -1)], -1)
        return symfunc._value_grad(spec, lam)[0]

    reachable = value(hi) > sigma
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        above = value(mid) > sigma
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return np.where(reachable, np.exp(0.5 * (lo + hi)), np.inf)


@dataclass
class RadialProfile:
    n: int
    delta: float
    sigma: float
    eps: float
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    converged: bool
    message: str
    max_rms_residual: float
    sol: object = None

    def __call__(self, r):
        return self.sol(np.asarray(r, dtype=float))[0]

    def curvatures(self, r):
        """(meridian, parallel) hyperbolic principal curvatures along the profile."""
        r = np.asarray(r, dtype=float)
        u, du = self.sol(r)
        d2u = self.sol(r, 1)[1]
        w = np.sqrt(1 + du**2)
        with np.errstate(divide="ignore", invalid="ignore"):
            par = np.where(r > 0, u * du / (r * w), u * d2u / w) + 1 / w
        mer = u * d2u / w**3 + 1 / w
        return mer, par


def radial_solve(spec, delta: float, sigma: float, eps: float, n: int | None = None,
                 tol: float = 1e-8, nodes: int = 201, max_nodes: int = 200_000) -> RadialProfile:
    """Collocation + Newton for u(r) with u'(0) = 0 and u(delta) = eps.

    The meridian curvature comes from u'', the n-1 parallel ones from u'/r.
    """
    n = spec.n if n is None else n
    if n != spec.n:
        raise ValueError(f"spec is for n={spec.n}, asked for n={n}")
    if not 0 < sigma < 1:
        raise ValueError(f"sigma must lie in (0,1), got {sigma}")
    if not (delta > 0 and 0 < eps < delta):
        raise ValueError("need delta > 0 and 0 < eps < delta")

    def rhs_for(sig):
        def rhs(r, y):
            u, p = y
            u = np.maximum(u, 1e-300)
            p = np.clip(p, -1e6, 1e6)
            w = np.sqrt(1 + p**2)
            centre = r == 0
            rr = np.where(centre, 1.0, r)
            par = u * p / (rr * w) + 1 / w
            k1 = np.minimum(first_curvature(spec, np.maximum(par, 1e-300), sig), 1e12)
            upp = np.where(centre, (sig - 1) / u, w**3 * (k1 - 1 / w) / u)
            return np.vstack([p, upp])
        return rhs

    def attempt(e, sig, guess, cap=max_nodes):
        with np.errstate(all="ignore"):
            return solve_bvp(rhs_for(sig), lambda ya, yb: np.array([ya[1], yb[0] - e]), r, guess,
                             tol=tol, max_nodes=cap)

    def march(res, start, end, solve_at, shift):
        """Adaptive continuation in one parameter; failed steps are shortened."""
        done, frac = start, 1.0
        while res.success and done != end:
            nxt = done + frac * (end - done)
            trial = solve_at(nxt, res.sol(r) - shift(done, nxt))
            if trial.success:
                res, done, frac = trial, nxt, min(1.0, 2 * frac)
            elif frac < 1e-3:
                return trial
            else:
                frac *= 0.5
        return res

    # graded toward the rim, where the profile steepens as eps shrinks
    r = delta * np.sin(0.5 * np.pi * np.linspace(0.0, 1.0, nodes))
    # start from eps0 >= delta/5 with a parabola whose apex curvature 1 - 2 c u(0) is sigma0
    e0 = float(eps)
    while e0 < 0.2 * delta:
        e0 *= 2

    def parabola(sig):
        c = (-e0 + np.sqrt(e0**2 + 2 * delta**2 * (1 - sig))) / (2 * delta**2)
        return np.vstack([e0 + c * (delta**2 - r**2), -2 * c * r])

    no_shift = lambda a, b: 0.0  # noqa: E731
    res = attempt(e0, sigma, parabola(sigma), cap=min(max_nodes, 20 * nodes))
    if not res.success and sigma != 0.5:
        res = march(attempt(e0, 0.5, parabola(0.5)), 0.5, sigma,
                    lambda sg, g: attempt(e0, sg, g), no_shift)
    # lowering eps by a shift keeps the curvatures of the previous stage
    res = march(res, e0, float(eps), lambda e, g: attempt(e, sigma, g),
                lambda a, b: np.array([[a - b], [0.0]]))
    rms = float(np.max(res.rms_residuals)) if res.rms_residuals is not None else np.inf
    return RadialProfile(n, float(delta), float(sigma), float(eps), res.x, res.y[0], res.y[1],
                         bool(res.success), res.message, rms, res.sol)
