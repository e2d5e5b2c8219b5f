"""Pointwise geometry of vertical graphs x_{n+1} = u(x) in the half-space model.

All functions accept a single sample (``u`` scalar, ``du`` of shape (n,),
``d2u`` of shape (n, n)) or batches with matching leading dimensions.
Orientation is the upward Euclidean normal (-Du, 1) / w throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import symfunc

__all__ = [
    "GraphSample",
    "ShapePoint",
    "IdentityResidual",
    "first_fundamental",
    "second_fundamental",
    "inverse_sqrt_metric",
    "hyperbolic_shape_matrix",
    "hyperbolic_curvatures",
    "admissibility",
    "admissibility_matrix",
    "asymptotic_angle",
    "parallel_flow",
    "parallel_flow_rk4",
    "umbilic_sphere_oracle",
    "horosphere_oracle",
    "tilted_plane_oracle",
    "level_sphere_delta",
    "check_inverse_height_hessian",
]


@dataclass(frozen=True)
class GraphSample:
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    d3u: np.ndarray | None = None  # only carried by closed-form oracles

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "du", np.asarray(self.du, dtype=float))
        object.__setattr__(self, "d2u", np.asarray(self.d2u, dtype=float))
        if self.d3u is not None:
            object.__setattr__(self, "d3u", np.asarray(self.d3u, dtype=float))

    @property
    def n(self) -> int:
        return self.du.shape[-1]

    @property
    def w(self):
        return np.sqrt(1.0 + np.sum(self.du**2, axis=-1))

    def __getitem__(self, idx):
        d3 = None if self.d3u is None else self.d3u[idx]
        return GraphSample(self.u[idx], self.du[idx], self.d2u[idx], d3)


@dataclass
class ShapePoint:
    w: np.ndarray
    nu_up: np.ndarray
    kappa_euclid: np.ndarray
    kappa_hyp: np.ndarray
    admissible: np.ndarray
    eta: np.ndarray | None = None


def _require_positive(s: GraphSample):
    if not np.all(s.u > 0):
        raise ValueError("height u must be positive")


def _eye(s):
    return np.broadcast_to(np.eye(s.n), s.d2u.shape)


def _outer(p):
    return p[..., :, None] * p[..., None, :]


def first_fundamental(s: GraphSample):
    _require_positive(s)
    return (_eye(s) + _outer(s.du)) / (s.u**2)[..., None, None]


def second_fundamental(s: GraphSample):
    _require_positive(s)
    num = _eye(s) + _outer(s.du) + s.u[..., None, None] * s.d2u
    return num / (s.u**2 * s.w)[..., None, None]


def inverse_sqrt_metric(du):
    """(I + p p^T)^(-1/2) = I - p p^T / (w (1 + w)), smooth at p = 0."""
    du = np.asarray(du, dtype=float)
    w = np.sqrt(1.0 + np.sum(du**2, axis=-1))
    n = du.shape[-1]
    return np.eye(n) - _outer(du) / (w * (1.0 + w))[..., None, None]


def hyperbolic_shape_matrix(s: GraphSample):
    """Symmetric matrix whose eigenvalues are the hyperbolic principal curvatures.

    Returns ``(A, B, w, S)`` with ``B = (I + Du Du^T)^(-1/2)``, the Euclidean
    shape matrix ``S = B D^2u B / w`` and ``A = I / w + u S``.
    """
    _require_positive(s)
    w = s.w
    B = inverse_sqrt_metric(s.du)
    S = B @ s.d2u @ B / w[..., None, None]
    A = _eye(s) / w[..., None, None] + s.u[..., None, None] * S
    return 0.5 * (A + np.swapaxes(A, -1, -2)), B, w, 0.5 * (S + np.swapaxes(S, -1, -2))


def _curvatures_by_cholesky(s: GraphSample):
    g = first_fundamental(s)
    h = second_fundamental(s)
    L = np.linalg.cholesky(g)
    X = np.linalg.solve(L, h)
    M = np.linalg.solve(L, np.swapaxes(X, -1, -2))
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))


def hyperbolic_curvatures(s: GraphSample, sigma: float | None = None, cross_check: bool = True,
                          rtol: float = 1e-10) -> ShapePoint:
    """Euclidean and hyperbolic principal curvatures (ascending).

    With ``cross_check`` the curvatures are recomputed as the generalized
    eigenvalues of (h, g) and a RuntimeError is raised if the two disagree.
    """
    _require_positive(s)
    _, _, w, S = hyperbolic_shape_matrix(s)
    kappa_e = np.linalg.eigvalsh(S)
    nu = 1.0 / w
    kappa = s.u[..., None] * kappa_e + nu[..., None]
    if cross_check:
        other = _curvatures_by_cholesky(s)
        err = np.abs(other - kappa)
        if np.any(err > rtol * (1.0 + np.abs(kappa))):
            raise RuntimeError(f"principal curvature routes disagree by {err.max():.3e}")
    eta = None if sigma is None else (sigma - nu) / s.u
    return ShapePoint(w, nu, kappa_e, kappa, kappa[..., 0] > 0, eta)


def admissibility_matrix(s: GraphSample):
    """delta_ij + u_i u_j + u u_ij (half the Hessian of u^2 + |x|^2)."""
    return _eye(s) + _outer(s.du) + s.u[..., None, None] * s.d2u


def admissibility(s: GraphSample):
    m = admissibility_matrix(s)
    return np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))[..., 0] > 0


def asymptotic_angle(s: GraphSample, sigma: float):
    """eta = (sigma - nu^{n+1}) / u."""
    _require_positive(s)
    return (sigma - 1.0 / s.w) / s.u


# ---------------------------------------------------------------------------
# parallel hypersurfaces: kappa' = 1 - kappa^2


def parallel_flow(kappa0, t):
    """Closed-form solution of kappa' = 1 - kappa^2 from kappa(0) = kappa0.

    Broadcasts over ``kappa0`` and ``t``. Requires kappa0 > -1.
    """
    k0 = np.asarray(kappa0, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(k0 <= -1):
        raise ValueError("parallel flow needs kappa0 > -1")
    k0, t = np.broadcast_arrays(k0, t)
    out = np.ones(k0.shape)
    lo = k0 < 1
    hi = k0 > 1
    out[lo] = np.tanh(t[lo] + np.arctanh(k0[lo]))
    # coth(t + arcoth k0) written as 1 / tanh(t + artanh(1 / k0))
    out[hi] = 1.0 / np.tanh(t[hi] + np.arctanh(1.0 / k0[hi]))
    return out


def parallel_flow_rk4(kappa0, t_end: float, step: float = 1e-4, t_out=None):
    """Classical RK4 for kappa' = 1 - kappa^2; returns values at ``t_out``."""
    k = np.array(kappa0, dtype=float)
    t_out = np.atleast_1d(np.asarray([t_end] if t_out is None else t_out, dtype=float))
    nsteps = int(np.ceil(t_end / step))
    dt = t_end / nsteps if nsteps else 0.0
    out = np.empty(t_out.shape + k.shape)
    rhs = lambda y: 1.0 - y * y
    marks = np.rint(t_out / dt).astype(int) if nsteps else np.zeros(t_out.shape, dtype=int)
    for j in np.flatnonzero(marks == 0):
        out[j] = k
    for i in range(1, nsteps + 1):
        k1 = rhs(k)
        k2 = rhs(k + 0.5 * dt * k1)
        k3 = rhs(k + 0.5 * dt * k2)
        k4 = rhs(k + dt * k3)
        k = k + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        for j in np.flatnonzero(marks == i):
            out[j] = k
    return out


# ---------------------------------------------------------------------------
# closed-form umbilic graphs


def umbilic_sphere_oracle(delta: float, sigma: float, x) -> GraphSample:
    """Equidistant sphere graph over B_delta(0) with all curvatures sigma.

    v(x) = -sigma delta / sqrt(1 - sigma^2) + sqrt(delta^2 / (1 - sigma^2) - |x|^2),
    which vanishes on |x| = delta. Exact derivatives up to third order.
    """
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x**2, axis=-1)
    if np.any(r2 > delta**2):
        raise ValueError("point outside the closed ball of radius delta")
    s = np.sqrt(1.0 - sigma**2)
    R = delta / s
    q = np.sqrt(R**2 - r2)
    u = q - sigma * R
    n = x.shape[-1]
    eye = np.eye(n)
    du = -x / q[..., None]
    xx = _outer(x)
    d2u = -eye / q[..., None, None] - xx / (q**3)[..., None, None]
    sym = (np.einsum("ij,...k->...ijk", eye, x) + np.einsum("ik,...j->...ijk", eye, x)
           + np.einsum("jk,...i->...ijk", eye, x))
    d3u = -sym / (q**3)[..., None, None, None] - 3.0 * np.einsum("...i,...j,...k->...ijk", x, x, x) / (q**5)[..., None, None, None]
    return GraphSample(u, du, d2u, d3u)


def level_sphere_delta(delta: float, sigma: float, eps: float) -> float:
    """Radius delta' whose oracle sphere takes the value eps on |x| = delta.

    The Euclidean radius R of that sphere solves R^2 - delta^2 = (eps + sigma R)^2.
    """
    s2 = 1.0 - sigma**2
    R = (eps * sigma + np.sqrt(eps**2 * sigma**2 + s2 * (eps**2 + delta**2))) / s2
    return float(R * np.sqrt(s2))


def horosphere_oracle(c: float, x) -> GraphSample:
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    shape = x.shape[:-1]
    return GraphSample(np.full(shape, float(c)), np.zeros(shape + (n,)), np.zeros(shape + (n, n)),
                       np.zeros(shape + (n, n, n)))


def tilted_plane_oracle(slope, offset: float, x) -> GraphSample:
    x = np.asarray(x, dtype=float)
    slope = np.asarray(slope, dtype=float)
    n = x.shape[-1]
    shape = x.shape[:-1]
    u = x @ slope + offset
    return GraphSample(u, np.broadcast_to(slope, shape + (n,)).copy(), np.zeros(shape + (n, n)),
                       np.zeros(shape + (n, n, n)))


# ---------------------------------------------------------------------------
# covariant Hessians on oracle graphs


@dataclass
class IdentityResidual:
    hessian: np.ndarray       # |Hess(1/u) - (g - nu h)/u| per sample
    trace_inverse: np.ndarray  # F-contraction of Hess(1/u) vs its closed form
    trace_normal: np.ndarray   # F-contraction of Hess(nu/u) vs its closed form

    def max(self) -> float:
        return float(max(self.hessian.max(), self.trace_inverse.max(), self.trace_normal.max()))


def _christoffel(s: GraphSample):
    """Levi-Civita symbols Gamma[..., k, i, j] of g = (I + Du Du^T) / u^2."""
    u, p, r = s.u, s.du, s.d2u
    n = s.n
    eye = np.eye(n)
    G = eye + _outer(p)
    # dg[..., m, i, j] = d_m g_ij
    dG = np.einsum("...im,...j->...mij", r, p) + np.einsum("...i,...jm->...mij", p, r)
    dg = dG / (u**2)[..., None, None, None] - 2.0 * np.einsum("...m,...ij->...mij", p, G) / (u**3)[..., None, None, None]
    ginv = np.linalg.inv(G) * (u**2)[..., None, None]
    # lower[..., l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    lower = (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    return 0.5 * np.einsum("...kl,...lij->...kij", ginv, lower)


def _covariant_hessian(s, v1, v2):
    gamma = _christoffel(s)
    return v2 - np.einsum("...kij,...k->...ij", gamma, v1)


def _inverse_height_derivs(s):
    u, p, r = s.u, s.du, s.d2u
    v1 = -p / (u**2)[..., None]
    v2 = -r / (u**2)[..., None, None] + 2.0 * _outer(p) / (u**3)[..., None, None]
    return v1, v2


def _normal_over_height_derivs(s):
    # phi = nu^{n+1} / u = S^(-1/2) with S = u^2 (1 + |Du|^2)
    u, p, r, t = s.u, s.du, s.d2u, s.d3u
    w2 = 1.0 + np.sum(p**2, axis=-1)
    S = u**2 * w2
    rp = np.einsum("...ki,...k->...i", r, p)
    S1 = 2.0 * u[..., None] * p * w2[..., None] + 2.0 * (u**2)[..., None] * rp
    S2 = (2.0 * _outer(p) * w2[..., None, None]
          + 2.0 * u[..., None, None] * r * w2[..., None, None]
          + 4.0 * u[..., None, None] * (p[..., :, None] * rp[..., None, :] + rp[..., :, None] * p[..., None, :])
          + 2.0 * (u**2)[..., None, None] * np.einsum("...ki,...kj->...ij", r, r)
          + 2.0 * (u**2)[..., None, None] * np.einsum("...kij,...k->...ij", t, p))
    v1 = -0.5 * S1 / (S**1.5)[..., None]
    v2 = 0.75 * _outer(S1) / (S**2.5)[..., None, None] - 0.5 * S2 / (S**1.5)[..., None, None]
    return v1, v2


def _frame_contraction(s, hess_v, spec):
    g = first_fundamental(s)
    h = second_fundamental(s)
    ev, Q = np.linalg.eigh(g)
    E = Q @ (Q / np.sqrt(ev)[..., None, :]).swapaxes(-1, -2)  # g^(-1/2)
    A = E @ h @ E
    kap, V = np.linalg.eigh(0.5 * (A + np.swapaxes(A, -1, -2)))
    fi = symfunc.f_grad(spec, kap)
    F = V @ (fi[..., :, None] * np.swapaxes(V, -1, -2))
    Hv = E @ hess_v @ E
    return np.einsum("...ij,...ij->...", F, Hv), kap, fi


_ORACLES = {
    "horosphere": lambda x, c=1.0: horosphere_oracle(c, x),
    "tilted_plane": lambda x, slope=None, offset=1.0: tilted_plane_oracle(
        np.zeros(np.shape(x)[-1]) if slope is None else slope, offset, x),
    "sphere": lambda x, delta=1.0, sigma=0.5: umbilic_sphere_oracle(delta, sigma, x),
}


def check_inverse_height_hessian(family: str, x, spec=None, **params) -> IdentityResidual:
    """Compare Hess_g(1/u) with (g - nu h) / u on a closed-form umbilic graph.

    The left side uses the Christoffel symbols of the induced hyperbolic
    metric; the right side uses the fundamental forms. Both F-contractions
    (of 1/u and of nu/u) are compared with their closed forms in terms of
    sigma = f(kappa), sum f_i and sum f_i kappa_i^2.

    ``family`` is one of ``horosphere``, ``tilted_plane`` or ``sphere``; other
    graphs are rejected because their third derivatives are not available.
    """
    if family not in _ORACLES:
        raise ValueError(f"identity check only runs on oracle families {sorted(_ORACLES)}, got {family!r}")
    s = _ORACLES[family](np.asarray(x, dtype=float), **params)
    _require_positive(s)
    n = s.n
    spec = symfunc.Quotient(n, 0) if spec is None else spec
    nu = 1.0 / s.w

    v1, v2 = _inverse_height_derivs(s)
    lhs = _covariant_hessian(s, v1, v2)
    rhs = (first_fundamental(s) - nu[..., None, None] * second_fundamental(s)) / s.u[..., None, None]
    scale = 1.0 + np.abs(rhs).max(axis=(-1, -2))
    hess_res = np.abs(lhs - rhs).max(axis=(-1, -2)) / scale

    c_inv, kap, fi = _frame_contraction(s, lhs, spec)
    sigma = symfunc.f_eval(spec, kap)
    sum_fi = fi.sum(axis=-1)
    sum_fk2 = (fi * kap**2).sum(axis=-1)
    expect_inv = (-sigma * nu + sum_fi) / s.u
    tr_inv = np.abs(c_inv - expect_inv) / (1.0 + np.abs(expect_inv))

    w1, w2 = _normal_over_height_derivs(s)
    c_nu, _, _ = _frame_contraction(s, _covariant_hessian(s, w1, w2), spec)
    expect_nu = sigma / s.u - nu / s.u * sum_fk2
    tr_nu = np.abs(c_nu - expect_nu) / (1.0 + np.abs(expect_nu))
    return IdentityResidual(np.atleast_1d(hess_res), np.atleast_1d(tr_inv), np.atleast_1d(tr_nu))
