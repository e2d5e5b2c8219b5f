"""Residual, Jacobian and damped Newton for f(kappa[u]) = sigma with u = eps on the boundary."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .. import symfunc
from ..hypgeo import (
    GraphSample,
    admissibility_matrix,
    hyperbolic_shape_matrix,
    level_sphere_delta,
)
from .domain import DomainSpec
from .grid import Grid, build_grid

log = logging.getLogger(__name__)

__all__ = [
    "InadmissibleError",
    "NestingError",
    "ScalarField",
    "NewtonParams",
    "SolverConfig",
    "SolveReport",
    "discretize",
    "residual",
    "jacobian",
    "newton_solve",
    "initial_guess",
    "eps_continuation",
    "sigma_sweep",
    "SweepResult",
]


class InadmissibleError(ValueError):
    def __init__(self, nodes, message="field is not admissible"):
        self.nodes = np.asarray(nodes)
        shown = ", ".join(map(str, self.nodes[:10]))
        more = "" if len(self.nodes) <= 10 else f" (+{len(self.nodes) - 10} more)"
        super().__init__(f"{message} at nodes [{shown}]{more}")


class NestingError(RuntimeError):
    def __init__(self, sigma_lo, sigma_hi, node, point, gap):
        self.sigma_lo, self.sigma_hi, self.node, self.point, self.gap = sigma_lo, sigma_hi, node, point, gap
        super().__init__(
            f"graphs for sigma={sigma_lo} and sigma={sigma_hi} are not strictly nested: "
            f"gap {gap:.3e} at node {node} (x={point[0]:.6f}, y={point[1]:.6f})")


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray
    eps: float
    sigma: float

    def boundary(self):
        return self.grid.boundary_values(self.eps)

    def sample(self) -> GraphSample:
        return self.grid.sample(self.values, self.boundary())

    def with_values(self, values):
        return replace(self, values=np.asarray(values, dtype=float))


@dataclass(frozen=True)
class NewtonParams:
    max_iters: int = 60
    abs_tol: float = 1e-10
    rel_tol: float = 1e-14
    damping_min: float = 2.0**-20


@dataclass(frozen=True)
class SolverConfig:
    sigma: float
    eps_schedule: tuple = (0.2, 0.1, 0.05, 0.02)
    grid_h: float = 1 / 64
    newton: NewtonParams = NewtonParams()
    jacobian_mode: str = "analytic"
    eps_floor_factor: float = 1.0

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ValueError(f"sigma must lie in (0,1), got {self.sigma}")
        sched = tuple(float(e) for e in self.eps_schedule)
        object.__setattr__(self, "eps_schedule", sched)
        if not sched or any(e <= 0 for e in sched):
            raise ValueError("eps schedule must be non-empty and positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError(f"eps schedule must be strictly decreasing, got {sched}")
        if not self.grid_h > 0:
            raise ValueError("grid_h must be positive")
        p = self.newton
        if not (p.abs_tol > 0 and p.rel_tol > 0 and 0 < p.damping_min < 1 and p.max_iters > 0):
            raise ValueError(f"invalid Newton parameters {p}")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"jacobian_mode must be analytic or finite-difference, got {self.jacobian_mode!r}")


@dataclass
class SolveReport:
    converged: bool
    residual_history: list
    final_max_residual: float
    admissibility_ok: bool
    boundary_w_stats: dict
    kappa_stats: dict
    eps: float
    sigma: float
    h: float
    iterations: int = 0
    damping_history: list = field(default_factory=list)
    min_admissibility: list = field(default_factory=list)   # smallest eigenvalue per accepted iterate
    min_height_ratio: list = field(default_factory=list)    # min u / eps per accepted iterate
    jacobian_fallbacks: int = 0
    message: str = ""


# ---------------------------------------------------------------------------
# pointwise evaluation


def discretize(field: ScalarField, node=None) -> GraphSample:
    """Discrete u, Du, D^2u at one inside node (or all nodes when ``node`` is None)."""
    s = field.sample()
    return s if node is None else s[node]


def _min_admissibility(s: GraphSample):
    m = admissibility_matrix(s)
    return np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))[..., 0]


@dataclass
class _Local:
    sample: GraphSample
    A: np.ndarray
    B: np.ndarray
    w: np.ndarray
    S: np.ndarray
    kappa: np.ndarray
    Q: np.ndarray
    f: np.ndarray
    fi: np.ndarray


def _local(field: ScalarField, spec) -> _Local:
    s = field.sample()
    bad = np.flatnonzero((s.u <= 0) | ~(_min_admissibility(s) > 0))
    if len(bad):
        raise InadmissibleError(bad)
    A, B, w, S = hyperbolic_shape_matrix(s)
    kappa, Q = np.linalg.eigh(A)
    bad = np.flatnonzero(kappa[:, 0] <= 0)
    if len(bad):
        raise InadmissibleError(bad, "non-positive principal curvature")
    f, fi = symfunc._value_grad(spec, kappa)
    return _Local(s, A, B, w, S, kappa, Q, f, fi)


def residual(field: ScalarField, spec) -> np.ndarray:
    """f(kappa[u]) - sigma at every inside node; raises InadmissibleError listing bad nodes."""
    return _local(field, spec).f - field.sigma


def _analytic_blocks(loc: _Local):
    """Partial derivatives of f(kappa) with respect to D^2u, Du and u per node."""
    s = loc.sample
    u, p, r = s.u, s.du, s.d2u
    n = p.shape[-1]
    F = np.einsum("nik,nk,njk->nij", loc.Q, loc.fi, loc.Q)
    B, w = loc.B, loc.w
    d_r = (u / w)[:, None, None] * (B @ F @ B)
    d_u = np.einsum("nij,nji->n", F, loc.S)
    c = w * (1 + w)
    BrB = B @ r @ B
    trF = np.einsum("nii->n", F)
    trFBrB = np.einsum("nij,nji->n", F, BrB)
    eye = np.eye(n)
    pp = p[:, :, None] * p[:, None, :]
    d_p = np.empty((len(u), n))
    for m in range(n):
        em = eye[m]
        Bm = (-(em[None, :, None] * p[:, None, :] + p[:, :, None] * em[None, None, :]) / c[:, None, None]
              + pp * ((1 + 2 * w) * p[:, m] / (w * c**2))[:, None, None])
        cross = np.einsum("nij,nji->n", F, Bm @ r @ B)
        d_p[:, m] = -(p[:, m] / w**3) * (trF + u * trFBrB) + 2 * (u / w) * cross
    return d_r, d_p, d_u


def jacobian(field: ScalarField, spec, mode: str = "analytic"):
    """Sparse derivative of the residual with respect to the inside values."""
    if mode == "finite-difference":
        return _fd_jacobian(field, spec)
    if mode != "analytic":
        raise ValueError(f"unknown jacobian mode {mode!r}")
    loc = _local(field, spec)
    d_r, d_p, d_u = _analytic_blocks(loc)
    ops = field.grid.ops
    diag = sparse.diags
    J = (diag(d_r[:, 0, 0]) @ ops["xx"][0]
         + diag(d_r[:, 1, 1]) @ ops["yy"][0]
         + diag(d_r[:, 0, 1] + d_r[:, 1, 0]) @ ops["xy"][0]
         + diag(d_p[:, 0]) @ ops["x"][0]
         + diag(d_p[:, 1]) @ ops["y"][0]
         + diag(d_u))
    return J.tocsr()


def _pattern(grid: Grid):
    P = sparse.identity(grid.size, format="csr")
    for M, _ in grid.ops.values():
        P = P + abs(M)
    return P.tocoo()


def _fd_jacobian(field: ScalarField, spec, rel_step: float = 1e-4):
    """Central differences, nine residual pairs thanks to a mod-3 colouring."""
    grid = field.grid
    pat = _pattern(grid)
    colour = grid.coloring()
    step = rel_step * grid.h**2 * np.maximum(1.0, np.abs(field.values))
    vals = np.zeros(pat.nnz)
    for c in range(9):
        cols = colour == c
        if not cols.any():
            continue
        e = np.where(cols, step, 0.0)
        rp = residual(field.with_values(field.values + e), spec)
        rm = residual(field.with_values(field.values - e), spec)
        sel = cols[pat.col]
        vals[sel] = (rp - rm)[pat.row[sel]] / (2 * step[pat.col[sel]])
    return sparse.csr_matrix((vals, (pat.row, pat.col)), shape=(grid.size, grid.size))


# ---------------------------------------------------------------------------
# Newton


def _w_stats(field: ScalarField):
    s = field.sample()
    grid = field.grid
    w = s.w
    band = grid.band
    stats = {"band_mean": float(w[band].mean()), "band_max": float(w[band].max()),
             "band_min": float(w[band].min()), "interior_max": float(w.max())}
    if np.isscalar(field.eps) or np.ndim(field.eps) == 0:
        slope = grid.normal_slopes(field.values, field.boundary())
        wt = np.sqrt(1 + slope**2)
        stats.update(trace_mean=float(wt.mean()), trace_max=float(wt.max()), trace_min=float(wt.min()))
    return stats


def _kappa_stats(loc: _Local):
    return {"min": float(loc.kappa.min()), "max": float(loc.kappa.max())}


def newton_solve(field: ScalarField, spec, params: NewtonParams = NewtonParams(),
                 jacobian_mode: str = "analytic"):
    """Damped Newton keeping every accepted iterate admissible and above eps.

    Returns ``(field, report)``; ``report.converged`` is False when the
    damping floor or the iteration cap is hit.
    """
    eps = field.eps
    floor = eps * (1 - 1e-12)
    try:
        loc = _local(field, spec)
    except InadmissibleError as exc:
        raise InadmissibleError(exc.nodes, "initial field is not admissible") from None
    if np.any(field.values < floor):
        raise InadmissibleError(np.flatnonzero(field.values < floor), "initial field dips below eps")
    R = loc.f - field.sigma
    history = [float(np.abs(R).max())]
    damping = []
    min_adm = [float(_min_admissibility(loc.sample).min())]
    min_ratio = [float(field.values.min() / eps)]
    message = ""
    converged = history[-1] <= params.abs_tol
    it = 0
    while not converged and it < params.max_iters:
        it += 1
        J = jacobian(field, spec, jacobian_mode)
        step = spsolve(J.tocsc(), -R)
        if not np.all(np.isfinite(step)):
            message = f"singular Newton system at iteration {it}"
            break
        norm0 = np.linalg.norm(R)
        alpha = 1.0
        accepted = None
        while alpha >= params.damping_min:
            trial = field.with_values(field.values + alpha * step)
            if np.all(trial.values >= floor):
                try:
                    tloc = _local(trial, spec)
                except InadmissibleError:
                    tloc = None
                if tloc is not None:
                    Rt = tloc.f - field.sigma
                    if np.linalg.norm(Rt) <= (1 - 1e-4) * norm0 or np.abs(Rt).max() <= params.abs_tol:
                        accepted = (trial, tloc, Rt)
                        break
            alpha *= 0.5
        if accepted is None:
            message = f"damping floor {params.damping_min:g} reached at iteration {it}"
            break
        field, loc, R = accepted
        damping.append(alpha)
        history.append(float(np.abs(R).max()))
        min_adm.append(float(_min_admissibility(loc.sample).min()))
        min_ratio.append(float(field.values.min() / eps))
        converged = history[-1] <= params.abs_tol
        if not converged and alpha == 1.0 and np.abs(step).max() <= params.rel_tol * np.abs(field.values).max():
            message = f"stagnated at residual {history[-1]:.3e}"
            break
    if not converged and not message:
        message = f"no convergence in {params.max_iters} iterations"
    report = SolveReport(
        converged=bool(converged),
        residual_history=history,
        final_max_residual=history[-1],
        admissibility_ok=bool(min(min_adm) > 0 and min(min_ratio) >= 1 - 1e-12),
        boundary_w_stats=_w_stats(field),
        kappa_stats=_kappa_stats(loc),
        eps=float(eps),
        sigma=float(field.sigma),
        h=field.grid.h,
        iterations=it,
        damping_history=damping,
        min_admissibility=min_adm,
        min_height_ratio=min_ratio,
        message=message or "converged",
    )
    return field, report


# ---------------------------------------------------------------------------
# starting values and continuation


def _cap_heights(points, centres, radii, sigma, eps):
    """max over balls B(c, r) of the eps-level equidistant cap, and eps outside all balls."""
    s2 = 1 - sigma**2
    big = np.array([level_sphere_delta(r, sigma, eps) for r in radii]) / math.sqrt(s2)
    out = np.full(len(points), float(eps))
    chunk = max(1, 4_000_000 // max(len(centres), 1))
    for a in range(0, len(points), chunk):
        x = points[a:a + chunk]
        d2 = ((x[:, None, :] - centres[None, :, :]) ** 2).sum(-1)
        inside = d2 <= radii[None, :] ** 2
        v = np.where(inside, -sigma * big[None, :] + np.sqrt(np.maximum(big[None, :] ** 2 - d2, 0.0)), -np.inf)
        out[a:a + chunk] = np.maximum(out[a:a + chunk], v.max(axis=1))
    return out


def initial_guess(domain: DomainSpec, sigma: float, eps: float, grid: Grid | None = None,
                  h: float | None = None) -> ScalarField:
    """Envelope of eps-level equidistant caps over balls inscribed in the domain.

    On a disk this is the exact cap.  Elsewhere it sits below the solution,
    meets the boundary data and is admissible up to convex kinks.
    """
    if not 0 < sigma < 1:
        raise ValueError(f"sigma must lie in (0,1), got {sigma}")
    if grid is None:
        grid = build_grid(domain, h if h is not None else 1 / 64)
    centre, inradius = domain.inball()
    if not 0 < eps < inradius:
        raise ValueError(f"eps={eps} is not below the inradius {inradius:.4g} of the domain; "
                         "start the continuation from a smaller eps")
    if domain.kind == "ball":
        centres, radii = np.zeros((1, 2)), np.array([domain.params[0]])
    else:
        lo, hi = domain.bbox()
        spacing = max(grid.h, float(np.max(hi - lo)) / 96)
        xs = np.arange(lo[0], hi[0] + spacing, spacing)
        ys = np.arange(lo[1], hi[1] + spacing, spacing)
        X, Y = np.meshgrid(xs, ys)
        cand = np.stack([X.ravel(), Y.ravel()], -1)
        d = -domain.sdf(cand)
        keep = d > 2 * spacing
        centres = np.vstack([cand[keep], centre[None, :]])
        radii = np.concatenate([d[keep], [inradius]])
    values = _cap_heights(grid.nodes, centres, radii, sigma, eps)
    return ScalarField(grid, values, float(eps), float(sigma))


def _eps_floor(config: SolverConfig):
    return config.eps_floor_factor * config.grid_h


def eps_continuation(spec, domain: DomainSpec, config: SolverConfig, grid: Grid | None = None,
                     on_stage=None):
    """Solve along the eps schedule, warm-starting each stage from the last.

    Returns ``(field, reports)`` where ``field`` is the last converged stage
    (None if the first stage failed).  ``on_stage(field, report)`` is called
    after every converged stage.
    """
    floor = _eps_floor(config)
    if config.eps_schedule[-1] < floor * (1 - 1e-12):
        raise ValueError(f"eps schedule reaches {config.eps_schedule[-1]} below the grid floor "
                         f"{floor:.4g} = {config.eps_floor_factor} * h")
    if grid is None:
        grid = build_grid(domain, config.grid_h)
    reports = []
    best = None
    current = initial_guess(domain, config.sigma, config.eps_schedule[0], grid)
    for k, eps in enumerate(config.eps_schedule):
        if k > 0:
            # lowering the whole graph keeps D u, D^2 u and, since u * D^2u only
            # shrinks along a positive combination, admissibility
            shift = config.eps_schedule[k - 1] - eps
            current = ScalarField(grid, best.values - shift, eps, config.sigma)
            try:
                _local(current, spec)
            except InadmissibleError:
                current = ScalarField(grid, np.maximum(best.values, eps), eps, config.sigma)
        try:
            solved, rep = newton_solve(current, spec, config.newton, config.jacobian_mode)
        except InadmissibleError as exc:
            rep = SolveReport(False, [], math.inf, False, {}, {}, eps, config.sigma, grid.h, message=str(exc))
            reports.append(rep)
            break
        reports.append(rep)
        if not rep.converged:
            log.warning("eps=%g did not converge: %s", eps, rep.message)
            break
        best = solved
        if on_stage is not None:
            on_stage(solved, rep)
    return best, reports


@dataclass
class SweepResult:
    sigmas: list
    fields: list
    reports: list            # one list of continuation reports per sigma
    min_gaps: list           # min over nodes of u(sigma_k) - u(sigma_{k+1})
    nested: bool


def sigma_sweep(spec, domain: DomainSpec, sigmas, config: SolverConfig, strict: bool | None = None):
    """Solve for each sigma and check u^{s_i} > u^{s_j} for s_i < s_j at every node.

    ``strict`` defaults to membership of the uniqueness class; a crossing then
    raises NestingError.
    """
    sigmas = [float(s) for s in sigmas]
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])) or not all(0 < s < 1 for s in sigmas):
        raise ValueError(f"sigma list must be strictly increasing in (0,1), got {sigmas}")
    if strict is None:
        strict = symfunc.uniqueness_class(spec)
    grid = build_grid(domain, config.grid_h)
    fields, reports = [], []
    for s in sigmas:
        f, reps = eps_continuation(spec, domain, replace(config, sigma=s), grid)
        if f is None or not reps[-1].converged or f.eps != config.eps_schedule[-1]:
            last = reps[-1].message if reps else "no stages"
            raise RuntimeError(f"sigma={s}: continuation did not reach eps={config.eps_schedule[-1]} ({last})")
        fields.append(f)
        reports.append(reps)
    gaps = []
    for k in range(len(sigmas) - 1):
        diff = fields[k].values - fields[k + 1].values
        j = int(np.argmin(diff))
        gaps.append(float(diff[j]))
        if strict and not diff[j] > 0:
            raise NestingError(sigmas[k], sigmas[k + 1], j, grid.nodes[j], float(diff[j]))
    return SweepResult(sigmas, fields, reports, gaps, all(g > 0 for g in gaps))
