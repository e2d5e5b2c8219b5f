"""Machine-checkable reports over solver outputs and randomized curvature-function suites."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import symfunc
from .hypgeo import admissibility_matrix
from .solver.core import ScalarField, _local
from .symfunc import ConcaveSum, Quotient

__all__ = [
    "CheckReport",
    "PASS",
    "FAIL",
    "OBSERVATIONAL",
    "band_slack",
    "boundary_angle_check",
    "eta_maximum_principle",
    "gradient_bound_check",
    "curvature_domination_check",
    "interior_bound_HnHn1",
    "height_convexity_check",
    "admissible_iterates_check",
    "nesting_check",
    "run_structure_suite",
    "DEFAULT_SPECS",
    "OUTSIDE_CLASS_SPECS",
]

PASS, FAIL, OBSERVATIONAL = "pass", "fail", "observational"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


@dataclass
class CheckReport:
    check_name: str
    status: str
    measured: dict
    bound: str
    citation: str
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def csv_row(self):
        measured = ";".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return [self.check_name, self.status, measured, self.bound, self.citation]


# ---------------------------------------------------------------------------
# helpers over a converged field


def band_slack(field: ScalarField) -> float:
    """Declared discretization slack 10 h (1 + max |D^2 u| over the boundary band)."""
    s = field.sample()
    band = field.grid.band
    norm = np.abs(np.linalg.eigvalsh(s.d2u[band])).max()
    return 10 * field.grid.h * (1 + float(norm))


def _interior(field: ScalarField):
    mask = np.ones(field.grid.size, dtype=bool)
    mask[field.grid.band] = False
    return mask


def _eta(field: ScalarField):
    s = field.sample()
    return (field.sigma - 1 / s.w) / s.u


# ---------------------------------------------------------------------------
# estimates along the boundary


def boundary_angle_check(field: ScalarField, sigma: float | None = None, eps: float | None = None,
                         r1: float | None = None, c_cap: float = 10.0) -> CheckReport:
    """Boundary slope against 1/sigma + C eps, and the asymptotic-angle bound.

    The eta bound is only claimed for eps below an unspecified threshold, so
    a violation makes the report observational rather than failing.
    """
    sigma = field.sigma if sigma is None else sigma
    eps = field.eps if eps is None else eps
    r1 = field.grid.domain.exterior_radius() if r1 is None else r1
    s = field.sample()
    w = s.w
    band = field.grid.band
    slopes = field.grid.normal_slopes(field.values, field.boundary())
    w_trace = np.sqrt(1 + slopes**2)
    w_band_max = float(w[band].max())
    c_fit = max(0.0, (float(w.max()) - 1 / sigma) / eps)
    eta_max = float(_eta(field).max())
    eta_bound = (math.sqrt(1 - sigma**2) / r1 + eps * (1 + sigma) / r1**2) if math.isfinite(r1) else 0.0
    slack = band_slack(field)
    w_ok = c_fit <= c_cap
    eta_ok = eta_max <= eta_bound + slack
    status = PASS if (w_ok and eta_ok) else (FAIL if not w_ok else OBSERVATIONAL)
    return CheckReport(
        "boundary_angle",
        status,
        {"w_band_max": w_band_max, "w_band_mean": float(w[band].mean()),
         "w_trace_mean": float(w_trace.mean()), "w_trace_max": float(w_trace.max()),
         "w_max": float(w.max()), "c_fit": c_fit, "eta_max": eta_max, "eta_bound": eta_bound,
         "slack": slack, "r1": r1},
        f"w_max <= 1/sigma + c_fit*eps with c_fit <= {c_cap}; "
        f"eta_max <= sqrt(1-sigma^2)/r1 + eps(1+sigma)/r1^2 + slack = {eta_bound + slack:.6g}",
        "boundary-angle-law",
    )


def eta_maximum_principle(field: ScalarField, sigma: float | None = None) -> CheckReport:
    sigma = field.sigma if sigma is None else sigma
    s = field.sample()
    eta = (sigma - 1 / s.w) / s.u
    inner = _interior(field)
    band_max = float(eta[field.grid.band].max())
    inner_max = float(eta[inner].max()) if inner.any() else -math.inf
    slack = band_slack(field)
    ok = inner_max <= band_max + slack
    return CheckReport(
        "eta_maximum_principle",
        PASS if ok else FAIL,
        {"interior_max": inner_max, "band_max": band_max, "spread": float(eta.max() - eta.min()),
         "slack": slack},
        f"interior max eta <= band max eta + {slack:.6g}",
        "asymptotic-angle-maximum-principle",
    )


def gradient_bound_check(field: ScalarField) -> CheckReport:
    """u w is bounded by max u or by its boundary-band maximum."""
    s = field.sample()
    uw = s.u * s.w
    inner = _interior(field)
    inner_max = float(uw[inner].max()) if inner.any() else -math.inf
    band_max = float(uw[field.grid.band].max())
    u_max = float(s.u.max())
    slack = band_slack(field)
    ok = inner_max <= max(u_max, band_max) + slack
    branch = "max_u" if u_max >= band_max else "boundary"
    return CheckReport(
        "gradient_bound",
        PASS if ok else FAIL,
        {"interior_max_uw": inner_max, "band_max_uw": band_max, "max_u": u_max,
         "slack": slack, "equality_gap": inner_max - u_max},
        f"interior max uw <= max(max u, band max uw) + {slack:.6g} (dominant: {branch})",
        "height-gradient-bound",
    )


def curvature_domination_check(fields, spec, growth_flag: float = 1.2) -> CheckReport:
    """Observational: interior max kappa over (1 + band max kappa), per field.

    ``fields`` is one field or a sequence (e.g. along an eps schedule or an
    h-refinement); the spread of the ratio is reported and flagged.
    """
    if isinstance(fields, ScalarField):
        fields = [fields]
    ratios = []
    for f in fields:
        kmax = _local(f, spec).kappa[:, -1]
        inner = _interior(f)
        ratios.append(float(kmax[inner].max() / (1 + kmax[f.grid.band].max())))
    spread = max(ratios) / min(ratios)
    measured = {f"ratio_{k}": r for k, r in enumerate(ratios)}
    measured.update(spread=spread, flagged=spread > growth_flag)
    return CheckReport(
        "curvature_domination",
        OBSERVATIONAL,
        measured,
        f"ratio reported; growth flagged above {growth_flag}",
        "curvature-domination",
    )


def interior_bound_HnHn1(field: ScalarField, spec, theta: float | None = None,
                         rtol: float = 1e-8) -> CheckReport:
    """For f = H_n/H_{n-1}: reports max (u - theta)_+ kappa_max and checks
    1 <= sum f_i <= n and sum kappa_i^2 f_i = sigma^2 at every node."""
    if not (isinstance(spec, Quotient) and spec.l == spec.n - 1):
        raise ValueError(f"needs the quotient with l = n-1, got {spec}")
    loc = _local(field, spec)
    u = field.values
    theta = float(u.max()) / 4 if theta is None else float(theta)
    phi = np.maximum(u - theta, 0.0)
    sum_fi = loc.fi.sum(axis=-1)
    sum_k2 = (loc.kappa**2 * loc.fi).sum(axis=-1)
    # the identity holds for f itself; the solver leaves |f - sigma| <= residual
    target = loc.f**2
    dev_sigma = float(np.abs(sum_k2 - field.sigma**2).max() / field.sigma**2)
    dev = float(np.abs(sum_k2 - target).max() / target.min())
    n = spec.n
    ok = bool(np.all(sum_fi >= 1 - rtol) and np.all(sum_fi <= n * (1 + rtol)) and dev <= rtol)
    return CheckReport(
        "interior_bound_HnHn1",
        PASS if ok else FAIL,
        {"max_phi_kappa": float((phi * loc.kappa[:, -1]).max()), "theta": theta,
         "min_sum_fi": float(sum_fi.min()), "max_sum_fi": float(sum_fi.max()),
         "sum_k2fi_rel_dev": dev, "sum_k2fi_vs_sigma2": dev_sigma},
        f"1 <= sum f_i <= {n}; sum kappa^2 f_i = f^2 within {rtol:g}",
        "interior-curvature-bound",
    )


def height_convexity_check(field: ScalarField) -> CheckReport:
    """Discrete Hessian of u^2 + |x|^2 is positive definite at every node."""
    grid = field.grid
    U = field.values**2 + (grid.nodes**2).sum(axis=-1)
    g = grid.boundary_values(lambda x: field.eps**2 + (x**2).sum(axis=-1))
    s = grid.sample(U, g)
    eig = np.linalg.eigvalsh(s.d2u)[:, 0]
    # continuum value for comparison: 2 (I + Du Du^T + u D^2u)
    cont = np.linalg.eigvalsh(2 * admissibility_matrix(field.sample()))[:, 0]
    return CheckReport(
        "height_convexity",
        PASS if eig.min() > 0 else FAIL,
        {"min_eigenvalue": float(eig.min()), "min_eigenvalue_chain_rule": float(cont.min()),
         "worst_node": int(np.argmin(eig))},
        "min eigenvalue of discrete D^2(u^2+|x|^2) > 0",
        "strict-convexity-of-u2-plus-x2",
    )


def admissible_iterates_check(reports) -> CheckReport:
    """Every accepted Newton iterate admissible and above eps(1 - 1e-12)."""
    reports = list(reports)
    min_adm = min(min(r.min_admissibility) for r in reports)
    min_ratio = min(min(r.min_height_ratio) for r in reports)
    iterates = sum(len(r.min_admissibility) for r in reports)
    ok = min_adm > 0 and min_ratio >= 1 - 1e-12
    return CheckReport(
        "admissible_iterates",
        PASS if ok else FAIL,
        {"iterates": iterates, "min_admissibility": min_adm, "min_u_over_eps": min_ratio},
        "min eigenvalue of I + Du Du^T + u D^2u > 0 and u >= eps(1-1e-12)",
        "admissible-solution-class",
    )


def nesting_check(sweep) -> CheckReport:
    gaps = sweep.min_gaps
    return CheckReport(
        "foliation_nesting",
        PASS if sweep.nested else FAIL,
        {**{f"gap_{a}_{b}": g for a, b, g in zip(sweep.sigmas, sweep.sigmas[1:], gaps)},
         "min_gap": min(gaps) if gaps else math.inf},
        "u(sigma_i) - u(sigma_j) > 0 at every node for sigma_i < sigma_j",
        "foliation-nesting",
    )


# ---------------------------------------------------------------------------
# randomized curvature-function suite

DEFAULT_SPECS = (
    Quotient(2, 0), Quotient(2, 1), Quotient(3, 0), Quotient(3, 1), Quotient(3, 2),
    Quotient(4, 2), Quotient(4, 3),
    ConcaveSum(((0.5, Quotient(2, 0)), (0.5, Quotient(2, 1)))),
)
OUTSIDE_CLASS_SPECS = (Quotient(3, 0), Quotient(4, 1), Quotient(5, 2))


def _margin_reports(spec: Quotient, sample_count: int, seed: int):
    lam = symfunc.sample_cone(spec.n, sample_count, seed)
    f, grad = symfunc._value_grad(spec, lam)
    closed = symfunc.uniqueness_margin(spec, lam)
    direct = grad.sum(-1) - (lam**2 * grad).sum(-1)
    scale = grad.sum(-1) + (lam**2 * grad).sum(-1)
    match = float(np.max(np.abs(closed - direct) / scale))
    out = [CheckReport(
        f"margin_closed_form[{spec}]",
        PASS if match <= 1e-10 else FAIL,
        {"max_rel_diff": match, "samples": sample_count},
        "|closed - direct| <= 1e-10 (sum f_i + sum lam^2 f_i)",
        "uniqueness-margin",
    )]
    # rescale so f is spread over (0, 1), where the margin condition lives
    t = np.random.default_rng(seed + 2).uniform(1e-3, 1.0, sample_count)
    lam1 = lam * (t / f)[:, None]
    f1 = symfunc._value_grad(spec, lam1)[0]
    m = symfunc.uniqueness_margin(spec, lam1)
    n, l = spec.n, spec.l
    if l >= n - 2:
        excess = (1 - f1**2 - 1e-9) - m
        bad = int(np.count_nonzero(excess > 0))
        out.append(CheckReport(
            f"margin_lower_bound[{spec}]",
            PASS if bad == 0 else FAIL,
            {"violations": bad, "worst_excess": float(excess.max()), "samples": sample_count},
            "margin >= 1 - f^2 - 1e-9 where f < 1",
            "uniqueness-margin",
        ))
    else:
        neg = int(np.count_nonzero(m <= 0))
        out.append(CheckReport(
            f"margin_sign[{spec}]",
            OBSERVATIONAL,
            {"nonpositive": neg, "min_margin": float(m.min()), "samples": sample_count},
            "margin > 0 where f < 1 (not expected outside l = n-1, n-2)",
            "uniqueness-margin",
            detail="expected-outside-class" if neg else "no counterexample sampled",
        ))
    return out


def run_structure_suite(specs=None, seed: int = 0, sample_count: int = 10_000,
                        outside_class=None, limit_tol: float = 1e-3):
    """Structure conditions, limit values and uniqueness margins as CheckReports."""
    specs = DEFAULT_SPECS if specs is None else tuple(specs)
    outside_class = OUTSIDE_CLASS_SPECS if outside_class is None else tuple(outside_class)
    reports = []
    for spec in specs:
        rep = symfunc.check_structure(spec, sample_count, seed)
        measured = {name: count for name, count, _ in rep.rows()}
        measured["samples"] = sample_count
        reports.append(CheckReport(
            f"structure[{spec}]",
            PASS if rep.passed else FAIL,
            measured,
            "zero violations of positivity, monotonicity, concavity, homogeneity, "
            "normalization, mean bound, sum f_i >= 1",
            "structure-conditions",
        ))
        if math.isfinite(rep.limit_target):
            gap = abs(rep.limit - rep.limit_target)
            reports.append(CheckReport(
                f"limit[{spec}]",
                PASS if gap <= limit_tol else FAIL,
                {"limit": rep.limit, "target": rep.limit_target, "ball_min": rep.limit_ball_min},
                f"|f(1,...,1,1+R) - target| <= {limit_tol:g} at R=1e6",
                "limit-at-infinity",
            ))
        if isinstance(spec, Quotient):
            reports.extend(_margin_reports(spec, sample_count, seed))
    for spec in outside_class:
        if spec not in specs:
            reports.extend(r for r in _margin_reports(spec, sample_count, seed) if "sign" in r.check_name)
    return reports
