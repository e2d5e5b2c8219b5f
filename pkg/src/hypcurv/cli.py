"""Batch front end: ``hypcurv {solve,sweep,verify,oracle} --config FILE [--out DIR] [--seed N]``.

Config files are sectioned ``key = value`` text::

    [problem]
    spec = quotient n=2 l=1
    domain = ball 1.0
    sigma = 0.5
    sigma_list = 0.2, 0.4, 0.6, 0.8

    [grid]
    h = 1/64

    [continuation]
    eps = 0.2, 0.1, 0.05, 0.02

    [newton]
    max_iters = 60
    abs_tol = 1e-10
    rel_tol = 1e-14
    damping_min = 1e-6
    jacobian = analytic

    [sweep]
    strict = auto

    [verify]
    specs = quotient n=2 l=0; quotient n=2 l=1
    samples = 10000

    [oracle]
    dims = 2, 3, 4
    tol = 1e-6

    [run]
    seed = 0

``#`` starts a comment.  Every error is reported with its line number.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import platform
import sys
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import metadata
from pathlib import Path

import numpy as np

from . import symfunc, verify
from .hypgeo import asymptotic_angle, hyperbolic_curvatures, level_sphere_delta
from .solver import (
    DomainSpec,
    InadmissibleError,
    NestingError,
    NewtonParams,
    SolverConfig,
    eps_continuation,
    parse_domain,
    radial_solve,
    sigma_sweep,
)
from .solver.core import _local
from .symfunc import Quotient

__all__ = ["RunConfig", "ConfigError", "parse_config", "export_mesh", "run", "main"]

log = logging.getLogger("hypcurv")

COMMANDS = ("solve", "sweep", "verify", "oracle")
EXIT_OK, EXIT_NONCONVERGED, EXIT_CHECK_FAILED = 0, 2, 3

_KEYS = {
    "run": {"command", "seed"},
    "problem": {"spec", "domain", "sigma", "sigma_list"},
    "grid": {"h"},
    "continuation": {"eps", "floor_factor"},
    "newton": {"max_iters", "abs_tol", "rel_tol", "damping_min", "jacobian"},
    "sweep": {"strict"},
    "verify": {"specs", "samples"},
    "oracle": {"dims", "tol"},
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(self.errors))


@dataclass
class RunConfig:
    command: str | None = None
    spec: object = Quotient(2, 1)
    domain: DomainSpec = DomainSpec.ball(1.0)
    sigma: float = 0.5
    sigma_list: tuple = (0.2, 0.4, 0.6, 0.8)
    eps_schedule: tuple = (0.2, 0.1, 0.05, 0.02)
    grid_h: float = 1 / 64
    eps_floor_factor: float = 1.0
    newton: NewtonParams = NewtonParams()
    jacobian_mode: str = "analytic"
    strict: str = "auto"
    verify_specs: tuple = verify.DEFAULT_SPECS
    samples: int = 10_000
    oracle_dims: tuple = (2, 3, 4)
    oracle_tol: float = 1e-6
    seed: int = 0
    out_dir: Path = Path("out")

    def solver_config(self, sigma=None) -> SolverConfig:
        return SolverConfig(sigma=self.sigma if sigma is None else sigma, eps_schedule=self.eps_schedule,
                            grid_h=self.grid_h, newton=self.newton, jacobian_mode=self.jacobian_mode,
                            eps_floor_factor=self.eps_floor_factor)

    def echo(self) -> str:
        """Canonical text form; parsing it gives back the same config."""
        fl = repr
        lines = [
            "[run]",
            f"command = {self.command or ''}".rstrip(),
            f"seed = {self.seed}",
            "[problem]",
            f"spec = {self.spec}",
            f"domain = {self.domain}",
            f"sigma = {fl(self.sigma)}",
            "sigma_list = " + ", ".join(map(fl, self.sigma_list)),
            "[grid]",
            f"h = {fl(self.grid_h)}",
            "[continuation]",
            "eps = " + ", ".join(map(fl, self.eps_schedule)),
            f"floor_factor = {fl(self.eps_floor_factor)}",
            "[newton]",
            f"max_iters = {self.newton.max_iters}",
            f"abs_tol = {fl(self.newton.abs_tol)}",
            f"rel_tol = {fl(self.newton.rel_tol)}",
            f"damping_min = {fl(self.newton.damping_min)}",
            f"jacobian = {self.jacobian_mode}",
            "[sweep]",
            f"strict = {self.strict}",
            "[verify]",
            "specs = " + "; ".join(map(str, self.verify_specs)),
            f"samples = {self.samples}",
            "[oracle]",
            "dims = " + ", ".join(map(str, self.oracle_dims)),
            f"tol = {fl(self.oracle_tol)}",
        ]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# parsing


def _number(text):
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _numbers(text):
    parts = [p for p in text.replace(",", " ").split()]
    if not parts:
        raise ValueError("empty list")
    return tuple(_number(p) for p in parts)


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate; raises ConfigError carrying every problem found."""
    errors = []
    raw = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            name = body.strip("[]").strip().lower()
            if not body.endswith("]") or name not in _KEYS:
                errors.append(f"line {lineno}: unknown section {body!r}")
                section = None
            else:
                section = name
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value', got {body!r}")
            continue
        key, value = (s.strip() for s in body.split("=", 1))
        key = key.lower()
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside a known section")
        elif key not in _KEYS[section]:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
        elif (section, key) in raw:
            errors.append(f"line {lineno}: duplicate key {key!r} in [{section}]")
        else:
            raw[(section, key)] = (lineno, value)

    top, newton = {}, {}

    def take(section, key, convert, check=None, target=None, into=top):
        if (section, key) not in raw:
            return
        lineno, value = raw[(section, key)]
        try:
            result = convert(value)
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            errors.append(f"line {lineno}: [{section}] {key}: cannot parse {value!r} ({exc})")
            return
        problem = check(result) if check is not None else None
        if problem:
            errors.append(f"line {lineno}: [{section}] {key}: {problem}")
        else:
            into[target or key] = result

    def positive(x):
        return None if x > 0 else f"must be positive, got {x}"

    def in_unit(xs):
        xs = xs if isinstance(xs, tuple) else (xs,)
        bad = [x for x in xs if not 0 < x < 1]
        return f"sigma must lie in (0,1), got {bad[0]}" if bad else None

    def increasing(xs):
        return in_unit(xs) or (None if all(b > a for a, b in zip(xs, xs[1:]))
                               else f"sigma_list must be strictly increasing, got {xs}")

    def decreasing(xs):
        if any(x <= 0 for x in xs):
            return "eps values must be positive"
        if any(b >= a for a, b in zip(xs, xs[1:])):
            return f"eps schedule must be strictly decreasing, got {xs}"
        return None

    def spec_list(v):
        return tuple(symfunc.parse_spec(p) for p in v.split(";") if p.strip())

    def dims(v):
        return tuple(int(x) for x in v.replace(",", " ").split())

    take("run", "command", str.strip,
         lambda c: None if c in COMMANDS else f"unknown command {c!r}, expected one of {', '.join(COMMANDS)}")
    take("run", "seed", int, lambda s: None if s >= 0 else "seed must be non-negative")
    take("problem", "spec", symfunc.parse_spec)
    take("problem", "domain", parse_domain)
    take("problem", "sigma", _number, in_unit)
    take("problem", "sigma_list", _numbers, increasing)
    take("grid", "h", _number, positive, target="grid_h")
    take("continuation", "eps", _numbers, decreasing, target="eps_schedule")
    take("continuation", "floor_factor", _number, lambda x: None if x >= 0 else "must be >= 0",
         target="eps_floor_factor")
    take("newton", "max_iters", int, positive, into=newton)
    take("newton", "abs_tol", _number, positive, into=newton)
    take("newton", "rel_tol", _number, positive, into=newton)
    take("newton", "damping_min", _number, lambda x: None if 0 < x < 1 else "must lie in (0,1)", into=newton)
    take("newton", "jacobian", str.strip,
         lambda m: None if m in ("analytic", "finite-difference") else "expected analytic or finite-difference",
         target="jacobian_mode")
    take("sweep", "strict", lambda v: v.strip().lower(),
         lambda v: None if v in ("auto", "true", "false") else "expected auto, true or false")
    take("verify", "specs", spec_list, lambda xs: None if xs else "empty spec list", target="verify_specs")
    take("verify", "samples", int, positive)
    take("oracle", "dims", dims, lambda ds: None if ds and all(d >= 2 for d in ds) else "dimensions must be >= 2",
         target="oracle_dims")
    take("oracle", "tol", _number, positive, target="oracle_tol")
    if errors:
        raise ConfigError(errors)

    cfg = replace(RunConfig(), **top)
    if newton:
        cfg = replace(cfg, newton=replace(cfg.newton, **newton))
    if command is not None:
        cfg = replace(cfg, command=command)
    return _cross_checks(cfg, raw)


def _cross_checks(cfg: RunConfig, raw) -> RunConfig:
    errors = []
    floor = cfg.eps_floor_factor * cfg.grid_h
    if cfg.eps_schedule[-1] < floor * (1 - 1e-12):
        line = raw.get(("continuation", "eps"), (0, ""))[0]
        errors.append(f"line {line}: [continuation] eps: final eps {cfg.eps_schedule[-1]} is below the grid "
                      f"floor {floor:.6g} (= floor_factor * h)")
    if cfg.command == "oracle" and cfg.domain.kind != "ball":
        line = raw.get(("problem", "domain"), (0, ""))[0]
        errors.append(f"line {line}: [problem] domain: the oracle command needs a ball domain")
    if errors:
        raise ConfigError(errors)
    return cfg


# ---------------------------------------------------------------------------
# artifacts


def _g(x) -> str:
    return f"{float(x):.12g}"


def _mesh_faces(grid, pts):
    """Counterclockwise triangles over lattice cells with at least three inside corners."""
    lookup = {ij: k for k, ij in enumerate(map(tuple, grid.ij))}
    cells = set()
    for i, j in lookup:
        cells.update(((i, j), (i - 1, j), (i, j - 1), (i - 1, j - 1)))
    faces = []
    for i, j in sorted(cells):
        a, b, c, d = (lookup.get(q) for q in ((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)))
        present = sum(x is not None for x in (a, b, c, d))
        if present == 4:
            if np.linalg.norm(pts[a] - pts[d]) <= np.linalg.norm(pts[b] - pts[c]):
                faces += [(a, b, d), (a, d, c)]
            else:
                faces += [(a, b, c), (b, d, c)]
        elif present == 3:
            faces.append({a: (b, d, c), b: (a, d, c), c: (a, b, d), d: (a, b, c)}[None])
    return faces


def export_mesh(field, path, spec=None):
    """Write an OBJ triangle mesh of the graph plus a per-vertex CSV sidecar.

    Vertices are the inside nodes in grid order.  Full lattice cells are cut
    along the shorter diagonal in 3-D; cells with one corner outside give a
    single triangle.  Returns (mesh_path, sidecar_path).
    """
    path = Path(path)
    pts = np.column_stack([field.grid.nodes, field.values])
    faces = _mesh_faces(field.grid, pts)

    buf = io.StringIO()
    buf.write(f"# graph mesh: {len(pts)} vertices, {len(faces)} faces, "
              f"sigma={_g(field.sigma)}, eps={_g(field.eps)}\n")
    for x, y, z in pts:
        buf.write(f"v {_g(x)} {_g(y)} {_g(z)}\n")
    for a, b, c in faces:
        buf.write(f"f {a + 1} {b + 1} {c + 1}\n")

    s = field.sample()
    if spec is not None:
        kap = _local(field, spec).kappa
    else:
        kap = hyperbolic_curvatures(s, cross_check=False).kappa_hyp
    nu = 1 / s.w
    eta = asymptotic_angle(s, field.sigma)
    sbuf = io.StringIO()
    writer = csv.writer(sbuf, lineterminator="\n")
    writer.writerow(["vertex", "x", "y", "u", "kappa_min", "kappa_max", "nu", "eta"])
    for k in range(len(pts)):
        writer.writerow([k + 1, _g(pts[k, 0]), _g(pts[k, 1]), _g(pts[k, 2]), _g(kap[k, 0]), _g(kap[k, -1]),
                         _g(nu[k]), _g(eta[k])])
    side = path.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    side.write_text(sbuf.getvalue())
    return path, side


def _write_report(out: Path, reports):
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "status", "measured", "bound", "citation"])
    for r in reports:
        writer.writerow(r.csv_row())
    (out / "report.csv").write_text(buf.getvalue())


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    import scipy
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "hypcurv": own}


def _write_manifest(out: Path, cfg: RunConfig, exit_code: int, artifacts):
    lines = ["# run manifest", f"command = {cfg.command}", f"seed = {cfg.seed}", f"exit_code = {exit_code}"]
    lines += [f"version.{k} = {v}" for k, v in _versions().items()]
    lines += [f"artifact = {a}" for a in sorted(artifacts)]
    lines += ["", "# configuration", cfg.echo()]
    (out / "manifest.txt").write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# commands


def _solver_row(reports, sigma):
    last = reports[-1] if reports else None
    ok = bool(last and last.converged)
    measured = {"stages": len(reports), "iterations": sum(r.iterations for r in reports),
                "final_eps": last.eps if last else math.nan,
                "final_max_residual": last.final_max_residual if last else math.inf}
    return verify.CheckReport(f"solver_convergence[sigma={sigma:.3f}]", verify.PASS if ok else verify.FAIL,
                              measured, "max |f(kappa) - sigma| <= abs_tol at every stage",
                              "approximate-dirichlet-problem",
                              detail="" if ok else (last.message if last else "no stage ran"))


def _solution_checks(field, stage_fields, reports, spec):
    out = [
        verify.admissible_iterates_check(reports),
        verify.boundary_angle_check(field),
        verify.eta_maximum_principle(field),
        verify.gradient_bound_check(field),
        verify.height_convexity_check(field),
        verify.curvature_domination_check(stage_fields, spec),
    ]
    if isinstance(spec, Quotient) and spec.l == spec.n - 1:
        out.append(verify.interior_bound_HnHn1(field, spec))
    return out


def _cmd_solve(cfg: RunConfig, out: Path):
    stages = []
    try:
        field, reports = eps_continuation(cfg.spec, cfg.domain, cfg.solver_config(),
                                          on_stage=lambda f, r: stages.append(f))
    except (InadmissibleError, ValueError) as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED, [], []
    rows = [_solver_row(reports, cfg.sigma)]
    if field is None or not reports[-1].converged:
        return EXIT_NONCONVERGED, rows, []
    rows += _solution_checks(field, stages, reports, cfg.spec)
    mesh, side = export_mesh(field, out / f"surface_sigma{cfg.sigma:.3f}.obj", cfg.spec)
    return EXIT_OK, rows, [mesh.name, side.name]


def _cmd_sweep(cfg: RunConfig, out: Path):
    strict = {"auto": None, "true": True, "false": False}[cfg.strict]
    try:
        result = sigma_sweep(cfg.spec, cfg.domain, cfg.sigma_list, cfg.solver_config(cfg.sigma_list[0]), strict)
    except NestingError as exc:
        row = verify.CheckReport("foliation_nesting", verify.FAIL,
                                 {"sigma_lo": exc.sigma_lo, "sigma_hi": exc.sigma_hi, "node": exc.node,
                                  "x": exc.point[0], "y": exc.point[1], "gap": exc.gap},
                                 "u(sigma_i) - u(sigma_j) > 0 at every node for sigma_i < sigma_j",
                                 "foliation-nesting", detail=str(exc))
        print(str(exc), file=sys.stderr)
        return EXIT_CHECK_FAILED, [row], []
    except RuntimeError as exc:
        print(f"sweep failed: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED, [], []
    rows = [_solver_row(r, s) for s, r in zip(result.sigmas, result.reports)]
    nest = verify.nesting_check(result)
    if strict is False or (strict is None and not symfunc.uniqueness_class(cfg.spec)):
        # ordering is only guaranteed inside the uniqueness class
        nest.status = verify.PASS if result.nested else verify.OBSERVATIONAL
    rows.append(nest)
    artifacts = []
    for s, f, reps in zip(result.sigmas, result.fields, result.reports):
        rows.append(verify.admissible_iterates_check(reps))
        rows[-1].check_name += f"[sigma={s:.3f}]"
        rows.append(verify.height_convexity_check(f))
        rows[-1].check_name += f"[sigma={s:.3f}]"
        mesh, side = export_mesh(f, out / f"surface_sigma{s:.3f}.obj", cfg.spec)
        artifacts += [mesh.name, side.name]
    return EXIT_OK, rows, artifacts


def _cmd_verify(cfg: RunConfig, out: Path):
    return EXIT_OK, verify.run_structure_suite(cfg.verify_specs, cfg.seed, cfg.samples), []


def _cmd_oracle(cfg: RunConfig, out: Path):
    delta = cfg.domain.params[0]
    eps = cfg.eps_schedule[-1]
    rows = []
    code = EXIT_OK
    specs = []
    if isinstance(cfg.spec, Quotient):
        for n in cfg.oracle_dims:
            specs += [Quotient(n, l) for l in sorted({0, n - 2, n - 1})]
    else:
        specs = [cfg.spec]
    R = level_sphere_delta(delta, cfg.sigma, eps) / math.sqrt(1 - cfg.sigma**2)
    r = np.linspace(0.0, delta, 2001)
    exact = -cfg.sigma * R + np.sqrt(R**2 - r**2)
    for spec in specs:
        prof = radial_solve(spec, delta, cfg.sigma, eps)
        if not prof.converged:
            code = EXIT_NONCONVERGED
            rows.append(verify.CheckReport(f"radial_oracle[{spec}]", verify.FAIL, {"converged": False},
                                           "collocation converged", "equidistant-sphere-oracle",
                                           detail=prof.message))
            continue
        err = float(np.abs(prof(r) - exact).max())
        print(f"{spec}: max|radial - cap| = {err:.3e}")
        rows.append(verify.CheckReport(
            f"radial_oracle[{spec}]", verify.PASS if err <= cfg.oracle_tol else verify.FAIL,
            {"max_abs_error": err, "sigma": cfg.sigma, "eps": eps, "mesh_nodes": len(prof.r)},
            f"max |u_radial - v| <= {cfg.oracle_tol:g}", "equidistant-sphere-oracle"))
    return code, rows, []


_DISPATCH = {"solve": _cmd_solve, "sweep": _cmd_sweep, "verify": _cmd_verify, "oracle": _cmd_oracle}


def run(command: str, config: RunConfig) -> int:
    """Execute one command, write report.csv, meshes and manifest.txt; return the exit code."""
    if command not in _DISPATCH:
        raise ValueError(f"unknown command {command!r}")
    cfg = replace(config, command=command)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    code, rows, artifacts = _DISPATCH[command](cfg, out)
    if code == EXIT_OK and any(r.status == verify.FAIL for r in rows):
        code = EXIT_CHECK_FAILED
    _write_report(out, rows)
    _write_manifest(out, cfg, code, artifacts + ["report.csv"])
    for r in rows:
        print(f"{r.status:>13}  {r.check_name}")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hypcurv", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: ./out)")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text, command=args.command)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return run(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
