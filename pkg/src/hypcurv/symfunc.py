"""Curvature functions built from normalized elementary symmetric polynomials.

Every evaluator accepts a single point ``lam`` of shape ``(n,)`` or a batch of
shape ``(..., n)`` and works on the positive cone (all entries > 0).

Supported functions are the curvature quotients ``(H_n / H_l) ** (1 / (n - l))``
for ``0 <= l < n`` and their concave sums / concave products with positive
weights summing to one.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "ConeError",
    "Quotient",
    "ConcaveSum",
    "ConcaveProduct",
    "CurvatureSpec",
    "FEval",
    "StructureReport",
    "parse_spec",
    "elementary",
    "elementary_deleted",
    "normalized_elementary",
    "f_eval",
    "f_grad",
    "f_hess",
    "evaluate",
    "sum_fi_closed",
    "sum_lambda2_fi_closed",
    "uniqueness_margin",
    "uniqueness_margin_direct",
    "uniqueness_class",
    "maclaurin_gap",
    "maclaurin_check",
    "limit_value",
    "check_structure",
    "sample_cone",
]


class ConeError(ValueError):
    """Raised when a point lies outside the positive cone."""


@dataclass(frozen=True)
class Quotient:
    n: int
    l: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"dimension must be >= 1, got n={self.n}")
        if not 0 <= self.l < self.n:
            raise ValueError(f"quotient index must satisfy 0 <= l < n, got n={self.n}, l={self.l}")

    def __str__(self):
        return f"quotient n={self.n} l={self.l}"


def _check_terms(terms, kind):
    if not terms:
        raise ValueError(f"{kind} needs at least one term")
    ns = {spec.n for _, spec in terms}
    if len(ns) != 1:
        raise ValueError(f"{kind} terms have mixed dimensions {sorted(ns)}")
    weights = [w for w, _ in terms]
    if any(w <= 0 for w in weights):
        raise ValueError(f"{kind} weights must be positive, got {weights}")
    if abs(sum(weights) - 1.0) > 1e-12:
        raise ValueError(f"{kind} weights must sum to 1, got {sum(weights)!r}")


@dataclass(frozen=True)
class ConcaveSum:
    terms: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(w), s) for w, s in self.terms))
        _check_terms(self.terms, "concave sum")

    @property
    def n(self):
        return self.terms[0][1].n

    def __str__(self):
        return "sum(" + ", ".join(f"{w!r}: {s}" for w, s in self.terms) + ")"


@dataclass(frozen=True)
class ConcaveProduct:
    terms: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(w), s) for w, s in self.terms))
        _check_terms(self.terms, "concave product")

    @property
    def n(self):
        return self.terms[0][1].n

    def __str__(self):
        return "product(" + ", ".join(f"{w!r}: {s}" for w, s in self.terms) + ")"


CurvatureSpec = Union[Quotient, ConcaveSum, ConcaveProduct]


_QUOTIENT_RE = re.compile(r"\s*quotient\s+n\s*=\s*(-?\d+)\s+l\s*=\s*(-?\d+)\s*")


def _split_top(body):
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(body):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(body[start:i])
            start = i + 1
    parts.append(body[start:])
    return parts


def parse_spec(text: str) -> CurvatureSpec:
    """Parse the text form produced by ``str(spec)``.

    Examples: ``"quotient n=2 l=0"``,
    ``"sum(0.5: quotient n=2 l=0, 0.5: quotient n=2 l=1)"``.
    """
    text = text.strip()
    m = _QUOTIENT_RE.fullmatch(text)
    if m:
        return Quotient(int(m.group(1)), int(m.group(2)))
    for name, cls in (("sum", ConcaveSum), ("product", ConcaveProduct)):
        if text.startswith(name + "(") and text.endswith(")"):
            terms = []
            for part in _split_top(text[len(name) + 1:-1]):
                weight, sep, sub = part.partition(":")
                if not sep:
                    raise ValueError(f"combinator term {part.strip()!r} lacks 'weight:'")
                terms.append((float(weight), parse_spec(sub)))
            return cls(tuple(terms))
    raise ValueError(f"unrecognised curvature spec {text!r}")


# ---------------------------------------------------------------------------
# elementary symmetric polynomials


def elementary(lam) -> np.ndarray:
    """All elementary symmetric polynomials e_0..e_n, shape ``(..., n + 1)``.

    Uses the prefix recurrence e_k <- e_k + x * e_{k-1}.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for j in range(n):
        x = lam[..., j:j + 1]
        e[..., 1:j + 2] = e[..., 1:j + 2] + x * e[..., 0:j + 1]
    return e


def elementary_deleted(lam) -> np.ndarray:
    """``out[..., i, k]`` = e_k of ``lam`` with entry i removed (k = 0..n)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    idx = np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=int).reshape(n, n - 1)
    reduced = lam[..., idx]
    out = np.zeros(lam.shape[:-1] + (n, n + 1))
    out[..., :n] = elementary(reduced)
    return out


def normalized_elementary(lam, l: int):
    """H_l = e_l / C(n, l); H_0 = 1."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 0 <= l <= n:
        raise ValueError(f"index l={l} outside 0..{n}")
    return elementary(lam)[..., l] / math.comb(n, l)


def _normalized_all(e):
    n = e.shape[-1] - 1
    return e / np.array([math.comb(n, k) for k in range(n + 1)], dtype=float)


def _as_cone_point(spec, lam):
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != spec.n:
        raise ValueError(f"expected {spec.n} curvatures, got shape {lam.shape}")
    if not np.all(lam > 0):
        raise ConeError("point outside the positive cone (some entry <= 0)")
    return lam


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class FEval:
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray | None = None


def _value_grad(spec, lam):
    """Unchecked value and gradient; ``lam`` has shape (..., n)."""
    if isinstance(spec, Quotient):
        n, l = spec.n, spec.l
        e = elementary(lam)
        H = _normalized_all(e)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (H[..., n] / H[..., l]) ** (1.0 / (n - l))
            if l == 0:
                grad = f[..., None] / (n * lam)
            else:
                ed = elementary_deleted(lam)
                # 1/lam_i - e_{l-1;i}/e_l == e_{l;i} / (lam_i e_l), no cancellation
                grad = f[..., None] / (n - l) * ed[..., l] / (lam * e[..., l, None])
        return f, grad
    if isinstance(spec, ConcaveSum):
        f = 0.0
        grad = 0.0
        for w, sub in spec.terms:
            fs, gs = _value_grad(sub, lam)
            f = f + w * fs
            grad = grad + w * gs
        return f, grad
    if isinstance(spec, ConcaveProduct):
        logf = 0.0
        dlog = 0.0
        for w, sub in spec.terms:
            fs, gs = _value_grad(sub, lam)
            logf = logf + w * np.log(fs)
            dlog = dlog + w * gs / fs[..., None]
        f = np.exp(logf)
        return f, f[..., None] * dlog
    raise TypeError(f"not a curvature spec: {spec!r}")


def f_eval(spec: CurvatureSpec, lam):
    lam = _as_cone_point(spec, lam)
    return _value_grad(spec, lam)[0]


def f_grad(spec: CurvatureSpec, lam):
    lam = _as_cone_point(spec, lam)
    return _value_grad(spec, lam)[1]


def f_hess(spec: CurvatureSpec, lam, rel_step: float = 1e-5):
    """Second partials by central differences of the closed-form gradient.

    The step in coordinate j is ``rel_step * lam_j`` so the estimate is
    invariant under scaling of ``lam``; the result is symmetrized.
    """
    lam = _as_cone_point(spec, lam)
    n = spec.n
    hess = np.empty(lam.shape + (n,))
    for j in range(n):
        step = rel_step * lam[..., j]
        plus = lam.copy()
        minus = lam.copy()
        plus[..., j] += step
        minus[..., j] -= step
        gp = _value_grad(spec, plus)[1]
        gm = _value_grad(spec, minus)[1]
        hess[..., :, j] = (gp - gm) / (2.0 * step[..., None])
    return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def evaluate(spec: CurvatureSpec, lam, with_hess: bool = False) -> FEval:
    lam = _as_cone_point(spec, lam)
    f, g = _value_grad(spec, lam)
    return FEval(f, g, f_hess(spec, lam) if with_hess else None)


# ---------------------------------------------------------------------------
# closed forms for quotients


def _require_quotient(spec):
    if not isinstance(spec, Quotient):
        raise TypeError("closed-form sums are only defined for quotient specs")


def sum_fi_closed(spec: Quotient, lam):
    """Sum of f_i as f/(n-l) * (n H_{n-1}/H_n - l H_{l-1}/H_l)."""
    _require_quotient(spec)
    lam = _as_cone_point(spec, lam)
    n, l = spec.n, spec.l
    H = _normalized_all(elementary(lam))
    f = (H[..., n] / H[..., l]) ** (1.0 / (n - l))
    inner = n * H[..., n - 1] / H[..., n]
    if l > 0:
        inner = inner - l * H[..., l - 1] / H[..., l]
    return f / (n - l) * inner


def sum_lambda2_fi_closed(spec: Quotient, lam):
    """Sum of lam_i^2 f_i as f * H_{l+1} / H_l."""
    _require_quotient(spec)
    lam = _as_cone_point(spec, lam)
    n, l = spec.n, spec.l
    H = _normalized_all(elementary(lam))
    f = (H[..., n] / H[..., l]) ** (1.0 / (n - l))
    return f * H[..., l + 1] / H[..., l]


def uniqueness_margin(spec: Quotient, lam):
    """sum f_i - sum lam_i^2 f_i, evaluated through the H-ratio closed form."""
    _require_quotient(spec)
    lam = _as_cone_point(spec, lam)
    n, l = spec.n, spec.l
    H = _normalized_all(elementary(lam))
    f = (H[..., n] / H[..., l]) ** (1.0 / (n - l))
    inner = n * H[..., n - 1] / H[..., n] - (n - l) * H[..., l + 1] / H[..., l]
    if l > 0:
        inner = inner - l * H[..., l - 1] / H[..., l]
    return f / (n - l) * inner


def uniqueness_margin_direct(spec: CurvatureSpec, lam):
    """sum f_i - sum lam_i^2 f_i from the gradient, for any spec."""
    lam = _as_cone_point(spec, lam)
    grad = _value_grad(spec, lam)[1]
    return np.sum(grad, axis=-1) - np.sum(lam**2 * grad, axis=-1)


def uniqueness_class(spec: CurvatureSpec, sample_count: int = 10_000, rng_seed: int = 0) -> bool:
    """Whether sum f_i > sum lam_i^2 f_i wherever 0 < f < 1.

    Quotients with l = n-1 or n-2 qualify outright.  Anything else is
    certified by sampling: points are rescaled so f is uniform on (0, 1).
    """
    if isinstance(spec, Quotient) and spec.l >= spec.n - 2:
        return True
    lam = sample_cone(spec.n, sample_count, rng_seed)
    f = _value_grad(spec, lam)[0]
    target = np.random.default_rng(rng_seed + 1).uniform(1e-3, 1.0, size=sample_count)
    lam = lam * (target / f)[:, None]
    return bool(np.all(uniqueness_margin_direct(spec, lam) > 0))


def maclaurin_gap(lam, l: int):
    """H_{n-1}/H_n - H_{l-1}/H_l, nonnegative on the cone."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 1 <= l <= n - 1:
        raise ValueError(f"need 1 <= l <= n-1, got l={l}, n={n}")
    if not np.all(lam > 0):
        raise ConeError("point outside the positive cone (some entry <= 0)")
    H = _normalized_all(elementary(lam))
    return H[..., n - 1] / H[..., n] - H[..., l - 1] / H[..., l]


def maclaurin_check(lam, l: int, rtol: float = 1e-12) -> bool:
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    gap = maclaurin_gap(lam, l)
    H = _normalized_all(elementary(lam))
    scale = H[..., n - 1] / H[..., n]
    return bool(np.all(gap >= -rtol * scale))


# ---------------------------------------------------------------------------
# structure conditions


def limit_value(spec: CurvatureSpec, base=None, R: float = 1e6):
    """f(lam_1, ..., lam_{n-1}, lam_n + R), by default at lam = (1, ..., 1)."""
    base = np.ones(spec.n) if base is None else np.asarray(base, dtype=float)
    lam = base.copy()
    lam[..., -1] = lam[..., -1] + R
    return f_eval(spec, lam)


def limit_target(spec: CurvatureSpec) -> float:
    """Exact R -> infinity limit at the all-ones point (inf when unbounded)."""
    if isinstance(spec, Quotient):
        if spec.l == 0:
            return math.inf
        return (spec.n / spec.l) ** (1.0 / (spec.n - spec.l))
    subs = [(w, limit_target(s)) for w, s in spec.terms]
    if any(math.isinf(v) for _, v in subs):
        return math.inf
    if isinstance(spec, ConcaveSum):
        return sum(w * v for w, v in subs)
    return math.prod(v ** w for w, v in subs)


def sample_cone(n: int, count: int, rng_seed: int, low: float = 1e-2, high: float = 1e2):
    """Log-uniform samples on [low, high]^n."""
    rng = np.random.default_rng(rng_seed)
    return np.exp(rng.uniform(math.log(low), math.log(high), size=(count, n)))


@dataclass
class StructureReport:
    spec: str
    samples: int
    seed: int
    worst: dict
    violations: dict
    limit: float
    limit_ball_min: float
    limit_target: float

    @property
    def passed(self) -> bool:
        return not any(self.violations.values()) and self.limit_ball_min > 1.0

    def rows(self):
        for name in self.worst:
            yield name, self.violations[name], self.worst[name]


HOMOGENEITY_SCALES = (0.5, 2.0, 10.0)


def check_structure(
    spec: CurvatureSpec,
    sample_count: int = 10_000,
    rng_seed: int = 0,
    *,
    homogeneity_tol: float = 1e-10,
    concavity_tol: float = 1e-8,
    limit_R: float = 1e6,
    limit_radius: float = 0.1,
) -> StructureReport:
    """Randomized check of the structure conditions on log-uniform samples.

    ``worst`` maps each condition to its worst signed excess over the allowed
    bound (<= 0 means satisfied); ``violations`` counts failing samples.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    n = spec.n
    lam = sample_cone(n, sample_count, rng_seed)
    f, grad = _value_grad(spec, lam)
    worst, bad = {}, {}

    def record(name, excess):
        excess = np.atleast_1d(excess)
        worst[name] = float(np.max(excess))
        bad[name] = int(np.count_nonzero(excess > 0))

    record("positive_value", -f)
    record("monotone", -np.min(grad, axis=-1))

    edge = lam.copy()
    edge[:, 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        f_edge = _value_grad(spec, edge)[0]
    record("vanishes_on_boundary", np.nan_to_num(np.abs(f_edge), nan=1.0) - 1e-12 * np.max(lam, axis=-1))

    hess = f_hess(spec, lam)
    eig = np.linalg.eigvalsh(hess)
    norm = np.max(np.abs(eig), axis=-1)
    record("concave", eig[:, -1] - concavity_tol * (1.0 + norm))

    hom = []
    for t in HOMOGENEITY_SCALES:
        ft = _value_grad(spec, t * lam)[0]
        hom.append(np.abs(ft - t * f) / (t * f))
    record("homogeneous", np.max(hom, axis=0) - homogeneity_tol)

    f_one = float(_value_grad(spec, np.ones(n))[0])
    record("normalized", abs(f_one - 1.0) - 1e-14)

    mean = lam.mean(axis=-1)
    record("below_mean", (f - mean) / mean - 1e-12)
    record("sum_fi_at_least_one", 1.0 - grad.sum(axis=-1) - 1e-12)

    limit = float(limit_value(spec, R=limit_R))
    rng = np.random.default_rng(rng_seed + 1)
    dirs = rng.normal(size=(64, n))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    ball = 1.0 + limit_radius * dirs * rng.uniform(0, 1, size=(64, 1))
    ball_min = float(np.min(limit_value(spec, ball, R=limit_R)))

    return StructureReport(str(spec), sample_count, rng_seed, worst, bad, limit, ball_min, limit_target(spec))
