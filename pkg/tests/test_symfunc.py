import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypcurv.symfunc import (
    ConcaveProduct,
    ConcaveSum,
    ConeError,
    Quotient,
    check_structure,
    elementary,
    elementary_deleted,
    f_eval,
    f_grad,
    f_hess,
    limit_target,
    limit_value,
    maclaurin_check,
    maclaurin_gap,
    normalized_elementary,
    parse_spec,
    sample_cone,
    sum_fi_closed,
    sum_lambda2_fi_closed,
    uniqueness_margin,
)

QUOTIENTS = [Quotient(n, l) for n in range(1, 6) for l in range(n)]
MIXED = ConcaveSum(((0.5, Quotient(2, 0)), (0.5, Quotient(2, 1))))
PRODUCT = ConcaveProduct(((0.25, Quotient(3, 0)), (0.75, Quotient(3, 2))))


def brute_elementary(lam, l):
    return sum(math.prod(c) for c in itertools.combinations(lam, l))


def fd_grad(spec, lam, step=1e-6):
    # central differences at h and h/2 plus one Richardson level; h = step * |lam|
    lam = np.asarray(lam, dtype=float)
    h = step * np.linalg.norm(lam)
    out = np.empty_like(lam)
    for i in range(lam.size):
        e = np.zeros_like(lam)
        e[i] = 1.0
        d1 = (f_eval(spec, lam + h * e) - f_eval(spec, lam - h * e)) / (2 * h)
        d2 = (f_eval(spec, lam + 0.5 * h * e) - f_eval(spec, lam - 0.5 * h * e)) / h
        out[i] = (4 * d2 - d1) / 3
    return out


cone_points = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(1e-2, 1e2), min_size=n, max_size=n)
)


# -- elementary symmetric polynomials ---------------------------------------

@given(cone_points)
def test_recurrence_matches_subset_enumeration(lam):
    e = elementary(lam)
    for l in range(len(lam) + 1):
        assert e[l] == pytest.approx(brute_elementary(lam, l), rel=1e-12)


def test_normalized_examples():
    assert normalized_elementary([3.0, 5.0, 7.0], 0) == 1.0
    assert normalized_elementary([1.0, 1.0, 1.0], 2) == pytest.approx(1.0)
    # e_2(1,2,3) = 2 + 3 + 6 = 11 by enumeration, C(3,2) = 3
    assert normalized_elementary([1.0, 2.0, 3.0], 2) == pytest.approx(brute_elementary([1, 2, 3], 2) / 3)
    assert normalized_elementary([1.0, 2.0, 3.0], 2) == pytest.approx(11 / 3)


@pytest.mark.parametrize("l", [-1, 4])
def test_normalized_rejects_bad_index(l):
    with pytest.raises(ValueError):
        normalized_elementary([1.0, 2.0, 3.0], l)


@given(cone_points)
def test_deleted_polynomials(lam):
    ed = elementary_deleted(lam)
    for i in range(len(lam)):
        rest = lam[:i] + lam[i + 1:]
        for k in range(len(lam)):
            assert ed[i, k] == pytest.approx(brute_elementary(rest, k), rel=1e-12, abs=1e-300)
        assert ed[i, len(lam)] == 0.0


# -- evaluation --------------------------------------------------------------

@pytest.mark.parametrize("spec", QUOTIENTS + [MIXED, PRODUCT], ids=str)
def test_normalization_and_homogeneity_at_umbilic(spec):
    assert f_eval(spec, np.ones(spec.n)) == pytest.approx(1.0, rel=1e-15)
    assert f_eval(spec, 2 * np.ones(spec.n)) == pytest.approx(2.0, rel=1e-15)


def test_gauss_root():
    assert f_eval(Quotient(2, 0), [4.0, 9.0]) == pytest.approx(6.0)


def test_cone_violation():
    with pytest.raises(ConeError):
        f_eval(Quotient(2, 1), [1.0, 0.0])
    with pytest.raises(ConeError):
        f_grad(Quotient(2, 1), [1.0, -2.0])
    with pytest.raises(ConeError):
        f_hess(Quotient(2, 1), [1.0, -2.0])


def test_spec_validation():
    with pytest.raises(ValueError):
        Quotient(2, 2)
    with pytest.raises(ValueError):
        ConcaveSum(((0.5, Quotient(2, 0)), (0.4, Quotient(2, 1))))
    with pytest.raises(ValueError):
        ConcaveSum(((1.5, Quotient(2, 0)), (-0.5, Quotient(2, 1))))
    with pytest.raises(ValueError):
        ConcaveProduct(((0.5, Quotient(2, 0)), (0.5, Quotient(3, 1))))


@pytest.mark.parametrize("spec", [Quotient(3, 1), MIXED, PRODUCT, ConcaveSum(((0.3, PRODUCT), (0.7, Quotient(3, 0))))], ids=str)
def test_spec_text_round_trip(spec):
    assert parse_spec(str(spec)) == spec


def test_parse_spec_rejects_garbage():
    with pytest.raises(ValueError):
        parse_spec("quotient n=2")
    with pytest.raises(ValueError):
        parse_spec("sum(quotient n=2 l=0)")


# -- gradient ---------------------------------------------------------------

@pytest.mark.parametrize("spec", QUOTIENTS + [MIXED, PRODUCT], ids=str)
def test_gradient_at_umbilic(spec):
    np.testing.assert_allclose(f_grad(spec, np.ones(spec.n)), np.full(spec.n, 1 / spec.n), rtol=1e-14)


def test_gradient_gauss_root_example():
    # central differences of f_eval, step 1e-6: (0.75, 1/3)
    g = f_grad(Quotient(2, 0), [4.0, 9.0])
    np.testing.assert_allclose(g, fd_grad(Quotient(2, 0), [4.0, 9.0]), rtol=1e-8)
    np.testing.assert_allclose(g, [0.75, 1 / 3], rtol=1e-12)


@pytest.mark.parametrize("spec", QUOTIENTS + [MIXED, PRODUCT], ids=str)
def test_gradient_matches_finite_differences(spec):
    for lam in sample_cone(spec.n, 50, rng_seed=11):
        g = f_grad(spec, lam)
        assert np.linalg.norm(g - fd_grad(spec, lam)) <= 1e-6 * np.linalg.norm(g)


def test_gradient_batched_equals_pointwise():
    lam = sample_cone(4, 20, rng_seed=3)
    batch = f_grad(Quotient(4, 2), lam)
    for row, g in zip(lam, batch):
        np.testing.assert_array_equal(f_grad(Quotient(4, 2), row), g)


# -- hessian ----------------------------------------------------------------

def test_hessian_geometric_mean_at_umbilic():
    eig = np.linalg.eigvalsh(f_hess(Quotient(2, 0), np.ones(2)))
    assert eig.max() <= 1e-10
    # exact Hessian of sqrt(xy) at (1,1): [[-1/4, 1/4], [1/4, -1/4]]
    np.testing.assert_allclose(f_hess(Quotient(2, 0), np.ones(2)), [[-0.25, 0.25], [0.25, -0.25]], atol=1e-9)


@pytest.mark.parametrize("spec", QUOTIENTS, ids=str)
def test_hessian_negative_semidefinite(spec):
    hess = f_hess(spec, sample_cone(spec.n, 500, rng_seed=5))
    eig = np.linalg.eigvalsh(hess)
    assert np.all(eig[:, -1] <= 1e-8 * np.abs(eig).max(axis=-1))
    np.testing.assert_array_equal(hess, np.swapaxes(hess, -1, -2))


def test_hessian_of_sum_is_weighted_sum():
    lam = sample_cone(2, 100, rng_seed=9)
    lhs = f_hess(MIXED, lam)
    rhs = 0.5 * f_hess(Quotient(2, 0), lam) + 0.5 * f_hess(Quotient(2, 1), lam)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-9 * np.abs(rhs).max())


# -- closed-form sums -------------------------------------------------------

@pytest.mark.parametrize("spec", [q for q in QUOTIENTS if q.n >= 2], ids=str)
def test_closed_sums_match_direct_summation(spec):
    lam = sample_cone(spec.n, 10_000, rng_seed=21)
    g = f_grad(spec, lam)
    direct_fi = g.sum(axis=-1)
    direct_l2 = (lam**2 * g).sum(axis=-1)
    np.testing.assert_allclose(sum_fi_closed(spec, lam), direct_fi, rtol=1e-10)
    np.testing.assert_allclose(sum_lambda2_fi_closed(spec, lam), direct_l2, rtol=1e-10)
    scale = direct_fi + direct_l2
    assert np.all(np.abs(uniqueness_margin(spec, lam) - (direct_fi - direct_l2)) <= 1e-10 * scale)


def test_closed_sum_examples():
    spec = Quotient(3, 1)
    lam = np.array([1.0, 2.0, 3.0])
    assert sum_fi_closed(spec, lam) == pytest.approx(f_grad(spec, lam).sum(), rel=1e-12)
    spec0 = Quotient(3, 0)
    assert sum_lambda2_fi_closed(spec0, lam) == pytest.approx((lam**2 * f_grad(spec0, lam)).sum(), rel=1e-12)


@pytest.mark.parametrize("spec", QUOTIENTS, ids=str)
@pytest.mark.parametrize("t", [0.01, 0.3, 1.0, 7.0])
def test_umbilic_sums(spec, t):
    lam = np.full(spec.n, t)
    assert sum_fi_closed(spec, lam) == pytest.approx(1.0, rel=1e-13)
    assert sum_lambda2_fi_closed(spec, lam) == pytest.approx(t * t, rel=1e-13)
    assert uniqueness_margin(spec, lam) == pytest.approx(1.0 - t * t, rel=1e-12, abs=1e-13)


def test_closed_sums_reject_combinators():
    with pytest.raises(TypeError):
        sum_fi_closed(MIXED, np.ones(2))


@given(st.lists(st.floats(1e-2, 1e2), min_size=2, max_size=2))
def test_harmonic_quotient_square_identity(lam):
    # for l = n - 1 the weighted second moment equals f^2
    spec = Quotient(2, 1)
    f = f_eval(spec, lam)
    assert sum_lambda2_fi_closed(spec, lam) == pytest.approx(f * f, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("offset", [1, 2])
def test_uniqueness_margin_lower_bound(n, offset):
    l = n - offset
    if l < 0:
        pytest.skip("no such quotient")
    spec = Quotient(n, l)
    lam = sample_cone(n, 10_000, rng_seed=100 + n)
    f = f_eval(spec, lam)
    sel = f < 1
    margin = uniqueness_margin(spec, lam[sel])
    assert np.all(margin >= 1 - f[sel] ** 2 - 1e-9)
    if offset == 2:
        H = elementary(lam[sel])
        ratio = (H[:, n - 1] / n) / H[:, n]
        assert np.all(margin >= ratio * f[sel] * (1 - f[sel] ** 2) - 1e-9)
        assert np.all(ratio * f[sel] >= 1 - 1e-12)


# -- Newton-Maclaurin --------------------------------------------------------

def test_maclaurin_examples():
    assert maclaurin_gap(np.ones(3), 1) == pytest.approx(0.0, abs=1e-15)
    assert maclaurin_check(np.ones(3), 2)
    assert maclaurin_gap([1.0, 2.0], 1) > 0
    # H_1/H_2 for (1,2): (3/2)/2 = 0.75 ; H_0/H_1 = 2/3
    assert maclaurin_gap([1.0, 2.0], 1) == pytest.approx(0.75 - 2 / 3)
    assert maclaurin_gap([1.0, 1.0, 5.0], 1) > 0
    assert maclaurin_gap([1.0, 1.0, 5.0], 2) > 0


@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(1e-2, 1e2), min_size=n, max_size=n), st.integers(1, n - 1))))
def test_maclaurin_chain_holds(args):
    lam, l = args
    assert maclaurin_check(lam, l)


# -- structure ---------------------------------------------------------------

def test_limit_values():
    assert limit_value(Quotient(3, 1)) == pytest.approx(math.sqrt(3), abs=1e-3)
    assert limit_target(Quotient(3, 1)) == pytest.approx(math.sqrt(3))
    assert math.isinf(limit_target(Quotient(3, 0)))


@pytest.mark.parametrize("spec", [Quotient(3, 1), Quotient(4, 2), Quotient(2, 1)], ids=str)
def test_limit_approached_monotonically_from_below(spec):
    values = [float(limit_value(spec, R=R)) for R in 10.0 ** np.arange(0, 8)]
    assert np.all(np.diff(values) > 0)
    assert values[-1] < limit_target(spec)


@pytest.mark.parametrize("spec", [q for q in QUOTIENTS if q.n <= 4] + [MIXED, PRODUCT], ids=str)
def test_structure_suite_passes(spec):
    rep = check_structure(spec, 2000, rng_seed=1)
    assert rep.passed, rep.worst
    assert all(v == 0 for v in rep.violations.values())


def test_structure_report_is_reproducible():
    a = check_structure(Quotient(3, 1), 500, rng_seed=4)
    b = check_structure(Quotient(3, 1), 500, rng_seed=4)
    assert a.worst == b.worst and a.limit == b.limit


@settings(max_examples=50)
@given(st.integers(1, 5).flatmap(lambda n: st.tuples(
    st.integers(0, n - 1), st.lists(st.floats(1e-2, 1e2), min_size=n, max_size=n))),
    st.sampled_from([0.5, 2.0, 10.0]))
def test_homogeneity_property(args, t):
    l, lam = args
    spec = Quotient(len(lam), l)
    lam = np.array(lam)
    assert f_eval(spec, t * lam) == pytest.approx(t * f_eval(spec, lam), rel=1e-12)
