"""Numeric kernels: maintained Hermitian inverse, cubic roots, CG, 2x2 SVD."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvfusion.numerics import (
    CGResult,
    HermitianInverse,
    NumericsError,
    SingularUpdateError,
    cg_solve,
    cubic_real_roots,
    rank1_update,
    svd2,
)

from helpers import random_hermitian_psd, random_spd

coeff = st.floats(-100.0, 100.0, allow_nan=False)


# ---------------------------------------------------------------------------
# maintained inverse
# ---------------------------------------------------------------------------

def test_rank1_identity_basis_vector():
    h = HermitianInverse.from_scaled_identity(3, 1.0)
    h.rank1_update(np.array([1.0, 0.0, 0.0], dtype=complex), 1.0)
    np.testing.assert_allclose(h.inv, np.diag([0.5, 1.0, 1.0]), atol=1e-14)
    assert h.logdet == pytest.approx(math.log(2.0))


def test_rank1_zero_scalar_is_noop():
    h = HermitianInverse.from_scaled_identity(4, 2.0)
    before = h.inv.copy()
    h.rank1_update(np.ones(4, dtype=complex), 0.0)
    np.testing.assert_array_equal(h.inv, before)


def test_rank1_matches_direct_inverse(rng):
    sigma = random_hermitian_psd(rng, 8)
    h = HermitianInverse.from_matrix(sigma)
    v = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    h = rank1_update(h, v, 0.37)
    direct = np.linalg.inv(sigma + 0.37 * np.outer(v, v.conj()))
    err = np.linalg.norm(h.inv - direct) / np.linalg.norm(direct)
    assert err < 1e-10


def test_rank1_rejects_singular_downdate():
    h = HermitianInverse.from_scaled_identity(2, 1.0)
    with pytest.raises(SingularUpdateError):
        h.rank1_update(np.array([1.0, 0.0], dtype=complex), -1.0)


def test_downdate_inverts_update(rng):
    sigma = random_hermitian_psd(rng, 6)
    h = HermitianInverse.from_matrix(sigma)
    ref = h.inv.copy()
    v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    h.rank1_update(v, 0.9)
    h.rank1_update(v, -0.9)
    err = np.linalg.norm(h.inv - ref) / np.linalg.norm(ref)
    assert err < 1e-9
    assert h.logdet == pytest.approx(HermitianInverse.from_matrix(sigma).logdet,
                                     rel=1e-9, abs=1e-9)


def test_logdet_tracks_100_updates(rng):
    n = 32
    h = HermitianInverse.from_scaled_identity(n, 0.5)
    sigma = 0.5 * np.eye(n, dtype=complex)
    for _ in range(100):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        s = float(rng.uniform(0.01, 0.5))
        h.rank1_update(v, s)
        sigma += s * np.outer(v, v.conj())
    sign, expect = np.linalg.slogdet(sigma)
    assert sign.real > 0
    assert abs(h.logdet - expect.real) <= 1e-8 * abs(expect.real)
    inv_err = np.linalg.norm(h.inv @ sigma - np.eye(n)) / math.sqrt(n)
    assert inv_err < 1e-8


def test_periodic_refresh_resets_counter(rng):
    h = HermitianInverse.from_scaled_identity(4, 1.0, refresh_every=3)
    for _ in range(3):
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        h.rank1_update(v, 0.2)
    assert h.updates_since_refresh == 0
    err = np.linalg.norm(h.inv @ h.sigma - np.eye(4))
    assert err < 1e-12


# ---------------------------------------------------------------------------
# cubic roots
# ---------------------------------------------------------------------------

def poly_residual(c3, c2, c1, c0, r):
    return abs(((c3 * r + c2) * r + c1) * r + c0)


def test_cubic_factorable():
    roots = cubic_real_roots(1.0, 0.0, -1.0, 0.0)
    np.testing.assert_allclose(roots, [-1.0, 0.0, 1.0], atol=1e-12)


def test_cubic_quadratic_fallback():
    roots = cubic_real_roots(0.0, 1.0, 0.0, -4.0)
    np.testing.assert_allclose(roots, [-2.0, 2.0], atol=1e-12)


def test_cubic_three_distinct_roots():
    # 2x^3 - 3x^2 - 11x + 6 = (x + 2)(2x - 1)(x - 3)
    roots = cubic_real_roots(2.0, -3.0, -11.0, 6.0)
    np.testing.assert_allclose(roots, [-2.0, 0.5, 3.0], atol=1e-9)
    for r in roots:
        assert poly_residual(2.0, -3.0, -11.0, 6.0, r) < 1e-9


def test_cubic_degenerate_degrees():
    assert cubic_real_roots(0.0, 0.0, 0.0, 0.0) is None
    assert cubic_real_roots(0.0, 0.0, 0.0, 5.0) == []
    assert cubic_real_roots(0.0, 0.0, 2.0, -4.0) == pytest.approx([2.0])
    assert cubic_real_roots(0.0, 1.0, 0.0, 4.0) == []  # complex pair


def test_cubic_single_real_root():
    roots = cubic_real_roots(1.0, 0.0, 1.0, 0.0)  # x(x^2 + 1)
    assert roots == pytest.approx([0.0], abs=1e-12)


def test_cubic_triple_root():
    roots = cubic_real_roots(1.0, -3.0, 3.0, -1.0)  # (x - 1)^3
    assert len(roots) == 1
    assert roots[0] == pytest.approx(1.0, abs=1e-6)


@given(c3=coeff, c2=coeff, c1=coeff, c0=coeff)
@settings(max_examples=300, deadline=None)
def test_cubic_roots_satisfy_polynomial(c3, c2, c1, c0):
    roots = cubic_real_roots(c3, c2, c1, c0)
    if roots is None:
        assert c3 == c2 == c1 == c0 == 0.0
        return
    cmax = max(abs(c3), abs(c2), abs(c1), abs(c0))
    for r in roots:
        ar = abs(r)  # multiplication overflows quietly to inf, ** would raise
        bound = 1e-9 * max(1.0, cmax * ar * ar * ar)
        assert poly_residual(c3, c2, c1, c0, r) <= bound


def test_cubic_finds_all_roots_of_random_factorizations(rng):
    for _ in range(200):
        a, b, c = np.sort(rng.uniform(-5, 5, 3))
        lead = float(rng.uniform(0.2, 3.0))
        c3 = lead
        c2 = -lead * (a + b + c)
        c1 = lead * (a * b + a * c + b * c)
        c0 = -lead * a * b * c
        roots = cubic_real_roots(c3, c2, c1, c0)
        for want in (a, b, c):
            assert min(abs(r - want) for r in roots) < 1e-6


# ---------------------------------------------------------------------------
# conjugate gradient
# ---------------------------------------------------------------------------

def test_cg_diagonal_system():
    res = cg_solve(lambda x: 2.0 * x, np.array([2.0, 4.0]))
    np.testing.assert_allclose(res.x, [1.0, 2.0], atol=1e-10)
    assert res.converged


def test_cg_zero_rhs_short_circuits():
    res = cg_solve(lambda x: 2.0 * x, np.zeros(5))
    assert res.iterations == 0
    assert res.converged
    np.testing.assert_array_equal(res.x, np.zeros(5))


def test_cg_matches_direct_solve(rng):
    a = random_spd(rng, 50)
    b = rng.standard_normal(50)
    res = cg_solve(lambda x: a @ x, b, tol=1e-10, max_iter=500)
    direct = np.linalg.solve(a, b)
    assert res.converged
    assert np.linalg.norm(res.x - direct) / np.linalg.norm(direct) < 1e-6


def test_cg_warm_start(rng):
    a = random_spd(rng, 20)
    b = rng.standard_normal(20)
    exact = np.linalg.solve(a, b)
    res = cg_solve(lambda x: a @ x, b, tol=1e-12, x0=exact)
    assert res.iterations == 0
    assert res.converged


def test_cg_rejects_non_finite():
    with np.errstate(invalid="ignore"), pytest.raises(NumericsError):
        cg_solve(lambda x: x * np.inf, np.ones(3))


# ---------------------------------------------------------------------------
# 2x2 symmetric eigen-decomposition
# ---------------------------------------------------------------------------

def test_svd2_diagonal():
    l1, l2, f1, f2 = svd2(np.diag([3.0, 1.0]))
    assert (l1, l2) == (3.0, 1.0)
    np.testing.assert_allclose(np.abs(f1), [1.0, 0.0])


def test_svd2_zero_matrix():
    l1, l2, f1, f2 = svd2(np.zeros((2, 2)))
    assert l1 == l2 == 0.0
    np.testing.assert_allclose(f1, [1.0, 0.0])
    np.testing.assert_allclose(f2, [-0.0, 1.0])


def test_svd2_symmetric_offdiagonal():
    l1, l2, f1, f2 = svd2(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert l1 == pytest.approx(3.0)
    assert l2 == pytest.approx(1.0)
    np.testing.assert_allclose(np.abs(f1), [1.0 / math.sqrt(2)] * 2, atol=1e-12)


@given(a=coeff, b=coeff, c=coeff)
@settings(max_examples=300, deadline=None)
def test_svd2_reconstruction(a, b, c):
    j = np.array([[a, b], [b, c]])
    l1, l2, f1, f2 = svd2(j)
    assert l1 >= l2
    assert abs(f1 @ f2) < 1e-12
    rebuilt = l1 * np.outer(f1, f1) + l2 * np.outer(f2, f2)
    scale = max(1.0, np.abs(j).max())
    assert np.abs(rebuilt - j).max() <= 1e-12 * scale
