import numpy as np
import pytest

from wrsmref.numerics import (
    Poly,
    SingularMatrixError,
    ZeroPolynomialError,
    eig_sym,
    real_roots,
    reconstruct_polynomial,
    solve_linear3,
)


def test_poly_trims_exact_trailing_zeros():
    p = Poly([1.0, 2.0, 0.0, 0.0])
    assert p.degree == 1
    assert not p.is_zero
    assert Poly([0.0, 0.0]).is_zero


def test_real_roots_quadratic():
    roots = real_roots(Poly([-1.0, 0.0, 1.0]))  # x^2 - 1
    assert np.allclose(roots, [-1.0, 1.0], atol=1e-12)


def test_real_roots_collapses_multiplicity():
    # (x - 2)^3 = -8 + 12x - 6x^2 + x^3; a triple root is conditioned at
    # eps^(1/3) ~ 6e-6, so the collapsed representative is only that accurate
    roots = real_roots(Poly([-8.0, 12.0, -6.0, 1.0]))
    assert len(roots) == 1
    assert abs(roots[0] - 2.0) < 1e-4


def test_real_roots_degree10_known_roots():
    rng = np.random.default_rng(3)
    true = np.sort(rng.uniform(-5.0, 5.0, 10))
    coeffs = np.array([1.0])
    for r in true:
        coeffs = np.convolve(coeffs, [-r, 1.0])
    found = real_roots(Poly(coeffs))
    assert len(found) == len(true)
    assert np.abs(found - true).max() < 1e-7


def test_real_roots_rejects_zero_polynomial():
    with pytest.raises(ZeroPolynomialError):
        real_roots(Poly([0.0]))
    assert len(real_roots(Poly([3.0]))) == 0  # degree 0: empty list


def test_real_roots_scale_invariance():
    rng = np.random.default_rng(11)
    for _ in range(20):
        coeffs = rng.normal(size=7)
        base = real_roots(Poly(coeffs))
        scaled = real_roots(Poly(coeffs * 123.456))
        assert len(base) == len(scaled)
        if len(base):
            assert np.abs(np.sort(base) - np.sort(scaled)).max() <= 1e-10 * (
                1.0 + np.abs(base).max()
            )


def test_reconstruct_simple_quadratic():
    p = reconstruct_polynomial(lambda x: 3.0 * x * x + 1.0, 4, 1.0)
    assert p.degree == 2
    assert np.allclose(p.coeffs, [1.0, 0.0, 3.0], atol=1e-12)


def test_reconstruct_zero_function():
    p = reconstruct_polynomial(lambda x: 0.0, 3, 1.0)
    assert p.is_zero


def test_reconstruct_round_trip_identity():
    rng = np.random.default_rng(5)
    for _ in range(60):
        deg = int(rng.integers(1, 11))
        coeffs = rng.normal(size=deg + 1) * 10.0 ** rng.integers(-4, 5)
        scale = float(10.0 ** rng.uniform(-2, 3))
        p0 = Poly(coeffs)
        rec = reconstruct_polynomial(p0, deg, scale)
        got = np.zeros(deg + 1)
        got[: len(rec.coeffs)] = rec.coeffs
        want = np.zeros(deg + 1)
        want[: len(p0.coeffs)] = p0.coeffs
        # compare contributions at the reconstruction scale
        weights = scale ** np.arange(deg + 1)
        ref = np.abs(want * weights).max()
        assert np.abs((got - want) * weights).max() <= 1e-9 * max(ref, 1e-300)


def test_reconstruct_rejects_non_finite():
    def bad(x):
        return 1.0 / (x - x)  # nan everywhere

    with pytest.raises(ValueError, match="non-finite"):
        reconstruct_polynomial(bad, 3, 1.0)


def test_eig_sym_identity_and_diag():
    w, _ = eig_sym(np.eye(4))
    assert np.allclose(w, 1.0)
    w, _ = eig_sym(np.diag([1.0, 2.0, 3.0, 4.0]))
    assert np.allclose(w, [1.0, 2.0, 3.0, 4.0])


def test_eig_sym_reconstruction():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(4, 4))
    a = 0.5 * (a + a.T)
    w, v = eig_sym(a)
    assert np.abs(v @ np.diag(w) @ v.T - a).max() < 1e-10 * max(1.0, np.abs(a).max())


def test_eig_sym_rejects_asymmetric():
    with pytest.raises(ValueError):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_solve_linear3_identity():
    assert np.allclose(solve_linear3(np.eye(3), np.array([1.0, 2.0, 3.0])),
                       [1.0, 2.0, 3.0])


def test_solve_linear3_singular():
    a = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 0.0]])
    with pytest.raises(SingularMatrixError):
        solve_linear3(a, np.ones(3))


def test_solve_linear3_residual():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
        b = rng.normal(size=3)
        x = solve_linear3(a, b)
        lhs = np.abs(a @ x - b).max()
        assert lhs <= 1e-10 * (np.abs(a).max() * np.abs(x).max() + np.abs(b).max())
