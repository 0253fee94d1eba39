"""Small dense numerics: univariate polynomial real roots via companion
matrices, polynomial reconstruction from point evaluations, symmetric
eigendecomposition, and pivoted 3x3 linear solves.

Everything here operates on matrices no larger than ~13x13; there are no
sparse or blocked code paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_symmetric

# Default tolerance for accepting a companion eigenvalue as a real root.
# Loose on purpose: coefficients derived from physical parameters span many
# orders of magnitude, and a dropped real root silently breaks global
# optimality, while spurious candidates are filtered downstream.
IMAG_TOL = 1e-7

# Trailing coefficients below this fraction of the largest one are trimmed.
TRIM_RTOL = 1e-10


class SingularMatrixError(ValueError):
    """Raised when a linear solve meets a numerically singular matrix."""


class ZeroPolynomialError(ValueError):
    """Raised when an operation requires a nonzero polynomial."""


@dataclass(frozen=True, slots=True)
class Poly:
    """Real univariate polynomial, coefficients in ascending degree order.

    Trailing near-zero coefficients are trimmed at construction; ``is_zero``
    flags the zero polynomial (empty coefficient vector is not allowed).
    """

    coeffs: np.ndarray = field()

    def __init__(self, coeffs) -> None:
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("Poly: coefficients must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(c)):
            raise ValueError("Poly: non-finite coefficients")
        keep = np.nonzero(c != 0.0)[0]
        c = c[: keep[-1] + 1].copy() if keep.size else np.zeros(1)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0.0

    def __call__(self, x):
        y = np.zeros_like(np.asarray(x, dtype=float))
        for c in self.coeffs[::-1]:
            y = y * x + c
        return y

    def deriv(self) -> "Poly":
        if self.degree == 0:
            return Poly([0.0])
        k = np.arange(1, len(self.coeffs))
        return Poly(self.coeffs[1:] * k)


def companion_matrix(p: Poly) -> np.ndarray:
    """Monic companion matrix of ``p`` (already upper Hessenberg)."""
    if p.is_zero:
        raise ZeroPolynomialError("companion matrix of the zero polynomial")
    n = p.degree
    if n < 1:
        raise ValueError("companion matrix needs degree >= 1")
    c = p.coeffs / p.coeffs[-1]
    m = np.zeros((n, n))
    m[1:, :-1] = np.eye(n - 1)
    m[:, -1] = -c[:-1]
    return m


def real_roots(p: Poly, imag_tol: float = IMAG_TOL) -> np.ndarray:
    """All real roots of ``p``, ascending, multiplicities collapsed.

    Eigenvalues of the companion matrix (LAPACK balances and runs shifted QR
    internally); eigenvalues with relative imaginary part within ``imag_tol``
    are kept, polished with three Newton steps on ``p``, and clustered at a
    spacing of ``1e-9 * scale``.
    """
    if p.is_zero:
        raise ZeroPolynomialError("real_roots of the zero polynomial")
    if p.degree == 0:
        return np.zeros(0)
    if p.degree == 1:
        return np.array([-p.coeffs[0] / p.coeffs[1]])
    if p.degree == 2:
        c0, c1, c2 = p.coeffs
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc < 0:
            tiny = imag_tol**2 * max(c1 * c1, abs(4.0 * c2 * c0), 1e-300)
            if disc < -tiny:
                return np.zeros(0)
            disc = 0.0
        sq = math.sqrt(disc)
        r1 = (-c1 - sq) / (2.0 * c2)
        r2 = (-c1 + sq) / (2.0 * c2)
        roots = np.sort(np.array([r1, r2]))
        if roots[1] - roots[0] <= 1e-9 * max(1.0, abs(roots[0])):
            return roots[:1]
        return roots
    eig = np.linalg.eigvals(companion_matrix(p))
    mask = np.abs(eig.imag) <= imag_tol * (1.0 + np.abs(eig.real))
    roots = np.sort(eig.real[mask])
    if roots.size == 0:
        return roots
    c = p.coeffs
    for _ in range(3):
        f = np.zeros_like(roots)
        g = np.zeros_like(roots)
        for ck in c[::-1]:  # Horner for p and p' together
            g = g * roots + f
            f = f * roots + ck
        step = np.where(np.abs(g) > 0, f / np.where(g == 0, 1.0, g), 0.0)
        cand = roots - step
        fc = np.zeros_like(cand)
        for ck in c[::-1]:
            fc = fc * cand + ck
        roots = np.where(np.abs(fc) <= np.abs(f), cand, roots)
    roots = np.sort(roots)
    scale = max(1.0, float(np.abs(roots).max()))
    out = [roots[0]]
    cluster = [roots[0]]
    for r in roots[1:]:
        if r - cluster[-1] <= 1e-9 * scale:
            cluster.append(r)
            out[-1] = float(np.mean(cluster))
        else:
            cluster = [r]
            out.append(r)
    return np.asarray(out)


def reconstruct_polynomial(f, degree_bound: int, scale: float = 1.0) -> Poly:
    """Recover the monomial coefficients of a function known to be polynomial.

    Evaluates ``f`` at ``degree_bound + 1`` Chebyshev nodes of the first kind
    on ``[-scale, scale]``, interpolates in the Chebyshev basis, and converts
    to monomial coefficients. Exact (up to rounding) whenever ``f`` really is
    a polynomial of degree <= ``degree_bound``.
    """
    if degree_bound < 0:
        raise ValueError("degree_bound must be >= 0")
    if not np.isfinite(scale) or scale <= 0:
        raise ValueError("scale must be positive and finite")
    n = degree_bound + 1
    nodes, analysis = _cheb_tables(n)
    x = scale * nodes
    vals = np.array([float(f(xi)) for xi in x])
    bad = np.nonzero(~np.isfinite(vals))[0]
    if bad.size:
        raise ValueError(f"non-finite evaluation at node x={x[bad[0]]!r}")
    coef = analysis @ vals  # monomial coefficients in u = x / scale
    # tolerance trim in the scaled basis, where coefficient magnitudes are
    # comparable; raw monomial coefficients of a physical polynomial can span
    # many decades purely from the units of x
    cmax = np.abs(coef).max()
    if cmax > 0.0:
        coef = np.where(np.abs(coef) < TRIM_RTOL * cmax, 0.0, coef)
    coef = coef / scale ** np.arange(n)  # back to the unscaled variable
    return Poly(coef)


_CHEB_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _cheb_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    """First-kind Chebyshev nodes and the values->monomial analysis matrix."""
    cached = _CHEB_CACHE.get(n)
    if cached is not None:
        return cached
    k = np.arange(n)
    nodes = np.cos((2 * k + 1) * np.pi / (2 * n))
    # discrete Chebyshev analysis at first-kind nodes, then basis conversion
    jk = np.outer(np.arange(n), (2 * k + 1) * np.pi / (2 * n))
    dct = np.cos(jk) * (2.0 / n)
    dct[0] *= 0.5
    conv = np.zeros((n, n))  # conv[:, j] = monomial coefficients of T_j
    conv[0, 0] = 1.0
    if n > 1:
        conv[1, 1] = 1.0
    for j in range(2, n):
        conv[1:, j] = 2.0 * conv[:-1, j - 1]
        conv[:, j] -= conv[:, j - 2]
    analysis = conv @ dct
    _CHEB_CACHE[n] = (nodes, analysis)
    return nodes, analysis


def eig_sym(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a small
    symmetric matrix. Asymmetric input is an error."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("eig_sym: square matrix required")
    ms = check_symmetric(m, "eig_sym input")
    w, v = np.linalg.eigh(ms)
    return w, v


def solve_linear3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a 3x3 system by Gaussian elimination with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``1e-14 * ||A||``; callers treat the sample as invalid rather than fatal.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    if a.shape != (3, 3) or b.shape != (3,):
        raise ValueError("solve_linear3: expected 3x3 matrix and 3-vector")
    norm = np.abs(a).max()
    if norm == 0.0:
        raise SingularMatrixError("zero matrix")
    piv_floor = 1e-14 * norm
    m = np.hstack([a, b[:, None]])
    for col in range(3):
        p = col + int(np.argmax(np.abs(m[col:, col])))
        if np.abs(m[p, col]) <= piv_floor:
            raise SingularMatrixError(f"pivot {m[p, col]:.3e} below {piv_floor:.3e}")
        if p != col:
            m[[col, p]] = m[[p, col]]
        for row in range(col + 1, 3):
            m[row, col:] -= (m[row, col] / m[col, col]) * m[col, col:]
    x = np.zeros(3)
    for col in (2, 1, 0):
        x[col] = (m[col, 3] - m[col, col + 1 : 3] @ x[col + 1 :]) / m[col, col]
    return x


def det3(a: np.ndarray) -> float:
    """Determinant of a 3x3 matrix, explicit cofactor expansion."""
    return float(
        a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
        - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
        + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
    )


def adjugate3(a: np.ndarray) -> np.ndarray:
    """Adjugate of a 3x3 matrix (transpose of the cofactor matrix)."""
    out = np.empty((3, 3))
    out[0, 0] = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    out[0, 1] = a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]
    out[0, 2] = a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]
    out[1, 0] = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    out[1, 1] = a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
    out[1, 2] = a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]
    out[2, 0] = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    out[2, 1] = a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]
    out[2, 2] = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    return out


def det2(a: np.ndarray) -> float:
    return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])


def adjugate2(a: np.ndarray) -> np.ndarray:
    return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]])
