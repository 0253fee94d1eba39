"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

# Relative tolerance used for "is this matrix symmetric / PSD" checks.
SYM_RTOL = 1e-12


def as_vector(x, n: int, name: str = "x") -> np.ndarray:
    """Coerce to a float64 vector of length ``n``, rejecting non-finite entries."""
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"{name}: expected {n} entries, got shape {np.shape(x)}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: non-finite entries")
    return v


def as_matrix(x, shape: tuple[int, int], name: str = "M") -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: non-finite entries")
    return m


def check_symmetric(m: np.ndarray, name: str = "M", rtol: float = SYM_RTOL) -> np.ndarray:
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > rtol * scale:
        raise ValueError(f"{name}: not symmetric (max asymmetry {np.abs(m - m.T).max():.3e})")
    return 0.5 * (m + m.T)


def check_psd(m: np.ndarray, name: str = "M", rtol: float = SYM_RTOL) -> None:
    """Require all eigenvalues >= -rtol * ||M||."""
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    floor = -rtol * max(1.0, float(np.abs(m).max()))
    if w.min() < floor:
        raise ValueError(f"{name}: not PSD (min eigenvalue {w.min():.3e})")


def check_positive(x: float, name: str) -> float:
    x = float(x)
    if not np.isfinite(x) or x <= 0.0:
        raise ValueError(f"{name}: must be strictly positive, got {x}")
    return x
