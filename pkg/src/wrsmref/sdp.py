"""Primal-dual interior-point solver for the fixed-shape lifted relaxation.

The problem is always the same: a 4x4 PSD variable, three linear trace
equality constraints (torque, voltage, homogenization), minimized against the
homogenized loss matrix. Everything is dense and closed-form: the Schur
complement system is 3x3, so no factorization machinery beyond Cholesky of
4x4 matrices is needed.

Direction: HKM with a Mehrotra predictor-corrector step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._validation import check_symmetric
from .machine import QcqpData

GAP_TOL = 1e-8
RATIO_TOL = 1e-6
MAX_ITER = 100

_EYE4 = np.eye(4)


class SdpStatus(Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


class NotRankOne(Exception):
    """Rank-1 extraction failed; carries the offending eigenvalue ratio."""

    def __init__(self, ratio: float):
        self.ratio = float(ratio)
        super().__init__(f"solution not rank one (eigenvalue ratio {ratio:.3e})")


class HomogenizationDegenerateError(ValueError):
    """Dominant eigenvector has (numerically) zero homogenization entry."""


@dataclass(frozen=True, slots=True)
class LiftedSdp:
    """min tr(C X) s.t. tr(A_k X) = rhs_k, X >= 0, with X in S^4.

    A3 selects X[3, 3]; the voltage constant is folded into A2's corner so
    its right-hand side reads vbar^2 literally.
    """

    C: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        for name in ("C", "A1", "A2", "A3"):
            m = check_symmetric(np.asarray(getattr(self, name), dtype=float), name)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        rhs = np.asarray(self.rhs, dtype=float)
        if rhs.shape != (3,):
            raise ValueError("rhs must be a 3-vector")
        rhs.setflags(write=False)
        object.__setattr__(self, "rhs", rhs)

    @property
    def constraints(self) -> np.ndarray:
        return np.stack([self.A1, self.A2, self.A3])


@dataclass(frozen=True, slots=True)
class SdpResult:
    X: np.ndarray
    y: np.ndarray
    S: np.ndarray
    gap: float
    iterations: int
    status: SdpStatus
    # per-iteration (primal obj, dual obj, pinf, dinf, mu) for diagnostics
    trace: tuple = field(default=(), repr=False)


def _homogenize(q_mat: np.ndarray, q_vec: np.ndarray, corner: float) -> np.ndarray:
    out = np.zeros((4, 4))
    out[:3, :3] = q_mat
    out[:3, 3] = out[3, :3] = 0.5 * q_vec
    out[3, 3] = corner
    return out


def lift(q: QcqpData) -> LiftedSdp:
    """Homogenize the voltage-regime QCQP with i~ = (i, 1) and X = i~ i~^T."""
    if q.omega_e == 0.0 or q.voltage_vacuous:
        raise ValueError("voltage-regime lift requires omega_e != 0")
    c = _homogenize(q.R_eff, q.r_eff, 0.0)
    a1 = _homogenize(q.Q_tau, q.q_tau, 0.0)
    a2 = _homogenize(q.Q_v, q.q_v, q.c_v + q.v_bar**2)
    a3 = np.zeros((4, 4))
    a3[3, 3] = 1.0
    return LiftedSdp(C=c, A1=a1, A2=a2, A3=a3, rhs=np.array([q.T_p, q.v_bar**2, 1.0]))


def _max_step(m_chol: np.ndarray, dm: np.ndarray) -> float:
    """Largest alpha with M + alpha dM >= 0, via L^-1 dM L^-T eigenvalues."""
    w = np.linalg.solve(m_chol, dm)
    w = np.linalg.solve(m_chol, w.T)
    lam_min = np.linalg.eigvalsh(0.5 * (w + w.T)).min()
    if lam_min >= -1e-14:
        return np.inf
    return -1.0 / lam_min


def _chol_psd(m: np.ndarray) -> np.ndarray:
    jitter = 0.0
    scale = max(1.0, np.abs(m).max())
    for _ in range(8):
        try:
            return np.linalg.cholesky(m + jitter * _EYE4)
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-14 * scale)
    raise np.linalg.LinAlgError("iterate lost positive definiteness")


def _polish_face(amats, b, cmat, x, y, r):
    """Refine a near-optimal iterate on a rank-``r`` face.

    X is restricted to the span of its ``r`` dominant eigenvectors, where the
    trace constraints become a tiny linear system; the dual vector is re-fit
    so the reduced dual slack vanishes on that span. Returns (X, y, S, ok);
    callers accept the polish only if it meets tolerances.
    """
    w, v = np.linalg.eigh(x)
    if w[-1] <= 0 or r not in (1, 2):
        return x, y, None, False
    q = v[:, -r:]
    a_red = np.array([q.T @ a @ q for a in amats])  # (3, r, r)
    if r == 1:
        coeff = a_red[:, 0, 0]
        denom = coeff @ coeff
        if denom <= 0:
            return x, y, None, False
        z = np.array([[max(coeff @ b / denom, 0.0)]])
    else:
        rows = np.array([[a[0, 0], 2.0 * a[0, 1], a[1, 1]] for a in a_red])
        try:
            sol = np.linalg.solve(rows, b)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(rows, b, rcond=None)
        z = np.array([[sol[0], sol[1]], [sol[1], sol[2]]])
        wz, vz = np.linalg.eigh(z)
        if wz.min() < 0:
            # clip tiny stray negative curvature; the primal residual this
            # introduces is judged against the tolerance by the caller
            z = (vz * np.maximum(wz, 0.0)) @ vz.T
    x_new = q @ z @ q.T
    x_new = 0.5 * (x_new + x_new.T)
    # dual: require the reduced slack Q^T (C - sum y A) Q = 0, staying close
    # to the current multipliers
    idx = np.triu_indices(r)
    rows = np.array([(q.T @ a @ q)[idx] for a in amats]).T
    rhs = (q.T @ cmat @ q)[idx]
    reg = 1e-8 * np.eye(3)
    lhs = np.vstack([np.atleast_2d(rows), reg])
    rhs_full = np.concatenate([np.atleast_1d(rhs), reg @ y])
    y_new, *_ = np.linalg.lstsq(lhs, rhs_full, rcond=None)
    s_new = cmat - np.tensordot(y_new, amats, axes=(0, 0))
    s_new = 0.5 * (s_new + s_new.T)
    # clip stray negative dual-slack eigenvalues; the clipped mass shows up
    # in the dual residual and is judged against the tolerance by the caller
    ws, vs = np.linalg.eigh(s_new)
    if ws.min() < 0:
        s_new = (vs * np.maximum(ws, 0.0)) @ vs.T
        s_new = 0.5 * (s_new + s_new.T)
    return x_new, y_new, s_new, True


def solve_sdp(
    s: LiftedSdp,
    gap_tol: float = GAP_TOL,
    max_iter: int = MAX_ITER,
    keep_trace: bool = False,
    warm: tuple | None = None,
) -> SdpResult:
    """HKM predictor-corrector path following from X = S = rho I.

    Constraints and objective are normalized to unit Frobenius norm
    internally (the lifted torque, voltage, and homogenization matrices span
    many orders of magnitude); duals are mapped back before returning.
    Terminates when the relative duality gap and both feasibility residuals
    of the normalized problem fall below ``gap_tol``, with a final
    face-identification polish once the interior-point phase reaches its
    numerical floor. A dual improving ray (b^T y > 0 with sum_k y_k A_k <= 0)
    is reported as primal infeasibility.
    """
    if gap_tol <= 0:
        raise ValueError("gap_tol must be positive")
    raw_amats = s.constraints  # (3, 4, 4)
    a_scale = np.maximum(np.linalg.norm(raw_amats, axis=(1, 2)), 1e-300)
    c_scale = max(float(np.linalg.norm(s.C)), 1e-300)
    amats = raw_amats / a_scale[:, None, None]
    cmat = s.C / c_scale
    b = s.rhs / a_scale
    b_norm = 1.0 + np.linalg.norm(b)

    def metrics(x, y, sm):
        obj_p = float(np.tensordot(cmat, x))
        obj_d = float(b @ y)
        gap = abs(obj_p - obj_d) / (1.0 + abs(obj_p) + abs(obj_d))
        rp = b - np.tensordot(amats, x, axes=([1, 2], [0, 1]))
        rd = cmat - sm - np.tensordot(y, amats, axes=(0, 0))
        pinf = float(np.linalg.norm(rp)) / b_norm
        dinf = float(np.linalg.norm(rd)) / 2.0
        return obj_p, obj_d, gap, pinf, dinf

    def finish(x, y, sm, gap, it, status, trace):
        y_orig = y * (c_scale / a_scale)
        s_orig = sm * c_scale
        return SdpResult(X=x, y=y_orig, S=s_orig, gap=gap, iterations=it,
                         status=status, trace=tuple(trace))

    gram = np.tensordot(amats, np.transpose(amats, (0, 2, 1)),
                        axes=([1, 2], [2, 1]))

    def affine_polish(x, y):
        # exact projection onto the trace constraints (Gram system) plus a
        # dual slack recompute; the correction is O(residual), so PSD-ness
        # survives to within the stated floors
        rp = b - np.tensordot(amats, x, axes=([1, 2], [0, 1]))
        try:
            delta = np.linalg.solve(gram, rp)
        except np.linalg.LinAlgError:
            return x, y, None
        x_p = x + np.tensordot(delta, amats, axes=(0, 0))
        x_p = 0.5 * (x_p + x_p.T)
        s_p = cmat - np.tensordot(y, amats, axes=(0, 0))
        return x_p, y, 0.5 * (s_p + s_p.T)

    def accept(x_p, y_p, s_p, it, trace):
        if s_p is None:
            return None
        floor_x = -1e-10 * max(1.0, float(np.abs(x_p).max()))
        floor_s = -1e-10 * max(1.0, float(np.abs(s_p).max()))
        if np.linalg.eigvalsh(x_p).min() < floor_x:
            return None
        if np.linalg.eigvalsh(s_p).min() < floor_s:
            return None
        _, _, gap_p, pinf_p, dinf_p = metrics(x_p, y_p, s_p)
        if gap_p <= gap_tol and pinf_p <= gap_tol and dinf_p <= gap_tol:
            return finish(x_p, y_p, s_p, gap_p, it, SdpStatus.OPTIMAL, trace)
        return None

    def try_polish(x, y, it, trace):
        w = np.linalg.eigvalsh(x)
        if w[-1] <= 0:
            return None
        r_id = int(np.sum(w > 1e-6 * w[-1]))
        for r in dict.fromkeys((r_id, 1, 2)):
            x_p, y_p, s_p, ok = _polish_face(amats, b, cmat, x, y, r)
            if not ok or s_p is None:
                continue
            _, _, gap_p, pinf_p, dinf_p = metrics(x_p, y_p, s_p)
            if gap_p <= gap_tol and pinf_p <= gap_tol and dinf_p <= gap_tol:
                return finish(x_p, y_p, s_p, gap_p, it, SdpStatus.OPTIMAL, trace)
        done = accept(*affine_polish(x, y), it, trace)
        if done is not None:
            return done
        return None

    scale = max(1.0, float(np.abs(b).max()))
    rho = np.sqrt(scale)
    if warm is not None:
        # re-centered warm start: nearby problems (small rhs changes) then
        # converge in a few steps; callers fall back to cold on failure
        x0, y0, s0 = warm
        bump_x = max(1e-8, 1e-2 * float(np.trace(x0)) / 4.0)
        bump_s = max(1e-8, 1e-2 * float(np.trace(s0)) / 4.0)
        x = 0.5 * (x0 + x0.T) + bump_x * np.eye(4)
        sm = 0.5 * (s0 + s0.T) + bump_s * np.eye(4)
        y = np.array(y0, dtype=float) * (a_scale / c_scale)
    else:
        x = rho * np.eye(4)
        sm = rho * np.eye(4)
        y = np.zeros(3)
    trace = []
    best = (np.inf, x.copy(), y.copy(), sm.copy(), np.inf, 0)

    for it in range(max_iter + 1):
        obj_p, obj_d, gap, pinf, dinf = metrics(x, y, sm)
        mu = float(np.tensordot(x, sm)) / 4.0
        if keep_trace:
            trace.append((obj_p * c_scale, obj_d * c_scale, pinf, dinf, mu))
        score = max(gap, pinf, dinf)
        if score < best[0]:
            best = (score, x.copy(), y.copy(), sm.copy(), gap, it)
        if gap <= gap_tol and pinf <= gap_tol and dinf <= gap_tol:
            polished = try_polish(x, y, it, trace)
            if polished is not None:
                return polished
            return finish(x, y, sm, gap, it, SdpStatus.OPTIMAL, trace)
        if it == max_iter:
            break
        # stall detection: no progress possible at the numerical floor
        if it - best[5] >= 12:
            break
        # primal infeasibility: normalized dual improving ray
        if obj_d > 0 and float(np.linalg.norm(y)) > 1e6 * scale:
            ray_mat = np.tensordot(y / obj_d, amats, axes=(0, 0))
            if np.linalg.eigvalsh(0.5 * (ray_mat + ray_mat.T)).max() <= 1e-8:
                return finish(x, y, sm, gap, it, SdpStatus.INFEASIBLE, trace)
        try:
            ls = _chol_psd(sm)
            lx = _chol_psd(x)
        except np.linalg.LinAlgError:
            break
        s_inv = np.linalg.solve(ls.T, np.linalg.solve(ls, _EYE4))
        s_inv = 0.5 * (s_inv + s_inv.T)

        # Schur matrix M_kj = tr(A_k X A_j S^-1)
        asi = amats @ s_inv
        xasi = x @ asi
        m_schur = np.tensordot(amats, np.transpose(xasi, (0, 2, 1)), axes=([1, 2], [1, 2]))
        xs = x @ sm
        rd = cmat - sm - np.tensordot(y, amats, axes=(0, 0))
        x_rd_si = x @ rd @ s_inv
        tr_a_sinv = np.trace(asi, axis1=1, axis2=2)
        tr_a_xrdsi = np.tensordot(amats, x_rd_si, axes=([1, 2], [1, 0]))

        def directions(sigma_mu, extra):
            rhs_vec = b - sigma_mu * tr_a_sinv + tr_a_xrdsi
            if extra is not None:
                rhs_vec = rhs_vec + np.tensordot(amats, extra @ s_inv, axes=([1, 2], [1, 0]))
            try:
                dy = np.linalg.solve(m_schur, rhs_vec)
            except np.linalg.LinAlgError:
                dy = np.linalg.lstsq(m_schur, rhs_vec, rcond=None)[0]
            ds = rd - np.tensordot(dy, amats, axes=(0, 0))
            dx = (sigma_mu * _EYE4 - xs - x @ ds - (0.0 if extra is None else extra)) @ s_inv
            return 0.5 * (dx + dx.T), dy, ds

        try:
            dx_a, dy_a, ds_a = directions(0.0, None)
            tau = 0.98 if gap > 1e-5 else 0.995
            ap = min(1.0, tau * _max_step(lx, dx_a))
            ad = min(1.0, tau * _max_step(ls, ds_a))
            mu_aff = float(np.tensordot(x + ap * dx_a, sm + ad * ds_a)) / 4.0
            sigma = min(1.0, max((mu_aff / mu) ** 3 if mu > 0 else 0.0, 0.0))
            dx, dy, ds = directions(sigma * mu, dx_a @ ds_a)
            ap = min(1.0, tau * _max_step(lx, dx))
            ad = min(1.0, tau * _max_step(ls, ds))
            if min(ap, ad) < 1e-3:  # corrector overshoot: drop 2nd-order term
                dx2, dy2, ds2 = directions(sigma * mu, None)
                ap2 = min(1.0, tau * _max_step(lx, dx2))
                ad2 = min(1.0, tau * _max_step(ls, ds2))
                if min(ap2, ad2) > min(ap, ad):
                    dx, dy, ds, ap, ad = dx2, dy2, ds2, ap2, ad2
        except np.linalg.LinAlgError:
            break
        if max(ap, ad) < 1e-12:
            break
        x = 0.5 * ((x + ap * dx) + (x + ap * dx).T)
        sm = 0.5 * ((sm + ad * ds) + (sm + ad * ds).T)
        y = y + ad * dy

    _, x_b, y_b, s_b, gap_b, it_b = best
    polished = try_polish(x_b, y_b, it_b, trace)
    if polished is not None:
        return polished
    return finish(x_b, y_b, s_b, gap_b, it_b, SdpStatus.MAX_ITER, trace)


def extract_rank1(x: np.ndarray, ratio_tol: float = RATIO_TOL) -> np.ndarray:
    """Recover i from a (near) rank-one lifted solution.

    Raises :class:`NotRankOne` with the second-to-first eigenvalue ratio when
    the spectrum is not sufficiently concentrated.
    """
    xs = check_symmetric(np.asarray(x, dtype=float), "X")
    w, v = np.linalg.eigh(xs)
    lam1, lam2 = w[-1], abs(w[-2])
    if lam1 <= 0:
        raise NotRankOne(np.inf)
    ratio = lam2 / lam1
    if ratio > ratio_tol:
        raise NotRankOne(ratio)
    vec = v[:, -1]
    if abs(vec[3]) <= 1e-8:
        raise HomogenizationDegenerateError(
            f"homogenization entry {vec[3]:.3e} too small for extraction"
        )
    return vec[:3] / vec[3]


def rank1_ratio(x: np.ndarray) -> float:
    """lambda_2 / lambda_1 of a PSD matrix (diagnostic)."""
    m = np.asarray(x, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    if w[-1] <= 0:
        return np.inf
    return float(abs(w[-2]) / w[-1])
