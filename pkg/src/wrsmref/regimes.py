"""Active-constraint regime solvers and the per-point dispatcher.

Each solver enumerates every stationary/constraint-satisfying current of its
regime inside one affine flux region, using univariate polynomial root
finding: Lagrange-multiplier polynomials for the torque-only cases, and
tan-half-angle polynomials on the stator circle / voltage ellipse for the
constrained cases. The voltage-only regime goes through the lifted
semidefinite relaxation.

All regime polynomials are recovered numerically by Chebyshev interpolation
of exactly-polynomial residual functions (cleared of denominators), instead
of transcribing closed-form coefficient tables: the closed forms published
for the torque-only regime presume a diagonal effective resistance, which
fails whenever core loss couples the axes at nonzero speed. The
reconstruction route is exact in all cases and the diagonal closed forms
remain available to tests as an oracle.

Every family's coefficients are affine or quadratic in the requested torque,
so each (region, speed) pair caches three coefficient vectors per family and
a new torque request costs only a coefficient combination plus companion
eigenvalues. The dispatcher runs every regime solver, keeps the feasible
minimum-loss candidate, and iterates region membership to a fixed point.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import sdp
from .machine import (
    AffineFluxRegion,
    MachineParams,
    QcqpData,
    evaluate_loss,
    make_qcqp,
    mirror_region,
)
from .numerics import (
    Poly,
    SingularMatrixError,
    adjugate2,
    adjugate3,
    det2,
    det3,
    real_roots,
    reconstruct_polynomial,
    solve_linear3,
)

# Feasibility tolerances: below interior-point and root-polishing noise,
# above double-precision noise.
TORQUE_TOL = 1e-6
MARGIN_TOL = 1e-9

# theta values this close to a multiple of pi blow up the eliminated rotor
# current; they belong to the rotor-clamped solver instead.
SIN_THETA_MIN = 1e-6

REGION_ITER_CAP = 8


class RegimeTag(Enum):
    CRUISE = "Cruise"
    LAUNCH = "LaunchControl"
    FAST = "FastDriving"
    FORCEFUL = "ForcefulFastDriving"
    ROTOR_CLAMPED_LOWER = "RotorClampedLower"
    ROTOR_CLAMPED_UPPER = "RotorClampedUpper"


class Certificate(Enum):
    KKT_ENUMERATION = "KktEnumeration"
    SDP_RANK_ONE = "SdpRankOne"
    SDP_ROUNDED = "SdpRoundedHeuristic"


class RotorDecoupledError(ValueError):
    """L_rd = 0: the launch/forceful elimination of i_r is undefined and the
    rotor-clamped solver owns the regime."""


class FastRegimeInfeasibleError(ValueError):
    """The lifted relaxation is infeasible at this (T_p, omega_e)."""


class InfeasibleRequestError(ValueError):
    """No regime produced a feasible candidate; carries a torque estimate."""

    def __init__(self, t_shaft: float, omega_e: float, max_torque_estimate: float):
        self.t_shaft = float(t_shaft)
        self.omega_e = float(omega_e)
        self.max_torque_estimate = float(max_torque_estimate)
        super().__init__(
            f"request T={t_shaft:g} N*m at omega_e={omega_e:g} rad/s is infeasible; "
            f"estimated max shaft torque {max_torque_estimate:.3g} N*m"
        )


@dataclass(frozen=True, slots=True)
class Candidate:
    """One stationary/constraint-satisfying current with its bookkeeping."""

    i: np.ndarray
    lam: np.ndarray
    regime: RegimeTag
    certificate: Certificate
    loss: float
    torque_residual: float
    voltage_margin: float
    stator_margin: float
    rotor_margin: float
    feasible: bool
    rank1_ratio: float = float("nan")

    @property
    def i_r(self) -> float:
        return float(self.i[0])

    @property
    def i_dq_norm(self) -> float:
        return float(np.hypot(self.i[1], self.i[2]))


def torque_value(i: np.ndarray, q: QcqpData) -> float:
    return float(i @ q.Q_tau @ i + q.q_tau @ i)


def voltage_value(i: np.ndarray, q: QcqpData) -> float:
    """i^T Q_v i + q_v^T i + c_v; <= 0 means the voltage limit holds."""
    if q.voltage_vacuous:
        return -math.inf
    return float(i @ q.Q_v @ i + q.q_v @ i + q.c_v)


def make_candidate(i, q: QcqpData, regime: RegimeTag, certificate: Certificate,
                   rank1: float = float("nan")) -> Candidate:
    i = np.asarray(i, dtype=float)
    i0, i1, i2 = float(i[0]), float(i[1]), float(i[2])
    lmat, psi = q.L, q.psi
    lam = np.array([
        lmat[0, 0] * i0 + lmat[0, 1] * i1 + psi[0],
        lmat[0, 1] * i0 + lmat[1, 1] * i1 + lmat[1, 2] * i2 + psi[1],
        lmat[1, 2] * i1 + lmat[2, 2] * i2 + psi[2],
    ])
    r, rv = q.R_eff, q.r_eff
    loss = (r[0, 0] * i0 * i0 + r[1, 1] * i1 * i1 + r[2, 2] * i2 * i2
            + 2.0 * (r[0, 1] * i0 * i1 + r[0, 2] * i0 * i2 + r[1, 2] * i1 * i2)
            + rv[0] * i0 + rv[1] * i1 + rv[2] * i2)
    qt, qv = q.Q_tau, q.q_tau
    tau = (2.0 * qt[0, 2] * i0 * i2 + qt[1, 1] * i1 * i1 + qt[2, 2] * i2 * i2
           + 2.0 * qt[1, 2] * i1 * i2 + qv[1] * i1 + qv[2] * i2)
    t_res = abs(tau - q.T_p)
    if q.voltage_vacuous:
        v_margin = math.inf
    else:
        v_margin = q.v_bar - math.hypot(lam[1], lam[2])
    s_margin = q.i_s_rated - math.hypot(i1, i2)
    r_margin = min(i0, q.i_r_rated - i0)
    feasible = (
        t_res <= TORQUE_TOL * (1.0 + abs(q.T_p))
        and r_margin >= -MARGIN_TOL * q.i_r_rated
        and s_margin >= -MARGIN_TOL * q.i_s_rated
        and (q.voltage_vacuous or v_margin >= -MARGIN_TOL * q.v_bar)
    )
    return Candidate(
        i=i,
        lam=lam,
        regime=regime,
        certificate=certificate,
        loss=loss,
        torque_residual=t_res,
        voltage_margin=v_margin,
        stator_margin=s_margin,
        rotor_margin=r_margin,
        feasible=feasible,
        rank1_ratio=rank1,
    )


def _dedupe(points, scale: float):
    if not points:
        return []
    arr = np.asarray(points)
    tol = 1e-9 * (1.0 + scale)
    keep = [0]
    for k in range(1, len(arr)):
        if np.abs(arr[keep] - arr[k]).max(axis=1).min() > tol:
            keep.append(k)
    return [arr[k] for k in keep]


# ---------------------------------------------------------------------------
# Torque-parametric polynomial families
# ---------------------------------------------------------------------------


class _PolyFamily:
    """Polynomial family p_T(x) = p0(x) + T p1(x) + T^2 p2(x).

    Every regime polynomial here depends on the requested torque at most
    quadratically, so three reconstructions (at T = 0, +T0, -T0) recover the
    whole family; later torque requests cost a coefficient combination only.
    """

    __slots__ = ("bound", "t0", "triples")

    def __init__(self, fn_t, bound: int, scales, t0: float = 1.0):
        self.bound = bound
        self.t0 = t0
        self.triples = []
        for scale in scales:
            self.triples.append((scale,) + self._build(fn_t, scale))

    def _build(self, fn_t, scale):
        n = self.bound + 1
        p0 = reconstruct_polynomial(lambda x: fn_t(x, 0.0), self.bound, scale)
        pp = reconstruct_polynomial(lambda x: fn_t(x, self.t0), self.bound, scale)
        pm = reconstruct_polynomial(lambda x: fn_t(x, -self.t0), self.bound, scale)
        c0 = np.zeros(n)
        c0[: len(p0.coeffs)] = p0.coeffs
        cp = np.zeros(n)
        cp[: len(pp.coeffs)] = pp.coeffs
        cm = np.zeros(n)
        cm[: len(pm.coeffs)] = pm.coeffs
        c1 = (cp - cm) / (2.0 * self.t0)
        c2 = (cp + cm - 2.0 * c0) / (2.0 * self.t0 * self.t0)
        return c0, c1, c2

    def coeffs_at(self, t_p: float, scale_idx: int) -> np.ndarray:
        _, c0, c1, c2 = self.triples[scale_idx]
        return c0 + t_p * c1 + (t_p * t_p) * c2

    def roots(self, t_p: float, fn_t=None) -> tuple[np.ndarray, bool]:
        """Union of real roots over the scale ladder; (roots, is_zero)."""
        roots: list[float] = []
        any_nonzero = False
        idx = 0
        while idx < len(self.triples):
            poly = Poly(self.coeffs_at(t_p, idx))
            if not poly.is_zero:
                any_nonzero = True
                if poly.degree >= 1:
                    r = real_roots(poly)
                    roots.extend(r.tolist())
                    # widen on demand when roots crowd the bracket edge
                    if (idx == len(self.triples) - 1 and fn_t is not None and r.size
                            and np.abs(r).max() > 0.95 * self.triples[idx][0]
                            and len(self.triples) < 12):
                        top = 2.0 * self.triples[idx][0]
                        self.triples.append((top,) + self._build(fn_t, top))
            idx += 1
        if not any_nonzero:
            return np.zeros(0), True
        roots.sort()
        out: list[float] = []
        for r in roots:
            if not out or abs(r - out[-1]) > 1e-9 * (1.0 + abs(r)):
                out.append(r)
        return np.asarray(out), False


def _multiplier_scales(r_eff_mat: np.ndarray, r_eff_vec: np.ndarray,
                       q_mat: np.ndarray, q_vec: np.ndarray, i_ref: float,
                       cap: int = 5):
    """Geometric ladder of multiplier magnitudes to reconstruct over.

    A single bracket is fragile: the loss-gradient over torque-gradient
    ratio spans the singular spectrum of the torque data, and a Chebyshev
    grid resolves roots only within a couple of decades of its scale. The
    ladder spans ratio-to-largest through ratio-to-smallest-nonzero singular
    value, spaced ~2.5 decades; unions of the per-scale root sets are
    validated downstream by torque feasibility, so spurious extras are
    harmless while missing roots would break global optimality.
    """
    aug = np.hstack([q_mat, q_vec[:, None]])
    sv = np.linalg.svd(aug, compute_uv=False)
    nonzero = sv[sv > 1e-14 * max(sv[0], 1e-300)]
    if nonzero.size == 0:
        return []
    num_hi = float(np.linalg.norm(r_eff_vec)) + 2.0 * float(np.linalg.norm(r_eff_mat)) * i_ref
    num_lo = float(np.linalg.norm(r_eff_vec)) + 2.0 * float(np.linalg.norm(r_eff_mat)) * (
        1e-2 * i_ref
    )
    num_hi = max(num_hi, 1e-30)
    num_lo = max(num_lo, 1e-30)
    lo = 0.1 * num_lo / float(nonzero[0])
    hi = 10.0 * num_hi / float(nonzero[-1])
    lo = max(lo, hi * 1e-12)
    span = math.log10(max(hi / lo, 1.0))
    n = min(cap, 1 + math.ceil(span / 2.5))
    return list(np.geomspace(lo, hi, n))


def _i_ref(q: QcqpData) -> float:
    return q.i_scale if q.i_scale > 0 else max(q.i_s_rated, q.i_r_rated)


# ---------------------------------------------------------------------------
# Cruise: torque equality only
# ---------------------------------------------------------------------------


def _cruise_fn(q: QcqpData):
    """(mu, T) -> (torque(i(mu)) - T) * det(A(mu))^2, exactly degree <= 6.

    Evaluated through the adjugate so it stays finite at singular A(mu).
    """

    def fn(mu: float, t_p: float) -> float:
        a = 2.0 * (q.R_eff + mu * q.Q_tau)
        det = det3(a)
        z = adjugate3(a) @ (q.r_eff + mu * q.q_tau)
        return float(z @ q.Q_tau @ z - det * (q.q_tau @ z) - t_p * det * det)

    return fn


def _cruise_family(q: QcqpData) -> _PolyFamily:
    scales = _multiplier_scales(q.R_eff, q.r_eff, q.Q_tau, q.q_tau, _i_ref(q))
    return _PolyFamily(_cruise_fn(q), 6, scales or [1.0])


def _cruise_candidates(q: QcqpData, family: _PolyFamily) -> list[Candidate]:
    roots, is_zero = family.roots(q.T_p, _cruise_fn(q))
    if is_zero:
        # torque constraint inactive along the whole family: the
        # unconstrained loss minimum is the single stationary point
        try:
            i = solve_linear3(2.0 * q.R_eff, -q.r_eff)
        except SingularMatrixError:
            return []
        return [make_candidate(i, q, RegimeTag.CRUISE, Certificate.KKT_ENUMERATION)]
    cands = []
    for mu in roots:
        a = 2.0 * (q.R_eff + mu * q.Q_tau)
        try:
            i = solve_linear3(a, -(q.r_eff + mu * q.q_tau))
        except SingularMatrixError:
            continue
        cands.append(make_candidate(i, q, RegimeTag.CRUISE, Certificate.KKT_ENUMERATION))
    return cands


def solve_cruise(q: QcqpData) -> list[Candidate]:
    """All interior stationary points of the torque-constrained loss.

    Reconstructs the degree-6 multiplier polynomial, then recovers one
    current per real root through the 3x3 KKT system. Roots at (numerically)
    singular A(mu) are skipped; an empty list means the regime is empty.
    """
    return _cruise_candidates(q, _cruise_family(q))


# ---------------------------------------------------------------------------
# Stator-circle parametrization shared by launch and forceful
# ---------------------------------------------------------------------------


def _gamma_theta(q: QcqpData, i_s: float, cos_t: float, sin_t: float) -> float:
    """dq part of the torque on the stator circle."""
    idd = i_s * cos_t
    iq = i_s * sin_t
    l_dq = q.Q_tau[2, 2]
    l_delta = 2.0 * q.Q_tau[1, 2]
    return (
        l_dq * (iq * iq - idd * idd)
        + l_delta * idd * iq
        + q.q_tau[1] * idd
        + q.q_tau[2] * iq
    )


def _rotor_from_circle(q: QcqpData, i_s: float, cos_t: float, sin_t: float) -> float | None:
    l_rd = 2.0 * q.Q_tau[0, 2]
    if abs(sin_t) < SIN_THETA_MIN:
        return None
    return (q.T_p - _gamma_theta(q, i_s, cos_t, sin_t)) / (l_rd * i_s * sin_t)


class _AngleFamily:
    """Half-angle root solver for a torque-parametric trigonometric polynomial.

    ``trig_fn(cos, sin, T)`` must be a trigonometric polynomial of degree
    <= ``degree`` for every T (quadratic in T at most); two passes, in
    t = tan(theta/2) and in the inverted variable u = 1/t, cover the whole
    circle including theta near pi.
    """

    __slots__ = ("t_fam", "u_fam")

    def __init__(self, trig_fn, degree: int, t0: float = 1.0):
        bound = 2 * degree

        def p_of_t(t, t_p):
            denom = 1.0 + t * t
            return trig_fn((1.0 - t * t) / denom, 2.0 * t / denom, t_p) * denom**degree

        def p_of_u(u, t_p):
            denom = 1.0 + u * u
            return trig_fn((u * u - 1.0) / denom, 2.0 * u / denom, t_p) * denom**degree

        self.t_fam = _PolyFamily(p_of_t, bound, [1.0], t0)
        self.u_fam = _PolyFamily(p_of_u, bound, [1.0], t0)

    def pairs(self, t_p: float) -> list[tuple[float, float]]:
        pairs = []
        for fam, invert in ((self.t_fam, False), (self.u_fam, True)):
            roots, _ = fam.roots(t_p)
            for root in roots:
                if abs(root) > 1.0 + 1e-12:
                    continue  # covered by the complementary pass
                denom = 1.0 + root * root
                cos_t = (1.0 - root * root) / denom
                if invert:
                    cos_t = -cos_t
                pairs.append((cos_t, 2.0 * root / denom))
        out = []
        for c, s in pairs:
            if all(abs(c - c0) + abs(s - s0) > 1e-9 for c0, s0 in out):
                out.append((c, s))
        return out


def _launch_residual(q: QcqpData, i_s: float):
    """(cos, sin, T) -> numerator of d/dtheta of the reduced launch loss.

    The reduced loss is U(theta) / (L_rd i_s sin theta)^2 with U a degree-4
    trigonometric polynomial; the returned function is
    V = U' sin - 2 U cos, finite everywhere, degree <= 5 and quadratic in T.
    """
    l_rd = 2.0 * q.Q_tau[0, 2]
    r11 = q.R_eff[0, 0]
    r12, r13 = q.R_eff[0, 1], q.R_eff[0, 2]
    r22, r23, r33 = q.R_eff[1, 1], q.R_eff[1, 2], q.R_eff[2, 2]
    e1, e2, e3 = q.r_eff
    l_dq = q.Q_tau[2, 2]
    l_delta = 2.0 * q.Q_tau[1, 2]
    qt1, qt2 = q.q_tau[1], q.q_tau[2]

    def v_of(cos_t: float, sin_t: float, t_p: float) -> float:
        idd, iq = i_s * cos_t, i_s * sin_t
        idd_p, iq_p = -i_s * sin_t, i_s * cos_t
        gamma = (l_dq * (iq * iq - idd * idd) + l_delta * idd * iq
                 + qt1 * idd + qt2 * iq)
        gamma_p = (2.0 * l_dq * (iq * iq_p - idd * idd_p)
                   + l_delta * (idd_p * iq + idd * iq_p)
                   + qt1 * idd_p + qt2 * iq_p)
        n_val = t_p - gamma
        n_p = -gamma_p
        d_val = l_rd * i_s * sin_t
        d_p = l_rd * i_s * cos_t
        c_lin = 2.0 * (r12 * idd + r13 * iq) + e1
        c_lin_p = 2.0 * (r12 * idd_p + r13 * iq_p)
        qq = r22 * idd * idd + 2.0 * r23 * idd * iq + r33 * iq * iq + e2 * idd + e3 * iq
        qq_p = (2.0 * r22 * idd * idd_p + 2.0 * r23 * (idd_p * iq + idd * iq_p)
                + 2.0 * r33 * iq * iq_p + e2 * idd_p + e3 * iq_p)
        u_val = r11 * n_val * n_val + c_lin * n_val * d_val + qq * d_val * d_val
        u_p = (2.0 * r11 * n_val * n_p
               + c_lin_p * n_val * d_val + c_lin * n_p * d_val + c_lin * n_val * d_p
               + qq_p * d_val * d_val + 2.0 * qq * d_val * d_p)
        return u_p * sin_t - 2.0 * u_val * cos_t

    return v_of


def _check_rotor_coupled(q: QcqpData) -> None:
    l_rd = 2.0 * q.Q_tau[0, 2]
    l_scale = max(abs(q.L).max(), 1e-30)
    if abs(l_rd) <= 1e-12 * l_scale:
        raise RotorDecoupledError(
            "L_rd = 0 in this region; the rotor-clamped solver owns this regime"
        )


def _launch_family(q: QcqpData, i_s_rated: float) -> _AngleFamily:
    return _AngleFamily(_launch_residual(q, i_s_rated), 5)


def _launch_candidates(q: QcqpData, i_s_rated: float, fam: _AngleFamily) -> list[Candidate]:
    cands = []
    for cos_t, sin_t in fam.pairs(q.T_p):
        i_r = _rotor_from_circle(q, i_s_rated, cos_t, sin_t)
        if i_r is None:
            continue
        i = np.array([i_r, i_s_rated * cos_t, i_s_rated * sin_t])
        cands.append(make_candidate(i, q, RegimeTag.LAUNCH, Certificate.KKT_ENUMERATION))
    return cands


def solve_launch(q: QcqpData, i_s_rated: float) -> list[Candidate]:
    """Stationary points of the loss on the stator-current circle.

    The rotor current is eliminated through the torque equality (linear in
    i_r on the circle); stationarity in the circle angle is a degree-10
    tan-half-angle polynomial, reconstructed and rooted. Angles with
    |sin theta| < 1e-6 are excluded: the eliminated rotor current diverges
    there and the rotor-clamped solver owns that territory.
    """
    if i_s_rated <= 0:
        raise ValueError("i_s_rated must be positive")
    _check_rotor_coupled(q)
    return _launch_candidates(q, i_s_rated, _launch_family(q, i_s_rated))


# ---------------------------------------------------------------------------
# Fast driving: voltage equality active, via the SDP relaxation
# ---------------------------------------------------------------------------


def _project_onto_equalities(i: np.ndarray, q: QcqpData, include_circle: float | None = None,
                             iters: int = 4) -> np.ndarray:
    """Gauss-Newton projection onto the active equality constraints."""
    x = np.array(i, dtype=float)
    for _ in range(iters):
        res = [torque_value(x, q) - q.T_p, voltage_value(x, q)]
        grads = [2.0 * q.Q_tau @ x + q.q_tau, 2.0 * q.Q_v @ x + q.q_v]
        if include_circle is not None:
            res.append(x[1] ** 2 + x[2] ** 2 - include_circle**2)
            grads.append(np.array([0.0, 2.0 * x[1], 2.0 * x[2]]))
        res = np.asarray(res)
        jac = np.asarray(grads)
        if np.abs(res).max() < 1e-14 * (1.0 + abs(q.T_p)):
            break
        try:
            step = jac.T @ np.linalg.solve(jac @ jac.T, -res)
        except np.linalg.LinAlgError:
            break
        x = x + step
    return x


def solve_fast(q: QcqpData, gap_tol: float = sdp.GAP_TOL,
               ratio_tol: float = sdp.RATIO_TOL, max_iter: int = 50,
               warm: tuple | None = None, state_out: list | None = None) -> Candidate:
    """Global minimum with the voltage constraint active, via the lifted
    semidefinite relaxation.

    A rank-one solution is extracted exactly (certificate ``SdpRankOne``);
    otherwise the dominant eigenvector is scaled and projected onto the two
    equalities (certificate ``SdpRoundedHeuristic``). ``warm`` re-centers the
    interior point from a previous nearby solve; ``state_out`` receives the
    converged iterate for future warm starts.
    """
    if q.omega_e == 0.0 or q.voltage_vacuous:
        raise ValueError("fast regime requires omega_e != 0")
    lifted = sdp.lift(q)
    result = None
    if warm is not None:
        result = sdp.solve_sdp(lifted, gap_tol=gap_tol, max_iter=max_iter, warm=warm)
        if result.status != sdp.SdpStatus.OPTIMAL:
            result = None
    if result is None:
        result = sdp.solve_sdp(lifted, gap_tol=gap_tol, max_iter=max_iter)
    if state_out is not None and result.status == sdp.SdpStatus.OPTIMAL:
        state_out.append((result.X, result.y, result.S))
    if result.status == sdp.SdpStatus.INFEASIBLE:
        raise FastRegimeInfeasibleError(
            f"fast regime infeasible at T_p={q.T_p:g}, omega_e={q.omega_e:g}"
        )
    ratio = sdp.rank1_ratio(result.X)
    try:
        i = sdp.extract_rank1(result.X, ratio_tol)
        certificate = Certificate.SDP_RANK_ONE
    except sdp.NotRankOne:
        w, v = np.linalg.eigh(result.X)
        vec = v[:, -1]
        if abs(vec[3]) <= 1e-8:
            raise FastRegimeInfeasibleError(
                "relaxation solution has no homogeneous component to round"
            ) from None
        i = vec[:3] / vec[3]
        certificate = Certificate.SDP_ROUNDED
    i = _project_onto_equalities(i, q)
    return make_candidate(i, q, RegimeTag.FAST, certificate, rank1=ratio)


# ---------------------------------------------------------------------------
# Forceful fast driving: stator circle and voltage both active
# ---------------------------------------------------------------------------


def _forceful_trig(q: QcqpData, i_s: float):
    """(cos, sin, T) -> voltage equality at the torque-eliminated current,
    cleared of the (i_s sin theta)^2 denominator; degree 2, quadratic in T.

    lambda_d i_s sin = T + sigma cos and lambda_q i_s sin = sigma sin with
    sigma below, so psi_d, L_d and L_rd cancel exactly.
    """
    l_dq = q.L[1, 2]
    l_q = q.L[2, 2]
    psi_q = q.psi[2]
    vb2 = q.v_bar**2

    def w_of(cos_t: float, sin_t: float, t_p: float) -> float:
        sigma = i_s * i_s * (l_dq * cos_t + l_q * sin_t) + i_s * psi_q
        return (
            t_p * t_p
            + 2.0 * t_p * sigma * cos_t
            + sigma * sigma
            - vb2 * (i_s * sin_t) ** 2
        )

    return w_of


def _forceful_family(q: QcqpData, i_s_rated: float) -> _AngleFamily:
    # the cleared polynomial is exactly degree 4 in the half-angle variable;
    # the degree-6 bound keeps headroom and the reconstruction trims the tail
    return _AngleFamily(_forceful_trig(q, i_s_rated), 6)


def _forceful_candidates(q: QcqpData, i_s_rated: float, fam: _AngleFamily) -> list[Candidate]:
    cands = []
    for cos_t, sin_t in fam.pairs(q.T_p):
        i_r = _rotor_from_circle(q, i_s_rated, cos_t, sin_t)
        if i_r is None:
            continue
        i = np.array([i_r, i_s_rated * cos_t, i_s_rated * sin_t])
        i = _project_onto_equalities(i, q, include_circle=i_s_rated, iters=2)
        cands.append(make_candidate(i, q, RegimeTag.FORCEFUL, Certificate.KKT_ENUMERATION))
    return cands


def solve_forceful(q: QcqpData, i_s_rated: float) -> list[Candidate]:
    """All intersection points of torque, voltage, and stator-circle quadrics.

    On the circle the torque equality is linear in i_r; substituting the
    eliminated rotor current into the voltage equality and clearing the
    (i_s sin theta)^2 denominator leaves a trigonometric polynomial whose
    tan-half-angle form is reconstructed and rooted. Every real solution is
    emitted; an empty list means the three quadrics do not intersect.
    """
    if q.omega_e == 0.0 or q.voltage_vacuous:
        raise ValueError("forceful regime requires omega_e != 0")
    if i_s_rated <= 0:
        raise ValueError("i_s_rated must be positive")
    _check_rotor_coupled(q)
    return _forceful_candidates(q, i_s_rated, _forceful_family(q, i_s_rated))


# ---------------------------------------------------------------------------
# Rotor-clamped: i_r pinned at 0 or the rated bound (PMSM-shaped subproblem)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class _Reduced:
    """Two-variable restriction of the problem at fixed rotor current."""

    r2: np.ndarray
    r2_vec: np.ndarray
    q2: np.ndarray
    q2_vec: np.ndarray


def _reduce_at_rotor(q: QcqpData, i_r: float) -> _Reduced:
    return _Reduced(
        r2=q.R_eff[1:, 1:],
        r2_vec=q.r_eff[1:] + 2.0 * i_r * q.R_eff[1:, 0],
        q2=q.Q_tau[1:, 1:],
        q2_vec=q.q_tau[1:] + 2.0 * i_r * q.Q_tau[1:, 0],
    )


def _solve2(a: np.ndarray, rhs: np.ndarray) -> np.ndarray | None:
    det = det2(a)
    if abs(det) <= 1e-14 * max(np.abs(a).max() ** 2, 1e-300):
        return None
    return adjugate2(a) @ rhs / det


def _mu2_fn(red: _Reduced):
    def fn(mu: float, t_p: float) -> float:
        a = 2.0 * (red.r2 + mu * red.q2)
        det = det2(a)
        z = adjugate2(a) @ (red.r2_vec + mu * red.q2_vec)
        return float(z @ red.q2 @ z - det * (red.q2_vec @ z) - t_p * det * det)

    return fn


class _RotorFamilies:
    """Cached families for one rotor clamp value."""

    __slots__ = ("red", "mu_fam", "circle_fam", "ellipse_fam", "corner_fam",
                 "b2_inv", "psi_eff")

    def __init__(self, q: QcqpData, i_r_fixed: float, want_circle: bool, want_voltage: bool):
        self.red = _reduce_at_rotor(q, i_r_fixed)
        scales = _multiplier_scales(self.red.r2, self.red.r2_vec, self.red.q2,
                                    self.red.q2_vec, _i_ref(q), cap=3)
        self.mu_fam = _PolyFamily(_mu2_fn(self.red), 4, scales or [1.0])
        i_s = q.i_s_rated
        red = self.red

        self.circle_fam = None
        if want_circle:
            def circle_torque(cos_t, sin_t, t_p, red=red, i_s=i_s):
                x0, x1 = i_s * cos_t, i_s * sin_t
                return (red.q2[0, 0] * x0 * x0 + 2.0 * red.q2[0, 1] * x0 * x1
                        + red.q2[1, 1] * x1 * x1 + red.q2_vec[0] * x0
                        + red.q2_vec[1] * x1 - t_p)

            self.circle_fam = _AngleFamily(circle_torque, 2)

        self.ellipse_fam = None
        self.corner_fam = None
        self.b2_inv = None
        self.psi_eff = None
        if want_voltage and not q.voltage_vacuous:
            b2 = q.L[1:, 1:]
            det_b2 = det2(b2)
            if abs(det_b2) > 1e-14 * max(np.abs(b2).max() ** 2, 1e-300):
                self.b2_inv = adjugate2(b2) / det_b2
                self.psi_eff = q.psi[1:] + i_r_fixed * q.L[1:, 0]
                b2_inv = self.b2_inv
                psi_eff = self.psi_eff
                v_bar = q.v_bar

                def ellipse_torque(cos_p, sin_p, t_p, red=red):
                    x = b2_inv @ (v_bar * np.array([cos_p, sin_p]) - psi_eff)
                    return float(x @ red.q2 @ x + red.q2_vec @ x) - t_p

                self.ellipse_fam = _AngleFamily(ellipse_torque, 2)

                if want_circle:
                    def circle_voltage(cos_t, sin_t, t_p, b2=b2, psi_eff=psi_eff):
                        x = np.array([i_s * cos_t, i_s * sin_t])
                        lam_dq = b2 @ x + psi_eff
                        return float(lam_dq @ lam_dq) - v_bar**2

                    self.corner_fam = _AngleFamily(circle_voltage, 2)


def _rotor_candidates(q: QcqpData, i_r_fixed: float, fams: _RotorFamilies) -> list[Candidate]:
    red = fams.red
    tag = (RegimeTag.ROTOR_CLAMPED_LOWER if i_r_fixed <= 0.5 * q.i_r_rated
           else RegimeTag.ROTOR_CLAMPED_UPPER)
    points: list[np.ndarray] = []

    roots, is_zero = fams.mu_fam.roots(q.T_p, _mu2_fn(red))
    if is_zero:
        x = _solve2(2.0 * red.r2, -red.r2_vec)
        if x is not None:
            points.append(x)
    for mu in roots:
        x = _solve2(2.0 * (red.r2 + mu * red.q2), -(red.r2_vec + mu * red.q2_vec))
        if x is not None:
            points.append(x)

    i_s = q.i_s_rated
    if fams.circle_fam is not None:
        for cos_t, sin_t in fams.circle_fam.pairs(q.T_p):
            points.append(np.array([i_s * cos_t, i_s * sin_t]))
    if fams.ellipse_fam is not None:
        for cos_p, sin_p in fams.ellipse_fam.pairs(q.T_p):
            points.append(fams.b2_inv @ (q.v_bar * np.array([cos_p, sin_p]) - fams.psi_eff))
    if fams.corner_fam is not None:
        for cos_t, sin_t in fams.corner_fam.pairs(0.0):  # torque-independent
            points.append(np.array([i_s * cos_t, i_s * sin_t]))

    cands = []
    for x in _dedupe(points, q.i_s_rated):
        i = np.array([i_r_fixed, x[0], x[1]])
        cands.append(make_candidate(i, q, tag, Certificate.KKT_ENUMERATION))
    return cands


def solve_rotor_clamped(q: QcqpData, i_r_fixed: float, run_circle: bool = True,
                        run_voltage: bool = True) -> list[Candidate]:
    """All candidates of the two-variable problem at a clamped rotor current.

    Sub-cases: (a) torque equality only, via a degree-4 multiplier
    polynomial; (b) stator circle + torque; (c) voltage equality + torque on
    the flux ellipse; (d) stator circle + voltage intersection points
    (envelope corners; usually torque-infeasible and filtered downstream).
    ``run_circle`` / ``run_voltage`` let callers skip sub-case families whose
    defining surface cannot intersect the region under study.
    """
    fams = _RotorFamilies(q, i_r_fixed, run_circle, run_voltage)
    return _rotor_candidates(q, i_r_fixed, fams)


# ---------------------------------------------------------------------------
# Region-boundary candidates
# ---------------------------------------------------------------------------


# Classification bands: rails from the clamped solvers are exact, while
# facet-bound optima resolve constraint activity only to the flux model's
# cell curvature, so the stator/voltage bands sit at percent level.
CLASSIFY_ROTOR_BAND = 1e-6
CLASSIFY_STATOR_BAND = 0.01
CLASSIFY_VOLTAGE_BAND = 0.02


def _tag_from_margins(i: np.ndarray, q: QcqpData, band_scale: float = 1.0) -> RegimeTag:
    """Regime label from the binding constraints at a current.

    Constraints inside their activity band are kept only when their
    recovered KKT multiplier is positive: a solution that merely touches a
    bound (zero multiplier, e.g. the origin at zero torque) stays in the
    regime of the constraints that actually shape it. Rotor clamps dominate
    the label (they reduce the problem to the two-variable form), then the
    stator circle, then the voltage limit.
    """
    i = np.asarray(i, dtype=float)
    lam = q.flux(i)
    rotor_lo = i[0] <= band_scale * CLASSIFY_ROTOR_BAND * q.i_r_rated
    rotor_hi = q.i_r_rated - i[0] <= band_scale * CLASSIFY_ROTOR_BAND * q.i_r_rated
    stator = (q.i_s_rated - np.hypot(i[1], i[2])
              <= band_scale * CLASSIFY_STATOR_BAND * q.i_s_rated)
    voltage = (not q.voltage_vacuous
               and q.v_bar - np.hypot(lam[1], lam[2])
               <= band_scale * CLASSIFY_VOLTAGE_BAND * q.v_bar)
    grad_f = 2.0 * q.R_eff @ i + q.r_eff
    grads = [2.0 * q.Q_tau @ i + q.q_tau]
    kinds = [None]
    if rotor_lo:
        grads.append(np.array([-1.0, 0.0, 0.0]))
        kinds.append("rl")
    if rotor_hi:
        grads.append(np.array([1.0, 0.0, 0.0]))
        kinds.append("rh")
    if stator:
        grads.append(np.array([0.0, 2.0 * i[1], 2.0 * i[2]]))
        kinds.append("s")
    if voltage:
        grads.append(2.0 * q.Q_v @ i + q.q_v)
        kinds.append("v")
    active = {k for k in kinds if k}
    if active and (rotor_lo or rotor_hi):
        jac = np.asarray(grads).T
        mults, *_ = np.linalg.lstsq(jac, -grad_f, rcond=None)
        resid = float(np.linalg.norm(grad_f + jac @ mults))
        # multiplier signs are meaningful only at stationary points of the
        # smooth active set, and only the rotor bounds need them: a solution
        # that merely touches i_r = 0 (zero multiplier) is not clamped.
        # Near stator/voltage corners the geometric bands stand.
        if resid <= 1e-6 * (1.0 + float(np.linalg.norm(grad_f))):
            floor = 1e-8 * (1.0 + float(np.linalg.norm(grad_f)))
            for kind, mult, grad in zip(kinds[1:], mults[1:], grads[1:]):
                if kind in ("rl", "rh") and mult * float(np.linalg.norm(grad)) < floor:
                    active.discard(kind)
    if "rl" in active:
        return RegimeTag.ROTOR_CLAMPED_LOWER
    if "rh" in active:
        return RegimeTag.ROTOR_CLAMPED_UPPER
    if "s" in active and "v" in active:
        return RegimeTag.FORCEFUL
    if "s" in active:
        return RegimeTag.LAUNCH
    if "v" in active:
        return RegimeTag.FAST
    return RegimeTag.CRUISE


def _plane_basis(normal: np.ndarray):
    """Orthonormal 3x2 basis of the plane orthogonal to ``normal``."""
    n = normal / np.linalg.norm(normal)
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return np.column_stack([u, v])


class _FacetFamilies:
    """Cached boundary families of one region: per-facet torque-stationarity
    on the facet plane, per-facet torque/voltage intersections, and edge
    torque roots (whose quadratic coefficients are affine in T)."""

    __slots__ = ("facets", "edges")

    def __init__(self, q: QcqpData, region: AffineFluxRegion, want_voltage: bool):
        verts = region.vertices
        self.facets = []
        for k in range(region.A.shape[0]):
            normal = region.A[k]
            facet = np.delete(verts, k, axis=0)
            c0 = facet.mean(axis=0)
            p_basis = _plane_basis(normal)
            r2 = p_basis.T @ q.R_eff @ p_basis
            r2_vec = p_basis.T @ (q.r_eff + 2.0 * (q.R_eff @ c0))
            q2 = p_basis.T @ q.Q_tau @ p_basis
            q2_vec = p_basis.T @ (q.q_tau + 2.0 * (q.Q_tau @ c0))
            t_off = float(c0 @ q.Q_tau @ c0 + q.q_tau @ c0)

            def mu_fn(mu, t_p, r2=r2, r2_vec=r2_vec, q2=q2, q2_vec=q2_vec, t_off=t_off):
                a = 2.0 * (r2 + mu * q2)
                det = det2(a)
                z = adjugate2(a) @ (r2_vec + mu * q2_vec)
                return float(z @ q2 @ z - det * (q2_vec @ z) - (t_p - t_off) * det * det)

            scales = _multiplier_scales(r2, r2_vec, q2, q2_vec, _i_ref(q), cap=3)
            fam = _PolyFamily(mu_fn, 4, scales or [1.0])

            ell = None
            ell_geom = None
            if want_voltage and not q.voltage_vacuous \
                    and region.lam_dq_max >= q.v_bar * (1.0 - 1e-12):
                qv2 = p_basis.T @ q.Q_v @ p_basis
                qv2_vec = p_basis.T @ (q.q_v + 2.0 * (q.Q_v @ c0))
                cv2 = float(c0 @ q.Q_v @ c0 + q.q_v @ c0 + q.c_v)
                if det2(qv2) > 1e-16 * max(np.abs(qv2).max() ** 2, 1e-300):
                    xc = _solve2(2.0 * qv2, -qv2_vec)
                    if xc is not None:
                        rho2 = float(xc @ qv2 @ xc) - cv2
                        if rho2 > 0:
                            try:
                                l_chol = np.linalg.cholesky(qv2)
                            except np.linalg.LinAlgError:
                                l_chol = None
                            if l_chol is not None:
                                rho = math.sqrt(rho2)
                                l_inv_t = np.linalg.inv(l_chol).T

                                def ell_fn(cos_p, sin_p, t_p, xc=xc, l_inv_t=l_inv_t,
                                           rho=rho, q2=q2, q2_vec=q2_vec, t_off=t_off):
                                    x = xc + l_inv_t @ (rho * np.array([cos_p, sin_p]))
                                    return float(x @ q2 @ x + q2_vec @ x) - (t_p - t_off)

                                ell = _AngleFamily(ell_fn, 2)
                                ell_geom = (xc, l_inv_t, rho)
            self.facets.append(
                (c0, p_basis, mu_fn, fam, r2, r2_vec, q2, q2_vec, ell, ell_geom)
            )

        self.edges = []
        for a_idx in range(4):
            for b_idx in range(a_idx + 1, 4):
                va, vb = verts[a_idx], verts[b_idx]
                d = vb - va
                c2 = float(d @ q.Q_tau @ d)
                c1 = float(2.0 * (va @ q.Q_tau @ d) + q.q_tau @ d)
                c0_ = float(va @ q.Q_tau @ va + q.q_tau @ va)
                self.edges.append((va, d, c2, c1, c0_))


def _facet_points(q: QcqpData, fams: _FacetFamilies) -> list[np.ndarray]:
    points: list[np.ndarray] = []
    for c0, p_basis, mu_fn, fam, r2, r2_vec, q2, q2_vec, ell, ell_geom in fams.facets:
        roots, is_zero = fam.roots(q.T_p, mu_fn)
        if is_zero:
            x = _solve2(2.0 * r2, -r2_vec)
            if x is not None:
                points.append(c0 + p_basis @ x)
        for mu in roots:
            x = _solve2(2.0 * (r2 + mu * q2), -(r2_vec + mu * q2_vec))
            if x is not None:
                points.append(c0 + p_basis @ x)
        if ell is not None:
            xc, l_inv_t, rho = ell_geom
            for cos_p, sin_p in ell.pairs(q.T_p):
                x = xc + l_inv_t @ (rho * np.array([cos_p, sin_p]))
                points.append(c0 + p_basis @ x)
    for va, d, c2, c1, c0_ in fams.edges:
        c0_t = c0_ - q.T_p
        if abs(c2) > 1e-30:
            disc = c1 * c1 - 4.0 * c2 * c0_t
            if disc >= 0:
                sq = math.sqrt(disc)
                for t in ((-c1 + sq) / (2 * c2), (-c1 - sq) / (2 * c2)):
                    if -0.05 <= t <= 1.05:
                        points.append(va + t * d)
        elif abs(c1) > 1e-30:
            t = -c0_t / c1
            if -0.05 <= t <= 1.05:
                points.append(va + t * d)
    return points


def region_boundary_candidates(q: QcqpData, region: AffineFluxRegion,
                               fams: _FacetFamilies | None = None) -> list[Candidate]:
    """Torque-feasible stationary points on the simplex boundary.

    The optimum of the piecewise-quadratic problem frequently sits on a
    facet of the local simplex, where the flux model kinks and no interior
    regime solver is stationary. This enumerates, per facet: the
    torque-constrained stationary points of the loss restricted to the facet
    plane, the torque/voltage intersection on that plane, plus the
    torque-equality points of every edge. Candidates are labeled by whichever
    C-constraints actually bind there.
    """
    if region.vertices is None:
        return []
    if fams is None:
        fams = _FacetFamilies(q, region, want_voltage=True)
    cands = []
    for i in _dedupe(_facet_points(q, fams), q.i_s_rated):
        cand = make_candidate(i, q, RegimeTag.CRUISE, Certificate.KKT_ENUMERATION)
        if cand.feasible:  # only surviving candidates pay for classification
            cand = replace(cand, regime=_tag_from_margins(i, q))
        cands.append(cand)
    return cands


# ---------------------------------------------------------------------------
# Per-region solver kit (families cached across torque requests)
# ---------------------------------------------------------------------------


class _RegionKit:
    """All torque-parametric families of one (region, speed) pair."""

    __slots__ = ("region", "q_base", "run_voltage", "run_circle", "run_rotor_lo",
                 "run_rotor_hi", "cruise", "launch", "forceful", "rotor_lo",
                 "rotor_hi", "facets", "rotor_decoupled", "sdp_warm")

    def __init__(self, region: AffineFluxRegion, q_base: QcqpData):
        self.region = region
        self.q_base = q_base
        q = q_base
        self.run_voltage = not q.voltage_vacuous
        self.run_circle = True
        self.run_rotor_lo = True
        self.run_rotor_hi = True
        if region.vertices is not None:
            if self.run_voltage and region.lam_dq_max < q.v_bar * (1.0 - 1e-12):
                self.run_voltage = False
            self.run_circle = region.i_dq_max >= q.i_s_rated * (1.0 - 1e-12)
            self.run_rotor_lo = region.i_r_min <= 1e-9 * q.i_r_rated
            self.run_rotor_hi = region.i_r_max >= q.i_r_rated * (1.0 - 1e-9)
        self.cruise = _cruise_family(q)
        self.rotor_decoupled = False
        self.launch = None
        self.forceful = None
        try:
            _check_rotor_coupled(q)
        except RotorDecoupledError:
            self.rotor_decoupled = True
        if self.run_circle and not self.rotor_decoupled:
            self.launch = _launch_family(q, q.i_s_rated)
            if self.run_voltage:
                self.forceful = _forceful_family(q, q.i_s_rated)
        self.rotor_lo = (_RotorFamilies(q, 0.0, self.run_circle, self.run_voltage)
                         if self.run_rotor_lo else None)
        self.rotor_hi = (_RotorFamilies(q, q.i_r_rated, self.run_circle, self.run_voltage)
                         if self.run_rotor_hi else None)
        self.facets = (_FacetFamilies(q, region, self.run_voltage)
                       if region.vertices is not None else None)
        self.sdp_warm = None

    def candidates(self, t_p: float) -> tuple[list[Candidate], list[Candidate]]:
        """(regime candidates, boundary candidates) at one torque request."""
        q = replace(self.q_base, T_p=t_p)
        cands = _cruise_candidates(q, self.cruise)
        if self.launch is not None:
            cands.extend(_launch_candidates(q, q.i_s_rated, self.launch))
        if self.run_voltage:
            try:
                state: list = []
                cands.append(solve_fast(q, warm=self.sdp_warm, state_out=state))
                if state:
                    self.sdp_warm = state[-1]
            except (FastRegimeInfeasibleError, sdp.HomogenizationDegenerateError):
                pass
            if self.forceful is not None:
                cands.extend(_forceful_candidates(q, q.i_s_rated, self.forceful))
        if self.rotor_lo is not None:
            cands.extend(_rotor_candidates(q, 0.0, self.rotor_lo))
        if self.rotor_hi is not None:
            cands.extend(_rotor_candidates(q, q.i_r_rated, self.rotor_hi))
        boundary = (region_boundary_candidates(q, self.region, self.facets)
                    if self.facets is not None else [])
        return cands, boundary


def candidates_in_region(q: QcqpData, region: AffineFluxRegion | None = None) -> list[Candidate]:
    """All candidates from every regime solver on one region's data.

    When the region geometry is supplied, regimes whose defining equality
    surface provably misses the simplex are skipped: |lambda_dq| and |i_dq|
    are convex (maxima at vertices) and i_r is linear, so the vertex extremes
    decide intersection exactly. Skipped solvers could only have produced
    extrapolated candidates outside the region.
    """
    if region is not None:
        kit = _RegionKit(region, q)
        cands, _ = kit.candidates(q.T_p)
        return cands
    cands = solve_cruise(q)
    try:
        cands.extend(solve_launch(q, q.i_s_rated))
    except RotorDecoupledError:
        pass
    if not q.voltage_vacuous:
        try:
            cands.append(solve_fast(q))
        except (FastRegimeInfeasibleError, sdp.HomogenizationDegenerateError):
            pass
        try:
            cands.extend(solve_forceful(q, q.i_s_rated))
        except RotorDecoupledError:
            pass
    cands.extend(solve_rotor_clamped(q, 0.0))
    cands.extend(solve_rotor_clamped(q, q.i_r_rated))
    return cands


# ---------------------------------------------------------------------------
# Global edge net: torque roots on every simplex edge of the map
# ---------------------------------------------------------------------------


class _EdgeNet:
    """Vectorized torque-equality candidates on all simplex edges of a map.

    Every axis-aligned grid segment (and interior Kuhn diagonal) is a simplex
    edge, and coarse-map optima frequently sit exactly on such edges, where
    two facets meet and no in-region stationarity solver can land. The torque
    along an edge is quadratic, so all edge candidates come from one batched
    quadratic solve; they are honest by construction (each edge belongs to
    its owner region) and double as global search seeds.
    """

    __slots__ = ("va", "d", "owner", "l_own", "psi_own", "c2", "c1", "c0")

    def __init__(self, flux_map):
        # one row per (region, edge): the symmetrized region models disagree
        # by the recorded discard across shared edges, so each region's own
        # model must be consulted for its edges
        simp = np.asarray(flux_map.simplices, dtype=np.int64)
        n = len(simp)
        pair_idx = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        rows_a = np.concatenate([simp[:, a] for a, _ in pair_idx])
        rows_b = np.concatenate([simp[:, b] for _, b in pair_idx])
        self.owner = np.tile(np.arange(n, dtype=np.int64), len(pair_idx))
        verts = flux_map.vertices
        self.va = verts[rows_a]
        self.d = verts[rows_b] - self.va
        l_all = np.stack([r.L for r in flux_map.regions])
        psi_all = np.stack([r.psi for r in flux_map.regions])
        self.l_own = l_all[self.owner]
        self.psi_own = psi_all[self.owner]
        # torque quadratic along each edge: tau(va + t d) = c2 t^2 + c1 t + c0
        l_rd = self.l_own[:, 0, 1]
        l_dq = self.l_own[:, 1, 2]
        l_delta = self.l_own[:, 1, 1] - self.l_own[:, 2, 2]
        psi_d = self.psi_own[:, 1]
        psi_q = self.psi_own[:, 2]

        def tau_terms(x, y):
            # bilinear torque form: x^T Q_tau y with the region structure
            return (l_rd * 0.5 * (x[:, 0] * y[:, 2] + x[:, 2] * y[:, 0])
                    - l_dq * x[:, 1] * y[:, 1] + l_dq * x[:, 2] * y[:, 2]
                    + l_delta * 0.5 * (x[:, 1] * y[:, 2] + x[:, 2] * y[:, 1]))

        self.c2 = tau_terms(self.d, self.d)
        self.c1 = 2.0 * tau_terms(self.va, self.d) + (-psi_q * self.d[:, 1]
                                                      + psi_d * self.d[:, 2])
        self.c0 = tau_terms(self.va, self.va) + (-psi_q * self.va[:, 1]
                                                 + psi_d * self.va[:, 2])

    def query(self, t_target: float, machine: MachineParams, omega_e: float,
              q_sign: float, top_k: int = 8):
        """Best feasible edge points for torque ``t_target`` (per pole pair,
        in the possibly mirrored problem frame). Returns a list of
        (loss, point_in_problem_frame, owner_region_id), loss-sorted."""
        rhs = q_sign * t_target
        pts = []
        with np.errstate(invalid="ignore", divide="ignore"):
            disc = self.c1 * self.c1 - 4.0 * self.c2 * (self.c0 - rhs)
            quad = np.abs(self.c2) > 1e-30
            ok = quad & (disc >= 0)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            for sign in (1.0, -1.0):
                t = np.where(ok, (-self.c1 + sign * sq) / (2.0 * self.c2), np.nan)
                pts.append(t)
            lin = ~quad & (np.abs(self.c1) > 1e-30)
            pts.append(np.where(lin, (rhs - self.c0) / self.c1, np.nan))
        out = []
        for t in pts:
            mask = np.isfinite(t) & (t >= -1e-9) & (t <= 1.0 + 1e-9)
            if not mask.any():
                continue
            p = self.va[mask] + t[mask, None] * self.d[mask]
            lam = np.einsum("nij,nj->ni", self.l_own[mask], p) + self.psi_own[mask]
            feas = (p[:, 0] >= -MARGIN_TOL * machine.i_r_rated)
            feas &= p[:, 0] <= machine.i_r_rated * (1 + MARGIN_TOL)
            feas &= np.hypot(p[:, 1], p[:, 2]) <= machine.i_s_rated * (1 + MARGIN_TOL)
            if omega_e != 0.0:
                v_bar = machine.v_max / abs(omega_e)
                feas &= np.hypot(lam[:, 1], lam[:, 2]) <= v_bar * (1 + MARGIN_TOL)
            if not feas.any():
                continue
            p = p[feas]
            lam = lam[feas]
            loss = np.einsum("ni,ij,nj->n", p, machine.R, p)
            if omega_e != 0.0:
                loss = loss + omega_e**2 * np.einsum("ni,ij,nj->n", lam, machine.G, lam)
            own = self.owner[mask][feas]
            for k in range(len(p)):
                out.append((float(loss[k]), p[k], int(own[k])))
        out.sort(key=lambda r: r[0])
        if q_sign < 0:
            # express the candidates in the mirrored problem frame
            out = [(l, np.array([p[0], p[1], -p[2]]), o) for (l, p, o) in out]
        return out[:top_k]


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Solution:
    """Dispatcher output for one (torque, speed) request."""

    i: np.ndarray
    lam: np.ndarray
    loss: float
    regime: RegimeTag
    certificate: Certificate
    region_id: int
    iterations: int
    solve_time_s: float
    t_shaft: float
    omega_e: float
    torque_residual: float
    voltage_margin: float
    stator_margin: float
    rotor_margin: float
    rank1_ratio: float = float("nan")


def _loss_key(c: Candidate):
    # quantized loss so exactly-tied candidates break toward negative i_d
    quantum = 1e-10 * (1.0 + abs(c.loss))
    return (round(c.loss / quantum), c.i[1], c.i[2], c.i[0])


def estimate_max_torque(q: QcqpData, n_theta: int = 720) -> float:
    """Largest torque-per-pole-pair reachable on the stator circle.

    Scans the circle, clamping the rotor current to its rating and to the
    voltage-feasible interval; the torque is linear in i_r at fixed angle, so
    interval endpoints suffice. A coarse but honest bound used to annotate
    infeasible requests.
    """
    l_rd = 2.0 * q.Q_tau[0, 2]
    i_s = q.i_s_rated
    best = -math.inf
    thetas = np.linspace(-math.pi, math.pi, n_theta, endpoint=False)
    for theta in thetas:
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        gamma = _gamma_theta(q, i_s, cos_t, sin_t)
        b1 = l_rd * i_s * sin_t
        lo, hi = 0.0, q.i_r_rated
        if not q.voltage_vacuous:
            idd, iq = i_s * cos_t, i_s * sin_t
            a_c = q.Q_v[0, 0]
            b_c = 2.0 * (q.Q_v[0, 1] * idd + q.Q_v[0, 2] * iq) + q.q_v[0]
            x = np.array([0.0, idd, iq])
            c_c = voltage_value(x, q)
            if a_c > 1e-30:
                disc = b_c * b_c - 4.0 * a_c * c_c
                if disc < 0:
                    continue
                r1 = (-b_c - math.sqrt(disc)) / (2.0 * a_c)
                r2 = (-b_c + math.sqrt(disc)) / (2.0 * a_c)
                lo, hi = max(lo, r1), min(hi, r2)
            elif abs(b_c) > 1e-30:
                if b_c > 0:
                    hi = min(hi, -c_c / b_c)
                else:
                    lo = max(lo, -c_c / b_c)
            elif c_c > 0:
                continue
        if lo > hi:
            continue
        best = max(best, gamma + b1 * lo, gamma + b1 * hi)
    return best if math.isfinite(best) else 0.0


def _q_mirrored(machine: MachineParams) -> bool:
    m = np.diag([1.0, 1.0, -1.0])
    return (
        np.abs(m @ machine.R @ m - machine.R).max()
        <= 1e-12 * max(np.abs(machine.R).max(), 1e-300)
        and np.abs(m @ machine.G @ m - machine.G).max()
        <= 1e-12 * max(np.abs(machine.G).max(), 1e-300)
    )


class _MirroredMap:
    """View of a flux map with the q axis reflected."""

    def __init__(self, inner):
        self._inner = inner
        self._mirror = np.diag([1.0, 1.0, -1.0])

    @property
    def n_regions(self):
        return self._inner.n_regions

    def inner_map(self):
        return self._inner

    @staticmethod
    def q_sign() -> float:
        return -1.0

    def locate(self, i, hint=None):
        return self._inner.locate(self._mirror @ np.asarray(i, dtype=float), hint=hint)

    def region(self, idx: int) -> AffineFluxRegion:
        return mirror_region(self._inner.regions[idx])


class _PlainMap:
    def __init__(self, inner):
        self._inner = inner

    @property
    def n_regions(self):
        return self._inner.n_regions

    def inner_map(self):
        return self._inner

    @staticmethod
    def q_sign() -> float:
        return 1.0

    def locate(self, i, hint=None):
        return self._inner.locate(i, hint=hint)

    def region(self, idx: int) -> AffineFluxRegion:
        return self._inner.regions[idx]


def _seed_current(t_p: float, machine: MachineParams) -> np.ndarray:
    """Heuristic starting point along the high-torque calibration direction."""
    ray = np.array([66.9, -39.1, 173.5])
    frac = min(1.0, max(abs(t_p) / 40.0, 0.02))
    seed = frac * ray
    seed[0] = min(max(seed[0], 0.0), 0.95 * machine.i_r_rated)
    nrm = np.hypot(seed[1], seed[2])
    cap = 0.95 * machine.i_s_rated
    if nrm > cap:
        seed[1:] *= cap / nrm
    return seed


def _vertex_seed_regions(view, t_shaft_abs: float, omega_e: float,
                         machine: MachineParams, n_seeds: int = 3) -> list[int]:
    """Seed regions from the sampled vertices closest to the torque request.

    At map vertices the flux is data, not model, so torque, loss, and
    feasibility are exact there; the lowest-loss near-torque vertices point
    the region walk at globally sensible neighborhoods.
    """
    inner = view.inner_map()
    verts = inner.vertices
    vals = inner.values
    sign = view.q_sign()
    iq = sign * verts[:, 2]
    lam_q = sign * vals[:, 2]
    t_v = machine.p * (vals[:, 1] * iq - lam_q * verts[:, 1])
    loss = np.einsum("ni,ij,nj->n", verts, machine.R, verts)
    if omega_e != 0.0:
        loss = loss + omega_e**2 * np.einsum("ni,ij,nj->n", vals, machine.G, vals)
    ok = (verts[:, 0] >= 0) & (verts[:, 0] <= machine.i_r_rated)
    ok &= np.hypot(verts[:, 1], verts[:, 2]) <= machine.i_s_rated
    if omega_e != 0.0:
        ok &= np.hypot(vals[:, 1], vals[:, 2]) <= machine.v_max / abs(omega_e)
    if not ok.any():
        return []
    idx = np.nonzero(ok)[0]
    t_err = np.abs(t_v[idx] - t_shaft_abs)
    near = idx[np.argsort(t_err)[: max(4 * n_seeds, 16)]]
    best = near[np.argsort(loss[near])[:n_seeds]]
    seeds = []
    for k in best:
        rid = view.locate(np.array([1.0, 1.0, sign]) * verts[k])
        if rid is not None and rid not in seeds:
            seeds.append(rid)
    return seeds


def _infeasibility_score(c: Candidate, q: QcqpData) -> float:
    parts = [c.torque_residual / (1.0 + abs(q.T_p)),
             -c.rotor_margin / q.i_r_rated,
             -c.stator_margin / q.i_s_rated]
    if not q.voltage_vacuous:
        parts.append(-c.voltage_margin / q.v_bar)
    return max(parts)


def solve_point(
    t_shaft: float,
    omega_e: float,
    machine: MachineParams,
    flux_map,
    hint: int | None = None,
    cache: dict | None = None,
) -> Solution:
    """Optimal current reference for one shaft-torque / speed request.

    Runs every regime solver in the current flux region, keeps the feasible
    minimum-loss candidate, and re-locates until the winner lies in its own
    region (fixed-point iteration, capped, with walks from several seeds
    merging into one honest candidate pool). Negative torque requests are
    solved on the q-mirrored problem and mirrored back.

    ``cache`` may hold per-region solver kits reused across calls; it is
    only valid for one (machine, flux_map, omega_e, sign(t_shaft)).
    """
    t0 = time.perf_counter()
    if abs(omega_e) > machine.omega_max * (1.0 + 1e-12):
        raise ValueError(f"|omega_e|={abs(omega_e):g} exceeds omega_max={machine.omega_max:g}")
    mirrored = t_shaft < 0.0
    if mirrored and not _q_mirrored(machine):
        raise ValueError(
            "negative torque via q-mirroring requires R and G without dq coupling"
        )
    view = _MirroredMap(flux_map) if mirrored else _PlainMap(flux_map)
    t_p = abs(t_shaft) / machine.p

    net_key = ("__edge_net__", id(flux_map))
    if cache is not None and net_key in cache:
        edge_net = cache[net_key]
    else:
        edge_net = _EdgeNet(flux_map)
        if cache is not None:
            cache[net_key] = edge_net
    edge_hits = edge_net.query(t_p, machine, omega_e, view.q_sign())

    def build_seeds() -> list[int]:
        out: list[int] = []
        if hint is not None and 0 <= hint < view.n_regions:
            out.append(int(hint))
        ray_seed = view.locate(_seed_current(t_p, machine))
        if ray_seed is not None and ray_seed not in out:
            out.append(ray_seed)
        for rid in _vertex_seed_regions(view, abs(t_shaft), omega_e, machine):
            if rid not in out:
                out.append(rid)
        return out or [0]

    if hint is not None and 0 <= hint < view.n_regions:
        seeds: list[int] | None = None  # built lazily if the hint walk fails
        first_seeds = [int(hint)]
    else:
        seeds = build_seeds()
        for _, _, rid in edge_hits[:2]:
            if rid not in seeds:
                seeds.append(rid)
        first_seeds = seeds

    # a candidate only counts when it is feasible AND lies inside the region
    # whose flux model produced it: regime solvers extrapolate each affine
    # model over all of R^3, and extrapolated points are fictitious
    visited: set[int] = set()
    honest: dict[int, Candidate] = {}

    def get_kit(rid: int) -> _RegionKit:
        key = (rid, omega_e, mirrored)
        if cache is not None and key in cache:
            return cache[key]
        region = view.region(rid)
        kit = _RegionKit(region, make_qcqp(region, machine, omega_e, 0.0))
        if cache is not None:
            cache[key] = kit
        return kit

    hint_converged = False
    seed_queue = list(first_seeds)
    seed_idx = -1
    while seed_queue:
        seed = seed_queue.pop(0)
        seed_idx += 1
        if hint_converged:
            break
        region_id = seed
        for _ in range(REGION_ITER_CAP):
            if region_id in visited:
                break  # walks merge: the honest pool already covers it
            visited.add(region_id)
            kit = get_kit(region_id)
            region = kit.region
            q = replace(kit.q_base, T_p=t_p)
            cands, boundary = kit.candidates(t_p)
            feas = [c for c in cands if c.feasible]
            pool = [c for c in feas + [b for b in boundary if b.feasible]
                    if region.contains(c.i, tol=MARGIN_TOL)]
            pool.sort(key=_loss_key)
            for rank, c in enumerate(pool):
                if rank < 3:
                    c = _kkt_refine(c, q, region)
                prev = honest.get(region_id)
                if prev is None or _loss_key(c) < _loss_key(prev):
                    honest[region_id] = c
            if feas:
                winner = min(feas, key=_loss_key)
                if region.contains(winner.i, tol=MARGIN_TOL):
                    break  # fixed point: model winner is real
            elif cands:
                # walk toward the least-violating point; feasibility may
                # exist in the region that actually contains it
                winner = min(cands, key=lambda c: _infeasibility_score(c, q))
            else:
                break
            nxt = view.locate(winner.i, hint=region_id)
            if nxt is None or nxt in visited:
                break
            region_id = nxt
        # a warm-start hint whose walk produced honest candidates ends the
        # search: sweep neighbors share neighborhoods and the walk has
        # already enumerated the facet-adjacent regions
        if seed_idx == 0 and hint is not None and honest:
            hint_converged = True
        elif seed_idx == 0 and seeds is None:
            seeds = build_seeds()
            seed_queue.extend(r for r in seeds if r != seed)

    # fold the global edge candidates into the honest pool: they live on
    # region boundaries the walks may never have visited
    for _, point, rid in edge_hits:
        kit = get_kit(rid)
        q_edge = replace(kit.q_base, T_p=t_p)
        cand = make_candidate(point, q_edge, _tag_from_margins(point, q_edge),
                              Certificate.KKT_ENUMERATION)
        if cand.feasible and kit.region.contains(cand.i, tol=1e-7):
            prev = honest.get(rid)
            if prev is None or _loss_key(cand) < _loss_key(prev):
                honest[rid] = cand

    if not honest:
        best_estimate = -math.inf
        for rid in list(visited)[:6]:
            q = replace(get_kit(rid).q_base, T_p=t_p)
            best_estimate = max(best_estimate, estimate_max_torque(q))
        raise InfeasibleRequestError(
            t_shaft, omega_e,
            machine.p * best_estimate if math.isfinite(best_estimate) else 0.0,
        )
    final_region, final_candidate = min(honest.items(), key=lambda kv: _loss_key(kv[1]))

    i = final_candidate.i
    lam = final_candidate.lam
    final_tag = _tag_from_margins(i, replace(get_kit(final_region).q_base, T_p=t_p))
    if mirrored:
        i = np.array([i[0], i[1], -i[2]])
        lam = np.array([lam[0], lam[1], -lam[2]])
    return Solution(
        i=i,
        lam=lam,
        loss=final_candidate.loss,
        regime=final_tag,
        certificate=final_candidate.certificate,
        region_id=final_region,
        iterations=len(visited),
        solve_time_s=time.perf_counter() - t0,
        t_shaft=t_shaft,
        omega_e=omega_e,
        torque_residual=final_candidate.torque_residual,
        voltage_margin=final_candidate.voltage_margin,
        stator_margin=final_candidate.stator_margin,
        rotor_margin=final_candidate.rotor_margin,
        rank1_ratio=final_candidate.rank1_ratio,
    )


classify_operating_point = _tag_from_margins


def _kkt_refine(cand: Candidate, q: QcqpData, region: AffineFluxRegion,
                iters: int = 10) -> Candidate:
    """Newton refinement of a candidate on its active constraint set.

    Regime solvers enumerate global stationary points of each active set on
    the whole affine model; when the model-global point falls outside the
    simplex, an interior local minimum on the same active manifold can hide
    between facet candidates. Newton on the KKT system of the candidate's
    near-active constraints recovers it; the result only replaces the
    candidate when it stays honest (feasible and inside the region) and
    cheaper.
    """
    i = np.array(cand.i)
    active = []
    if not q.voltage_vacuous and cand.voltage_margin <= 0.02 * q.v_bar:
        active.append("v")
    if cand.stator_margin <= 0.01 * q.i_s_rated:
        active.append("s")
    clamp = cand.rotor_margin <= 1e-9 * q.i_r_rated
    n_mult = 1 + len(active)

    def kkt_system(x, mults):
        grad_f = 2.0 * q.R_eff @ x + q.r_eff
        grads = [2.0 * q.Q_tau @ x + q.q_tau]
        cons = [torque_value(x, q) - q.T_p]
        hessians = [2.0 * q.Q_tau]
        for kind in active:
            if kind == "v":
                grads.append(2.0 * q.Q_v @ x + q.q_v)
                cons.append(voltage_value(x, q))
                hessians.append(2.0 * q.Q_v)
            else:
                grads.append(np.array([0.0, 2.0 * x[1], 2.0 * x[2]]))
                cons.append(x[1] ** 2 + x[2] ** 2 - q.i_s_rated**2)
                hessians.append(np.diag([0.0, 2.0, 2.0]))
        lagr_grad = grad_f + sum(m * g for m, g in zip(mults, grads))
        hess = 2.0 * q.R_eff + sum(m * h for m, h in zip(mults, hessians))
        return lagr_grad, np.asarray(cons), np.asarray(grads), hess

    # least-squares multipliers at the start
    _, _, grads0, _ = kkt_system(i, np.zeros(n_mult))
    mults, *_ = np.linalg.lstsq(grads0.T, -(2.0 * q.R_eff @ i + q.r_eff), rcond=None)
    free = [0, 1, 2] if not clamp else [1, 2]
    for _ in range(iters):
        lagr_grad, cons, grads, hess = kkt_system(i, mults)
        resid = np.concatenate([lagr_grad[free], cons])
        if np.abs(resid).max() <= 1e-12 * (1.0 + abs(q.T_p)):
            break
        n_free = len(free)
        kkt = np.zeros((n_free + n_mult, n_free + n_mult))
        kkt[:n_free, :n_free] = hess[np.ix_(free, free)]
        kkt[:n_free, n_free:] = grads[:, free].T
        kkt[n_free:, :n_free] = grads[:, free]
        try:
            step = np.linalg.solve(kkt, -resid)
        except np.linalg.LinAlgError:
            return cand
        if not np.all(np.isfinite(step)):
            return cand
        i[free] += step[:n_free]
        mults = mults + step[n_free:]
    refined = make_candidate(i, q, cand.regime, cand.certificate, rank1=cand.rank1_ratio)
    if (refined.feasible and region.contains(refined.i, tol=MARGIN_TOL)
            and refined.loss < cand.loss):
        return Candidate(
            i=refined.i, lam=refined.lam, regime=_tag_from_margins(refined.i, q),
            certificate=cand.certificate, loss=refined.loss,
            torque_residual=refined.torque_residual,
            voltage_margin=refined.voltage_margin,
            stator_margin=refined.stator_margin,
            rotor_margin=refined.rotor_margin, feasible=True,
            rank1_ratio=cand.rank1_ratio,
        )
    return cand


def kkt_residual(cand: Candidate, q: QcqpData, active_tol: float = 1e-6) -> float:
    """Norm of the Lagrangian gradient with least-squares multipliers.

    The torque equality is always active; inequality gradients join when the
    candidate sits within tolerance of the corresponding boundary.
    """
    i = cand.i
    grad_f = 2.0 * q.R_eff @ i + q.r_eff
    grads = [2.0 * q.Q_tau @ i + q.q_tau]
    if cand.rotor_margin <= active_tol * q.i_r_rated:
        grads.append(np.array([1.0, 0.0, 0.0]))
    if cand.stator_margin <= active_tol * q.i_s_rated:
        grads.append(np.array([0.0, 2.0 * i[1], 2.0 * i[2]]))
    if not q.voltage_vacuous and cand.voltage_margin <= active_tol * q.v_bar:
        grads.append(2.0 * q.Q_v @ i + q.q_v)
    jac = np.asarray(grads).T
    mults, *_ = np.linalg.lstsq(jac, -grad_f, rcond=None)
    return float(np.linalg.norm(grad_f + jac @ mults))
