"""Brute-force reference solver and the generic penalty baseline.

The oracle samples the feasible set of one region densely, eliminating the
rotor current from the torque equality analytically (torque is linear in i_r
at fixed stator currents because the rotor-rotor entry of the torque
quadratic is zero), so every evaluated point satisfies the torque constraint
exactly. Box refinement around the incumbent plus a short projected descent
polish deliver reference minima for validating the regime solvers.

Deliberately simple and deterministic; speed comes from vectorizing over the
stator-current grid only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .machine import AffineFluxRegion, MachineParams, QcqpData, evaluate_loss, make_qcqp

ACTIVE_SET_TOL = 1e-6


@dataclass(frozen=True, slots=True)
class OracleSpec:
    """Grid density and refinement schedule for the brute-force search."""

    n_id: int = 96
    n_iq: int = 96
    rounds: int = 4
    shrink: float = 0.25
    torque_tol: float = 1e-6
    margin_tol: float = 1e-9

    def __post_init__(self):
        if self.n_id < 8 or self.n_iq < 8:
            raise ValueError("grid counts must be >= 8 per axis")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass(frozen=True, slots=True)
class OracleResult:
    feasible: bool
    i: np.ndarray | None
    loss: float
    evaluations: int
    best_violation: float  # smallest constraint violation seen when infeasible


def _region_dq_box(region: AffineFluxRegion, i_s_rated: float):
    if region.vertices is not None:
        lo = region.vertices.min(axis=0)
        hi = region.vertices.max(axis=0)
        return (
            max(lo[1], -i_s_rated),
            min(hi[1], i_s_rated),
            max(lo[2], -i_s_rated),
            min(hi[2], i_s_rated),
        )
    return -i_s_rated, i_s_rated, -i_s_rated, i_s_rated


def _cell_kernel(q: QcqpData, region: AffineFluxRegion, spec: OracleSpec):
    """Scalar per-cell evaluator: feasibility and loss at one candidate.

    The oracle is the reference solver: each grid cell is inspected
    individually, in index order, with ties resolved to the first (lowest
    linear index) minimum. Returns a closure evaluating one current.
    """
    r = q.R_eff
    r00, r01, r02 = r[0, 0], r[0, 1], r[0, 2]
    r11, r12, r22 = r[1, 1], r[1, 2], r[2, 2]
    e0, e1, e2 = q.r_eff
    lmat, psi = q.L, q.psi
    l10, l11, l12 = lmat[1, 0], lmat[1, 1], lmat[1, 2]
    l21, l22 = lmat[2, 1], lmat[2, 2]
    psi_d, psi_q = psi[1], psi[2]
    a_rows = [tuple(row) for row in region.A]
    b_vals = [float(v) for v in region.b]
    b_tol = 1e-9 * (1.0 + max(abs(v) for v in b_vals))
    ir_hi = q.i_r_rated * (1.0 + spec.margin_tol)
    ir_lo = -spec.margin_tol * q.i_r_rated
    is_hi = q.i_s_rated * (1.0 + spec.margin_tol)
    vacuous = q.voltage_vacuous
    v_hi = None if vacuous else q.v_bar * (1.0 + spec.margin_tol)

    def evaluate(i_r: float, i_d: float, i_q: float):
        """(feasible, loss, violation) at one torque-exact candidate."""
        viol = max(ir_lo - i_r, i_r - ir_hi, 0.0) / q.i_r_rated
        viol = max(viol, math.hypot(i_d, i_q) / q.i_s_rated - 1.0)
        for (a0, a1_, a2_), bv in zip(a_rows, b_vals):
            viol = max(viol, (a0 * i_r + a1_ * i_d + a2_ * i_q - bv) / (1.0 + abs(bv)))
        if not vacuous:
            lam_d = l10 * i_r + l11 * i_d + l12 * i_q + psi_d
            lam_q = l21 * i_d + l22 * i_q + psi_q
            viol = max(viol, math.hypot(lam_d, lam_q) / q.v_bar - 1.0)
        if viol > spec.margin_tol:
            return False, math.inf, viol
        loss = (r00 * i_r * i_r + r11 * i_d * i_d + r22 * i_q * i_q
                + 2.0 * (r01 * i_r * i_d + r02 * i_r * i_q + r12 * i_d * i_q)
                + e0 * i_r + e1 * i_d + e2 * i_q)
        return True, loss, 0.0

    return evaluate


def _torque_pieces(q: QcqpData):
    l_rd = 2.0 * q.Q_tau[0, 2]
    l_dq = q.Q_tau[2, 2]
    l_delta = 2.0 * q.Q_tau[1, 2]
    return l_rd, l_dq, l_delta


def _gamma_grid(q: QcqpData, i_d: np.ndarray, i_q: np.ndarray) -> np.ndarray:
    _, l_dq, l_delta = _torque_pieces(q)
    return (l_dq * (i_q**2 - i_d**2) + l_delta * i_d * i_q
            + q.q_tau[1] * i_d + q.q_tau[2] * i_q)


def brute_force(
    t_shaft: float,
    omega_e: float,
    machine: MachineParams,
    region: AffineFluxRegion,
    spec: OracleSpec = OracleSpec(),
) -> OracleResult:
    """Reference minimum loss for one request, restricted to one region.

    Grids the stator currents, eliminates i_r from the torque equality (or
    re-solves the stator currents on the torque curve at the clamped rotor
    bounds when the eliminated value leaves its rating), refines the box
    around the incumbent, and finishes with a monotone projected-descent
    polish. Deterministic: ties resolve to the lowest linear grid index.
    """
    q = make_qcqp(region, machine, omega_e, t_shaft / machine.p)
    l_rd, l_dq, _ = _torque_pieces(q)
    d_lo, d_hi, q_lo, q_hi = _region_dq_box(region, machine.i_s_rated)
    if d_lo > d_hi or q_lo > q_hi:
        return OracleResult(False, None, math.inf, 0, math.inf)

    best_i, best_loss, n_eval = None, math.inf, 0
    near_i, near_viol = None, math.inf

    box = (d_lo, d_hi, q_lo, q_hi)
    evaluate = _cell_kernel(q, region, spec)
    qt02 = q.Q_tau[0, 2]
    qt12 = q.Q_tau[1, 2]
    qtau1, qtau2 = q.q_tau[1], q.q_tau[2]
    for _ in range(spec.rounds + 1):
        dgrid = np.linspace(box[0], box[1], spec.n_id)
        qgrid = np.linspace(box[2], box[3], spec.n_iq)
        # reference style on purpose: every grid cell inspected one at a
        # time, lowest linear index winning ties; this solver is the ground
        # truth, not the fast path
        for idd in dgrid:
            g_base = -l_dq * idd * idd + qtau1 * idd - q.T_p
            for iq in qgrid:
                gamma_m = (l_dq * iq * iq + 2.0 * qt12 * idd * iq
                           + qtau2 * iq + g_base)
                den = l_rd * iq
                n_eval += 1
                if den == 0.0:
                    continue
                i_r = -gamma_m / den
                ok, loss, viol = evaluate(i_r, idd, iq)
                if ok and loss < best_loss:
                    best_i, best_loss = np.array([i_r, idd, iq]), loss
                elif not ok and viol < near_viol:
                    near_i, near_viol = np.array([i_r, idd, iq]), viol
        # clamped faces: solve the torque conic for i_q at fixed i_d
        for i_r_fix in (0.0, machine.i_r_rated):
            for idd in dgrid:
                a_c = l_dq
                b_c = 2.0 * qt12 * idd + qtau2 + 2.0 * i_r_fix * qt02
                c_c = -l_dq * idd * idd + qtau1 * idd - q.T_p
                if abs(a_c) > 1e-30:
                    disc = b_c * b_c - 4.0 * a_c * c_c
                    n_eval += 1
                    if disc < 0:
                        continue
                    sq = math.sqrt(disc)
                    iq_roots = ((-b_c + sq) / (2 * a_c), (-b_c - sq) / (2 * a_c))
                elif abs(b_c) > 1e-30:
                    iq_roots = (-c_c / b_c,)
                else:
                    n_eval += 1
                    continue
                for iq in iq_roots:
                    n_eval += 1
                    ok, loss, viol = evaluate(i_r_fix, idd, iq)
                    if ok and loss < best_loss:
                        best_i, best_loss = np.array([i_r_fix, idd, iq]), loss
                    elif not ok and viol < near_viol:
                        near_i, near_viol = np.array([i_r_fix, idd, iq]), viol
        center = best_i if best_i is not None else near_i
        if center is None:
            break
        w_d = (box[1] - box[0]) * spec.shrink
        w_q = (box[3] - box[2]) * spec.shrink
        box = (
            max(d_lo, center[1] - w_d / 2),
            min(d_hi, center[1] + w_d / 2),
            max(q_lo, center[2] - w_q / 2),
            min(q_hi, center[2] + w_q / 2),
        )

    if best_i is None:
    if best_i is None:
        return OracleResult(False, None, math.inf, n_eval, near_viol)

    best_i, best_loss = _polish(q, region, machine, best_i, best_loss, spec)
    return OracleResult(True, best_i, best_loss, n_eval, 0.0)


def _polish(q: QcqpData, region: AffineFluxRegion, machine: MachineParams,
            i0: np.ndarray, loss0: float, spec: OracleSpec, steps: int = 10):
    """Projected-descent polish on the torque-eliminated stator plane.

    Numeric gradient in (i_d, i_q) with i_r re-solved from the torque
    equality; steps are accepted only when feasible and improving, so the
    incumbent loss is non-increasing.
    """
    l_rd, _, _ = _torque_pieces(q)
    best = np.array(i0)
    best_loss = loss0

    def lift(i_d: float, i_q: float):
        if abs(i_q) < 1e-12 or abs(l_rd) < 1e-30:
            return None
        i_r = (q.T_p - _gamma_grid(q, np.array([i_d]), np.array([i_q]))[0]) / (l_rd * i_q)
        pt = np.array([i_r, i_d, i_q])
        if not (
            -spec.margin_tol * q.i_r_rated <= i_r <= q.i_r_rated * (1 + spec.margin_tol)
        ):
            return None
        if np.hypot(i_d, i_q) > q.i_s_rated * (1 + spec.margin_tol):
            return None
        if not region.contains(pt, tol=1e-9):
            return None
        if not q.voltage_vacuous:
            lam_dq = q.L[1:, :] @ pt + q.psi[1:]
            if np.hypot(lam_dq[0], lam_dq[1]) > q.v_bar * (1 + spec.margin_tol):
                return None
        return pt

    if best[0] in (0.0, machine.i_r_rated) and lift(best[1], best[2]) is None:
        return best, best_loss  # clamped-face incumbent: leave as is

    h = 1e-5 * (1.0 + max(abs(best[1]), abs(best[2])))
    step = 0.1 * (1.0 + np.hypot(best[1], best[2]))
    for _ in range(steps):
        grads = []
        for delta in ((h, 0.0), (0.0, h)):
            plus = lift(best[1] + delta[0], best[2] + delta[1])
            minus = lift(best[1] - delta[0], best[2] - delta[1])
            if plus is None or minus is None:
                grads = None
                break
            grads.append((evaluate_loss(plus, q) - evaluate_loss(minus, q)) / (2 * h))
        if grads is None:
            break
        g = np.asarray(grads)
        gn = np.linalg.norm(g)
        if gn < 1e-14 * (1.0 + abs(best_loss)):
            break
        improved = False
        trial_step = step
        for _ in range(8):
            cand_dq = best[1:] - trial_step * g / gn
            cand = lift(cand_dq[0], cand_dq[1])
            if cand is not None:
                loss = evaluate_loss(cand, q)
                if loss < best_loss:
                    best, best_loss = cand, loss
                    improved = True
                    break
            trial_step *= 0.5
        step = trial_step if improved else step * 0.5
        if not improved and step < 1e-12:
            break
    return best, best_loss


def detect_active_set(i, q: QcqpData, tol: float = ACTIVE_SET_TOL) -> set[str]:
    """Constraints whose margin lies within ``tol`` of zero at ``i``."""
    i = np.asarray(i, dtype=float)
    active = set()
    if i[0] <= tol * q.i_r_rated:
        active.add("C1")
    if q.i_r_rated - i[0] <= tol * q.i_r_rated:
        active.add("C2")
    if q.i_s_rated - np.hypot(i[1], i[2]) <= tol * q.i_s_rated:
        active.add("C3")
    if not q.voltage_vacuous:
        lam = q.flux(i)
        if q.v_bar - np.hypot(lam[1], lam[2]) <= tol * q.v_bar:
            active.add("C4")
    return active


def penalty_solve(
    t_shaft: float,
    omega_e: float,
    machine: MachineParams,
    region: AffineFluxRegion,
    max_outer: int = 12,
    max_inner: int = 400,
) -> tuple[np.ndarray, float]:
    """Generic quadratic-penalty descent on the raw problem.

    Internal baseline for runtime comparisons only: descends
    loss + rho * (torque residual^2 + inequality hinges^2) with rho
    escalation and backtracking line search. No structure is exploited.
    """
    q = make_qcqp(region, machine, omega_e, t_shaft / machine.p)
    scale = max(1.0, abs(q.T_p))

    def penalty(i, rho):
        t_res = (i @ q.Q_tau @ i + q.q_tau @ i) - q.T_p
        pen = t_res * t_res
        pen += min(i[0], 0.0) ** 2 + max(i[0] - q.i_r_rated, 0.0) ** 2
        pen += max(np.hypot(i[1], i[2]) - q.i_s_rated, 0.0) ** 2
        if not q.voltage_vacuous:
            lam = q.flux(i)
            pen += max(np.hypot(lam[1], lam[2]) - q.v_bar, 0.0) ** 2 * (q.i_s_rated / q.v_bar) ** 2
        return evaluate_loss(i, q) + rho * pen

    x = np.array([0.3 * q.i_r_rated, -0.1 * q.i_s_rated, 0.3 * q.i_s_rated])
    rho = 1.0
    h = 1e-6 * (1.0 + q.i_s_rated)
    for _ in range(max_outer):
        step = 1.0
        for _ in range(max_inner):
            f0 = penalty(x, rho)
            g = np.zeros(3)
            for k in range(3):
                e = np.zeros(3)
                e[k] = h
                g[k] = (penalty(x + e, rho) - penalty(x - e, rho)) / (2 * h)
            gn = np.linalg.norm(g)
            if gn < 1e-10 * (1.0 + abs(f0)):
                break
            accepted = False
            while step > 1e-14:
                x_new = x - step * g / gn
                if penalty(x_new, rho) < f0:
                    x = x_new
                    accepted = True
                    step = min(step * 2.0, q.i_s_rated * 0.2)
                    break
                step *= 0.5
            if not accepted:
                break
        t_res = abs((x @ q.Q_tau @ x + q.q_tau @ x) - q.T_p)
        if t_res < 1e-8 * scale:
            break
        rho *= 10.0
    return x, evaluate_loss(x, q)
