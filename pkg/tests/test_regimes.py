import math

import numpy as np
import pytest

from wrsmref.machine import AffineFluxRegion, MachineParams, make_qcqp
from wrsmref.numerics import reconstruct_polynomial
from wrsmref.oracle import brute_force, detect_active_set
from wrsmref.regimes import (
    Certificate,
    InfeasibleRequestError,
    RegimeTag,
    RotorDecoupledError,
    _cruise_fn,
    candidates_in_region,
    kkt_residual,
    solve_cruise,
    solve_fast,
    solve_forceful,
    solve_launch,
    solve_point,
    solve_rotor_clamped,
    torque_value,
    voltage_value,
)


def open_region(lmat, psi):
    return AffineFluxRegion(
        A=np.vstack([np.eye(3), -np.eye(3)]), b=np.full(6, 1e5),
        L=np.asarray(lmat, dtype=float), psi=np.asarray(psi, dtype=float),
        region_id=0,
    )


def machine(v_max=30.0, i_s=80.0):
    return MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2,
                                       i_r_rated=80.0, i_s_rated=i_s,
                                       v_max=v_max, omega_max=13000.0)


L_SAT = np.array([[0.5e-3, 0.45e-3, 0.0],
                  [0.45e-3, 0.8e-3, -0.05e-3],
                  [0.0, -0.05e-3, 0.4e-3]])
PSI_SAT = np.array([0.02, 0.015, 0.004])


def test_cruise_trivial_origin():
    region = open_region(np.diag([2e-3, 2e-3, 1e-3]), np.zeros(3))
    q = make_qcqp(region, machine(), 0.0, 0.0)
    cands = solve_cruise(q)
    best = min(cands, key=lambda c: c.loss)
    assert np.abs(best.i).max() < 1e-9
    assert best.loss == pytest.approx(0.0, abs=1e-12)


def test_cruise_polynomial_is_degree_six():
    rng = np.random.default_rng(0)
    region = open_region(L_SAT, PSI_SAT)
    q = make_qcqp(region, machine(), 500.0, 2.0)
    fn = _cruise_fn(q)
    p = reconstruct_polynomial(lambda mu: fn(mu, q.T_p), 8, 50.0)
    assert p.degree <= 6


def test_cruise_matches_oracle(bench_machine, bench_map):
    sol = solve_point(2.0, 100.0, bench_machine, bench_map)
    res = brute_force(2.0, 100.0, bench_machine, bench_map.regions[sol.region_id])
    assert res.feasible
    assert sol.loss <= res.loss + 1e-3 * (1.0 + abs(res.loss))


def test_launch_construction_equalities():
    region = open_region(L_SAT, PSI_SAT)
    mach = machine()
    q = make_qcqp(region, mach, 400.0, 3.0)
    cands = solve_launch(q, mach.i_s_rated)
    assert cands
    for c in cands:
        assert np.hypot(c.i[1], c.i[2]) == pytest.approx(mach.i_s_rated, rel=1e-9)
        assert abs(torque_value(c.i, q) - q.T_p) <= 1e-6 * (1.0 + abs(q.T_p))


def test_launch_symmetric_instance_pairs():
    # cost even in i_d: psi_q = 0, L_dq = 0, L_d = L_q, zero speed (so the
    # effective resistance is diagonal); candidates pair up in i_d
    lmat = np.array([[0.6e-3, 0.4e-3, 0.0],
                     [0.4e-3, 0.9e-3, 0.0],
                     [0.0, 0.0, 0.9e-3]])
    region = open_region(lmat, np.array([0.01, 0.008, 0.0]))
    mach = machine()
    q = make_qcqp(region, mach, 0.0, 1.5)
    cands = solve_launch(q, mach.i_s_rated)
    assert cands
    # mirror partner (i_d -> -i_d at the same i_q) exists with equal loss;
    # ties break toward non-positive i_d in the dispatcher ordering
    for c in cands:
        partners = [o for o in cands
                    if abs(o.i[2] - c.i[2]) <= 1e-3 and abs(o.i[1] + c.i[1]) <= 1e-3]
        assert partners
        for o in partners:
            assert o.loss == pytest.approx(c.loss, rel=1e-6, abs=1e-9)
    from wrsmref.regimes import _loss_key
    best = min(cands, key=_loss_key)
    assert best.i[1] <= 1e-3


def test_launch_rejects_decoupled_rotor():
    lmat = np.array([[0.5e-3, 0.0, 0.0],
                     [0.0, 0.8e-3, -0.05e-3],
                     [0.0, -0.05e-3, 0.4e-3]])
    region = open_region(lmat, PSI_SAT)
    q = make_qcqp(region, machine(), 400.0, 1.0)
    with pytest.raises(RotorDecoupledError):
        solve_launch(q, 80.0)


def test_launch_active_point_matches_oracle(bench_machine, bench_map):
    sol = solve_point(4.6, 300.0, bench_machine, bench_map)
    assert sol.stator_margin <= 0.01 * bench_machine.i_s_rated
    res = brute_force(4.6, 300.0, bench_machine, bench_map.regions[sol.region_id])
    assert res.feasible
    assert sol.loss <= res.loss + 1e-3 * (1.0 + abs(res.loss))


def test_fast_representative_instance():
    # representative published operating point: torque 20 per pole pair at
    # 500 rad/s; solved on an open affine region where it is well posed
    region = open_region(L_SAT, PSI_SAT)
    mach = MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2,
                                       i_r_rated=900.0, i_s_rated=900.0,
                                       v_max=187.6, omega_max=13000.0)
    q = make_qcqp(region, mach, 500.0, 20.0)
    cand = solve_fast(q)
    assert cand.certificate == Certificate.SDP_RANK_ONE
    assert cand.rank1_ratio <= 1e-6
    assert abs(torque_value(cand.i, q) - q.T_p) <= 1e-6 * (1.0 + abs(q.T_p))
    assert abs(voltage_value(cand.i, q)) <= 1e-6 * q.v_bar**2


def test_fast_point_matches_voltage_shell_oracle(bench_machine, bench_map):
    sol = solve_point(1.0, 2500.0, bench_machine, bench_map)
    v_bar = bench_machine.v_max / 2500.0
    assert sol.voltage_margin <= 0.05 * v_bar  # voltage regime
    res = brute_force(1.0, 2500.0, bench_machine, bench_map.regions[sol.region_id])
    assert res.feasible
    assert sol.loss <= res.loss + 1e-3 * (1.0 + abs(res.loss))


def test_forceful_construction_equalities():
    region = open_region(L_SAT, PSI_SAT)
    mach = machine(v_max=25.0)
    # pick a demand where the three surfaces intersect
    q = make_qcqp(region, mach, 520.0, 4.0)
    cands = solve_forceful(q, mach.i_s_rated)
    for c in cands:
        assert np.hypot(c.i[1], c.i[2]) == pytest.approx(mach.i_s_rated, rel=1e-6)
        assert abs(torque_value(c.i, q) - q.T_p) <= 1e-6 * (1.0 + abs(q.T_p))
        assert abs(voltage_value(c.i, q)) <= 1e-6 * q.v_bar**2


def test_forceful_quartic_structure_matches_appendix_subcase():
    # the published degree-4 display is exact when T_p = -L_dq i_s^2
    lmat = L_SAT
    i_s = 80.0
    t_p = -lmat[1, 2] * i_s**2
    region = open_region(lmat, PSI_SAT)
    mach = machine(v_max=25.0)
    omega = 520.0
    q = make_qcqp(region, mach, omega, t_p)
    l_dq, l_q, psi_q = lmat[1, 2], lmat[2, 2], PSI_SAT[2]
    v_bar = mach.v_max / omega

    def cleared(t):
        denom = 1.0 + t * t
        cos_t = (1.0 - t * t) / denom
        sin_t = 2.0 * t / denom
        sigma = i_s**2 * (l_dq * cos_t + l_q * sin_t) + i_s * psi_q
        w = (q.T_p**2 + 2.0 * q.T_p * sigma * cos_t + sigma**2
             - (v_bar * i_s * sin_t) ** 2)
        return w * denom**2

    poly = reconstruct_polynomial(cleared, 12, 1.0)
    assert poly.degree == 4
    a = poly.coeffs
    scale = np.abs(a).max()
    assert a[1] == pytest.approx(a[3], rel=1e-8)
    assert a[0] >= -1e-12 * scale and a[4] >= -1e-12 * scale
    # published closed forms carry a common L_rd^2 omega^2 factor
    b0 = (q.T_p + i_s * psi_q + l_dq * i_s**2) ** 2
    b1 = 4.0 * l_q * i_s**2 * (q.T_p + i_s * psi_q + l_dq * i_s**2)
    b2 = 2.0 * ((q.T_p - l_dq * i_s**2) ** 2 + i_s**2 * psi_q**2
                + 2.0 * (l_q**2 - l_dq**2) * i_s**4
                - 2.0 * i_s**2 * v_bar**2)
    ratio = a[0] / b0
    assert a[1] == pytest.approx(ratio * b1, rel=1e-8)
    assert a[2] == pytest.approx(ratio * b2, rel=1e-8)
    assert a[4] == pytest.approx(ratio * ((q.T_p - i_s * psi_q + l_dq * i_s**2) ** 2), rel=1e-8)


def test_forceful_corner_matches_oracle(bench_machine, bench_map):
    sol = solve_point(4.56, 785.0, bench_machine, bench_map)
    v_bar = bench_machine.v_max / 785.0
    assert sol.stator_margin <= 0.01 * bench_machine.i_s_rated
    assert sol.voltage_margin <= 0.05 * v_bar
    res = brute_force(4.56, 785.0, bench_machine, bench_map.regions[sol.region_id])
    assert res.feasible
    assert sol.loss <= res.loss + 1e-3 * (1.0 + abs(res.loss))


def test_rotor_clamped_trivial():
    region = open_region(np.diag([2e-3, 2e-3, 1e-3]), np.zeros(3))
    q = make_qcqp(region, machine(), 0.0, 0.0)
    cands = solve_rotor_clamped(q, 0.0)
    best = min(cands, key=lambda c: c.loss)
    assert np.abs(best.i).max() < 1e-9


def test_rotor_clamped_circle_ellipse_intersections():
    # constructed circle/ellipse geometry: recover known intersection points
    lmat = np.array([[0.5e-3, 0.3e-3, 0.0],
                     [0.3e-3, 1.0e-3, 0.0],
                     [0.0, 0.0, 0.5e-3]])
    psi = np.zeros(3)
    region = open_region(lmat, psi)
    i_s = 50.0
    # voltage ellipse: |B x| = v_bar with B = diag(1e-3, 0.5e-3); choose
    # v_bar so it crosses the circle: between 0.5e-3*50 and 1e-3*50
    v_bar = 0.7e-3 * i_s
    omega = 400.0
    mach = MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2,
                                       i_r_rated=80.0, i_s_rated=i_s,
                                       v_max=v_bar * omega, omega_max=13000.0)
    q = make_qcqp(region, mach, omega, 0.3)
    cands = solve_rotor_clamped(q, 0.0)
    # analytic intersections: (1e-3 x)^2 + (0.5e-3 y)^2 = v_bar^2, x^2+y^2=i_s^2
    bx, by = 1.0e-3, 0.5e-3
    x2 = (v_bar**2 - by**2 * i_s**2) / (bx**2 - by**2)
    want_x = math.sqrt(x2)
    want_y = math.sqrt(i_s**2 - x2)
    want = {(round(sx * want_x, 4), round(sy * want_y, 4))
            for sx in (1, -1) for sy in (1, -1)}
    got = {(round(float(c.i[1]), 4), round(float(c.i[2]), 4)) for c in cands}
    missing = {w for w in want
               if all(abs(w[0] - g[0]) + abs(w[1] - g[1]) > 1e-3 for g in got)}
    assert not missing


def test_rotor_clamp_engages_at_high_speed(bench_machine, bench_map):
    sol = solve_point(1.8, 1700.0, bench_machine, bench_map)
    assert sol.regime in (RegimeTag.ROTOR_CLAMPED_UPPER, RegimeTag.ROTOR_CLAMPED_LOWER)
    res = brute_force(1.8, 1700.0, bench_machine, bench_map.regions[sol.region_id])
    assert res.feasible
    assert sol.loss <= res.loss + 1e-3 * (1.0 + abs(res.loss))
    q = make_qcqp(bench_map.regions[sol.region_id], bench_machine, 1700.0,
                  1.8 / bench_machine.p)
    active = detect_active_set(res.i, q, tol=1e-3)
    assert "C2" in active or "C1" in active


def test_solve_point_trivial(bench_machine, bench_map):
    sol = solve_point(0.0, 0.0, bench_machine, bench_map)
    assert sol.regime == RegimeTag.CRUISE
    assert np.abs(sol.i).max() < 1e-9


def test_solve_point_rejects_overspeed(bench_machine, bench_map):
    with pytest.raises(ValueError, match="omega_max"):
        solve_point(1.0, bench_machine.omega_max * 1.5, bench_machine, bench_map)


def test_solve_point_infeasible_carries_estimate(bench_machine, bench_map):
    with pytest.raises(InfeasibleRequestError) as err:
        solve_point(40.0, 300.0, bench_machine, bench_map)
    assert err.value.max_torque_estimate > 0.0


def test_torque_sign_mirror(bench_machine, bench_map):
    for (t, w) in [(1.4, 700.0), (2.6, 300.0), (0.8, 2500.0)]:
        pos = solve_point(t, w, bench_machine, bench_map)
        neg = solve_point(-t, w, bench_machine, bench_map)
        assert neg.loss == pytest.approx(pos.loss, rel=1e-9)
        # candidate recovery runs through mirrored arithmetic, so currents
        # agree to root-polish precision rather than bitwise
        assert neg.i[0] == pytest.approx(pos.i[0], abs=1e-5)
        assert neg.i[1] == pytest.approx(pos.i[1], abs=1e-5)
        assert neg.i[2] == pytest.approx(-pos.i[2], abs=1e-5)


def test_dispatcher_dominates_infeasible_candidates(bench_machine, bench_map):
    sol = solve_point(1.2, 900.0, bench_machine, bench_map)
    region = bench_map.regions[sol.region_id]
    q = make_qcqp(region, bench_machine, 900.0, 1.2 / bench_machine.p)
    feasible = [c for c in candidates_in_region(q, region)
                if c.feasible and region.contains(c.i, tol=1e-9)]
    assert all(sol.loss <= c.loss + 1e-9 * (1 + abs(c.loss)) for c in feasible)


def test_kkt_stationarity_of_candidates(bench_machine, bench_map):
    checked = 0
    for (t, w) in [(1.0, 400.0), (2.0, 800.0), (0.5, 1500.0), (3.0, 200.0),
                   (1.4, 1000.0), (0.8, 2200.0), (4.6, 300.0), (2.5, 1200.0)]:
        try:
            sol = solve_point(t, w, bench_machine, bench_map)
        except InfeasibleRequestError:
            continue
        region = bench_map.regions[sol.region_id]
        q = make_qcqp(region, bench_machine, w, t / bench_machine.p)
        for cand in candidates_in_region(q, region):
            if not cand.feasible or cand.certificate != Certificate.KKT_ENUMERATION:
                continue
            if cand.regime in (RegimeTag.FORCEFUL,):
                continue  # three-equality corner: stationarity is vacuous
            res = kkt_residual(cand, q)
            bound = 1e-6 * (np.linalg.norm(q.r_eff)
                            + 2.0 * np.linalg.norm(q.R_eff) * np.linalg.norm(cand.i))
            assert res <= max(bound, 1e-12)
            checked += 1
    assert checked > 5


def test_loss_continuity_across_regime_boundary(bench_machine, bench_map):
    # fixed torque, 1 rad/s steps across the cruise -> voltage boundary
    t_shaft = 1.2
    lo, hi = 1100.0, 2400.0
    v_band = None
    losses = []
    hint = None
    cache = {}
    speeds = np.arange(lo, hi, 10.0)
    for w in speeds:
        sol = solve_point(t_shaft, float(w), bench_machine, bench_map,
                          hint=hint, cache=None)
        hint = sol.region_id
        v_bar = bench_machine.v_max / w
        losses.append(sol.loss)
        if v_band is None and sol.voltage_margin <= 0.05 * v_bar:
            v_band = w
    assert v_band is not None, "sweep never reached the voltage regime"
    fine = np.arange(v_band - 15.0, v_band + 15.0, 1.0)
    prev = None
    for w in fine:
        sol = solve_point(t_shaft, float(w), bench_machine, bench_map)
        if prev is not None:
            assert abs(sol.loss - prev) <= 0.005 * (1.0 + abs(prev))
        prev = sol.loss
