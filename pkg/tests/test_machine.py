import math

import numpy as np
import pytest

from wrsmref.machine import (
    AffineFluxRegion,
    MachineParams,
    VoltageVacuousError,
    build_effective_loss,
    build_torque_quadratic,
    build_voltage_quadratic,
    evaluate_loss,
    evaluate_shaft_torque,
    load_machine_config,
    make_qcqp,
    mirror_region,
)

MH = 1e-3

# zero-load and high-torque inductance columns used throughout (H / Wb)
L_NOLOAD = np.array([[2.1 * MH, 2.1 * MH, 0.0],
                     [2.1 * MH, 2.4 * MH, 0.0],
                     [0.0, 0.0, 0.8 * MH]])
L_HIGH = np.array([[0.033 * MH, 0.053 * MH, 0.0],
                   [0.053 * MH, 0.331 * MH, -0.067 * MH],
                   [0.0, -0.067 * MH, 0.257 * MH]])
PSI_HIGH = np.array([0.249, 0.229, 0.058])
I_HIGH = np.array([66.9, -39.1, 173.5])


def region_with(lmat, psi, region_id=0):
    # open box halfspaces wide enough for any test current
    a = np.vstack([np.eye(3), -np.eye(3)])
    b = np.full(6, 1e4)
    return AffineFluxRegion(A=a, b=b, L=lmat, psi=psi, region_id=region_id)


@pytest.fixture()
def noload_region():
    return region_with(L_NOLOAD, np.zeros(3))


@pytest.fixture()
def high_region():
    return region_with(L_HIGH, PSI_HIGH)


def test_machine_params_validation():
    with pytest.raises(ValueError):
        MachineParams(R=-np.eye(3), G=np.zeros((3, 3)), p=2)
    with pytest.raises(ValueError):
        MachineParams(R=np.eye(3), G=np.zeros((3, 3)), p=0)
    with pytest.raises(ValueError):
        MachineParams(R=np.eye(3), G=np.zeros((3, 3)), p=2, v_max=-1.0)


def test_config_round_trip(tmp_path):
    cfg = tmp_path / "machine.cfg"
    cfg.write_text(
        "# test machine\n"
        "r_rotor = 0.004\nr_stator = 0.045\ng_d = 0.0033\ng_q = 0.0092\n"
        "pole_pairs = 2\ni_r_rated = 80\ni_s_rated = 80\nv_max = 30\n"
        "omega_max = 5000\n"
    )
    m = load_machine_config(cfg)
    assert m.p == 2
    assert m.v_max == 30.0
    assert np.allclose(np.diag(m.R), [0.004, 0.045, 0.045])


def test_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("voltage = 3\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_machine_config(cfg)


def test_config_rejects_bad_number(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("v_max = lots\n")
    with pytest.raises(ValueError, match="bad number"):
        load_machine_config(cfg)


def test_effective_loss_zero_speed(noload_region):
    r = np.diag([0.004, 0.045, 0.045])
    g = np.diag([0.0, 0.0033, 0.0092])
    r_eff, r_vec = build_effective_loss(noload_region, g, r, 0.0)
    assert np.allclose(r_eff, r)
    assert np.allclose(r_vec, 0.0)


def test_effective_loss_zero_offset(noload_region):
    r = np.diag([0.004, 0.045, 0.045])
    g = np.diag([0.0, 0.0033, 0.0092])
    _, r_vec = build_effective_loss(noload_region, g, r, 777.0)
    assert np.allclose(r_vec, 0.0)


def test_effective_loss_against_independent_product(noload_region):
    r = np.diag([0.004, 0.045, 0.045])
    g = np.diag([0.0, 0.0033, 0.0092])
    omega = 500.0
    r_eff, _ = build_effective_loss(noload_region, g, r, omega)
    # independent dense recomputation with explicit loops
    lmat = noload_region.L
    want = np.array(r, dtype=float)
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for a in range(3):
                for b in range(3):
                    acc += lmat[a, i] * g[a, b] * lmat[b, j]
            want[i, j] += omega**2 * acc
    assert np.abs(r_eff - want).max() < 1e-12 * np.abs(want).max()
    assert np.linalg.eigvalsh(r_eff).min() >= -1e-12 * np.abs(r_eff).max()


def test_torque_quadratic_zero():
    region = region_with(np.zeros((3, 3)), np.zeros(3))
    q_tau, q_vec = build_torque_quadratic(region)
    assert np.all(q_tau == 0.0) and np.all(q_vec == 0.0)


def test_torque_quadratic_high_torque_column(high_region):
    q_tau, q_vec = build_torque_quadratic(high_region)
    assert q_tau[1, 1] == pytest.approx(+0.067 * MH)
    assert q_tau[2, 2] == pytest.approx(-0.067 * MH)
    assert q_tau[0, 2] == pytest.approx(0.0265 * MH)
    assert q_tau[2, 0] == pytest.approx(0.0265 * MH)
    assert q_tau[1, 2] == pytest.approx(0.037 * MH)
    assert np.allclose(q_vec, [0.0, -0.058, 0.229])


def test_torque_quadratic_trace_free_and_indefinite():
    rng = np.random.default_rng(17)
    for _ in range(50):
        lmat = rng.normal(scale=1e-3, size=(3, 3))
        lmat = 0.5 * (lmat + lmat.T)
        lmat[0, 2] = lmat[2, 0] = 0.0
        region = region_with(lmat, rng.normal(scale=0.1, size=3))
        q_tau, _ = build_torque_quadratic(region)
        assert abs(np.trace(q_tau)) <= 1e-12 * max(np.abs(q_tau).max(), 1e-300)
        if np.abs(q_tau).max() > 0:
            w = np.linalg.eigvalsh(q_tau)
            assert w.min() < 0 < w.max()


def test_voltage_quadratic_offset_free(noload_region):
    q_v, q_vec, c_v = build_voltage_quadratic(noload_region, 187.6, 500.0)
    assert np.allclose(q_vec, 0.0)
    assert c_v == pytest.approx(-((187.6 / 500.0) ** 2))


def test_voltage_quadratic_noload_column(noload_region):
    q_v, _, _ = build_voltage_quadratic(noload_region, 187.6, 500.0)
    assert q_v[0, 0] == pytest.approx(4.41e-6)
    assert q_v[0, 1] == pytest.approx(5.04e-6)
    assert q_v[1, 1] == pytest.approx(5.76e-6)
    assert q_v[2, 2] == pytest.approx(0.64e-6)
    assert q_v[0, 2] == 0.0 and q_v[1, 2] == 0.0


def test_voltage_quadratic_vacuous_at_zero_speed(noload_region):
    with pytest.raises(VoltageVacuousError):
        build_voltage_quadratic(noload_region, 187.6, 0.0)


def test_voltage_identity_random():
    rng = np.random.default_rng(23)
    for _ in range(25):
        lmat = rng.normal(scale=1e-3, size=(3, 3))
        lmat = 0.5 * (lmat + lmat.T)
        lmat[0, 2] = lmat[2, 0] = 0.0
        psi = rng.normal(scale=0.1, size=3)
        region = region_with(lmat, psi)
        v_max, omega = 187.6, 700.0
        q_v, q_vec, c_v = build_voltage_quadratic(region, v_max, omega)
        v_bar = v_max / omega
        assert np.linalg.eigvalsh(q_v).min() >= -1e-12 * max(np.abs(q_v).max(), 1e-300)
        for _ in range(100):
            i = rng.normal(scale=100.0, size=3)
            lam = region.flux(i)
            lhs = i @ q_v @ i + q_vec @ i + c_v + v_bar**2
            assert lhs == pytest.approx(lam[1] ** 2 + lam[2] ** 2, rel=1e-9, abs=1e-12)


def test_shaft_torque_zero_cases(noload_region):
    assert evaluate_shaft_torque(np.zeros(3), noload_region, 2) == 0.0
    # no quadrature flux interaction: i_d = i_q = 0, psi_q = 0
    region = region_with(L_NOLOAD, np.array([0.1, 0.2, 0.0]))
    assert evaluate_shaft_torque([55.0, 0.0, 0.0], region, 2) == 0.0


def test_shaft_torque_high_torque_anchor(high_region):
    t = evaluate_shaft_torque(I_HIGH, high_region, 2)
    assert t == pytest.approx(80.0, rel=0.02)


def test_loss_values(noload_region):
    machine = MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2)
    q = make_qcqp(noload_region, machine, 0.0, 1.0)
    assert evaluate_loss(np.zeros(3), q) == 0.0
    assert evaluate_loss([10.0, 0.0, 0.0], q) == pytest.approx(0.4)


def test_loss_re_expansion_identity(high_region):
    machine = MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2)
    omega = 850.0
    q = make_qcqp(high_region, machine, omega, 1.0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        i = rng.normal(scale=80.0, size=3)
        lam = high_region.flux(i)
        direct = (i @ machine.R @ i + omega**2 * (lam @ machine.G @ lam)
                  - omega**2 * (high_region.psi @ machine.G @ high_region.psi))
        assert evaluate_loss(i, q) == pytest.approx(direct, rel=1e-9)


def test_flux_consistency_identity(high_region):
    machine = MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2)
    q = make_qcqp(high_region, machine, 300.0, 1.0)
    rng = np.random.default_rng(7)
    i = rng.normal(scale=100.0, size=(1000, 3))
    lam = i @ high_region.L.T + high_region.psi
    want = lam[:, 1] * i[:, 2] - lam[:, 2] * i[:, 1]
    got = np.einsum("ni,ij,nj->n", i, q.Q_tau, i) + i @ q.q_tau
    assert np.abs(got - want).max() <= 1e-10 * max(1.0, np.abs(want).max())


def test_voltage_consistency_bidirectional(high_region):
    machine = MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2,
                                          v_max=30.0)
    omega = 700.0
    q = make_qcqp(high_region, machine, omega, 1.0)
    rng = np.random.default_rng(13)
    for _ in range(300):
        i = rng.normal(scale=60.0, size=3)
        lam = high_region.flux(i)
        quad_ok = i @ q.Q_v @ i + q.q_v @ i + q.c_v <= 0.0
        norm_ok = math.hypot(lam[1], lam[2]) <= q.v_bar
        assert quad_ok == norm_ok


def test_loss_positivity(high_region):
    machine = MachineParams.from_diagonal(0.004, 0.045, 0.0033, 0.0092, 2)
    omega = 1200.0
    q = make_qcqp(high_region, machine, omega, 1.0)
    const = omega**2 * (high_region.psi @ machine.G @ high_region.psi)
    rng = np.random.default_rng(19)
    for _ in range(300):
        i = rng.normal(scale=150.0, size=3)
        assert evaluate_loss(i, q) + const >= -1e-9 * max(1.0, const)


def test_mirror_region(high_region):
    mirrored = mirror_region(high_region)
    m = np.diag([1.0, 1.0, -1.0])
    assert np.allclose(mirrored.L, m @ high_region.L @ m)
    assert np.allclose(mirrored.psi, m @ high_region.psi)
    rng = np.random.default_rng(3)
    for _ in range(20):
        i = rng.normal(scale=50.0, size=3)
        assert mirrored.contains(m @ i) == high_region.contains(i)
