import numpy as np
import pytest

from wrsmref.fluxmap import I_HIGH_TORQUE
from wrsmref.machine import AffineFluxRegion, make_qcqp
from wrsmref.machine import evaluate_loss, evaluate_shaft_torque
from wrsmref.oracle import OracleSpec, brute_force, detect_active_set, penalty_solve
from wrsmref.regimes import torque_value


def test_oracle_spec_validation():
    with pytest.raises(ValueError):
        OracleSpec(n_id=4)
    with pytest.raises(ValueError):
        OracleSpec(shrink=1.5)


def test_oracle_trivial_zero(bench_machine, small_map):
    rid = small_map.locate(np.array([1.0, -1.0, 1.0]))
    region = small_map.regions[rid]
    res = brute_force(0.0, 0.0, bench_machine, region)
    assert res.feasible
    assert res.loss <= 1e-6


@pytest.fixture(scope="module")
def solved_region(bench_machine, small_map):
    from wrsmref.regimes import solve_point

    sol = solve_point(1.5, 500.0, bench_machine, small_map)
    return small_map.regions[sol.region_id]


def test_oracle_refinement_monotone(bench_machine, solved_region):
    coarse = brute_force(1.5, 500.0, bench_machine, solved_region,
                         OracleSpec(n_id=16, n_iq=16, rounds=0))
    fine = brute_force(1.5, 500.0, bench_machine, solved_region,
                       OracleSpec(n_id=16, n_iq=16, rounds=4))
    assert fine.feasible and coarse.feasible
    assert fine.loss <= coarse.loss + 1e-12


def test_oracle_torque_exactness(bench_machine, solved_region):
    res = brute_force(1.5, 500.0, bench_machine, solved_region)
    assert res.feasible
    q = make_qcqp(solved_region, bench_machine, 500.0, 1.5 / bench_machine.p)
    assert abs(torque_value(res.i, q) - q.T_p) <= 1e-10 * (1.0 + abs(q.T_p))


def test_oracle_determinism(bench_machine, solved_region):
    a = brute_force(1.5, 700.0, bench_machine, solved_region)
    b = brute_force(1.5, 700.0, bench_machine, solved_region)
    assert a.loss == b.loss
    assert (a.i is None and b.i is None) or np.array_equal(a.i, b.i)
    assert a.evaluations == b.evaluations


def test_oracle_dominates_high_torque_anchor(wide_machine, wide_map):
    # region where the published high-torque current is feasible; demanding
    # its own evaluated torque can only improve on its loss
    rid = wide_map.locate(I_HIGH_TORQUE)
    assert rid is not None
    region = wide_map.regions[rid]
    t_anchor = evaluate_shaft_torque(I_HIGH_TORQUE, region, wide_machine.p)
    res = brute_force(t_anchor, 400.0, wide_machine, region)
    assert res.feasible
    q = make_qcqp(region, wide_machine, 400.0, t_anchor / wide_machine.p)
    assert res.loss <= evaluate_loss(I_HIGH_TORQUE, q) + 1e-9


def test_oracle_infeasible_report(bench_machine, small_map):
    rid = small_map.locate(np.array([20.0, -20.0, 30.0]))
    region = small_map.regions[rid]
    res = brute_force(200.0, 500.0, bench_machine, region)
    assert not res.feasible
    assert res.i is None


def test_detect_active_set(bench_machine, small_map):
    rid = small_map.locate(np.array([20.0, -20.0, 30.0]))
    region = small_map.regions[rid]
    q = make_qcqp(region, bench_machine, 500.0, 0.5)
    assert detect_active_set(np.array([20.0, -20.0, 30.0]), q) == set()
    i_s = bench_machine.i_s_rated
    on_circle = np.array([20.0, -i_s / np.sqrt(2), i_s / np.sqrt(2)])
    assert "C3" in detect_active_set(on_circle, q)
    assert "C1" in detect_active_set(np.array([0.0, -20.0, 30.0]), q)
    assert "C2" in detect_active_set(np.array([bench_machine.i_r_rated, -20.0, 30.0]), q)


def test_penalty_baseline_smoke(bench_machine, small_map):
    rid = small_map.locate(np.array([20.0, -20.0, 30.0]))
    region = small_map.regions[rid]
    i, loss = penalty_solve(1.0, 600.0, bench_machine, region)
    assert np.all(np.isfinite(i)) and np.isfinite(loss)
    q = make_qcqp(region, bench_machine, 600.0, 0.5)
    assert abs(torque_value(i, q) - q.T_p) <= 1e-3 * (1.0 + abs(q.T_p))
