import csv
import subprocess
import sys

import numpy as np
import pytest

from wrsmref.cli import main
from wrsmref.envelope import EnvelopeTable, SweepSpec, run_sweep, run_validate
from wrsmref.fluxmap import save_map


@pytest.fixture(scope="module")
def tiny_sweep(bench_machine, bench_map):
    spec = SweepSpec(t_min=0.4, t_max=1.4, t_count=3,
                     w_min=200.0, w_max=1800.0, w_count=4)
    return run_sweep(bench_machine, bench_map, spec)


def test_sweep_row_count_and_order(tiny_sweep):
    assert len(tiny_sweep) == 12
    speeds = tiny_sweep.column("omega_e")
    torques = tiny_sweep.column("T_shaft")
    # speed-major: speed constant within each block of 3 torques
    assert np.array_equal(speeds.reshape(4, 3), np.repeat(speeds[::3], 3).reshape(4, 3))
    assert np.allclose(torques.reshape(4, 3), torques[:3])


def test_sweep_rows_feasible(tiny_sweep, bench_machine):
    status = tiny_sweep.column("status")
    assert (status == "optimal").all()
    t_res = tiny_sweep.column("loss_W")
    assert np.isfinite(t_res).all()


def test_sweep_csv_round_trip(tmp_path, tiny_sweep):
    path = tmp_path / "sweep.csv"
    tiny_sweep.to_csv(path)
    first = path.read_text().splitlines()[0]
    assert first.startswith("#schema=")
    back = EnvelopeTable.from_csv(path)
    assert len(back) == len(tiny_sweep)
    for name in ("T_shaft", "omega_e", "i_r", "i_d", "i_q", "loss_W", "solve_us"):
        a = tiny_sweep.column(name)
        b = back.column(name)
        assert np.array_equal(a, b), name  # lossless at 17 significant digits


def test_sweep_parallel_matches_serial(bench_machine, bench_map, tiny_sweep):
    spec = SweepSpec(t_min=0.4, t_max=1.4, t_count=3,
                     w_min=200.0, w_max=1800.0, w_count=4, parallel=2)
    par = run_sweep(bench_machine, bench_map, spec)
    assert len(par) == len(tiny_sweep)
    for name in ("T_shaft", "omega_e", "i_r", "i_d", "i_q", "loss_W"):
        assert np.array_equal(par.column(name), tiny_sweep.column(name)), name


def test_validate_rows(bench_machine, bench_map):
    points = [(1.0, 400.0), (2.0, 900.0), (0.6, 2000.0), (50.0, 400.0)]
    rows = run_validate(bench_machine, bench_map, points)
    assert len(rows) == 4
    ok = [r for r in rows if r.status == "ok"]
    assert len(ok) == 3
    for r in ok:
        assert r.rel_diff <= 1e-3
    infeasible = [r for r in rows if r.status == "infeasible"]
    assert len(infeasible) == 1  # both sides agree the request is infeasible


def test_cli_fit_synthetic_and_solve(tmp_path):
    out_map = tmp_path / "map.npz"
    samples = tmp_path / "samples.csv"
    rc = main(["fit", "--synthetic", "--grid", "3x7x7",
               "--samples", str(samples), "--out", str(out_map)])
    assert rc == 0
    assert out_map.exists() and samples.exists()
    rc = main(["solve", "--map", str(out_map), "--torque", "1.0", "--speed", "800"])
    assert rc == 0


def test_cli_solve_rpm_conversion(tmp_path, capsys):
    out_map = tmp_path / "map.npz"
    main(["fit", "--synthetic", "--grid", "3x7x7", "--out", str(out_map)])
    capsys.readouterr()
    # 2 pole pairs: 800 rad/s electrical = 3819.7 rpm mechanical
    rc = main(["solve", "--map", str(out_map), "--torque", "1.0",
               "--speed", "3819.7186", "--rpm"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "omega_e   : 800" in out


def test_cli_exit_codes(tmp_path, capsys):
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("nonsense = 1\n")
    rc = main(["solve", "--config", str(bad_cfg), "--torque", "1.0", "--speed", "500"])
    assert rc == 3
    err = capsys.readouterr().err
    assert err.startswith("E_INPUT")

    out_map = tmp_path / "map.npz"
    main(["fit", "--synthetic", "--grid", "3x7x7", "--out", str(out_map)])
    capsys.readouterr()
    rc = main(["solve", "--map", str(out_map), "--torque", "50.0", "--speed", "500"])
    assert rc == 2
    assert capsys.readouterr().err.startswith("E_INFEASIBLE")


def test_cli_fit_reports_from_csv(tmp_path, capsys, synth_params):
    from wrsmref.fluxmap import sample_grid, synth_flux, write_samples_csv

    samples = sample_grid([(0.0, 40.0), (-40.0, 40.0), (-40.0, 40.0)], (3, 5, 5),
                          lambda p: synth_flux(synth_params, p))
    path = tmp_path / "s.csv"
    write_samples_csv(path, samples)
    rc = main(["fit", "--samples", str(path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "regions:" in out and "facet discontinuity" in out


def test_cli_fit_error_on_missing_input(capsys):
    rc = main(["fit"])
    assert rc == 3
    assert capsys.readouterr().err.startswith("E_INPUT")


def test_cli_sweep_and_bench(tmp_path, capsys):
    out_map = tmp_path / "map.npz"
    main(["fit", "--synthetic", "--grid", "3x7x7", "--out", str(out_map)])
    capsys.readouterr()
    out_csv = tmp_path / "sweep.csv"
    rc = main(["sweep", "--map", str(out_map), "--grid", "3x4",
               "--torque-range", "0.5:2.0", "--speed-range", "200:2000",
               "--out", str(out_csv)])
    assert rc == 0
    assert out_csv.exists()
    table = EnvelopeTable.from_csv(out_csv)
    assert len(table) == 12
    rc = main(["bench", "--map", str(out_map), "--grid", "2x2",
               "--torque-range", "0.5:1.5", "--speed-range", "300:900",
               "--repeats", "1"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "dispatcher" in out and "penalty" in out


def test_cli_validate(tmp_path, capsys):
    out_map = tmp_path / "map.npz"
    main(["fit", "--synthetic", "--grid", "3x7x7", "--out", str(out_map)])
    capsys.readouterr()
    rc = main(["validate", "--map", str(out_map), "--points", "4",
               "--torque-range", "0.4:1.6", "--speed-range", "200:1500",
               "--seed", "1", "--out", str(tmp_path / "val.csv")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "validated" in out
