"""Command-line surface: fit, solve, sweep, validate, bench.

Exit codes: 0 ok, 2 infeasible request, 3 input error, 4 numerical failure.
Every error prints a single machine-parsable line ``E_<CODE>: message`` on
stderr.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import fluxmap as fm
from .envelope import (
    BenchResult,
    EnvelopeTable,
    SweepSpec,
    run_bench,
    run_sweep,
    run_validate,
    write_validation_csv,
)
from .fluxmap import (
    I_HIGH_TORQUE,
    OutsideHullError,
    TriangulationDegenerateError,
    build_pwa,
    default_synthetic_params,
    read_samples_csv,
    sample_grid,
    synth_flux,
    synth_flux_jacobian,
    write_samples_csv,
)
from .machine import MachineParams, default_machine, load_machine_config
from .oracle import OracleSpec
from .regimes import InfeasibleRequestError, solve_point

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


class _CliError(Exception):
    def __init__(self, code: int, prefix: str, message: str):
        self.code = code
        self.prefix = prefix
        super().__init__(message)


def _input_error(message: str) -> _CliError:
    return _CliError(EXIT_INPUT, "E_INPUT", message)


def _load_machine(args) -> MachineParams:
    if getattr(args, "config", None):
        try:
            return load_machine_config(args.config)
        except (OSError, ValueError) as exc:
            raise _input_error(f"config: {exc}") from exc
    return default_machine()


def _load_map(args, machine: MachineParams):
    path = getattr(args, "map", None)
    if path:
        try:
            return fm.load_map(path)
        except (OSError, ValueError) as exc:
            raise _input_error(f"map: {exc}") from exc
    return fm.build_default_map(
        i_r_max=machine.i_r_rated, i_s_max=machine.i_s_rated
    )


def _parse_counts(text: str, n: int, name: str):
    parts = text.split("x")
    if len(parts) != n:
        raise _input_error(f"{name}: expected {n} counts like 5x9x9, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise _input_error(f"{name}: {exc}") from exc


def _parse_range(text: str, name: str):
    parts = text.split(":")
    if len(parts) != 2:
        raise _input_error(f"{name}: expected lo:hi, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise _input_error(f"{name}: {exc}") from exc
    if not hi > lo:
        raise _input_error(f"{name}: need hi > lo, got {text!r}")
    return lo, hi


def _speed_to_electrical(value: float, rpm: bool, machine: MachineParams) -> float:
    if rpm:
        return machine.p * value * 2.0 * math.pi / 60.0
    return value


def _cmd_fit(args) -> int:
    machine = _load_machine(args)
    if args.synthetic:
        counts = _parse_counts(args.grid or "5x9x9", 3, "--grid")
        params = default_synthetic_params()
        samples = sample_grid(
            [(0.0, machine.i_r_rated),
             (-machine.i_s_rated, machine.i_s_rated),
             (-machine.i_s_rated, machine.i_s_rated)],
            counts,
            lambda p: synth_flux(params, p),
        )
        if args.noise > 0.0:
            rng = np.random.default_rng(args.seed)
            samples = [
                fm.FluxSample(i=s.i, lam=s.lam * (1.0 + args.noise * rng.standard_normal(3)))
                for s in samples
            ]
        if args.samples:
            write_samples_csv(args.samples, samples)
    elif args.samples:
        try:
            samples = read_samples_csv(args.samples)
        except (OSError, ValueError) as exc:
            raise _input_error(f"samples: {exc}") from exc
    else:
        raise _input_error("fit needs --samples CSV or --synthetic")
    try:
        pwa_map = build_pwa(samples)
    except TriangulationDegenerateError as exc:
        raise _input_error(str(exc)) from exc
    # facet continuity report over shared facets
    worst = 0.0
    rng = np.random.default_rng(0)
    for j in range(0, pwa_map.n_regions, max(1, pwa_map.n_regions // 200)):
        for k in range(4):
            nb = int(pwa_map.neighbors[j][k])
            if nb < 0 or nb < j:
                continue
            facet = np.delete(pwa_map.simplices[j], k)
            w = rng.dirichlet(np.ones(3))
            pt = w @ pwa_map.vertices[facet]
            left = pwa_map.raw_L[j] @ pt + pwa_map.raw_psi[j]
            right = pwa_map.raw_L[nb] @ pt + pwa_map.raw_psi[nb]
            worst = max(worst, float(np.abs(left - right).max() / (1.0 + np.abs(left).max())))
    discards = np.asarray([r.discarded_asym for r in pwa_map.regions])
    print(f"regions: {pwa_map.n_regions} ({int(pwa_map.usable.sum())} usable)")
    print(f"max facet discontinuity (relative): {worst:.3e}")
    print(f"discarded asymmetry |L - sym(L)|: max {discards.max():.3e}, "
          f"mean {discards.mean():.3e}")
    if args.synthetic and args.noise == 0.0:
        params = default_synthetic_params()
        ld0 = synth_flux_jacobian(params, np.zeros(3))[1, 1]
        ld80 = synth_flux_jacobian(params, I_HIGH_TORQUE)[1, 1]
        print(f"L_d saturation ratio (ground-truth map, zero load vs "
              f"high-torque anchor): {ld0 / ld80:.2f}")
    if args.out:
        fm.save_map(args.out, pwa_map)
        print(f"map cache written: {args.out}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    machine = _load_machine(args)
    pwa_map = _load_map(args, machine)
    omega_e = _speed_to_electrical(args.speed, args.rpm, machine)
    try:
        sol = solve_point(args.torque, omega_e, machine, pwa_map)
    except InfeasibleRequestError as exc:
        print(f"E_INFEASIBLE: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OutsideHullError as exc:
        raise _input_error(str(exc)) from exc
    print(f"T_shaft   : {sol.t_shaft:g} N*m")
    print(f"omega_e   : {sol.omega_e:g} rad/s")
    print(f"i (A)     : i_r={sol.i[0]:.4f} i_d={sol.i[1]:.4f} i_q={sol.i[2]:.4f}")
    print(f"lambda(Wb): r={sol.lam[0]:.6f} d={sol.lam[1]:.6f} q={sol.lam[2]:.6f}")
    print(f"loss      : {sol.loss:.6f} W")
    print(f"regime    : {sol.regime.value}")
    print(f"certificate: {sol.certificate.value}")
    print(f"region    : {sol.region_id} ({sol.iterations} region visits, "
          f"{sol.solve_time_s * 1e3:.2f} ms)")
    if args.out:
        table = EnvelopeTable(rows=[(
            sol.t_shaft, sol.omega_e, float(sol.i[0]), float(sol.i[1]), float(sol.i[2]),
            float(sol.lam[0]), float(sol.lam[1]), float(sol.lam[2]),
            sol.loss, sol.regime.value, sol.certificate.value,
            float(sol.region_id), sol.solve_time_s * 1e6, "optimal",
        )])
        table.to_csv(args.out)
    return EXIT_OK


def _sweep_spec(args, machine: MachineParams) -> SweepSpec:
    t_count, w_count = _parse_counts(args.grid or "20x30", 2, "--grid")
    if args.torque_range:
        t_lo, t_hi = _parse_range(args.torque_range, "--torque-range")
    else:
        t_lo, t_hi = 0.15, 4.95
    if args.speed_range:
        w_lo, w_hi = _parse_range(args.speed_range, "--speed-range")
    else:
        w_lo, w_hi = 50.0, machine.omega_max * 0.98
    w_lo = _speed_to_electrical(w_lo, args.rpm, machine)
    w_hi = _speed_to_electrical(w_hi, args.rpm, machine)
    if max(abs(w_lo), abs(w_hi)) > machine.omega_max:
        raise _input_error("speed range exceeds omega_max")
    return SweepSpec(t_min=t_lo, t_max=t_hi, t_count=t_count,
                     w_min=w_lo, w_max=w_hi, w_count=w_count,
                     parallel=args.parallel)


def _cmd_sweep(args) -> int:
    machine = _load_machine(args)
    pwa_map = _load_map(args, machine)
    spec = _sweep_spec(args, machine)
    table = run_sweep(machine, pwa_map, spec)
    if args.out:
        table.to_csv(args.out)
        print(f"{len(table)} rows written: {args.out}")
    status = table.column("status")
    regimes = table.column("regime")
    n_ok = int((status == "optimal").sum())
    print(f"solved {n_ok}/{len(table)} points; regimes: "
          f"{sorted(set(r for r in regimes if r))}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    machine = _load_machine(args)
    pwa_map = _load_map(args, machine)
    rng = np.random.default_rng(args.seed)
    t_lo, t_hi = (_parse_range(args.torque_range, "--torque-range")
                  if args.torque_range else (0.15, 4.5))
    w_lo, w_hi = (_parse_range(args.speed_range, "--speed-range")
                  if args.speed_range else (50.0, machine.omega_max * 0.98))
    points = np.column_stack([
        rng.uniform(t_lo, t_hi, args.points),
        rng.uniform(w_lo, w_hi, args.points),
    ])
    rows = run_validate(machine, pwa_map, points)
    if args.out:
        write_validation_csv(args.out, rows)
    ok = [r for r in rows if r.status == "ok"]
    if ok:
        worst = max(r.rel_diff for r in ok)
        scored = [r for r in ok if not r.boundary_exempt]
        agree = (sum(r.regimes_agree for r in scored) / len(scored)) if scored else 1.0
        print(f"{len(ok)} points validated; worst dispatcher excess "
              f"{worst * 100:.4f}%; regime agreement {agree * 100:.1f}% "
              f"({len(ok) - len(scored)} boundary-exempt)")
        if worst > 1e-3:
            print("E_NUMERIC: dispatcher exceeded the oracle by more than 0.1%",
                  file=sys.stderr)
            return EXIT_NUMERIC
    return EXIT_OK


def _cmd_bench(args) -> int:
    machine = _load_machine(args)
    pwa_map = _load_map(args, machine)
    spec = _sweep_spec(args, machine)
    result: BenchResult = run_bench(machine, pwa_map, spec, repeats=args.repeats)
    print("method      median[ms]    mean[ms]     max[ms]")
    for name, stats in (("dispatcher", result.dispatcher_ms),
                        ("oracle", result.oracle_ms),
                        ("penalty*", result.penalty_ms)):
        print(f"{name:<11s} {stats[0]:10.3f} {stats[1]:11.3f} {stats[2]:11.3f}")
    print("(*) internal baseline: generic quadratic-penalty descent")
    print(f"median reduction vs oracle : {result.reduction_vs_oracle * 100:.1f}%")
    print(f"median reduction vs penalty: {result.reduction_vs_penalty * 100:.1f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wrsmref",
        description="Optimal current references for wound-rotor synchronous machines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a piecewise-affine flux map")
    p_fit.add_argument("--config", help="machine config file")
    p_fit.add_argument("--samples", help="flux sample CSV (input, or output with --synthetic)")
    p_fit.add_argument("--synthetic", action="store_true",
                       help="sample the built-in synthetic machine")
    p_fit.add_argument("--grid", help="sample counts RxDxQ (default 5x9x9)")
    p_fit.add_argument("--noise", type=float, default=0.0,
                       help="relative flux noise for synthetic sampling")
    p_fit.add_argument("--seed", type=int, default=0,
                       help="seed for synthetic-data generation only")
    p_fit.add_argument("--out", help="map cache output (.npz)")

    p_solve = sub.add_parser("solve", help="solve one torque/speed request")
    p_solve.add_argument("--config", help="machine config file")
    p_solve.add_argument("--map", help="map cache file")
    p_solve.add_argument("--torque", type=float, required=True, help="shaft torque (N*m)")
    p_solve.add_argument("--speed", type=float, required=True,
                         help="speed (rad/s electrical, or rpm with --rpm)")
    p_solve.add_argument("--rpm", action="store_true",
                         help="interpret --speed as mechanical rpm")
    p_solve.add_argument("--out", help="also write the one-row CSV here")

    for name, helptext in (("sweep", "sweep the torque-speed envelope"),
                           ("bench", "compare runtimes against reference solvers")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="machine config file")
        p.add_argument("--map", help="map cache file")
        p.add_argument("--grid", help="counts TxS (default 20x30)")
        p.add_argument("--torque-range", help="shaft torque range lo:hi (N*m)")
        p.add_argument("--speed-range", help="speed range lo:hi")
        p.add_argument("--rpm", action="store_true",
                       help="interpret speeds as mechanical rpm")
        p.add_argument("--parallel", type=int, default=1, help="worker processes")
        p.add_argument("--out", help="output CSV")
        if name == "bench":
            p.add_argument("--repeats", type=int, default=1,
                           help="timing repeats per point (best kept)")

    p_val = sub.add_parser("validate", help="compare against the brute-force oracle")
    p_val.add_argument("--config", help="machine config file")
    p_val.add_argument("--map", help="map cache file")
    p_val.add_argument("--points", type=int, default=10, help="random points")
    p_val.add_argument("--torque-range", help="shaft torque range lo:hi (N*m)")
    p_val.add_argument("--speed-range", help="speed range lo:hi (rad/s)")
    p_val.add_argument("--seed", type=int, default=0, help="random point seed")
    p_val.add_argument("--out", help="output CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "fit": _cmd_fit,
        "solve": _cmd_solve,
        "sweep": _cmd_sweep,
        "validate": _cmd_validate,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except _CliError as exc:
        print(f"{exc.prefix}: {exc}", file=sys.stderr)
        return exc.code
    except InfeasibleRequestError as exc:
        print(f"E_INFEASIBLE: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"E_NUMERIC: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
