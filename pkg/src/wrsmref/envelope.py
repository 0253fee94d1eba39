"""Torque-speed envelope sweeps, oracle validation, and runtime benchmarks.

Produces flat CSV tables (versioned schema header, 17 significant digits so
numeric round-trips are lossless). Sweeps are speed-major and warm-start each
torque from its predecessor in the same speed column; columns are independent,
so parallel execution partitions by column and reassembles in index order,
which keeps the numeric content identical at any parallelism.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .machine import MachineParams, make_qcqp
from .fluxmap import PwaFluxMap
from .oracle import OracleSpec, brute_force, detect_active_set, penalty_solve
from .regimes import (InfeasibleRequestError, RegimeTag, classify_operating_point,
                      solve_point)

SCHEMA = "wrsmref-envelope-1"
COLUMNS = [
    "T_shaft", "omega_e", "i_r", "i_d", "i_q",
    "lambda_r", "lambda_d", "lambda_q",
    "loss_W", "regime", "certificate", "region_id", "solve_us", "status",
]


@dataclass(frozen=True, slots=True)
class SweepSpec:
    """Rectangular torque-speed sampling plan (shaft N*m, electrical rad/s)."""

    t_min: float
    t_max: float
    t_count: int
    w_min: float
    w_max: float
    w_count: int
    parallel: int = 1

    def __post_init__(self):
        if self.t_count < 2 or self.w_count < 2:
            raise ValueError("sweep counts must be >= 2")
        if self.parallel < 1:
            raise ValueError("parallelism must be >= 1")

    @property
    def torques(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.t_count)

    @property
    def speeds(self) -> np.ndarray:
        return np.linspace(self.w_min, self.w_max, self.w_count)


@dataclass(slots=True)
class EnvelopeTable:
    """Sweep results, one row per (speed, torque) pair in speed-major order."""

    rows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        k = COLUMNS.index(name)
        vals = [r[k] for r in self.rows]
        if name in ("regime", "certificate", "status"):
            return np.asarray(vals, dtype=object)
        return np.asarray(vals, dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"#schema={SCHEMA}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(COLUMNS)
            for row in self.rows:
                out = []
                for val in row:
                    if isinstance(val, float):
                        out.append(f"{val:.17g}")
                    else:
                        out.append(str(val))
                writer.writerow(out)

    @classmethod
    def from_csv(cls, path) -> "EnvelopeTable":
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline().strip()
            if first != f"#schema={SCHEMA}":
                raise ValueError(f"unsupported table schema: {first!r}")
            reader = csv.reader(fh)
            header = next(reader)
            if header != COLUMNS:
                raise ValueError("column mismatch in envelope table")
            for rec in reader:
                if not rec:
                    continue
                row = []
                for name, val in zip(COLUMNS, rec):
                    if name in ("regime", "certificate", "status"):
                        row.append(val)
                    elif name == "region_id":
                        row.append(float(val))
                    else:
                        row.append(float(val))
                rows.append(tuple(row))
        return cls(rows=rows)


def _solve_column(args):
    machine, flux_map, w, torques = args
    rows = []
    hint = None
    cache: dict = {}
    for t_shaft in torques:
        t0 = time.perf_counter()
        try:
            sol = solve_point(float(t_shaft), float(w), machine, flux_map,
                              hint=hint, cache=cache)
            hint = sol.region_id
            rows.append((
                float(t_shaft), float(w),
                float(sol.i[0]), float(sol.i[1]), float(sol.i[2]),
                float(sol.lam[0]), float(sol.lam[1]), float(sol.lam[2]),
                float(sol.loss), sol.regime.value, sol.certificate.value,
                float(sol.region_id), sol.solve_time_s * 1e6, "optimal",
            ))
        except InfeasibleRequestError:
            dt = time.perf_counter() - t0
            rows.append((
                float(t_shaft), float(w),
                math.nan, math.nan, math.nan, math.nan, math.nan, math.nan,
                math.nan, "", "", -1.0, dt * 1e6, "infeasible",
            ))
    return rows


def run_sweep(machine: MachineParams, flux_map: PwaFluxMap, spec: SweepSpec) -> EnvelopeTable:
    """Solve the whole grid; row order is speed-major regardless of workers."""
    jobs = [(machine, flux_map, w, spec.torques) for w in spec.speeds]
    if spec.parallel > 1:
        with ProcessPoolExecutor(max_workers=spec.parallel) as pool:
            results = list(pool.map(_solve_column, jobs))
    else:
        results = [_solve_column(job) for job in jobs]
    table = EnvelopeTable()
    for col_rows in results:
        table.rows.extend(col_rows)
    return table


_ACTIVE_TO_REGIME = {
    frozenset(): RegimeTag.CRUISE,
    frozenset({"C3"}): RegimeTag.LAUNCH,
    frozenset({"C4"}): RegimeTag.FAST,
    frozenset({"C3", "C4"}): RegimeTag.FORCEFUL,
}


def regime_from_active_set(active: set) -> RegimeTag:
    """Map binding constraints to the regime label (rotor clamps dominate)."""
    if "C1" in active:
        return RegimeTag.ROTOR_CLAMPED_LOWER
    if "C2" in active:
        return RegimeTag.ROTOR_CLAMPED_UPPER
    return _ACTIVE_TO_REGIME.get(frozenset(active), RegimeTag.CRUISE)


@dataclass(frozen=True, slots=True)
class ValidationRow:
    t_shaft: float
    omega_e: float
    dispatcher_loss: float
    oracle_loss: float
    rel_diff: float
    dispatcher_regime: str
    oracle_regime: str
    regimes_agree: bool
    boundary_exempt: bool
    status: str


def run_validate(
    machine: MachineParams,
    flux_map: PwaFluxMap,
    points,
    oracle_spec: OracleSpec = OracleSpec(),
) -> list[ValidationRow]:
    """Compare the dispatcher against the brute-force oracle point by point.

    The oracle searches the dispatcher's final region, so the comparison
    checks per-region optimality; ``rel_diff`` is signed with dispatcher
    excess positive. A point is boundary-exempt for regime agreement when the
    oracle optimum sits within ten activity tolerances of a constraint.
    """
    rows = []
    for t_shaft, omega_e in points:
        try:
            sol = solve_point(float(t_shaft), float(omega_e), machine, flux_map)
        except InfeasibleRequestError:
            rows.append(ValidationRow(t_shaft, omega_e, math.nan, math.nan, math.nan,
                                      "", "", True, True, "infeasible"))
            continue
        region = flux_map.regions[sol.region_id]
        res = brute_force(float(t_shaft), float(omega_e), machine, region, oracle_spec)
        if not res.feasible:
            rows.append(ValidationRow(t_shaft, omega_e, sol.loss, math.nan, math.nan,
                                      sol.regime.value, "", True, True,
                                      "oracle-infeasible"))
            continue
        q = make_qcqp(region, machine, float(omega_e),
                      float(t_shaft) / machine.p)
        oracle_regime = classify_operating_point(res.i, q)
        # classification stability under band rescaling decides exemption
        exempt = (classify_operating_point(res.i, q, band_scale=0.5)
                  != classify_operating_point(res.i, q, band_scale=2.0))
        rel = (sol.loss - res.loss) / (1.0 + abs(res.loss))
        rows.append(ValidationRow(
            float(t_shaft), float(omega_e), sol.loss, res.loss, rel,
            sol.regime.value, oracle_regime.value,
            sol.regime == oracle_regime, exempt, "ok",
        ))
    return rows


def write_validation_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#schema=wrsmref-validate-1\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["T_shaft", "omega_e", "dispatcher_loss", "oracle_loss",
                         "rel_diff", "dispatcher_regime", "oracle_regime",
                         "regimes_agree", "boundary_exempt", "status"])
        for r in rows:
            writer.writerow([
                f"{r.t_shaft:.17g}", f"{r.omega_e:.17g}",
                f"{r.dispatcher_loss:.17g}", f"{r.oracle_loss:.17g}",
                f"{r.rel_diff:.17g}", r.dispatcher_regime, r.oracle_regime,
                int(r.regimes_agree), int(r.boundary_exempt), r.status,
            ])


@dataclass(frozen=True, slots=True)
class BenchResult:
    """Median/mean/max solve milliseconds per method on the benchmark set."""

    dispatcher_ms: tuple
    oracle_ms: tuple
    penalty_ms: tuple
    reduction_vs_oracle: float
    reduction_vs_penalty: float


def _stats(samples) -> tuple:
    arr = np.asarray(samples)
    return (float(np.median(arr)), float(arr.mean()), float(arr.max()))


def run_bench(
    machine: MachineParams,
    flux_map: PwaFluxMap,
    spec: SweepSpec,
    repeats: int = 1,
    oracle_spec: OracleSpec = OracleSpec(),
) -> BenchResult:
    """Time the dispatcher (sweep path) against the in-repo reference solvers.

    The penalty baseline exists solely to make relative-runtime claims
    testable without external solvers; it is labeled internal everywhere.
    """
    disp, orac, pen = [], [], []
    points = []
    for w in spec.speeds:
        hint = None
        cache: dict = {}
        for t_shaft in spec.torques:
            best = math.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                try:
                    sol = solve_point(float(t_shaft), float(w), machine, flux_map,
                                      hint=hint, cache=cache)
                except InfeasibleRequestError:
                    sol = None
                best = min(best, (time.perf_counter() - t0) * 1e3)
            disp.append(best)
            if sol is not None:
                hint = sol.region_id
                points.append((float(t_shaft), float(w), sol.region_id))
    for t_shaft, w, rid in points:
        region = flux_map.regions[rid]
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            brute_force(t_shaft, w, machine, region, oracle_spec)
            best = min(best, (time.perf_counter() - t0) * 1e3)
        orac.append(best)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            penalty_solve(t_shaft, w, machine, region)
            best = min(best, (time.perf_counter() - t0) * 1e3)
        pen.append(best)
    d = _stats(disp)
    o = _stats(orac) if orac else (math.nan,) * 3
    p = _stats(pen) if pen else (math.nan,) * 3
    return BenchResult(
        dispatcher_ms=d,
        oracle_ms=o,
        penalty_ms=p,
        reduction_vs_oracle=1.0 - d[0] / o[0] if o[0] > 0 else math.nan,
        reduction_vs_penalty=1.0 - d[0] / p[0] if p[0] > 0 else math.nan,
    )
