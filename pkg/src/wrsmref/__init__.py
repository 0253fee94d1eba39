"""Globally optimal current references for wound-rotor synchronous machines.

Builds a continuous piecewise-affine flux map over the (rotor, d, q) current
space, poses the loss-minimal current reference problem as a quadratically
constrained program on each affine region, and solves it by enumerating the
active-constraint regimes in closed form or via a small semidefinite
relaxation, validated against a brute-force oracle.
"""

from .estimator import CurrentReferenceGenerator
from .fluxmap import (
    FluxSample,
    PwaFluxMap,
    SyntheticFluxParams,
    build_default_map,
    build_pwa,
    default_synthetic_params,
    sample_grid,
    synth_flux,
    synth_flux_jacobian,
)
from .machine import (
    AffineFluxRegion,
    MachineParams,
    QcqpData,
    build_effective_loss,
    build_torque_quadratic,
    build_voltage_quadratic,
    default_machine,
    evaluate_loss,
    evaluate_shaft_torque,
    load_machine_config,
    make_qcqp,
)
from .oracle import OracleSpec, brute_force, detect_active_set
from .regimes import (
    Candidate,
    Certificate,
    InfeasibleRequestError,
    RegimeTag,
    Solution,
    solve_cruise,
    solve_fast,
    solve_forceful,
    solve_launch,
    solve_point,
    solve_rotor_clamped,
)
from .envelope import EnvelopeTable, SweepSpec, run_bench, run_sweep, run_validate

__version__ = "0.1.0"

__all__ = [
    "AffineFluxRegion",
    "Candidate",
    "Certificate",
    "CurrentReferenceGenerator",
    "EnvelopeTable",
    "FluxSample",
    "InfeasibleRequestError",
    "MachineParams",
    "OracleSpec",
    "PwaFluxMap",
    "QcqpData",
    "RegimeTag",
    "Solution",
    "SweepSpec",
    "SyntheticFluxParams",
    "brute_force",
    "build_default_map",
    "build_effective_loss",
    "build_pwa",
    "build_torque_quadratic",
    "build_voltage_quadratic",
    "default_machine",
    "default_synthetic_params",
    "detect_active_set",
    "evaluate_loss",
    "evaluate_shaft_torque",
    "load_machine_config",
    "make_qcqp",
    "run_bench",
    "run_sweep",
    "run_validate",
    "sample_grid",
    "solve_cruise",
    "solve_fast",
    "solve_forceful",
    "solve_launch",
    "solve_point",
    "solve_rotor_clamped",
    "synth_flux",
    "synth_flux_jacobian",
]
