import numpy as np
import pytest

from wrsmref.fluxmap import build_default_map, build_pwa, default_synthetic_params, sample_grid, synth_flux
from wrsmref.machine import MachineParams, default_machine


@pytest.fixture(scope="session")
def bench_machine():
    return default_machine()


@pytest.fixture(scope="session")
def bench_map():
    return build_default_map()


@pytest.fixture(scope="session")
def synth_params():
    return default_synthetic_params()


@pytest.fixture(scope="session")
def small_map(synth_params):
    """Coarse map for cheap unit tests."""
    samples = sample_grid(
        [(0.0, 80.0), (-86.0, 86.0), (-86.0, 86.0)], (3, 7, 7),
        lambda p: synth_flux(synth_params, p),
    )
    return build_pwa(samples)


@pytest.fixture(scope="session")
def wide_machine():
    """Machine with the module-default ratings (Table-III point feasible)."""
    return MachineParams.from_diagonal(
        r_rotor=0.004, r_stator=0.045, g_d=0.0033, g_q=0.0092, pole_pairs=2,
        i_r_rated=80.0, i_s_rated=250.0, v_max=187.6, omega_max=6000.0,
    )


@pytest.fixture(scope="session")
def wide_map(synth_params):
    """Map covering the full module-default rated box."""
    samples = sample_grid(
        [(0.0, 80.0), (-250.0, 250.0), (-250.0, 250.0)], (5, 9, 9),
        lambda p: synth_flux(synth_params, p),
    )
    return build_pwa(samples)
