"""Machine parameters and assembly of the per-region quadratic problem data.

Currents are ordered (i_r, i_d, i_q) throughout; SI units everywhere
(A, V, Wb, H, Ohm, rad/s, N*m). Torque requests at the API boundary are
shaft torque; the solvers work with torque per pole pair internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector, check_positive, check_psd, check_symmetric

# Peak phase voltage for a 325 V DC link under linear-modulation SVPWM.
# The prototype's modulation strategy is not public, so this is an explicit,
# overridable convention rather than a machine datum.
DEFAULT_V_MAX = 325.0 / math.sqrt(3.0)

# Rated currents chosen so the high-torque calibration current
# (66.9, -39.1, 173.5) A sits strictly inside the feasible box. Deliberate
# artifact defaults, not measured ratings.
DEFAULT_I_R_RATED = 80.0
DEFAULT_I_S_RATED = 250.0

# The synthetic benchmark machine: ratings and voltage chosen so every
# operating regime (stator-, voltage-, and rotor-limited) appears inside the
# synthetic flux map's torque-speed envelope. The map saturates near the
# calibration anchors, which caps its flux around 0.05 Wb; the benchmark
# voltage is scaled to put the base speed mid-envelope, mirroring how the
# published drive's voltage relates to its (much larger) flux levels.
BENCH_I_R_RATED = 80.0
BENCH_I_S_RATED = 80.0
BENCH_V_MAX = 30.0
BENCH_OMEGA_MAX = 5000.0
BENCH_GRID_COUNTS = (7, 13, 13)
BENCH_GRID_HALF_WIDTH = 86.0  # dq sampling box, slightly past the circle

CONFIG_KEYS = (
    "r_rotor",
    "r_stator",
    "g_d",
    "g_q",
    "pole_pairs",
    "i_r_rated",
    "i_s_rated",
    "v_max",
    "omega_max",
)


class VoltageVacuousError(ValueError):
    """Voltage constraint is vacuous at zero electrical speed."""


@dataclass(frozen=True, slots=True)
class MachineParams:
    """Electrical parameters and ratings of one machine.

    ``R`` (Ohm) and ``G`` (1/Ohm) are symmetric PSD; copper loss is
    ``i^T R i`` and core loss is ``omega^2 lambda^T G lambda``.
    """

    R: np.ndarray
    G: np.ndarray
    p: int
    i_r_rated: float = DEFAULT_I_R_RATED
    i_s_rated: float = DEFAULT_I_S_RATED
    v_max: float = DEFAULT_V_MAX
    omega_max: float = 6000.0

    def __post_init__(self):
        r = check_symmetric(as_matrix(self.R, (3, 3), "R"), "R")
        g = check_symmetric(as_matrix(self.G, (3, 3), "G"), "G")
        check_psd(r, "R")
        check_psd(g, "G")
        r.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "R", r)
        object.__setattr__(self, "G", g)
        if int(self.p) < 1 or int(self.p) != self.p:
            raise ValueError(f"pole pairs must be an integer >= 1, got {self.p}")
        object.__setattr__(self, "p", int(self.p))
        for name in ("i_r_rated", "i_s_rated", "v_max", "omega_max"):
            object.__setattr__(self, name, check_positive(getattr(self, name), name))

    @classmethod
    def from_diagonal(
        cls,
        r_rotor: float,
        r_stator: float,
        g_d: float,
        g_q: float,
        pole_pairs: int,
        **kwargs,
    ) -> "MachineParams":
        """Build from the flat config-file parameter set (diagonal R and G)."""
        return cls(
            R=np.diag([r_rotor, r_stator, r_stator]),
            G=np.diag([0.0, g_d, g_q]),
            p=pole_pairs,
            **kwargs,
        )


def default_machine() -> MachineParams:
    """The synthetic benchmark machine used by tests and CLI defaults."""
    return MachineParams.from_diagonal(
        r_rotor=0.004,
        r_stator=0.045,
        g_d=0.0033,
        g_q=0.0092,
        pole_pairs=2,
        i_r_rated=BENCH_I_R_RATED,
        i_s_rated=BENCH_I_S_RATED,
        v_max=BENCH_V_MAX,
        omega_max=BENCH_OMEGA_MAX,
    )


def load_machine_config(path) -> MachineParams:
    """Read a flat ``key = value`` config file (# comments allowed).

    Keys: r_rotor, r_stator, g_d, g_q, pole_pairs, i_r_rated, i_s_rated,
    v_max, omega_max. Missing keys fall back to the synthetic defaults.
    """
    values: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = float(val.strip())
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad number {val.strip()!r}") from exc
    defaults = dict(
        r_rotor=0.004,
        r_stator=0.045,
        g_d=0.0033,
        g_q=0.0092,
        pole_pairs=2,
        i_r_rated=BENCH_I_R_RATED,
        i_s_rated=BENCH_I_S_RATED,
        v_max=BENCH_V_MAX,
        omega_max=BENCH_OMEGA_MAX,
    )
    defaults.update(values)
    defaults["pole_pairs"] = int(defaults["pole_pairs"])
    return MachineParams.from_diagonal(**defaults)


@dataclass(frozen=True, slots=True)
class AffineFluxRegion:
    """One simplex of the piecewise-affine flux map.

    ``{i : A i <= b}`` with the local affine flux map ``lambda = L i + psi``.
    ``L`` is stored exactly symmetric with the (rotor, q) couplings zero;
    ``discarded_asym`` records the Frobenius norm removed to enforce that
    structure after fitting.
    """

    A: np.ndarray
    b: np.ndarray
    L: np.ndarray
    psi: np.ndarray
    region_id: int
    discarded_asym: float = 0.0
    vertices: np.ndarray | None = None
    # vertex extremes cached for solver pruning (filled when vertices given)
    i_r_min: float = float("nan")
    i_r_max: float = float("nan")
    i_dq_max: float = float("nan")
    lam_dq_max: float = float("nan")

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        if a.ndim != 2 or a.shape[1] != 3:
            raise ValueError("halfspace matrix must be m x 3")
        bvec = as_vector(self.b, a.shape[0], "b")
        lmat = check_symmetric(as_matrix(self.L, (3, 3), "L"), "L")
        if lmat[0, 2] != 0.0 or lmat[2, 0] != 0.0:
            raise ValueError("L must have zero (rotor, q) entries")
        psi = as_vector(self.psi, 3, "psi")
        for arr in (a, bvec, lmat, psi):
            arr.setflags(write=False)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "b", bvec)
        object.__setattr__(self, "L", lmat)
        object.__setattr__(self, "psi", psi)
        if self.vertices is not None:
            v = as_matrix(self.vertices, (4, 3), "vertices")
            v.setflags(write=False)
            object.__setattr__(self, "vertices", v)
            lam = v @ lmat.T + psi
            # |i_dq| and |lambda_dq| are convex, so simplex maxima sit at
            # vertices; i_r is linear, so both extremes do
            object.__setattr__(self, "i_r_min", float(v[:, 0].min()))
            object.__setattr__(self, "i_r_max", float(v[:, 0].max()))
            object.__setattr__(self, "i_dq_max", float(np.hypot(v[:, 1], v[:, 2]).max()))
            object.__setattr__(self, "lam_dq_max", float(np.hypot(lam[:, 1], lam[:, 2]).max()))

    def contains(self, i, tol: float = 1e-9) -> bool:
        i = np.asarray(i, dtype=float)
        slack = self.b - self.A @ i
        scale = 1.0 + np.abs(self.b).max(initial=0.0)
        return bool(np.all(slack >= -tol * scale))

    def flux(self, i) -> np.ndarray:
        return self.L @ np.asarray(i, dtype=float) + self.psi

    def chebyshev_radius(self) -> float:
        """Radius of the largest ball inside the halfspace set (tiny LP)."""
        from scipy.optimize import linprog

        norms = np.linalg.norm(self.A, axis=1)
        a_ub = np.hstack([self.A, norms[:, None]])
        res = linprog(
            c=[0.0, 0.0, 0.0, -1.0],
            A_ub=a_ub,
            b_ub=self.b,
            bounds=[(None, None)] * 3 + [(0, None)],
            method="highs",
        )
        if not res.success:
            return 0.0
        return float(res.x[3])


def mirror_region(region: AffineFluxRegion) -> AffineFluxRegion:
    """Reflect a region across the q axis (i_q -> -i_q, psi_q -> -psi_q).

    Used to map negative-torque requests onto the analyzed T_p >= 0 case.
    """
    m = np.diag([1.0, 1.0, -1.0])
    return AffineFluxRegion(
        A=region.A @ m,
        b=region.b,
        L=m @ region.L @ m,
        psi=m @ region.psi,
        region_id=region.region_id,
        discarded_asym=region.discarded_asym,
        vertices=None if region.vertices is None else region.vertices @ m,
    )


@dataclass(frozen=True, slots=True)
class QcqpData:
    """Quadratic problem data for one (region, speed, torque) request.

    Loss: ``i^T R_eff i + r_eff^T i`` (additive constant dropped).
    Torque equality: ``i^T Q_tau i + q_tau^T i = T_p``.
    Voltage: ``i^T Q_v i + q_v^T i + c_v <= 0`` with ``v_bar = v_max/|omega|``;
    vacuous at ``omega_e = 0`` (``v_bar = inf``, ``c_v = -inf``).

    The region's ``L``/``psi`` and the current ratings ride along so solvers
    can assemble fully-characterized candidates.
    """

    R_eff: np.ndarray
    r_eff: np.ndarray
    Q_tau: np.ndarray
    q_tau: np.ndarray
    Q_v: np.ndarray
    q_v: np.ndarray
    c_v: float
    T_p: float
    v_bar: float
    omega_e: float
    L: np.ndarray
    psi: np.ndarray
    i_r_rated: float
    i_s_rated: float
    region_id: int = -1
    # current magnitude scale of the region under study (multiplier brackets)
    i_scale: float = -1.0

    @property
    def voltage_vacuous(self) -> bool:
        return not np.isfinite(self.v_bar)

    def flux(self, i) -> np.ndarray:
        return self.L @ np.asarray(i, dtype=float) + self.psi


def build_effective_loss(region: AffineFluxRegion, G, R, omega_e: float):
    """Effective loss quadratic after substituting the local flux map.

    ``R_eff = R + omega^2 L^T G L`` and ``r_eff = 2 omega^2 L^T G psi``.
    The additive constant ``omega^2 psi^T G psi`` does not move the minimizer
    and is dropped.
    """
    lmat = region.L
    w2 = float(omega_e) ** 2
    r_eff_mat = np.asarray(R, dtype=float) + w2 * (lmat.T @ np.asarray(G, dtype=float) @ lmat)
    r_eff_mat = 0.5 * (r_eff_mat + r_eff_mat.T)
    r_eff_vec = 2.0 * w2 * (lmat.T @ (np.asarray(G, dtype=float) @ region.psi))
    return r_eff_mat, r_eff_vec


def build_torque_quadratic(region: AffineFluxRegion):
    """Torque-per-pole-pair quadratic: ``tau_p = i^T Q_tau i + q_tau^T i``.

    ``Q_tau`` is trace-free and indefinite whenever nonzero.
    """
    lmat = region.L
    l_rd = lmat[0, 1]
    l_delta = lmat[1, 1] - lmat[2, 2]
    l_dq = lmat[1, 2]
    q_tau_mat = np.array(
        [
            [0.0, 0.0, l_rd / 2.0],
            [0.0, -l_dq, l_delta / 2.0],
            [l_rd / 2.0, l_delta / 2.0, l_dq],
        ]
    )
    q_tau_vec = np.array([0.0, -region.psi[2], region.psi[1]])
    return q_tau_mat, q_tau_vec


def build_voltage_quadratic(region: AffineFluxRegion, v_max: float, omega_e: float):
    """Voltage-limit quadratic ``i^T Q_v i + q_v^T i + c_v <= 0``.

    ``Q_v = B^T B`` with ``B`` the dq rows of ``L``, hence PSD. Raises
    :class:`VoltageVacuousError` at ``omega_e = 0``; callers must then treat
    the constraint as slack.
    """
    if omega_e == 0.0:
        raise VoltageVacuousError("voltage constraint vacuous at omega_e = 0")
    b = region.L[1:3, :]  # rows giving (lambda_d, lambda_q) minus offsets
    psi_dq = region.psi[1:3]
    v_bar = float(v_max) / abs(float(omega_e))
    q_v_mat = b.T @ b
    q_v_mat = 0.5 * (q_v_mat + q_v_mat.T)
    q_v_vec = 2.0 * (b.T @ psi_dq)
    c_v = float(psi_dq @ psi_dq - v_bar**2)
    return q_v_mat, q_v_vec, c_v


def evaluate_shaft_torque(i, region: AffineFluxRegion, p: int) -> float:
    """Shaft torque ``p * (lambda_d i_q - lambda_q i_d)`` at a current."""
    i = as_vector(i, 3, "i")
    lam = region.flux(i)
    return float(p) * float(lam[1] * i[2] - lam[2] * i[1])


def evaluate_loss(i, q: QcqpData) -> float:
    """Electrical loss (W) excluding the constant term; the comparison
    objective used everywhere."""
    i = np.asarray(i, dtype=float)
    return float(i @ q.R_eff @ i + q.r_eff @ i)


def make_qcqp(
    region: AffineFluxRegion,
    machine: MachineParams,
    omega_e: float,
    t_per_pole_pair: float,
) -> QcqpData:
    """Assemble all quadratic forms for one (region, speed, torque) request."""
    r_eff, r_vec = build_effective_loss(region, machine.G, machine.R, omega_e)
    q_tau, q_tau_vec = build_torque_quadratic(region)
    if omega_e == 0.0:
        q_v = np.zeros((3, 3))
        q_v_vec = np.zeros(3)
        c_v = -np.inf
        v_bar = np.inf
    else:
        q_v, q_v_vec, c_v = build_voltage_quadratic(region, machine.v_max, omega_e)
        v_bar = machine.v_max / abs(float(omega_e))
    if region.vertices is not None:
        i_scale = max(float(np.abs(region.vertices).max()), 1.0)
    else:
        i_scale = max(machine.i_s_rated, machine.i_r_rated)
    return QcqpData(
        R_eff=r_eff,
        r_eff=r_vec,
        Q_tau=q_tau,
        q_tau=q_tau_vec,
        Q_v=q_v,
        q_v=q_v_vec,
        c_v=c_v,
        T_p=float(t_per_pole_pair),
        v_bar=v_bar,
        omega_e=float(omega_e),
        L=region.L,
        psi=region.psi,
        i_r_rated=machine.i_r_rated,
        i_s_rated=machine.i_s_rated,
        region_id=region.region_id,
        i_scale=i_scale,
    )
