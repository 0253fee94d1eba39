"""Scikit-learn style front end: fit a flux map, predict current references.

The estimator follows the sklearn parameter conventions (constructor stores
hyperparameters verbatim; ``get_params``/``set_params`` make it clonable and
grid-searchable; fitted state carries trailing underscores), without
importing sklearn itself.
"""

from __future__ import annotations

import inspect

import numpy as np

from ._validation import as_matrix
from .fluxmap import FluxSample, build_pwa, default_synthetic_params, sample_grid, synth_flux
from .machine import DEFAULT_V_MAX, MachineParams
from .regimes import solve_point


class CurrentReferenceGenerator:
    """Loss-optimal (rotor, d, q) current references for a wound-rotor machine.

    fit() builds the piecewise-affine flux map, either from supplied
    (currents, flux linkages) samples or from the built-in synthetic machine;
    predict() maps rows of (shaft torque, electrical speed) to optimal
    current vectors.
    """

    def __init__(
        self,
        r_rotor: float = 0.004,
        r_stator: float = 0.045,
        g_d: float = 0.0033,
        g_q: float = 0.0092,
        pole_pairs: int = 2,
        i_r_rated: float = 80.0,
        i_s_rated: float = 80.0,
        v_max: float = 30.0,
        omega_max: float = 5000.0,
        grid_counts: tuple = (7, 13, 13),
    ):
        self.r_rotor = r_rotor
        self.r_stator = r_stator
        self.g_d = g_d
        self.g_q = g_q
        self.pole_pairs = pole_pairs
        self.i_r_rated = i_r_rated
        self.i_s_rated = i_s_rated
        self.v_max = v_max
        self.omega_max = omega_max
        self.grid_counts = grid_counts

    # -- sklearn plumbing ---------------------------------------------------

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "CurrentReferenceGenerator":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    # -- estimator API --------------------------------------------------------

    def fit(self, X=None, y=None) -> "CurrentReferenceGenerator":
        """Build the flux map.

        ``X``: (n, 3) sample currents with ``y``: (n, 3) flux linkages; both
        omitted means sampling the built-in synthetic machine on the rated
        box with ``grid_counts``.
        """
        self.machine_ = MachineParams.from_diagonal(
            r_rotor=self.r_rotor,
            r_stator=self.r_stator,
            g_d=self.g_d,
            g_q=self.g_q,
            pole_pairs=self.pole_pairs,
            i_r_rated=self.i_r_rated,
            i_s_rated=self.i_s_rated,
            v_max=self.v_max,
            omega_max=self.omega_max,
        )
        if X is None:
            params = default_synthetic_params()
            half = 1.075 * self.i_s_rated  # box slightly past the stator circle
            samples = sample_grid(
                [(0.0, self.i_r_rated), (-half, half), (-half, half)],
                self.grid_counts,
                lambda p: synth_flux(params, p),
            )
        else:
            xs = np.asarray(X, dtype=float)
            ys = as_matrix(y, (len(xs), 3), "y") if y is not None else None
            if ys is None:
                raise ValueError("fit requires flux linkages y alongside sample currents X")
            samples = [FluxSample(i=a, lam=b) for a, b in zip(xs, ys)]
        self.map_ = build_pwa(samples)
        self.n_regions_ = self.map_.n_regions
        return self

    def _check_fitted(self):
        if not hasattr(self, "map_"):
            raise RuntimeError("estimator is not fitted; call fit() first")

    def predict(self, X) -> np.ndarray:
        """Optimal currents for rows of (shaft torque N*m, electrical rad/s).

        Infeasible requests yield NaN rows.
        """
        self._check_fitted()
        pts = np.asarray(X, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[1] != 2:
            raise ValueError("X must have two columns: (T_shaft, omega_e)")
        out = np.full((len(pts), 3), np.nan)
        for k, (t_shaft, omega_e) in enumerate(pts):
            try:
                sol = solve_point(float(t_shaft), float(omega_e), self.machine_, self.map_)
            except ValueError:
                continue
            out[k] = sol.i
        return out

    def solve(self, t_shaft: float, omega_e: float, hint: int | None = None):
        """Full :class:`~wrsmref.regimes.Solution` for one request."""
        self._check_fitted()
        return solve_point(float(t_shaft), float(omega_e), self.machine_, self.map_,
                           hint=hint)
