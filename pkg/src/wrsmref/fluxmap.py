"""Piecewise-affine flux map over the current space.

Builds a simplicial triangulation of flux samples, fits one affine map per
simplex, and answers point-location / flux-evaluation queries. A synthetic
smooth flux map (gradient of a strictly convex co-energy) stands in for
finite-element data; it is calibrated to the published inductance columns at
zero load and at a high-torque operating point.

Evaluation uses the raw interpolating fit per simplex, which makes the map
exactly continuous across shared facets. Each region additionally carries a
symmetrized inductance matrix (with the rotor-q coupling zeroed) for the
quadratic solvers, recording the norm discarded by that projection.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from ._validation import as_matrix, as_vector, check_symmetric
from .machine import AffineFluxRegion

CSV_HEADER = ["i_r", "i_d", "i_q", "lambda_r", "lambda_d", "lambda_q"]
CACHE_VERSION = 1

# Simplices whose vertex system is conditioned worse than this are unusable.
FIT_COND_LIMIT = 1e10

# Membership slack for locate(), relative to the halfspace offsets.
LOCATE_TOL = 1e-9


class TriangulationDegenerateError(ValueError):
    """Sample set does not span 3-D space."""


class OutsideHullError(ValueError):
    """Query point lies outside the convex hull of the samples."""

    def __init__(self, point, nearest_sample, distance):
        self.point = np.asarray(point, dtype=float)
        self.nearest_sample = np.asarray(nearest_sample, dtype=float)
        self.distance = float(distance)
        super().__init__(
            f"point {self.point.tolist()} outside the sampled hull "
            f"(nearest sample {self.nearest_sample.tolist()}, "
            f"distance {self.distance:.6g} A)"
        )


@dataclass(frozen=True, slots=True)
class FluxSample:
    """One (current, flux-linkage) pair."""

    i: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "i", as_vector(self.i, 3, "i"))
        object.__setattr__(self, "lam", as_vector(self.lam, 3, "lambda"))


# ---------------------------------------------------------------------------
# Synthetic ground-truth flux map
# ---------------------------------------------------------------------------

# Calibration anchors: local inductances (H) at zero load and at the
# high-torque current (66.9, -39.1, 173.5) A, plus that current itself.
_L0_ANCHOR = np.array(
    [
        [2.1e-3, 2.1e-3, 0.0],
        [2.1e-3, 2.4e-3, 0.0],
        [0.0, 0.0, 0.8e-3],
    ]
)
_LSAT_RD = np.array([[0.033e-3, 0.053e-3], [0.053e-3, 0.331e-3]])
_LSAT_Q = 0.257e-3
_LSAT_DQ = -0.067e-3
I_HIGH_TORQUE = np.array([66.9, -39.1, 173.5])


@dataclass(frozen=True, slots=True)
class SyntheticFluxParams:
    """Parameters of the synthetic co-energy flux map.

    The flux is the gradient of

        W(i) = 1/2 i^T L_floor i
             + sum_j k_j s_j^2 logcosh(m_j / s_j)          (rotor-d saturation)
             + k_q s_q^2 logcosh(i_q / s_q)                (q-axis saturation)
             - c [s_x tanh(i_d / s_x)] [tanh^2(i_q / s_y)] (dq cross-saturation)

    with m_j the rotor-d saturation directions and c the cross strength
    ``cross_coupling * L0[q, q] * s_y``. The co-energy is even in i_q, so the
    map mirrors exactly across the q axis; the Jacobian is symmetric with a
    zero (rotor, q) entry by construction and equals ``L0`` exactly at i = 0.
    """

    L0: np.ndarray
    L_floor: np.ndarray
    sat_scales: np.ndarray  # (s_1, s_2, s_q), amperes
    cross_coupling: float  # dimensionless
    cross_scale_d: float  # amperes
    cross_scale_q: float  # amperes

    # derived saturation directions/weights, filled in __post_init__
    _k: np.ndarray = field(default=None, repr=False)
    _v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        l0 = check_symmetric(as_matrix(self.L0, (3, 3), "L0"), "L0")
        lf = check_symmetric(as_matrix(self.L_floor, (3, 3), "L_floor"), "L_floor")
        if l0[0, 2] != 0.0 or lf[0, 2] != 0.0:
            raise ValueError("rotor-q couplings must be zero")
        s = as_vector(self.sat_scales, 3, "sat_scales")
        if np.any(s <= 0) or self.cross_scale_d <= 0 or self.cross_scale_q <= 0:
            raise ValueError("saturation scales must be positive")
        delta = l0[:2, :2] - lf[:2, :2]
        w, v = np.linalg.eigh(delta)
        if w.min() <= 0:
            raise ValueError("L0 - L_floor must be positive definite on the rotor-d block")
        if l0[2, 2] <= lf[2, 2]:
            raise ValueError("q-axis floor must sit below the unsaturated inductance")
        # descending: strongest saturation direction first
        order = np.argsort(w)[::-1]
        object.__setattr__(self, "L0", l0)
        object.__setattr__(self, "L_floor", lf)
        object.__setattr__(self, "sat_scales", s)
        object.__setattr__(self, "_k", w[order].copy())
        object.__setattr__(self, "_v", v[:, order].T.copy())  # rows are directions
        for arr in (self.L0, self.L_floor, self.sat_scales, self._k, self._v):
            arr.setflags(write=False)

    @property
    def k_q(self) -> float:
        return float(self.L0[2, 2] - self.L_floor[2, 2])

    @property
    def cross_c(self) -> float:
        return float(self.cross_coupling * self.L0[2, 2] * self.cross_scale_q)


def default_synthetic_params() -> SyntheticFluxParams:
    """Calibrated synthetic machine.

    The origin Jacobian equals the zero-load inductance column exactly; at
    the high-torque anchor current the Jacobian lands within a few percent
    of that column (the declared tolerance is 30%). The cross strength is
    chosen so the dq cross-inductance at the anchor is exact; the d-axis
    floor absorbs the cross term's diagonal contribution there.
    """
    s_x, s_y = 150.0, 260.0
    x = abs(I_HIGH_TORQUE[1]) / s_x
    y = I_HIGH_TORQUE[2] / s_y
    a_p = 1.0 / math.cosh(x) ** 2
    b_p = 2.0 * math.tanh(y) / (math.cosh(y) ** 2 * s_y)
    c = abs(_LSAT_DQ) / (a_p * b_p)
    floor = np.array(
        [
            [0.030e-3, 0.048e-3, 0.0],
            [0.048e-3, 0.353e-3, 0.0],
            [0.0, 0.0, 0.19e-3],
        ]
    )
    return SyntheticFluxParams(
        L0=_L0_ANCHOR,
        L_floor=floor,
        sat_scales=np.array([5.0, 25.0, 15.0]),
        cross_coupling=c / (_L0_ANCHOR[2, 2] * s_y),
        cross_scale_d=s_x,
        cross_scale_q=s_y,
    )


def synth_flux(params: SyntheticFluxParams, i) -> np.ndarray:
    """Flux linkage of the synthetic map: the gradient of its co-energy."""
    i = np.asarray(i, dtype=float)
    single = i.ndim == 1
    pts = np.atleast_2d(i)
    ir, idd, iq = pts[:, 0], pts[:, 1], pts[:, 2]
    lam = pts @ params.L_floor.T
    for j in range(2):
        vj = params._v[j]
        sj = params.sat_scales[j]
        m = vj[0] * ir + vj[1] * idd
        amp = params._k[j] * sj * np.tanh(m / sj)
        lam[:, 0] += amp * vj[0]
        lam[:, 1] += amp * vj[1]
    sq = params.sat_scales[2]
    lam[:, 2] += params.k_q * sq * np.tanh(iq / sq)
    c = params.cross_c
    s_x, s_y = params.cross_scale_d, params.cross_scale_q
    tx = np.tanh(idd / s_x)
    ty = np.tanh(iq / s_y)
    lam[:, 1] -= c * (1.0 - tx * tx) * ty * ty
    lam[:, 2] -= c * s_x * tx * 2.0 * ty * (1.0 - ty * ty) / s_y
    return lam[0] if single else lam


def synth_flux_jacobian(params: SyntheticFluxParams, i) -> np.ndarray:
    """Analytic Jacobian (local inductance matrix) of the synthetic map."""
    i = as_vector(i, 3, "i")
    jac = params.L_floor.copy()
    for j in range(2):
        vj = params._v[j]
        sj = params.sat_scales[j]
        m = vj[0] * i[0] + vj[1] * i[1]
        sat = params._k[j] / np.cosh(m / sj) ** 2
        jac[:2, :2] += sat * np.outer(vj, vj)
    jac[2, 2] += params.k_q / np.cosh(i[2] / params.sat_scales[2]) ** 2
    c = params.cross_c
    s_x, s_y = params.cross_scale_d, params.cross_scale_q
    tx = math.tanh(i[1] / s_x)
    ty = math.tanh(i[2] / s_y)
    sx2 = 1.0 - tx * tx  # sech^2
    sy2 = 1.0 - ty * ty
    jac[1, 1] += c * (2.0 / s_x) * sx2 * tx * ty * ty
    cross = -c * sx2 * 2.0 * ty * sy2 / s_y
    jac[1, 2] += cross
    jac[2, 1] += cross
    jac[2, 2] -= c * s_x * tx * (2.0 / s_y**2) * (sy2 * sy2 - 2.0 * sy2 * ty * ty)
    return jac


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_grid(ranges, counts, flux) -> list[FluxSample]:
    """Sample ``flux`` on a uniform tensor grid.

    ``ranges`` is three (min, max) pairs for (i_r, i_d, i_q); ``counts`` the
    number of points per axis (>= 2). Ordering is row-major with i_r slowest
    and i_q fastest. Deterministic.
    """
    counts = tuple(int(c) for c in counts)
    if len(ranges) != 3 or len(counts) != 3:
        raise ValueError("need three axis ranges and three counts")
    axes = []
    for (lo, hi), n in zip(ranges, counts):
        if n < 2:
            raise ValueError("counts must be >= 2 per axis")
        lo, hi = float(lo), float(hi)
        if not hi > lo:
            raise ValueError(f"degenerate range ({lo}, {hi})")
        axes.append(np.linspace(lo, hi, n))
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    lam = np.asarray([flux(p) for p in pts], dtype=float)
    return [FluxSample(i=p, lam=v) for p, v in zip(pts, lam)]


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

_KUHN_PERMS = list(itertools.permutations(range(3)))


def _detect_tensor_grid(pts: np.ndarray):
    """Return per-axis sorted values if ``pts`` is exactly a tensor grid."""
    axes = [np.unique(pts[:, k]) for k in range(3)]
    total = axes[0].size * axes[1].size * axes[2].size
    if total != len(pts) or any(a.size < 2 for a in axes):
        return None
    expect = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    if np.array_equal(pts[order], expect):
        return axes
    return None


def _kuhn_simplices(axes) -> np.ndarray:
    """Freudenthal/Kuhn split of a tensor grid: six tetrahedra per cell.

    This is the Delaunay triangulation of the grid under a deterministic
    symbolic perturbation; adjacent cells share facet diagonals consistently,
    so the complex is conforming and sliver-free. When the q axis is
    symmetric about zero, cells below the i_q = 0 plane use the q-reflected
    orientation, making the whole complex mirror across that plane (shared
    faces are split by the other two axes only, so conformity survives);
    the q-mirror solution property relies on this.
    """
    n = [a.size for a in axes]
    q_vals = axes[2]
    q_symmetric = bool(np.allclose(q_vals + q_vals[::-1], 0.0,
                                   atol=1e-12 * (1.0 + np.abs(q_vals).max())))

    def vid(a, b, c):
        return (a * n[1] + b) * n[2] + c

    simplices = []
    for a in range(n[0] - 1):
        for b in range(n[1] - 1):
            for c in range(n[2] - 1):
                reflect_q = q_symmetric and (q_vals[c] + q_vals[c + 1] < 0.0)
                base = np.array([a, b, c])
                for perm in _KUHN_PERMS:
                    path = [base.copy()]
                    cur = base.copy()
                    for axis in perm:
                        cur = cur.copy()
                        cur[axis] += 1
                        path.append(cur)
                    ids = []
                    for v in path:
                        qc = (c + 1 - (v[2] - c)) if reflect_q else v[2]
                        ids.append(vid(v[0], v[1], qc))
                    simplices.append(ids)
    return np.asarray(simplices, dtype=np.int32)


def _facet_neighbors(simplices: np.ndarray) -> np.ndarray:
    """neighbors[j, k] = simplex across the facet opposite vertex k, or -1."""
    owners: dict[tuple, list] = {}
    for j, simp in enumerate(simplices):
        for k in range(4):
            facet = tuple(sorted(np.delete(simp, k)))
            owners.setdefault(facet, []).append((j, k))
    neighbors = -np.ones(simplices.shape, dtype=np.int32)
    for members in owners.values():
        if len(members) == 2:
            (j1, k1), (j2, k2) = members
            neighbors[j1, k1] = j2
            neighbors[j2, k2] = j1
    return neighbors


def _simplex_halfspaces(verts: np.ndarray):
    """Outward halfspaces (A, b) of one tetrahedron, rows unit-normalized."""
    a = np.zeros((4, 3))
    b = np.zeros(4)
    for k in range(4):
        facet = np.delete(verts, k, axis=0)
        normal = np.cross(facet[1] - facet[0], facet[2] - facet[0])
        nrm = np.linalg.norm(normal)
        if nrm == 0.0:
            raise TriangulationDegenerateError("flat facet in simplex")
        normal = normal / nrm
        offset = normal @ facet[0]
        if normal @ verts[k] > offset:  # orient away from the simplex
            normal, offset = -normal, -offset
        a[k] = normal
        b[k] = offset
    return a, b


@dataclass(frozen=True, slots=True)
class PwaFluxMap:
    """Continuous piecewise-affine flux map over a simplicial complex.

    ``regions`` carry the solver-facing symmetrized inductances; the raw
    interpolating fits (``raw_L``, ``raw_psi``) drive :meth:`evaluate` and are
    exactly continuous across facets.
    """

    vertices: np.ndarray  # (n, 3) sample currents
    values: np.ndarray  # (n, 3) sampled fluxes
    simplices: np.ndarray  # (m, 4) vertex indices
    neighbors: np.ndarray  # (m, 4) facet-adjacent simplices
    regions: tuple  # AffineFluxRegion per simplex
    raw_L: np.ndarray  # (m, 3, 3) interpolating inductances
    raw_psi: np.ndarray  # (m, 3) interpolating offsets
    usable: np.ndarray  # (m,) fit condition acceptable
    grid_axes: tuple | None = None
    # stacked halfspaces of all regions for vectorized membership scans
    stacked_A: np.ndarray | None = None
    stacked_b: np.ndarray | None = None

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def _membership_slack(self, region_id: int, i: np.ndarray) -> float:
        r = self.regions[region_id]
        return float((r.b - r.A @ i).min())

    def locate(self, i, hint: int | None = None) -> int | None:
        """Region containing ``i``; ``None`` when outside the hull.

        Walks facet neighbors from ``hint`` (or region 0), falling back to an
        exhaustive scan. Points on shared facets resolve to the lowest region
        id among the regions containing them.
        """
        i = as_vector(i, 3, "i")
        scale = 1.0 + float(np.abs(self.vertices).max())
        tol = LOCATE_TOL * scale
        found = self._walk(i, 0 if hint is None else int(hint), tol)
        if found is None:
            found = self._scan(i, tol)
            if found is None:
                return None
        # tie-break: collect every region containing i within tol (BFS over
        # neighbors), return the lowest id
        best = found
        seen = {found}
        stack = [found]
        while stack:
            j = stack.pop()
            for nb in self.neighbors[j]:
                if nb < 0 or nb in seen:
                    continue
                seen.add(int(nb))
                if self._membership_slack(int(nb), i) >= -tol:
                    best = min(best, int(nb))
                    stack.append(int(nb))
        return best

    def _walk(self, i, start: int, tol: float, max_steps: int = 512) -> int | None:
        j = min(max(start, 0), self.n_regions - 1)
        visited = set()
        for _ in range(max_steps):
            if j in visited:
                return None
            visited.add(j)
            r = self.regions[j]
            slack = r.b - r.A @ i
            kworst = int(np.argmin(slack))
            if slack[kworst] >= -tol:
                return j
            nb = int(self.neighbors[j, kworst])
            if nb < 0:
                return None
            j = nb
        return None

    def _scan(self, i, tol: float) -> int | None:
        if self.stacked_A is not None:
            slack = (self.stacked_b - self.stacked_A @ i).reshape(self.n_regions, 4)
            members = np.nonzero(slack.min(axis=1) >= -tol)[0]
            return int(members[0]) if members.size else None
        for j in range(self.n_regions):
            if self._membership_slack(j, i) >= -tol:
                return j
        return None

    def evaluate(self, i, hint: int | None = None) -> np.ndarray:
        """Raw-interpolant flux at ``i``; raises OutsideHullError off-hull."""
        i = as_vector(i, 3, "i")
        j = self.locate(i, hint=hint)
        if j is None:
            dist = np.linalg.norm(self.vertices - i, axis=1)
            k = int(np.argmin(dist))
            raise OutsideHullError(i, self.vertices[k], dist[k])
        return self.raw_L[j] @ i + self.raw_psi[j]

    def region_of(self, i, hint: int | None = None) -> AffineFluxRegion:
        j = self.locate(i, hint=hint)
        if j is None:
            dist = np.linalg.norm(self.vertices - i, axis=1)
            k = int(np.argmin(dist))
            raise OutsideHullError(i, self.vertices[k], dist[k])
        return self.regions[j]


def locate(pwa_map: PwaFluxMap, i, hint: int | None = None):
    """Functional alias for :meth:`PwaFluxMap.locate`."""
    return pwa_map.locate(i, hint=hint)


def evaluate_flux(pwa_map: PwaFluxMap, i, hint: int | None = None):
    """Functional alias for :meth:`PwaFluxMap.evaluate`."""
    return pwa_map.evaluate(i, hint=hint)


def build_pwa(samples) -> PwaFluxMap:
    """Triangulate sample currents and fit one affine flux map per simplex.

    Tensor-grid inputs get the deterministic Kuhn split (the symbolically
    perturbed Delaunay; regular grids are cospherical and would otherwise
    produce slivers); scattered inputs go through Qhull. Each simplex fit
    interpolates its four vertices, which is what makes the global map
    continuous; the solver-facing inductance is the symmetrized fit with the
    (rotor, q) entries zeroed and the discarded norm recorded.
    """
    samples = list(samples)
    if len(samples) < 5:
        raise TriangulationDegenerateError("need at least 5 samples")
    pts = np.asarray([s.i for s in samples], dtype=float)
    vals = np.asarray([s.lam for s in samples], dtype=float)
    if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9 * (1 + np.abs(pts).max())) < 3:
        raise TriangulationDegenerateError("triangulation degenerate: samples are coplanar")

    grid_axes = _detect_tensor_grid(pts)
    if grid_axes is not None:
        order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
        pts, vals = pts[order], vals[order]
        simplices = _kuhn_simplices(grid_axes)
    else:
        tri = Delaunay(pts)
        if len(tri.coplanar):
            raise TriangulationDegenerateError(
                f"{len(tri.coplanar)} samples could not be triangulated"
            )
        simplices = np.asarray(tri.simplices, dtype=np.int32)
    neighbors = _facet_neighbors(simplices)

    m = len(simplices)
    raw_l = np.zeros((m, 3, 3))
    raw_psi = np.zeros((m, 3))
    usable = np.ones(m, dtype=bool)
    regions = []
    for j, simp in enumerate(simplices):
        verts = pts[simp]
        lamv = vals[simp]
        system = np.hstack([verts, np.ones((4, 1))])
        cond = np.linalg.cond(system)
        if not np.isfinite(cond) or cond > FIT_COND_LIMIT:
            usable[j] = False
            sol = np.linalg.lstsq(system, lamv, rcond=None)[0]
        else:
            sol = np.linalg.solve(system, lamv)
        l_fit = sol[:3].T  # rows: d lambda_a / d i
        psi_fit = sol[3]
        raw_l[j] = l_fit
        raw_psi[j] = psi_fit
        l_sym = 0.5 * (l_fit + l_fit.T)
        l_sym[0, 2] = l_sym[2, 0] = 0.0
        discarded = float(np.linalg.norm(l_fit - l_sym))
        # refit the offset so the symmetrized map stays centered on the data
        psi_sym = (lamv - verts @ l_sym.T).mean(axis=0)
        a, b = _simplex_halfspaces(verts)
        regions.append(
            AffineFluxRegion(
                A=a,
                b=b,
                L=l_sym,
                psi=psi_sym,
                region_id=j,
                discarded_asym=discarded,
                vertices=verts,
            )
        )
    stacked_a = np.concatenate([r.A for r in regions], axis=0)
    stacked_b = np.concatenate([r.b for r in regions])
    for arr in (pts, vals, simplices, neighbors, raw_l, raw_psi, usable,
                stacked_a, stacked_b):
        arr.setflags(write=False)
    return PwaFluxMap(
        vertices=pts,
        values=vals,
        simplices=simplices,
        neighbors=neighbors,
        regions=tuple(regions),
        raw_L=raw_l,
        raw_psi=raw_psi,
        usable=usable,
        grid_axes=None if grid_axes is None else tuple(grid_axes),
        stacked_A=stacked_a,
        stacked_b=stacked_b,
    )


def build_default_map(counts=(7, 13, 13), i_r_max=80.0, i_s_max=86.0) -> PwaFluxMap:
    """Sample the calibrated synthetic machine and fit the benchmark map.

    The dq box reaches slightly past the benchmark stator circle so the
    stator-limited arc lies strictly inside the sampled hull.
    """
    params = default_synthetic_params()
    samples = sample_grid(
        [(0.0, i_r_max), (-i_s_max, i_s_max), (-i_s_max, i_s_max)],
        counts,
        lambda p: synth_flux(params, p),
    )
    return build_pwa(samples)


# ---------------------------------------------------------------------------
# Sample CSV and map cache files
# ---------------------------------------------------------------------------


def write_samples_csv(path, samples) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in samples:
            writer.writerow([f"{x:.17g}" for x in (*s.i, *s.lam)])


def read_samples_csv(path) -> list[FluxSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("no samples: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(f"bad header: expected {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 6:
                raise ValueError(f"line {lineno}: expected 6 fields, got {len(row)}")
            try:
                nums = [float(x) for x in row]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            samples.append(FluxSample(i=nums[:3], lam=nums[3:]))
    if not samples:
        raise ValueError("no samples")
    return samples


def save_map(path, pwa_map: PwaFluxMap) -> None:
    """Serialize a map cache (versioned, little-endian)."""
    np.savez(
        path,
        version=np.int64(CACHE_VERSION),
        vertices=pwa_map.vertices.astype("<f8"),
        values=pwa_map.values.astype("<f8"),
    )


def load_map(path) -> PwaFluxMap:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CACHE_VERSION:
            raise ValueError(f"unsupported map cache version {version}")
        pts = data["vertices"].astype(float)
        vals = data["values"].astype(float)
    return build_pwa([FluxSample(i=p, lam=v) for p, v in zip(pts, vals)])
