"""Simulation-ready ventricular geometry.

Builds idealized biventricular tetrahedral meshes (truncated-ellipsoid LV plus
a thin-walled RV crescent), annotates them with ventricular coordinates
(transmural / apicobasal / rotational / transventricular), rule-based fiber
triads, and body-surface electrode positions.

All operations are pure functions of their inputs and deterministic for a
fixed (params, seed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial import Delaunay

from .errors import MeshTopologyError, ParameterError, ValidationError

log = logging.getLogger(__name__)

# Lattice spacings sit below the edge target because tetrahedralization mixes
# axis-aligned and diagonal edges; both factors are calibrated so the mean
# edge length lands on edge_target.
_SPACING_FACTOR = 0.88
_SLAB_SPACING_FACTOR = 0.79
_JITTER_FACTOR = 0.12


# ---------------------------------------------------------------------------
# Mesh container
# ---------------------------------------------------------------------------

@dataclass
class Mesh:
    """Tetrahedral mesh with optional named per-node / per-element fields.

    nodes: (N, 3) float64 positions in cm.
    tets: (M, 4) int32 node indices, positively oriented.
    edge_target: requested edge resolution in cm.
    meta: generator parameters (flat str -> float), kept so the analytic
        coordinate fields can be recovered after file round-trips.
    """

    nodes: np.ndarray
    tets: np.ndarray
    edge_target: float
    meta: dict = field(default_factory=dict)
    node_fields: dict = field(default_factory=dict)
    elem_fields: dict = field(default_factory=dict)
    text_meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_tets(self):
        return self.tets.shape[0]

    def tet_volumes(self):
        p = self.nodes[self.tets]
        return np.einsum(
            "ij,ij->i",
            p[:, 3] - p[:, 0],
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
        ) / 6.0

    def edges(self):
        """Unique undirected edges as a (E, 2) sorted-index array."""
        t = self.tets
        pairs = np.vstack([
            t[:, [0, 1]], t[:, [0, 2]], t[:, [0, 3]],
            t[:, [1, 2]], t[:, [1, 3]], t[:, [2, 3]],
        ])
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)

    def mean_edge_length(self):
        e = self.edges()
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).mean())

    def boundary_faces(self):
        """Faces belonging to exactly one tet, as (F, 3) node indices."""
        t = self.tets
        faces = np.vstack([t[:, [1, 2, 3]], t[:, [0, 2, 3]], t[:, [0, 1, 3]], t[:, [0, 1, 2]]])
        key = np.sort(faces, axis=1)
        _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
        return faces[idx[counts == 1]]

    def validate(self):
        """Check structural invariants; raises ValidationError on failure."""
        if self.tets.min() < 0 or self.tets.max() >= self.n_nodes:
            raise ValidationError("tet index out of node range")
        vols = self.tet_volumes()
        if not (vols > 0).all():
            raise ValidationError(f"{int((vols <= 0).sum())} non-positive tet volumes")
        mean_edge = self.mean_edge_length()
        if not (0.7 * self.edge_target <= mean_edge <= 1.3 * self.edge_target):
            raise ValidationError(
                f"mean edge {mean_edge:.4f} cm outside +-30% of target {self.edge_target} cm"
            )
        return self


@dataclass
class VentricularCoords:
    """Per-node ventricular coordinates.

    tm: transmural, 1 at endocardium, 0 at epicardium.
    ab: apicobasal, 0 at the apex, 1 at the base.
    rt: rotational in [0, 1), origin at the anterior LV/RV junction.
    tv: transventricular flag, 0 = LV, 1 = RV.
    """

    tm: np.ndarray
    ab: np.ndarray
    rt: np.ndarray
    tv: np.ndarray

    def as_matrix(self):
        return np.column_stack([self.tm, self.ab, self.rt, self.tv.astype(float)])


@dataclass
class FiberField:
    """Per-element orthonormal fiber/sheet/normal triads ((M, 3) each)."""

    f: np.ndarray
    s: np.ndarray
    n: np.ndarray

    def check_orthonormal(self, tol=1e-6):
        for v in (self.f, self.s, self.n):
            if np.abs(np.linalg.norm(v, axis=1) - 1.0).max() > tol:
                return False
        if np.abs(np.einsum("ij,ij->i", self.f, self.s)).max() > tol:
            return False
        if np.abs(np.einsum("ij,ij->i", self.f, self.n)).max() > tol:
            return False
        if np.abs(np.einsum("ij,ij->i", self.s, self.n)).max() > tol:
            return False
        return True


ELECTRODE_NAMES = ("RA", "LA", "LL", "V1", "V2", "V3", "V4", "V5", "V6")


@dataclass
class ElectrodeSet:
    """Named electrode positions (cm) in the mesh coordinate frame."""

    positions: dict

    def __post_init__(self):
        missing = [n for n in ELECTRODE_NAMES if n not in self.positions]
        if missing:
            raise ValidationError(f"missing electrodes: {missing}")

    def as_array(self):
        return np.array([self.positions[n] for n in ELECTRODE_NAMES], dtype=float)


# ---------------------------------------------------------------------------
# Generator parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiventricleParams:
    """Truncated-ellipsoid biventricle: all lengths in cm.

    The LV wall spans the shell between the endo ellipsoid
    (lv_endo_a, lv_endo_a, lv_endo_c) and the epi ellipsoid obtained by adding
    lv_thickness to each semi-axis. The RV is a thin crescent between two
    ellipsoids centered at (rv_center_x, 0, 0), clipped to lie outside the LV
    epicardium. Both chambers are truncated by the base plane z = z_base; the
    long axis is z with the apex pointing to -z.
    """

    lv_endo_a: float = 2.0
    lv_endo_c: float = 3.2
    lv_thickness: float = 1.0
    rv_center_x: float = 1.6
    rv_endo_a: float = 2.8
    rv_endo_b: float = 2.4
    rv_endo_c: float = 3.4
    rv_thickness: float = 0.4
    z_base: float = 1.2

    @property
    def lv_epi_a(self):
        return self.lv_endo_a + self.lv_thickness

    @property
    def lv_epi_c(self):
        return self.lv_endo_c + self.lv_thickness

    @property
    def z_apex(self):
        return -self.lv_epi_c

    def validate(self, edge_target):
        radii = (self.lv_endo_a, self.lv_endo_c, self.rv_endo_a, self.rv_endo_b,
                 self.rv_endo_c)
        if any(r <= 0 for r in radii):
            raise ParameterError("all radii must be positive")
        if self.lv_thickness <= 0 or self.rv_thickness <= 0:
            raise ParameterError("wall thickness must be positive")
        if self.lv_thickness >= self.lv_endo_a:
            raise ParameterError("LV wall thickness must be below the inner radius")
        if self.lv_thickness <= 2.0 * edge_target:
            raise ParameterError(
                f"LV wall thickness {self.lv_thickness} must exceed 2 x edge target {edge_target}"
            )
        if not (-self.lv_endo_c < self.z_base < self.lv_endo_c):
            raise ParameterError("base plane must cut the LV cavity")

    def to_meta(self):
        meta = {f"biv_{k}": float(v) for k, v in asdict(self).items()}
        meta["kind"] = 1.0
        return meta

    @staticmethod
    def from_meta(meta):
        kwargs = {k[4:]: meta[k] for k in meta if k.startswith("biv_")}
        return BiventricleParams(**kwargs)


def _lv_level(p, params, s):
    a = params.lv_endo_a + s * params.lv_thickness
    c = params.lv_endo_c + s * params.lv_thickness
    return (p[:, 0] ** 2 + p[:, 1] ** 2) / a**2 + p[:, 2] ** 2 / c**2


def _rv_level(p, params, s):
    a = params.rv_endo_a + s * params.rv_thickness
    b = params.rv_endo_b + s * params.rv_thickness
    c = params.rv_endo_c + s * params.rv_thickness
    x = p[:, 0] - params.rv_center_x
    return x**2 / a**2 + p[:, 1] ** 2 / b**2 + p[:, 2] ** 2 / c**2


def _shell_fraction(p, level_fn, params, n_iter=60):
    """Invert the wall parameterization: s in [0,1] with level(p, s) = 1.

    level decreases in s, so plain bisection; endpoints are snapped so nodes
    sitting exactly on the endo/epi surfaces invert to exactly 0 / 1.
    """
    lo = np.zeros(p.shape[0])
    hi = np.ones(p.shape[0])
    f_lo = level_fn(p, params, lo) - 1.0
    f_hi = level_fn(p, params, hi) - 1.0
    s = np.full(p.shape[0], 0.5)
    on_endo = np.abs(f_lo) <= 1e-12
    on_epi = np.abs(f_hi) <= 1e-12
    for _ in range(n_iter):
        s = 0.5 * (lo + hi)
        f = level_fn(p, params, s) - 1.0
        below = f > 0  # still outside the s-shell: increase s
        lo = np.where(below, s, lo)
        hi = np.where(below, hi, s)
    s = 0.5 * (lo + hi)
    s[on_endo] = 0.0
    s[on_epi] = 1.0
    return np.clip(s, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Structured slab generator (test geometries, convergence studies)
# ---------------------------------------------------------------------------

# Kuhn subdivision of a unit cell: 6 tets sharing the (0,0,0)-(1,1,1) diagonal.
_KUHN_TETS = (
    ((0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)),
)


def generate_slab(size, edge_target):
    """Structured tetrahedral box mesh of ``size`` = (sx, sy, sz) cm.

    Node spacing is uniform and as close to edge_target as the box allows;
    every hex cell is split into six conforming tets.
    """
    size = tuple(float(v) for v in size)
    if min(size) <= 0 or edge_target <= 0:
        raise ParameterError("slab size and edge target must be positive")
    spacing = edge_target * _SLAB_SPACING_FACTOR
    counts = [max(1, round(s / spacing)) for s in size]
    axes = [np.linspace(0.0, s, n + 1) for s, n in zip(size, counts)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    nx, ny, nz = counts
    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    tets = np.empty((i.size * 6, 4), dtype=np.int64)
    for t, corners in enumerate(_KUHN_TETS):
        for v, (dx, dy, dz) in enumerate(corners):
            tets[t::6, v] = nid(i + dx, j + dy, k + dz)

    tets = _orient_tets(nodes, tets)
    meta = {"kind": 0.0, "slab_sx": size[0], "slab_sy": size[1], "slab_sz": size[2]}
    mesh = Mesh(nodes=nodes, tets=tets.astype(np.int32), edge_target=float(edge_target), meta=meta)
    return mesh


def _orient_tets(nodes, tets):
    p = nodes[tets]
    vols = np.einsum(
        "ij,ij->i", p[:, 3] - p[:, 0], np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    )
    flip = vols < 0
    tets = tets.copy()
    tets[flip, 0], tets[flip, 1] = tets[flip, 1].copy(), tets[flip, 0].copy()
    return tets


# ---------------------------------------------------------------------------
# Idealized biventricle generator
# ---------------------------------------------------------------------------

def _wall_lattice(params, which, spacing, rng):
    """Point lattice filling one ellipsoidal wall, surfaces kept exact.

    Returns (points, interior_mask): surface points (endo shell, epi shell,
    base ring rows) are never jittered so analytic coordinates stay exact on
    them.
    """
    if which == "lv":
        ctr = np.zeros(3)
        ax0 = np.array([params.lv_endo_a, params.lv_endo_a, params.lv_endo_c])
        thick = params.lv_thickness
    else:
        ctr = np.array([params.rv_center_x, 0.0, 0.0])
        ax0 = np.array([params.rv_endo_a, params.rv_endo_b, params.rv_endo_c])
        thick = params.rv_thickness

    n_s = max(2, int(round(thick / spacing)))
    pts = []
    interior = []
    for i_s in range(n_s + 1):
        s = i_s / n_s
        a, b, c = ax0 + s * thick
        surface_shell = i_s in (0, n_s)
        cos_base = np.clip((params.z_base - ctr[2]) / c, -1.0, 1.0)
        v_base = np.arccos(cos_base)
        arc = 0.5 * (0.5 * (a + b) + c) * (np.pi - v_base)
        n_v = max(3, int(round(arc / spacing)))
        for i_v in range(n_v + 1):
            v = v_base + (np.pi - v_base) * i_v / n_v
            base_row = i_v == 0
            apex_row = i_v == n_v
            if apex_row:
                pts.append(ctr + np.array([0.0, 0.0, -c]))
                interior.append(not surface_shell)
                continue
            ra, rb = a * np.sin(v), b * np.sin(v)
            circ = np.pi * (3 * (ra + rb) - np.sqrt((3 * ra + rb) * (ra + 3 * rb)))
            n_phi = max(4, int(round(circ / spacing)))
            stagger = 0.5 * (i_v % 2)
            phi = 2 * np.pi * (np.arange(n_phi) + stagger) / n_phi
            ring = np.column_stack([
                ctr[0] + ra * np.cos(phi),
                ctr[1] + rb * np.sin(phi),
                np.full(n_phi, ctr[2] + c * np.cos(v)),
            ])
            pts.append(ring)
            interior.extend([not (surface_shell or base_row)] * n_phi)
    pts = np.vstack([p if p.ndim == 2 else p[None, :] for p in pts])
    interior = np.asarray(interior, dtype=bool)

    jitter = rng.uniform(-1.0, 1.0, size=pts.shape) * (_JITTER_FACTOR * spacing)
    pts[interior] += jitter[interior]
    return pts


def _approx_signed_outside(p, params, level_fn, s):
    """Approximate distance outside the s-shell (positive = outside)."""
    lvl = level_fn(p, params, s)
    ctr = np.array([params.rv_center_x if level_fn is _rv_level else 0.0, 0.0, 0.0])
    r = np.linalg.norm(p - ctr, axis=1)
    return r * (1.0 - 1.0 / np.sqrt(np.maximum(lvl, 1e-12)))


def _inside_solid(p, params, tol=0.0):
    in_lv = (
        (_lv_level(p, params, 0.0) >= 1.0 - tol)
        & (_lv_level(p, params, 1.0) <= 1.0 + tol)
        & (p[:, 2] <= params.z_base + tol)
    )
    in_rv = (
        (_rv_level(p, params, 0.0) >= 1.0 - tol)
        & (_rv_level(p, params, 1.0) <= 1.0 + tol)
        & (_lv_level(p, params, 1.0) >= 1.0 - tol)
        & (p[:, 2] <= params.z_base + tol)
    )
    return in_lv | in_rv


def generate_idealized_biventricle(params=None, edge_target=0.15, seed=0):
    """Watertight truncated-ellipsoid LV + thin-walled RV tetrahedral mesh.

    Builds exact-surface shell lattices for both walls, joins them with a
    Delaunay tetrahedralization, and keeps the tets whose centroids lie in
    the wall volume. Fully deterministic for fixed (params, edge_target,
    seed); the tiny interior-point jitter (seeded) only removes Delaunay
    degeneracies.
    """
    params = params or BiventricleParams()
    params.validate(edge_target)
    rng = np.random.default_rng(seed)
    spacing = edge_target * _SPACING_FACTOR

    lv_pts = _wall_lattice(params, "lv", spacing, rng)
    rv_pts = _wall_lattice(params, "rv", spacing, rng)
    # Drop RV lattice points that fall inside (or hug) the LV epicardium: the
    # septum belongs to the LV wall.
    keep = _approx_signed_outside(rv_pts, params, _lv_level, 1.0) > 0.45 * spacing
    rv_pts = rv_pts[keep]

    points = np.vstack([lv_pts, rv_pts])
    tri = Delaunay(points)
    tets = tri.simplices.astype(np.int64)

    centroids = points[tets].mean(axis=1)
    keep = _inside_solid(centroids, params)
    tets = tets[keep]

    # Remove sliver tets (mostly flat ones whose four nodes sit on one curved
    # surface shell): they carry near-zero height and would blow up linear
    # field gradients downstream.
    p = points[tets]
    vols = np.abs(np.einsum("ij,ij->i", p[:, 3] - p[:, 0],
                            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]))) / 6.0
    areas = np.zeros(tets.shape[0])
    for (i, j, k) in ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)):
        a = 0.5 * np.linalg.norm(np.cross(p[:, j] - p[:, i], p[:, k] - p[:, i]), axis=1)
        areas = np.maximum(areas, a)
    min_height = 3.0 * vols / np.maximum(areas, 1e-30)
    tets = tets[min_height > 0.03 * spacing]

    used = np.unique(tets)
    remap = np.full(points.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    nodes = points[used]
    tets = remap[tets]
    tets = _orient_tets(nodes, tets)

    meta = params.to_meta()
    meta["seed"] = float(seed)
    mesh = Mesh(nodes=nodes, tets=tets.astype(np.int32), edge_target=float(edge_target), meta=meta)

    n_comp = _count_components(mesh)
    if n_comp != 1:
        log.warning("biventricle mesh has %d connected components", n_comp)
    return mesh


def _count_components(mesh):
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    e = mesh.edges()
    n = mesh.n_nodes
    adj = coo_matrix((np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(n, n))
    return connected_components(adj, directed=False)[0]


# ---------------------------------------------------------------------------
# Ventricular coordinates
# ---------------------------------------------------------------------------

def compute_ventricular_coordinates(mesh, method="analytic"):
    """Per-node (tm, ab, rt, tv) for an idealized biventricle mesh.

    ``analytic`` inverts the ellipsoid wall parameterization stored in the
    mesh metadata (exact at the endo/epi surfaces). ``laplace`` keeps the
    analytic boundary classification but solves a graph Laplace problem for
    tm between endo (1) and epi (0); intended for imported meshes where the
    walls deviate from the generator shells.
    """
    if mesh.meta.get("kind") != 1.0:
        raise MeshTopologyError(
            "mesh carries no biventricle parameterization; cannot classify "
            "endo/epi boundary nodes"
        )
    params = BiventricleParams.from_meta(mesh.meta)
    p = mesh.nodes

    tv = (_lv_level(p, params, 1.0) > 1.0 + 1e-9).astype(np.uint8)
    lv = tv == 0

    tm = np.empty(mesh.n_nodes)
    tm[lv] = 1.0 - _shell_fraction(p[lv], _lv_level, params)
    if (~lv).any():
        tm[~lv] = 1.0 - _shell_fraction(p[~lv], _rv_level, params)

    if method == "laplace":
        tm = _laplace_transmural(mesh, tm)
    elif method != "analytic":
        raise ValidationError(f"unknown coordinate method: {method}")

    ab = (p[:, 2] - params.z_apex) / (params.z_base - params.z_apex)
    ab = np.clip(ab, 0.0, 1.0)

    from .aha import RT_ORIGIN_DEG

    theta0 = np.deg2rad(RT_ORIGIN_DEG)
    rt = np.mod((theta0 - np.arctan2(p[:, 1], p[:, 0])) / (2 * np.pi), 1.0)

    return VentricularCoords(tm=tm, ab=ab, rt=rt, tv=tv)


def _laplace_transmural(mesh, tm_analytic):
    """Graph-Laplacian harmonic tm with Dirichlet data on endo/epi surfaces."""
    from scipy.sparse import coo_matrix, identity
    from scipy.sparse.linalg import spsolve

    bfaces = mesh.boundary_faces()
    bnodes = np.unique(bfaces)
    near_endo = tm_analytic[bnodes] > 1.0 - 1e-6
    near_epi = tm_analytic[bnodes] < 1e-6
    unclassified = ~(near_endo | near_epi)
    # Base-plane boundary nodes keep their analytic value as Dirichlet data
    # (physically: the truncation ring interpolates endo->epi).
    fixed = bnodes
    fixed_vals = np.where(near_endo, 1.0, np.where(near_epi, 0.0, tm_analytic[bnodes]))
    if unclassified.all():
        raise MeshTopologyError("no boundary node classified as endo or epi")

    n = mesh.n_nodes
    e = mesh.edges()
    w = np.ones(e.shape[0])
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    vals = np.concatenate([w, w])
    adj = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    lap = coo_matrix((deg, (np.arange(n), np.arange(n))), shape=(n, n)).tocsr() - adj

    is_fixed = np.zeros(n, dtype=bool)
    is_fixed[fixed] = True
    x = np.zeros(n)
    x[fixed] = fixed_vals
    free = ~is_fixed
    a = lap[free][:, free]
    b = -lap[free][:, is_fixed] @ x[is_fixed]
    x[free] = spsolve(a.tocsc() + 1e-12 * identity(free.sum()), b)
    return np.clip(x, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Rule-based fibers
# ---------------------------------------------------------------------------

def helix_angle(tm, alpha_endo_deg, alpha_epi_deg):
    """Fiber helix angle (radians): linear in tm from epi value to endo value."""
    tm = np.asarray(tm, dtype=float)
    return np.deg2rad(alpha_epi_deg * (1.0 - tm) + alpha_endo_deg * tm)


def element_gradients(mesh, node_values):
    """Element-wise linear-basis gradient of a per-node scalar field."""
    p = mesh.nodes[mesh.tets]
    d = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    dv = node_values[mesh.tets]
    rhs = np.stack([dv[:, 1] - dv[:, 0], dv[:, 2] - dv[:, 0], dv[:, 3] - dv[:, 0]], axis=1)
    return np.linalg.solve(d, rhs[:, :, None])[:, :, 0]


def assign_fibers(mesh, coords, alpha_endo_deg=60.0, alpha_epi_deg=-60.0):
    """Per-element orthonormal (fiber, sheet, normal) triads.

    The local frame is built from the element gradients of tm (transmural
    axis) and ab (longitudinal axis); the fiber is rotated within the wall
    tangent plane by the helix angle interpolated in tm. Elements with a
    degenerate frame (apex singularity) receive the average of their
    neighbors' triads and are counted in the log.
    """
    g_tm = element_gradients(mesh, coords.tm)
    g_ab = element_gradients(mesh, coords.ab)

    norm_tm = np.linalg.norm(g_tm, axis=1)
    ok = norm_tm > 1e-10
    e_t = np.zeros_like(g_tm)
    e_t[ok] = -g_tm[ok] / norm_tm[ok, None]  # outward (epi-ward)

    l_raw = g_ab - np.einsum("ij,ij->i", g_ab, e_t)[:, None] * e_t
    norm_l = np.linalg.norm(l_raw, axis=1)
    ok &= norm_l > 1e-8
    e_l = np.zeros_like(l_raw)
    e_l[ok] = l_raw[ok] / norm_l[ok, None]
    e_c = np.cross(e_l, e_t)

    tm_elem = coords.tm[mesh.tets].mean(axis=1)
    alpha = helix_angle(tm_elem, alpha_endo_deg, alpha_epi_deg)
    f = np.cos(alpha)[:, None] * e_c + np.sin(alpha)[:, None] * e_l
    s = e_t.copy()
    n = np.cross(f, s)

    bad = ~ok
    if bad.any():
        log.warning("fiber frame fallback on %d degenerate elements (apex)", int(bad.sum()))
        f, s, n = _fill_degenerate_triads(mesh, f, s, n, bad)

    return FiberField(f=f, s=s, n=n)


def _fill_degenerate_triads(mesh, f, s, n, bad):
    """Replace flagged triads by the orthonormalized mean of node-neighbors."""
    from collections import defaultdict

    node_to_elems = defaultdict(list)
    for ei, tet in enumerate(mesh.tets):
        for v in tet:
            node_to_elems[int(v)].append(ei)

    bad_idx = np.where(bad)[0]
    remaining = set(bad_idx.tolist())
    for _ in range(10):
        if not remaining:
            break
        fixed_now = []
        for ei in sorted(remaining):
            neigh = set()
            for v in mesh.tets[ei]:
                neigh.update(node_to_elems[int(v)])
            neigh = [j for j in neigh if j not in remaining and j != ei]
            if not neigh:
                continue
            basis = np.stack([
                np.mean(f[neigh], axis=0),
                np.mean(s[neigh], axis=0),
                np.mean(n[neigh], axis=0),
            ])
            u, _, vt = np.linalg.svd(basis)
            q = u @ vt
            if np.linalg.det(q) < 0:
                q[2] *= -1.0
            f[ei], s[ei], n[ei] = q[0], q[1], q[2]
            fixed_now.append(ei)
        if not fixed_now:
            break
        remaining.difference_update(fixed_now)
    if remaining:
        raise MeshTopologyError(f"{len(remaining)} elements have no valid fiber neighbors")
    return f, s, n


# ---------------------------------------------------------------------------
# Electrodes
# ---------------------------------------------------------------------------

# Torso-frame fixture: anterior = +x (RV side), patient-left = +y,
# superior = +z. Precordial arc angles measured from +x toward +y.
_PRECORDIAL_DEG = {"V1": -25.0, "V2": 0.0, "V3": 25.0, "V4": 50.0, "V5": 75.0, "V6": 100.0}
_LIMB_OFFSETS = {"RA": (0.0, -1.7, 1.6), "LA": (0.0, 1.7, 1.6), "LL": (0.0, 1.3, -2.8)}
_TORSO_RADIUS_FACTOR = 1.8


def place_electrodes(mesh):
    """Standard-layout electrode positions scaled to the mesh bounding box.

    The precordial arc sits anterior to the RV/septum at a torso-scale
    radius; limb electrodes are placed at shoulder/leg offsets. Deterministic
    for a fixed mesh.
    """
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    center = 0.5 * (lo + hi)
    radius = _TORSO_RADIUS_FACTOR * max(hi[0] - lo[0], hi[1] - lo[1]) * 0.5

    positions = {}
    for name, deg in _PRECORDIAL_DEG.items():
        th = np.deg2rad(deg)
        positions[name] = center + radius * np.array([np.cos(th), np.sin(th), 0.0])
    for name, off in _LIMB_OFFSETS.items():
        positions[name] = center + radius * np.asarray(off)
    return ElectrodeSet(positions=positions)
