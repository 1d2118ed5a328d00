"""Stochastic, anatomy-aware scar and border-zone synthesis.

A spatially correlated noise field is thresholded with a transmural penalty:
a node becomes scar when its noise value exceeds ``tau_base + lam * (1 - tm)``
inside the scenario's AHA region, so larger ``lam`` confines scar to the
endocardium (subendocardial pattern) and small ``lam`` lets it span the wall
(transmural pattern). Viable nodes within ``bz_radius`` of the scar core are
then reclassified as border zone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from . import aha
from .errors import ValidationError

log = logging.getLogger(__name__)

NORMAL, SCAR, BZ = 0, 1, 2

# Catalog defaults. The noise threshold and transmural penalty are artifact
# parameters (tuned for nondegenerate scar sizes on the idealized geometry);
# only their ordinal effects are asserted anywhere. Subendocardial scenarios
# run a lower threshold because the endocardial-penalty term already caps
# their extent; rare seeds may still produce an empty (degenerate) scar,
# which is warned about and exported as-is.
LAMBDA_TRANSMURAL = 0.05
LAMBDA_SUBENDOCARDIAL = 0.6
DEFAULT_SIGMA_CM = 0.5
DEFAULT_BZ_RADIUS_CM = 0.2

_TAU_BASE = {
    "septal": 0.52,
    "apical": 0.52,
    "ext_anterior": 0.55,
    "lim_anterior": 0.50,
    "lateral_large": 0.52,
    "lateral_small": 0.45,
    "inferior": 0.50,
    "inferolateral": 0.55,
}
_TAU_SUBENDO_DROP = 0.07
_TAU_FLOOR = 0.45

LOCATIONS = tuple(_TAU_BASE)
TRANSMURALITIES = ("subendocardial", "transmural")


@dataclass(frozen=True)
class ScarParams:
    tau_base: float
    lam: float
    sigma: float = DEFAULT_SIGMA_CM
    bz_radius: float = DEFAULT_BZ_RADIUS_CM
    region: frozenset = frozenset()
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.bz_radius < 0:
            raise ValidationError("bz_radius must be nonnegative")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if not self.region:
            raise ValidationError("region must be a nonempty set of AHA segments")


@dataclass(frozen=True)
class Scenario:
    """One catalog entry; ``params`` is None for the healthy scenario."""

    name: str
    location: str | None = None
    transmurality: str | None = None
    params: ScarParams | None = None

    @property
    def is_healthy(self):
        return self.params is None

    def with_seed(self, seed):
        if self.is_healthy:
            return self
        return replace(self, params=replace(self.params, seed=int(seed)))


@dataclass
class TissueMap:
    """Per-node tissue class: 0 normal, 1 scar, 2 border zone."""

    labels: np.ndarray

    def counts(self):
        return {
            "normal": int((self.labels == NORMAL).sum()),
            "scar": int((self.labels == SCAR).sum()),
            "bz": int((self.labels == BZ).sum()),
        }


def healthy_tissue(n_nodes):
    return TissueMap(labels=np.zeros(n_nodes, dtype=np.uint8))


def correlated_noise_field(mesh, sigma, seed):
    """Gaussian-smoothed uniform noise on mesh nodes, rescaled to [0, 1].

    Per-node uniform(0,1) draws are kernel-averaged over Euclidean neighbors
    within 3*sigma (k-d tree search, weight exp(-d^2 / 2 sigma^2)) and then
    min-max rescaled. When the kernel support falls below the minimum edge
    length the output degenerates to the rescaled raw draws.
    """
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(0.0, 1.0, mesh.n_nodes)

    tree = cKDTree(mesh.nodes)
    smoothed = np.empty(mesh.n_nodes)
    inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma)
    chunk = 2048
    for start in range(0, mesh.n_nodes, chunk):
        pts = mesh.nodes[start:start + chunk]
        neighbor_lists = tree.query_ball_point(pts, 3.0 * sigma)
        for i, neigh in enumerate(neighbor_lists):
            idx = np.asarray(neigh, dtype=np.int64)
            d2 = ((mesh.nodes[idx] - pts[i]) ** 2).sum(axis=1)
            w = np.exp(-d2 * inv_two_sigma2)
            smoothed[start + i] = np.dot(w, draws[idx]) / w.sum()

    lo, hi = smoothed.min(), smoothed.max()
    if hi - lo < 1e-15:
        log.warning("noise field is constant after smoothing; returning 0.5")
        return np.full(mesh.n_nodes, 0.5)
    return (smoothed - lo) / (hi - lo)


def synthesize_scar(noise, coords, params, segment_ids=None):
    """Threshold the noise field into a scar core (no border zone yet).

    A node is scar iff its AHA segment is in ``params.region`` and
    ``noise > tau_base + lam * (1 - tm)``.
    """
    noise = np.asarray(noise)
    if noise.shape[0] != coords.tm.shape[0]:
        raise ValidationError("noise and coordinates cover different node sets")
    if segment_ids is None:
        segment_ids = aha.lv_segment_field(coords)
    in_region = np.isin(segment_ids, list(params.region))
    threshold = params.tau_base + params.lam * (1.0 - coords.tm)
    labels = np.zeros(noise.shape[0], dtype=np.uint8)
    labels[in_region & (noise > threshold)] = SCAR
    if not (labels == SCAR).any():
        log.warning(
            "degenerate scenario: empty scar for tau_base=%.3f lam=%.3f",
            params.tau_base, params.lam,
        )
    return TissueMap(labels=labels)


def grow_border_zone(mesh, tissue, bz_radius):
    """Reclassify viable nodes within ``bz_radius`` of any scar node as BZ."""
    labels = tissue.labels.copy()
    scar_idx = np.where(labels == SCAR)[0]
    if bz_radius <= 0 or scar_idx.size == 0:
        return TissueMap(labels=labels)
    tree = cKDTree(mesh.nodes[scar_idx])
    near = tree.query_ball_point(mesh.nodes, bz_radius)
    has_scar_neighbor = np.fromiter((len(n) > 0 for n in near), bool, mesh.n_nodes)
    labels[has_scar_neighbor & (labels == NORMAL)] = BZ
    return TissueMap(labels=labels)


def scenario_catalog(sigma=DEFAULT_SIGMA_CM, bz_radius=DEFAULT_BZ_RADIUS_CM,
                     path=None):
    """The 17-scenario catalog: 8 locations x 2 transmuralities + healthy.

    ``path`` loads a custom catalog CSV instead (columns: name, location,
    transmurality, tau_base, lambda, sigma, bz_radius, segments with '|'
    separators; a row named 'healthy' may omit the numbers).
    """
    if path:
        return load_catalog(path)
    scenarios = [Scenario(name="healthy")]
    for trans in TRANSMURALITIES:
        subendo = trans == "subendocardial"
        lam = LAMBDA_SUBENDOCARDIAL if subendo else LAMBDA_TRANSMURAL
        for loc in LOCATIONS:
            tau = _TAU_BASE[loc]
            if subendo:
                tau = max(_TAU_FLOOR, tau - _TAU_SUBENDO_DROP)
            scenarios.append(Scenario(
                name=f"{trans}_{loc}",
                location=loc,
                transmurality=trans,
                params=ScarParams(
                    tau_base=tau,
                    lam=lam,
                    sigma=sigma,
                    bz_radius=bz_radius,
                    region=aha.LOCATION_SEGMENTS[loc],
                ),
            ))
    return scenarios


def load_catalog(path):
    import csv

    scenarios = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            name = row["name"].strip()
            if name == "healthy" or not row.get("tau_base", "").strip():
                scenarios.append(Scenario(name=name))
                continue
            segments = frozenset(int(s) for s in row["segments"].split("|"))
            scenarios.append(Scenario(
                name=name,
                location=row.get("location") or None,
                transmurality=row.get("transmurality") or None,
                params=ScarParams(
                    tau_base=float(row["tau_base"]),
                    lam=float(row["lambda"]),
                    sigma=float(row.get("sigma") or DEFAULT_SIGMA_CM),
                    bz_radius=float(row.get("bz_radius") or DEFAULT_BZ_RADIUS_CM),
                    region=segments,
                ),
            ))
    if not scenarios:
        raise ValidationError(f"catalog {path} is empty")
    return scenarios


def scenario_by_name(name, sigma=DEFAULT_SIGMA_CM, bz_radius=DEFAULT_BZ_RADIUS_CM,
                     path=None):
    catalog = scenario_catalog(sigma=sigma, bz_radius=bz_radius, path=path)
    for sc in catalog:
        if sc.name == name:
            return sc
    known = ", ".join(s.name for s in catalog)
    raise ValidationError(f"unknown scenario {name!r}; known: {known}")


def generate_tissue(mesh, coords, scenario, seed=None, segment_ids=None):
    """Full scar + border-zone synthesis for one scenario."""
    if scenario.is_healthy:
        return healthy_tissue(mesh.n_nodes)
    params = scenario.params if seed is None else scenario.with_seed(seed).params
    noise = correlated_noise_field(mesh, params.sigma, params.seed)
    tissue = synthesize_scar(noise, coords, params, segment_ids=segment_ids)
    return grow_border_zone(mesh, tissue, params.bz_radius)
