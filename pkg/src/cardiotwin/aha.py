"""17-segment left-ventricular segmentation and the shared anatomical fixture.

Every convention that both the geometry annotation and the scar catalog rely
on lives here: apicobasal band edges, the rotational origin, sector layout,
and the location -> segment-set table. Editing this file is the supported way
to re-map scar locations.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

# Apicobasal band edges (ab: 0 at apex, 1 at base).
AB_APEX_CAP = 0.05   # ab < this -> segment 17
AB_APICAL = 0.30     # ab in [AB_APEX_CAP, this) -> apical ring (13-16)
AB_MID = 0.65        # ab in [AB_APICAL, this) -> mid ring (7-12); above -> basal (1-6)

# Rotational origin: rt = 0 at the anterior LV/RV junction, increasing
# anterior -> septal -> inferior -> lateral.
RT_ORIGIN_DEG = 75.0

# Basal/mid sextants walked from the anterior junction. Basal ids listed;
# the mid ring is the same order shifted by +6.
_SEXTANT_BASAL = (2, 3, 4, 5, 6, 1)   # anteroseptal, inferoseptal, inferior,
                                      # inferolateral, anterolateral, anterior
# Apical quadrants in the same rotational order.
_QUADRANT_APICAL = (14, 15, 16, 13)   # septal, inferior, lateral, anterior

# Scar-location catalog: named regions as AHA segment sets.
LOCATION_SEGMENTS = {
    "septal": frozenset({2, 3, 8, 9, 14}),
    "apical": frozenset({13, 14, 15, 16, 17}),
    "ext_anterior": frozenset({1, 2, 7, 8, 13, 14}),
    "lim_anterior": frozenset({1, 7, 13}),
    "lateral_large": frozenset({5, 6, 11, 12, 16}),
    "lateral_small": frozenset({12, 16}),
    "inferior": frozenset({4, 10, 15}),
    "inferolateral": frozenset({4, 5, 10, 11, 15, 16}),
}


def aha_segment(ab, rt, tv=0):
    """Map one LV node's (ab, rt) coordinates to its AHA segment id (1..17).

    Raises ValidationError for RV nodes (tv != 0): segments are defined on
    the left ventricle only.
    """
    if tv != 0:
        raise ValidationError("AHA segments are defined for LV nodes only (tv=LV)")
    if not (0.0 <= ab <= 1.0) or not (0.0 <= rt < 1.0 + 1e-12):
        raise ValidationError(f"coordinates out of range: ab={ab}, rt={rt}")
    return int(segment_ids(np.asarray([ab]), np.asarray([rt]))[0])


def segment_ids(ab, rt):
    """Vectorized AHA segmentation: arrays of ab/rt -> int array of 1..17."""
    ab = np.asarray(ab, dtype=float)
    rt = np.asarray(rt, dtype=float)
    seg = np.empty(ab.shape, dtype=np.int64)

    apex = ab < AB_APEX_CAP
    apical = (~apex) & (ab < AB_APICAL)
    mid = (~apex) & (~apical) & (ab < AB_MID)
    basal = (~apex) & (~apical) & (~mid)

    seg[apex] = 17

    sext = np.minimum((rt * 6).astype(np.int64), 5)
    basal_ids = np.asarray(_SEXTANT_BASAL, dtype=np.int64)
    seg[basal] = basal_ids[sext[basal]]
    seg[mid] = basal_ids[sext[mid]] + 6

    quad = np.minimum((rt * 4).astype(np.int64), 3)
    quad_ids = np.asarray(_QUADRANT_APICAL, dtype=np.int64)
    seg[apical] = quad_ids[quad[apical]]
    return seg


def lv_segment_field(coords):
    """Per-node segment ids for a whole mesh; RV nodes get 0.

    ``coords`` is a VentricularCoords; the return is an int array where LV
    nodes carry 1..17 and RV nodes carry 0.
    """
    seg = np.zeros(coords.ab.shape[0], dtype=np.int64)
    lv = coords.tv == 0
    seg[lv] = segment_ids(coords.ab[lv], coords.rt[lv])
    return seg
