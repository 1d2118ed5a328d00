"""Pseudo-ECG forward model and 8-lead record assembly.

Electrode potentials are volume sums of the element voltage gradients against
the gradient of 1/r toward each electrode; limb and precordial leads are then
derived (Einthoven differences and Wilson-terminal-referenced chest leads),
resampled to a fixed length, and amplitude-normalized per record.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementError, ValidationError
from .geometry import ELECTRODE_NAMES

LEAD_NAMES = ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")


@dataclass
class EcgRecord:
    """Multi-lead time series; samples are (T, n_leads) float32."""

    leads: tuple
    samples: np.ndarray
    sample_period_ms: float
    metadata: dict = field(default_factory=dict)

    def lead(self, name):
        if name == "III":  # Einthoven identity: derived, not stored
            return self.lead("II") - self.lead("I")
        try:
            return self.samples[:, self.leads.index(name)]
        except ValueError:
            raise ValidationError(f"no lead named {name!r}") from None


def electrode_weights(mesh, electrodes, k=1.0):
    """Per-electrode nodal weight vectors: phi_e(t) = W[e] . u(t).

    Dipole-sum discretization: for each element, the contribution is
    -k * vol * grad(U) . grad(1/r) with grad(1/r) evaluated at the element
    centroid; linearity in the nodal voltages collapses the element sum into
    one weight per (electrode, node) pair, assembled in fixed element order
    so records are bit-reproducible.
    """
    pos = electrodes.as_array()  # (E, 3)
    p = mesh.nodes[mesh.tets]  # (M, 4, 3)
    centroids = p.mean(axis=1)
    d = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    vols = np.abs(np.linalg.det(d)) / 6.0

    # Shape-function gradients with an exactly-zero row sum.
    inv_d = np.linalg.inv(d)  # columns correspond to nodes 1..3 gradients
    grad_n = np.empty((mesh.n_tets, 4, 3))
    grad_n[:, 1:] = np.transpose(inv_d, (0, 2, 1))
    grad_n[:, 0] = -(grad_n[:, 1] + grad_n[:, 2] + grad_n[:, 3])

    rel = pos[:, None, :] - centroids[None, :, :]  # (E, M, 3)
    r = np.linalg.norm(rel, axis=2)
    mean_edge = mesh.mean_edge_length()
    if (r < 0.5 * mean_edge).any():
        raise PlacementError("electrode inside or touching an element (r -> 0)")
    g_inv_r = rel / r[:, :, None] ** 3  # grad of 1/r w.r.t. source position

    weights = np.zeros((pos.shape[0], mesh.n_nodes))
    for e in range(pos.shape[0]):
        contrib = -k * vols[:, None] * np.einsum("mja,ma->mj", grad_n, g_inv_r[e])
        np.add.at(weights[e], mesh.tets.ravel(), contrib.ravel())
    return weights


def electrode_potentials(mesh, traces, electrodes, k=1.0):
    """Time series of the pseudo-ECG potential at each electrode.

    Returns (n_electrodes, T) in electrode order RA, LA, LL, V1..V6.
    """
    w = electrode_weights(mesh, electrodes, k=k)
    return w @ traces.u.astype(np.float64)


def derive_leads(potentials, sample_period_ms, metadata=None):
    """Standard 8-lead set from the 9 electrode potentials.

    I = LA - RA, II = LL - RA, Vi = phi_Vi - mean(RA, LA, LL) (Wilson
    central terminal). Raw (un-normalized) record.
    """
    potentials = np.asarray(potentials)
    if potentials.shape[0] != len(ELECTRODE_NAMES):
        raise ValidationError(
            f"need {len(ELECTRODE_NAMES)} electrode series, got {potentials.shape[0]}"
        )
    by = {name: potentials[i] for i, name in enumerate(ELECTRODE_NAMES)}
    wct = (by["RA"] + by["LA"] + by["LL"]) / 3.0
    cols = [by["LA"] - by["RA"], by["LL"] - by["RA"]]
    cols += [by[f"V{i}"] - wct for i in range(1, 7)]
    samples = np.column_stack(cols).astype(np.float32)
    return EcgRecord(leads=LEAD_NAMES, samples=samples,
                     sample_period_ms=float(sample_period_ms),
                     metadata=dict(metadata or {}))


def normalize_and_resample(record, t_out=512):
    """Resample to exactly ``t_out`` samples, then scale by the global
    max-abs across all leads (one scalar per record).

    The per-record normalization stands in for cohort-level amplitude
    statistics; it preserves inter-lead morphology ratios. An all-zero
    record is returned unscaled and flagged in the metadata.
    """
    t_in = record.samples.shape[0]
    if t_in < 2:
        raise ValidationError("record too short to resample")
    old_t = np.arange(t_in) * record.sample_period_ms
    new_t = np.linspace(0.0, old_t[-1], t_out)
    resampled = np.column_stack([
        np.interp(new_t, old_t, record.samples[:, j].astype(np.float64))
        for j in range(record.samples.shape[1])
    ])
    scale = np.abs(resampled).max()
    meta = dict(record.metadata)
    meta["normalization"] = "per_record_global_max_abs"
    if scale == 0.0:
        meta["normalization"] = "skipped_zero_record"
    else:
        resampled = resampled / scale
    return EcgRecord(
        leads=record.leads,
        samples=resampled.astype(np.float32),
        sample_period_ms=float(new_t[1] - new_t[0]),
        metadata=meta,
    )


def simulate_ecg(mesh, traces, electrodes, t_out=512, metadata=None, k=1.0):
    """electrode potentials -> leads -> normalized fixed-length record."""
    pots = electrode_potentials(mesh, traces, electrodes, k=k)
    raw = derive_leads(pots, traces.sample_period_ms, metadata=metadata)
    return normalize_and_resample(raw, t_out=t_out)
