"""Scenario distinguishability analysis.

Pairwise dynamic-time-warping dissimilarity across the scenario catalog's
records (per lead, aggregated as mean and max over leads) and per-scenario
waveform phenotype z-scores against a healthy replicate ensemble.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import FeatureError, ValidationError

FEATURE_NAMES = (
    "qrs_duration_ms",
    "qt_interval_ms",
    "r_amplitude",
    "st_amplitude",
    "t_amplitude",
)


# ---------------------------------------------------------------------------
# Dynamic time warping
# ---------------------------------------------------------------------------

@njit(cache=True)
def _dtw_cost(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.empty(m)
    cur = np.empty(m)
    for j in range(m):
        c = abs(a[0] - b[j])
        prev[j] = c if j == 0 else c + prev[j - 1]
    for i in range(1, n):
        for j in range(m):
            c = abs(a[i] - b[j])
            best = prev[j]
            if j > 0:
                if cur[j - 1] < best:
                    best = cur[j - 1]
                if prev[j - 1] < best:
                    best = prev[j - 1]
            cur[j] = c + best
        prev, cur = cur, prev
    return prev[m - 1]


def dtw(a, b):
    """Classic DTW dissimilarity: absolute-difference local cost, symmetric
    steps (insert/delete/match), no window constraint."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValidationError("dtw inputs must be nonempty")
    if a.ndim != 1 or b.ndim != 1:
        raise ValidationError("dtw operates on 1-D series")
    return float(_dtw_cost(a, b))


@dataclass
class DtwMatrix:
    names: tuple
    max_matrix: np.ndarray
    avg_matrix: np.ndarray


def dtw_matrix(records):
    """All-pairs DTW over records, per lead; avg and max across the 8 leads.

    ``records`` is an ordered mapping name -> EcgRecord; all records must
    share T and the lead set.
    """
    names = tuple(records)
    recs = [records[n] for n in names]
    lead_set = recs[0].leads
    t_len = recs[0].samples.shape[0]
    for r in recs:
        if r.leads != lead_set or r.samples.shape[0] != t_len:
            raise ValidationError("records disagree in leads or length")
    k = len(names)
    n_leads = len(lead_set)
    avg = np.zeros((k, k))
    mx = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            per_lead = np.array([
                dtw(recs[i].samples[:, l], recs[j].samples[:, l])
                for l in range(n_leads)
            ])
            avg[i, j] = avg[j, i] = per_lead.mean()
            mx[i, j] = mx[j, i] = per_lead.max()
    return DtwMatrix(names=names, max_matrix=mx, avg_matrix=avg)


# ---------------------------------------------------------------------------
# Phenotype features
# ---------------------------------------------------------------------------

@dataclass
class PhenotypeFeatures:
    """Lead-averaged waveform scalars plus the per-lead raw values."""

    qrs_duration_ms: float
    qt_interval_ms: float
    r_amplitude: float
    st_amplitude: float
    t_amplitude: float
    per_lead: dict

    def scalars(self):
        return {name: getattr(self, name) for name in FEATURE_NAMES}


def extract_features(record, qrs_search_frac=0.4, st_window_ms=40.0):
    """QRS/QT timing and R/ST/T amplitudes from one normalized record.

    QRS bounds come from the cross-lead RMS derivative (10% of its max);
    the T end is the last fall below 5% of the T peak on the cross-lead RMS
    signal. Amplitudes are per-lead, then averaged (absolute value for the
    signed ST/T measures).
    """
    x = record.samples.astype(np.float64)
    t_len = x.shape[0]
    sp = record.sample_period_ms
    deriv = np.diff(x, axis=0)
    rms_d = np.sqrt((deriv**2).mean(axis=1))
    peak = rms_d.max()
    if peak <= 0:
        raise FeatureError("flat record: QRS is undetectable")
    thr = 0.1 * peak
    hot = np.where(rms_d > thr)[0]
    onset = int(hot[0])
    limit = int(qrs_search_frac * t_len)
    hot_early = hot[hot < limit]
    if hot_early.size == 0:
        raise FeatureError("no QRS activity inside the search window")
    offset = int(hot_early[-1]) + 1
    qrs_ms = (offset - onset) * sp

    st_span = max(1, int(round(st_window_ms / sp)))
    st_stop = min(offset + st_span, t_len)
    st_per_lead = x[offset:st_stop].mean(axis=0)

    rms = np.sqrt((x**2).mean(axis=1))
    t_region = slice(st_stop, t_len)
    if st_stop >= t_len - 2:
        raise FeatureError("record too short after QRS for T-wave analysis")
    t_pk = st_stop + int(np.argmax(rms[t_region]))
    t_amp_rms = rms[t_pk]
    below = np.where(rms[t_pk:] < 0.05 * t_amp_rms)[0]
    t_end = t_pk + int(below[0]) if below.size else t_len - 1
    qt_ms = max((t_end - onset) * sp, qrs_ms)

    qrs_slice = x[onset:offset]
    r_per_lead = np.abs(qrs_slice).max(axis=0)
    t_window = x[st_stop:t_end + 1]
    t_idx = np.abs(t_window).argmax(axis=0)
    t_per_lead = t_window[t_idx, np.arange(x.shape[1])]

    return PhenotypeFeatures(
        qrs_duration_ms=float(qrs_ms),
        qt_interval_ms=float(qt_ms),
        r_amplitude=float(r_per_lead.mean()),
        st_amplitude=float(np.abs(st_per_lead).mean()),
        t_amplitude=float(np.abs(t_per_lead).mean()),
        per_lead={
            "r_amplitude": r_per_lead,
            "st_amplitude": st_per_lead,
            "t_amplitude": t_per_lead,
        },
    )


def zscores(features_by_scenario, healthy_features, min_replicates=8):
    """Per-feature z of each scenario against the healthy replicate ensemble.

    Returns (zscores dict, not-applicable flags dict); a feature whose
    healthy spread collapses below 1e-12 is reported as NaN and flagged.
    """
    if len(healthy_features) < min_replicates:
        raise ValidationError(
            f"need >= {min_replicates} healthy replicates, got {len(healthy_features)}"
        )
    table = {}
    na_flags = {}
    stats = {}
    for name in FEATURE_NAMES:
        vals = np.array([f.scalars()[name] for f in healthy_features])
        stats[name] = (vals.mean(), vals.std(ddof=1))
    for scen, feats in features_by_scenario.items():
        row = {}
        flags = {}
        for name in FEATURE_NAMES:
            mean, std = stats[name]
            if std < 1e-12:
                row[name] = float("nan")
                flags[name] = True
            else:
                row[name] = float((feats.scalars()[name] - mean) / std)
                flags[name] = False
        table[scen] = row
        na_flags[scen] = flags
    return table, na_flags


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def write_matrix_csv(path, names, matrix):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario"] + list(names))
        for name, row in zip(names, matrix):
            writer.writerow([name] + [f"{v:.9g}" for v in row])


def write_features_csv(path, features_by_scenario):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario"] + list(FEATURE_NAMES))
        for scen in features_by_scenario:
            sc = features_by_scenario[scen].scalars()
            writer.writerow([scen] + [f"{sc[n]:.9g}" for n in FEATURE_NAMES])


def write_zscores_csv(path, ztable):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario"] + list(FEATURE_NAMES))
        for scen, row in ztable.items():
            writer.writerow([scen] + [f"{row[n]:.9g}" for n in FEATURE_NAMES])


def _heat_color(v):
    """Blue (0) -> white (0.5) -> red (1) for v in [0, 1]."""
    v = min(max(v, 0.0), 1.0)
    if v < 0.5:
        f = v / 0.5
        r, g, b = int(255 * f), int(255 * f), 255
    else:
        f = (v - 0.5) / 0.5
        r, g, b = 255, int(255 * (1 - f)), int(255 * (1 - f))
    return f"#{r:02x}{g:02x}{b:02x}"


def write_heatmap_svg(path, names, matrix, title, cell=22, margin=150):
    """Deterministic, dependency-free SVG heatmap with row/column labels."""
    matrix = np.asarray(matrix, dtype=float)
    finite = matrix[np.isfinite(matrix)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    span = hi - lo if hi > lo else 1.0
    k = len(names)
    width = margin + cell * k + 20
    height = margin + cell * k + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{margin}" y="20" font-size="14" font-family="sans-serif">{title}</text>',
    ]
    for i, name in enumerate(names):
        y = margin + i * cell + cell * 0.7
        parts.append(
            f'<text x="{margin - 6}" y="{y:.0f}" font-size="9" text-anchor="end" '
            f'font-family="sans-serif">{name}</text>'
        )
        x = margin + i * cell + cell * 0.5
        parts.append(
            f'<text x="{x:.0f}" y="{margin - 6}" font-size="9" text-anchor="start" '
            f'font-family="sans-serif" transform="rotate(-60 {x:.0f} {margin - 6})">{name}</text>'
        )
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            v = matrix[i, j]
            color = "#888888" if not np.isfinite(v) else _heat_color((v - lo) / span)
            parts.append(
                f'<rect x="{margin + j * cell}" y="{margin + i * cell}" '
                f'width="{cell}" height="{cell}" fill="{color}" stroke="#ffffff"/>'
            )
    parts.append(
        f'<text x="{margin}" y="{height - 10}" font-size="10" font-family="sans-serif">'
        f"scale: {lo:.4g} (blue) to {hi:.4g} (red)</text>"
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")


def analyze_cohort(cohort_dir, out_dir, mesh_id=None):
    """Cohort directory -> DTW matrices, features, z-scores, SVG heatmaps.

    DTW operates on the normalized records (amplitudes are therefore not
    comparable to unnormalized pipelines; noted in the output metadata).
    Multi-mesh cohorts are analyzed per mesh into ``out_dir/<mesh_id>/``;
    a single-mesh cohort writes directly into ``out_dir``.
    """
    from . import fileio
    from .ecg import EcgRecord

    cohort_dir = Path(cohort_dir)
    out_dir = Path(out_dir)

    by_mesh = {}
    for f in sorted((cohort_dir / "samples").glob("*.ctsamp")):
        sample = fileio.read_ctsamp(f)
        if mesh_id is not None and sample.mesh_id != mesh_id:
            continue
        rec = EcgRecord(
            leads=sample.leads,
            samples=sample.S,
            sample_period_ms=sample.sample_period_ms,
            metadata={"scenario": sample.scenario.name},
        )
        by_mesh.setdefault(sample.mesh_id, {})[sample.scenario.name] = rec
    if not by_mesh:
        raise ValidationError(f"no samples found under {cohort_dir}")

    reps_by_mesh = {}
    for f in sorted((cohort_dir / "healthy_reps").glob("*.ctecg")):
        rep_mesh = f.stem.rsplit("_rep", 1)[0]
        reps_by_mesh.setdefault(rep_mesh, []).append(fileio.read_ctecg(f))

    results = {}
    for mid, records in by_mesh.items():
        target = out_dir if len(by_mesh) == 1 else out_dir / mid
        results[mid] = _analyze_one_mesh(records, reps_by_mesh.get(mid, []), target)
    if len(results) == 1:
        return next(iter(results.values()))
    return results


def _analyze_one_mesh(records, healthy_recs, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    mat = dtw_matrix(records)
    write_matrix_csv(out_dir / "dtw_max.csv", mat.names, mat.max_matrix)
    write_matrix_csv(out_dir / "dtw_avg.csv", mat.names, mat.avg_matrix)
    write_heatmap_svg(out_dir / "dtw_max.svg", mat.names, mat.max_matrix,
                      "max-over-leads DTW (normalized records)")
    write_heatmap_svg(out_dir / "dtw_avg.svg", mat.names, mat.avg_matrix,
                      "mean-over-leads DTW (normalized records)")

    features = {name: extract_features(rec) for name, rec in records.items()}
    write_features_csv(out_dir / "features.csv", features)

    ztable = None
    if healthy_recs:
        healthy_feats = [extract_features(r) for r in healthy_recs]
        ztable, _ = zscores(features, healthy_feats)
        write_zscores_csv(out_dir / "zscores.csv", ztable)
        znames = tuple(ztable)
        zmat = np.array([[ztable[s][f] for f in FEATURE_NAMES] for s in znames])
        write_heatmap_svg(out_dir / "zscores.svg", znames, zmat,
                          "phenotype z-scores vs healthy replicates")
    return mat, features, ztable
