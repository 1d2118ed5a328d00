"""Scenario orchestration and ML-ready cohort export.

Each sample bundles a geometry matrix X (Cartesian + ventricular coordinates
for a fixed subset of nodes), the normalized 8-lead signal matrix S, and
one-hot tissue labels Y, in the documented ``.ctsamp`` format. A cohort is
one sample per (mesh, scenario) plus a small set of root-jittered healthy
replicate records used by the downstream feature z-scores.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .activation import ConductionParams, build_velocity_tensor, default_root_set, solve_eikonal
from .aha import lv_segment_field
from .ecg import simulate_ecg
from .errors import ValidationError
from .geometry import (FiberField, VentricularCoords, assign_fibers,
                       compute_ventricular_coordinates, place_electrodes)
from .infarct import generate_tissue, scenario_catalog
from .reaction import ApdCalibration, ApdParams, ReactionParams, apd_field, simulate_transmembrane

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_NODES = 4096
DEFAULT_T_SAMPLES = 512
DEFAULT_HEALTHY_REPS = 8
DEFAULT_ROOT_JITTER_MS = 2.0


@dataclass
class CohortSample:
    """One scenario's (X, S, Y) triple plus provenance."""

    X: np.ndarray  # (V, 7) float32
    S: np.ndarray  # (T, 8) float32
    Y: np.ndarray  # (V, 3) uint8 one-hot
    scenario: object
    seed: int
    leads: tuple = ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")
    mesh_id: str = "mesh"
    sample_period_ms: float = 500.0 / 511.0


@dataclass
class AnnotatedMesh:
    """Mesh plus every derived field the pipeline stages need."""

    mesh: object
    coords: object
    fibers: object
    segments: np.ndarray
    electrodes: object
    roots: object


def annotate_mesh(mesh, alpha_endo_deg=60.0, alpha_epi_deg=-60.0):
    """Compute (or recover from stored fields) everything the stages need."""
    if all(k in mesh.node_fields for k in ("tm", "ab", "rt", "tv")):
        coords = VentricularCoords(
            tm=mesh.node_fields["tm"], ab=mesh.node_fields["ab"],
            rt=mesh.node_fields["rt"],
            tv=mesh.node_fields["tv"].astype(np.uint8),
        )
    else:
        coords = compute_ventricular_coordinates(mesh)
    if all(k in mesh.elem_fields for k in ("fiber_f", "fiber_s", "fiber_n")):
        fibers = FiberField(f=mesh.elem_fields["fiber_f"],
                            s=mesh.elem_fields["fiber_s"],
                            n=mesh.elem_fields["fiber_n"])
    else:
        fibers = assign_fibers(mesh, coords, alpha_endo_deg, alpha_epi_deg)
    if "aha" in mesh.node_fields:
        segments = mesh.node_fields["aha"].astype(np.int64)
    else:
        segments = lv_segment_field(coords)
    electrodes = place_electrodes(mesh)
    roots = default_root_set(coords)
    return AnnotatedMesh(mesh=mesh, coords=coords, fibers=fibers,
                         segments=segments, electrodes=electrodes, roots=roots)


def store_annotations(annotated):
    """Attach coordinate/fiber/segment fields to the mesh for serialization."""
    mesh = annotated.mesh
    mesh.node_fields["tm"] = annotated.coords.tm
    mesh.node_fields["ab"] = annotated.coords.ab
    mesh.node_fields["rt"] = annotated.coords.rt
    mesh.node_fields["tv"] = annotated.coords.tv.astype(np.uint8)
    mesh.node_fields["aha"] = annotated.segments.astype(np.uint8)
    mesh.elem_fields["fiber_f"] = annotated.fibers.f
    mesh.elem_fields["fiber_s"] = annotated.fibers.s
    mesh.elem_fields["fiber_n"] = annotated.fibers.n
    return mesh


def subsample_nodes(mesh, count=DEFAULT_SAMPLE_NODES, seed=0):
    """Farthest-point sampling of ``count`` node indices, sorted ascending.

    The seed picks the deterministic start node; selection is greedy
    thereafter. ``count`` equal to the node count returns all nodes.
    """
    n = mesh.n_nodes
    if count > n:
        raise ValidationError(f"cannot sample {count} nodes from a {n}-node mesh")
    if count == n:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    start = int(rng.integers(n))
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(mesh.nodes - mesh.nodes[start], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        np.minimum(dist, np.linalg.norm(mesh.nodes - mesh.nodes[nxt], axis=1), out=dist)
    return np.sort(chosen)


@dataclass(frozen=True)
class PipelineConfig:
    """Stage parameters shared by every scenario run."""

    conduction: ConductionParams = ConductionParams()
    reaction: ReactionParams = ReactionParams()
    apd: ApdParams = ApdParams()
    sample_nodes: int = DEFAULT_SAMPLE_NODES
    t_samples: int = DEFAULT_T_SAMPLES
    healthy_reps: int = DEFAULT_HEALTHY_REPS
    root_jitter_ms: float = DEFAULT_ROOT_JITTER_MS
    scar_sigma: float = 0.5
    scar_bz_radius: float = 0.2
    catalog_path: str = ""
    alpha_endo_deg: float = 60.0
    alpha_epi_deg: float = -60.0


def simulate_record(annotated, tissue_labels, pipeline=None, calibration=None,
                    roots=None, metadata=None):
    """Tissue labels -> activation -> voltages -> normalized EcgRecord."""
    pipeline = pipeline or PipelineConfig()
    calibration = calibration or ApdCalibration(pipeline.reaction)
    roots = roots or annotated.roots
    tensors = build_velocity_tensor(annotated.fibers, tissue_labels,
                                    pipeline.conduction, annotated.mesh.tets)
    act = solve_eikonal(annotated.mesh, tensors, roots)
    if act.unreached.any():
        raise ValidationError(f"{int(act.unreached.sum())} nodes unreached from roots")
    apd = apd_field(annotated.coords, tissue_labels, pipeline.apd)
    traces = simulate_transmembrane(act, apd, pipeline.reaction, calibration=calibration)
    return simulate_ecg(annotated.mesh, traces, annotated.electrodes,
                        t_out=pipeline.t_samples, metadata=metadata)


def run_scenario(annotated, scenario, seed, pipeline=None, calibration=None,
                 mesh_id="mesh"):
    """Full pipeline for one scenario: returns the (X, S, Y) CohortSample."""
    pipeline = pipeline or PipelineConfig()
    try:
        tissue = generate_tissue(annotated.mesh, annotated.coords,
                                 scenario.with_seed(seed),
                                 segment_ids=annotated.segments)
        record = simulate_record(
            annotated, tissue.labels if not scenario.is_healthy else None,
            pipeline=pipeline, calibration=calibration,
            metadata={"scenario": scenario.name, "seed": seed},
        )
        idx = subsample_nodes(annotated.mesh, pipeline.sample_nodes, seed=0)
        x = np.column_stack([
            annotated.mesh.nodes[idx],
            annotated.coords.tm[idx],
            annotated.coords.ab[idx],
            annotated.coords.rt[idx],
            annotated.coords.tv[idx].astype(float),
        ]).astype(np.float32)
        labels = tissue.labels[idx]
        y = np.zeros((idx.size, 3), dtype=np.uint8)
        y[np.arange(idx.size), labels] = 1
    except Exception as exc:
        raise type(exc)(f"[scenario {scenario.name}] {exc}") from exc
    return CohortSample(X=x, S=record.samples, Y=y, scenario=scenario,
                        seed=int(seed), mesh_id=mesh_id,
                        sample_period_ms=record.sample_period_ms), record


def healthy_replicate_record(annotated, rep_seed, pipeline=None, calibration=None):
    """Healthy-tissue record with small root onset-time jitter (z-score spread)."""
    pipeline = pipeline or PipelineConfig()
    rng = np.random.default_rng(rep_seed)
    jitter = rng.uniform(0.0, pipeline.root_jitter_ms, annotated.roots.nodes.size)
    from .activation import RootSet

    roots = RootSet(nodes=annotated.roots.nodes.copy(),
                    times=annotated.roots.times + jitter)
    return simulate_record(annotated, None, pipeline=pipeline,
                           calibration=calibration, roots=roots,
                           metadata={"scenario": "healthy_rep", "seed": rep_seed})


# ---------------------------------------------------------------------------
# Cohort generation
# ---------------------------------------------------------------------------

def _split_for_mesh(mesh_id):
    digest = hashlib.sha256(mesh_id.encode("utf-8")).digest()
    bucket = digest[0] % 100
    if bucket < 70:
        return "train"
    return "val" if bucket < 85 else "test"


_WORKER_STATE = {}


def _worker_run(args):
    mesh_path, scenario_name, seed, mesh_id, pipeline, out_dir = args
    try:
        if _WORKER_STATE.get("key") != mesh_path:
            mesh = fileio.read_ctmesh(mesh_path)
            _WORKER_STATE["key"] = mesh_path
            _WORKER_STATE["annotated"] = annotate_mesh(
                mesh, pipeline.alpha_endo_deg, pipeline.alpha_epi_deg)
            _WORKER_STATE["calibration"] = ApdCalibration(pipeline.reaction)
        annotated = _WORKER_STATE["annotated"]
        calibration = _WORKER_STATE["calibration"]

        from .infarct import scenario_by_name

        scenario = scenario_by_name(scenario_name, sigma=pipeline.scar_sigma,
                                    bz_radius=pipeline.scar_bz_radius,
                                    path=pipeline.catalog_path or None)
        sample, record = run_scenario(annotated, scenario, seed, pipeline=pipeline,
                                      calibration=calibration, mesh_id=mesh_id)
        out_dir = Path(out_dir)
        samp_path = out_dir / "samples" / f"{mesh_id}_{scenario.name}.ctsamp"
        fileio.write_ctsamp(samp_path, sample)
        fileio.write_ctecg(out_dir / "ecg" / f"{mesh_id}_{scenario.name}.ctecg", record)
        return {
            "file": str(samp_path.relative_to(out_dir)),
            "mesh_id": mesh_id,
            "scenario": scenario.name,
            "transmurality": scenario.transmurality or "",
            "seed": seed,
            "sha256": fileio.sha256_file(samp_path),
            "split": _split_for_mesh(mesh_id),
        }
    except Exception as exc:
        return {
            "file": "", "mesh_id": mesh_id, "scenario": scenario_name,
            "transmurality": "", "seed": seed, "sha256": "FAILED",
            "split": _split_for_mesh(mesh_id), "_error": str(exc),
        }


def generate_cohort(mesh_paths, out_dir, base_seed=0, pipeline=None, jobs=1):
    """One CohortSample per (mesh, scenario) plus healthy replicate records.

    Writes ``samples/*.ctsamp``, matching ``ecg/*.ctecg`` records,
    ``healthy_reps/*.ctecg`` and a ``manifest.csv`` with per-file checksums.
    Fully deterministic for fixed inputs and seeds. Raises after writing the
    manifest if any scenario failed (failed rows are marked).
    """
    pipeline = pipeline or PipelineConfig()
    out_dir = Path(out_dir)
    for sub in ("samples", "ecg", "healthy_reps"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    scenarios = scenario_catalog(sigma=pipeline.scar_sigma,
                                 bz_radius=pipeline.scar_bz_radius,
                                 path=pipeline.catalog_path or None)
    tasks = []
    for mesh_idx, mesh_path in enumerate(mesh_paths):
        mesh_id = Path(mesh_path).stem
        for sc_idx, sc in enumerate(scenarios):
            seed = int(base_seed) + 1000 * mesh_idx + sc_idx
            tasks.append((str(mesh_path), sc.name, seed, mesh_id, pipeline, str(out_dir)))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_worker_run, tasks))
    else:
        rows = [_worker_run(task) for task in tasks]
    failures = [r for r in rows if r["sha256"] == "FAILED"]
    for r in failures:
        log.error("scenario %s failed: %s", r["scenario"], r.pop("_error", "?"))

    for mesh_idx, mesh_path in enumerate(mesh_paths):
        mesh_id = Path(mesh_path).stem
        mesh = fileio.read_ctmesh(str(mesh_path))
        annotated = annotate_mesh(mesh, pipeline.alpha_endo_deg, pipeline.alpha_epi_deg)
        calibration = ApdCalibration(pipeline.reaction)
        for rep in range(pipeline.healthy_reps):
            rep_seed = int(base_seed) + 1000 * mesh_idx + 500 + rep
            record = healthy_replicate_record(annotated, rep_seed,
                                              pipeline=pipeline,
                                              calibration=calibration)
            fileio.write_ctecg(out_dir / "healthy_reps" / f"{mesh_id}_rep{rep}.ctecg",
                               record)

    rows.sort(key=lambda r: (r["mesh_id"], r["scenario"]))
    with open(out_dir / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "file", "mesh_id", "scenario", "transmurality", "seed", "sha256", "split",
        ])
        writer.writeheader()
        writer.writerows(rows)

    if failures:
        raise ValidationError(f"{len(failures)} scenario runs failed; see manifest")
    return rows


def validate_cohort(out_dir, expect_v=DEFAULT_SAMPLE_NODES, expect_t=DEFAULT_T_SAMPLES):
    """Re-check cohort invariants: checksums, schema, one-hot labels.

    Returns a list of human-readable problem strings (empty = valid).
    """
    out_dir = Path(out_dir)
    problems = []
    manifest = out_dir / "manifest.csv"
    if not manifest.exists():
        return [f"missing manifest: {manifest}"]
    with open(manifest, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        problems.append("manifest is empty")
    for row in rows:
        if row["sha256"] == "FAILED":
            problems.append(f"{row['scenario']}: marked failed in manifest")
            continue
        path = out_dir / row["file"]
        if not path.exists():
            problems.append(f"{row['file']}: missing file")
            continue
        if fileio.sha256_file(path) != row["sha256"]:
            problems.append(f"{row['file']}: checksum mismatch")
            continue
        sample = fileio.read_ctsamp(path)
        if sample.X.shape != (expect_v, 7):
            problems.append(f"{row['file']}: X shape {sample.X.shape}")
        if sample.S.shape != (expect_t, 8):
            problems.append(f"{row['file']}: S shape {sample.S.shape}")
        if sample.Y.shape != (expect_v, 3) or not (sample.Y.sum(axis=1) == 1).all():
            problems.append(f"{row['file']}: Y not one-hot")
        if len(sample.leads) != 8:
            problems.append(f"{row['file']}: lead count {len(sample.leads)}")
    return problems
