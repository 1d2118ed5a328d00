"""Command-line interface: one executable exposing every pipeline stage.

Subcommands: mesh-gen, scar-gen, activate, simulate, cohort, analyze,
validate. Every stage accepts ``--config FILE`` plus repeatable
``--set section.key=value`` overrides; flags beat the file, the file beats
defaults, and the effective configuration is echoed next to each output.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, fileio
from .errors import CardiotwinError, ValidationError


def _build_hash():
    pkg_dir = Path(__file__).parent
    h = hashlib.sha256()
    for src in sorted(pkg_dir.glob("*.py")):
        h.update(src.name.encode())
        h.update(src.read_bytes())
    return h.hexdigest()[:8]


def _version_string():
    return f"cardiotwin {__version__} (build {_build_hash()})"


def _add_common(sub):
    sub.add_argument("--config", help="key = value configuration document")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one config entry")


def _effective_config(args, extra=None):
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if extra:
        overrides.update({k: v for k, v in extra.items() if v is not None})
    return cfgmod.build_config(args.config, overrides)


def _echo(cfg, out_path):
    cfgmod.echo_config(cfg, str(out_path) + ".config.txt")


# ---------------------------------------------------------------------------
# Stage commands
# ---------------------------------------------------------------------------

def _cmd_mesh_gen(args):
    from .cohort import annotate_mesh, store_annotations
    from .geometry import generate_idealized_biventricle

    cfg = _effective_config(args, {
        "mesh.edge_target": args.edge, "mesh.seed": args.seed,
    })
    mesh = generate_idealized_biventricle(cfg.mesh.wall, cfg.mesh.edge_target,
                                          cfg.mesh.seed)
    annotated = annotate_mesh(mesh, cfg.fibers.alpha_endo_deg, cfg.fibers.alpha_epi_deg)
    store_annotations(annotated)
    fileio.write_ctmesh(args.out, mesh)
    _echo(cfg, args.out)
    print(f"wrote {args.out}: {mesh.n_nodes} nodes, {mesh.n_tets} tets, "
          f"mean edge {mesh.mean_edge_length():.4f} cm")
    return 0


def _cmd_scar_gen(args):
    from .cohort import annotate_mesh
    from .infarct import generate_tissue, scenario_by_name

    cfg = _effective_config(args, {"scar.catalog_path": args.catalog})
    mesh = fileio.read_ctmesh(args.mesh)
    annotated = annotate_mesh(mesh)
    scenario = scenario_by_name(args.scenario, sigma=cfg.scar.sigma,
                                bz_radius=cfg.scar.bz_radius,
                                path=cfg.scar.catalog_path or None)
    tissue = generate_tissue(mesh, annotated.coords, scenario, seed=args.seed,
                             segment_ids=annotated.segments)
    mesh.node_fields["tissue"] = tissue.labels
    mesh.text_meta["scenario"] = scenario.name
    mesh.meta["scar_seed"] = float(args.seed)
    fileio.write_ctmesh(args.out, mesh)
    _echo(cfg, args.out)
    counts = tissue.counts()
    print(f"wrote {args.out}: scenario {scenario.name} seed {args.seed} "
          f"scar={counts['scar']} bz={counts['bz']}")
    return 0


def _cmd_activate(args):
    from .activation import build_velocity_tensor, solve_eikonal
    from .cohort import annotate_mesh

    cfg = _effective_config(args)
    mesh = fileio.read_ctmesh(args.mesh)
    annotated = annotate_mesh(mesh)
    tissue = mesh.node_fields.get("tissue")
    tensors = build_velocity_tensor(annotated.fibers, tissue, cfg.conduction,
                                    mesh.tets)
    act = solve_eikonal(mesh, tensors, annotated.roots)
    mesh.node_fields["t_a_ms"] = np.where(np.isfinite(act.t_ms), act.t_ms, -1.0)
    fileio.write_ctmesh(args.out, mesh)
    _echo(cfg, args.out)
    n_unreached = int(act.unreached.sum())
    finite = act.t_ms[~act.unreached]
    print(f"wrote {args.out}: activation {finite.min():.1f}..{finite.max():.1f} ms, "
          f"{n_unreached} unreached")
    return 0


def _cmd_simulate(args):
    from .activation import ActivationMap
    from .cohort import annotate_mesh
    from .ecg import simulate_ecg
    from .reaction import ApdCalibration, apd_field, simulate_transmembrane

    if not args.dump_voltages and not args.ecg_out:
        print("nothing to do: pass --ecg-out and/or --dump-voltages")
        return 2
    cfg = _effective_config(args)
    mesh = fileio.read_ctmesh(args.mesh)
    if "t_a_ms" not in mesh.node_fields:
        raise ValidationError(f"{args.mesh} has no activation field; run activate first")
    t_a = mesh.node_fields["t_a_ms"].copy()
    t_a[t_a < 0] = np.inf
    annotated = annotate_mesh(mesh)
    tissue = mesh.node_fields.get("tissue")

    apd = apd_field(annotated.coords, tissue, cfg.apd)
    calibration = ApdCalibration(cfg.reaction)
    traces = simulate_transmembrane(ActivationMap(t_ms=t_a), apd, cfg.reaction,
                                    calibration=calibration)
    if args.dump_voltages:
        fileio.write_ctvolt(args.dump_voltages, traces)
        print(f"wrote {args.dump_voltages}: {traces.u.shape[0]}x{traces.u.shape[1]} f32")
    if args.ecg_out:
        metadata = {
            "scenario": mesh.text_meta.get("scenario", "healthy"),
            "seed": int(mesh.meta.get("scar_seed", mesh.meta.get("seed", 0))),
        }
        record = simulate_ecg(mesh, traces, annotated.electrodes,
                              t_out=cfg.cohort.t_samples, metadata=metadata)
        fileio.write_ctecg(args.ecg_out, record)
        _echo(cfg, args.ecg_out)
        print(f"wrote {args.ecg_out}: {record.samples.shape[0]} samples x "
              f"{len(record.leads)} leads")
    return 0


def _cmd_cohort(args):
    from .cohort import PipelineConfig, generate_cohort

    cfg = _effective_config(args, {"cohort.base_seed": args.seed})
    mesh_dir = Path(args.mesh_dir)
    mesh_paths = sorted(mesh_dir.glob("*.ctmesh"))
    if not mesh_paths:
        raise ValidationError(f"no .ctmesh files under {mesh_dir}")
    pipeline = PipelineConfig(
        conduction=cfg.conduction, reaction=cfg.reaction, apd=cfg.apd,
        sample_nodes=cfg.cohort.sample_nodes, t_samples=cfg.cohort.t_samples,
        healthy_reps=cfg.cohort.healthy_reps,
        root_jitter_ms=cfg.cohort.root_jitter_ms,
        scar_sigma=cfg.scar.sigma, scar_bz_radius=cfg.scar.bz_radius,
        catalog_path=cfg.scar.catalog_path,
        alpha_endo_deg=cfg.fibers.alpha_endo_deg,
        alpha_epi_deg=cfg.fibers.alpha_epi_deg,
    )
    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    rows = generate_cohort(mesh_paths, args.out, base_seed=cfg.cohort.base_seed,
                           pipeline=pipeline, jobs=jobs)
    cfgmod.echo_config(cfg, Path(args.out) / "config.txt")
    print(f"wrote {len(rows)} samples to {args.out}")
    return 0


def _cmd_analyze(args):
    from .analysis import analyze_cohort

    cfg = _effective_config(args)
    analyze_cohort(args.cohort, args.out)
    cfgmod.echo_config(cfg, Path(args.out) / "config.txt")
    print(f"wrote analysis to {args.out} (dtw_max/dtw_avg/features/zscores + svg)")
    return 0


def _cmd_validate(args):
    problems = _validate_path(Path(args.path))
    if problems:
        for p in problems:
            print(f"FAIL {p}", file=sys.stderr)
        return 1
    print(f"OK {args.path}")
    return 0


def _validate_path(path):
    from .cohort import validate_cohort

    if path.is_dir():
        if (path / "manifest.csv").exists():
            expect_v, expect_t = 4096, 512
            config_echo = path / "config.txt"
            if config_echo.exists():
                echoed = cfgmod.load_config_file(config_echo)
                expect_v = int(echoed.get("cohort.sample_nodes", expect_v))
                expect_t = int(echoed.get("cohort.t_samples", expect_t))
            return validate_cohort(path, expect_v=expect_v, expect_t=expect_t)
        return [f"{path}: directory without manifest.csv"]
    if not path.exists():
        return [f"{path}: does not exist"]
    suffix = path.suffix
    try:
        if suffix == ".ctmesh":
            mesh = fileio.read_ctmesh(path)
            mesh.validate()
            for name, data in mesh.node_fields.items():
                if data.shape[0] != mesh.n_nodes:
                    return [f"{path}: node field {name} has wrong length"]
            for name, data in mesh.elem_fields.items():
                if data.shape[0] != mesh.n_tets:
                    return [f"{path}: element field {name} has wrong length"]
        elif suffix == ".ctecg":
            rec = fileio.read_ctecg(path)
            if rec.samples.ndim != 2 or rec.samples.shape[1] != len(rec.leads):
                return [f"{path}: sample/lead shape mismatch"]
        elif suffix == ".ctsamp":
            sample = fileio.read_ctsamp(path)
            if not (sample.Y.sum(axis=1) == 1).all():
                return [f"{path}: labels not one-hot"]
        elif suffix == ".ctvolt":
            fileio.read_ctvolt(path)
        else:
            return [f"{path}: unknown artifact type {suffix!r}"]
    except CardiotwinError as exc:
        return [f"{path}: {exc}"]
    return []


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="cardiotwin",
        description="Cardiac digital-twin forward simulation: stochastic infarcts, "
                    "QRS-T electrophysiology, pseudo-ECG cohorts, and sensitivity "
                    "analysis.",
    )
    parser.add_argument("--version", action="version", version=_version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-gen", help="generate an annotated idealized biventricle")
    p.add_argument("--edge", type=float, default=None, help="edge resolution (cm)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_mesh_gen)

    p = sub.add_parser("scar-gen", help="synthesize scar/border-zone labels")
    p.add_argument("--mesh", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--catalog", default=None, help="custom scenario catalog CSV")
    _add_common(p)
    p.set_defaults(func=_cmd_scar_gen)

    p = sub.add_parser("activate", help="solve the Eikonal activation map")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_activate)

    p = sub.add_parser("simulate", help="transmembrane dynamics and pseudo-ECG")
    p.add_argument("--mesh", required=True)
    p.add_argument("--ecg-out", default=None)
    p.add_argument("--dump-voltages", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("cohort", help="run all scenarios and export ML samples")
    p.add_argument("--mesh-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_cohort)

    p = sub.add_parser("analyze", help="DTW dissimilarity and phenotype z-scores")
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("validate", help="re-check artifact invariants")
    p.add_argument("path")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CardiotwinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
