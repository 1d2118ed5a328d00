"""Declarative run configuration.

One flat ``section.key = value`` document carries every stage parameter;
defaults equal the documented physiology values where they exist (conduction
velocities, APD bounds, infarct remodeling fractions, border-zone radius,
edge resolution). Precedence: CLI flag > config file > default. The full
effective configuration is echoed next to every output so runs stay
reproducible from their artifacts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .activation import ConductionParams
from .errors import ValidationError
from .geometry import BiventricleParams
from .infarct import DEFAULT_BZ_RADIUS_CM, DEFAULT_SIGMA_CM
from .reaction import ApdParams, ReactionParams


@dataclass(frozen=True)
class MeshConfig:
    edge_target: float = 0.15
    seed: int = 7
    wall: BiventricleParams = BiventricleParams()


@dataclass(frozen=True)
class FiberConfig:
    alpha_endo_deg: float = 60.0
    alpha_epi_deg: float = -60.0


@dataclass(frozen=True)
class ScarConfig:
    sigma: float = DEFAULT_SIGMA_CM
    bz_radius: float = DEFAULT_BZ_RADIUS_CM
    catalog_path: str = ""


@dataclass(frozen=True)
class CohortConfig:
    sample_nodes: int = 4096
    t_samples: int = 512
    healthy_reps: int = 8
    root_jitter_ms: float = 2.0
    base_seed: int = 11


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshConfig = MeshConfig()
    fibers: FiberConfig = FiberConfig()
    scar: ScarConfig = ScarConfig()
    conduction: ConductionParams = ConductionParams()
    reaction: ReactionParams = ReactionParams()
    apd: ApdParams = ApdParams()
    cohort: CohortConfig = CohortConfig()


_SECTIONS = ("mesh", "fibers", "scar", "conduction", "reaction", "apd", "cohort")


def flatten(config):
    """RunConfig -> sorted {\"section.key\": value} with wall params inlined."""
    out = {}
    for section in _SECTIONS:
        sub = getattr(config, section)
        for f in fields(sub):
            val = getattr(sub, f.name)
            if f.name == "wall":
                for wf in fields(val):
                    out[f"mesh.wall.{wf.name}"] = getattr(val, wf.name)
            else:
                out[f"{section}.{f.name}"] = val
    return dict(sorted(out.items()))


def _coerce(current, raw):
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_overrides(config, overrides):
    """New RunConfig with dotted-key overrides applied (values may be str)."""
    cfg = config
    for key, raw in overrides.items():
        parts = key.split(".")
        if parts[0] not in _SECTIONS:
            raise ValidationError(f"unknown config section in {key!r}")
        section = getattr(cfg, parts[0])
        if len(parts) == 3 and parts[0] == "mesh" and parts[1] == "wall":
            wall = section.wall
            if not hasattr(wall, parts[2]):
                raise ValidationError(f"unknown config key {key!r}")
            cur = getattr(wall, parts[2])
            new_wall = replace(wall, **{parts[2]: _coerce(cur, str(raw))})
            new_section = replace(section, wall=new_wall)
        elif len(parts) == 2 and hasattr(section, parts[1]):
            cur = getattr(section, parts[1])
            new_section = replace(section, **{parts[1]: _coerce(cur, str(raw))})
        else:
            raise ValidationError(f"unknown config key {key!r}")
        cfg = replace(cfg, **{parts[0]: new_section})
    return cfg


def load_config_file(path):
    """Parse the ``key = value`` document; '#' starts a comment."""
    overrides = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def build_config(config_path=None, flag_overrides=None):
    """Defaults, then config file, then CLI flags."""
    cfg = RunConfig()
    if config_path:
        cfg = apply_overrides(cfg, load_config_file(config_path))
    if flag_overrides:
        cfg = apply_overrides(cfg, {k: v for k, v in flag_overrides.items() if v is not None})
    return cfg


def echo_config(config, path):
    """Write the effective flat configuration next to an output artifact."""
    lines = [f"{k} = {v}" for k, v in flatten(config).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
