"""Binary/text file formats used by the pipeline.

Formats
-------
``.ctmesh``  magic ``CTMESH1\\n``; little-endian sections
             ``[node_count u64][nodes f64 x 3N][tet_count u64][tets u32 x 4M]``
             followed by named field sections
             ``[name_len u32][name utf8][kind u8][dtype u8][ncomp u32][data]``
             with kind 0 = per-node, 1 = per-element, 2 = metadata scalar,
             3 = text metadata (ncomp utf-8 bytes) and dtype 0 = f64,
             1 = u8. Label fields (tissue, tv) travel as u8.
``.ctecg``   text header (``key value`` lines, ``data`` sentinel) plus a CSV
             body of T rows x 8 lead columns at 9 significant digits, which
             round-trips float32 samples bit-exactly.
``.ctvolt``  magic ``CTVOLT1\\n`` + ``[node_count u64][t_count u64]`` +
             f32 row-major node x time samples.
``.ctsamp``  magic ``CTSAMP1\\n`` + ``[header_len u32][header json]`` +
             ``[X f32 Vx7][S f32 Tx8][Y u8 V]`` (Y as class indices).
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import ValidationError
from .geometry import Mesh

MESH_MAGIC = b"CTMESH1\n"
VOLT_MAGIC = b"CTVOLT1\n"
SAMP_MAGIC = b"CTSAMP1\n"

_KIND_NODE, _KIND_ELEM, _KIND_META, _KIND_TEXT = 0, 1, 2, 3
_DTYPE_F64, _DTYPE_U8 = 0, 1


# ---------------------------------------------------------------------------
# .ctmesh
# ---------------------------------------------------------------------------

def _write_field(fh, name, kind, data, ncomp):
    raw = np.ascontiguousarray(data)
    if raw.dtype == np.uint8:
        dtype = _DTYPE_U8
    else:
        dtype = _DTYPE_F64
        raw = raw.astype("<f8")
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<I", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<BBI", kind, dtype, ncomp))
    fh.write(raw.tobytes())


def write_ctmesh(path, mesh):
    """Serialize a Mesh with all attached fields and metadata."""
    with open(path, "wb") as fh:
        fh.write(MESH_MAGIC)
        fh.write(struct.pack("<Q", mesh.n_nodes))
        fh.write(mesh.nodes.astype("<f8").tobytes())
        fh.write(struct.pack("<Q", mesh.n_tets))
        fh.write(mesh.tets.astype("<u4").tobytes())
        _write_field(fh, "edge_target", _KIND_META, np.asarray([mesh.edge_target]), 1)
        for key in sorted(mesh.meta):
            _write_field(fh, key, _KIND_META, np.asarray([float(mesh.meta[key])]), 1)
        for key in sorted(mesh.text_meta):
            raw = np.frombuffer(str(mesh.text_meta[key]).encode("utf-8"), dtype=np.uint8)
            _write_field(fh, key, _KIND_TEXT, raw.copy(), raw.size)
        for name in sorted(mesh.node_fields):
            data = mesh.node_fields[name]
            ncomp = 1 if data.ndim == 1 else data.shape[1]
            _write_field(fh, name, _KIND_NODE, data, ncomp)
        for name in sorted(mesh.elem_fields):
            data = mesh.elem_fields[name]
            ncomp = 1 if data.ndim == 1 else data.shape[1]
            _write_field(fh, name, _KIND_ELEM, data, ncomp)


def read_ctmesh(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MESH_MAGIC):
        raise ValidationError(f"{path}: not a ctmesh file")
    off = len(MESH_MAGIC)
    (n_nodes,) = struct.unpack_from("<Q", blob, off)
    off += 8
    nodes = np.frombuffer(blob, "<f8", n_nodes * 3, off).reshape(n_nodes, 3).copy()
    off += n_nodes * 24
    (n_tets,) = struct.unpack_from("<Q", blob, off)
    off += 8
    tets = np.frombuffer(blob, "<u4", n_tets * 4, off).reshape(n_tets, 4).astype(np.int32)
    off += n_tets * 16

    meta, node_fields, elem_fields, text_meta = {}, {}, {}, {}
    while off < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        kind, dtype, ncomp = struct.unpack_from("<BBI", blob, off)
        off += 6
        count = {_KIND_NODE: n_nodes, _KIND_ELEM: n_tets,
                 _KIND_META: 1, _KIND_TEXT: 1}[kind]
        if dtype == _DTYPE_U8:
            data = np.frombuffer(blob, "u1", count * ncomp, off).copy()
            off += count * ncomp
        else:
            data = np.frombuffer(blob, "<f8", count * ncomp, off).copy()
            off += count * ncomp * 8
        if kind == _KIND_TEXT:
            text_meta[name] = data.tobytes().decode("utf-8")
            continue
        if ncomp > 1:
            data = data.reshape(count, ncomp)
        if kind == _KIND_META:
            meta[name] = float(data[0])
        elif kind == _KIND_NODE:
            node_fields[name] = data
        else:
            elem_fields[name] = data

    edge_target = meta.pop("edge_target", 0.0)
    return Mesh(nodes=nodes, tets=tets, edge_target=edge_target, meta=meta,
                node_fields=node_fields, elem_fields=elem_fields,
                text_meta=text_meta)


# ---------------------------------------------------------------------------
# .ctecg
# ---------------------------------------------------------------------------

def write_ctecg(path, record):
    lines = ["CTECG1"]
    lines.append("leads " + ",".join(record.leads))
    lines.append(f"T {record.samples.shape[0]}")
    lines.append(f"sample_period_ms {record.sample_period_ms!r}")
    for key in sorted(record.metadata):
        lines.append(f"{key} {record.metadata[key]}")
    lines.append("data")
    body = "\n".join(
        ",".join(f"{v:.9g}" for v in row) for row in record.samples.astype(np.float32)
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n" + body + "\n")


def read_ctecg(path):
    from .ecg import EcgRecord

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "CTECG1":
        raise ValidationError(f"{path}: not a ctecg file")
    meta = {}
    leads = None
    period = None
    i = 1
    while i < len(lines) and lines[i] != "data":
        key, _, value = lines[i].partition(" ")
        if key == "leads":
            leads = tuple(value.split(","))
        elif key == "T":
            pass
        elif key == "sample_period_ms":
            period = float(value)
        else:
            meta[key] = value
        i += 1
    if leads is None or period is None or i == len(lines):
        raise ValidationError(f"{path}: incomplete ctecg header")
    rows = [
        np.array([np.float32(v) for v in ln.split(",")], dtype=np.float32)
        for ln in lines[i + 1:]
        if ln
    ]
    samples = np.vstack(rows)
    return EcgRecord(leads=leads, samples=samples, sample_period_ms=period, metadata=meta)


# ---------------------------------------------------------------------------
# .ctvolt
# ---------------------------------------------------------------------------

def write_ctvolt(path, traces):
    u = np.ascontiguousarray(traces.u, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(VOLT_MAGIC)
        fh.write(struct.pack("<QQ", u.shape[0], u.shape[1]))
        fh.write(u.tobytes())


def read_ctvolt(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(VOLT_MAGIC):
        raise ValidationError(f"{path}: not a ctvolt file")
    off = len(VOLT_MAGIC)
    n, t = struct.unpack_from("<QQ", blob, off)
    off += 16
    return np.frombuffer(blob, "<f4", n * t, off).reshape(n, t).copy()


# ---------------------------------------------------------------------------
# .ctsamp
# ---------------------------------------------------------------------------

def write_ctsamp(path, sample):
    header = {
        "scenario": sample.scenario.name,
        "location": sample.scenario.location or "",
        "transmurality": sample.scenario.transmurality or "",
        "seed": int(sample.seed),
        "V": int(sample.X.shape[0]),
        "T": int(sample.S.shape[0]),
        "leads": list(sample.leads),
        "mesh_id": sample.mesh_id,
        "sample_period_ms": float(sample.sample_period_ms),
        "sampling": "farthest_point",
        "normalization": "per_record_global_max_abs",
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    y_idx = np.argmax(sample.Y, axis=1).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(SAMP_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(sample.X, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(sample.S, dtype="<f4").tobytes())
        fh.write(y_idx.tobytes())


def read_ctsamp(path):
    from .cohort import CohortSample
    from .infarct import Scenario

    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(SAMP_MAGIC):
        raise ValidationError(f"{path}: not a ctsamp file")
    off = len(SAMP_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    v, t = header["V"], header["T"]
    x = np.frombuffer(blob, "<f4", v * 7, off).reshape(v, 7).copy()
    off += v * 7 * 4
    s = np.frombuffer(blob, "<f4", t * 8, off).reshape(t, 8).copy()
    off += t * 8 * 4
    y_idx = np.frombuffer(blob, "u1", v, off).copy()
    y = np.zeros((v, 3), dtype=np.uint8)
    y[np.arange(v), y_idx] = 1
    scenario = Scenario(
        name=header["scenario"],
        location=header["location"] or None,
        transmurality=header["transmurality"] or None,
    )
    return CohortSample(
        X=x, S=s, Y=y, scenario=scenario, seed=header["seed"],
        leads=tuple(header["leads"]), mesh_id=header["mesh_id"],
        sample_period_ms=header.get("sample_period_ms", 500.0 / 511.0),
    )


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
