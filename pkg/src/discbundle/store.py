"""Persistence of solved fields as .npz archives with fixed timestamps."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .harmonic import MapField
from .mesh import TriMesh
from .moebius import HolonomyRep

FIELD_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class MeshHashMismatch(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def _write_member(zf: zipfile.ZipFile, name: str, arr: np.ndarray):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, buf.getvalue())


def save_field(path, field_: MapField, mesh: TriMesh, allow_unconverged: bool = False) -> Path:
    """Write h, its holonomy and solver metadata; byte-stable for equal inputs."""
    if not (field_.converged or allow_unconverged):
        raise ValueError("refusing to save an unconverged field without allow_unconverged")
    if len(field_.values) != mesh.n_nodes:
        raise ValueError("field does not live on this mesh")
    meta = {
        "version": FIELD_VERSION,
        "mesh_hash": mesh.hash(),
        "resolution": mesh.resolution,
        "rep": field_.rep.to_record(),
        "residual": field_.residual,
        "iterations": field_.iterations,
        "converged": field_.converged,
        "energy_history": list(field_.energy_history),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "values", np.asarray(field_.values, dtype=np.complex128))
        text = json.dumps(meta, sort_keys=True).encode()
        _write_member(zf, "meta", np.frombuffer(text, dtype=np.uint8))
    return path


def read_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(data["meta"].tobytes().decode())
    if meta.get("version") != FIELD_VERSION:
        raise VersionMismatch(f"field version {meta.get('version')} != {FIELD_VERSION}")
    return meta


def load_field(path, mesh: TriMesh) -> MapField:
    meta = read_meta(path)
    if meta["mesh_hash"] != mesh.hash():
        raise MeshHashMismatch(f"{path} was saved on a different mesh")
    with np.load(path, allow_pickle=False) as data:
        values = data["values"].copy()
    return MapField(
        values,
        HolonomyRep.from_record(meta["rep"]),
        meta["residual"],
        meta["iterations"],
        meta["energy_history"],
        meta["converged"],
    )
