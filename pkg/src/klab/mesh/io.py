"""Versioned JSON mesh format."""

from __future__ import annotations

import json

import numpy as np

from .. import ConfigurationError
from .complex import FORMAT_VERSION, Collar, Mesh


def _enc_key(k):
    if isinstance(k, tuple):
        return [_enc_key(x) for x in k]
    if isinstance(k, (np.integer,)):
        return int(k)
    return k


def _dec_key(k):
    if isinstance(k, list):
        return tuple(_dec_key(x) for x in k)
    return k


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def mesh_to_dict(m: Mesh) -> dict:
    d = {
        "version": FORMAT_VERSION,
        "dim": m.dim,
        "vertices": [_enc_key(k) for k in m.keys],
        "edges": m.edges.tolist() if m.dim >= 1 else [],
        "cells": {str(k): m.cells[k].tolist() for k in sorted(m.cells) if k >= 2},
        "metric_scale": m.metric_scale,
        "edge_length": m.edge_length.tolist() if m.dim >= 1 else [],
        "base_measure": {str(k): v.tolist() for k, v in m.base_measure.items()},
        "regions": {k: np.asarray(v).tolist() for k, v in m.regions.items()},
        "meta": _jsonable(m.meta),
    }
    if m.dim >= 2:
        e, s = m.plaquette_cycles
        d["plaquettes"] = (s * (e + 1)).tolist()
        d["plaquette_area"] = m.plaquette_area.tolist()
    if m.dim >= 4:
        d["cells4"] = m.cells[4].tolist()
    if m.collar is not None:
        d["collar"] = {
            "slice": mesh_to_dict(m.collar.slice),
            "levels": m.collar.levels.tolist(),
            "vertex_index": m.collar.vertex_index.tolist(),
            "cut": m.collar.cut,
        }
    return d


def mesh_from_dict(d: dict) -> Mesh:
    if d.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported mesh format version {d.get('version')}")
    dim = int(d["dim"])
    cells = {}
    if dim >= 1:
        cells[1] = np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2)
    for k, v in d.get("cells", {}).items():
        cells[int(k)] = np.asarray(v, dtype=np.int64).reshape(-1, 1 << int(k))
    base = {int(k): np.asarray(v, float) for k, v in d["base_measure"].items()}
    collar = None
    if d.get("collar"):
        c = d["collar"]
        collar = Collar(mesh_from_dict(c["slice"]), np.asarray(c["levels"], float),
                        np.asarray(c["vertex_index"], dtype=np.int64), int(c["cut"]))
    regions = {k: np.asarray(v, dtype=np.int64) for k, v in d.get("regions", {}).items()}
    m = Mesh(dim, tuple(_dec_key(k) for k in d["vertices"]), cells, base,
             float(d.get("metric_scale", 1.0)), regions, collar, d.get("meta", {}))
    return m


def save_mesh(m: Mesh, path):
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(m), fh)


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        return mesh_from_dict(json.load(fh))
