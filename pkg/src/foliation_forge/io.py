"""Field serialization.

Two formats:

* CSV, one row per grid point: coordinates, then field components.
* A JSON header ``<stem>.json`` next to a raw little-endian float64 blob
  ``<stem>.bin``. The header records the grid and, for each named array, its
  shape and byte offset, so any language can memory-map the blob.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .grid import Grid

FORMAT_VERSION = 1


def grid_to_dict(grid: Grid) -> dict:
    return {"resolution": list(grid.resolution), "period": list(grid.period), "dealias": grid.dealias}


def grid_from_dict(d: dict) -> Grid:
    return Grid(tuple(d["resolution"]), tuple(d.get("period") or [1.0] * len(d["resolution"])), bool(d.get("dealias", False)))


def _components(grid: Grid, field: np.ndarray) -> tuple[list[str], np.ndarray]:
    lead = field.shape[: field.ndim - grid.dim]
    if field.shape[field.ndim - grid.dim :] != grid.shape:
        raise ValidationError(f"field shape {field.shape} does not match grid {grid.shape}")
    flat = field.reshape((-1,) + grid.shape)
    names = []
    for idx in np.ndindex(*lead) if lead else [()]:
        names.append("c" + "".join(str(i) for i in idx) if idx else "value")
    return names, flat.reshape(len(names), -1).T


def write_field_csv(path, grid: Grid, field: np.ndarray) -> None:
    names, cols = _components(grid, field)
    coords = grid.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{i + 1}" for i in range(grid.dim)] + names)
        for c, v in zip(coords, cols):
            w.writerow([repr(float(a)) for a in c] + [repr(float(b)) for b in v])


def read_field_csv(path, grid: Grid, shape: tuple[int, ...] = ()) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.size:
        raise ValidationError(f"{path}: expected {grid.size} rows, found {data.shape[0]}")
    vals = data[:, grid.dim :].T
    return vals.reshape(tuple(shape) + grid.shape)


def write_blob(stem, grid: Grid, arrays: dict[str, np.ndarray], meta: dict | None = None) -> tuple[Path, Path]:
    """Write arrays as ``stem.json`` + ``stem.bin``; returns both paths."""
    stem = Path(stem)
    header = {"format": "foliation-forge-fields", "version": FORMAT_VERSION, "grid": grid_to_dict(grid),
              "dtype": "<f8", "arrays": [], "meta": meta or {}}
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        header["arrays"].append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    blob = b"".join(chunks)
    header["sha256"] = hashlib.sha256(blob).hexdigest()
    jpath, bpath = stem.with_suffix(".json"), stem.with_suffix(".bin")
    bpath.write_bytes(blob)
    jpath.write_text(json.dumps(header, indent=2, sort_keys=True))
    return jpath, bpath


def read_blob(stem) -> tuple[Grid, dict[str, np.ndarray], dict]:
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    header = json.loads(stem.with_suffix(".json").read_text())
    blob = stem.with_suffix(".bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != header.get("sha256"):
        raise ValidationError(f"{stem}.bin checksum mismatch")
    out = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        out[entry["name"]] = a.reshape(entry["shape"]).astype(float)
    return grid_from_dict(header["grid"]), out, header.get("meta", {})
