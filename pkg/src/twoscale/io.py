"""CSV and legacy ASCII VTK writers."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(path, columns, rows):
    """Write a header row and float rows at 17 significant digits."""
    path = Path(path)
    columns = list(columns)
    rows = [list(r) for r in rows]
    for k, r in enumerate(rows):
        if len(r) != len(columns):
            raise ValueError(f"row {k} has {len(r)} values, expected {len(columns)}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path):
    """Return (columns, rows) with rows as an (n, k) float array."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            columns = next(reader)
            data = [[float(x) for x in row] for row in reader if row]
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    return columns, np.asarray(data, dtype=float).reshape(-1, len(columns))


def write_vtk(path, mesh, point_fields, cell_fields=None, title="twoscale"):
    """Legacy ASCII VTK unstructured grid of triangles with scalar fields."""
    path = Path(path)
    n, m = mesh.n_nodes, mesh.n_triangles
    for name, values in point_fields.items():
        if np.shape(values) != (n,):
            raise ValueError(f"point field {name!r} has shape {np.shape(values)}, expected ({n},)")
    for name, values in (cell_fields or {}).items():
        if np.shape(values) != (m,):
            raise ValueError(f"cell field {name!r} has shape {np.shape(values)}, expected ({m},)")
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    for header, count, fields in (("POINT_DATA", n, point_fields), ("CELL_DATA", m, cell_fields or {})):
        if not fields:
            continue
        lines.append(f"{header} {count}")
        for name, values in fields.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(v) for v in values]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path
