"""Legacy ASCII VTK (version 3.0) export of triangle meshes and fields."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import TriMesh

VTK_TRIANGLE = 5


def _clean(name: str) -> str:
    return "".join(c if c.isalnum() or c in "_-" else "_" for c in name)


def write_vtk(path, mesh: TriMesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "kirchhoff_ms") -> Path:
    """Write an UNSTRUCTURED_GRID with scalar POINT_DATA and CELL_DATA arrays.

    ``element_material`` is always written as integer cell data.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(VTK_TRIANGLE)] * nt

    cells = {"element_material": mesh.element_material, **(cell_data or {})}
    lines.append(f"CELL_DATA {nt}")
    for name, values in cells.items():
        values = np.asarray(values).ravel()
        if len(values) != nt:
            raise ValueError(f"cell field {name!r} has {len(values)} values, expected {nt}")
        kind = "int" if np.issubdtype(values.dtype, np.integer) else "double"
        lines += [f"SCALARS {_clean(name)} {kind} 1", "LOOKUP_TABLE default"]
        lines += [str(int(v)) if kind == "int" else f"{v:.17g}" for v in values]

    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float).ravel()
            if len(values) != nv:
                raise ValueError(f"point field {name!r} has {len(values)} values, expected {nv}")
            lines += [f"SCALARS {_clean(name)} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in values]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_scalars(path) -> dict:
    """Minimal reader for files written by ``write_vtk`` (used by tests and scripts)."""
    tokens = Path(path).read_text().split("\n")
    out, i = {}, 0
    section = None
    sizes = {}
    while i < len(tokens):
        line = tokens[i].split()
        if line and line[0] in ("POINTS", "CELLS", "CELL_TYPES"):
            sizes[line[0]] = int(line[1])
        if line and line[0] in ("POINT_DATA", "CELL_DATA"):
            section, n = line[0], int(line[1])
        elif line and line[0] == "SCALARS":
            name = line[1]
            vals = np.array([float(v) for v in tokens[i + 2:i + 2 + n]])
            out[(section, name)] = vals
            i += 1 + n
        i += 1
    out["sizes"] = sizes
    return out
