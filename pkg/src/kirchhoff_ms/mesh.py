"""Structured triangular meshes, raster microstructures and point location."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

LOCATE_TOL = 1e-12


class MeshError(ValueError):
    pass


class DomainError(ValueError):
    """Raised when a point lies outside the mesh domain."""


@dataclass(frozen=True)
class MaterialRaster:
    """k x k grid of material indices over the unit cell.

    ``cells[r, c]`` is the material of the raster cell spanning
    ``y1 in [c/k, (c+1)/k]`` and ``y2 in [r/k, (r+1)/k]`` (row 0 at the bottom).
    """

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1] or cells.shape[0] < 1:
            raise MeshError(f"raster must be a non-empty square array, got shape {cells.shape}")
        if np.any(cells < 0):
            raise MeshError("material indices must be non-negative")
        object.__setattr__(self, "cells", cells)

    @property
    def k(self) -> int:
        return self.cells.shape[0]

    @classmethod
    def uniform(cls, material: int = 0) -> "MaterialRaster":
        return cls(np.full((1, 1), material))

    @classmethod
    def from_rows_top_down(cls, rows) -> "MaterialRaster":
        """Build from rows listed top row first, as they appear on screen."""
        return cls(np.asarray(rows, dtype=np.int64)[::-1])

    def transpose(self) -> "MaterialRaster":
        return MaterialRaster(self.cells.T.copy())

    def is_diagonal_symmetric(self) -> bool:
        return bool(np.array_equal(self.cells, self.cells.T))

    def material_at(self, y: np.ndarray) -> np.ndarray:
        """Material index at points ``y`` of the unit cell (shape (..., 2))."""
        y = np.asarray(y, dtype=float)
        idx = np.clip(np.floor(y * self.k).astype(np.int64), 0, self.k - 1)
        return self.cells[idx[..., 1], idx[..., 0]]


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangle mesh of an axis-aligned rectangle.

    Triangles are counterclockwise. Local edge ``e`` of a triangle is the edge
    opposite local vertex ``e``, traversed counterclockwise. ``tri_edge_sign``
    is +1 where the global edge normal (the +90 degree rotation of the
    low-index -> high-index edge direction) is the triangle's outward normal.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_edge_sign: np.ndarray
    boundary_vertex: np.ndarray
    boundary_edge: np.ndarray
    nx: int
    ny: int
    domain: tuple[float, float, float, float]
    element_material: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.element_material is None:
            object.__setattr__(self, "element_material", np.zeros(len(self.triangles), dtype=np.int64))
        for name in ("vertices", "triangles", "edges", "tri_edges", "tri_edge_sign",
                     "boundary_vertex", "boundary_edge", "element_material"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def h(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.domain
        return (x1 - x0) / self.nx, (y1 - y0) / self.ny

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_midpoints(self) -> np.ndarray:
        return self.vertices[self.edges].mean(axis=1)

    def with_materials(self, element_material: np.ndarray) -> "TriMesh":
        return replace(self, element_material=np.asarray(element_material, dtype=np.int64).copy())


def build_structured_mesh(nx: int, ny: int, domain=(0.0, 0.0, 1.0, 1.0)) -> TriMesh:
    """Split an ``nx`` x ``ny`` grid of rectangles along their lower-left diagonals."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"nx, ny must be positive integers, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    x0, y0, x1, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {domain}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])

    # local edge e is opposite local vertex e, traversed a -> b counterclockwise
    a = tris[:, [1, 2, 0]]
    b = tris[:, [2, 0, 1]]
    pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=-1).reshape(-1, 2)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    tri_edges = inverse.reshape(-1, 3)
    tri_edge_sign = np.where(a > b, 1, -1).astype(np.int8)
    boundary_edge = counts == 1
    boundary_vertex = np.zeros(len(vertices), dtype=bool)
    boundary_vertex[edges[boundary_edge].ravel()] = True

    return TriMesh(vertices=vertices, triangles=tris, edges=edges.astype(np.int64),
                   tri_edges=tri_edges.astype(np.int64), tri_edge_sign=tri_edge_sign,
                   boundary_vertex=boundary_vertex, boundary_edge=boundary_edge,
                   nx=nx, ny=ny, domain=(x0, y0, x1, y1))


def _is_integer(value: float, tol: float = 1e-9) -> bool:
    return abs(value - round(value)) <= tol * max(1.0, abs(value))


def check_raster_alignment(mesh: TriMesh, raster: MaterialRaster, epsilon: float | None) -> None:
    """Raise unless every raster interface (tiled with period ``epsilon``) is a mesh line."""
    period = 1.0 if epsilon is None else float(epsilon)
    cell = period / raster.k
    hx, hy = mesh.h
    x0, y0, _, _ = mesh.domain
    ok = (_is_integer(cell / hx) and _is_integer(cell / hy)
          and _is_integer(x0 / cell) and _is_integer(y0 / cell))
    if raster.k == 1:
        ok = True
    if not ok:
        raise MeshError(
            f"mesh lines (h = {hx:g} x {hy:g}) do not align with raster interfaces "
            f"(raster cell size {cell:g}); coefficients would jump inside triangles")


def assign_materials(mesh: TriMesh, raster: MaterialRaster, epsilon: float | str = "unit-cell") -> TriMesh:
    """Label each triangle with the raster material at its centroid.

    ``epsilon="unit-cell"`` treats the mesh as the unit cell itself; a positive
    ``epsilon`` tiles the raster with period ``epsilon`` (``y = (x / epsilon) mod 1``).
    """
    if isinstance(epsilon, str):
        if epsilon != "unit-cell":
            raise ValueError(f"unknown epsilon mode {epsilon!r}")
        x0, y0, x1, y1 = mesh.domain
        if not np.allclose([x0, y0, x1, y1], [0, 0, 1, 1]):
            raise MeshError("unit-cell mode needs a mesh of [0,1]^2")
        period = None
    else:
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        period = float(epsilon)
    check_raster_alignment(mesh, raster, period)
    c = mesh.centroids()
    y = c if period is None else np.mod(c / period, 1.0)
    return mesh.with_materials(raster.material_at(y))


def _barycentric(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points ``x`` (N,2) in triangles ``p`` (N,3,2)."""
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    r = x - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def locate_points(mesh: TriMesh, x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised point location by index arithmetic on the structured grid.

    Returns triangle indices and barycentric coordinates. Points on shared
    edges or vertices go to the lowest-index triangle containing them.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x0, y0, x1, y1 = mesh.domain
    hx, hy = mesh.h
    tol = LOCATE_TOL * max(1.0, x1 - x0, y1 - y0)
    outside = ((x[:, 0] < x0 - tol) | (x[:, 0] > x1 + tol)
               | (x[:, 1] < y0 - tol) | (x[:, 1] > y1 + tol))
    if np.any(outside):
        bad = x[np.argmax(outside)]
        raise DomainError(f"point {bad.tolist()} outside mesh domain {mesh.domain}")

    s = (x[:, 0] - x0) / hx
    t = (x[:, 1] - y0) / hy
    i0 = np.floor(s).astype(np.int64)
    j0 = np.floor(t).astype(np.int64)
    n = len(x)
    best_tri = np.full(n, np.iinfo(np.int64).max)
    best_bary = np.zeros((n, 3))
    for di in (-1, 0):
        for dj in (-1, 0):
            i = np.clip(i0 + di, 0, mesh.nx - 1)
            j = np.clip(j0 + dj, 0, mesh.ny - 1)
            q = j * mesh.nx + i
            for k in (0, 1):
                tri = 2 * q + k
                bary = _barycentric(mesh.vertices[mesh.triangles[tri]], x)
                inside = np.all(bary >= -1e-12, axis=1) & (tri < best_tri)
                best_tri = np.where(inside, tri, best_tri)
                best_bary[inside] = bary[inside]
    missing = best_tri == np.iinfo(np.int64).max
    if np.any(missing):
        raise DomainError(f"could not locate point {x[np.argmax(missing)].tolist()}")
    best_bary = np.clip(best_bary, 0.0, 1.0)
    best_bary /= best_bary.sum(axis=1, keepdims=True)
    return best_tri, best_bary


def locate_point(mesh: TriMesh, x) -> tuple[int, np.ndarray]:
    tri, bary = locate_points(mesh, np.asarray(x, dtype=float).reshape(1, 2))
    return int(tri[0]), bary[0]
