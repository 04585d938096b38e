"""Homogenized plate solve and vertex-averaged recovery of its 2nd-4th derivatives."""
from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations_with_replacement, permutations

import numpy as np

from .material import BendingTensor
from .morley import LinearSystem, MorleySpace, apply_clamped_bc, assemble_bilinear, assemble_load, solve

DERIV_INDICES = {m: list(combinations_with_replacement((0, 1), m)) for m in (2, 3, 4)}


@dataclass(eq=False)
class HomogenizedSolution:
    """Morley DOFs of the homogenized deflection plus recovered nodal derivative fields.

    ``derivs[m]`` is an (n_vertices, m + 1) array of piecewise-linear vertex
    values, columns in ``DERIV_INDICES[m]`` order.
    """

    space: MorleySpace
    dofs: np.ndarray
    derivs: dict | None = None

    def field(self, alpha) -> np.ndarray:
        key = tuple(sorted(alpha))
        return self.derivs[len(key)][:, DERIV_INDICES[len(key)].index(key)]

    def interpolate(self, order: int, tri: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """(N, order + 1) recovered derivatives at points given by triangle + barycentrics."""
        vals = self.derivs[order][self.space.mesh.triangles[tri]]  # (N, 3, c)
        return np.einsum("nv,nvc->nc", bary, vals)


def solve_homogenized(space: MorleySpace, dhat: BendingTensor, q, g1=None, g2=None,
                      rtol: float = 1e-10) -> HomogenizedSolution:
    """Clamped Morley solve with the constant homogenized stiffness."""
    A = assemble_bilinear(space, dhat)
    b = assemble_load(space, q)
    system = apply_clamped_bc(LinearSystem(A, b), space, g1, g2)
    return HomogenizedSolution(space, solve(system, rtol))


def vertex_average(space: MorleySpace, per_element: np.ndarray) -> np.ndarray:
    """Area-weighted average of element values over the elements incident to each vertex."""
    tris = space.mesh.triangles
    nv = space.mesh.n_vertices
    w = np.repeat(space.area, 3)
    den = np.bincount(tris.ravel(), weights=w, minlength=nv)
    per_element = per_element.reshape(len(tris), -1)
    cols = [np.bincount(tris.ravel(), weights=w * np.repeat(per_element[:, c], 3), minlength=nv) / den
            for c in range(per_element.shape[1])]
    return np.column_stack(cols)


def p1_gradients(space: MorleySpace, nodal: np.ndarray) -> np.ndarray:
    """(nt, 2, c) constant gradients of piecewise-linear fields given by vertex values (nv, c)."""
    vals = nodal[space.mesh.triangles]  # (nt, 3, c)
    return np.einsum("nvd,nvc->ndc", space.lambda_gradients, vals)


def _next_stage(space: MorleySpace, lower: np.ndarray, order: int) -> np.ndarray:
    """Vertex fields of order ``order`` from the gradients of order ``order - 1`` fields."""
    grads = p1_gradients(space, lower)  # (nt, 2, c_lower)
    low_pos = {a: i for i, a in enumerate(DERIV_INDICES[order - 1])}
    cols = []
    for alpha in DERIV_INDICES[order]:
        perms = sorted(set(permutations(alpha)))
        # d/dx_{p[-1]} of the field with index p[:-1], averaged over orderings
        cols.append(sum(grads[:, p[-1], low_pos[tuple(sorted(p[:-1]))]] for p in perms) / len(perms))
    return vertex_average(space, np.column_stack(cols))


def recover_derivatives(solution: HomogenizedSolution) -> HomogenizedSolution:
    """Three-stage averaging: element Hessians -> vertices, then repeated P1 gradients -> vertices."""
    space = solution.space
    H = space.element_hessians(solution.dofs)
    d2 = vertex_average(space, np.column_stack([H[:, 0, 0], 0.5 * (H[:, 0, 1] + H[:, 1, 0]), H[:, 1, 1]]))
    d3 = _next_stage(space, d2, 3)
    d4 = _next_stage(space, d3, 4)
    return replace(solution, derivs={2: d2, 3: d3, 4: d4})
