"""Second-, third- and fourth-order cell problems on the unit cell, and the homogenized tensor.

All cell functions are clamped on the cell boundary. Multi-indices are
0-based tuples; each order is solved only for sorted multi-indices with the
right-hand side averaged over the permutations of the index, and later
summed with binomial multiplicities.

Right-hand sides come from integrating the strong forms by parts against
clamped test functions. Terms carrying one derivative of the test function
use the gradient of its vertex-linear interpolant, which is conforming; with
a constant tensor every such term then vanishes exactly on the clamped space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, permutations
from math import factorial

import numpy as np

from .material import BendingTensor, CoefficientField
from .morley import (Factorization, LinearSystem, MorleySpace, apply_clamped_bc,
                     assemble_bilinear, scatter_vector, solve)

log = logging.getLogger(__name__)

# major-symmetry defect above which D-hat is reported as suspicious
ASYMMETRY_WARN = 1e-3
MULTI_INDICES = {m: list(combinations_with_replacement((0, 1), m)) for m in (2, 3, 4)}


class HomogenizationError(RuntimeError):
    pass


def multiplicity(alpha) -> int:
    """Number of distinct orderings of a multi-index."""
    ones = sum(alpha)
    return factorial(len(alpha)) // (factorial(ones) * factorial(len(alpha) - ones))


def distinct_permutations(alpha) -> list[tuple]:
    return sorted(set(permutations(alpha)))


@dataclass(eq=False)
class ElementFields:
    """Element data of a Morley function used by the cell right-hand sides."""

    hess: np.ndarray       # (nt, 2, 2)
    grad_int: np.ndarray   # (nt, 2)  int_K grad u
    value_int: np.ndarray  # (nt,)    int_K u

    @classmethod
    def of(cls, space: MorleySpace, dofs) -> "ElementFields":
        loc = space.local_dofs(dofs)
        w = space.quad_weights
        g = np.einsum("nqbd,nb->nqd", space.quad_gradients, loc)
        v = np.einsum("nqb,nb->nq", space.quad_values, loc)
        return cls(space.element_hessians(dofs), np.einsum("nq,nqd->nd", w, g),
                   np.einsum("nq,nq->n", w, v))


@dataclass(eq=False)
class _TestData:
    area: np.ndarray        # (nt,)
    hess: np.ndarray        # (nt, 6, 2, 2)
    grad: np.ndarray        # (nt, 6, 2) gradient of the vertex-linear interpolant
    value_int: np.ndarray   # (nt, 6) int_K phi_b

    @classmethod
    def of(cls, space: MorleySpace) -> "_TestData":
        grad = np.zeros((space.mesh.n_triangles, 6, 2))
        grad[:, :3] = space.lambda_gradients
        return cls(space.area, space.hessians, grad,
                   np.einsum("nq,nqb->nb", space.quad_weights, space.quad_values))


@dataclass(eq=False)
class CellProblem:
    """Unit-cell space and coefficients together with the clamped factorised operator."""

    space: MorleySpace
    coef: CoefficientField
    rtol: float = 1e-10
    D: np.ndarray = field(init=False)

    def __post_init__(self):
        self.D = self.coef.full_per_element()
        self.test = _TestData.of(self.space)
        A = assemble_bilinear(self.space, self.D)
        self._system = apply_clamped_bc(LinearSystem(A, np.zeros(self.space.ndofs)), self.space)
        self._factor = Factorization(self._system.matrix)

    def solve_local(self, local: np.ndarray) -> np.ndarray:
        """Solve with clamped BCs for element-local load vectors (nt, 6, k)."""
        F = scatter_vector(self.space, local)
        F[self._system.constrained] = 0.0
        return solve(LinearSystem(self._system.matrix, F, self._system.constrained,
                                  self._system.values), self.rtol, self._factor)

    # -- right-hand sides (element-local, one ordered multi-index) --

    def rhs_n2(self, alpha) -> np.ndarray:
        a1, a2 = alpha
        t = self.test
        return -np.einsum("n,nij,nbij->nb", t.area, self.D[:, :, :, a1, a2], t.hess)

    def rhs_n3(self, alpha, n2: ElementFields) -> np.ndarray:
        """Load for ordered ``alpha``; ``n2`` holds N2 for ``alpha[1:]``."""
        a1, a2, a3 = alpha
        D, t = self.D, self.test
        out = 2 * np.einsum("n,njkl,nkl,nbj->nb", t.area, D[:, a1], n2.hess, t.grad)
        out -= 2 * np.einsum("nijl,nl,nbij->nb", D[:, :, :, a1, :], n2.grad_int, t.hess)
        out += 2 * np.einsum("n,ni,nbi->nb", t.area, D[:, :, a1, a2, a3], t.grad)
        return out

    def rhs_n4(self, alpha, dhat: np.ndarray, n3: ElementFields, n2: ElementFields) -> np.ndarray:
        """Load for ordered ``alpha``; ``n3`` is N3 for ``alpha[1:]``, ``n2`` N2 for ``alpha[2:]``."""
        a1, a2, a3, a4 = alpha
        D, t = self.D, self.test
        out = np.einsum("n,nb->nb", dhat[a1, a2, a3, a4] - D[:, a1, a2, a3, a4], t.value_int)
        out += 2 * np.einsum("n,njkl,nkl,nbj->nb", t.area, D[:, a1], n3.hess, t.grad)
        out -= 2 * np.einsum("nijl,nl,nbij->nb", D[:, :, :, a1, :], n3.grad_int, t.hess)
        out -= np.einsum("nkl,nkl,nb->nb", D[:, a1, a2], n2.hess, t.value_int)
        out -= np.einsum("nij,n,nbij->nb", D[:, :, :, a1, a2], n2.value_int, t.hess)
        out += 4 * np.einsum("njl,nl,nbj->nb", D[:, a1, :, a2, :], n2.grad_int, t.grad)
        return out


@dataclass(frozen=True)
class HomogenizedTensor:
    tensor: BendingTensor
    raw: np.ndarray
    asymmetry: float


@dataclass(eq=False)
class CellFunctionSet:
    """Morley DOF vectors of the clamped cell functions, rows in MULTI_INDICES order."""

    space: MorleySpace
    n2: np.ndarray
    n3: np.ndarray | None = None
    n4: np.ndarray | None = None
    dhat: HomogenizedTensor | None = None

    def functions(self, order: int) -> np.ndarray:
        arr = {2: self.n2, 3: self.n3, 4: self.n4}[order]
        if arr is None:
            raise ValueError(f"cell functions of order {order} have not been solved")
        return arr

    def element_hessians(self, order: int) -> np.ndarray:
        """(n_functions, n_triangles, 2, 2) constant Hessians of each cell function."""
        cache = self.__dict__.setdefault("_hessians", {})
        if order not in cache:
            cache[order] = np.stack([self.space.element_hessians(c) for c in self.functions(order)])
        return cache[order]

    def get(self, alpha) -> np.ndarray:
        """DOFs for an arbitrary (unsorted) multi-index."""
        key = tuple(sorted(alpha))
        return self.functions(len(key))[MULTI_INDICES[len(key)].index(key)]

    def max_abs(self) -> dict[int, float]:
        return {m: float(np.max(np.abs(self.functions(m)))) for m in (2, 3, 4)
                if {2: self.n2, 3: self.n3, 4: self.n4}[m] is not None}


def solve_n2(problem: CellProblem) -> np.ndarray:
    """(3, ndofs) second-order cell functions."""
    local = np.stack([problem.rhs_n2(a) for a in MULTI_INDICES[2]], axis=-1)
    return problem.solve_local(local).T


def _fields_by_index(space, funcs, order) -> dict:
    return {alpha: ElementFields.of(space, funcs[i]) for i, alpha in enumerate(MULTI_INDICES[order])}


def symmetrized_rhs_n3(problem: CellProblem, n2: np.ndarray, alpha) -> np.ndarray:
    f2 = _fields_by_index(problem.space, n2, 2)
    perms = distinct_permutations(alpha)
    return sum(problem.rhs_n3(p, f2[tuple(sorted(p[1:]))]) for p in perms) / len(perms)


def solve_n3(problem: CellProblem, n2: np.ndarray) -> np.ndarray:
    """(4, ndofs) third-order cell functions for the sorted multi-indices."""
    local = np.stack([symmetrized_rhs_n3(problem, n2, a) for a in MULTI_INDICES[3]], axis=-1)
    return problem.solve_local(local).T


def symmetrized_rhs_n4(problem: CellProblem, n2: np.ndarray, n3: np.ndarray, dhat: np.ndarray, alpha) -> np.ndarray:
    f2 = _fields_by_index(problem.space, n2, 2)
    f3 = _fields_by_index(problem.space, n3, 3)
    perms = distinct_permutations(alpha)
    return sum(problem.rhs_n4(p, dhat, f3[tuple(sorted(p[1:]))], f2[tuple(sorted(p[2:]))])
               for p in perms) / len(perms)


def solve_n4(problem: CellProblem, n2: np.ndarray, n3: np.ndarray, dhat: HomogenizedTensor) -> np.ndarray:
    """(5, ndofs) fourth-order cell functions for the sorted multi-indices."""
    full = dhat.tensor.full()
    local = np.stack([symmetrized_rhs_n4(problem, n2, n3, full, a) for a in MULTI_INDICES[4]], axis=-1)
    return problem.solve_local(local).T


def homogenize(problem: CellProblem, n2: np.ndarray) -> HomogenizedTensor:
    """Cell average of ``D_ijkl + D_ij ab d2 N2^kl / dy_a dy_b`` (exact per element)."""
    space, D = problem.space, problem.D
    H = np.stack([space.element_hessians(row) for row in n2])  # (3, nt, 2, 2)
    pos = {alpha: i for i, alpha in enumerate(MULTI_INDICES[2])}
    Hkl = np.empty((2, 2) + H.shape[1:])
    for k in range(2):
        for l in range(2):
            Hkl[k, l] = H[pos[tuple(sorted((k, l)))]]
    volume = space.area.sum()
    raw = (np.einsum("n,nijkl->ijkl", space.area, D)
           + np.einsum("n,nijab,klnab->ijkl", space.area, D, Hkl)) / volume
    tensor = BendingTensor.from_full(raw)
    major = raw.transpose(2, 3, 0, 1)
    asym = float(np.max(np.abs(raw - major)) / np.max(np.abs(raw)))
    if asym > ASYMMETRY_WARN:
        log.warning("homogenized tensor major-symmetry defect %.2e exceeds %.0e", asym, ASYMMETRY_WARN)
    if not tensor.is_elliptic():
        raise HomogenizationError(f"homogenized tensor is not positive definite: {tensor}")
    return HomogenizedTensor(tensor, raw, asym)


def solve_cell_functions(space: MorleySpace, coef: CoefficientField, rtol: float = 1e-10) -> CellFunctionSet:
    """N2 -> N3 -> homogenized tensor -> N4 on one unit-cell space."""
    problem = CellProblem(space, coef, rtol)
    n2 = solve_n2(problem)
    n3 = solve_n3(problem, n2)
    dhat = homogenize(problem, n2)
    n4 = solve_n4(problem, n2, n3, dhat)
    return CellFunctionSet(space, n2, n3, n4, dhat)
