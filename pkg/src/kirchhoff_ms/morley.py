"""Morley nonconforming element for fourth-order plate operators.

Degrees of freedom are all vertex values followed by all edge-midpoint
normal derivatives, taken along the global edge normal (the +90 degree
rotation of the low -> high vertex direction of the edge). The local shape
functions are full quadratics built per element by inverting the 6x6 matrix
of Morley functionals applied to monomials in a centred, scaled frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh, locate_points

# Dunavant 6-point rule, exact for degree 4 (barycentric points, weights sum to 1)
_A, _WA = 0.445948490915965, 0.223381589678011
_B, _WB = 0.091576213509771, 0.109951743655322
QUAD_POINTS = np.array([
    [_A, _A, 1 - 2 * _A], [_A, 1 - 2 * _A, _A], [1 - 2 * _A, _A, _A],
    [_B, _B, 1 - 2 * _B], [_B, 1 - 2 * _B, _B], [1 - 2 * _B, _B, _B],
])
QUAD_WEIGHTS = np.array([_WA, _WA, _WA, _WB, _WB, _WB])


class GeometryError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


def _monomials(xi, eta):
    one = np.ones_like(xi)
    return np.stack([one, xi, eta, xi * xi, xi * eta, eta * eta], axis=-1)


def _monomial_gradients(xi, eta, s):
    """d/dx and d/dy of the scaled monomials; ``s`` broadcasts against xi."""
    z = np.zeros_like(xi)
    o = np.ones_like(xi)
    gx = np.stack([z, o, z, 2 * xi, eta, z], axis=-1) / s[..., None]
    gy = np.stack([z, z, o, z, xi, 2 * eta], axis=-1) / s[..., None]
    return np.stack([gx, gy], axis=-1)


def _monomial_hessians(s):
    """(n, 6, 2, 2) constant second derivatives of the scaled monomials."""
    H = np.zeros((len(s), 6, 2, 2))
    inv = 1.0 / s**2
    H[:, 3, 0, 0] = 2 * inv
    H[:, 4, 0, 1] = inv
    H[:, 4, 1, 0] = inv
    H[:, 5, 1, 1] = 2 * inv
    return H


def element_basis(p: np.ndarray, normals: np.ndarray):
    """Monomial coefficients of the Morley basis on triangles.

    ``p`` is (n, 3, 2) vertex coordinates, ``normals`` (n, 3, 2) the unit
    normals used for the three edge functionals (edge e opposite vertex e).
    Returns ``(centre, scale, C)`` with ``C[:, m, b]`` the coefficient of
    monomial ``m`` in basis function ``b``.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim == 2:
        p = p[None]
        normals = np.asarray(normals, dtype=float)[None]
    centre = p.mean(axis=1)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    scale = np.sqrt(2.0 * area)
    diam = np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1)
    if np.any(area <= 1e-12 * diam**2):
        raise GeometryError("degenerate triangle")

    local = (p - centre[:, None]) / scale[:, None, None]
    mid = 0.5 * (local[:, [1, 2, 0]] + local[:, [2, 0, 1]])
    V = np.empty((len(p), 6, 6))
    V[:, :3] = _monomials(local[..., 0], local[..., 1])
    g = _monomial_gradients(mid[..., 0], mid[..., 1], np.broadcast_to(scale[:, None], mid.shape[:2]))
    V[:, 3:] = np.einsum("nemd,ned->nem", g, normals)
    Vs = V.copy()
    Vs[:, 3:] *= scale[:, None, None]
    cond = np.linalg.cond(Vs)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise GeometryError("near-singular Morley functional matrix")
    C = np.linalg.inv(V)
    return centre, scale, C


@dataclass(eq=False)
class MorleySpace:
    mesh: TriMesh

    def __post_init__(self):
        m = self.mesh
        p = m.vertices[m.triangles]
        e = m.edges[m.tri_edges]
        d = m.vertices[e[..., 1]] - m.vertices[e[..., 0]]
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        self.edge_normals_local = np.stack([-d[..., 1], d[..., 0]], axis=-1)
        self.centre, self.scale, self.coeffs = element_basis(p, self.edge_normals_local)
        self.element_dofs = np.concatenate([m.triangles, m.n_vertices + m.tri_edges], axis=1)

    @property
    def ndofs(self) -> int:
        return self.mesh.n_vertices + self.mesh.n_edges

    @cached_property
    def area(self) -> np.ndarray:
        return self.mesh.signed_areas()

    @cached_property
    def global_edge_normals(self) -> np.ndarray:
        m = self.mesh
        d = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.column_stack([-d[:, 1], d[:, 0]])

    @cached_property
    def hessians(self) -> np.ndarray:
        """(nt, 6, 2, 2) constant Hessian of each local basis function."""
        Hm = _monomial_hessians(self.scale)
        return np.einsum("nmb,nmij->nbij", self.coeffs, Hm)

    @cached_property
    def lambda_gradients(self) -> np.ndarray:
        """(nt, 3, 2) gradients of the barycentric (P1 hat) functions."""
        p = self.mesh.vertices[self.mesh.triangles]
        a = self.area
        g = np.empty((len(p), 3, 2))
        for v in range(3):
            q1 = p[:, (v + 1) % 3]
            q2 = p[:, (v + 2) % 3]
            g[:, v, 0] = (q1[:, 1] - q2[:, 1]) / (2 * a)
            g[:, v, 1] = (q2[:, 0] - q1[:, 0]) / (2 * a)
        return g

    @cached_property
    def quad_points(self) -> np.ndarray:
        """(nt, nq, 2) physical quadrature points."""
        p = self.mesh.vertices[self.mesh.triangles]
        return np.einsum("qv,nvd->nqd", QUAD_POINTS, p)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """(nt, nq) weights including the element area."""
        return self.area[:, None] * QUAD_WEIGHTS[None, :]

    @cached_property
    def quad_values(self) -> np.ndarray:
        """(nt, nq, 6) basis values at the quadrature points."""
        return self.basis_at(np.arange(self.mesh.n_triangles)[:, None], self.quad_points, 0)

    @cached_property
    def quad_gradients(self) -> np.ndarray:
        """(nt, nq, 6, 2) basis gradients at the quadrature points."""
        return self.basis_at(np.arange(self.mesh.n_triangles)[:, None], self.quad_points, 1)

    def basis_at(self, tri: np.ndarray, x: np.ndarray, order: int) -> np.ndarray:
        """Local basis (order 0), gradients (1) or Hessians (2) at points ``x`` in triangles ``tri``.

        ``tri`` broadcasts against ``x[..., 0]``.
        """
        tri = np.broadcast_to(tri, x.shape[:-1])
        C = self.coeffs[tri]
        if order == 2:
            return self.hessians[tri]
        s = self.scale[tri]
        local = (x - self.centre[tri]) / s[..., None]
        if order == 0:
            return np.matmul(_monomials(local[..., 0], local[..., 1])[..., None, :], C)[..., 0, :]
        if order == 1:
            g = _monomial_gradients(local[..., 0], local[..., 1], s)
            return np.matmul(np.swapaxes(C, -1, -2), g)
        raise ValueError(f"order must be 0, 1 or 2, got {order}")

    def local_dofs(self, dofs: np.ndarray) -> np.ndarray:
        """(nt, 6, ...) element-local DOF values."""
        return np.asarray(dofs)[self.element_dofs]

    def evaluate_in(self, dofs, tri, x, order: int = 0) -> np.ndarray:
        """Evaluate a Morley function at points ``x`` known to lie in triangles ``tri``."""
        tri = np.broadcast_to(tri, x.shape[:-1])
        loc = np.asarray(dofs)[self.element_dofs[tri]]
        basis = self.basis_at(tri, x, order)
        if order == 0:
            return np.sum(basis * loc, axis=-1)
        if order == 1:
            return np.matmul(loc[..., None, :], basis)[..., 0, :]
        return np.einsum("...bij,...b->...ij", basis, loc)

    def evaluate(self, dofs, x, order: int = 0) -> np.ndarray:
        """Value, gradient or Hessian of a Morley function at arbitrary points."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x.reshape(-1, 2)
        tri, _ = locate_points(self.mesh, pts)
        out = self.evaluate_in(dofs, tri, pts, order)
        return out[0] if single else out.reshape(x.shape[:-1] + out.shape[1:])

    def element_hessians(self, dofs) -> np.ndarray:
        """(nt, 2, 2) constant Hessian of a Morley function on each element."""
        return np.einsum("nbij,nb->nij", self.hessians, self.local_dofs(dofs))

    def interpolate(self, f, grad_f) -> np.ndarray:
        """Morley interpolant: vertex values of ``f``, midpoint normal derivatives of ``grad_f``."""
        m = self.mesh
        out = np.empty(self.ndofs)
        out[:m.n_vertices] = f(m.vertices)
        g = np.asarray(grad_f(m.edge_midpoints()))
        out[m.n_vertices:] = np.einsum("ed,ed->e", g, self.global_edge_normals)
        return out

    def broken_norms(self, dofs, f=None, grad_f=None, hess_f=None) -> dict:
        """Element-wise L2, H1-seminorm and broken H2-seminorm of ``u_h - u`` (``u`` optional)."""
        qp, qw = self.quad_points, self.quad_weights
        tri = np.arange(self.mesh.n_triangles)[:, None]
        v = self.evaluate_in(dofs, tri, qp, 0)
        g = self.evaluate_in(dofs, tri, qp, 1)
        H = np.broadcast_to(self.element_hessians(dofs)[:, None], qp.shape[:2] + (2, 2))
        if f is not None:
            v = v - f(qp)
        if grad_f is not None:
            g = g - grad_f(qp)
        if hess_f is not None:
            H = H - hess_f(qp)
        return {
            "L2": float(np.sqrt(np.sum(qw * v**2))),
            "H1": float(np.sqrt(np.sum(qw * np.sum(g**2, axis=-1)))),
            "H2": float(np.sqrt(np.sum(qw * np.sum(H**2, axis=(-1, -2))))),
        }


@dataclass(eq=False)
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _scatter_matrix(space: MorleySpace, Ke: np.ndarray) -> sp.csr_matrix:
    dofs = space.element_dofs
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(space.ndofs, space.ndofs)).tocsr()
    A.sum_duplicates()
    return A


def element_stiffness(space: MorleySpace, Dfull: np.ndarray) -> np.ndarray:
    """(nt, 6, 6) exact element matrices ``area * D_ijkl H_b,kl H_a,ij``."""
    H = space.hessians
    if Dfull.ndim == 4:
        return np.einsum("n,ijkl,nbkl,naij->nab", space.area, Dfull, H, H)
    return np.einsum("n,nijkl,nbkl,naij->nab", space.area, Dfull, H, H)


def assemble_bilinear(space: MorleySpace, D) -> sp.csr_matrix:
    """Global matrix of ``sum_K int_K D_ijkl d2u/dx_k dx_l d2v/dx_i dx_j``.

    ``D`` is a CoefficientField, a BendingTensor (constant) or a raw
    (2,2,2,2) / (nt,2,2,2,2) array.
    """
    if hasattr(D, "full_per_element"):
        Dfull = D.full_per_element()
    elif hasattr(D, "full"):
        Dfull = D.full()
    else:
        Dfull = np.asarray(D, dtype=float)
    return _scatter_matrix(space, element_stiffness(space, Dfull))


def scatter_vector(space: MorleySpace, local: np.ndarray) -> np.ndarray:
    """Sum element-local vectors (nt, 6[, k]) into the global DOF vector."""
    local = np.asarray(local)
    dofs = space.element_dofs.ravel()
    if local.ndim == 2:
        return np.bincount(dofs, weights=local.ravel(), minlength=space.ndofs)
    flat = local.reshape(-1, local.shape[-1])
    return np.stack([np.bincount(dofs, weights=flat[:, k], minlength=space.ndofs)
                     for k in range(flat.shape[1])], axis=1)


def load_at_quadrature(space: MorleySpace, q) -> np.ndarray:
    """(nt, nq) load values from a constant, a per-element array or a callable."""
    shape = space.quad_points.shape[:2]
    if callable(q):
        return np.broadcast_to(np.asarray(q(space.quad_points), dtype=float), shape)
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        return np.full(shape, float(q))
    if q.shape == (space.mesh.n_triangles,):
        return np.broadcast_to(q[:, None], shape)
    raise ValueError(f"cannot interpret load of shape {q.shape}")


def assemble_load(space: MorleySpace, q) -> np.ndarray:
    """``int q phi`` per DOF with the degree-4 rule."""
    qv = load_at_quadrature(space, q)
    local = np.einsum("nq,nq,nqb->nb", space.quad_weights, qv, space.quad_values)
    return scatter_vector(space, local)


def _boundary_values(g, x, *extra):
    if g is None:
        return np.zeros(len(x))
    if callable(g):
        return np.asarray(g(x, *extra), dtype=float).reshape(len(x))
    return np.full(len(x), float(g))


def clamped_values(space: MorleySpace, g1=None, g2=None) -> tuple[np.ndarray, np.ndarray]:
    """Constrained DOF indices and values for ``w = g1``, ``dw/dn = g2`` on the boundary.

    ``g1(x)`` receives boundary vertex coordinates; ``g2(x, n)`` receives edge
    midpoints and outward unit normals. Constants are accepted for either.
    """
    m = space.mesh
    bv = np.flatnonzero(m.boundary_vertex)
    be = np.flatnonzero(m.boundary_edge)
    # outward normal of a boundary edge = sign(owner slot) * global normal
    owner_sign = np.zeros(m.n_edges)
    owner_sign[m.tri_edges.ravel()] = m.tri_edge_sign.ravel()
    sign = owner_sign[be]
    n_out = space.global_edge_normals[be] * sign[:, None]
    if callable(g2):
        vals_e = np.asarray(g2(m.edge_midpoints()[be], n_out), dtype=float).reshape(len(be))
    else:
        vals_e = _boundary_values(g2, be)
    idx = np.concatenate([bv, m.n_vertices + be])
    vals = np.concatenate([_boundary_values(g1, m.vertices[bv]), sign * vals_e])
    return idx, vals


def apply_clamped_bc(system: LinearSystem, space: MorleySpace, g1=None, g2=None) -> LinearSystem:
    """Symmetric elimination of clamped boundary DOFs (known columns to the RHS, identity rows)."""
    idx, vals = clamped_values(space, g1, g2)
    n = space.ndofs
    A = system.matrix.tocsr()
    x_c = np.zeros(n)
    x_c[idx] = vals
    rhs = np.array(system.rhs, dtype=float, copy=True)
    Ax = A @ x_c
    if rhs.ndim == 2:
        rhs -= Ax[:, None]
        rhs[idx] = vals[:, None]
    else:
        rhs -= Ax
        rhs[idx] = vals
    keep = np.ones(n)
    keep[idx] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K + sp.diags(1.0 - keep)).tocsr()
    A.eliminate_zeros()
    return LinearSystem(A, rhs, idx, vals)


class Factorization:
    """Symmetrically scaled sparse LU of an SPD matrix, reusable across right-hand sides."""

    def __init__(self, A: sp.spmatrix):
        self.A = A.tocsc()
        d = np.abs(self.A.diagonal())
        self.s = 1.0 / np.sqrt(np.where(d > 0, d, 1.0))
        S = sp.diags(self.s)
        self.lu = spla.splu((S @ self.A @ S).tocsc(), permc_spec="MMD_AT_PLUS_A",
                            diag_pivot_thresh=0.0, options={"SymmetricMode": True})

    def apply(self, b: np.ndarray) -> np.ndarray:
        s = self.s if b.ndim == 1 else self.s[:, None]
        return s * self.lu.solve(s * b)


def solve(system: LinearSystem, rtol: float = 1e-10, factor: Factorization | None = None) -> np.ndarray:
    """Direct sparse solve with iterative refinement; Jacobi-CG if the factorisation fails.

    Convergence is judged by the normwise backward error
    ``|b - A x| / (| |A| |x| | + |b|)``; the plain ``|b - A x| / |b|`` has a
    rounding floor of ``eps * cond``-size for fine fourth-order meshes.
    """
    A = system.matrix.tocsc()
    b = np.asarray(system.rhs, dtype=float)
    x = None
    try:
        factor = factor if factor is not None else Factorization(A)
        x = factor.apply(b)
        for _ in range(5):
            r = b - A @ x
            if backward_error(A, x, b, r) <= rtol:
                return x
            x = x + factor.apply(r)
    except RuntimeError:
        x = None
    if x is None or not np.all(np.isfinite(x)):
        x = _cg_fallback(A, b, rtol)
    res = backward_error(A, x, b)
    if res > rtol:
        raise SolverError(f"linear solve did not converge: backward error {res:.3e} > {rtol:.1e}")
    return x


def backward_error(A, x, b, r=None) -> float:
    """Largest column-wise normwise backward error of ``x`` for ``A x = b``."""
    if r is None:
        r = b - A @ x
    absAx = abs(A) @ np.abs(x)
    r, b, absAx = (v.reshape(len(v), -1) for v in (r, b, absAx))
    den = np.linalg.norm(absAx, axis=0) + np.linalg.norm(b, axis=0)
    nr = np.linalg.norm(r, axis=0)
    return float(np.max(np.where(den > 0, nr / np.where(den > 0, den, 1.0), nr)))


def relative_residual(A, x, b) -> float:
    """Largest column-wise ``|b - A x| / |b|``."""
    r = (b - A @ x).reshape(len(b), -1)
    b = b.reshape(len(b), -1)
    nb = np.linalg.norm(b, axis=0)
    nr = np.linalg.norm(r, axis=0)
    return float(np.max(np.where(nb > 0, nr / np.where(nb > 0, nb, 1.0), nr)))


def _cg_fallback(A, b, rtol):
    d = A.diagonal()
    M = sp.diags(1.0 / np.where(d != 0, d, 1.0))
    cols = [b] if b.ndim == 1 else [b[:, k] for k in range(b.shape[1])]
    out = []
    for col in cols:
        x, _ = spla.cg(A, col, rtol=rtol * 1e-2, atol=0.0, M=M, maxiter=20 * len(col))
        out.append(x)
    return out[0] if b.ndim == 1 else np.column_stack(out)


def save_matrix_coo(path, A: sp.spmatrix) -> None:
    """Debug dump: one ``row col value`` triple per line."""
    C = A.tocoo()
    np.savetxt(path, np.column_stack([C.row, C.col, C.data]), fmt=["%d", "%d", "%.17g"])
