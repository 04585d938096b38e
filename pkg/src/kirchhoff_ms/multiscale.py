"""Multiscale reconstruction, direct fine-scale reference solve and error norms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cell import MULTI_INDICES, CellFunctionSet, multiplicity
from .macro import DERIV_INDICES, HomogenizedSolution
from .material import CoefficientField
from .mesh import MaterialRaster, MeshError, TriMesh, check_raster_alignment, locate_points
from .morley import LinearSystem, MorleySpace, apply_clamped_bc, assemble_bilinear, assemble_load, solve

ORDERS = (0, 2, 3, 4)
CHUNK = 100_000


class ContractError(ValueError):
    pass


@dataclass
class FieldSample:
    """Value, gradient and Hessian of a field at a batch of points."""

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    @classmethod
    def concat(cls, parts) -> "FieldSample":
        return cls(*(np.concatenate([getattr(p, n) for p in parts]) for n in ("value", "grad", "hess")))


def _index_key(alpha) -> tuple:
    return tuple(sorted(alpha))


@dataclass(eq=False)
class MultiscaleField:
    """Sampler for the order-k multiscale deflection (k in 0, 2, 3, 4).

    The gradient drops the ``eps^4 N4 d5 w0`` chain-rule term, and the
    Hessian every term that would need derivatives of order five or more.
    """

    solution: HomogenizedSolution
    cells: CellFunctionSet
    epsilon: float
    order: int = 4

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ContractError(f"order must be one of {ORDERS}")
        for m in range(2, self.order + 1):
            try:
                self.cells.functions(m)
            except ValueError as exc:
                raise ContractError(str(exc)) from None
        if self.order >= 2 and self.solution.derivs is None:
            raise ContractError("recovered derivatives are required for order >= 2")

    def with_order(self, order: int) -> "MultiscaleField":
        return MultiscaleField(self.solution, self.cells, self.epsilon, order)

    def sample_all(self, x: np.ndarray, orders=None) -> dict[int, FieldSample]:
        """Samples for several orders at once, sharing point location work."""
        orders = [o for o in (orders or ORDERS) if o <= self.order]
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        parts = [self._sample_chunk(x[s:s + CHUNK], orders) for s in range(0, len(x), CHUNK)]
        return {o: FieldSample.concat([p[o] for p in parts]) for o in orders}

    def sample(self, x) -> FieldSample:
        return self.sample_all(x, [self.order])[self.order]

    def __call__(self, x):
        """(value, gradient) at points ``x``."""
        s = self.sample(x)
        return s.value, s.grad

    def _sample_chunk(self, x: np.ndarray, orders) -> dict[int, FieldSample]:
        sol, eps = self.solution, self.epsilon
        space = sol.space
        tri, bary = locate_points(space.mesh, x)
        w0 = FieldSample(space.evaluate_in(sol.dofs, tri, x, 0),
                         space.evaluate_in(sol.dofs, tri, x, 1),
                         space.element_hessians(sol.dofs)[tri])
        out = {0: w0} if 0 in orders else {}
        top = max(orders)
        if top < 2:
            return out

        derivs = {m: sol.interpolate(m, tri, bary) for m in (2, 3, 4)}

        def deriv(alpha):
            if len(alpha) > 4:
                return np.zeros(len(x))
            return derivs[len(alpha)][:, DERIV_INDICES[len(alpha)].index(_index_key(alpha))]

        cspace = self.cells.space
        y = np.clip(np.mod(x / eps, 1.0), 0.0, 1.0)
        ctri, _ = locate_points(cspace.mesh, y)
        phi = cspace.basis_at(ctri, y, 0)            # (n, 6)
        dphi = cspace.basis_at(ctri, y, 1)           # (n, 6, 2)
        cdofs = cspace.element_dofs[ctri]

        value, grad, hess = w0.value.copy(), w0.grad.copy(), w0.hess.copy()
        for m in range(2, top + 1):
            funcs = self.cells.functions(m)
            loc = funcs[:, cdofs]                    # (f, n, 6)
            N_all = np.matmul(loc[:, :, None, :], phi[:, :, None])[..., 0, 0]  # (f, n)
            dN_all = np.matmul(loc[:, :, None, :], dphi)[:, :, 0] / eps  # (f, n, 2)
            hN_all = self.cells.element_hessians(m)[:, ctri] / eps**2  # (f, n, 2, 2)
            for f, alpha in enumerate(MULTI_INDICES[m]):
                N, dN, hN = N_all[f], dN_all[f], hN_all[f]
                F = deriv(alpha)
                dF = np.stack([deriv(alpha + (i,)) for i in range(2)], axis=-1)
                hF = np.stack([np.stack([deriv(alpha + (i, j)) for j in range(2)], -1) for i in range(2)], -2)
                c = multiplicity(alpha) * eps**m
                value += c * N * F
                grad += c * (dN * F[:, None] + N[:, None] * dF)
                cross = dN[:, :, None] * dF[:, None, :]
                hess += c * (hN * F[:, None, None] + cross + cross.transpose(0, 2, 1)
                             + N[:, None, None] * hF)
            if m in orders:
                out[m] = FieldSample(value.copy(), grad.copy(), hess.copy())
        return out


def reconstruct(field: MultiscaleField, x) -> tuple[np.ndarray, np.ndarray]:
    """Value and gradient of the order-``field.order`` multiscale deflection."""
    x = np.asarray(x, dtype=float)
    v, g = field(x.reshape(-1, 2))
    if x.ndim == 1:
        return v[0], g[0]
    return v, g


def displacement_field(field: MultiscaleField, x, x3, thickness: float | None = None):
    """Kirchhoff displacements ``(-x3 dw/dx1, -x3 dw/dx2, w)``."""
    x3 = np.asarray(x3, dtype=float)
    if thickness is not None and np.any(np.abs(x3) > thickness / 2 + 1e-14):
        raise ContractError("|x3| must not exceed half the plate thickness")
    w, g = reconstruct(field, x)
    return -x3 * g[..., 0], -x3 * g[..., 1], w


def solve_dns(mesh: TriMesh, coef: CoefficientField, q, g1=None, g2=None, *,
              epsilon: float | None = None, raster: MaterialRaster | None = None,
              rtol: float = 1e-10) -> tuple[MorleySpace, np.ndarray]:
    """Morley solve of the heterogeneous plate on a mesh that resolves every cell."""
    if raster is not None and epsilon is not None:
        try:
            check_raster_alignment(mesh, raster, epsilon)
        except MeshError as exc:
            raise ContractError(str(exc)) from None
    space = MorleySpace(mesh)
    system = apply_clamped_bc(LinearSystem(assemble_bilinear(space, coef), assemble_load(space, q)),
                              space, g1, g2)
    return space, solve(system, rtol)


@dataclass
class ErrorRow:
    kind: str
    rel_L2: float
    rel_H1semi: float
    rel_H2broken: float
    dofs: int
    seconds: float = float("nan")


@dataclass
class ErrorReport:
    rows: list[ErrorRow] = field(default_factory=list)
    dns_dofs: int = 0
    timings: dict = field(default_factory=dict)

    def row(self, kind: str) -> ErrorRow:
        return next(r for r in self.rows if r.kind == kind)


def reference_sample(space: MorleySpace, dofs) -> tuple[np.ndarray, np.ndarray, FieldSample]:
    """DNS quadrature points, weights and the reference field sampled there."""
    qp = space.quad_points
    tri = np.arange(space.mesh.n_triangles)[:, None]
    v = space.evaluate_in(dofs, tri, qp, 0)
    g = space.evaluate_in(dofs, tri, qp, 1)
    H = np.broadcast_to(space.element_hessians(dofs)[:, None], qp.shape[:2] + (2, 2))
    return qp.reshape(-1, 2), space.quad_weights.ravel(), FieldSample(v.ravel(), g.reshape(-1, 2), H.reshape(-1, 2, 2))


def relative_errors(approx: FieldSample, ref: FieldSample, weights: np.ndarray) -> tuple[float, float, float]:
    """Relative L2, H1-seminorm and broken H2-seminorm errors by quadrature."""
    def norm(v, axes):
        return np.sqrt(np.sum(weights * (np.sum(v**2, axis=axes) if axes else v**2)))

    out = []
    for name, axes in (("value", ()), ("grad", (-1,)), ("hess", (-1, -2))):
        den = norm(getattr(ref, name), axes)
        if den == 0:
            raise ContractError(f"reference {name} norm is zero")
        out.append(float(norm(getattr(approx, name) - getattr(ref, name), axes) / den))
    return tuple(out)


def error_norms(field: MultiscaleField, dns_space: MorleySpace, dns_dofs, orders=ORDERS) -> list[ErrorRow]:
    """e_k = w^(k eps) - w_DNS for each order, integrated on the DNS mesh."""
    pts, w, ref = reference_sample(dns_space, dns_dofs)
    samples = field.sample_all(pts, orders)
    ndofs = field.solution.space.ndofs
    return [ErrorRow(f"omega{k}", *relative_errors(samples[k], ref, w), dofs=ndofs) for k in orders]
