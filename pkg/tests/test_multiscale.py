from itertools import product

import numpy as np
import pytest

from kirchhoff_ms.cell import solve_cell_functions
from kirchhoff_ms.macro import HomogenizedSolution, recover_derivatives, solve_homogenized
from kirchhoff_ms.material import CoefficientField, isotropic_bending_tensor
from kirchhoff_ms.mesh import MaterialRaster, assign_materials, build_structured_mesh, locate_points
from kirchhoff_ms.morley import MorleySpace, assemble_bilinear
from kirchhoff_ms.multiscale import (ContractError, FieldSample, MultiscaleField, displacement_field,
                                     error_norms, reconstruct, reference_sample, relative_errors, solve_dns)

from conftest import GPA, two_phase

RASTER = MaterialRaster(np.array([[1, 0], [0, 0]]))


def build(raster, mats, eps_n, cell_n, macro_n, q=1500.0):
    cmesh = assign_materials(build_structured_mesh(cell_n, cell_n), raster)
    cells = solve_cell_functions(MorleySpace(cmesh), CoefficientField(cmesh, mats))
    sol = recover_derivatives(solve_homogenized(MorleySpace(build_structured_mesh(macro_n, macro_n)),
                                                cells.dhat.tensor, q))
    return MultiscaleField(sol, cells, 1.0 / eps_n)


def dns(raster, mats, eps_n, n, q=1500.0):
    mesh = assign_materials(build_structured_mesh(n, n), raster, 1.0 / eps_n)
    return solve_dns(mesh, CoefficientField(mesh, mats), q, epsilon=1.0 / eps_n, raster=raster)


@pytest.fixture(scope="module")
def small():
    mats = two_phase(E1=2 * GPA, nu=0.3)
    return build(RASTER, mats, 4, 8, 16), mats


def test_homogeneous_reconstruction_is_w0(rng):
    D = isotropic_bending_tensor(50 * GPA, 0.2)
    f = build(MaterialRaster.uniform(), {0: D}, 4, 4, 8)
    x = rng.random((100, 2))
    s = f.sample_all(x)
    for k in (2, 3, 4):
        assert np.allclose(s[k].value, s[0].value, atol=1e-14)
        assert np.allclose(s[k].grad, s[0].grad, atol=1e-12)


def _einstein(field, x):
    """Brute-force sum over all ordered multi-indices."""
    sol, cells, eps = field.solution, field.cells, field.epsilon
    tri, bary = locate_points(sol.space.mesh, x)
    y = np.mod(x / eps, 1.0)
    cs = cells.space

    def d(alpha):
        if len(alpha) > 4:
            return np.zeros(len(x))
        return sol.interpolate(len(alpha), tri, bary)[:, _col(alpha)]

    v = sol.space.evaluate(sol.dofs, x)
    g = sol.space.evaluate(sol.dofs, x, 1)
    for m in (2, 3, 4):
        for alpha in product((0, 1), repeat=m):
            u = cells.get(alpha)
            N, dN = cs.evaluate(u, y), cs.evaluate(u, y, 1) / eps
            v = v + eps**m * N * d(alpha)
            g = g + eps**m * (dN * d(alpha)[:, None]
                              + N[:, None] * np.column_stack([d(alpha + (i,)) for i in (0, 1)]))
    return v, g


def _col(alpha):
    from kirchhoff_ms.macro import DERIV_INDICES
    return DERIV_INDICES[len(alpha)].index(tuple(sorted(alpha)))


def test_symmetrized_sum_matches_full_einstein_sum(small, rng):
    field, _ = small
    x = 0.02 + 0.96 * rng.random((50, 2))
    v, g = reconstruct(field, x)
    ref_v, ref_g = _einstein(field, x)
    assert np.allclose(v, ref_v, rtol=1e-10, atol=1e-10 * np.abs(ref_v).max())
    assert np.allclose(g, ref_g, rtol=1e-10, atol=1e-10 * np.abs(ref_g).max())


def test_corrector_scales_like_eps_squared(small, rng):
    field, _ = small
    x = rng.random((20000, 2))
    amp = []
    for n in (8, 16):
        s = MultiscaleField(field.solution, field.cells, 1.0 / n, order=2).sample_all(x, [0, 2])
        amp.append(np.sqrt(np.mean((s[2].value - s[0].value) ** 2)))
    assert amp[0] / amp[1] == pytest.approx(4.0, rel=0.3)


def test_displacement_field(small, rng):
    field, _ = small
    x = rng.random((10, 2))
    w, g = reconstruct(field, x)
    u1, u2, u3 = displacement_field(field, x, 0.0)
    assert np.all(u1 == 0) and np.all(u2 == 0) and np.array_equal(u3, w)
    a = displacement_field(field, x, 0.3)
    b = displacement_field(field, x, -0.3)
    assert np.array_equal(a[0], -b[0]) and np.array_equal(a[1], -b[1])
    assert np.allclose(a[0], -0.3 * g[:, 0])
    with pytest.raises(ContractError):
        displacement_field(field, x, 0.6, thickness=1.0)
    # homogeneous plate with w = x1^2: u1 = -2 x3 x1
    D = isotropic_bending_tensor(1.0, 0.3)
    h = build(MaterialRaster.uniform(), {0: D}, 2, 2, 4)
    space = h.solution.space
    sol = recover_derivatives(HomogenizedSolution(space, space.interpolate(
        lambda p: p[:, 0] ** 2, lambda p: np.column_stack([2 * p[:, 0], 0 * p[:, 0]]))))
    u1, u2, _ = displacement_field(MultiscaleField(sol, h.cells, 0.5), x, 0.25)
    assert np.allclose(u1, -0.5 * x[:, 0], atol=1e-10)
    assert np.allclose(u2, 0, atol=1e-10)
    u = displacement_field(MultiscaleField(sol, h.cells, 0.5), x[0], 0.25)
    assert np.ndim(u[0]) == 0


def test_dns_homogeneous_equals_homogenized_solve():
    D = isotropic_bending_tensor(50 * GPA, 0.2)
    mesh = build_structured_mesh(16, 16)
    _, u = solve_dns(mesh, CoefficientField.constant(mesh, D), 1500.0)
    v = solve_homogenized(MorleySpace(mesh), D, 1500.0).dofs
    assert np.array_equal(u, v)


def test_dns_energy_positive(small):
    _, mats = small
    space, u = dns(RASTER, mats, 4, 16)
    A = assemble_bilinear(space, CoefficientField(space.mesh, mats))
    assert u @ (A @ u) > 0


def test_identical_fields_have_zero_error(small):
    _, mats = small
    space, u = dns(RASTER, mats, 4, 16)
    _, w, ref = reference_sample(space, u)
    assert relative_errors(ref, ref, w) == (0.0, 0.0, 0.0)
    zero = FieldSample(0 * ref.value, 0 * ref.grad, 0 * ref.hess)
    assert relative_errors(zero, ref, w) == pytest.approx((1.0, 1.0, 1.0))
    with pytest.raises(ContractError):
        relative_errors(ref, zero, w)


def test_errors_invariant_to_load_and_stiffness_scaling(small):
    field, mats = small
    ref_rows = error_norms(field, *dns(RASTER, mats, 4, 32))
    for q, s in ((3000.0, 1.0), (1500.0, 10.0)):
        scaled = {k: v.scaled(s) for k, v in mats.items()}
        f = build(RASTER, scaled, 4, 8, 16, q=q)
        rows = error_norms(f, *dns(RASTER, scaled, 4, 32, q=q))
        for a, b in zip(rows, ref_rows):
            assert (a.rel_L2, a.rel_H1semi, a.rel_H2broken) == pytest.approx(
                (b.rel_L2, b.rel_H1semi, b.rel_H2broken), rel=1e-8)
    assert [r.kind for r in ref_rows] == ["omega0", "omega2", "omega3", "omega4"]


def test_contract_errors(small):
    field, mats = small
    with pytest.raises(ContractError):
        MultiscaleField(field.solution, field.cells, 0.25, order=1)
    bare = HomogenizedSolution(field.solution.space, field.solution.dofs)
    with pytest.raises(ContractError):
        MultiscaleField(bare, field.cells, 0.25)
    assert MultiscaleField(bare, field.cells, 0.25, order=0).order == 0
    mesh = assign_materials(build_structured_mesh(12, 12), MaterialRaster.uniform(), 0.25)
    with pytest.raises(ContractError):
        solve_dns(mesh, CoefficientField(mesh, mats), 1.0, epsilon=0.25, raster=RASTER)
