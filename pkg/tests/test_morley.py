import numpy as np
import pytest
import scipy.sparse as sp
from dataclasses import replace
from hypothesis import assume, given
from hypothesis import strategies as st

from kirchhoff_ms.material import CoefficientField, isotropic_bending_tensor
from kirchhoff_ms.mesh import MaterialRaster, assign_materials, build_structured_mesh
from kirchhoff_ms.morley import (QUAD_POINTS, QUAD_WEIGHTS, Factorization, GeometryError, LinearSystem,
                                 MorleySpace, apply_clamped_bc, assemble_bilinear, assemble_load,
                                 backward_error, element_basis, element_stiffness, relative_residual,
                                 save_matrix_coo, solve)

from conftest import single_triangle_mesh

UNIT = isotropic_bending_tensor(12.0, 0.0)


def _poly_eval(centre, scale, C, x):
    """Independent evaluation of the basis from its monomial coefficients."""
    xi, eta = (x - centre) / scale
    return np.array([1, xi, eta, xi * xi, xi * eta, eta * eta]) @ C


def _functionals(p, normals, centre, scale, C, h=1e-6):
    F = np.empty((6, 6))
    for v in range(3):
        F[v] = _poly_eval(centre, scale, C, p[v])
    for e in range(3):
        a, b = p[(e + 1) % 3], p[(e + 2) % 3]
        m = 0.5 * (a + b)
        n = normals[e]
        # central difference is exact for quadratics up to rounding
        F[3 + e] = (_poly_eval(centre, scale, C, m + h * n) - _poly_eval(centre, scale, C, m - h * n)) / (2 * h)
    return F


def _outward(p):
    n = []
    for e in range(3):
        d = p[(e + 2) % 3] - p[(e + 1) % 3]
        n.append(np.array([d[1], -d[0]]) / np.linalg.norm(d))
    return np.array(n)


def test_reference_basis_is_dual():
    p = np.array([[0.0, 0], [1, 0], [0, 1]])
    n = _outward(p)
    c, s, C = element_basis(p, n)
    F = _functionals(p, n, c[0], s[0], C[0])
    assert np.allclose(F, np.eye(6), atol=1e-8)


coords = st.floats(-2, 2, allow_nan=False)


@given(st.lists(st.tuples(coords, coords), min_size=3, max_size=3))
def test_random_triangle_basis_is_dual(pts):
    p = np.array(pts)
    d1, d2 = p[1] - p[0], p[2] - p[0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    diam = max(np.linalg.norm(d1), np.linalg.norm(d2), np.linalg.norm(p[2] - p[1]))
    assume(area > 0.05 * diam**2 and diam > 0.1)
    n = _outward(p)
    c, s, C = element_basis(p, n)
    F = _functionals(p, n, c[0], s[0], C[0])
    assert np.allclose(F, np.eye(6), atol=1e-6)


def test_degenerate_triangle_rejected():
    p = np.array([[0.0, 0], [1, 0], [2, 1e-15]])
    with pytest.raises(GeometryError):
        element_basis(p, _outward(p))


def test_space_counts_and_signs():
    m = build_structured_mesh(3, 2)
    V = MorleySpace(m)
    assert V.ndofs == m.n_vertices + m.n_edges
    assert V.element_dofs.shape == (m.n_triangles, 6)
    # the slot normal is the global one; sign says whether it points outward
    cen = m.centroids()
    mid = m.edge_midpoints()[m.tri_edges]
    outward = np.sign(np.einsum("nej,nej->ne", V.edge_normals_local, mid - cen[:, None]))
    assert np.array_equal(outward, m.tri_edge_sign)


def test_reproduces_constants_linears_and_quadratics(rng):
    V = MorleySpace(build_structured_mesh(4, 4))
    x = rng.random((100, 2))
    cases = [
        (lambda p: np.ones(len(p)), lambda p: np.zeros((len(p), 2))),
        (lambda p: p[:, 0], lambda p: np.tile([1.0, 0.0], (len(p), 1))),
    ]
    a = rng.normal(size=6)
    quad = (lambda p: a[0] + a[1] * p[..., 0] + a[2] * p[..., 1] + a[3] * p[..., 0] ** 2
            + a[4] * p[..., 0] * p[..., 1] + a[5] * p[..., 1] ** 2,
            lambda p: np.stack([a[1] + 2 * a[3] * p[..., 0] + a[4] * p[..., 1],
                                a[2] + a[4] * p[..., 0] + 2 * a[5] * p[..., 1]], -1))
    for f, g in cases + [quad]:
        dofs = V.interpolate(f, g)
        assert np.allclose(V.evaluate(dofs, x, 0), f(x), atol=1e-9)
        assert np.allclose(V.evaluate(dofs, x, 1), g(x), atol=1e-9)
    dofs = V.interpolate(lambda p: p[:, 0] ** 2, lambda p: np.column_stack([2 * p[:, 0], 0 * p[:, 0]]))
    assert np.allclose(V.evaluate(dofs, x, 2), [[2, 0], [0, 0]], atol=1e-9)


def test_single_triangle_local_matrix():
    V = MorleySpace(single_triangle_mesh())
    K = element_stiffness(V, UNIT.full())[0]
    assert np.allclose(K, K.T, atol=1e-14)
    ev = np.linalg.eigvalsh(K)
    assert np.all(ev > -1e-12 * ev.max())
    assert np.linalg.matrix_rank(K, tol=1e-10 * ev.max()) == 3


def _oracle_assembly(mesh, Dfull):
    """Plain-monomial Morley basis, quadrature integration and a searched DOF map."""
    nv = mesh.n_vertices
    edge_id = {tuple(e): i for i, e in enumerate(mesh.edges.tolist())}
    A = np.zeros((nv + mesh.n_edges,) * 2)
    for t, tri in enumerate(mesh.triangles):
        p = mesh.vertices[tri]
        rows, dofs = [], list(tri)
        for v in range(3):
            x, y = p[v]
            rows.append([1, x, y, x * x, x * y, y * y])
        for e in range(3):
            i, j = sorted((tri[(e + 1) % 3], tri[(e + 2) % 3]))
            d = mesh.vertices[j] - mesh.vertices[i]
            n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
            x, y = 0.5 * (mesh.vertices[i] + mesh.vertices[j])
            rows.append([0, n[0], n[1], 2 * x * n[0], y * n[0] + x * n[1], 2 * y * n[1]])
            dofs.append(nv + edge_id[(i, j)])
        C = np.linalg.inv(np.array(rows, dtype=float))
        H = np.zeros((6, 2, 2))
        for b in range(6):
            H[b] = [[2 * C[3, b], C[4, b]], [C[4, b], 2 * C[5, b]]]
        d1, d2 = p[1] - p[0], p[2] - p[0]
        area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
        Ke = np.zeros((6, 6))
        for w in QUAD_WEIGHTS:  # integrand is constant; the rule still has to sum to the area
            for a in range(6):
                for b in range(6):
                    Ke[a, b] += w * area * np.einsum("ijkl,kl,ij->", Dfull, H[b], H[a])
        for a in range(6):
            for b in range(6):
                A[dofs[a], dofs[b]] += Ke[a, b]
    return A


def test_assembly_matches_quadrature_oracle():
    m = build_structured_mesh(4, 4)
    D = isotropic_bending_tensor(3.0, 0.3)
    A = assemble_bilinear(MorleySpace(m), D).toarray()
    ref = _oracle_assembly(m, D.full())
    assert np.max(np.abs(A - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_assembly_symmetric_heterogeneous(rng):
    m = assign_materials(build_structured_mesh(8, 8), MaterialRaster(rng.integers(0, 2, (4, 4))))
    coef = CoefficientField(m, {0: isotropic_bending_tensor(50e5, 0.2), 1: isotropic_bending_tensor(8e2, 0.3)})
    A = assemble_bilinear(MorleySpace(m), coef)
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()
    two = assemble_bilinear(MorleySpace(build_structured_mesh(1, 1)), UNIT)
    assert abs(two - two.T).max() <= 1e-14 * abs(two).max()


def test_kernel_is_linear_polynomials():
    m = build_structured_mesh(4, 4)
    V = MorleySpace(m)
    A = assemble_bilinear(V, isotropic_bending_tensor(1.0, 0.25)).toarray()
    ev = np.linalg.eigvalsh(A)
    assert np.sum(ev < 1e-10 * ev.max()) == 3
    for f, g in [(lambda p: np.ones(len(p)), lambda p: np.zeros((len(p), 2))),
                 (lambda p: p[:, 0], lambda p: np.tile([1.0, 0.0], (len(p), 1))),
                 (lambda p: p[:, 1], lambda p: np.tile([0.0, 1.0], (len(p), 1)))]:
        u = V.interpolate(f, g)
        assert np.abs(A @ u).max() <= 1e-10 * ev.max()


def test_load_vector():
    V = MorleySpace(single_triangle_mesh())
    assert np.all(assemble_load(V, 0.0) == 0)
    b = assemble_load(V, 1.0)
    assert b[:3].sum() == pytest.approx(0.5, rel=1e-14)
    V4 = MorleySpace(build_structured_mesh(4, 4))
    b4 = assemble_load(V4, 1500.0)
    assert b4[:V4.mesh.n_vertices].sum() == pytest.approx(1500.0, rel=1e-13)
    # constant, per-element and callable loads agree
    assert np.allclose(assemble_load(V4, np.full(V4.mesh.n_triangles, 2.0)), 2 * assemble_load(V4, 1.0))
    assert np.allclose(assemble_load(V4, lambda x: 2.0 + 0 * x[..., 0]), 2 * assemble_load(V4, 1.0))


def _solve(V, D, q, g1=None, g2=None):
    sys_ = apply_clamped_bc(LinearSystem(assemble_bilinear(V, D), assemble_load(V, q)), V, g1, g2)
    return sys_, solve(sys_)


def test_clamped_zero_bc():
    V = MorleySpace(build_structured_mesh(6, 6))
    sys_, u = _solve(V, UNIT, 1.0)
    assert np.all(u[sys_.constrained] == 0.0)
    assert relative_residual(sys_.matrix, u, sys_.rhs) <= 1e-10


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_boundary_data_reproduced(a, b, c):
    V = MorleySpace(build_structured_mesh(4, 4))
    f = lambda p: a + b * p[..., 0] + c * p[..., 1]
    _, u = _solve(V, isotropic_bending_tensor(1.0, 0.3), 0.0,
                  g1=f, g2=lambda x, n: b * n[:, 0] + c * n[:, 1])
    ref = V.interpolate(f, lambda p: np.tile([b, c], (len(p), 1)))
    assert np.allclose(u, ref, atol=1e-8)


def test_plane_solution_from_boundary():
    V = MorleySpace(build_structured_mesh(4, 4))
    _, u = _solve(V, UNIT, 0.0, g1=lambda x: x[:, 0], g2=lambda x, n: n[:, 0])
    x = np.random.default_rng(0).random((30, 2))
    assert np.allclose(V.evaluate(u, x), x[:, 0], atol=1e-8)


def test_reduced_matrix_spd():
    V = MorleySpace(build_structured_mesh(4, 4))
    sys_ = apply_clamped_bc(LinearSystem(assemble_bilinear(V, UNIT), np.zeros(V.ndofs)), V)
    A = sys_.matrix.toarray()
    assert np.allclose(A, A.T)
    free = np.setdiff1d(np.arange(V.ndofs), sys_.constrained)
    assert np.linalg.eigvalsh(A[np.ix_(free, free)]).min() > 0
    assert np.linalg.eigvalsh(A).min() > 0


def test_solve_trivial_and_deterministic():
    one = LinearSystem(sp.csr_matrix(np.array([[1.0]])), np.array([3.5]))
    assert solve(one)[0] == 3.5
    V = MorleySpace(build_structured_mesh(16, 16))
    sys_ = apply_clamped_bc(LinearSystem(assemble_bilinear(V, UNIT), assemble_load(V, 7.0)), V)
    u1, u2 = solve(sys_), solve(sys_)
    assert np.array_equal(u1, u2)
    assert backward_error(sys_.matrix, u1, sys_.rhs) <= 1e-10
    assert relative_residual(sys_.matrix, u1, sys_.rhs) <= 1e-10
    F = Factorization(sys_.matrix)
    assert np.array_equal(solve(sys_, factor=F), solve(sys_, factor=F))


def test_edge_orientation_flip_leaves_field_unchanged(rng):
    m = build_structured_mesh(4, 4)
    e = int(np.flatnonzero(~m.boundary_edge)[7])
    edges = m.edges.copy()
    edges[e] = edges[e][::-1]
    sign = m.tri_edge_sign.copy()
    sign[m.tri_edges == e] *= -1
    flipped = replace(m, edges=edges, tri_edge_sign=sign)
    V, W = MorleySpace(m), MorleySpace(flipped)
    q = lambda x: 1.0 + x[..., 0] * x[..., 1]
    _, u = _solve(V, UNIT, q)
    _, w = _solve(W, UNIT, q)
    k = m.n_vertices + e
    assert w[k] == pytest.approx(-u[k], rel=1e-10)
    x = rng.random((50, 2))
    assert np.allclose(V.evaluate(u, x), W.evaluate(w, x), rtol=1e-10, atol=1e-14)
    assert np.allclose(V.evaluate(u, x, 1), W.evaluate(w, x, 1), rtol=1e-10, atol=1e-13)


def test_bilaplacian_oracle_matches_closed_form():
    sympy = pytest.importorskip("sympy")
    from conftest import sin2_solution

    X, Y = sympy.symbols("x y")
    w = sympy.sin(sympy.pi * X) ** 2 * sympy.sin(sympy.pi * Y) ** 2
    bilap = sympy.diff(w, X, 4) + 2 * sympy.diff(w, X, 2, Y, 2) + sympy.diff(w, Y, 4)
    f = sympy.lambdify((X, Y), bilap, "numpy")
    hxy = sympy.lambdify((X, Y), sympy.diff(w, X, Y), "numpy")
    pts = np.random.default_rng(3).random((20, 2))
    _, _, hess, closed = sin2_solution()
    assert np.allclose(f(pts[:, 0], pts[:, 1]), closed(pts), rtol=1e-12, atol=1e-9)
    assert np.allclose(hxy(pts[:, 0], pts[:, 1]), hess(pts)[:, 0, 1], atol=1e-12)


def test_manufactured_rates():
    from conftest import sin2_solution

    w, grad, hess, bilap = sin2_solution()
    errs = {}
    for n in (8, 16, 32):
        V = MorleySpace(build_structured_mesh(n, n))
        sys_, u = _solve(V, UNIT, bilap)
        assert relative_residual(sys_.matrix, u, sys_.rhs) <= 1e-10
        errs[n] = V.broken_norms(u, w, grad, hess)
    for a, b in ((8, 16), (16, 32)):
        assert 3.2 <= errs[a]["L2"] / errs[b]["L2"] <= 5.0
        assert 1.6 <= errs[a]["H2"] / errs[b]["H2"] <= 2.6


def test_matrix_dump(tmp_path):
    A = assemble_bilinear(MorleySpace(build_structured_mesh(1, 1)), UNIT)
    save_matrix_coo(tmp_path / "a.txt", A)
    data = np.loadtxt(tmp_path / "a.txt")
    B = sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=A.shape)
    assert np.array_equal(B.toarray(), A.toarray())
