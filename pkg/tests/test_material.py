import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kirchhoff_ms.material import (BendingTensor, CoefficientField, MaterialError, contract,
                                   isotropic_bending_tensor)
from kirchhoff_ms.mesh import build_structured_mesh

sym = arrays(np.float64, (2, 2), elements=st.floats(-10, 10)).map(lambda a: a + a.T)


def test_isotropic_unit():
    D = isotropic_bending_tensor(12.0, 0.0, 1.0)
    assert (D.d1111, D.d1122, D.d1212, D.d2222, D.d1112, D.d2212) == (1.0, 0.0, 0.5, 1.0, 0.0, 0.0)


def test_isotropic_table2_matrix():
    D = isotropic_bending_tensor(50e9, 0.2, 1.0)
    assert D.d1111 == pytest.approx(50e9 / (12 * 0.96), rel=1e-15)
    assert D.d1122 == pytest.approx(0.2 * D.d1111)


@pytest.mark.parametrize("E, nu, t", [(1.0, 0.5, 1.0), (1.0, -0.1, 1.0), (0.0, 0.2, 1.0), (1.0, 0.2, -1.0)])
def test_isotropic_rejects(E, nu, t):
    with pytest.raises(MaterialError):
        isotropic_bending_tensor(E, nu, t)


def test_full_symmetries_and_formula():
    D = BendingTensor(1.0, 0.3, 0.05, -0.02, 0.4, 0.9).full()
    assert np.array_equal(D, D.transpose(1, 0, 2, 3))
    assert np.array_equal(D, D.transpose(0, 1, 3, 2))
    assert np.array_equal(D, D.transpose(2, 3, 0, 1))
    iso = isotropic_bending_tensor(12 * (1 - 0.3**2), 0.3).full()
    d = np.eye(2)
    ref = 0.3 * np.einsum("ij,kl->ijkl", d, d) + 0.35 * (np.einsum("ik,jl->ijkl", d, d)
                                                        + np.einsum("il,jk->ijkl", d, d))
    assert np.allclose(iso, ref, atol=1e-15)


def test_contract_examples():
    D = isotropic_bending_tensor(12.0, 0.0)
    assert contract(D, np.eye(2), np.eye(2)) == pytest.approx(2.0)
    assert contract(D, np.zeros((2, 2)), np.eye(2)) == 0.0


def _loop_contract(D, A, B):
    F = D.full()
    return sum(F[i, j, k, l] * A[k, l] * B[i, j] for i in range(2) for j in range(2)
               for k in range(2) for l in range(2))


@given(sym, sym, st.floats(0.1, 100))
def test_contract_properties(A, B, s):
    D = BendingTensor(2.0, 0.4, 0.1, -0.2, 0.7, 1.5)
    c = contract(D, A, B)
    assert c == pytest.approx(contract(D, B, A), rel=1e-12, abs=1e-9)
    assert c == pytest.approx(_loop_contract(D, A, B), rel=1e-12, abs=1e-9)
    assert contract(D.scaled(s), A, B) == pytest.approx(s * c, rel=1e-12, abs=1e-9)


@given(sym, st.floats(0.0, 0.49), st.floats(0.1, 1e3))
def test_isotropic_energy(A, nu, E):
    D = isotropic_bending_tensor(E, nu)
    d0 = D.d1111
    expected = d0 * (nu * np.trace(A) ** 2 + (1 - nu) * np.sum(A * A))
    assert contract(D, A, A) == pytest.approx(expected, rel=1e-12, abs=1e-9 * d0)


@given(sym)
def test_voigt_and_mandel_forms(A):
    D = BendingTensor(2.0, 0.4, 0.1, -0.2, 0.7, 1.5)
    k = np.array([A[0, 0], A[1, 1], 2 * A[0, 1]])
    m = np.array([A[0, 0], A[1, 1], np.sqrt(2) * A[0, 1]])
    e = contract(D, A, A)
    assert k @ D.voigt() @ k == pytest.approx(e, rel=1e-12, abs=1e-9)
    assert m @ D.mandel() @ m == pytest.approx(e, rel=1e-12, abs=1e-9)


def test_from_full_roundtrip_and_orbit_average():
    D = BendingTensor(2.0, 0.4, 0.1, -0.2, 0.7, 1.5)
    assert BendingTensor.from_full(D.full()) == D
    raw = D.full().copy()
    raw[0, 0, 1, 1] += 0.2  # one of the two d1122 entries (0011, 1100)
    assert BendingTensor.from_full(raw).d1122 == pytest.approx(0.4 + 0.2 / 2)


def test_ellipticity():
    assert isotropic_bending_tensor(1.0, 0.3).is_elliptic()
    assert not BendingTensor(1.0, 2.0, 0.0, 0.0, 0.5, 1.0).is_elliptic()
    a, b = isotropic_bending_tensor(12.0, 0.0).ellipticity_bounds()
    assert a == pytest.approx(1.0) and b == pytest.approx(1.0)


def test_coefficient_field():
    m = build_structured_mesh(2, 2).with_materials(np.array([0, 1] * 4))
    table = {0: isotropic_bending_tensor(1.0, 0.2), 1: isotropic_bending_tensor(2.0, 0.2)}
    f = CoefficientField(m, table)
    full = f.full_per_element()
    assert full.shape == (8, 2, 2, 2, 2)
    assert np.array_equal(full[1], table[1].full())
    assert np.allclose(f.scaled(3.0).full_per_element(), 3 * full)
    with pytest.raises(MaterialError):
        CoefficientField(m, {0: table[0]})
    with pytest.raises(MaterialError):
        CoefficientField(m, {0: table[0], 1: BendingTensor(1.0, 2.0, 0.0, 0.0, 0.5, 1.0)})
