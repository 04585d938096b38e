"""Bending stiffness tensors and piecewise-constant coefficient fields."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .mesh import TriMesh

COMPONENTS = ("d1111", "d1122", "d1112", "d2212", "d1212", "d2222")

# full index (0-based) -> canonical component name
_CANONICAL = {}
for _idx in product(range(2), repeat=4):
    _i, _j, _k, _l = _idx
    _a = tuple(sorted((_i, _j)))
    _b = tuple(sorted((_k, _l)))
    _pair = tuple(sorted((_a, _b)))
    _name = "d" + "".join(str(v + 1) for v in _pair[0] + _pair[1])
    _CANONICAL[_idx] = {"d1211": "d1112", "d1222": "d2212"}.get(_name, _name)


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class BendingTensor:
    """Fourth-order plate bending stiffness with minor and major symmetry."""

    d1111: float
    d1122: float
    d1112: float
    d2212: float
    d1212: float
    d2222: float

    def full(self) -> np.ndarray:
        """The (2, 2, 2, 2) array ``D[i, j, k, l]``."""
        out = np.empty((2, 2, 2, 2))
        for idx, name in _CANONICAL.items():
            out[idx] = getattr(self, name)
        return out

    @classmethod
    def from_full(cls, D: np.ndarray) -> "BendingTensor":
        """Average a (2,2,2,2) array over its minor/major symmetry orbits."""
        D = np.asarray(D, dtype=float)
        acc = {name: [] for name in COMPONENTS}
        for idx, name in _CANONICAL.items():
            acc[name].append(D[idx])
        return cls(**{name: float(np.mean(v)) for name, v in acc.items()})

    def voigt(self) -> np.ndarray:
        """3x3 matrix acting on curvature vectors (k11, k22, 2 k12)."""
        return np.array([[self.d1111, self.d1122, self.d1112],
                         [self.d1122, self.d2222, self.d2212],
                         [self.d1112, self.d2212, self.d1212]])

    def mandel(self) -> np.ndarray:
        """3x3 matrix of the quadratic form in the orthonormal basis (k11, k22, sqrt2 k12).

        Its eigenvalues are the ellipticity bounds alpha, beta with respect to
        ``eta_ij eta_ij``.
        """
        r = np.sqrt(2.0)
        return np.array([[self.d1111, self.d1122, r * self.d1112],
                         [self.d1122, self.d2222, r * self.d2212],
                         [r * self.d1112, r * self.d2212, 2.0 * self.d1212]])

    def ellipticity_bounds(self) -> tuple[float, float]:
        ev = np.linalg.eigvalsh(self.mandel())
        return float(ev[0]), float(ev[-1])

    def is_elliptic(self) -> bool:
        return self.ellipticity_bounds()[0] > 0.0

    def scaled(self, s: float) -> "BendingTensor":
        return BendingTensor(*(s * getattr(self, n) for n in COMPONENTS))

    def as_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in COMPONENTS}

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.full())))


def isotropic_bending_tensor(E: float, nu: float, t: float = 1.0) -> BendingTensor:
    """Kirchhoff plate stiffness ``D0 [nu d_ij d_kl + (1-nu)/2 (d_ik d_jl + d_il d_jk)]``."""
    if not E > 0 or not t > 0:
        raise MaterialError(f"E and t must be positive, got E={E}, t={t}")
    if not 0.0 <= nu < 0.5:
        raise MaterialError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    d0 = E * t**3 / (12.0 * (1.0 - nu**2))
    return BendingTensor(d1111=d0, d1122=nu * d0, d1112=0.0, d2212=0.0,
                         d1212=0.5 * (1.0 - nu) * d0, d2222=d0)


def contract(D: BendingTensor | np.ndarray, A, B) -> float:
    """``D_ijkl A_kl B_ij`` summed over all 16 index combinations."""
    Dfull = D.full() if isinstance(D, BendingTensor) else np.asarray(D)
    return float(np.einsum("ijkl,kl,ij->", Dfull, np.asarray(A, float), np.asarray(B, float)))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Per-triangle bending stiffness: a material table indexed by the mesh labels."""

    mesh: TriMesh
    table: dict

    def __post_init__(self):
        used = np.unique(self.mesh.element_material)
        missing = [int(m) for m in used if int(m) not in self.table]
        if missing:
            raise MaterialError(f"materials {missing} used by the mesh are not in the table")
        for m, D in self.table.items():
            if not D.is_elliptic():
                raise MaterialError(f"material {m} is not elliptic")

    def full_per_element(self) -> np.ndarray:
        """(n_triangles, 2, 2, 2, 2) stiffness array."""
        keys = sorted(self.table)
        stack = np.stack([self.table[k].full() for k in keys])
        pos = np.full(max(keys) + 1, -1)
        pos[keys] = np.arange(len(keys))
        return stack[pos[self.mesh.element_material]]

    def scaled(self, s: float) -> "CoefficientField":
        return CoefficientField(self.mesh, {k: v.scaled(s) for k, v in self.table.items()})

    @classmethod
    def constant(cls, mesh: TriMesh, D: BendingTensor) -> "CoefficientField":
        return cls(mesh.with_materials(np.zeros(mesh.n_triangles, dtype=np.int64)), {0: D})
