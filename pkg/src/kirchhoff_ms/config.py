"""Run configuration: a flat ``key = value`` text format with ``[material N]`` sections.

Example::

    # centred soft inclusion
    epsilon = 1/8
    raster.row = 0000          # top row first
    raster.row = 0110
    raster.row = 0110
    raster.row = 0000
    cell.refine = 16           # unit-cell elements per raster cell and direction
    macro.n = 128
    dns.multiplier = 2         # DNS resolution = macro.n * dns.multiplier
    load.q = 1500
    bc.g1 = 0
    bc.g2 = 0
    solver.rtol = 1e-10
    output.dir = out
    stages = cell, macro, dns, errors

    [material 0]
    E = 50 GPa
    nu = 0.2

    [material 1]
    E = 8 MPa
    nu = 0.2

Materials take either ``E``/``nu`` (optional ``t``, default 1) or all six of
``d1111 d1122 d1112 d2212 d1212 d2222``. Lengths are in cm, so moduli without
a unit suffix are read as N/cm^2; ``GPa``, ``MPa`` and ``Pa`` suffixes convert.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .material import COMPONENTS, BendingTensor, MaterialError, isotropic_bending_tensor
from .mesh import MaterialRaster

STAGES = ("cell", "macro", "dns", "errors")
# N/cm^2 per unit
UNITS = {"gpa": 1e5, "mpa": 1e2, "pa": 1e-4, "n/cm2": 1.0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialSpec:
    """One material block; the tensor is built on demand."""

    E: float | None = None
    nu: float | None = None
    t: float = 1.0
    components: tuple | None = None

    def tensor(self) -> BendingTensor:
        if self.components is not None:
            return BendingTensor(*self.components)
        return isotropic_bending_tensor(self.E, self.nu, self.t)


@dataclass(frozen=True)
class RunConfig:
    raster: MaterialRaster
    materials: dict
    epsilon_n: int = 8
    cell_refine: int = 16
    macro_n: int = 128
    dns_multiplier: int = 2
    q: float = 1.0
    g1: float = 0.0
    g2: float = 0.0
    rtol: float = 1e-10
    output_dir: str = "out"
    stages: tuple = STAGES

    def __post_init__(self):
        self.validate()

    @property
    def epsilon(self) -> float:
        return 1.0 / self.epsilon_n

    @property
    def cell_n(self) -> int:
        return self.raster.k * self.cell_refine

    @property
    def dns_n(self) -> int:
        return self.macro_n * self.dns_multiplier

    def validate(self):
        for name in ("epsilon_n", "cell_refine", "macro_n", "dns_multiplier"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        used = sorted(int(m) for m in np.unique(self.raster.cells))
        missing = [m for m in used if m not in self.materials]
        if missing:
            raise ConfigError(f"raster uses materials {missing} that have no [material] block")
        period = self.raster.k * self.epsilon_n
        if self.dns_n % period:
            raise ConfigError(f"DNS resolution {self.dns_n} (macro.n * dns.multiplier) is not a "
                              f"multiple of k/epsilon = {period}")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; expected a subset of {STAGES}")
        if not self.rtol > 0:
            raise ConfigError("solver.rtol must be positive")
        try:
            self.tensors()
        except MaterialError as exc:
            raise ConfigError(str(exc)) from None

    def tensors(self) -> dict[int, BendingTensor]:
        out = {}
        for m, spec in self.materials.items():
            D = spec.tensor()
            if not D.is_elliptic():
                raise MaterialError(f"material {m} is not positive definite")
            out[m] = D
        return out

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def cell_key(self) -> str:
        """Content hash of everything the cell stage depends on."""
        payload = {
            "raster": self.raster.cells.tolist(),
            "materials": {str(m): D.as_dict() for m, D in sorted(self.tensors().items())},
            "cell_refine": self.cell_refine,
            "rtol": self.rtol,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _number(text: str, key: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _modulus(text: str, key: str) -> float:
    parts = text.split()
    scale = 1.0
    if len(parts) == 2:
        unit = parts[1].lower()
        if unit not in UNITS:
            raise ConfigError(f"{key}: unknown unit {parts[1]!r}")
        scale = UNITS[unit]
    elif len(parts) != 1:
        raise ConfigError(f"{key}: expected '<value> [unit]', got {text!r}")
    return _number(parts[0], key) * scale


def _integer(text: str, key: str) -> int:
    v = _number(text, key)
    if v != int(v):
        raise ConfigError(f"{key}: expected an integer, got {text!r}")
    return int(v)


def _epsilon_n(text: str) -> int:
    try:
        eps = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"epsilon: expected 1/n, got {text!r}") from None
    if eps <= 0 or eps.numerator != 1:
        raise ConfigError(f"epsilon must be 1/n for a positive integer n, got {text!r}")
    return eps.denominator


def _material(block: dict, m: int) -> MaterialSpec:
    keys = set(block)
    if keys & set(COMPONENTS):
        if keys != set(COMPONENTS):
            raise ConfigError(f"material {m}: give all six of {COMPONENTS} or E/nu")
        return MaterialSpec(components=tuple(_modulus(block[c], c) for c in COMPONENTS))
    if not {"E", "nu"} <= keys or keys - {"E", "nu", "t"}:
        raise ConfigError(f"material {m}: expected keys E, nu and optional t, got {sorted(keys)}")
    return MaterialSpec(E=_modulus(block["E"], "E"), nu=_number(block["nu"], "nu"),
                        t=_number(block.get("t", "1"), "t"))


def parse_config(text: str) -> RunConfig:
    top: dict = {}
    rows: list[str] = []
    blocks: dict[int, dict] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            head = line.strip("[]").split()
            if len(head) != 2 or head[0] != "material" or not head[1].isdigit():
                raise ConfigError(f"line {lineno}: expected '[material N]', got {line!r}")
            current = blocks.setdefault(int(head[1]), {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if current is not None:
            current[key] = value
        elif key == "raster.row":
            rows.append(value.replace(" ", ""))
        elif key in top:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        else:
            top[key] = value

    if not rows:
        raise ConfigError("no raster.row lines")
    if any(len(r) != len(rows) or not r.isdigit() for r in rows):
        raise ConfigError("raster must be k rows of k digits")
    raster = MaterialRaster.from_rows_top_down([[int(c) for c in r] for r in rows])
    materials = {m: _material(b, m) for m, b in blocks.items()}

    readers = {
        "epsilon": ("epsilon_n", _epsilon_n),
        "cell.refine": ("cell_refine", lambda v: _integer(v, "cell.refine")),
        "macro.n": ("macro_n", lambda v: _integer(v, "macro.n")),
        "dns.multiplier": ("dns_multiplier", lambda v: _integer(v, "dns.multiplier")),
        "load.q": ("q", lambda v: _number(v, "load.q")),
        "bc.g1": ("g1", lambda v: _number(v, "bc.g1")),
        "bc.g2": ("g2", lambda v: _number(v, "bc.g2")),
        "solver.rtol": ("rtol", lambda v: _number(v, "solver.rtol")),
        "output.dir": ("output_dir", str),
        "stages": ("stages", lambda v: tuple(s.strip() for s in v.split(",") if s.strip())),
    }
    unknown = set(top) - set(readers)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    kwargs = {readers[k][0]: readers[k][1](v) for k, v in top.items()}
    return RunConfig(raster=raster, materials=materials, **kwargs)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    """Inverse of ``parse_config`` (round-trips up to float formatting)."""
    lines = [f"epsilon = 1/{cfg.epsilon_n}"]
    lines += [f"raster.row = {''.join(str(int(v)) for v in row)}" for row in cfg.raster.cells[::-1]]
    lines += [f"cell.refine = {cfg.cell_refine}", f"macro.n = {cfg.macro_n}",
              f"dns.multiplier = {cfg.dns_multiplier}", f"load.q = {cfg.q!r}",
              f"bc.g1 = {cfg.g1!r}", f"bc.g2 = {cfg.g2!r}", f"solver.rtol = {cfg.rtol!r}",
              f"output.dir = {cfg.output_dir}", f"stages = {', '.join(cfg.stages)}"]
    for m, spec in sorted(cfg.materials.items()):
        lines.append(f"\n[material {m}]")
        if spec.components is not None:
            lines += [f"{c} = {v!r}" for c, v in zip(COMPONENTS, spec.components)]
        else:
            lines += [f"E = {spec.E!r}", f"nu = {spec.nu!r}", f"t = {spec.t!r}"]
    return "\n".join(lines) + "\n"
