"""Stage orchestration: cell functions, homogenized solve, reconstruction, DNS, error report."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cell import MULTI_INDICES, CellFunctionSet, HomogenizedTensor, solve_cell_functions
from .config import RunConfig, format_config
from .macro import HomogenizedSolution, recover_derivatives, solve_homogenized
from .material import COMPONENTS, BendingTensor, CoefficientField
from .mesh import assign_materials, build_structured_mesh
from .morley import MorleySpace
from .multiscale import ErrorReport, MultiscaleField, error_norms, solve_dns
from .vtk import write_vtk

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("kind", "rel_L2", "rel_H1semi", "dofs", "seconds")


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Timings:
    seconds: dict = field(default_factory=dict)

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - t0

    def foms(self) -> float:
        return sum(self.seconds.get(s, 0.0) for s in ("cell", "macro", "reconstruct"))


# -- cell stage --

def cell_space(cfg: RunConfig) -> tuple[MorleySpace, CoefficientField]:
    mesh = assign_materials(build_structured_mesh(cfg.cell_n, cfg.cell_n), cfg.raster)
    return MorleySpace(mesh), CoefficientField(mesh, cfg.tensors())


def save_cells(path, cells: CellFunctionSet, key: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, n2=cells.n2, n3=cells.n3, n4=cells.n4, raw=cells.dhat.raw,
             asymmetry=cells.dhat.asymmetry, key=key)
    return path


def load_cells(path, space: MorleySpace) -> CellFunctionSet:
    with np.load(path) as z:
        dhat = HomogenizedTensor(BendingTensor.from_full(z["raw"]), z["raw"], float(z["asymmetry"]))
        n2, n3, n4 = z["n2"], z["n3"], z["n4"]
    if n2.shape[1] != space.ndofs:
        raise ValueError(f"cached cell functions have {n2.shape[1]} DOFs, space has {space.ndofs}")
    return CellFunctionSet(space, n2, n3, n4, dhat)


def cell_cache_path(cfg: RunConfig, out_dir) -> Path:
    return Path(out_dir) / "cache" / f"cells-{cfg.cell_key()}.npz"


def run_cell_stage(cfg: RunConfig, cache_dir=None) -> tuple[CellFunctionSet, bool]:
    """Cell functions N2, N3, N4 and D-hat; returns (cells, loaded_from_cache)."""
    space, coef = cell_space(cfg)
    if cache_dir is not None:
        path = cell_cache_path(cfg, cache_dir)
        if path.exists():
            log.info("reusing cell functions from %s", path)
            return load_cells(path, space), True
    cells = solve_cell_functions(space, coef, cfg.rtol)
    if cache_dir is not None:
        save_cells(cell_cache_path(cfg, cache_dir), cells, cfg.cell_key())
    return cells, False


def write_dhat(path, dhat: HomogenizedTensor) -> Path:
    """Text record: one ``name = value`` line per component plus the asymmetry defect."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{n} = {v:.17g}" for n, v in dhat.tensor.as_dict().items()]
    lines.append(f"asymmetry = {dhat.asymmetry:.6e}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_dhat(path) -> tuple[BendingTensor, float]:
    vals = dict(line.split(" = ") for line in Path(path).read_text().splitlines() if " = " in line)
    return BendingTensor(*(float(vals[c]) for c in COMPONENTS)), float(vals["asymmetry"])


# -- macro and DNS stages --

def run_macro_stage(cfg: RunConfig, dhat: BendingTensor) -> HomogenizedSolution:
    space = MorleySpace(build_structured_mesh(cfg.macro_n, cfg.macro_n))
    sol = solve_homogenized(space, dhat, cfg.q, cfg.g1, cfg.g2, cfg.rtol)
    return recover_derivatives(sol)


def dns_mesh(cfg: RunConfig, n: int | None = None):
    n = cfg.dns_n if n is None else n
    return assign_materials(build_structured_mesh(n, n), cfg.raster, cfg.epsilon)


def run_dns_stage(cfg: RunConfig, n: int | None = None) -> tuple[MorleySpace, np.ndarray]:
    mesh = dns_mesh(cfg, n)
    return solve_dns(mesh, CoefficientField(mesh, cfg.tensors()), cfg.q, cfg.g1, cfg.g2,
                     epsilon=cfg.epsilon, raster=cfg.raster, rtol=cfg.rtol)


def dns_key(cfg: RunConfig, n: int) -> str:
    return f"{cfg.cell_key()}-eps{cfg.epsilon_n}-n{n}-q{cfg.q!r}-g{cfg.g1!r},{cfg.g2!r}"


def save_dns(path, dofs, key: str, seconds: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, dofs=dofs, key=key, seconds=seconds)
    return path


def load_dns(path, key: str) -> tuple[np.ndarray, float]:
    with np.load(path) as z:
        if str(z["key"]) != key:
            raise ValueError(f"{path} was computed for a different configuration")
        return z["dofs"], float(z["seconds"])


# -- reports --

def report_rows(report: ErrorReport) -> list[dict]:
    rows = [{"kind": r.kind, "rel_L2": r.rel_L2, "rel_H1semi": r.rel_H1semi, "dofs": r.dofs,
             "seconds": r.seconds} for r in report.rows]
    if report.dns_dofs:
        rows.append({"kind": "dns", "rel_L2": 0.0, "rel_H1semi": 0.0, "dofs": report.dns_dofs,
                     "seconds": report.timings.get("dns", float("nan"))})
    return rows


def write_report_csv(path, report: ErrorReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in report_rows(report):
            w.writerow({k: (f"{v:.10e}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


def read_report_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return [{k: (v if k == "kind" else int(v) if k == "dofs" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


# -- full pipeline --

@dataclass(eq=False)
class PipelineResult:
    config: RunConfig
    cells: CellFunctionSet
    solution: HomogenizedSolution
    field: MultiscaleField
    report: ErrorReport
    timings: Timings
    dns: tuple | None = None
    paths: dict = field(default_factory=dict)
    cell_cache_hit: bool = False


def export_fields(path, result: PipelineResult) -> Path:
    """Sample every reconstruction (and the DNS, if present) at the DNS or macro vertices."""
    if result.dns is not None:
        space, dofs = result.dns
        mesh = space.mesh
    else:
        cfg = result.config
        mesh = result.solution.space.mesh
        if cfg.macro_n % (cfg.raster.k * cfg.epsilon_n) == 0:
            mesh = assign_materials(mesh, cfg.raster, cfg.epsilon)
    samples = result.field.sample_all(mesh.vertices)
    data = {}
    for k, s in samples.items():
        data[f"omega{k}"] = s.value
        data[f"grad_omega{k}"] = np.linalg.norm(s.grad, axis=1)
    if result.dns is not None:
        data["dns"] = space.evaluate(dofs, mesh.vertices, 0)
        data["grad_dns"] = np.linalg.norm(space.evaluate(dofs, mesh.vertices, 1), axis=1)
    return write_vtk(path, mesh, data, title="multiscale plate fields")


def run_pipeline(cfg: RunConfig, out_dir=None, *, with_dns: bool | None = None, export_vtk: bool = False,
                 use_cache: bool = True, dns_n: int | None = None) -> PipelineResult:
    """Steps 1-8 (cell mesh, N2, N3, D-hat, macro mesh, homogenized solve, N4, recovery),
    then optionally the DNS and the error report. Writes artifacts when ``out_dir`` is given."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    if with_dns is None:
        with_dns = "dns" in cfg.stages
    timings = Timings()
    with timings.stage("cell"):
        cells, hit = run_cell_stage(cfg, out if use_cache else None)
    with timings.stage("macro"):
        solution = run_macro_stage(cfg, cells.dhat.tensor)
    with timings.stage("reconstruct"):
        field_ = MultiscaleField(solution, cells, cfg.epsilon, 4)

    dns = None
    report = ErrorReport(timings=timings.seconds)
    if with_dns:
        with timings.stage("dns"):
            dns = run_dns_stage(cfg, dns_n)
        report.dns_dofs = dns[0].ndofs
        # reconstruction at the DNS vertices is the FOMS counterpart of the DNS field
        with timings.stage("reconstruct"):
            field_.sample_all(dns[0].mesh.vertices, [4])
        if "errors" in cfg.stages:
            with timings.stage("errors"):
                report.rows = error_norms(field_, *dns)
            foms = timings.foms()
            for row in report.rows:
                row.seconds = foms
    result = PipelineResult(cfg, cells, solution, field_, report, timings, dns, cell_cache_hit=hit)

    with timings.stage("export"):
        out.mkdir(parents=True, exist_ok=True)
        result.paths["dhat"] = write_dhat(out / "dhat.txt", cells.dhat)
        result.paths["config"] = out / "config.txt"
        result.paths["config"].write_text(format_config(cfg))
        if report.rows:
            result.paths["report"] = write_report_csv(out / "report.csv", report)
        if export_vtk:
            result.paths["vtk"] = export_fields(out / "fields.vtk", result)
            result.paths["cell_vtk"] = write_vtk(
                out / "cell_functions.vtk", cells.space.mesh,
                {f"N{len(a)}_{''.join(str(i + 1) for i in a)}": cells.get(a)[:cells.space.mesh.n_vertices]
                 for m in (2, 3, 4) for a in MULTI_INDICES[m]}, title="cell functions (vertex values)")
        (out / "timings.json").write_text(json.dumps(timings.seconds, indent=2, sort_keys=True))
    return result


# -- epsilon sweep --

@dataclass
class SweepRow:
    epsilon_n: int
    rel_L2: float
    rel_H1semi: float
    rel_H2broken: float
    dns_dofs: int


@dataclass
class SweepTable:
    rows: list
    slopes: list            # log2 slopes of the broken-H2 error between consecutive rows
    fit_slope: float | None  # least-squares slope over all rows

    def format(self) -> str:
        lines = ["eps      rel_L2        rel_H1semi    rel_H2broken  dns_dofs  slope"]
        for i, r in enumerate(self.rows):
            s = "" if i == 0 else _fmt_slope(self.slopes[i - 1])
            lines.append(f"1/{r.epsilon_n:<5d} {r.rel_L2:.6e}  {r.rel_H1semi:.6e}  {r.rel_H2broken:.6e}  "
                         f"{r.dns_dofs:<8d}  {s}")
        if len(self.rows) > 1:
            lines.append(f"least-squares slope: {_fmt_slope(self.fit_slope)}")
        return "\n".join(lines)


def _fmt_slope(s) -> str:
    return "n/a" if s is None else f"{s:.3f}"


SLOPE_FLOOR = 1e-8


def sweep_epsilon(cfg: RunConfig, eps_ns, out_dir=None) -> SweepTable:
    """Pipeline + DNS for each epsilon = 1/n on one fixed fine mesh.

    The DNS and the homogenized solve both use the base configuration's DNS
    resolution for every epsilon, and the unit-cell mesh is chosen to match
    the DNS elements inside one period, so only the modelling error changes
    along the sweep.
    """
    n_fine = cfg.dns_n
    cache = Path(out_dir if out_dir is not None else cfg.output_dir)
    bad = [n for n in eps_ns if n_fine % (cfg.raster.k * int(n))]
    if bad:
        raise ValueError(f"DNS resolution {n_fine} is not a multiple of k/epsilon for n = {bad}")
    rows = []
    for n in eps_ns:
        n = int(n)
        c = cfg.with_(epsilon_n=n, cell_refine=n_fine // (cfg.raster.k * n), macro_n=n_fine, dns_multiplier=1)
        cells, _ = run_cell_stage(c, cache)
        solution = run_macro_stage(c, cells.dhat.tensor)
        space, dofs = run_dns_stage(c)
        r4 = error_norms(MultiscaleField(solution, cells, c.epsilon, 4), space, dofs, orders=(4,))[0]
        rows.append(SweepRow(n, r4.rel_L2, r4.rel_H1semi, r4.rel_H2broken, space.ndofs))
        log.info("eps=1/%d  H2 %.4e", n, r4.rel_H2broken)
    return _sweep_table(rows)


def _sweep_table(rows: list[SweepRow]) -> SweepTable:
    def slope(a, b):
        if min(a.rel_H2broken, b.rel_H2broken) < SLOPE_FLOOR:
            return None
        return float(np.log2(a.rel_H2broken / b.rel_H2broken) / np.log2(b.epsilon_n / a.epsilon_n))

    slopes = [slope(a, b) for a, b in zip(rows, rows[1:])]
    fit = None
    if len(rows) > 1 and min(r.rel_H2broken for r in rows) >= SLOPE_FLOOR:
        x = -np.log2([r.epsilon_n for r in rows])
        y = np.log2([r.rel_H2broken for r in rows])
        fit = float(np.polyfit(x, y, 1)[0])
    return SweepTable(rows, slopes, fit)
