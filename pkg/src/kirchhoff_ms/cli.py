"""Command-line entry point: ``kirchhoff-ms <command> --config run.cfg``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from .cell import MULTI_INDICES
from .config import ConfigError, load_config
from .morley import MorleySpace
from .multiscale import ErrorReport, MultiscaleField, error_norms
from .pipeline import (StageError, Timings, dns_key, dns_mesh, load_dns, report_rows, run_cell_stage,
                       run_dns_stage, run_macro_stage, run_pipeline, save_dns, sweep_epsilon,
                       write_dhat, write_report_csv)
from .vtk import write_vtk

log = logging.getLogger("kirchhoff_ms")

COMMANDS = ("cell", "macro", "run", "dns", "compare", "sweep")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kirchhoff-ms",
                                description="Fourth-order multiscale solver for periodic composite plates.")
    p.add_argument("command", choices=COMMANDS,
                   help="cell: cell functions and D-hat; macro: homogenized solve and recovery; "
                        "run: full pipeline; dns: reference solve; compare: errors from cached "
                        "stages; sweep: epsilon convergence table")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, help="limit BLAS/LAPACK threads")
    p.add_argument("--no-dns", action="store_true", help="skip the DNS and error report in 'run'")
    p.add_argument("--export-vtk", action="store_true", help="write legacy VTK files")
    p.add_argument("--eps", default="2,4,8", help="sweep: comma-separated n for epsilon = 1/n")
    p.add_argument("--no-cache", action="store_true", help="recompute cell functions")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _print_report(report: ErrorReport) -> None:
    print(f"{'kind':<8} {'rel_L2':>12} {'rel_H1semi':>12} {'dofs':>9} {'seconds':>9}")
    for r in report_rows(report):
        print(f"{r['kind']:<8} {r['rel_L2']:12.4e} {r['rel_H1semi']:12.4e} {r['dofs']:9d} {r['seconds']:9.3f}")


def _cmd_cell(cfg, out, args):
    t = Timings()
    with t.stage("cell"):
        cells, hit = run_cell_stage(cfg, None if args.no_cache else out)
    write_dhat(out / "dhat.txt", cells.dhat)
    if args.export_vtk:
        mesh = cells.space.mesh
        write_vtk(out / "cell_functions.vtk", mesh,
                  {f"N_{''.join(str(i + 1) for i in a)}": cells.get(a)[:mesh.n_vertices]
                   for m in (2, 3, 4) for a in MULTI_INDICES[m]})
    source = "cached" if hit else f"{t.seconds['cell']:.2f} s"
    print(f"D-hat ({source}):")
    for k, v in cells.dhat.tensor.as_dict().items():
        print(f"  {k} = {v:.10g}")
    print(f"  asymmetry = {cells.dhat.asymmetry:.3e}")


def _cmd_macro(cfg, out, args):
    t = Timings()
    with t.stage("cell"):
        cells, _ = run_cell_stage(cfg, None if args.no_cache else out)
    with t.stage("macro"):
        sol = run_macro_stage(cfg, cells.dhat.tensor)
    write_dhat(out / "dhat.txt", cells.dhat)
    if args.export_vtk:
        with t.stage("reconstruct"):
            samples = MultiscaleField(sol, cells, cfg.epsilon).sample_all(sol.space.mesh.vertices)
        write_vtk(out / "macro.vtk", sol.space.mesh, {f"omega{k}": s.value for k, s in samples.items()})
    print(f"homogenized solve on {cfg.macro_n}x{cfg.macro_n}: {sol.space.ndofs} DOFs, "
          f"max |w0| = {abs(sol.dofs[:sol.space.mesh.n_vertices]).max():.6e}, "
          f"{t.seconds['macro']:.2f} s")


def _cmd_dns(cfg, out, args):
    t = Timings()
    with t.stage("dns"):
        space, dofs = run_dns_stage(cfg)
    save_dns(out / "dns.npz", dofs, dns_key(cfg, cfg.dns_n), t.seconds["dns"])
    if args.export_vtk:
        write_vtk(out / "dns.vtk", space.mesh, {"dns": dofs[:space.mesh.n_vertices]})
    print(f"DNS on {cfg.dns_n}x{cfg.dns_n}: {space.ndofs} DOFs, {t.seconds['dns']:.2f} s")


def _cmd_compare(cfg, out, args):
    path = out / "dns.npz"
    if not path.exists():
        raise StageError("compare", FileNotFoundError(f"{path} missing; run the 'dns' command first"))
    t = Timings()
    with t.stage("cell"):
        cells, _ = run_cell_stage(cfg, None if args.no_cache else out)
    with t.stage("macro"):
        sol = run_macro_stage(cfg, cells.dhat.tensor)
    with t.stage("dns"):
        dofs, seconds = load_dns(path, dns_key(cfg, cfg.dns_n))
        space = MorleySpace(dns_mesh(cfg))
    with t.stage("errors"):
        rows = error_norms(MultiscaleField(sol, cells, cfg.epsilon), space, dofs)
    report = ErrorReport(rows, space.ndofs, {**t.seconds, "dns": seconds})
    for r in rows:
        r.seconds = t.foms()
    write_report_csv(out / "report.csv", report)
    _print_report(report)


def _cmd_run(cfg, out, args):
    res = run_pipeline(cfg, out, with_dns=False if args.no_dns else None,
                       export_vtk=args.export_vtk, use_cache=not args.no_cache)
    print("D-hat: " + ", ".join(f"{k}={v:.6g}" for k, v in res.cells.dhat.tensor.as_dict().items()))
    if res.report.rows:
        _print_report(res.report)
        print(f"FOMS {res.timings.foms():.2f} s, DNS {res.timings.seconds.get('dns', float('nan')):.2f} s")
    for name, p in res.paths.items():
        print(f"wrote {name}: {p}")


def _cmd_sweep(cfg, out, args):
    try:
        ns = [int(s) for s in args.eps.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--eps expects comma-separated integers, got {args.eps!r}") from None
    t = Timings()
    with t.stage("sweep"):
        table = sweep_epsilon(cfg, ns, None if args.no_cache else out)
    text = table.format()
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.txt").write_text(text + "\n")
    print(text)


HANDLERS = {"cell": _cmd_cell, "macro": _cmd_macro, "run": _cmd_run, "dns": _cmd_dns,
            "compare": _cmd_compare, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    t0 = time.perf_counter()
    try:
        with limits:
            HANDLERS[args.command](cfg, out, args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
