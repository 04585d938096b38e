"""Rasters where the corrector orderings do not hold, next to one where they do.

A soft phase that forms continuous channels (checkerboard, cross) lets the
plate hinge between stiff islands, which clamped cell conditions forbid, so
D-hat is far too stiff. A small inclusion (1/16 of the cell) leaves an O(eps)
boundary-layer error at the clamped plate edge that is the same for every
reconstruction order, so the L2 ordering is lost there too.

    python scripts/raster_limitations.py [--refine 4] [--macro 128]
"""
import argparse
import time

import numpy as np

from kirchhoff_ms.config import MaterialSpec, RunConfig
from kirchhoff_ms.mesh import MaterialRaster
from kirchhoff_ms.pipeline import run_pipeline


def rasters(k=8):
    centre = np.zeros((k, k), int)
    centre[2:6, 2:6] = 1
    cross = np.zeros((k, k), int)
    cross[3:5, :] = 1
    cross[:, 3:5] = 1
    small = np.zeros((k, k), int)
    small[3:5, 3:5] = 1
    checker = (np.add.outer(np.arange(k) // (k // 2), np.arange(k) // (k // 2)) % 2).astype(int)
    return {"centred square": centre, "small square": small, "checkerboard": checker, "cross": cross}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--refine", type=int, default=4)
    ap.add_argument("--macro", type=int, default=128)
    args = ap.parse_args()
    mats = {0: MaterialSpec(E=60e5, nu=0.35), 1: MaterialSpec(E=2.4e2, nu=0.35)}
    for name, cells in rasters().items():
        cfg = RunConfig(MaterialRaster(cells), mats, epsilon_n=8, cell_refine=args.refine,
                        macro_n=args.macro, dns_multiplier=2, q=2500.0, output_dir=f"out/limits/{name}")
        t0 = time.perf_counter()
        rows = run_pipeline(cfg).report.rows
        text = " ".join(f"{r.kind}={100 * r.rel_L2:.2f}/{100 * r.rel_H1semi:.2f}" for r in rows)
        print(f"{name:<15} {text}  (L2/H1 %, {time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
