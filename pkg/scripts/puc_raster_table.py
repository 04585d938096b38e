"""Errors of the four soft-inclusion rasters (60 GPa / 2.4 MPa, nu 0.35, q 2500).

    python scripts/puc_raster_table.py [--names puc_ring puc_octagon]
"""
import argparse
from pathlib import Path

from kirchhoff_ms.config import load_config
from kirchhoff_ms.pipeline import run_pipeline

ROOT = Path(__file__).resolve().parents[1]
NAMES = ("puc_square", "puc_four_squares", "puc_ring", "puc_octagon")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--names", nargs="+", default=NAMES)
    args = ap.parse_args()

    print(f"{'raster':<18} {'e0 L2':>8} {'e2 L2':>8} {'e4 L2':>8} {'e0 H1':>8} {'e3 H1':>8} {'e4 H1':>8}  (%)")
    for name in args.names:
        cfg = load_config(ROOT / "configs" / f"{name}.cfg")
        rows = {r.kind: r for r in run_pipeline(cfg).report.rows}
        l2 = [100 * rows[k].rel_L2 for k in ("omega0", "omega2", "omega4")]
        h1 = [100 * rows[k].rel_H1semi for k in ("omega0", "omega3", "omega4")]
        print(f"{name:<18} " + " ".join(f"{v:8.3f}" for v in l2 + h1))


if __name__ == "__main__":
    main()
