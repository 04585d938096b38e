"""Broken-H2 error of the order-4 reconstruction as the period shrinks.

    python scripts/epsilon_sweep.py --eps 2 4 8 [--config configs/sweep_inclusion.cfg]
"""
import argparse
import logging
from pathlib import Path

from kirchhoff_ms.config import load_config
from kirchhoff_ms.pipeline import sweep_epsilon

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "sweep_inclusion.cfg")
    ap.add_argument("--eps", type=int, nargs="+", default=[2, 4, 8])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    print(sweep_epsilon(load_config(args.config), args.eps).format())


if __name__ == "__main__":
    main()
