"""Run every built-in experiment and write results under one directory.

Usage: python scripts/run_all_experiments.py [OUT_DIR] [--jobs N] [--plot]
"""
import argparse
import sys
from pathlib import Path

from contract_rates.cli import run_experiment
from contract_rates.config import KINDS, preset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="results", type=Path)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()
    failed = []
    for kind in KINDS:
        res = run_experiment(preset(kind, plot=args.plot), args.out / kind, args.jobs)
        for name, ok in res.verdicts.items():
            print(f"[{'pass' if ok else 'FAIL'}] {kind}: {name}")
        if not res.ok:
            failed.append(kind)
    print("all experiments passed" if not failed else f"failed: {', '.join(failed)}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
