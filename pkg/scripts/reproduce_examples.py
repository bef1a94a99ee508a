"""Solve every shipped preset, evaluate it on its grid and print one summary line each.

    python scripts/reproduce_examples.py [--out out] [preset ...]

Artifacts land in <out>/<preset>/ exactly as the CLI writes them.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from koopman_kernel import cli
from koopman_kernel import config as cf

DEFAULT = ["example1-l1", "example1-l2", "example2-l1", "example2-l2", "duffing-l1",
           "gradient3d-l1"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("presets", nargs="*", default=DEFAULT)
    ap.add_argument("--out", default="out")
    args = ap.parse_args()

    failed = 0
    for name in args.presets:
        out = Path(args.out) / name
        conf = cf.load(name)
        t0 = time.perf_counter()
        steps = ["solve", "grid"] + (["traj"] if conf.trajectory else [])
        codes = [cli.main([s, "--config", name, "--out", str(out)]) for s in steps]
        dt = time.perf_counter() - t0
        if any(codes):
            print(f"{name:16s} FAILED exit codes {codes}")
            failed += 1
            continue
        diag = json.loads((out / "diagnostics.json").read_text())
        summ = json.loads((out / "summary.json").read_text())
        line = (f"{name:16s} lambda={diag['lambda']:+.6f} N={diag['n_points']:5d} "
                f"rho={diag['fill_distance']:.4f} eta/md={diag['eta_used'] / diag['mean_diagonal']:.0e}")
        if "rel_err_median" in summ:
            line += f" median rel err={summ['rel_err_median']:.2e}"
        if conf.trajectory:
            prop = json.loads((out / "property.json").read_text())
            line += f" traj median dev={prop['median_deviation']:.2e}"
        print(f"{line}  ({dt:.1f} s)")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
