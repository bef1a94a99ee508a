"""Held-out PDE residual and truth error versus fill distance on example1.

    python scripts/convergence.py [--lam -1] [--eta-rel 1e-12] [--sizes 10 20 30 40 60]
"""

import argparse

import numpy as np

from koopman_kernel import collocation as co
from koopman_kernel import dynsys as ds
from koopman_kernel import kernel as kn
from koopman_kernel import metrics as me

TRUTH = {-1.0: "x1 - x2^2", 3.0: "-x1^2 + x2 + 2*x1*x2^2 - x2^4"}
SIGMA = {-1.0: (2, 2), 3.0: (2, 3)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lam", type=float, default=-1.0, choices=sorted(TRUTH))
    ap.add_argument("--eta-rel", type=float, default=1e-12)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 20, 30, 40])
    args = ap.parse_args()

    vf = ds.builtin("example1")
    lin = ds.linearize(vf)
    box = co.Box.cube(-1, 1, 2)
    rec = me.convergence_study(vf, lin.select(target=args.lam), box,
                               kn.GaussianKernel(SIGMA[args.lam]),
                               [(n, n) for n in args.sizes], eta_rel=args.eta_rel,
                               truth=TRUTH[args.lam])
    print(f"{'N':>6} {'rho':>10} {'residual_rms':>13} {'rel_err_med':>12}  status")
    for r in rec.rows:
        print(f"{r.N:6d} {r.rho:10.5f} {r.residual_rms:13.4e} {r.rel_err_median:12.4e}  {r.status}")
    if rec.slope is not None:
        print(f"slope of log(residual) vs log(rho): {rec.slope:.3f}")
        ok = rec.ok_rows
        print(f"residual ratio first/last: {ok[0].residual_rms / ok[-1].residual_rms:.1f}")
    err = np.array([r.rel_err_median for r in rec.ok_rows])
    rho = np.array([r.rho for r in rec.ok_rows])
    s = me.loglog_slope(rho, err)
    if s is not None:
        print(f"slope of log(median rel err) vs log(rho): {s:.3f}")


if __name__ == "__main__":
    main()
