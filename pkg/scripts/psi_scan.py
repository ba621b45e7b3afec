"""Scan the constraint size a and report min psi and the tuned rho.

    python3 scripts/psi_scan.py [--nu 2.0] [--a 0.8 1.0 1.5 2.0 2.5]

Shows where the psi condition starts to hold for the high-order scenario:
for small a the origin sits outside or on the edge of Q and psi is negative
next to the boundary.
"""

import argparse
from dataclasses import replace

import numpy as np

from compatcbf.barrier import EllipsoidConstraint, SmoothedConstraint
from compatcbf.certify import PsiNotPositiveError, psi, tune_rho, verify_psi
from compatcbf.config import load_scenario
from compatcbf.dynamics import coriolis_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nu", type=float, default=2.0)
    ap.add_argument("--a", type=float, nargs="+", default=[0.8, 1.0, 1.2, 1.5, 2.0, 2.5])
    args = ap.parse_args()
    cfg = load_scenario("reldeg2_interior")
    model = cfg.model()
    k_c = coriolis_bound(model, cfg.q_grid)
    base = cfg.barrier.constraint.base
    print(f"{'a':>6} {'cbar(0)':>9} {'violations':>11} {'min psi':>9} {'rho':>9}")
    for a in args.a:
        con = SmoothedConstraint(EllipsoidConstraint(a, base.q_r, base.P), cfg.barrier.constraint.delta)
        barrier = replace(cfg.barrier, constraint=con)
        rep = verify_psi(barrier, model, cfg.nominal, args.nu, cfg.q_grid)
        worst = min((c.value for c in rep.counterexamples), default=np.nan)
        try:
            rho = f"{tune_rho(barrier, model, cfg.nominal, args.nu, cfg.q_grid, k_c):9.4g}"
        except PsiNotPositiveError:
            rho = f"{'-':>9}"
        cbar0 = float(con.base.value(np.zeros(2)))
        print(f"{a:6.2f} {cbar0:9.3f} {rep.n_violations:11d} {worst:9.3g} {rho}")
    print(f"psi at q_r: {float(psi(cfg.barrier, model, cfg.nominal, np.asarray(base.q_r))):.3g}")


if __name__ == "__main__":
    main()
