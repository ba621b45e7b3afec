"""Largest certifiable nu for a bundled scenario by coarse sweep plus bisection.

    python3 scripts/nu_search.py --config reldeg1_reference --lo 0.1 --hi 10
"""

import argparse

from compatcbf.certify import max_certifiable_nu
from compatcbf.config import load_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="reldeg2_interior")
    ap.add_argument("--lo", type=float, default=0.1)
    ap.add_argument("--hi", type=float, default=10.0)
    ap.add_argument("--iterations", type=int, default=12)
    args = ap.parse_args()
    cfg = load_scenario(args.config)
    grid = cfg.q_grid if cfg.augmented else cfg.state_grid()
    res = max_certifiable_nu(cfg.controller(), cfg.model(), grid, (args.lo, args.hi), iterations=args.iterations)
    print(f"max certifiable nu = {res.nu:.6g} after {len(res.probes)} probes"
          + (" (non-monotone: passing sets are not nested)" if res.non_monotone else ""))


if __name__ == "__main__":
    main()
