"""Simulate the bundled scenarios and write CSV trajectories for plotting.

    python3 scripts/export_trajectories.py --out runs/trajectories [--T 30] [--disturbance]

Each scenario gets its own subdirectory with one CSV per start state and a
summary.json with the trajectory metrics. No plotting library is needed; the
CSVs load directly into any tool.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from compatcbf.config import BUNDLED, load_scenario
from compatcbf.sim import DisturbanceSpec, SimConfig, integrate_batch, trajectory_metrics
from compatcbf.cli import tuned_rho


def run(name, out: Path, T: float, disturbance: bool):
    cfg = load_scenario(name)
    model = cfg.model()
    rho = tuned_rho(cfg)["rho"] if cfg.augmented and cfg.rho is None else None
    ctrl = cfg.controller(rho)
    sim = SimConfig(cfg.sim.dt, T, disturbance=DisturbanceSpec((0.1, 0.1), (1.0, 1.0)) if disturbance else None)
    trajs = integrate_batch(model, ctrl, np.array(cfg.x0), sim)
    rows = []
    for i, tr in enumerate(trajs):
        tr.to_csv(out / name / f"traj_{i:03d}.csv")
        rows.append({"x0": list(cfg.x0[i]), **trajectory_metrics(tr).to_dict()})
        print(f"{name} x0={cfg.x0[i]} min_h={rows[-1]['min_h']:.3g} |x(T)|={rows[-1]['terminal_norm']:.3g}")
    (out / name / "summary.json").write_text(json.dumps({"rho": ctrl.rho, "runs": rows}, indent=2))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/trajectories")
    ap.add_argument("--T", type=float, default=30.0, help="horizon in seconds")
    ap.add_argument("--disturbance", action="store_true", help="add d_i = 0.1 sin(t)")
    ap.add_argument("--scenario", action="append", choices=BUNDLED)
    args = ap.parse_args()
    for name in args.scenario or BUNDLED:
        run(name, Path(args.out), args.T, args.disturbance)


if __name__ == "__main__":
    main()
