"""Command-line front end.

    compatcbf certify  --config reldeg2_reference --out runs/r2
    compatcbf tune-rho --config reldeg2_interior
    compatcbf simulate --config reldeg1_reference --x0 0.5,0.2,0.1,0 --force
    compatcbf sweep    --config reldeg2_reference --force

``--config`` takes a bundled scenario name or a path to a JSON scenario.
Exit codes: 0 all checks passed, 1 a certification or trajectory property
failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .certify import (
    PsiNotPositiveError,
    check_assumption3,
    rho_margin,
    rho_profile,
    verify_cbf_stabilizable,
    verify_psi,
)
from .config import BUNDLED, ConfigError, ScenarioConfig, load_scenario
from .dynamics import coriolis_bound
from .grid import EmptyGridError
from .sim import SimulationError, integrate_batch, trajectory_metrics

log = logging.getLogger("compatcbf")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SAFETY_TOL = 1e-6
MONOTONE_TOL = 1e-9
PASSIVITY_TOL = 1e-9


class UsageError(ValueError):
    pass


class EmptySweepError(UsageError):
    """No sweep point lies inside Gamma_nu and the safe set."""


def config_digest(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=float) + "\n")
    return path


# -- certification ---------------------------------------------------------


def tuned_rho(cfg: ScenarioConfig, seed: int = 0) -> dict:
    """Tune rho on the configuration grid; raises PsiNotPositiveError when psi <= 0 somewhere."""
    model = cfg.model()
    k_c = coriolis_bound(model, cfg.q_grid, cfg.coriolis_safety_factor, seed=seed)
    prof = rho_profile(cfg.barrier, model, cfg.nominal, cfg.nu, cfg.q_grid, k_c)
    i = prof.argmax
    rho = float(prof.rho[i])
    return {"rho": rho, "k_c": k_c, "argmax_q": prof.q[i].tolist(), "psi": float(prof.psi[i]),
            "eta1": float(prof.eta1[i]), "eta2": float(prof.eta2[i]), "margins": rho_margin(prof, rho)}


def run_certification(cfg: ScenarioConfig, seed: int = 0) -> dict:
    """All offline checks for a scenario, as one JSON-ready document."""
    model = cfg.model()
    sections = {}
    a3 = check_assumption3(cfg.barrier, model, cfg.state_grid(), cfg.nominal, cfg.nu)
    sections["assumption3"] = a3.to_dict()
    if cfg.augmented:
        ps = verify_psi(cfg.barrier, model, cfg.nominal, cfg.nu, cfg.q_grid)
        sections["psi"] = None  # keeps psi ahead of rho in the report
        try:
            tuning = tuned_rho(cfg, seed)
            ps.rho = tuning["rho"]
            sections["rho"] = {"pass": True, **tuning}
        except PsiNotPositiveError as err:
            sections["rho"] = {"pass": False, "error": str(err)}
        sections["psi"] = ps.to_dict()
    else:
        cs = verify_cbf_stabilizable(cfg.controller(), model, cfg.nu, cfg.state_grid())
        sections["cbf_stabilizable"] = cs.to_dict()
    passed = all(s["pass"] for s in sections.values())
    return {"scenario": cfg.name, "config_sha256": config_digest(cfg), "nu": cfg.nu, "pass": passed,
            "checks": sections}


def cmd_certify(cfg: ScenarioConfig, out: Path, seed: int = 0) -> int:
    report = run_certification(cfg, seed)
    path = _write_json(out / "certify_report.json", report)
    for name, sec in report["checks"].items():
        extra = f" rho={sec['rho']:.6g}" if name == "rho" and sec["pass"] else ""
        nv = f" violations={sec['n_violations']}/{sec['n_checked']}" if "n_violations" in sec else ""
        print(f"{name}: {'PASS' if sec['pass'] else 'FAIL'}{nv}{extra}")
    print(f"certification {'PASS' if report['pass'] else 'FAIL'} -> {path}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_tune_rho(cfg: ScenarioConfig, out: Path, seed: int = 0) -> int:
    if not cfg.augmented:
        raise UsageError("tune-rho needs an augmented high-order scenario")
    try:
        tuning = tuned_rho(cfg, seed)
    except PsiNotPositiveError as err:
        _write_json(out / "rho.json", {"scenario": cfg.name, "pass": False, "error": str(err)})
        print(f"tune-rho FAIL: {err}")
        return EXIT_FAIL
    _write_json(out / "rho.json", {"scenario": cfg.name, "pass": True, **tuning})
    print(f"rho = {tuning['rho']:.10g} (k_c = {tuning['k_c']:.6g}, argmax q = {tuning['argmax_q']})")
    return EXIT_OK


def _certified(cfg: ScenarioConfig, out: Path, seed: int) -> bool:
    """Reuse a matching certification report in ``out`` or certify now."""
    path = out / "certify_report.json"
    if path.exists():
        try:
            rep = json.loads(path.read_text())
            if rep.get("config_sha256") == config_digest(cfg):
                return bool(rep.get("pass"))
        except json.JSONDecodeError:
            pass
    rep = run_certification(cfg, seed)
    _write_json(path, rep)
    return rep["pass"]


# -- simulation ------------------------------------------------------------


def _controller_for_sim(cfg: ScenarioConfig, seed: int):
    if cfg.augmented and cfg.rho is None:
        return cfg.controller(tuned_rho(cfg, seed)["rho"])
    return cfg.controller()


def property_checks(cfg: ScenarioConfig, metrics, perturbed: bool) -> dict:
    """Pass/fail flags for safety and Lyapunov monotonicity of one run."""
    checks = {}
    if not perturbed:
        checks["h_nonnegative"] = metrics.min_h >= -SAFETY_TOL
        checks["V_nonincreasing"] = metrics.max_V_increase <= MONOTONE_TOL
    if cfg.is_high_order:
        checks["c_nonnegative"] = metrics.min_c >= -SAFETY_TOL
    return checks


def simulate_states(cfg: ScenarioConfig, x0s, out: Path, seed: int = 0, prefix: str = "traj") -> list[dict]:
    """Integrate every start state, write one CSV each and return summary rows."""
    model = cfg.model()
    ctrl = _controller_for_sim(cfg, seed)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    perturbed = cfg.sim.disturbance is not None
    try:
        trajs = integrate_batch(model, ctrl, x0s, cfg.sim)
        aborted = None
    except SimulationError as err:
        trajs, aborted = err.trajectories, str(err)
    rows = []
    for i, (x0, tr) in enumerate(zip(x0s, trajs)):
        csv_path = tr.to_csv(out / f"{prefix}_{i:03d}.csv")
        row = {"index": i, "x0": x0.tolist(), "csv": csv_path.name, "aborted": tr.aborted}
        if len(tr):
            m = trajectory_metrics(tr)
            checks = property_checks(cfg, m, perturbed)
            row.update(m.to_dict())
            row["passivity_ok"] = m.max_supply_residual <= PASSIVITY_TOL
            row["checks"] = checks
            row["pass"] = tr.aborted is None and all(checks.values())
        else:
            row["pass"] = False
        rows.append(row)
    if aborted:
        log.error("%s", aborted)
    return rows


def parse_x0(items, n_state: int = 4) -> np.ndarray:
    """``["q1,q2,v1,v2", ...]`` (or ';'-separated states in one item) -> array."""
    states = []
    for item in items:
        for chunk in str(item).split(";"):
            if not chunk.strip():
                continue
            try:
                vals = [float(s) for s in chunk.split(",")]
            except ValueError as err:
                raise UsageError(f"--x0 {chunk!r}: {err}") from err
            if len(vals) != n_state or not np.all(np.isfinite(vals)):
                raise UsageError(f"--x0 {chunk!r}: need {n_state} finite comma-separated numbers")
            states.append(vals)
    if not states:
        raise UsageError("--x0 given but no state parsed")
    return np.array(states)


def _summarise(rows) -> dict:
    done = [r for r in rows if "min_h" in r]
    return {
        "n_runs": len(rows),
        "n_pass": sum(bool(r["pass"]) for r in rows),
        "min_h": min((r["min_h"] for r in done), default=None),
        "min_c": min((r["min_c"] for r in done), default=None),
        "max_V_increase": max((r["max_V_increase"] for r in done), default=None),
        "max_terminal_norm": max((r["terminal_norm"] for r in done), default=None),
        "max_supply_residual": max((r["max_supply_residual"] for r in done), default=None),
    }


def _gate(cfg, out, seed, force) -> int | None:
    if force:
        return None
    if not _certified(cfg, out, seed):
        print("certification failed for this scenario; rerun with --force to simulate anyway", file=sys.stderr)
        return EXIT_FAIL
    return None


def cmd_simulate(cfg: ScenarioConfig, out: Path, x0s=None, seed: int = 0, force: bool = False) -> int:
    gate = _gate(cfg, out, seed, force)
    if gate is not None:
        return gate
    if x0s is None:
        if not cfg.x0:
            raise UsageError("no --x0 given and the scenario lists no initial_states")
        x0s = np.array(cfg.x0)
    rows = simulate_states(cfg, x0s, out, seed)
    summary = {"scenario": cfg.name, **_summarise(rows), "runs": rows}
    _write_json(out / "summary.json", summary)
    for r in rows:
        print(f"x0={r['x0']} {'PASS' if r['pass'] else 'FAIL'} "
              f"min_h={r.get('min_h', float('nan')):.3g} min_c={r.get('min_c', float('nan')):.3g} "
              f"|x(T)|={r.get('terminal_norm', float('nan')):.3g}")
    return EXIT_OK if summary["n_pass"] == summary["n_runs"] else EXIT_FAIL


def sweep_intake(cfg: ScenarioConfig, points) -> tuple[np.ndarray, list[dict]]:
    """Split sweep points into admissible start states and rejected ones with reasons."""
    from .barrier import eval_h
    from .controller import lyapunov_V

    points = np.atleast_2d(points)
    model = cfg.model()
    V = lyapunov_V(cfg.nominal, model, points)
    h = eval_h(cfg.barrier, points)
    c = cfg.barrier.constraint.value(points[:, :2]) if cfg.is_high_order else np.ones(len(points))
    rejected = []
    for x, Vi, hi, ci in zip(points, V, h, c):
        reasons = []
        if Vi > cfg.nu:
            reasons.append(f"V = {Vi:.4g} > nu = {cfg.nu:g}")
        if hi < 0:
            reasons.append(f"h = {hi:.4g} < 0")
        if ci < 0:
            reasons.append(f"c = {ci:.4g} < 0")
        if reasons:
            rejected.append({"x0": x.tolist(), "reasons": reasons})
    keep = cfg.admissible(points)
    return points[keep], rejected


def cmd_sweep(cfg: ScenarioConfig, out: Path, x0s=None, seed: int = 0, force: bool = False) -> int:
    if x0s is None:
        if cfg.sweep is None:
            raise UsageError("scenario has no sweep_grid_state and no --x0 was given")
        x0s = cfg.sweep.points()
    accepted, rejected = sweep_intake(cfg, x0s)
    for r in rejected:
        print(f"rejected x0={r['x0']}: {'; '.join(r['reasons'])}", file=sys.stderr)
    if len(accepted) == 0:
        raise EmptySweepError("no sweep point lies inside Gamma_nu and the safe set")
    gate = _gate(cfg, out, seed, force)
    if gate is not None:
        return gate
    rows = simulate_states(cfg, accepted, out, seed, prefix="sweep")
    summary = {"scenario": cfg.name, **_summarise(rows), "rejected": rejected, "runs": rows}
    _write_json(out / "sweep_summary.json", summary)
    print(f"sweep: {summary['n_pass']}/{summary['n_runs']} pass, {len(rejected)} rejected at intake; "
          f"min_h={summary['min_h']:.3g} min_c={summary['min_c']:.3g} "
          f"max dV={summary['max_V_increase']:.3g}")
    return EXIT_OK if summary["n_pass"] == summary["n_runs"] else EXIT_FAIL


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compatcbf", description="Certify and simulate compatible safety filters.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("certify", "run the offline grid certification"),
                        ("tune-rho", "tune the augmented-law gain rho"),
                        ("simulate", "simulate start states and write CSV trajectories"),
                        ("sweep", "simulate the scenario's grid of start states")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True,
                       help=f"scenario JSON path or bundled name ({', '.join(BUNDLED)})")
        s.add_argument("--out", default=None, help="output directory (default: scenario output_dir)")
        s.add_argument("--x0", action="append", default=None,
                       help="start state q1,q2,v1,v2; repeat the flag or separate states with ';'")
        s.add_argument("--force", action="store_true", help="simulate even if certification fails")
        s.add_argument("--seed", type=int, default=0, help="seed for randomized sampling (default 0)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scenario(args.config)
        out = Path(args.out if args.out is not None else cfg.output_dir)
        x0s = parse_x0(args.x0) if args.x0 else None
        if args.command == "certify":
            return cmd_certify(cfg, out, args.seed)
        if args.command == "tune-rho":
            return cmd_tune_rho(cfg, out, args.seed)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, x0s, args.seed, args.force)
        return cmd_sweep(cfg, out, x0s, args.seed, args.force)
    except (ConfigError, UsageError, EmptyGridError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except PsiNotPositiveError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
