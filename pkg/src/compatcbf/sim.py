"""Fixed-step closed-loop simulation with per-step telemetry.

Several initial conditions are integrated together as one batch; each row
evolves independently, so batching only amortises numpy call overhead.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barrier import HighOrderBarrier
from .controller import (
    CompatController,
    DegenerateFilterError,
    FeedbackLaw,
    PdGravity,
    evaluate,
    lyapunov_V,
    supply_rate_residual,
)
from .dynamics import MechanicalModel
from .numerics import matvec

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Integration aborted; carries the partial trajectories and offending states."""

    def __init__(self, message, trajectories=None, states=None):
        super().__init__(message)
        self.trajectories = trajectories or []
        self.states = states


@dataclass(frozen=True)
class DisturbanceSpec:
    amplitudes: tuple[float, ...]
    frequencies: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "frequencies", tuple(float(w) for w in self.frequencies))
        if len(self.amplitudes) != len(self.frequencies):
            raise ValueError("amplitudes and frequencies must have equal length")


def matched_disturbance(spec: DisturbanceSpec, t: float) -> np.ndarray:
    """d_i(t) = A_i sin(w_i t), added to the control input."""
    return np.asarray(spec.amplitudes) * np.sin(np.asarray(spec.frequencies) * t)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    T: float = 30.0
    integrator: str = "rk4"
    disturbance: DisturbanceSpec | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("T must be at least one step")
        if self.integrator != "rk4":
            raise ValueError(f"unknown integrator {self.integrator!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


CSV_SCALARS = ("h", "V", "z", "c", "cdot", "branch", "supply_residual")


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    h: np.ndarray
    V: np.ndarray
    z: np.ndarray
    c: np.ndarray
    cdot: np.ndarray
    psi: np.ndarray
    supply_residual: np.ndarray
    branch: np.ndarray
    aborted: str | None = field(default=None)

    def __len__(self):
        return len(self.t)

    @property
    def dof(self) -> int:
        return self.u.shape[-1]

    def header(self) -> list[str]:
        n = self.dof
        return (["t"] + [f"q{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
                + [f"u{i + 1}" for i in range(n)] + list(CSV_SCALARS))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for k in range(len(self.t)):
                w.writerow(
                    [repr(float(self.t[k]))]
                    + [repr(float(a)) for a in self.x[k]]
                    + [repr(float(a)) for a in self.u[k]]
                    + [repr(float(self.h[k])), repr(float(self.V[k])), repr(float(self.z[k])),
                       repr(float(self.c[k])), repr(float(self.cdot[k])), int(self.branch[k]),
                       repr(float(self.supply_residual[k]))]
                )
        return path


def read_csv(path) -> dict[str, np.ndarray]:
    """Load a trajectory CSV into column arrays keyed by header name."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}


def _psi_batch(ctrl, model, x):
    from .certify import psi

    if isinstance(ctrl.barrier, HighOrderBarrier) and isinstance(ctrl.nominal, PdGravity):
        return psi(ctrl.barrier, model, ctrl.nominal, x[..., : model.dof])
    return np.full(x.shape[:-1], np.nan)


def _dynamics(model, x, out, d):
    """State derivative under u* + d, reusing the inertia terms from the controller."""
    u = out.u + d
    if out.mech is None:
        return model.rhs(x, u)
    Minv, Cv, tau = out.mech
    return np.concatenate([x[..., model.dof :], matvec(Minv, u - Cv - tau)], axis=-1)


def integrate_batch(model: MechanicalModel, ctrl: CompatController, x0s, cfg: SimConfig) -> list[Trajectory]:
    """Integrate every row of ``x0s`` with classical RK4; control re-evaluated at each stage."""
    x = np.array(np.atleast_2d(x0s), dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    B, nx = x.shape
    n = model.dof if isinstance(model, MechanicalModel) else model.input_dim
    N, dt = cfg.n_steps, cfg.dt
    dist = cfg.disturbance

    def d(t):
        return np.zeros(n) if dist is None else matched_disturbance(dist, t)

    t_log = np.arange(N + 1) * dt
    X = np.empty((N + 1, B, nx))
    U = np.empty((N + 1, B, n))
    scal = {k: np.empty((N + 1, B)) for k in ("h", "V", "z", "c", "cdot", "psi", "res")}
    BR = np.empty((N + 1, B), dtype=np.int8)

    def record(k, x, out):
        X[k], U[k], BR[k] = x, out.u, out.branch
        scal["h"][k] = out.terms.h
        scal["z"][k] = out.z
        scal["c"][k] = out.terms.c
        scal["cdot"][k] = out.terms.cdot
        scal["V"][k] = lyapunov_V(ctrl.nominal, model, x)
        scal["psi"][k] = _psi_batch(ctrl, model, x)
        scal["res"][k] = (np.nan if isinstance(ctrl.nominal, FeedbackLaw)
                          else supply_rate_residual(ctrl, model, x, out.u))

    def pack(upto, reason=None):
        s = slice(0, upto)
        return [
            Trajectory(t_log[s], X[s, b], U[s, b], scal["h"][s, b], scal["V"][s, b], scal["z"][s, b],
                       scal["c"][s, b], scal["cdot"][s, b], scal["psi"][s, b], scal["res"][s, b],
                       BR[s, b], aborted=reason)
            for b in range(B)
        ]

    k = 0
    try:
        for k in range(N + 1):
            t = t_log[k]
            out = evaluate(ctrl, model, x)
            record(k, x, out)
            if k == N:
                break
            k1 = _dynamics(model, x, out, d(t))
            x2 = x + 0.5 * dt * k1
            k2 = _dynamics(model, x2, evaluate(ctrl, model, x2), d(t + 0.5 * dt))
            x3 = x + 0.5 * dt * k2
            k3 = _dynamics(model, x3, evaluate(ctrl, model, x3), d(t + 0.5 * dt))
            x4 = x + dt * k3
            k4 = _dynamics(model, x4, evaluate(ctrl, model, x4), d(t + dt))
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise SimulationError(f"non-finite state at t={t + dt:g}", pack(k + 1, "non-finite state"),
                                      states=x)
    except DegenerateFilterError as err:
        log.error("degenerate filter at t=%g", t_log[k])
        raise SimulationError(f"degenerate filter at t={t_log[k]:g}: {err}",
                              pack(k, "degenerate filter"), states=err.states) from err
    return pack(N + 1)


def integrate(model: MechanicalModel, ctrl: CompatController, x0, cfg: SimConfig) -> Trajectory:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("x0 must be a single state; use integrate_batch for several")
    return integrate_batch(model, ctrl, x0[None, :], cfg)[0]


@dataclass(frozen=True)
class TrajectoryMetrics:
    min_h: float
    min_c: float
    max_V_increase: float
    terminal_norm: float
    max_supply_residual: float
    branch_counts: dict

    def to_dict(self) -> dict:
        return {
            "min_h": self.min_h, "min_c": self.min_c, "max_V_increase": self.max_V_increase,
            "terminal_norm": self.terminal_norm, "max_supply_residual": self.max_supply_residual,
            "branch_counts": dict(self.branch_counts),
        }


def trajectory_metrics(traj: Trajectory) -> TrajectoryMetrics:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    dV = np.diff(traj.V)
    counts = {name: int(np.sum(traj.branch == val)) for name, val in
              (("nominal", 0), ("filtered", 1), ("filtered_augmented", 2))}
    min_c = float(np.min(traj.c)) if np.all(np.isfinite(traj.c)) else float("nan")
    return TrajectoryMetrics(
        min_h=float(np.min(traj.h)),
        min_c=min_c,
        max_V_increase=float(np.max(dV)) if dV.size else 0.0,
        terminal_norm=float(np.linalg.norm(traj.x[-1])),
        max_supply_residual=float(np.max(traj.supply_residual)),
        branch_counts=counts,
    )
