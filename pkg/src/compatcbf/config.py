"""Scenario configuration: a JSON document with units spelled out in the keys.

A scenario fixes the arm, the nominal law, the barrier, the filter weight,
the certification level and grids, the simulation settings and the default
initial conditions. ``ScenarioConfig.to_dict`` and ``from_dict`` round-trip
exactly, so a saved scenario reloads into an identical controller.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .barrier import (
    ClassKappa,
    EllipsoidConstraint,
    HighOrderBarrier,
    RelDeg1Barrier,
    SmoothedConstraint,
    eval_h,
)
from .controller import CompatController, ComputedTorque, PdGravity, Weight, lyapunov_V
from .dynamics import TwoLinkArmParams, two_link_arm
from .grid import GridSpec
from .sim import DisturbanceSpec, SimConfig


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file."""


def _mat(x, name, n):
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name}: not a numeric matrix") from err
    if a.shape != (n, n):
        raise ConfigError(f"{name}: expected shape {(n, n)}, got {a.shape}")
    return tuple(map(tuple, a.tolist()))


def _vec(x, name, n):
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name}: not a numeric vector") from err
    if a.shape != (n,):
        raise ConfigError(f"{name}: expected length {n}, got shape {a.shape}")
    return tuple(a.tolist())


def _req(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing field {where}.{key}")
    return d[key]


def _grid(d, where, dim) -> GridSpec:
    try:
        g = GridSpec(tuple(_req(d, "lo", where)), tuple(_req(d, "hi", where)), tuple(_req(d, "num", where)))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from err
    if g.ndim != dim:
        raise ConfigError(f"{where}: expected {dim} axes, got {g.ndim}")
    return g


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    arm: TwoLinkArmParams
    nominal: PdGravity | ComputedTorque
    barrier: RelDeg1Barrier | HighOrderBarrier
    weight: Weight
    augmented: bool
    rho: float | None          # None: use the tuned value
    nu: float
    q_grid: GridSpec
    v_grid: GridSpec
    coriolis_safety_factor: float
    sim: SimConfig
    x0: tuple[tuple[float, ...], ...]
    sweep: GridSpec | None = None
    output_dir: str = "runs"
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if self.augmented and not isinstance(self.barrier, HighOrderBarrier):
            raise ConfigError("augmented control needs a high_order barrier")
        if self.augmented != (self.weight is Weight.INVERSE_MASS):
            raise ConfigError("weight inverse_mass goes together with augmented = true")
        if self.augmented and not isinstance(self.nominal, PdGravity):
            raise ConfigError("augmented control is paired with the pd_gravity nominal law")
        if not self.nu > 0:
            raise ConfigError("nu must be positive")
        if self.rho is not None and not (np.isfinite(self.rho) and self.rho > 0):
            raise ConfigError("rho must be positive and finite")
        if not self.coriolis_safety_factor >= 1.0:
            raise ConfigError("coriolis safety factor must be at least 1")
        for x in self.x0:
            if len(x) != 4 or not np.all(np.isfinite(x)):
                raise ConfigError(f"initial state {x} must have 4 finite entries")
        if self.sweep is not None and self.sweep.ndim != 4:
            raise ConfigError("sweep grid must span the 4 state axes")

    # -- construction of the runtime objects --------------------------------

    @property
    def dof(self) -> int:
        return 2

    @property
    def is_high_order(self) -> bool:
        return isinstance(self.barrier, HighOrderBarrier)

    def model(self):
        return two_link_arm(self.arm)

    def controller(self, rho: float | None = None) -> CompatController:
        r = rho if rho is not None else (self.rho if self.rho is not None else 1.0)
        return CompatController(self.nominal, self.barrier, self.weight, float(r), self.augmented)

    def state_grid(self) -> GridSpec:
        return GridSpec.product(self.q_grid, self.v_grid)

    def admissible(self, x) -> np.ndarray:
        """Membership in Gamma_nu intersected with the safe set (and Q for high-order barriers)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = (lyapunov_V(self.nominal, self.model(), x) <= self.nu) & (eval_h(self.barrier, x) >= 0.0)
        if self.is_high_order:
            ok &= self.barrier.constraint.value(x[:, :2]) >= 0.0
        return ok

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        b = self.barrier
        if isinstance(b, RelDeg1Barrier):
            barrier = {"kind": "reldeg1", "b_rad2_per_s2": b.b, "P_q_per_s2": [list(r) for r in b.P_q],
                       "P_v": [list(r) for r in b.P_v], "alpha_gain_per_s": b.alpha.gain}
        else:
            con = b.constraint
            base = con.base if isinstance(con, SmoothedConstraint) else con
            barrier = {"kind": "high_order", "a_rad2": base.a, "q_r_rad": list(base.q_r),
                       "P": [list(r) for r in base.P],
                       "delta_rad2": con.delta if isinstance(con, SmoothedConstraint) else 0.0,
                       "phi_gain_per_s": b.phi.gain, "alpha_gain_per_s": b.alpha.gain}
        dist = self.sim.disturbance
        return {
            "name": self.name,
            "description": self.description,
            "model": {"kind": "two_link_arm", "l1_m": self.arm.l1, "l2_m": self.arm.l2,
                      "m1_kg": self.arm.m1, "m2_kg": self.arm.m2, "g0_m_per_s2": self.arm.g0},
            "nominal": {"kind": "pd_gravity" if isinstance(self.nominal, PdGravity) else "computed_torque",
                        "Kp_Nm_per_rad": [list(r) for r in self.nominal.Kp],
                        "Kd_Nm_s_per_rad": [list(r) for r in self.nominal.Kd]},
            "barrier": barrier,
            "controller": {"weight": self.weight.value, "augmented": self.augmented, "rho_s_per_rad": self.rho},
            "certification": {"nu_J": self.nu, "q_grid_rad": self.q_grid.to_dict(),
                              "v_grid_rad_per_s": self.v_grid.to_dict(),
                              "coriolis_safety_factor": self.coriolis_safety_factor},
            "simulation": {"dt_s": self.sim.dt, "T_s": self.sim.T, "integrator": self.sim.integrator,
                           "disturbance": None if dist is None else {
                               "amplitudes_Nm": list(dist.amplitudes),
                               "frequencies_rad_per_s": list(dist.frequencies)}},
            "initial_states": [list(x) for x in self.x0],
            "sweep_grid_state": None if self.sweep is None else self.sweep.to_dict(),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("scenario must be a JSON object")
        try:
            return cls._from_dict(d)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def _from_dict(cls, d: dict) -> "ScenarioConfig":
        n = 2
        m = _req(d, "model", "")
        if _req(m, "kind", "model") != "two_link_arm":
            raise ConfigError(f"unknown model kind {m['kind']!r}")
        arm = TwoLinkArmParams(float(_req(m, "l1_m", "model")), float(_req(m, "l2_m", "model")),
                               float(_req(m, "m1_kg", "model")), float(_req(m, "m2_kg", "model")),
                               float(m.get("g0_m_per_s2", 9.81)))

        nd = _req(d, "nominal", "")
        Kp = _mat(_req(nd, "Kp_Nm_per_rad", "nominal"), "Kp", n)
        Kd = _mat(_req(nd, "Kd_Nm_s_per_rad", "nominal"), "Kd", n)
        kinds = {"pd_gravity": PdGravity, "computed_torque": ComputedTorque}
        kind = _req(nd, "kind", "nominal")
        if kind not in kinds:
            raise ConfigError(f"unknown nominal law {kind!r}")
        nominal = kinds[kind](Kp, Kd)

        bd = _req(d, "barrier", "")
        alpha = ClassKappa(float(bd.get("alpha_gain_per_s", 1.0)))
        bkind = _req(bd, "kind", "barrier")
        if bkind == "reldeg1":
            barrier = RelDeg1Barrier(float(_req(bd, "b_rad2_per_s2", "barrier")),
                                     _mat(_req(bd, "P_q_per_s2", "barrier"), "P_q", n),
                                     _mat(_req(bd, "P_v", "barrier"), "P_v", n), alpha)
        elif bkind == "high_order":
            base = EllipsoidConstraint(float(_req(bd, "a_rad2", "barrier")),
                                       _vec(_req(bd, "q_r_rad", "barrier"), "q_r", n),
                                       _mat(_req(bd, "P", "barrier"), "P", n))
            delta = float(bd.get("delta_rad2", 0.0))
            if delta < 0:
                raise ConfigError("delta must be non-negative (0 disables smoothing)")
            con = SmoothedConstraint(base, delta) if delta > 0 else base
            barrier = HighOrderBarrier(con, ClassKappa(float(bd.get("phi_gain_per_s", 1.0))), alpha)
        else:
            raise ConfigError(f"unknown barrier kind {bkind!r}")

        cd = _req(d, "controller", "")
        try:
            weight = Weight(_req(cd, "weight", "controller"))
        except ValueError as err:
            raise ConfigError(str(err)) from err
        rho = cd.get("rho_s_per_rad")

        ce = _req(d, "certification", "")
        sd = _req(d, "simulation", "")
        dist = sd.get("disturbance")
        if dist is not None:
            dist = DisturbanceSpec(_vec(_req(dist, "amplitudes_Nm", "disturbance"), "amplitudes", n),
                                   _vec(_req(dist, "frequencies_rad_per_s", "disturbance"), "frequencies", n))
        sim = SimConfig(float(_req(sd, "dt_s", "simulation")), float(_req(sd, "T_s", "simulation")),
                        sd.get("integrator", "rk4"), dist)
        sweep = d.get("sweep_grid_state")
        return cls(
            name=str(_req(d, "name", "")),
            description=str(d.get("description", "")),
            arm=arm,
            nominal=nominal,
            barrier=barrier,
            weight=weight,
            augmented=bool(cd.get("augmented", False)),
            rho=None if rho is None else float(rho),
            nu=float(_req(ce, "nu_J", "certification")),
            q_grid=_grid(_req(ce, "q_grid_rad", "certification"), "q_grid_rad", n),
            v_grid=_grid(_req(ce, "v_grid_rad_per_s", "certification"), "v_grid_rad_per_s", n),
            coriolis_safety_factor=float(ce.get("coriolis_safety_factor", 1.05)),
            sim=sim,
            x0=tuple(tuple(float(a) for a in x) for x in d.get("initial_states", [])),
            sweep=None if sweep is None else _grid(sweep, "sweep_grid_state", 2 * n),
            output_dir=str(d.get("output_dir", "runs")),
        )

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read {path}: {err}") from err
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from err

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


BUNDLED = ("reldeg1_reference", "reldeg2_reference", "reldeg2_interior")


def bundled_path(name: str) -> Path:
    """Path of a scenario shipped with the package."""
    if name not in BUNDLED:
        raise ConfigError(f"unknown bundled scenario {name!r}; choose from {', '.join(BUNDLED)}")
    return Path(str(resources.files("compatcbf") / "scenarios" / f"{name}.json"))


def load_scenario(name_or_path) -> ScenarioConfig:
    """Load a bundled scenario by name or any scenario file by path."""
    if str(name_or_path) in BUNDLED:
        return ScenarioConfig.load(bundled_path(str(name_or_path)))
    return ScenarioConfig.load(name_or_path)
