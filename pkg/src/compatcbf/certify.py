"""Offline grid certification of compatible controllers.

Everything here is sound only up to grid resolution: a pass means no
violation at any sampled point. Refining a grid keeps every old point, so
a failure never disappears under refinement.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .barrier import (
    BarrierSpec,
    HighOrderBarrier,
    barrier_terms,
    constraint_value,
    eval_h,
    grad_h,
)
from .controller import (
    CompatController,
    NominalLaw,
    PdGravity,
    lyapunov_V,
    lyapunov_grad,
    nominal_control,
    potential,
    weight_inverse,
)
from .dynamics import AffineDynamics, MechanicalModel
from .grid import EmptyGridError, GridSpec
from .numerics import dot, matvec, spectral_norm

log = logging.getLogger(__name__)

LG_ZERO_TOL = 1e-10
GRAD_ZERO_TOL = 1e-8
MAX_STORED_COUNTEREXAMPLES = 1000


class CertificationError(RuntimeError):
    pass


class PsiNotPositiveError(CertificationError):
    pass


class NonePassingError(CertificationError):
    pass


@dataclass(frozen=True)
class Counterexample:
    state: tuple[float, ...]
    condition: str
    value: float

    def to_dict(self) -> dict:
        return {"state": list(self.state), "condition": self.condition, "value": self.value}


@dataclass
class CertReport:
    check: str
    passed: bool
    nu: float | None
    grid: GridSpec | None
    counterexamples: list[Counterexample] = field(default_factory=list)
    n_violations: int = 0
    n_checked: int = 0
    rho: float | None = None
    wall_time: float = 0.0
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "pass": self.passed,
            "nu": self.nu,
            "rho": self.rho,
            "n_checked": self.n_checked,
            "n_violations": self.n_violations,
            "counterexamples": [c.to_dict() for c in self.counterexamples],
            "grid": self.grid.to_dict() if self.grid is not None else None,
            "wall_time_s": self.wall_time,
            "notes": self.notes,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class _Collector:
    """Accumulates violations in grid order, storing the first few states."""

    def __init__(self):
        self.items: list[Counterexample] = []
        self.count = 0
        self.checked = 0

    def add(self, states, condition, values):
        values = np.atleast_1d(values)
        self.count += values.size
        room = MAX_STORED_COUNTEREXAMPLES - len(self.items)
        for s, v in zip(np.atleast_2d(states)[:room], values[:room]):
            self.items.append(Counterexample(tuple(float(a) for a in s), condition, float(v)))


def _iter_points(grid, chunk):
    if isinstance(grid, GridSpec):
        yield from grid.chunks(chunk)
    else:
        pts = np.atleast_2d(np.asarray(grid, dtype=float))
        if pts.size == 0:
            raise EmptyGridError("no points supplied")
        for s in range(0, len(pts), chunk):
            yield pts[s : s + chunk]


def condition5_lhs(ctrl: CompatController, model, x):
    """grad V^T g G^-1 g^T grad h at x."""
    x = np.asarray(x, dtype=float)
    gV = lyapunov_grad(ctrl.nominal, model, x)
    gh = grad_h(ctrl.barrier, x)
    Ginv = weight_inverse(ctrl.weight, model, x)
    if isinstance(model, AffineDynamics):
        g = model.g(x)
        a = np.einsum("...ij,...i->...j", g, gV)
        b = np.einsum("...ij,...i->...j", g, gh)
    else:
        n = model.dof
        Minv = model.M_inv(x[..., :n])
        a = matvec(Minv, gV[..., n:])
        b = matvec(Minv, gh[..., n:])
    return dot(a, matvec(Ginv, b))


def _margin(ctrl, model, x):
    t = barrier_terms(ctrl.barrier, model, x)
    k = nominal_control(ctrl.nominal, model, x)
    return t.Lf_h + dot(t.Lg_h, k) + ctrl.barrier.alpha(t.h)


def _in_region(ctrl, model, x, nu):
    keep = (lyapunov_V(ctrl.nominal, model, x) <= nu) & (eval_h(ctrl.barrier, x) >= 0.0)
    if isinstance(ctrl.barrier, HighOrderBarrier):
        keep &= constraint_value(ctrl.barrier, x) >= 0.0
    return keep


def verify_cbf_stabilizable(ctrl: CompatController, model, nu: float, grid,
                            chunk: int = 262_144) -> CertReport:
    """Check the CBF-stabilizable level-set condition on every grid state.

    Inside V <= nu, h >= 0 (and c >= 0 for high-order barriers), a state
    where the compatibility inequality fails, i.e. grad V^T g G^-1 g^T grad h >= 0, must
    already be safe under the nominal law (z >= 0).
    """
    t0 = time.perf_counter()
    col = _Collector()
    for pts in _iter_points(grid, chunk):
        keep = _in_region(ctrl, model, pts, nu)
        if not np.any(keep):
            continue
        sub = pts[keep]
        col.checked += len(sub)
        lhs = condition5_lhs(ctrl, model, sub)
        in_A = lhs >= 0.0
        if not np.any(in_A):
            continue
        z = _margin(ctrl, model, sub[in_A])
        bad = z < 0.0
        if np.any(bad):
            col.add(sub[in_A][bad], "condition5_fails_and_z_negative", z[bad])
    return CertReport("cbf_stabilizable", col.count == 0, float(nu),
                      grid if isinstance(grid, GridSpec) else None, col.items, col.count,
                      col.checked, wall_time=time.perf_counter() - t0)


def _with_stationary_points(barrier, model, grid):
    """Grid states plus the barrier's stationary configurations crossed with the velocity axes."""
    base = grid.points() if isinstance(grid, GridSpec) else np.atleast_2d(np.asarray(grid, float))
    if base.size == 0:
        raise EmptyGridError("no states supplied")
    if not isinstance(barrier, HighOrderBarrier) or not isinstance(grid, GridSpec):
        return base
    n = model.dof
    qs = barrier.constraint.stationary_points()
    vgrid = GridSpec(grid.lo[n:], grid.hi[n:], grid.num[n:]).points()
    extra = np.concatenate(
        [np.concatenate([np.broadcast_to(q, (len(vgrid), n)), vgrid], axis=-1) for q in qs]
    )
    return np.concatenate([base, extra])


def check_assumption3(barrier: BarrierSpec, model, grid, law: NominalLaw | None = None,
                      nu: float | None = None, chunk: int = 262_144) -> CertReport:
    """Where L_g h vanishes, the state must be interior and grad h must vanish too.

    For high-order barriers the constraint's stationary configurations are
    added to the grid, since a regular grid rarely hits them exactly.
    """
    t0 = time.perf_counter()
    pts_all = _with_stationary_points(barrier, model, grid)
    col = _Collector()
    for s in range(0, len(pts_all), chunk):
        pts = pts_all[s : s + chunk]
        if law is not None and nu is not None:
            pts = pts[lyapunov_V(law, model, pts) <= nu]
        if len(pts) == 0:
            continue
        col.checked += len(pts)
        t = barrier_terms(barrier, model, pts)
        zero = np.linalg.norm(t.Lg_h, axis=-1) <= LG_ZERO_TOL
        if not np.any(zero):
            continue
        sub = pts[zero]
        h = t.h[zero]
        interior = h > 0.0
        if isinstance(barrier, HighOrderBarrier):
            interior &= t.c[zero] > 0.0
        gnorm = np.linalg.norm(grad_h(barrier, sub), axis=-1)
        if np.any(~interior):
            col.add(sub[~interior], "Lg_h_zero_outside_interior", h[~interior])
        flat = gnorm > GRAD_ZERO_TOL
        if np.any(flat):
            col.add(sub[flat], "Lg_h_zero_with_nonzero_grad_h", gnorm[flat])
    return CertReport("assumption3", col.count == 0, nu, grid if isinstance(grid, GridSpec) else None,
                      col.items, col.count, col.checked, wall_time=time.perf_counter() - t0)


def _require_pd_highorder(barrier, law):
    if not isinstance(barrier, HighOrderBarrier):
        raise TypeError("psi is defined for high-order barriers")
    if not isinstance(law, PdGravity):
        raise TypeError("psi is defined for the PD + gravity nominal law")


def psi(barrier: HighOrderBarrier, model: MechanicalModel, law: PdGravity, q):
    """psi(q) = -grad c^T M^-1 Kp q + alpha(phi(c)); equals z at zero velocity."""
    _require_pd_highorder(barrier, law)
    q = np.asarray(q, dtype=float)
    c, gc, _ = barrier.constraint.all(q)
    Minv = model.M_inv(q)
    return -dot(gc, matvec(Minv, matvec(np.asarray(law.Kp), q))) + barrier.alpha(barrier.phi(c))


def _q_points(q_grid):
    if isinstance(q_grid, GridSpec):
        return q_grid.points()
    pts = np.atleast_2d(np.asarray(q_grid, dtype=float))
    if pts.size == 0:
        raise EmptyGridError("no configurations supplied")
    return pts


def _psi_region(barrier, law, q, nu, tol=0.0):
    return (potential(law, q) <= nu * (1.0 + tol)) & (barrier.constraint.value(q) >= -tol)


BOUNDARY_SAMPLES = 4096
BOUNDARY_TOL = 1e-12


def _ellipse(S, center, level, n):
    """n points with (q - center)^T S (q - center) = level, for 2x2 SPD S."""
    L = np.linalg.cholesky(np.asarray(S, dtype=float))
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    u = np.stack([np.cos(th), np.sin(th)], axis=-1)
    return np.asarray(center, dtype=float) + np.sqrt(level) * np.linalg.solve(L.T, u.T).T


def _region_points(barrier, law, nu, q_grid, n_boundary):
    """Grid configurations in P_nu and Q plus samples of both boundary curves.

    Suprema over the region sit on its boundary in practice, which a regular
    grid approaches only to within one cell; sampling the curves closes that gap
    for planar configurations.
    """
    q = _q_points(q_grid)
    q = q[_psi_region(barrier, law, q, nu)]
    if q.shape[-1] != 2 or not n_boundary:
        return q
    curves = [_ellipse(np.asarray(law.Kp), np.zeros(2), 2.0 * nu, n_boundary)]
    base = getattr(barrier.constraint, "base", barrier.constraint)
    curves.append(_ellipse(base._P, base._qr, base.a, n_boundary))
    edge = np.concatenate(curves)
    edge = edge[_psi_region(barrier, law, edge, nu, BOUNDARY_TOL)]
    return np.concatenate([q, edge])


def verify_psi(barrier: HighOrderBarrier, model: MechanicalModel, law: PdGravity, nu: float,
               q_grid, n_boundary: int = BOUNDARY_SAMPLES) -> CertReport:
    """psi(q) > 0 at every grid configuration with P(q) <= nu and c(q) >= 0.

    Boundary samples of both sets are checked too (planar case).
    """
    t0 = time.perf_counter()
    _require_pd_highorder(barrier, law)
    q = _region_points(barrier, law, nu, q_grid, n_boundary)
    col = _Collector()
    col.checked = len(q)
    if len(q):
        p = psi(barrier, model, law, q)
        bad = p <= 0.0
        if np.any(bad):
            col.add(q[bad], "psi_not_positive", p[bad])
    return CertReport("psi", col.count == 0, float(nu), q_grid if isinstance(q_grid, GridSpec) else None,
                      col.items, col.count, col.checked, wall_time=time.perf_counter() - t0)


@dataclass(frozen=True)
class RhoProfile:
    """Per-configuration quantities behind the rho tuning rule."""

    q: np.ndarray
    psi: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    rho: np.ndarray

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.rho))


def rho_profile(barrier: HighOrderBarrier, model: MechanicalModel, law: PdGravity, nu: float,
                q_grid, k_c: float, n_boundary: int = BOUNDARY_SAMPLES) -> RhoProfile:
    _require_pd_highorder(barrier, law)
    q = _region_points(barrier, law, nu, q_grid, n_boundary)
    if len(q) == 0:
        raise EmptyGridError("no grid configuration inside P_nu and Q")
    _, gc, Hc = barrier.constraint.all(q)
    Minv = model.M_inv(q)
    row = matvec(Minv, gc)  # (grad c^T M^-1)^T, M symmetric
    eta1 = k_c * np.linalg.norm(row, axis=-1) + spectral_norm(Hc)
    eta2 = np.linalg.norm(matvec(np.asarray(law.Kd), row), axis=-1)  # Kd symmetric
    p = psi(barrier, model, law, q)
    if np.any(p <= 0.0):
        i = int(np.argmin(p))
        raise PsiNotPositiveError(f"psi = {p[i]:.3g} <= 0 at q = {q[i].tolist()}")
    rho = (eta1 + np.sqrt(eta1**2 + 4.0 * p * eta2)) / (2.0 * p)
    return RhoProfile(q, p, eta1, eta2, rho)


def tune_rho(barrier: HighOrderBarrier, model: MechanicalModel, law: PdGravity, nu: float,
             q_grid, k_c: float, n_boundary: int = BOUNDARY_SAMPLES) -> float:
    """Largest positive root of rho^2 psi - rho eta1 - eta2 = 0 over P_nu and Q."""
    prof = rho_profile(barrier, model, law, nu, q_grid, k_c, n_boundary)
    return float(prof.rho[prof.argmax])


@dataclass(frozen=True)
class NuSearchResult:
    nu: float
    report: CertReport
    probes: tuple[tuple[float, bool], ...]
    non_monotone: bool


def max_certifiable_nu(ctrl: CompatController, model, grid, nu_range: tuple[float, float],
                       iterations: int = 20, coarse: int = 9,
                       check: Callable[[float], CertReport] | None = None) -> NuSearchResult:
    """Largest nu in ``nu_range`` whose certification passes.

    A coarse sweep over the range runs first so that a pass above a failure
    (non-nested passing sets) is noticed, then bisection refines between the
    highest passing coarse probe and its failing neighbour.
    """
    lo, hi = map(float, nu_range)
    if not (0 < lo <= hi):
        raise ValueError("need 0 < nu_lo <= nu_hi")
    if check is None:
        if ctrl.augmented:
            check = lambda nu: verify_psi(ctrl.barrier, model, ctrl.nominal, nu, grid)  # noqa: E731
        else:
            check = lambda nu: verify_cbf_stabilizable(ctrl, model, nu, grid)  # noqa: E731

    probes: list[tuple[float, bool]] = []
    reports: dict[float, CertReport] = {}

    def probe(nu):
        r = check(nu)
        probes.append((nu, r.passed))
        reports[nu] = r
        return r.passed

    sweep = np.linspace(lo, hi, max(coarse, 2))
    results = [probe(float(nu)) for nu in sweep]
    if not results[0]:
        raise NonePassingError(f"certification fails already at nu_lo = {lo:g}")
    first_fail = next((i for i, ok in enumerate(results) if not ok), None)
    if first_fail is not None:
        a, b = float(sweep[first_fail - 1]), float(sweep[first_fail])
        for _ in range(iterations):
            mid = 0.5 * (a + b)
            if probe(mid):
                a = mid
            else:
                b = mid
    passing = [nu for nu, ok in probes if ok]
    failing = [nu for nu, ok in probes if not ok]
    best = max(passing)
    non_monotone = bool(failing) and best > min(failing)
    if non_monotone:
        log.warning("passing nu above a failing probe: certified sets are not nested here")
    rep = reports[best]
    rep.notes["non_monotone"] = non_monotone
    return NuSearchResult(best, rep, tuple(probes), non_monotone)


def rho_margin(profile: RhoProfile, rho: float) -> dict:
    """Worst-case z lower bounds at |v| = 1/rho for a given rho.

    ``tuned_form`` is psi - eta1/rho - eta2/rho^2, the form rho is tuned
    against. ``velocity_scaled`` is psi - eta1/rho^2 - eta2/rho, which pairs
    the terms quadratic in v with 1/rho^2 and the linear damping term with
    1/rho.
    """
    tuned = profile.psi - profile.eta1 / rho - profile.eta2 / rho**2
    scaled = profile.psi - profile.eta1 / rho**2 - profile.eta2 / rho
    return {"tuned_form_min": float(np.min(tuned)), "velocity_scaled_min": float(np.min(scaled))}
