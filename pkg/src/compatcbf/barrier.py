"""Zeroing control barrier functions for control-affine and mechanical models.

Two families are supported on mechanical models:

* ``RelDeg1Barrier``: h = b - 1/2 (q^T P_q q + v^T P_v v), which has relative
  degree one because of the velocity term.
* ``HighOrderBarrier``: built from a configuration constraint c(q) >= 0 as
  h = grad c(q)^T v + phi(c(q)).

For the relative-degree-one form, differentiating along the mechanical
dynamics gives

    h' = -q^T P_q v - v^T P_v M^-1 (-C v - tau_g + u)

so L_f h = -q^T P_q v - (P_v v)^T M^-1 (-C v - tau_g) and
L_g h = -(P_v v)^T M^-1 (M is symmetric).

``FunctionBarrier`` wraps user callables and is used with ``AffineDynamics``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .dynamics import AffineDynamics, MechanicalModel, to_affine
from .numerics import dot, matvec, quad_form


@dataclass(frozen=True)
class ClassKappa:
    """Linear extended class-K function s -> gain * s."""

    gain: float = 1.0
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError(f"unsupported class-K kind {self.kind!r}")
        if not self.gain > 0:
            raise ValueError("class-K gain must be positive")

    def __call__(self, s):
        return self.gain * np.asarray(s, dtype=float)

    def derivative(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.gain)


def chi_delta(cbar, delta: float):
    """Cubic smoothing of a constraint value and its first two derivatives.

    chi = 1 for cbar > delta, (cbar/delta - 1)^3 + 1 otherwise. The function is
    C^2 across cbar = delta and keeps the zero set: chi(0) = 0.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    cbar = np.asarray(cbar, dtype=float)
    r = cbar / delta - 1.0
    inner = r <= 0.0
    val = np.where(inner, r**3 + 1.0, 1.0)
    d1 = np.where(inner, 3.0 * r**2 / delta, 0.0)
    d2 = np.where(inner, 6.0 * r / delta**2, 0.0)
    return val, d1, d2


@dataclass(frozen=True)
class EllipsoidConstraint:
    """cbar(q) = a - (q - q_r)^T P (q - q_r)."""

    a: float
    q_r: tuple[float, ...]
    P: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        q_r = np.asarray(self.q_r, dtype=float)
        if P.shape != (q_r.size, q_r.size):
            raise ValueError("P must be square with the dimension of q_r")
        if not np.allclose(P, P.T, atol=0.0, rtol=0.0):
            raise ValueError("P must be symmetric")
        object.__setattr__(self, "q_r", tuple(q_r.tolist()))
        object.__setattr__(self, "P", tuple(map(tuple, P.tolist())))
        # array copies for the hot path; not dataclass fields, so equality is unaffected
        object.__setattr__(self, "_P", P)
        object.__setattr__(self, "_qr", q_r)

    def value(self, q):
        e = np.asarray(q, dtype=float) - self._qr
        return self.a - quad_form(self._P, e)

    def grad(self, q):
        e = np.asarray(q, dtype=float) - self._qr
        return -2.0 * matvec(self._P, e)

    def hess(self, q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(-2.0 * self._P, q.shape[:-1] + self._P.shape)

    def all(self, q):
        e = np.asarray(q, dtype=float) - self._qr
        Pe = matvec(self._P, e)
        H = np.broadcast_to(-2.0 * self._P, e.shape[:-1] + self._P.shape)
        return self.a - dot(e, Pe), -2.0 * Pe, H

    def stationary_points(self) -> np.ndarray:
        """Configurations where grad cbar = 0; grids almost never land on them."""
        return np.asarray(self.q_r)[None, :]


@dataclass(frozen=True)
class SmoothedConstraint:
    """c(q) = chi_delta(cbar(q)); derivatives by exact chain rule."""

    base: EllipsoidConstraint
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive; use the bare constraint to disable smoothing")

    def all(self, q):
        cb, gb, Hb = self.base.all(q)
        val, d1, d2 = chi_delta(cb, self.delta)
        g = d1[..., None] * gb
        H = d2[..., None, None] * gb[..., :, None] * gb[..., None, :] + d1[..., None, None] * Hb
        return val, g, H

    def value(self, q):
        return chi_delta(self.base.value(q), self.delta)[0]

    def grad(self, q):
        return self.all(q)[1]

    def hess(self, q):
        return self.all(q)[2]

    def raw_value(self, q):
        return self.base.value(q)

    def stationary_points(self) -> np.ndarray:
        return self.base.stationary_points()


Constraint = Union[EllipsoidConstraint, SmoothedConstraint]


@dataclass(frozen=True)
class RelDeg1Barrier:
    b: float
    P_q: tuple[tuple[float, ...], ...]
    P_v: tuple[tuple[float, ...], ...]
    alpha: ClassKappa = ClassKappa()

    def __post_init__(self):
        P_q = np.asarray(self.P_q, dtype=float)
        P_v = np.asarray(self.P_v, dtype=float)
        if not np.allclose(P_q, P_q.T) or not np.allclose(P_v, P_v.T):
            raise ValueError("P_q and P_v must be symmetric")
        if np.linalg.eigvalsh(P_v)[0] <= 0:
            raise ValueError("P_v must be positive definite")
        object.__setattr__(self, "P_q", tuple(map(tuple, P_q.tolist())))
        object.__setattr__(self, "P_v", tuple(map(tuple, P_v.tolist())))


@dataclass(frozen=True)
class HighOrderBarrier:
    constraint: Constraint
    phi: ClassKappa = ClassKappa()
    alpha: ClassKappa = ClassKappa()


@dataclass(frozen=True)
class FunctionBarrier:
    """Barrier given directly by vectorised callables h(x) and grad h(x)."""

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    alpha: ClassKappa = ClassKappa()


BarrierSpec = Union[RelDeg1Barrier, HighOrderBarrier, FunctionBarrier]


def constraint_value(spec: BarrierSpec, x, model: MechanicalModel | None = None):
    """c(q) for high-order barriers, NaN otherwise."""
    x = np.asarray(x, dtype=float)
    if isinstance(spec, HighOrderBarrier):
        n = x.shape[-1] // 2
        return spec.constraint.value(x[..., :n])
    return np.full(x.shape[:-1], np.nan)


def eval_h(spec: BarrierSpec, x):
    x = np.asarray(x, dtype=float)
    if isinstance(spec, FunctionBarrier):
        return spec.value(x)
    n = x.shape[-1] // 2
    q, v = x[..., :n], x[..., n:]
    if isinstance(spec, RelDeg1Barrier):
        return spec.b - 0.5 * (quad_form(np.asarray(spec.P_q), q) + quad_form(np.asarray(spec.P_v), v))
    c, gc, _ = spec.constraint.all(q)
    return dot(gc, v) + spec.phi(c)


def grad_h(spec: BarrierSpec, x):
    """Full-state gradient (dh/dq, dh/dv)."""
    x = np.asarray(x, dtype=float)
    if isinstance(spec, FunctionBarrier):
        return spec.grad(x)
    n = x.shape[-1] // 2
    q, v = x[..., :n], x[..., n:]
    if isinstance(spec, RelDeg1Barrier):
        return np.concatenate(
            [-matvec(np.asarray(spec.P_q), q), -matvec(np.asarray(spec.P_v), v)], axis=-1
        )
    c, gc, Hc = spec.constraint.all(q)
    dq = matvec(Hc, v) + spec.phi.derivative(c)[..., None] * gc
    return np.concatenate([dq, gc], axis=-1)


@dataclass
class BarrierTerms:
    """Everything the filters need at one (batch of) state(s)."""

    h: np.ndarray
    Lf_h: np.ndarray
    Lg_h: np.ndarray
    c: np.ndarray      # NaN unless high-order
    cdot: np.ndarray   # NaN unless high-order
    grad_c: np.ndarray | None = None


def barrier_terms(spec: BarrierSpec, model, x, mech=None) -> BarrierTerms:
    """h, L_f h, L_g h (and c, c', grad c for high-order barriers).

    ``mech`` optionally carries precomputed (M_inv, C v, tau_g) for a
    mechanical model so the controller does not recompute them.
    """
    x = np.asarray(x, dtype=float)
    nanv = np.full(x.shape[:-1], np.nan)
    if isinstance(model, AffineDynamics):
        gh = grad_h(spec, x)
        h = eval_h(spec, x)
        Lf = dot(gh, model.f(x))
        Lg = np.einsum("...i,...ij->...j", gh, model.g(x))
        return BarrierTerms(h, Lf, Lg, nanv, nanv)
    if isinstance(spec, FunctionBarrier):
        return barrier_terms(spec, to_affine(model), x)

    q, v = model.split(x)
    if mech is None:
        mech = mechanical_terms(model, q, v)
    Minv, Cv, tau = mech
    free_acc = matvec(Minv, -Cv - tau)
    if isinstance(spec, RelDeg1Barrier):
        P_q, P_v = np.asarray(spec.P_q), np.asarray(spec.P_v)
        Pv_v = matvec(P_v, v)
        h = spec.b - 0.5 * (quad_form(P_q, q) + dot(v, Pv_v))
        Lf = -quad_form(P_q, q, v) - dot(Pv_v, free_acc)
        Lg = -matvec(Minv, Pv_v)
        return BarrierTerms(h, Lf, Lg, nanv, nanv)

    c, gc, Hc = spec.constraint.all(q)
    cdot = dot(gc, v)
    h = cdot + spec.phi(c)
    Lg = matvec(Minv, gc)
    Lf = dot(gc, free_acc) + spec.phi.derivative(c) * cdot + quad_form(Hc, v)
    return BarrierTerms(h, Lf, Lg, c, cdot, gc)


def mechanical_terms(model: MechanicalModel, q, v):
    Minv = model.M_inv(q)
    Cv = matvec(model.C(q, v), v)
    return Minv, Cv, model.tau_g(q)


def lie_derivatives(spec: BarrierSpec, model, x):
    """(L_f h, L_g h) at x."""
    t = barrier_terms(spec, model, x)
    return t.Lf_h, t.Lg_h


def margin_z(spec: BarrierSpec, model, nominal: Callable[[np.ndarray], np.ndarray], x):
    """z = L_f h + L_g h k(x) + alpha(h); z >= 0 means the nominal law is already safe."""
    t = barrier_terms(spec, model, x)
    return t.Lf_h + dot(t.Lg_h, nominal(np.asarray(x, dtype=float))) + spec.alpha(t.h)
