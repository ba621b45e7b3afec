"""Nominal laws, Lyapunov functions and the closed-form compatible filters.

The filter never runs an iterative QP. With z = L_f h + L_g h k + alpha(h),
the minimiser of 1/2 ||u - k||_G^2 subject to L_f h + L_g h u >= -alpha(h) is
k when z >= 0 and

    u_bar = k - z / (L_g h G^-1 L_g h^T) * G^-1 L_g h^T

otherwise. For high-order barriers on mechanical models with G = M^-1 an
optional damping term xi = rho^2 z c' / ||grad c||^2_{M^-1} * v is added
whenever z < 0 and c' > 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Union

import numpy as np

from .barrier import BarrierSpec, BarrierTerms, HighOrderBarrier, barrier_terms, mechanical_terms
from .dynamics import AffineDynamics, MechanicalModel, to_affine
from .numerics import dot, matvec, quad_form

DEGENERATE_TOL = 1e-12


class DegenerateFilterError(RuntimeError):
    """z < 0 where L_g h vanishes: the filter has no valid correction direction."""

    def __init__(self, message, states=None):
        super().__init__(message)
        self.states = states


def _spd(K, name):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or not np.allclose(K, K.T):
        raise ValueError(f"{name} must be a symmetric square matrix")
    if np.linalg.eigvalsh(K)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return tuple(map(tuple, K.tolist()))


@dataclass(frozen=True)
class PdGravity:
    """k(x) = tau_g(q) - Kp q - Kd v, paired with V = 1/2 v^T M v + 1/2 q^T Kp q."""

    Kp: tuple
    Kd: tuple

    def __post_init__(self):
        object.__setattr__(self, "Kp", _spd(self.Kp, "Kp"))
        object.__setattr__(self, "Kd", _spd(self.Kd, "Kd"))


@dataclass(frozen=True)
class ComputedTorque:
    """k(x) = C v + tau_g + M(-Kp q - Kd v), paired with V = 1/2 (q^T Kp q + v^T v)."""

    Kp: tuple
    Kd: tuple

    def __post_init__(self):
        object.__setattr__(self, "Kp", _spd(self.Kp, "Kp"))
        object.__setattr__(self, "Kd", _spd(self.Kd, "Kd"))


@dataclass(frozen=True)
class FeedbackLaw:
    """Arbitrary vectorised nominal law with its Lyapunov function, for AffineDynamics."""

    control: Callable[[np.ndarray], np.ndarray]
    lyapunov: Callable[[np.ndarray], np.ndarray]
    lyapunov_grad: Callable[[np.ndarray], np.ndarray]


NominalLaw = Union[PdGravity, ComputedTorque, FeedbackLaw]


class Weight(str, Enum):
    IDENTITY = "identity"
    GRAM_INPUT = "gram_input"                      # G = g^T g
    INVERSE_MASS = "inverse_mass"                  # G = M^-1
    INVERSE_MASS_SQUARED = "inverse_mass_squared"  # G = M^-T M^-1


class Branch(IntEnum):
    NOMINAL = 0
    FILTERED = 1
    FILTERED_AUGMENTED = 2


@dataclass(frozen=True)
class CompatController:
    nominal: NominalLaw
    barrier: BarrierSpec
    weight: Weight = Weight.IDENTITY
    rho: float = 1.0
    augmented: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weight", Weight(self.weight))
        if self.augmented:
            if not isinstance(self.barrier, HighOrderBarrier):
                raise ValueError("the augmented law needs a high-order barrier")
            if self.weight is not Weight.INVERSE_MASS:
                raise ValueError("the augmented law is defined for G = M^-1")
            if not (self.rho > 0 and np.isfinite(self.rho)):
                raise ValueError("rho must be positive and finite")

    def with_rho(self, rho: float) -> "CompatController":
        return CompatController(self.nominal, self.barrier, self.weight, float(rho), self.augmented)


def _mats(law):
    return np.asarray(law.Kp), np.asarray(law.Kd)


def nominal_control(law: NominalLaw, model, x, mech=None):
    x = np.asarray(x, dtype=float)
    if isinstance(law, FeedbackLaw):
        return law.control(x)
    q, v = model.split(x)
    Kp, Kd = _mats(law)
    if isinstance(law, PdGravity):
        tau = model.tau_g(q) if mech is None else mech[2]
        return tau - matvec(Kp, q) - matvec(Kd, v)
    if mech is None:
        M = model.M(q)
        Cv = matvec(model.C(q, v), v)
        tau = model.tau_g(q)
    else:
        Minv, Cv, tau = mech
        M = model.M(q)
    return Cv + tau + matvec(M, -matvec(Kp, q) - matvec(Kd, v))


def potential(law: NominalLaw, q):
    """P(q) = 1/2 q^T Kp q."""
    return 0.5 * quad_form(np.asarray(law.Kp), np.asarray(q, dtype=float))


def in_potential_level_set(law: NominalLaw, q, nu: float):
    return potential(law, q) <= nu


def lyapunov_V(law: NominalLaw, model, x):
    x = np.asarray(x, dtype=float)
    if isinstance(law, FeedbackLaw):
        return law.lyapunov(x)
    q, v = model.split(x)
    if isinstance(law, PdGravity):
        return 0.5 * quad_form(model.M(q), v) + potential(law, q)
    return potential(law, q) + 0.5 * dot(v, v)


def lyapunov_grad(law: NominalLaw, model, x):
    """Full-state gradient (dV/dq, dV/dv), analytic."""
    x = np.asarray(x, dtype=float)
    if isinstance(law, FeedbackLaw):
        return law.lyapunov_grad(x)
    q, v = model.split(x)
    Kp = np.asarray(law.Kp)
    if isinstance(law, PdGravity):
        dq = 0.5 * np.einsum("...i,...ijk,...j->...k", v, model.dM(q), v) + matvec(Kp, q)
        return np.concatenate([dq, matvec(model.M(q), v)], axis=-1)
    return np.concatenate([matvec(Kp, q), v], axis=-1)


def lyapunov_rate(law: NominalLaw, model, x, u):
    """V' = grad V . (f(x) + g(x) u)."""
    x = np.asarray(x, dtype=float)
    return dot(lyapunov_grad(law, model, x), model.rhs(x, u))


def weight_inverse(weight: Weight, model, x, Minv=None):
    """G(x)^-1, shape (..., m, m)."""
    weight = Weight(weight)
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    if weight is Weight.IDENTITY:
        m = model.input_dim
        return np.broadcast_to(np.eye(m), batch + (m, m))
    if isinstance(model, AffineDynamics):
        if weight is not Weight.GRAM_INPUT:
            raise ValueError(f"{weight.value} weighting needs a mechanical model")
        g = model.g(x)
        return np.linalg.inv(np.einsum("...ki,...kj->...ij", g, g))
    q, _ = model.split(x)
    M = model.M(q)
    if weight is Weight.INVERSE_MASS:
        return M
    # g^T g = M^-T M^-1 for g = (0; M^-1), so both choices invert to M M^T
    return np.einsum("...ik,...jk->...ij", M, M)


def weight_matrix(weight: Weight, model, x):
    return np.linalg.inv(weight_inverse(weight, model, x))


@dataclass
class ControlOutput:
    """Control plus the intermediate quantities used for telemetry."""

    u: np.ndarray
    branch: np.ndarray
    z: np.ndarray
    k: np.ndarray
    terms: BarrierTerms = field(repr=False)
    mech: tuple | None = field(default=None, repr=False)  # (M^-1, C v, tau_g) when mechanical


def _evaluate(ctrl: CompatController, model, x, augmented: bool) -> ControlOutput:
    x = np.asarray(x, dtype=float)
    if isinstance(model, MechanicalModel):
        q, v = model.split(x)
        mech = mechanical_terms(model, q, v)
    else:
        mech = None
    t = barrier_terms(ctrl.barrier, model, x, mech=mech)
    k = nominal_control(ctrl.nominal, model, x, mech=mech)
    z = t.Lf_h + dot(t.Lg_h, k) + ctrl.barrier.alpha(t.h)
    active = z < 0.0
    branch = np.where(active, Branch.FILTERED, Branch.NOMINAL).astype(np.int8)
    if not np.any(active):
        return ControlOutput(k, branch, z, k, t, mech)

    lg_norm = np.linalg.norm(t.Lg_h, axis=-1)
    bad = active & (lg_norm < DEGENERATE_TOL)
    if np.any(bad):
        raise DegenerateFilterError(
            "z < 0 with vanishing L_g h (Lipschitz assumption violated)", states=x[bad] if x.ndim > 1 else x
        )
    if mech is not None and ctrl.weight is Weight.INVERSE_MASS:
        direction = matvec(model.M(x[..., : model.dof]), t.Lg_h)
    else:
        direction = matvec(weight_inverse(ctrl.weight, model, x), t.Lg_h)
    denom = dot(t.Lg_h, direction)
    scale = np.where(active, z / np.where(active, denom, 1.0), 0.0)
    u = k - scale[..., None] * direction

    if augmented:
        extra = active & (t.cdot > 0.0)
        if np.any(extra):
            _, v = model.split(x)
            gain = np.where(extra, ctrl.rho**2 * z * t.cdot / np.where(active, denom, 1.0), 0.0)
            u = u + gain[..., None] * v
            branch = np.where(extra, Branch.FILTERED_AUGMENTED, branch).astype(np.int8)
    return ControlOutput(u, branch, z, k, t, mech)


def evaluate(ctrl: CompatController, model, x) -> ControlOutput:
    """Batched controller evaluation; dispatches on ``ctrl.augmented``."""
    return _evaluate(ctrl, model, x, ctrl.augmented)


def _public(out: ControlOutput, x):
    if np.ndim(x) == 1:
        return out.u, Branch(int(out.branch)), float(out.z)
    return out.u, out.branch, out.z


def qp_filter(ctrl: CompatController, model, x):
    """(u*, branch, z) from the closed-form weighted safety filter."""
    return _public(_evaluate(ctrl, model, x, augmented=False), x)


def augmented_control(ctrl: CompatController, model, x):
    """(u*, branch, z) from the augmented law for mechanical high-order barriers."""
    if not ctrl.augmented:
        raise ValueError("controller is not configured for the augmented law")
    return _public(_evaluate(ctrl, model, x, augmented=True), x)


def compat_control(ctrl: CompatController, model, x):
    return _public(evaluate(ctrl, model, x), x)


def supply_rate_residual(ctrl: CompatController, model, x, u):
    """V'(x, u) - v^T mu with mu = -Kd v. Non-positive for a passive closed loop."""
    law = ctrl.nominal
    if isinstance(law, FeedbackLaw):
        raise ValueError("supply rate is defined for mechanical nominal laws only")
    x = np.asarray(x, dtype=float)
    _, v = model.split(x)
    return lyapunov_rate(law, model, x, u) + quad_form(np.asarray(law.Kd), v)


def affine_view(model):
    """AffineDynamics for either model type."""
    return model if isinstance(model, AffineDynamics) else to_affine(model)
