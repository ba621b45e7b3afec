"""Control-affine and mechanical system models.

All evaluation functions are vectorised over leading axes: a state array of
shape ``(..., state_dim)`` yields outputs with the same leading shape. This is
what lets the certification grids and batched simulations run in numpy
rather than in Python loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import EmptyGridError, GridSpec
from .numerics import matvec, spectral_norm


class SingularMassError(ValueError):
    """Inertia matrix is not positive definite at a queried configuration."""


@dataclass(frozen=True)
class AffineDynamics:
    """x' = f(x) + g(x) u with vectorised ``drift`` and ``input_matrix``."""

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]

    def f(self, x):
        return self.drift(np.asarray(x, dtype=float))

    def g(self, x):
        return self.input_matrix(np.asarray(x, dtype=float))

    def rhs(self, x, u):
        x = np.asarray(x, dtype=float)
        return self.f(x) + matvec(self.g(x), np.asarray(u, dtype=float))


def _christoffel_coriolis(dM, v):
    # C_ij = sum_k Gamma_ijk v_k,
    # Gamma_ijk = 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i); dM[..., i, j, k] = dM_ij/dq_k
    gamma = 0.5 * (dM + dM.swapaxes(-1, -2) - dM.swapaxes(-1, -2).swapaxes(-2, -3))
    return np.einsum("...ijk,...k->...ij", gamma, v)


@dataclass(frozen=True)
class MechanicalModel:
    """M(q) v' + C(q, v) v + tau_g(q) = u.

    ``mass_matrix_grad(q)[..., i, j, k]`` is dM_ij/dq_k. The Coriolis matrix
    is built from Christoffel symbols of M, so v^T (M'/2 - C) v = 0 holds
    identically. ``coriolis_matrix`` may supply a closed form of the same
    matrix for speed.
    """

    dof: int
    mass_matrix: Callable[[np.ndarray], np.ndarray]
    mass_matrix_grad: Callable[[np.ndarray], np.ndarray]
    gravity_torque: Callable[[np.ndarray], np.ndarray]
    name: str = "mechanical"
    params: dict = field(default_factory=dict, compare=False)
    coriolis_matrix: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    @property
    def state_dim(self) -> int:
        return 2 * self.dof

    @property
    def input_dim(self) -> int:
        return self.dof

    def split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state has dimension {x.shape[-1]}, expected {self.state_dim}")
        return x[..., : self.dof], x[..., self.dof :]

    def M(self, q):
        return self.mass_matrix(np.asarray(q, dtype=float))

    def dM(self, q):
        return self.mass_matrix_grad(np.asarray(q, dtype=float))

    def M_dot(self, q, v):
        """dM/dt along velocity v, contracted analytically from dM/dq."""
        return np.einsum("...ijk,...k->...ij", self.dM(q), np.asarray(v, dtype=float))

    def C(self, q, v):
        if self.coriolis_matrix is not None:
            return self.coriolis_matrix(np.asarray(q, dtype=float), np.asarray(v, dtype=float))
        return self.christoffel_C(q, v)

    def christoffel_C(self, q, v):
        return _christoffel_coriolis(self.dM(q), np.asarray(v, dtype=float))

    def tau_g(self, q):
        return self.gravity_torque(np.asarray(q, dtype=float))

    def M_inv(self, q):
        return inverse_mass(self.M(q))

    def acceleration(self, x, u):
        q, v = self.split(x)
        rhs = -matvec(self.C(q, v), v) - self.tau_g(q) + np.asarray(u, dtype=float)
        return matvec(self.M_inv(q), rhs)

    def rhs(self, x, u):
        q, v = self.split(x)
        return np.concatenate([v, self.acceleration(x, u)], axis=-1)


def inverse_mass(M):
    """Inverse of a stack of inertia matrices; raises if any is not SPD."""
    M = np.asarray(M, dtype=float)
    if M.shape[-2:] == (2, 2):
        a, b, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 1]
        det = a * d - b * M[..., 1, 0]
        if np.any(a <= 0) or np.any(det <= 0):
            raise SingularMassError("inertia matrix is not positive definite")
        inv = np.empty_like(M)
        inv[..., 0, 0] = d / det
        inv[..., 0, 1] = -b / det
        inv[..., 1, 0] = -M[..., 1, 0] / det
        inv[..., 1, 1] = a / det
        return inv
    if np.any(np.linalg.eigvalsh(M)[..., 0] <= 0):
        raise SingularMassError("inertia matrix is not positive definite")
    return np.linalg.inv(M)


def to_affine(model: MechanicalModel) -> AffineDynamics:
    """Embed the mechanical model as f(x) = (v, M^-1(-Cv - tau_g)), g(x) = (0; M^-1)."""
    n = model.dof

    def drift(x):
        return model.rhs(x, np.zeros(np.shape(x)[:-1] + (n,)))

    def input_matrix(x):
        q, _ = model.split(x)
        Minv = model.M_inv(q)
        return np.concatenate([np.zeros_like(Minv), Minv], axis=-2)

    return AffineDynamics(2 * n, n, drift, input_matrix)


@dataclass(frozen=True)
class TwoLinkArmParams:
    l1: float = 1.0
    l2: float = 1.0
    m1: float = 1.0
    m2: float = 1.0
    g0: float = 9.81

    def __post_init__(self):
        for name in ("l1", "l2", "m1", "m2", "g0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def two_link_arm(params: TwoLinkArmParams = TwoLinkArmParams()) -> MechanicalModel:
    """Planar two-link arm with point masses at the distal end of each link.

    q1 is measured from the horizontal, q2 relative to link 1, gravity acts
    along -y. At q = 0 with unit lengths and masses, M = [[5, 2], [2, 1]].
    """
    l1, l2, m1, m2, g0 = params.l1, params.l2, params.m1, params.m2, params.g0
    a = (m1 + m2) * l1**2 + m2 * l2**2
    b = m2 * l1 * l2
    d = m2 * l2**2

    def mass_matrix(q):
        c2 = np.cos(q[..., 1])
        M = np.empty(q.shape[:-1] + (2, 2))
        M[..., 0, 0] = a + 2.0 * b * c2
        M[..., 0, 1] = M[..., 1, 0] = d + b * c2
        M[..., 1, 1] = d
        return M

    def mass_matrix_grad(q):
        s2 = np.sin(q[..., 1])
        dM = np.zeros(q.shape[:-1] + (2, 2, 2))
        dM[..., 0, 0, 1] = -2.0 * b * s2
        dM[..., 0, 1, 1] = dM[..., 1, 0, 1] = -b * s2
        return dM

    def gravity_torque(q):
        c1 = np.cos(q[..., 0])
        c12 = np.cos(q[..., 0] + q[..., 1])
        tau = np.empty(q.shape[:-1] + (2,))
        tau[..., 0] = (m1 + m2) * g0 * l1 * c1 + m2 * g0 * l2 * c12
        tau[..., 1] = m2 * g0 * l2 * c12
        return tau

    def coriolis_matrix(q, v):
        # Christoffel form written out: hs = -b sin q2
        hs = -b * np.sin(q[..., 1])
        C = np.empty(q.shape[:-1] + (2, 2))
        C[..., 0, 0] = hs * v[..., 1]
        C[..., 0, 1] = hs * (v[..., 0] + v[..., 1])
        C[..., 1, 0] = -hs * v[..., 0]
        C[..., 1, 1] = 0.0
        return C

    return MechanicalModel(
        2, mass_matrix, mass_matrix_grad, gravity_torque, name="two_link_arm",
        params=dict(l1=l1, l2=l2, m1=m1, m2=m2, g0=g0), coriolis_matrix=coriolis_matrix,
    )


def _unit_directions(n: int, count: int = 128, seed: int = 0) -> np.ndarray:
    if n == 1:
        return np.array([[1.0]])
    if n == 2:
        th = np.linspace(0.0, np.pi, count, endpoint=False)  # C linear in v: half circle suffices
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, n))
    d = np.concatenate([np.eye(n), d], axis=0)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def coriolis_bound(model: MechanicalModel, q_grid: GridSpec | np.ndarray,
                   safety_factor: float = 1.05, n_directions: int = 128, seed: int = 0) -> float:
    """k_c with ||C(q, v)||_2 <= k_c ||v||_2 over the sampled configurations.

    Velocity directions are deterministic for n <= 2; ``seed`` only matters
    for larger models, where directions are drawn at random.
    """
    q = q_grid.points() if isinstance(q_grid, GridSpec) else np.atleast_2d(np.asarray(q_grid, float))
    if q.size == 0:
        raise EmptyGridError("empty configuration grid")
    dirs = _unit_directions(model.dof, n_directions, seed)
    dM = model.dM(q)
    worst = 0.0
    for v in dirs:
        C = _christoffel_coriolis(dM, np.broadcast_to(v, q.shape))
        worst = max(worst, float(np.max(spectral_norm(C))))
    return safety_factor * worst
