"""Compatible safety filters: control barrier functions that keep a nominal
stabilizing law's Lyapunov function non-increasing, with grid certification
and batched simulation for a planar two-link arm."""

from .barrier import (
    ClassKappa,
    EllipsoidConstraint,
    FunctionBarrier,
    HighOrderBarrier,
    RelDeg1Barrier,
    SmoothedConstraint,
    chi_delta,
    eval_h,
    lie_derivatives,
    margin_z,
)
from .certify import (
    CertReport,
    check_assumption3,
    condition5_lhs,
    max_certifiable_nu,
    psi,
    tune_rho,
    verify_cbf_stabilizable,
    verify_psi,
)
from .config import ScenarioConfig, load_scenario
from .controller import (
    Branch,
    CompatController,
    ComputedTorque,
    FeedbackLaw,
    PdGravity,
    Weight,
    augmented_control,
    compat_control,
    lyapunov_V,
    nominal_control,
    qp_filter,
    supply_rate_residual,
)
from .dynamics import AffineDynamics, MechanicalModel, TwoLinkArmParams, coriolis_bound, to_affine, two_link_arm
from .grid import GridSpec
from .sim import DisturbanceSpec, SimConfig, Trajectory, integrate, integrate_batch, matched_disturbance, trajectory_metrics

__version__ = "0.1.0"
