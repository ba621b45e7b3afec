import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compatcbf.barrier import RelDeg1Barrier, eval_h
from compatcbf.controller import (
    CompatController,
    ComputedTorque,
    FeedbackLaw,
    Weight,
    evaluate,
    lyapunov_V,
    supply_rate_residual,
)
from compatcbf.sim import (
    DisturbanceSpec,
    SimConfig,
    SimulationError,
    integrate,
    integrate_batch,
    matched_disturbance,
    read_csv,
    trajectory_metrics,
)

from conftest import toy_system

SHORT = SimConfig(dt=1e-3, T=0.2)
HEADER = ["t", "q1", "q2", "v1", "v2", "u1", "u2", "h", "V", "z", "c", "cdot", "branch", "supply_residual"]


def test_equilibrium_is_fixed(arm, rd1, rd2_interior):
    for cfg in (rd1, rd2_interior):
        tr = integrate(arm, cfg.controller(rho=10.0), np.zeros(4), SHORT)
        assert np.all(tr.x == 0.0)
        m = trajectory_metrics(tr)
        assert m.terminal_norm == 0.0
        assert m.min_h == eval_h(cfg.barrier, np.zeros(4))


def test_rk4_self_convergence(arm, rd2_interior):
    # flat part of the smoothed constraint: the nominal branch is active throughout
    ctrl = rd2_interior.controller(rho=10.0)
    x0 = np.array([1.0, 0.2, 0.6, -0.4])
    end = {}
    for dt in (0.04, 0.02, 0.01):
        tr = integrate(arm, ctrl, x0, SimConfig(dt=dt, T=1.0))
        assert np.all(tr.branch == 0)
        end[dt] = tr.x[-1]
    e1 = np.linalg.norm(end[0.04] - end[0.01])
    e2 = np.linalg.norm(end[0.02] - end[0.01])
    # against a dt/4 reference the exact ratio for a 4th-order method is 255/15 = 17
    assert 16 * 0.7 <= e1 / e2 <= 16 * 1.3


def test_disturbance_examples():
    spec = DisturbanceSpec((0.1, 0.1), (1.0, 1.0))
    assert np.all(matched_disturbance(spec, 0.0) == 0.0)
    np.testing.assert_allclose(matched_disturbance(spec, np.pi / 2), [0.1, 0.1], atol=1e-15)
    t = np.random.default_rng(0).uniform(0, 1e3, 10_000)
    assert max(np.max(np.abs(matched_disturbance(spec, ti))) for ti in t) <= 0.1


def test_disturbance_validation():
    with pytest.raises(ValueError):
        DisturbanceSpec((0.1,), (1.0, 2.0))


def test_simconfig_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, T=0.05)
    with pytest.raises(ValueError):
        SimConfig(integrator="euler")
    assert SimConfig(dt=1e-3, T=30.0).n_steps == 30_000


def test_initial_state_must_be_finite(arm, rd1):
    with pytest.raises(ValueError):
        integrate(arm, rd1.controller(), np.array([np.nan, 0, 0, 0]), SHORT)


def test_csv_header_and_round_trip(arm, rd1, tmp_path):
    tr = integrate(arm, rd1.controller(), np.array([0.5, -0.3, 0.1, 0.0]), SHORT)
    assert tr.header() == HEADER
    cols = read_csv(tr.to_csv(tmp_path / "run.csv"))
    assert list(cols) == HEADER
    np.testing.assert_array_equal(cols["t"], tr.t)
    np.testing.assert_array_equal(cols["q1"], tr.x[:, 0])
    np.testing.assert_array_equal(cols["u2"], tr.u[:, 1])
    np.testing.assert_array_equal(cols["z"], tr.z)
    np.testing.assert_array_equal(cols["branch"], tr.branch)
    assert np.all(np.diff(cols["t"]) > 0)


def test_determinism(arm, rd2):
    x0 = np.array([0.5, 0.3, 0.0, 0.0])
    a = integrate(arm, rd2.controller(), x0, SHORT)
    b = integrate(arm, rd2.controller(), x0, SHORT)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.u, b.u) and np.array_equal(a.z, b.z)


def test_batch_matches_single(arm, rd2):
    x0s = np.array([[0.5, 0.3, 0.0, 0.0], [1.4, -0.3, 0.0, 0.0]])
    batch = integrate_batch(arm, rd2.controller(), x0s, SHORT)
    for x0, tr in zip(x0s, batch):
        np.testing.assert_allclose(integrate(arm, rd2.controller(), x0, SHORT).x, tr.x, atol=1e-13)


def test_logged_quantities_recompute(arm, rd2):
    ctrl = rd2.controller()
    tr = integrate(arm, ctrl, np.array([1.4, -0.3, 0.0, 0.0]), SimConfig(dt=1e-3, T=2.0))
    idx = np.linspace(0, len(tr) - 1, 25).astype(int)
    for k in idx:
        x = tr.x[k]
        out = evaluate(ctrl, arm, x)
        assert np.max(np.abs(out.u - tr.u[k])) <= 1e-12
        assert abs(out.z - tr.z[k]) <= 1e-12
        assert abs(out.terms.h - tr.h[k]) <= 1e-12
        assert abs(out.terms.c - tr.c[k]) <= 1e-12
        assert abs(lyapunov_V(ctrl.nominal, arm, x) - tr.V[k]) <= 1e-12
        assert abs(supply_rate_residual(ctrl, arm, x, out.u) - tr.supply_residual[k]) <= 1e-12
        assert int(out.branch) == tr.branch[k]


def test_metrics_fields(arm, rd1):
    tr = integrate(arm, rd1.controller(), np.array([1.0, 0.5, 0.1, 0.0]), SimConfig(dt=1e-3, T=1.0))
    m = trajectory_metrics(tr)
    assert m.min_h == pytest.approx(np.min(tr.h))
    assert m.max_V_increase == pytest.approx(np.max(np.diff(tr.V)))
    assert sum(m.branch_counts.values()) == len(tr)
    assert set(m.to_dict()) == {"min_h", "min_c", "max_V_increase", "terminal_norm",
                                "max_supply_residual", "branch_counts"}


def test_metrics_reject_empty(arm, rd1):
    tr = integrate(arm, rd1.controller(), np.zeros(4), SHORT)
    tr.t = tr.t[:0]
    with pytest.raises(ValueError):
        trajectory_metrics(tr)


def test_degenerate_filter_aborts_with_partial_log(arm):
    # position term in the barrier: L_g h = 0 at rest while z = alpha(h) < 0 far out
    ctrl = CompatController(ComputedTorque(np.eye(2), 0.5 * np.eye(2)),
                            RelDeg1Barrier(0.01, np.eye(2), np.eye(2)), Weight.INVERSE_MASS_SQUARED)
    with pytest.raises(SimulationError) as err:
        integrate(arm, ctrl, np.array([1.0, 1.0, 0.0, 0.0]), SHORT)
    assert err.value.states is not None
    assert err.value.trajectories[0].aborted == "degenerate filter"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_aborts():
    model, ctrl = toy_system()
    blow = FeedbackLaw(control=lambda x: 1e300 * x, lyapunov=ctrl.nominal.lyapunov,
                       lyapunov_grad=ctrl.nominal.lyapunov_grad)
    ctrl = CompatController(blow, ctrl.barrier, Weight.IDENTITY)
    with pytest.raises(SimulationError) as err:
        integrate(model, ctrl, np.array([1.0]), SimConfig(dt=0.1, T=5.0))
    part = err.value.trajectories[0]
    assert part.aborted == "non-finite state" and 0 < len(part) < 51


@settings(max_examples=15)
@given(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
def test_reldeg1_short_runs_stay_safe(q1, q2):
    from compatcbf.config import load_scenario
    from compatcbf.dynamics import two_link_arm

    cfg = load_scenario("reldeg1_reference")
    tr = integrate(two_link_arm(), cfg.controller(), np.array([q1, q2, 0.1, -0.05]), SimConfig(dt=1e-3, T=0.3))
    assert tr.h.min() >= -1e-6
    assert np.max(np.diff(tr.V)) <= 1e-9
