import json

import numpy as np
import pytest

from compatcbf.barrier import EllipsoidConstraint, HighOrderBarrier, RelDeg1Barrier
from compatcbf.certify import (
    CertReport,
    NonePassingError,
    PsiNotPositiveError,
    check_assumption3,
    condition5_lhs,
    max_certifiable_nu,
    psi,
    rho_margin,
    rho_profile,
    tune_rho,
    verify_cbf_stabilizable,
    verify_psi,
)
from compatcbf.controller import CompatController, PdGravity, Weight, evaluate
from compatcbf.dynamics import coriolis_bound
from compatcbf.grid import EmptyGridError, GridSpec

from conftest import random_states, toy_system
from oracles import TOY_NU_STAR, rho_oracle

QGRID = GridSpec.uniform(-np.pi, np.pi, 101, 2)
SMALL_STATE_GRID = GridSpec.product(GridSpec.uniform(-np.pi, np.pi, 21, 2), GridSpec.uniform(-2, 2, 11, 2))


@pytest.fixture(scope="module")
def k_c(arm):
    return coriolis_bound(arm, QGRID)


# -- compatibility inequality ----------------------------------------------------------


def test_condition5_reldeg1(arm, rd1, rng):
    x = random_states(rng, 200)
    np.testing.assert_allclose(condition5_lhs(rd1.controller(), arm, x), -np.sum(x[:, 2:] ** 2, 1), atol=1e-10)


def test_condition5_high_order_is_cdot(arm, rd2, rng):
    # grad_v V = M v and G^-1 = M reduce the quantity to grad c . v
    x = random_states(rng, 200)
    out = evaluate(rd2.controller(), arm, x)
    np.testing.assert_allclose(condition5_lhs(rd2.controller(), arm, x), out.terms.cdot, atol=1e-10)


def test_condition5_zero_at_rest(arm, rd1, rd2, rng):
    x = random_states(rng, 50)
    x[:, 2:] = 0
    for cfg in (rd1, rd2):
        assert np.all(np.abs(condition5_lhs(cfg.controller(), arm, x)) <= 1e-14)


# -- CBF-stabilizable level sets ---------------------------------------------------


@pytest.mark.parametrize("nu", [0.1, 1.0, 10.0])
def test_reldeg1_any_level_set(arm, rd1, nu):
    rep = verify_cbf_stabilizable(rd1.controller(), arm, nu, SMALL_STATE_GRID)
    assert rep.passed and rep.counterexamples == [] and rep.n_checked > 0


def test_small_level_set_inside_constraint(arm, rd2_interior):
    # Gamma_nu inside the flat part of Q: grad c = 0 there, so z = alpha(phi(1)) > 0
    rep = verify_cbf_stabilizable(rd2_interior.controller(rho=10.0), arm, 0.05, SMALL_STATE_GRID)
    assert rep.passed


def test_toy_counterexample():
    model, ctrl = toy_system()
    grid = np.linspace(-3, 3, 61)[:, None]
    rep = verify_cbf_stabilizable(ctrl, model, 4.0, grid)
    assert not rep.passed
    xs = np.array([c.state[0] for c in rep.counterexamples])
    assert np.all(xs > 1.0) and rep.n_violations == len(xs)
    assert all(c.condition == "condition5_fails_and_z_negative" and c.value < 0 for c in rep.counterexamples)


def test_empty_grid(arm, rd1):
    with pytest.raises(EmptyGridError):
        verify_cbf_stabilizable(rd1.controller(), arm, 1.0, np.zeros((0, 4)))
    with pytest.raises(EmptyGridError):
        check_assumption3(rd1.barrier, arm, np.zeros((0, 4)))
    with pytest.raises(EmptyGridError):
        verify_psi(EllipsoidHO, arm, PD, 1.0, np.zeros((0, 2)))


EllipsoidHO = HighOrderBarrier(EllipsoidConstraint(0.8, (0.9, 0.0), ((1.0, 0.0), (0.0, 2.0))))
PD = PdGravity(np.eye(2), 0.5 * np.eye(2))


def test_report_pass_iff_no_counterexamples(arm, rd1):
    model, ctrl = toy_system()
    for rep in (verify_cbf_stabilizable(ctrl, model, 4.0, np.linspace(-3, 3, 61)[:, None]),
                verify_cbf_stabilizable(rd1.controller(), arm, 1.0, SMALL_STATE_GRID)):
        assert rep.passed == (len(rep.counterexamples) == 0)
        d = json.loads(rep.to_json())
        assert d["pass"] == rep.passed and len(d["counterexamples"]) == len(rep.counterexamples)


# -- Lipschitz / L_g h diagnostics -----------------------------------------------------


def test_assumption3_reldeg1(arm, rd1):
    assert check_assumption3(rd1.barrier, arm, SMALL_STATE_GRID).passed


def test_assumption3_smoothed(arm, rd2):
    rep = check_assumption3(rd2.barrier, arm, SMALL_STATE_GRID)
    assert rep.passed and rep.n_checked > SMALL_STATE_GRID.size


def test_assumption3_unsmoothed_fails_at_reference(arm):
    rep = check_assumption3(EllipsoidHO, arm, SMALL_STATE_GRID)
    assert not rep.passed
    qs = {c.state[:2] for c in rep.counterexamples}
    assert (0.9, 0.0) in qs
    v_bad = [c.state[2:] for c in rep.counterexamples if c.condition == "Lg_h_zero_with_nonzero_grad_h"]
    assert v_bad and all(np.linalg.norm(v) > 0 for v in v_bad)


def test_assumption3_reldeg1_with_position_term_fails(arm):
    barrier = RelDeg1Barrier(0.01, np.eye(2), np.eye(2))
    assert not check_assumption3(barrier, arm, SMALL_STATE_GRID).passed


# -- psi and rho ---------------------------------------------------------------------


def test_psi_at_reference(arm, rd2):
    assert psi(rd2.barrier, arm, rd2.nominal, np.array([0.9, 0.0])) == pytest.approx(1.0, abs=1e-15)
    assert psi(rd2.barrier, arm, rd2.nominal, np.array([1.0, 0.1])) == pytest.approx(1.0, abs=1e-15)


def test_psi_single_point_grid(arm, rd2):
    assert verify_psi(rd2.barrier, arm, rd2.nominal, 1.0, np.array([[0.9, 0.0]]), n_boundary=0).passed


def test_psi_requires_high_order(arm, rd1):
    with pytest.raises(TypeError):
        psi(rd1.barrier, arm, PD, np.zeros(2))


def test_psi_fails_with_large_gains(arm, rd2_interior):
    strong = PdGravity(100 * np.eye(2), 0.5 * np.eye(2))
    rep = verify_psi(rd2_interior.barrier, arm, strong, 200.0, QGRID)
    assert not rep.passed and rep.n_violations > 0


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
def test_psi_interior_variant_passes(arm, rd2_interior, nu):
    assert verify_psi(rd2_interior.barrier, arm, rd2_interior.nominal, nu, QGRID).passed


def test_psi_reference_fails_next_to_origin(arm, rd2):
    # origin just outside Q: at the nearest boundary point psi = -chi' grad cbar^T M^-1 q < 0
    rep = verify_psi(rd2.barrier, arm, rd2.nominal, 0.5, QGRID)
    assert not rep.passed
    assert all(np.hypot(*c.state) < 0.2 for c in rep.counterexamples)


def test_counterexamples_persist_under_refinement(arm, rd2):
    coarse = verify_psi(rd2.barrier, arm, rd2.nominal, 2.0, QGRID)
    fine = verify_psi(rd2.barrier, arm, rd2.nominal, 2.0, QGRID.refine(2))
    assert not coarse.passed and not fine.passed
    fine_states = {tuple(np.round(c.state, 12)) for c in fine.counterexamples}
    assert {tuple(np.round(c.state, 12)) for c in coarse.counterexamples} <= fine_states


def test_tune_rho_raises_when_psi_not_positive(arm, rd2, k_c):
    with pytest.raises(PsiNotPositiveError):
        tune_rho(rd2.barrier, arm, rd2.nominal, 2.0, QGRID, k_c)


def test_rho_quadratic_identity(arm, rd2_interior, k_c):
    prof = rho_profile(rd2_interior.barrier, arm, rd2_interior.nominal, 2.0, QGRID, k_c)
    r = prof.rho
    resid = r**2 * prof.psi - r * prof.eta1 - prof.eta2
    assert np.max(np.abs(resid)) <= 1e-10 * max(1.0, np.max(r**2 * prof.psi))
    flat = (prof.eta1 == 0) & (prof.eta2 == 0)
    assert flat.any() and np.all(r[flat] == 0.0)


def test_rho_lower_bound_nonnegative(arm, rd2_interior, k_c):
    prof = rho_profile(rd2_interior.barrier, arm, rd2_interior.nominal, 2.0, QGRID, k_c)
    rho = float(prof.rho.max())
    m = rho_margin(prof, rho)
    assert m["tuned_form_min"] >= -1e-12
    bound = prof.psi - prof.eta1 / rho - prof.eta2 / rho**2
    assert bound[prof.argmax] == pytest.approx(0.0, abs=1e-10)


def test_rho_monotone_in_nu(arm, rd2_interior, k_c):
    rhos = [tune_rho(rd2_interior.barrier, arm, rd2_interior.nominal, nu, QGRID, k_c) for nu in (0.3, 0.5, 1, 2)]
    assert all(b >= a for a, b in zip(rhos, rhos[1:]))
    assert np.all(np.isfinite(rhos)) and rhos[0] > 0


def test_rho_fine_grid_agreement(arm, rd2_interior, k_c):
    rho = tune_rho(rd2_interior.barrier, arm, rd2_interior.nominal, 2.0, QGRID, k_c)
    b, law = rd2_interior.barrier, rd2_interior.nominal
    fine = rho_oracle(b.constraint, np.asarray(law.Kp), np.asarray(law.Kd), b.alpha, b.phi, 2.0, k_c,
                      -np.pi, np.pi, 401, 4 * 4096)
    assert abs(rho - fine) <= 0.02 * fine


# -- maximal nu -----------------------------------------------------------------------


def test_max_nu_reldeg1_whole_range(arm, rd1):
    res = max_certifiable_nu(rd1.controller(), arm, SMALL_STATE_GRID, (0.1, 10.0))
    assert res.nu == 10.0 and not res.non_monotone and res.report.passed


def test_max_nu_none_passing():
    model, ctrl = toy_system()
    with pytest.raises(NonePassingError):
        max_certifiable_nu(ctrl, model, np.linspace(-3, 3, 61)[:, None], (1.0, 3.0))


def test_max_nu_toy_threshold():
    model, ctrl = toy_system()
    xs = np.linspace(-3, 3, 6001)
    x_g = xs[xs > 1][0]
    nu_grid = 0.5 * x_g**2  # first level set that contains a violating grid point
    lo, hi, iters, coarse = 0.1, 2.0, 20, 9
    res = max_certifiable_nu(ctrl, model, xs[:, None], (lo, hi), iterations=iters, coarse=coarse)
    tol = (hi - lo) / (coarse - 1) / 2**iters
    assert nu_grid - tol <= res.nu < nu_grid
    assert abs(res.nu - TOY_NU_STAR) <= (nu_grid - TOY_NU_STAR) + tol
    assert not res.non_monotone


def test_max_nu_flags_non_monotone():
    seq = {0.5: True, 1.0: False, 1.5: True}

    def check(nu):
        ok = seq.get(round(nu, 6), nu < 0.75)
        return CertReport("stub", ok, nu, None)

    model, ctrl = toy_system()
    res = max_certifiable_nu(ctrl, model, None, (0.5, 1.5), iterations=5, coarse=3, check=check)
    assert res.non_monotone and res.nu == 1.5
    assert res.report.notes["non_monotone"] is True


def test_max_nu_mechanical_path(arm, rd2_interior):
    ctrl = rd2_interior.controller(rho=10.0)
    res = max_certifiable_nu(ctrl, arm, QGRID, (0.5, 2.0))
    assert res.nu == 2.0


def test_default_weight_is_identity(rd1):
    assert CompatController(rd1.nominal, rd1.barrier).weight is Weight.IDENTITY
