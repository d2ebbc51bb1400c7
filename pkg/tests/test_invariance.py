import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from sddde.histories import HistoryPair, random_pair
from sddde.integrator import integrate
from sddde.invariance import (BoundConstants, CBRSet, InvarianceBudget, budget_d, budget_e, budgets,
                              bound_lemma_checks, delta_f, ensemble_pairs, f_l, f_tau, f_tau_closed, horizons,
                              q_e, ratio_l, ratio_tau, trajectory_bound_checks, verify_invariance,
                              w_lip_condition, w_lip_condition_strict)

UNIT = BoundConstants(kj=1.0, mu=1.0, qbar=1.0, tau_lower=0.5)

consts = st.builds(BoundConstants, kj=st.floats(0.1, 50.0), mu=st.floats(0.1, 5.0), qbar=st.floats(0.01, 2.0),
                   tau_lower=st.floats(0.05, 2.0))


def f_l_quad(t, c):
    val, _ = quad(lambda s: math.exp(-c.mu * (t - s) + c.qbar * s), 0.0, t, epsabs=1e-14, epsrel=1e-13)
    return c.kj * val


def f_tau_quad(t, c):
    pts = [c.tau_lower] if 0 < c.tau_lower < t else None
    val, _ = quad(lambda s: math.exp(-c.mu * (t - s)) * q_e(s - c.tau_lower, c), 0.0, t, points=pts,
                  epsabs=1e-14, epsrel=1e-13)
    return c.kj * val


class TestBoundFunctions:
    def test_q_e(self):
        assert q_e(0.0, UNIT) == 1.0
        assert q_e(-3.0, UNIT) == 1.0
        assert q_e(1.0, UNIT) == pytest.approx(math.e, rel=1e-15)

    def test_zero_at_origin(self):
        assert f_l(0.0, UNIT) == 0.0 and f_tau(0.0, UNIT) == 0.0

    def test_f_l_unit(self):
        assert f_l(1.0, UNIT) == pytest.approx(1.1752012, abs=1e-7)
        assert f_l(1.0, UNIT) == pytest.approx(math.sinh(1.0), rel=1e-14)

    def test_f_tau_early(self):
        t = UNIT.tau_lower / 2
        assert f_tau(t, UNIT) == pytest.approx(1 - math.exp(-t), rel=1e-14)

    def test_ratio_l_limit(self):
        c = BoundConstants(7.0, 2.0, 0.5, 0.3)
        assert ratio_l(1e-8, c) == pytest.approx(c.kj / c.mu, abs=1e-5)
        assert ratio_l(2.0, c) > ratio_l(1.0, c)

    def test_ratio_tau_flat(self):
        c = BoundConstants(7.0, 2.0, 0.5, 0.3)
        t = np.linspace(1e-6, c.tau_lower, 50)
        assert np.all(ratio_tau(t, c) == c.kj / c.mu)

    def test_mu_plus_qbar_zero(self):
        c = BoundConstants(1.0, 1.0, -1.0, 0.5)
        assert f_l(2.0, c) == pytest.approx(2.0 * math.exp(-2.0), rel=1e-14)

    @given(consts, st.floats(1e-3, 20.0))
    def test_against_quadrature(self, c, t):
        if c.qbar * t > 30:
            t = 30 / c.qbar
        assert f_l(t, c) == pytest.approx(f_l_quad(t, c), rel=1e-9)
        assert f_tau(t, c) == pytest.approx(f_tau_quad(t, c), rel=1e-9)

    @given(consts, st.floats(1e-2, 10.0))
    def test_closed_form_branches_agree(self, c, t):
        assert f_tau(t, c) == pytest.approx(f_tau_closed(t, c), rel=1e-8)

    @given(consts, st.floats(0.0, 10.0), st.floats(0.1, 10.0))
    def test_homogeneous_in_kj(self, c, t, s):
        c2 = BoundConstants(s * c.kj, c.mu, c.qbar, c.tau_lower)
        assert f_l(t, c2) == pytest.approx(s * f_l(t, c), rel=1e-12)
        assert f_tau(t, c2) == pytest.approx(s * f_tau(t, c), rel=1e-12)

    @given(consts)
    def test_lemma_grid(self, c):
        rep = bound_lemma_checks(c)
        assert rep.all_pass, [k.to_dict() for k in rep.checks if not k.passed]

    def test_lemma_numbers(self):
        lhs = UNIT.kj / UNIT.mu * q_e(1.0, UNIT)
        assert lhs == pytest.approx(2.71828, abs=1e-5)
        assert lhs > ratio_l(1.0, UNIT) == pytest.approx(1.8592, abs=1e-4)

    def test_envelope_peak(self):
        rep = bound_lemma_checks(UNIT, A=1.0, B=2.0)
        assert rep["envelope_peak"].passed

    def test_nonpositive_qbar_degenerate(self):
        rep = bound_lemma_checks(BoundConstants(2.0, 1.0, -0.5, 0.4))
        assert rep.notes and rep.all_pass

    @pytest.mark.parametrize("kw", [dict(mu=0.0), dict(kj=-1.0), dict(tau_lower=0.0)])
    def test_rejects(self, kw):
        doc = dict(kj=1.0, mu=1.0, qbar=1.0, tau_lower=0.5)
        doc.update(kw)
        with pytest.raises(ValueError):
            BoundConstants(**doc)


class TestBudgets:
    def test_zero_data(self):
        bd, be = budgets(0.0, 1.0, UNIT)
        assert (bd.B, bd.R, be.B, be.R) == (0.0, 0.0, 0.0, 0.0)

    def test_unit_example(self):
        bd, be = budgets(1.0, 1.0, UNIT)
        assert bd.B == pytest.approx(1.8592, abs=1e-4)
        assert be.B < bd.B and be.R <= bd.R

    @given(consts, st.floats(0.01, 5.0), st.floats(0.01, 10.0))
    def test_threshold_budget_smaller(self, c, A, T):
        bd, be = budget_d(A, T, c), budget_e(A, T, c)
        assert be.B < bd.B
        assert be.R <= bd.R

    def test_rejects(self):
        with pytest.raises(ValueError):
            budget_d(-1.0, 1.0, UNIT)
        with pytest.raises(ValueError):
            budget_e(1.0, 0.0, UNIT)


class TestHorizons:
    def test_example(self):
        hz = horizons(1.0, 2.0, 10.0, UNIT)
        assert ratio_l(hz.t_d1, UNIT) == pytest.approx(2.0, abs=1e-10)
        assert ratio_tau(hz.t_e1, UNIT) == pytest.approx(2.0, abs=1e-10)
        assert hz.t_d2 == pytest.approx(math.log(10.0), rel=1e-14)
        assert hz.t_d < hz.t_e

    def test_small_B_rejected(self):
        with pytest.raises(ValueError):
            horizons(1.0, 1.0, 10.0, UNIT)

    def test_small_R_rejected(self):
        with pytest.raises(ValueError):
            horizons(1.0, 2.0, 1.0, UNIT)

    def test_unbounded_R(self):
        hz = horizons(1.0, 2.0, math.inf, UNIT)
        assert hz.t_d == hz.t_d1 and hz.t_e == hz.t_e1
        assert math.isinf(hz.t_d2) and math.isinf(hz.t_e2)

    @given(consts, st.floats(0.01, 2.0), st.floats(1.05, 20.0), st.floats(1.0, 10.0))
    def test_ordering(self, c, A, grow, rgrow):
        B = grow * A * c.kj / c.mu
        hz = horizons(A, B, rgrow * c.mu * B, c)
        assert hz.t_d < hz.t_e


class TestDelta:
    def test_ln2(self):
        assert delta_f(1.0, 2.0, UNIT) == pytest.approx(math.log(2.0), rel=1e-15)

    def test_boundary_rejected(self):
        with pytest.raises(ValueError):
            delta_f(1.0, 1.0, UNIT)

    def test_qbar_two(self):
        c = BoundConstants(1.0, 1.0, 2.0, 0.5)
        assert delta_f(1.0, math.exp(2.0), c) == pytest.approx(1.0, rel=1e-14)

    def test_R_too_small(self):
        with pytest.raises(ValueError):
            delta_f(1.0, 2.0, UNIT, R=1.0)


class TestWCap:
    def test_zero_qbar(self):
        assert w_lip_condition(5.0, 1e-9, 100.0, BoundConstants(1.0, 1.0, 0.0, 0.5))

    def test_holds(self):
        assert w_lip_condition(1.0, 3.0, 1.0, UNIT)

    def test_fails(self):
        assert not w_lip_condition(1.0, 3.0, 1.0, BoundConstants(1.0, 1.0, 2.0, 0.5))

    def test_strict_is_stronger(self, decaying):
        # q is negative everywhere, so the literal form passes trivially while |q| is large
        assert w_lip_condition(1.0, 0.1, 1.0, decaying)
        assert not w_lip_condition_strict(1.0, 0.1, 1.0, 1.0, decaying)


def test_cbr_membership():
    S = CBRSet(1.0, 2.0)
    assert S.contains(HistoryPair.constant(1.0, 0.0, 0.0).psi)
    assert not S.contains(HistoryPair.constant(1.0, 0.0, 1.5).psi)


def test_ensemble_pairs_respect_bounds(params):
    from sddde.histories import lip, sup_norm

    for p in ensemble_pairs(params.h, 0.5, 1.0, 2.0, 12, seed=3):
        assert sup_norm(p.phi) <= 0.5 and CBRSet(1.0, 2.0).contains(p.psi)
        assert lip(p.psi) <= 2.0


class TestVerify:
    def test_zero_pair_stays_inside(self, params):
        tr = integrate(params, HistoryPair.constant(params.h, 0.0, 0.0), params.h)
        assert tr.min_state() == 0.0 and np.max(tr.V) == 0.0

    def test_threshold_budget_ensemble(self, params):
        bud = InvarianceBudget.from_case("threshold", 0.05, 0.5, params)
        rep = verify_invariance(params, bud, ensemble_size=16, seed=1)
        assert rep.precondition["pass"]
        assert rep.all_pass, rep.to_dict()
        assert {c.name for c in rep.checks} == {"v_upper", "v_lower", "v_lip"}

    def test_inflated_A_not_run(self, params):
        bud = InvarianceBudget.from_case("threshold", 0.05, 0.5, params)
        big = InvarianceBudget(10 * bud.A, bud.B, bud.R, bud.T)
        rep = verify_invariance(params, big, ensemble_size=16)
        assert not rep.precondition["pass"] and not rep.all_pass
        assert rep.checks == []

    def test_delta_case_horizon(self, params):
        A = 0.05
        B = 2 * A * params.kj / params.mu
        bud = InvarianceBudget(A, B, params.mu * B, 0.0, case="delta")
        assert bud.horizon(params) == pytest.approx(params.tau_lower + math.log(2.0) / params.qbar)
        assert bud.holds(params)

    def test_bad_case(self):
        with pytest.raises(ValueError):
            InvarianceBudget(1.0, 1.0, 1.0, 1.0, case="other")


class TestTrajectoryBounds:
    def test_decoupled_v_bound(self, decoupled):
        pair = random_pair(2, decoupled.h, 1.0, 1.0, 2.0, 2.0)
        tr = integrate(decoupled, pair, 3 * decoupled.h)
        checks = trajectory_bound_checks(tr)
        assert all(c.passed for c in checks)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_default_params(self, params, seed):
        tr = integrate(params, random_pair(seed, params.h, 1.0, 1.0, 2.0, 2.0), 4 * params.h)
        assert all(c.passed for c in trajectory_bound_checks(tr))
