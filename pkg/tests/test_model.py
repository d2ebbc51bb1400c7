import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sddde.histories import History, random_lipschitz, random_pair, sup_norm
from sddde.model import (ModelParams, delay, equilibrium, estimate_local_lipschitz, kj_bound,
                         kj_formula, qbar, rhs_full, rhs_j)

from conftest import params_with

seeds = st.integers(0, 2**32 - 1)


def q_ref(z, a_w, p_w, mu_w, k_a, k_p):
    s = a_w / (1 + k_a * z)
    d = p_w / (1 + k_p * z)
    return (2 * s - 1) * d - mu_w


def gamma_ref(z, a_w, p_w, k_a, k_p):
    return 2 * (1 - a_w / (1 + k_a * z)) * p_w / (1 + k_p * z)


def unit_speed_params(**kw):
    """g = 1 and d = 0: tau = x2 - x1 and both the g-ratio and the exponential factor are 1."""
    doc = dict(a_w=0.6, p_w=1.0, mu_w=0.1, k_a=1.0, k_p=0.5, k_d=0.0, alpha_spec=0.0, mu_u_spec=0.0, mu=1.0,
               x1=0.5, x2=1.0, b=2.0, K=2.0, eps=0.5, g_family="const", g_params={"base": 1.0})
    doc.update(kw)
    return ModelParams.from_dict(doc)


class TestRates:
    def test_q_at_zero(self):
        p = params_with(a_w=1.0, p_w=1.0, mu_w=0.1)
        assert p.q(0.0) == pytest.approx(0.9, abs=1e-15)

    def test_gamma_vanishes_at_full_self_renewal(self):
        p = params_with(a_w=1.0, p_w=3.0)
        assert p.gamma(0.0) == 0.0

    def test_q_limit(self):
        p = params_with(a_w=0.8, p_w=2.0, mu_w=0.3, k_a=1.0, k_p=1.0)
        assert p.q(1e9) == pytest.approx(-0.3, abs=1e-8)

    @given(st.floats(0, 1), st.floats(0, 5), st.floats(0, 1), st.floats(0, 5), st.floats(0, 5), st.floats(0, 100))
    def test_against_closed_form(self, a_w, p_w, mu_w, k_a, k_p, z):
        p = params_with(a_w=a_w, p_w=p_w, mu_w=mu_w, k_a=k_a, k_p=k_p)
        assert p.q(z) == pytest.approx(q_ref(z, a_w, p_w, mu_w, k_a, k_p), abs=1e-12)
        assert p.gamma(z) == pytest.approx(gamma_ref(z, a_w, p_w, k_a, k_p), abs=1e-12)
        assert p.gamma(z) >= 0.0

    def test_vectorized(self, params):
        z = np.array([0.0, 0.5, 2.0])
        np.testing.assert_allclose(params.q(z), [params.q(x) for x in z])


class TestDeath:
    def test_constant_one(self):
        p = params_with(alpha_spec=1.0, mu_u_spec=0.0, k_d=0.0)
        assert p.d(1.0, 3.0) == 1.0

    def test_no_alpha(self):
        p = params_with(alpha_spec=0.0, mu_u_spec={"kind": "affine", "coeffs": [0.2, 0.1, 1.0]}, k_d=1.0)
        for y in (0.0, 1.0, 2.5):
            assert p.d(y, 0.7) == pytest.approx(-(0.2 + 0.1 * (y - 1.0)), abs=1e-15)

    def test_balanced(self):
        p = params_with(alpha_spec=1.0, mu_u_spec=0.5, k_d=1.0)
        assert p.d(1.0, 1.0) == pytest.approx(0.0, abs=1e-15)


class TestQbar:
    def test_attained_at_zero(self):
        p = params_with(a_w=1.0, p_w=1.0, mu_w=0.1)
        assert qbar(p) == pytest.approx(0.9, abs=1e-12)

    def test_half_renewal(self):
        p = params_with(a_w=0.5, mu_w=0.25)
        assert qbar(p) == pytest.approx(-0.25, abs=1e-12)

    def test_no_death(self):
        p = params_with(mu_w=0.0, a_w=1.0, p_w=2.0)
        assert qbar(p) == pytest.approx(2.0, abs=1e-12)

    @given(st.floats(0, 1), st.floats(0, 5), st.floats(0, 1), st.floats(0, 5), st.floats(0, 5))
    def test_grid_oracle(self, a_w, p_w, mu_w, k_a, k_p):
        p = params_with(a_w=a_w, p_w=p_w, mu_w=mu_w, k_a=k_a, k_p=k_p)
        z = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 4000)])
        tail = -mu_w if k_p > 0 else (-p_w - mu_w if k_a > 0 else q_ref(0.0, a_w, p_w, mu_w, k_a, k_p))
        ref = max(float(np.max(q_ref(z, a_w, p_w, mu_w, k_a, k_p))), tail)
        assert p.qbar == pytest.approx(ref, abs=1e-6)


class TestKj:
    def test_formula_example(self):
        assert kj_formula(2.0, 0.5, 1.0, 1.0, 2.0) == pytest.approx(8 * math.exp(1.5), rel=1e-14)

    def test_formula_second_example(self):
        assert kj_formula(1.0, 0.5, 1.0, 0.0, 1.0) == pytest.approx(2 * math.e, rel=1e-14)

    def test_no_gamma(self):
        assert kj_bound(params_with(a_w=1.0, k_a=0.0, k_p=0.0)) == 0.0

    def test_default_against_brute_force(self, params):
        f = params.field
        y = np.linspace(f.x2 - f.b, f.x2 + f.b, 801)
        z = np.concatenate([np.linspace(0, 5, 501), np.geomspace(5, 1e4, 400)])
        Y, Z = np.meshgrid(y, z)
        alpha, mu_u = 0.2, 0.1  # default death profiles
        d = alpha / (1 + params.ingredients.death.k_d * Z) - mu_u
        sup_d = float(np.max(np.abs(d)))
        ing = params.ingredients
        sup_g = max(float(np.max(gamma_ref(z, ing.a_w, ing.p_w, ing.k_a, ing.k_p))),
                    2 * ing.p_w if ing.k_p == 0 else 0.0)
        ref = f.K / f.eps * math.exp((f.K / f.b + sup_d) * f.h) * sup_g
        assert params.kj == pytest.approx(ref, rel=1e-6)


class TestJ:
    def test_zero_phi(self, params):
        psi = random_lipschitz(2, params.h, 1, 1.0, 2.0)
        assert rhs_j(params, History.constant(params.h, 0.0), psi) == 0.0

    def test_zero_gamma(self):
        p = params_with(a_w=1.0, k_a=0.0, k_p=0.0)
        pair = random_pair(3, p.h, 1.0, 1.0, 2.0, 2.0)
        assert rhs_j(p, pair.phi, pair.psi) == 0.0

    @given(seeds, st.floats(0.0, 3.0))
    def test_hand_reduced_formula(self, seed, w0):
        p = unit_speed_params()
        psi = random_lipschitz(seed, p.h, 1, 1.0, 2.0, 9)
        tau = delay(p, psi)
        assert tau == pytest.approx(0.5, abs=1e-12)
        ref = p.gamma(float(psi(-tau))) * w0
        assert rhs_j(p, History.constant(p.h, w0), psi) == pytest.approx(ref, rel=1e-9, abs=1e-15)

    @given(seeds, st.floats(0.0, 10.0))
    def test_linear_in_phi(self, params, seed, c):
        pair = random_pair(seed, params.h, 1.0, 1.0, 2.0, 2.0)
        j1 = rhs_j(params, pair.phi, pair.psi)
        assert rhs_j(params, pair.phi * c, pair.psi) == pytest.approx(c * j1, rel=1e-12, abs=1e-300)

    @given(seeds, st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.0, 6.0))
    def test_bounds(self, params, seed, A, B, R):
        pair = random_pair(seed, params.h, A, B, R, R, m=13)
        j = rhs_j(params, pair.phi, pair.psi)
        tau = delay(params, pair.psi)
        assert j >= 0.0
        assert j <= params.kj * pair.phi(-tau) * (1 + 1e-9)
        assert j <= params.kj * sup_norm(pair.phi) * (1 + 1e-9)

    def test_rejects_negative_history(self, params):
        with pytest.raises(ValueError):
            rhs_j(params, History.constant(params.h, -1.0), History.constant(params.h, 0.0))


class TestFull:
    def test_trivial_equilibrium(self, params):
        z = History.constant(params.h, 0.0)
        assert rhs_full(params, z, z) == (0.0, 0.0)

    def test_positive_equilibrium(self, params):
        w, v = equilibrium(params)
        fw, fv = rhs_full(params, History.constant(params.h, w), History.constant(params.h, v))
        assert abs(fw) <= 1e-12 and abs(fv) <= 1e-12
        assert params.q(v) == pytest.approx(0.0, abs=1e-13)

    def test_no_equilibrium_when_q_negative(self):
        assert equilibrium(params_with(a_w=0.4, p_w=0.5, mu_w=0.5)) is None

    def test_signs(self):
        p = params_with(a_w=1.0)
        fw, fv = rhs_full(p, History.constant(p.h, 1.0), History.constant(p.h, 0.0))
        assert fw == pytest.approx(p.q(0.0), abs=1e-15)
        assert fv >= 0.0

    def test_params_roundtrip(self, params):
        back = ModelParams.from_dict(params.to_dict())
        assert back.to_dict() == params.to_dict()
        assert back.kj == params.kj


class TestLocalLipschitz:
    def test_constant_functional(self, params):
        phi0 = random_lipschitz(1, params.h, 1, 1.0, 1.0)
        assert estimate_local_lipschitz(lambda p: 3.0, phi0, 0.1, 2.0, n_samples=20) == 0.0

    def test_evaluation_functional(self, params):
        phi0 = random_lipschitz(1, params.h, 1, 1.0, 1.0)
        L = estimate_local_lipschitz(lambda p: float(p(0.0)), phi0, 0.1, 2.0, n_samples=200)
        assert 0.5 < L <= 1.0 + 1e-12

    def test_j_saturates(self, params):
        phi0 = random_lipschitz(1, params.h, 1, 1.0, 1.0)
        psi0 = random_lipschitz(2, params.h, 1, 1.0, 1.0)
        fn = lambda p: rhs_j(params, phi0, p)  # noqa: E731
        L1 = estimate_local_lipschitz(fn, psi0, 0.05, 2.5, n_samples=50, seed=3)
        L2 = estimate_local_lipschitz(fn, psi0, 0.05, 2.5, n_samples=100, seed=3)
        assert 0 < L1 < math.inf and L2 <= 2 * L1

    def test_rejects_bad_radius(self, params):
        with pytest.raises(ValueError):
            estimate_local_lipschitz(lambda p: 0.0, History.constant(params.h, 0.0), 0.0, 1.0)
