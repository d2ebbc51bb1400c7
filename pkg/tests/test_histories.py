import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sddde.histories import (History, HistoryDomainError, HistoryPair, evaluate, lip, pair_distance,
                             random_lipschitz, random_pair, segment, sup_norm, union_grid)
from sddde.integrator import integrate


def nodes(pts, h=1.0):
    t, v = zip(*pts)
    return History(h, np.array(t, dtype=float), np.array(v, dtype=float))


seeds = st.integers(0, 2**32 - 1)


class TestEvaluate:
    def test_constant(self):
        assert evaluate(History.constant(1.0, 2.0), -0.5) == 2.0

    def test_identity(self):
        assert evaluate(nodes([(-1, -1), (0, 0)]), -0.25) == pytest.approx(-0.25, abs=1e-15)

    def test_midpoint(self):
        assert evaluate(nodes([(-1, 0), (-0.5, 2), (0, 1)]), -0.75) == pytest.approx(1.0, abs=1e-15)

    def test_clamps_jitter(self):
        phi = nodes([(-1, 0), (0, 1)])
        assert evaluate(phi, 1e-13) == 1.0
        assert evaluate(phi, -1.0 - 1e-13) == 0.0

    def test_rejects_outside(self):
        with pytest.raises(HistoryDomainError):
            evaluate(nodes([(-1, 0), (0, 1)]), 0.01)

    def test_vector_valued(self):
        phi = History(1.0, np.array([-1.0, 0.0]), np.array([[0.0, 2.0], [1.0, 4.0]]))
        np.testing.assert_allclose(phi(-0.5), [0.5, 3.0])


class TestNorms:
    def test_sup_constant(self):
        assert sup_norm(History.constant(1.0, -3.0)) == 3.0

    def test_sup_endpoint(self):
        assert sup_norm(nodes([(-1, 0), (0, 5)])) == 5.0

    def test_sup_interior(self):
        assert sup_norm(nodes([(-1, 1), (-0.5, -4), (0, 2)])) == 4.0

    def test_lip_constant(self):
        assert lip(History.constant(1.0, 7.0)) == 0.0

    def test_lip_linear(self):
        assert lip(nodes([(-1, -3), (0, 0)])) == 3.0

    def test_lip_kinked(self):
        assert lip(nodes([(-1, 0), (-0.5, 2), (0, 1)])) == 4.0


class TestConstruction:
    def test_rejects_bad_span(self):
        with pytest.raises(ValueError):
            History(1.0, np.array([-0.9, 0.0]), np.array([0.0, 1.0]))

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            History(1.0, np.array([-1.0, -0.2, -0.5, 0.0]), np.zeros(4))

    def test_immutable(self):
        phi = nodes([(-1, 0), (0, 1)])
        with pytest.raises(ValueError):
            phi.values[0, 0] = 3.0

    def test_json_roundtrip(self):
        phi = random_lipschitz(3, 1.5, 2, 1.0, 2.0, 7)
        back = History.from_json(phi.to_json())
        assert back.same_nodes(phi)
        doc = json.loads(phi.to_json())
        assert set(doc) == {"h", "nodes"}

    def test_csv_columns(self):
        text = random_lipschitz(3, 1.0, 2, 1.0, 2.0, 4).to_csv().splitlines()
        assert text[0] == "t,v1,v2"
        assert len(text) == 5

    def test_union_grid_merges_near_duplicates(self):
        g = union_grid(np.array([-1.0, -0.5, 0.0]), np.array([-1.0, -0.5 + 1e-14, 0.0]), 1.0)
        assert len(g) == 3


class TestRandomLipschitz:
    def test_zero_bound(self):
        assert sup_norm(random_lipschitz(1, 1.0, 1, 0.0, 3.0)) == 0.0

    def test_zero_lip_is_constant(self):
        phi = random_lipschitz(1, 1.0, 1, 1.0, 0.0)
        assert lip(phi) == 0.0
        assert 0.0 <= phi.values[0, 0] <= 1.0

    def test_deterministic(self):
        a = random_lipschitz(42, 1.0, 1, 1.0, 2.0, 5)
        b = random_lipschitz(42, 1.0, 1, 1.0, 2.0, 5)
        assert a.same_nodes(b)

    @given(seeds, st.floats(0.0, 5.0), st.floats(0.0, 10.0), st.integers(2, 40), st.integers(1, 3))
    def test_bounds_exact(self, seed, A, R, m, d):
        phi = random_lipschitz(seed, 0.7, d, A, R, m)
        assert lip(phi) <= R
        assert np.all(phi.values >= 0.0) and np.all(phi.values <= A)


@given(seeds, st.lists(st.floats(-0.999, -0.001), min_size=2, max_size=20))
def test_evaluation_is_lipschitz(seed, ss):
    phi = random_lipschitz(seed, 1.0, 1, 3.0, 5.0, 13) - 1.5
    L = lip(phi)
    vals = phi(np.array(ss))
    for a, va in zip(ss, vals):
        for b, vb in zip(ss, vals):
            assert abs(va - vb) <= L * abs(a - b) * (1 + 1e-12) + 1e-15


@given(seeds, st.floats(-10, 10))
def test_sup_norm_homogeneous(seed, alpha):
    phi = random_lipschitz(seed, 1.0, 2, 1.0, 4.0, 9) - 0.5
    assert sup_norm(phi * alpha) == pytest.approx(abs(alpha) * sup_norm(phi), rel=1e-15, abs=0)


@given(seeds, seeds)
def test_difference_is_exact_on_union_grid(s1, s2):
    a = random_lipschitz(s1, 1.0, 1, 1.0, 3.0, 7)
    b = random_lipschitz(s2, 1.0, 1, 1.0, 3.0, 11)
    diff = a - b
    t = diff.times
    np.testing.assert_allclose(diff(t), a(t) - b(t), atol=1e-15)


class TestPair:
    def test_resamples_to_union_grid(self):
        p = HistoryPair(nodes([(-1, 0), (0, 1)]), nodes([(-1, 0), (-0.5, 1), (0, 0)]))
        assert p.resampled
        np.testing.assert_array_equal(p.times, [-1.0, -0.5, 0.0])
        assert p.phi(-0.5) == 0.5

    def test_default_breaks_are_kinks(self):
        p = HistoryPair(nodes([(-1, 0), (-0.5, 1), (0, 2)]), nodes([(-1, 0), (-0.5, 1), (0, 0)]))
        np.testing.assert_array_equal(p.break_times(), [-0.5, 0.0])

    def test_explicit_breaks_validated(self):
        with pytest.raises(ValueError):
            HistoryPair(History.constant(1.0, 1.0), History.constant(1.0, 1.0), breaks=(-2.0,))

    def test_dict_roundtrip(self):
        p = random_pair(5, 1.0, 1.0, 1.0, 2.0, 2.0)
        q = HistoryPair.from_dict(json.loads(json.dumps(p.to_dict())))
        assert q.same_nodes(p)
        assert pair_distance(p, q) == 0.0


class TestSegment:
    def test_at_zero_is_initial_data(self, params):
        p = random_pair(7, params.h, 1.0, 1.0, 2.0, 2.0)
        seg = segment(integrate(params, p, params.h), 0.0)
        assert seg.phi.same_nodes(p.phi) and seg.psi.same_nodes(p.psi)

    def test_equilibrium_segment_constant(self, params):
        from sddde.model import equilibrium

        w, v = equilibrium(params)
        tr = integrate(params, HistoryPair.constant(params.h, w, v), 2 * params.h)
        for t in (0.3, 1.0, 2.0):
            seg = segment(tr, t)
            assert np.max(np.abs(seg.phi.values - w)) <= 1e-9 * (1 + w)
            assert np.max(np.abs(seg.psi.values - v)) <= 1e-9 * (1 + v)

    def test_end_value_matches_dense_output(self, params):
        p = random_pair(8, params.h, 1.0, 1.0, 2.0, 2.0)
        tr = integrate(params, p, 1.5 * params.h)
        seg = segment(tr, params.h)
        w, v = tr(params.h)
        assert seg.phi(0.0) == pytest.approx(w, abs=1e-14)
        assert seg.psi(0.0) == pytest.approx(v, abs=1e-14)
        # interior of the window: earlier part of the solution
        w2, v2 = tr(0.5 * params.h)
        assert seg.phi(-0.5 * params.h) == pytest.approx(w2, abs=1e-6)

    def test_inside_initial_interval_needs_no_integration(self, params):
        p = random_pair(9, params.h, 1.0, 1.0, 2.0, 2.0)
        tr = integrate(params, p, 0.25 * params.h)
        seg = segment(tr, 0.25 * params.h)
        s = np.linspace(-params.h, -0.25 * params.h, 31)
        np.testing.assert_allclose(seg.phi(s), p.phi(s + 0.25 * params.h), atol=1e-14)
