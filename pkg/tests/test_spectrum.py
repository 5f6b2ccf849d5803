import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdslin.errors import (EstimationUncertaintyError, NotUniformlyStable)
from rdslin.flow import evolution_operator
from rdslin.spectrum import (AdaptedNormFamily, adapted_norm_eval,
                             build_adapted_norms, certify_dichotomy,
                             default_gap, lyapunov_qr, oseledets_filtration,
                             principal_angle, weighted_operator_norm)
from rdslin.systems import scalar_linear, ts2, ts3, ts3_2d
from rdslin.timebase import TimeGrid, generate_wiener, shift


def jordan_like():
    from rdslin.flow import SystemSpec

    mA = np.array([[-1.0, 5.0], [0.0, -1.0]])
    return SystemSpec(dim=2, A=lambda t, w: mA,
                      F=lambda t, x, w: np.zeros_like(x))


@pytest.fixture(scope="module")
def ts3_path():
    return generate_wiener(101, 1, TimeGrid(-22.0, 106.0, 0.01))


@pytest.fixture(scope="module")
def ts2_spectrum():
    return lyapunov_qr(ts2(), None, T=100.0, dt=0.01)


@pytest.fixture(scope="module")
def ts2_norms(ts2_spectrum):
    times = np.array([0.0, 0.5, 1.0, 2.0, 3.0])
    return build_adapted_norms(ts2(), None, ts2_spectrum, times)


class TestLyapunovQr:
    def test_diagonal_exponents(self, ts2_spectrum):
        np.testing.assert_allclose(ts2_spectrum.exponents, [-1.0, -2.0],
                                   atol=1e-2)
        assert list(ts2_spectrum.multiplicities) == [1, 1]

    def test_jordan_like_multiplicity(self):
        spec = lyapunov_qr(jordan_like(), None, T=200.0, dt=0.01)
        assert spec.k == 1
        assert spec.multiplicities[0] == 2
        assert spec.exponents[0] == pytest.approx(-1.0, abs=5e-2)

    def test_ts3_ensemble(self, ts3_path):
        # the modulation has zero ergodic mean, so the exponent is -1
        vals = []
        for seed in range(10):
            p = generate_wiener(300 + seed, 1, TimeGrid(-22.0, 102.0, 0.01))
            spec = lyapunov_qr(ts3(p), p.as_shift(), T=100.0, dt=0.01)
            vals.append(spec.top)
        assert abs(np.mean(vals) - (-1.0)) <= 3e-2

    def test_frame_invariance(self):
        rng = np.random.default_rng(5)
        frame, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        a = lyapunov_qr(ts2(), None, T=60.0, dt=0.01)
        b = lyapunov_qr(ts2(), None, T=60.0, dt=0.01, frame=frame)
        np.testing.assert_allclose(a.exponents, b.exponents, atol=0.05)

    def test_shift_invariance(self, ts3_path):
        sys = ts3(ts3_path)
        a = lyapunov_qr(sys, ts3_path.as_shift(), T=80.0, dt=0.01)
        b = lyapunov_qr(sys, shift(ts3_path, 4.0), T=80.0, dt=0.01)
        np.testing.assert_allclose(a.exponents, b.exponents, atol=0.1)

    def test_nonconvergence_raises_with_partial(self):
        # a horizon far too short for the slow modulation to average out
        p = generate_wiener(8, 1, TimeGrid(-22.0, 30.0, 0.01))
        with pytest.raises(EstimationUncertaintyError) as ei:
            lyapunov_qr(ts3(p, amp=2.0), p.as_shift(), T=3.0, dt=0.01)
        assert ei.value.partial is not None

    def test_default_gap(self):
        assert default_gap(np.array([-1.0, -2.0])) == pytest.approx(0.25)
        assert default_gap(np.array([-0.4])) == pytest.approx(0.2)


class TestFiltration:
    def test_diagonal_slow_space(self, ts2_spectrum):
        flag = ts2_spectrum.filtration()
        assert flag[0].shape == (2, 2)
        v2 = flag[1]
        e2 = np.array([[0.0], [1.0]])
        assert principal_angle(v2, e2) <= 1e-3

    def test_nesting_exact(self, ts2_spectrum):
        flag = ts2_spectrum.filtration()
        proj = flag[0] @ flag[0].T
        np.testing.assert_allclose(proj @ flag[1], flag[1], atol=1e-12)

    def test_full_space_first(self):
        chain = oseledets_filtration(ts2(), None, T=60.0, dt=0.01)
        assert chain[0].shape == (2, 2)

    def test_invariance_under_flow(self):
        # push the slow space forward and compare with the shifted estimate
        p = generate_wiener(77, 1, TimeGrid(-22.0, 60.0, 0.01))
        sys = ts3_2d(p)
        spec0 = lyapunov_qr(sys, p.as_shift(), T=30.0, dt=0.01)
        spec2 = lyapunov_qr(sys, shift(p, 2.0), T=30.0, dt=0.01)
        ev = evolution_operator(sys, p.as_shift(), 0.0,
                                TimeGrid(0.0, 2.0, 1e-3))
        pushed = ev.at(2.0) @ spec0.filtration()[1]
        pushed /= np.linalg.norm(pushed)
        assert principal_angle(pushed, spec2.filtration()[1]) <= 1e-2


class TestAdaptedNorm:
    def test_scalar_closed_form(self):
        # exp(-t) flow with lambda = -1, a = 0.5: the weight integral is
        # exactly 1, so the adapted norm coincides with the absolute value
        sys = scalar_linear(-1.0)
        spec = lyapunov_qr(sys, None, T=50.0, dt=0.01)
        assert spec.gap == pytest.approx(0.5, abs=1e-6)
        fam = build_adapted_norms(sys, None, spec, [0.0])
        assert fam.at(0.0).eval(np.array([3.0])) == pytest.approx(3.0,
                                                                  rel=1e-3)

    def test_zero_vector(self, ts2_norms):
        assert ts2_norms.at(0.0).eval(np.zeros(2)) == 0.0
        assert adapted_norm_eval(ts2_norms.at(0.0), np.zeros(2)) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=-50, max_value=50).filter(lambda c: c != 0))
    def test_homogeneity(self, c):
        nm = _NORM_CACHE["norm"]
        x = np.array([0.3, -1.2])
        assert nm.eval(c * x) == pytest.approx(abs(c) * nm.eval(x),
                                               rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_triangle_inequality(self, seed):
        nm = _NORM_CACHE["norm"]
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 2))
        assert nm.eval(x + y) <= nm.eval(x) + nm.eval(y) + 1e-9

    def test_equivalence_sandwich(self, ts2_norms):
        rng = np.random.default_rng(0)
        B = ts2_norms.equivalence
        for x in rng.normal(size=(25, 2)):
            v = ts2_norms.at(1.0).eval(x)
            nx = np.linalg.norm(x)
            assert nx / B * (1 - 1e-9) <= v <= B * nx * (1 + 1e-9)

    def test_growth_sandwich_on_blocks(self, ts2_spectrum, ts2_norms):
        # block vectors respect exp((lambda_i -+ a) t) bounds within 1%
        ev = evolution_operator(ts2(), None, 0.0, TimeGrid(0.0, 3.0, 1e-3))
        a = ts2_spectrum.gap
        rng = np.random.default_rng(1)
        for i, lam in enumerate(ts2_spectrum.exponents):
            block = ts2_spectrum.blocks[i]
            for _ in range(5):
                c = rng.normal(size=block.shape[1])
                x = block @ c
                base = ts2_norms.at(0.0).eval(x)
                for t in (0.5, 1.0, 2.0, 3.0):
                    ratio = ts2_norms.at(t).eval(ev.at(t) @ x) / base
                    lo = math.exp((lam - a) * t)
                    hi = math.exp((lam + a) * t)
                    assert lo / 1.01 <= ratio <= hi * 1.01


class TestWeightedOperatorNorm:
    def test_identity(self, ts2_norms):
        nm = ts2_norms.at(1.0)
        assert weighted_operator_norm(np.eye(2), nm, nm) == pytest.approx(
            1.0, abs=1e-10)

    def test_scalar_halving(self):
        fam = AdaptedNormFamily.ambient(1)
        nm = fam.at(0.0)
        assert weighted_operator_norm(np.array([[0.5]]), nm, nm) == 0.5

    def test_decay_bound(self, ts2_spectrum, ts2_norms):
        ev = evolution_operator(ts2(), None, 0.0, TimeGrid(0.0, 3.0, 1e-3))
        lam1, a = ts2_spectrum.top, ts2_spectrum.gap
        for s, t in [(0.0, 0.5), (0.0, 2.0), (1.0, 3.0), (0.5, 1.0)]:
            val = ts2_norms.operator_norm(ev.pair(t, s), s, t)
            assert val <= math.exp((lam1 + a) * (t - s)) * (1 + 1e-3)


class TestCertifyDichotomy:
    def test_adapted_route_exact_constants(self, ts2_norms):
        ev = evolution_operator(ts2(), None, 0.0, TimeGrid(0.0, 3.0, 1e-3))
        consts = certify_dichotomy(ev, ts2_norms,
                                   sample_times=[0.0, 0.5, 1.0, 2.0, 3.0])
        assert consts.K == 1.0
        assert consts.alpha == pytest.approx(0.75, abs=1e-3)

    def test_ambient_route_scalar(self):
        sys = scalar_linear(-1.0)
        ev = evolution_operator(sys, None, 0.0, TimeGrid(0.0, 4.0, 1e-3))
        consts = certify_dichotomy(ev, None)
        assert consts.K == pytest.approx(1.0, abs=1e-6)
        assert consts.alpha == pytest.approx(1.0, abs=1e-3)

    def test_unstable_rejected_ambient(self):
        sys = scalar_linear(0.5)
        ev = evolution_operator(sys, None, 0.0, TimeGrid(0.0, 4.0, 1e-3))
        with pytest.raises(NotUniformlyStable):
            certify_dichotomy(ev, None)

    def test_unstable_rejected_adapted(self):
        sys = scalar_linear(0.5)
        spec = lyapunov_qr(sys, None, T=50.0, dt=0.01)
        fam = build_adapted_norms(sys, None, spec, [0.0, 1.0], trunc_T=4.0)
        ev = evolution_operator(sys, None, 0.0, TimeGrid(0.0, 4.0, 1e-3))
        with pytest.raises(NotUniformlyStable):
            certify_dichotomy(ev, fam)


_NORM_CACHE = {}


def setup_module(module):
    spec = lyapunov_qr(ts2(), None, T=60.0, dt=0.01)
    fam = build_adapted_norms(ts2(), None, spec, [0.0])
    _NORM_CACHE["norm"] = fam.at(0.0)
