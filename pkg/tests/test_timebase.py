import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdslin.errors import (AlignmentError, ConfigurationError, OutOfRangeError)
from rdslin.timebase import (NoisePath, StationaryOU, TimeGrid,
                             generate_wiener, load_csv, shift, stationary_ou)


def make_grid(t0=-2.0, t_end=2.0, dt=0.1):
    return TimeGrid(t0, t_end, dt)


class TestTimeGrid:
    def test_nodes(self):
        g = TimeGrid(0.0, 1.0, 0.25)
        assert g.n_steps == 4
        np.testing.assert_allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_rejects_bad_steps(self):
        with pytest.raises(ConfigurationError):
            TimeGrid(0.0, 1.0, -0.1)
        with pytest.raises(ConfigurationError):
            TimeGrid(1.0, 0.0, 0.1)
        with pytest.raises(ConfigurationError):
            TimeGrid(0.0, 1.0, 0.3)  # 1/0.3 not an integer

    def test_index_of(self):
        g = make_grid()
        assert g.index_of(-2.0) == 0
        assert g.index_of(0.0) == 20
        with pytest.raises(AlignmentError):
            g.index_of(0.05)


class TestGenerateWiener:
    def test_zero_components(self):
        p = generate_wiener(42, 0, make_grid())
        assert p.dims == 0
        assert p.value(0.5) == 0.0
        assert stationary_ou(p, 1.0, t_hist=2.0) == 0.0

    def test_determinism(self):
        g = make_grid()
        a = generate_wiener(42, 2, g)
        b = generate_wiener(42, 2, g)
        assert np.array_equal(a.increments, b.increments)
        c = generate_wiener(43, 2, g)
        assert not np.array_equal(a.increments, c.increments)

    def test_increment_variance(self):
        # sample variance of N(0, dt) over 1e5 draws; the interval is far
        # wider than the 6-sigma chi-square band at this sample size
        g = TimeGrid(0.0, 1000.0, 0.01)
        p = generate_wiener(7, 1, g)
        v = p.increments[0].var()
        assert 0.0095 <= v <= 0.0105

    def test_rejects_negative_dims(self):
        with pytest.raises(ConfigurationError):
            generate_wiener(1, -1, make_grid())


class TestShift:
    def test_identity(self):
        p = generate_wiener(3, 1, make_grid())
        s0 = shift(p, 0.0)
        for t in [-1.0, 0.0, 0.5, 1.5]:
            assert s0.value(t) == pytest.approx(p.value(t) - p.value(0.0),
                                                abs=1e-15)

    def test_group_law_exact_on_increments(self):
        p = generate_wiener(3, 1, make_grid())
        ab = shift(shift(p, 0.3), 0.5)
        once = shift(p, 0.8)
        assert ab.offset == pytest.approx(once.offset)
        w1 = ab.increments_window(-0.5, 0.5)
        w2 = once.increments_window(-0.5, 0.5)
        assert np.array_equal(w1, w2)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=-5, max_value=5),
           st.integers(min_value=-5, max_value=5))
    def test_group_law_values(self, i, j):
        p = generate_wiener(11, 1, make_grid())
        s, t = 0.1 * i, 0.1 * j
        composed = shift(shift(p, s), t)
        direct = shift(p, s + t)
        u = 0.2
        if abs(u + s + t) <= 1.9:
            assert composed.value(u) == pytest.approx(direct.value(u),
                                                      abs=1e-12)

    def test_wiener_shift_arithmetic(self):
        # W(0.5) = 0.3 and W(0.7) = 0.8 force the shifted value
        # (shift by 0.5, queried at 0.2) to be 0.5
        g = TimeGrid(0.0, 1.0, 0.1)
        incr = np.zeros((1, 10))
        incr[0, 4] = 0.3   # W(0.5) = 0.3
        incr[0, 5] = 0.25  # W(0.6) = 0.55
        incr[0, 6] = 0.25  # W(0.7) = 0.8
        p = NoisePath(seed=0, dims=1, grid=g, increments=incr)
        sh = shift(p, 0.5)
        assert sh.value(0.2) == pytest.approx(0.5, abs=1e-12)

    def test_off_grid_shift_rejected(self):
        p = generate_wiener(3, 1, make_grid())
        with pytest.raises(AlignmentError):
            shift(p, 0.05)

    def test_window_exceeded(self):
        p = generate_wiener(3, 1, make_grid())
        sh = shift(p, 1.0)
        with pytest.raises(OutOfRangeError):
            sh.value(1.5)


class TestStationaryOU:
    def test_zero_path(self):
        g = TimeGrid(-25.0, 5.0, 0.1)
        p = NoisePath(seed=0, dims=1, grid=g,
                      increments=np.zeros((1, g.n_steps)))
        assert stationary_ou(p, 0.0, t_hist=20.0) == 0.0

    def test_matches_direct_sum(self):
        g = TimeGrid(-25.0, 5.0, 0.05)
        p = generate_wiener(5, 1, g)
        t, t_hist = 1.0, 20.0
        i0 = g.index_of(t - t_hist)
        i1 = g.index_of(t)
        expected = float(np.exp(g.nodes[i0:i1] - t) @ p.increments[0, i0:i1])
        assert stationary_ou(p, t, t_hist=t_hist) == pytest.approx(expected,
                                                                   rel=1e-12)

    def test_shift_consistency(self):
        # the history value seen from a shifted driver equals the base value
        # at the shifted time
        g = TimeGrid(-25.0, 5.0, 0.05)
        p = generate_wiener(5, 1, g)
        sh = shift(p, 2.0)
        assert stationary_ou(sh, 0.5, t_hist=20.0) == pytest.approx(
            stationary_ou(p, 2.5, t_hist=20.0), rel=1e-12)

    def test_window_not_covered(self):
        g = TimeGrid(-5.0, 5.0, 0.1)
        p = generate_wiener(5, 1, g)
        with pytest.raises(OutOfRangeError):
            stationary_ou(p, 0.0, t_hist=20.0)

    def test_ensemble_variance_and_stationarity(self):
        # Var u = integral of exp(-2r) over r >= 0 = 1/2; Monte Carlo over
        # 1e4 seeds (one vectorized batch)
        dt, t_hist = 0.01, 20.0
        g = TimeGrid(-t_hist, 5.0 + dt, dt)
        n_paths = 10_000
        rng = np.random.default_rng(2024)
        incr = rng.normal(0.0, math.sqrt(dt), size=(n_paths, g.n_steps))
        nodes = g.nodes

        def u_at(t):
            i0 = g.index_of(t - t_hist)
            i1 = g.index_of(t)
            w = np.exp(nodes[i0:i1] - t)
            return incr[:, i0:i1] @ w

        v0 = u_at(0.0).var()
        v5 = u_at(5.0).var()
        assert abs(v0 - 0.5) <= 0.02
        assert abs(v5 - 0.5) <= 0.02
        assert abs(v0 - v5) <= 0.02

    def test_precomputed_matches_op(self):
        g = TimeGrid(-22.0, 6.0, 0.05)
        p = generate_wiener(9, 1, g)
        ou = StationaryOU(p, t_hist=20.0)
        for t in [-2.0, 0.0, 1.55, 6.0]:
            assert ou.value(t) == pytest.approx(
                stationary_ou(p, t, t_hist=20.0), rel=1e-10, abs=1e-12)
        sh = shift(p, 1.0)
        assert ou.at(sh, 0.5) == pytest.approx(
            stationary_ou(sh, 0.5, t_hist=20.0), rel=1e-10, abs=1e-12)


class TestRoundTrip:
    def test_csv(self, tmp_path):
        g = TimeGrid(-1.0, 1.0, 0.1)
        p = generate_wiener(21, 2, g)
        f = tmp_path / "path.csv"
        p.save_csv(f)
        q = load_csv(f, seed=21)
        assert q.dims == 2
        np.testing.assert_allclose(q.increments, p.increments, atol=1e-12)
