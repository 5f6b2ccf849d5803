import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from rdslin.errors import (CapabilityError, ConfigurationError,
                           NotUniformlyStable)
from rdslin.sde import (CohomologyField, PipelineConfig, SdeSystem,
                        cohomology_H0, gamma0, heun_stratonovich,
                        induced_rde_field, linearize_sde, pipeline_path_grid,
                        sde_linear_cocycle, sde_lyapunov, stationary_flow)
from rdslin.systems import ts4, ts5
from rdslin.timebase import TimeGrid, generate_wiener, stationary_ou

PATH_GRID = TimeGrid(-22.0, 6.0, 1e-3)


@pytest.fixture(scope="module")
def path():
    return generate_wiener(11, 1, PATH_GRID)


@pytest.fixture(scope="module")
def field(path):
    return CohomologyField(ts4(), path, t_hist=20.0, dt=5e-3)


class TestSdeSystem:
    def test_fixed_point_probed(self):
        with pytest.raises(ConfigurationError):
            SdeSystem(dim=1, f0=lambda x: x + 1.0,
                      diffusions=(lambda x: 0.3 * x,))

    def test_linear_parts(self):
        A0, Bs = ts5().linear_parts()
        assert A0[0, 0] == pytest.approx(-0.9)
        assert Bs[0][0, 0] == pytest.approx(0.3)

    def test_linear_parts_need_derivatives(self):
        sys = SdeSystem(dim=1, f0=lambda x: -x,
                        diffusions=(lambda x: 0.3 * x,))
        with pytest.raises(CapabilityError):
            sys.linear_parts()


class TestHeun:
    def test_no_noise_matches_ode(self):
        sys = SdeSystem(dim=1, f0=lambda x: -x, diffusions=())
        p = generate_wiener(0, 0, PATH_GRID)
        traj = heun_stratonovich(sys, p, np.array([1.0]),
                                 TimeGrid(0.0, 1.0, 1e-3))
        assert traj.at(1.0)[0] == pytest.approx(math.exp(-1.0), abs=1e-3)

    def test_zero_path_reduces_to_deterministic(self):
        from rdslin.timebase import NoisePath

        g = TimeGrid(0.0, 1.0, 1e-3)
        zero = NoisePath(seed=0, dims=1, grid=g,
                         increments=np.zeros((1, g.n_steps)))
        a = heun_stratonovich(ts4(), zero, np.array([1.0]), g)
        sys0 = SdeSystem(dim=1, f0=lambda x: -x, diffusions=())
        nop = generate_wiener(0, 0, g)
        b = heun_stratonovich(sys0, nop, np.array([1.0]), g)
        assert np.abs(a.states - b.states).max() <= 1e-12

    def test_closed_form_strong_error(self, path):
        # x_t = x0 exp(lam t + b W_t); per-path error <= C dt with C <= 5
        errs = []
        for seed in range(20):
            p = generate_wiener(700 + seed, 1, TimeGrid(0.0, 1.0, 1e-3))
            traj = heun_stratonovich(ts4(), p, np.array([1.0]),
                                     TimeGrid(0.0, 1.0, 1e-3))
            w1 = p.value(1.0)
            exact = math.exp(-1.0 + 0.3 * w1)
            errs.append(abs(traj.at(1.0)[0] - exact))
        C = np.mean(errs) / 1e-3
        assert C <= 5.0

    def test_strong_order_halving(self):
        # coarsening the same increments doubles the mean strong error
        fine = TimeGrid(0.0, 1.0, 5e-4)
        errs = {2e-3: [], 1e-3: []}
        for seed in range(20):
            p = generate_wiener(900 + seed, 1, fine)
            w1 = p.value(1.0)
            exact = math.exp(-1.0 + 0.3 * w1)
            for dt in errs:
                traj = heun_stratonovich(ts4(), p, np.array([1.0]),
                                         TimeGrid(0.0, 1.0, dt))
                errs[dt].append(abs(traj.at(1.0)[0] - exact))
        ratio = np.mean(errs[2e-3]) / np.mean(errs[1e-3])
        assert 1.7 <= ratio <= 2.3

    def test_misaligned_window_rejected(self, path):
        with pytest.raises(ConfigurationError):
            heun_stratonovich(ts4(), path, np.array([1.0]),
                              TimeGrid(0.0, 1.0, 1e-3 * 1.5))


class TestStationaryFlow:
    def test_zero_diffusions_identity(self):
        sys = SdeSystem(dim=1, f0=lambda x: -x, diffusions=())
        p = generate_wiener(0, 0, PATH_GRID)
        f = CohomologyField(sys, p, t_hist=20.0, dt=5e-3)
        x = np.array([0.8])
        assert np.array_equal(f.stationary_flow(x, 0.0, 0.0), x)

    def test_scalar_closed_form(self, path, field):
        # flow value x*exp(b e^{t-tau} u_t) against the weighted-sum history
        x = np.array([1.3])
        for tau, t in [(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)]:
            u = stationary_ou(path, t, t_hist=20.0)
            expect = x * math.exp(0.3 * math.exp(t - tau) * u)
            got = stationary_flow(field, x, tau, t)
            assert got[0] == pytest.approx(expect[0], rel=1e-2)

    def test_anchor_consistency(self, path, field):
        # the fiber cohomology is the flow evaluated on the diagonal
        x = np.array([0.5])
        a = field.h_at(2.0, x)
        b = field.stationary_flow(x, 2.0, 2.0)
        assert np.array_equal(a, b)

    def test_window_coverage_checked(self, field):
        with pytest.raises(Exception):
            field.stationary_flow(np.array([1.0]), 10.0, 10.0)


class TestCohomology:
    def test_identity_without_noise_terms(self):
        sys = SdeSystem(dim=1, f0=lambda x: -x, diffusions=())
        p = generate_wiener(0, 0, PATH_GRID)
        f = CohomologyField(sys, p, t_hist=20.0, dt=5e-3)
        x = np.array([0.7])
        assert np.array_equal(cohomology_H0(f, x), x)
        assert np.abs(gamma0(f, x)).max() <= 1e-9

    def test_scalar_closed_forms(self, path, field):
        u0 = stationary_ou(path, 0.0, t_hist=20.0)
        x = np.array([1.3])
        h = cohomology_H0(field, x)
        assert h[0] == pytest.approx(x[0] * math.exp(0.3 * u0), rel=2e-3)
        g = gamma0(field, x)
        assert g[0] == pytest.approx(-0.3 * u0 * h[0], rel=2e-2, abs=1e-4)

    def test_inverse_roundtrip(self, field):
        for xv in (0.4, 1.3, -0.9):
            x = np.array([xv])
            y = field.h0(x)
            back = field.h0_inverse(y)
            assert np.abs(back - x).max() <= 1e-8 * (1 + abs(xv))

    def test_jacobian_closed_form(self, path, field):
        # scalar linear cohomology is linear: DH0 = exp(b u0)
        u0 = stationary_ou(path, 0.0, t_hist=20.0)
        jac = field.jacobian_at(0.0, np.array([0.9]))
        assert jac[0, 0] == pytest.approx(math.exp(0.3 * u0), rel=2e-3)

    def test_variance_of_log_cohomology(self):
        # Var(log H0(1)) = b^2 Var(u0) = b^2/2 over 1000 seeds
        b = 0.3
        vals = []
        grid = TimeGrid(-21.0, 1.0, 1e-2)
        for seed in range(1000):
            p = generate_wiener(3000 + seed, 1, grid)
            f = CohomologyField(ts4(b=b), p, t_hist=20.0, dt=1e-2)
            vals.append(math.log(f.h0(np.array([1.0]))[0]))
        var = float(np.var(vals))
        assert abs(var - b * b / 2.0) <= 0.1 * (b * b / 2.0)

    def test_shift_stationarity_ks(self):
        # H0 at the base fiber and at the fiber five units later follow the
        # same law (two-sample KS over 1000 seeds)
        b = 0.3
        at0, at5 = [], []
        grid = TimeGrid(-21.0, 6.0, 1e-2)
        for seed in range(1000):
            p = generate_wiener(5000 + seed, 1, grid)
            f = CohomologyField(ts4(b=b), p, t_hist=20.0, dt=1e-2)
            at0.append(f.h0(np.array([1.0]))[0])
            at5.append(f.h_at(5.0, np.array([1.0]))[0])
        stat = ks_2samp(at0, at5).statistic
        assert stat <= 0.05


class TestInducedField:
    def test_no_noise_reduces_to_drift(self):
        sys = SdeSystem(dim=1, f0=lambda x: -x + 0.1 * np.sin(x),
                        diffusions=())
        p = generate_wiener(0, 0, PATH_GRID)
        f = CohomologyField(sys, p, t_hist=20.0, dt=5e-3)
        g = induced_rde_field(f)
        ys = np.array([[0.3], [1.1], [-0.7]])
        np.testing.assert_allclose(g.eval(0.0, ys), sys.f0(ys), atol=1e-8)

    def test_scalar_linear_closed_form(self, path, field):
        # induced drift (lam + b u_t) y
        g = induced_rde_field(field)
        for t in (0.0, 1.0, 2.5):
            u = stationary_ou(path, t, t_hist=20.0)
            y = np.array([0.7])
            assert g.eval(t, y)[0] == pytest.approx(
                (-1.0 + 0.3 * u) * y[0], rel=2e-2, abs=1e-4)

    def test_origin_preserved(self, field):
        g = induced_rde_field(field)
        assert np.abs(g.eval(0.0, np.zeros(1))).max() <= 1e-8

    def test_jacobian_zero(self, path, field):
        g = induced_rde_field(field)
        u = stationary_ou(path, 1.0, t_hist=20.0)
        assert g.jacobian_zero(1.0)[0, 0] == pytest.approx(
            -1.0 + 0.3 * u, rel=2e-2)


class TestLinearCocycle:
    def test_scalar_exponent(self):
        grid = TimeGrid(-1.0, 101.0, 1e-2)
        p = generate_wiener(77, 1, grid)
        lam = sde_lyapunov(np.array([[-1.0]]), [np.array([[0.3]])], p,
                           T=100.0)
        assert lam[0] == pytest.approx(-1.0, abs=0.15)

    def test_matrix_value(self):
        grid = TimeGrid(-1.0, 3.0, 1e-3)
        p = generate_wiener(78, 1, grid)
        M = sde_linear_cocycle(np.array([[-1.0]]), [np.array([[0.3]])], p,
                               2.0, dt=1e-3)
        w = p.value(2.0) - p.value(0.0)
        assert M[0, 0] == pytest.approx(math.exp(-2.0 + 0.3 * w), rel=1e-3)


class TestPipeline:
    def test_linear_input_is_identity_level(self):
        cfg = PipelineConfig(check_times=(0.5, 1.0))
        paths = [generate_wiener(31, 1, pipeline_path_grid(cfg))]
        rep = linearize_sde(ts4(), paths, cfg)
        assert rep.passed
        assert rep.worst("composite") <= 1e-2
        assert rep.worst("rds-linearization") <= 1e-6

    def test_ts5_end_to_end(self):
        cfg = PipelineConfig()
        paths = [generate_wiener(7, 1, pipeline_path_grid(cfg))]
        rep = linearize_sde(ts5(), paths, cfg)
        assert rep.passed
        assert rep.worst("composite") <= 1e-1
        assert rep.truncation_bias == pytest.approx(math.exp(-20.0))

    def test_unstable_rejected_with_stage(self):
        cfg = PipelineConfig(spectrum_T=40.0)
        paths = [generate_wiener(9, 1, pipeline_path_grid(cfg))]
        unstable = ts4(lam=0.5)
        with pytest.raises(NotUniformlyStable) as ei:
            linearize_sde(unstable, paths, cfg)
        assert getattr(ei.value, "stage", None) == "spectrum-gate"

    def test_shallow_stage_selection(self):
        cfg = PipelineConfig(stages=("spectrum-gate", "cohomology",
                                     "induced-rde"),
                             spectrum_preservation=False)
        paths = [generate_wiener(13, 1, pipeline_path_grid(cfg))]
        rep = linearize_sde(ts5(), paths, cfg)
        assert rep.passed
        stages = {c["stage"] for c in rep.checks}
        assert "rds-linearization" not in stages
        assert rep.worst("induced-rde") <= 5e-2
