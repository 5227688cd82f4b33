"""Tests for the trajectory alternative model and the joint Gibbs sampler."""

import numpy as np
import pytest
from scipy import stats

from arscreen.ar_core import ArParams, ObservedSeries, SeriesPanel, ar1_loglik
from arscreen.errors import DomainError, InvalidInputError, NumericalError
from arscreen.mcmc import stream
from arscreen.parametric import ParametricPrior
from arscreen.simulation import simulate_ar1
from arscreen.trajectory import (
    FLAT,
    GP,
    NULL,
    GpKernelParams,
    ModelConfig,
    TrajectoryAtom,
    _assignment_scores,
    _flat_level_posterior,
    component_loglik,
    complete_data_loglik,
    default_hyperparameters,
    gibbs_sweep_joint,
    gp_atom_conditional,
    gp_covariance,
    init_fdp_state,
    merge_inclusion,
    prepare_gp_workspace,
    run_chain,
    sample_trajectory_atom,
)
from arscreen.ar_core import panel_groups
from oracles import (
    conjugate_level_posterior,
    dense_ar1_cov,
    dense_ar1_loglik,
    dense_gp_conditional,
)


def _panel(n_units, length, seed, shift=None, n_shift=0, params=ArParams(0.4, 0.3)):
    times = np.arange(length, dtype=np.int64)
    series = []
    for i in range(n_units):
        y = simulate_ar1(params, length, stream(seed, "panel-unit", i))
        if shift is not None and i < n_shift:
            y = y + shift
        series.append(ObservedSeries(f"u{i:03d}", times, y))
    return SeriesPanel(tuple(series))


SMALL_CONFIG = ModelConfig(
    kernel=GpKernelParams(1.25, 13.0),
    base=ParametricPrior(),
    resid_concentration=1.0,
    traj_concentration=1.5,
    trunc_resid=10,
    trunc_gp=12,
    trunc_flat=8,
)


class TestKernel:
    def test_lag_thirteen_frozen_value(self):
        cov = gp_covariance(GpKernelParams(1.25, 13.0), np.arange(14))
        assert cov[0, 13] == pytest.approx(1.25 * np.exp(-0.5), rel=1e-12)

    def test_diagonal_equals_variance(self):
        cov = gp_covariance(GpKernelParams(2.5, 4.0), np.arange(9))
        assert np.allclose(np.diag(cov), 2.5)

    @pytest.mark.parametrize("variance,scale", [(0.5, 2.0), (1.25, 13.0), (4.0, 30.0)])
    def test_positive_definite_after_jitter(self, variance, scale):
        ws = prepare_gp_workspace(GpKernelParams(variance, scale), np.arange(40))
        assert np.all(np.diag(ws.chol) > 0)
        assert np.allclose(ws.chol @ ws.chol.T, ws.cov, atol=1e-12 * variance)
        assert np.allclose(np.diag(ws.cov), variance * (1.0 + ws.jitter))

    def test_entry_formula(self):
        k = GpKernelParams(0.7, 5.0)
        t = np.array([0, 3, 11])
        cov = gp_covariance(k, t)
        for i in range(3):
            for j in range(3):
                expect = 0.7 * np.exp(-0.5 * ((t[i] - t[j]) / 5.0) ** 2)
                assert cov[i, j] == pytest.approx(expect, rel=1e-14)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            GpKernelParams(-1.0, 13.0)
        with pytest.raises(DomainError):
            GpKernelParams(1.25, 0.0)
        with pytest.raises(InvalidInputError):
            gp_covariance(GpKernelParams(), np.array([3, 1, 2]))


class TestGpSampling:
    def test_path_moments(self):
        k = GpKernelParams(1.25, 13.0)
        grid = np.arange(20)
        ws = prepare_gp_workspace(k, grid)
        rng = stream(11, "gp-moments")
        draws = np.array([sample_trajectory_atom(k, grid, rng, ws).path for _ in range(10000)])
        se_mean = np.sqrt(1.25 / 10000)
        assert np.all(np.abs(draws.mean(axis=0)) < 4 * se_mean)
        assert np.allclose(draws.var(axis=0), 1.25, rtol=0.05)
        corr = np.corrcoef(draws[:, 0], draws[:, 13])[0, 1]
        assert corr == pytest.approx(np.exp(-0.5), abs=0.02)

    def test_atom_validation(self):
        with pytest.raises(InvalidInputError):
            TrajectoryAtom("flat")
        with pytest.raises(InvalidInputError):
            TrajectoryAtom("gp", path=np.zeros(3), grid=np.arange(4))
        with pytest.raises(InvalidInputError):
            TrajectoryAtom("spline", level=1.0)


class TestComponentLoglik:
    def test_null_matches_ar1(self):
        s = ObservedSeries("a", np.arange(12), simulate_ar1(ArParams(0.6, 0.5), 12, stream(1, "x")))
        th = ArParams(0.6, 0.5)
        assert component_loglik(s, None, th) == ar1_loglik(s, th)

    def test_flat_matches_shift(self):
        s = ObservedSeries("a", np.arange(12), simulate_ar1(ArParams(0.2, 1.0), 12, stream(2, "x")))
        th = ArParams(0.2, 1.0)
        atom = TrajectoryAtom("flat", level=1.7)
        shifted = ObservedSeries("a", s.times, s.values - 1.7)
        assert component_loglik(s, atom, th) == ar1_loglik(shifted, th)

    @pytest.mark.parametrize("case", range(6))
    def test_gp_matches_dense_oracle(self, case):
        rng = stream(40 + case, "gp-ll")
        grid = np.arange(25, dtype=np.int64)
        k = GpKernelParams(1.25, 13.0)
        ws = prepare_gp_workspace(k, grid)
        atom = sample_trajectory_atom(k, grid, rng, ws)
        pos = np.sort(rng.choice(25, size=10, replace=False))
        phi, v = rng.uniform(-0.8, 0.8), rng.uniform(0.2, 2.0)
        y = rng.normal(size=10)
        s = ObservedSeries("a", grid[pos], y)
        got = component_loglik(s, atom, ArParams(phi, v))
        expect = dense_ar1_loglik(y - atom.path[pos], phi, v, grid[pos])
        assert got == pytest.approx(expect, rel=1e-9, abs=1e-9)

    def test_times_off_grid_rejected(self):
        atom = TrajectoryAtom("gp", path=np.zeros(5), grid=np.arange(0, 10, 2))
        s = ObservedSeries("a", np.array([1, 3]), np.zeros(2))
        with pytest.raises(InvalidInputError, match="'a'"):
            component_loglik(s, atom, ArParams(0.0, 1.0))


class TestKrigingUpdate:
    @pytest.mark.parametrize("case", range(5))
    def test_matches_dense_conditioning(self, case):
        rng = stream(70 + case, "krige")
        grid = np.arange(16, dtype=np.int64)
        ws = prepare_gp_workspace(GpKernelParams(1.25, 13.0), grid)
        observations, oracle_obs = [], []
        for b in range(case % 3 + 1):
            m = int(rng.integers(1, 4))
            t_len = int(rng.integers(3, 12))
            pos = np.sort(rng.choice(16, size=t_len, replace=False))
            params = ArParams(float(rng.uniform(-0.7, 0.9)), float(rng.uniform(0.1, 1.5)))
            vals = rng.normal(size=(m, t_len))
            observations.append((pos, vals, params))
            noise = dense_ar1_cov(params.phi, params.v, grid[pos])
            for row in vals:
                oracle_obs.append((pos, row, noise))
        mean, cov = gp_atom_conditional(ws, observations)
        mean_o, cov_o = dense_gp_conditional(ws.cov, oracle_obs)
        assert np.allclose(mean, mean_o, atol=1e-8)
        assert np.allclose(cov, cov_o, atol=1e-8)

    def test_no_observations_recovers_prior(self):
        ws = prepare_gp_workspace(GpKernelParams(1.25, 13.0), np.arange(8))
        mean, cov = gp_atom_conditional(ws, [])
        assert np.allclose(mean, 0.0)
        assert np.allclose(cov, ws.cov, atol=1e-10)

    def test_tight_noise_pins_prior_draw(self):
        grid = np.arange(10, dtype=np.int64)
        ws = prepare_gp_workspace(GpKernelParams(1.25, 13.0), grid)
        target = ws.chol @ stream(77, "pin").standard_normal(10)
        obs = [(np.arange(10), np.tile(target, (40, 1)), ArParams(0.0, 1e-4))]
        mean, cov = gp_atom_conditional(ws, obs)
        assert np.allclose(mean, target, atol=1e-2)
        assert np.all(np.diag(cov) < 1e-4)


class TestFlatLevelPosterior:
    @pytest.mark.parametrize("case", range(4))
    def test_matches_oracle(self, case):
        rng = stream(90 + case, "level")
        prior_var = float(rng.uniform(0.3, 3.0))
        s11 = rng.uniform(0.0, 20.0, size=6)
        q_y1 = rng.normal(size=6) * 5.0
        mean, var = _flat_level_posterior(prior_var, s11, q_y1)
        for l in range(6):
            m_o, v_o = conjugate_level_posterior(prior_var, float(q_y1[l]), float(s11[l]))
            assert mean[l] == pytest.approx(m_o, rel=1e-12)
            assert var[l] == pytest.approx(v_o, rel=1e-12)

    def test_empty_atom_is_prior(self):
        mean, var = _flat_level_posterior(1.25, np.zeros(3), np.zeros(3))
        assert np.allclose(mean, 0.0)
        assert np.allclose(var, 1.25)


class TestAssignmentScores:
    def test_scores_match_scalar_logliks(self):
        panel = _panel(6, 15, seed=5, shift=2.0, n_shift=2)
        grid = np.arange(15, dtype=np.int64)
        state = init_fdp_state(6, SMALL_CONFIG, grid, rng=stream(8, "st"))
        groups = panel_groups(panel, grid=grid)
        scores, q_y1_u, s11_u = _assignment_scores(state, groups, likelihood_off=False)
        log_cp = np.log(state.component_probs)
        for i, s in enumerate(panel):
            th = state.residual.stick.atom(state.residual.assignments[i])
            assert scores[i, 0] == pytest.approx(log_cp[NULL] + component_loglik(s, None, th),
                                                 rel=1e-9, abs=1e-9)
            for l in range(state.flat_set.truncation):
                atom = state.trajectory_atom("flat", l)
                expect = log_cp[FLAT] + np.log(atom.weight) + component_loglik(s, atom, th)
                assert scores[i, 1 + l] == pytest.approx(expect, rel=1e-9, abs=1e-9)
            for l in range(state.gp_set.truncation):
                atom = state.trajectory_atom("gp", l)
                expect = log_cp[GP] + np.log(atom.weight) + component_loglik(s, atom, th)
                col = 1 + state.flat_set.truncation + l
                assert scores[i, col] == pytest.approx(expect, rel=1e-9, abs=1e-9)

    def test_zero_series_prefers_null_at_uniform_weights(self):
        times = np.arange(30, dtype=np.int64)
        panel = SeriesPanel((ObservedSeries("z", times, np.zeros(30)),))
        state = init_fdp_state(1, SMALL_CONFIG, times, rng=stream(9, "st"))
        state.component_probs = np.ones(3) / 3.0
        lf, lg = state.flat_set.truncation, state.gp_set.truncation
        state.flat_set.weights = np.ones(lf) / lf
        state.gp_set.weights = np.ones(lg) / lg
        groups = panel_groups(panel, grid=times)
        scores, _, _ = _assignment_scores(state, groups, likelihood_off=False)
        flat_best = scores[0, 1:1 + lf] - np.log(1.0 / lf)
        gp_best = scores[0, 1 + lf:] - np.log(1.0 / lg)
        assert scores[0, 0] >= flat_best.max()
        assert scores[0, 0] >= gp_best.max()

    def test_overflowing_unit_is_named(self):
        times = np.arange(8, dtype=np.int64)
        panel = SeriesPanel((
            ObservedSeries("ok", times, np.zeros(8)),
            ObservedSeries("huge", times, np.full(8, 1e300)),
        ))
        state = init_fdp_state(2, SMALL_CONFIG, times, rng=stream(10, "st"))
        with pytest.raises(NumericalError, match="stage \\(a\\).*'huge'"):
            gibbs_sweep_joint(state, panel, stream(10, "sw"))


class TestPriorInvariance:
    def test_sweeps_preserve_prior(self):
        n_units, g_len, n_sweeps, thin = 3, 6, 4000, 4
        grid = np.arange(g_len, dtype=np.int64)
        times = grid
        panel = SeriesPanel(tuple(
            ObservedSeries(f"u{i}", times, np.zeros(g_len)) for i in range(n_units)))
        groups = panel_groups(panel, grid=grid)
        ws = prepare_gp_workspace(SMALL_CONFIG.kernel, grid)
        rng = stream(123, "prior-inv")
        state = init_fdp_state(n_units, SMALL_CONFIG, grid, rng=rng, workspace=ws)
        cp0, cp1, cp2, stick_f, stick_g, level0, path00 = [], [], [], [], [], [], []
        for t in range(n_sweeps):
            gibbs_sweep_joint(state, groups, rng, likelihood_off=True, workspace=ws)
            assert abs(state.flat_set.weights.sum() - 1.0) < 1e-12
            assert abs(state.gp_set.weights.sum() - 1.0) < 1e-12
            if t % thin == 0:
                cp0.append(state.component_probs[0])
                cp1.append(state.component_probs[1])
                cp2.append(state.component_probs[2])
                stick_f.append(state.flat_set.sticks[0])
                stick_g.append(state.gp_set.sticks[0])
                level0.append(state.flat_set.levels[0])
                path00.append(state.gp_set.paths[0, 0])
        beta12 = stats.beta(1, 2)
        for coord in (cp0, cp1, cp2):
            assert stats.kstest(coord, beta12.cdf).pvalue > 0.01
        beta_nu = stats.beta(1, SMALL_CONFIG.traj_concentration)
        assert stats.kstest(stick_f, beta_nu.cdf).pvalue > 0.01
        assert stats.kstest(stick_g, beta_nu.cdf).pvalue > 0.01
        k1 = SMALL_CONFIG.kernel.variance
        assert stats.kstest(level0, stats.norm(0, np.sqrt(k1)).cdf).pvalue > 0.01
        sd_path = np.sqrt(ws.cov[0, 0])
        assert stats.kstest(path00, stats.norm(0, sd_path).cdf).pvalue > 0.01


class TestSweepMechanics:
    def test_relabeling_gp_atoms_is_invariant(self):
        panel = _panel(8, 12, seed=21, shift=2.0, n_shift=3)
        grid = np.arange(12, dtype=np.int64)
        groups = panel_groups(panel, grid=grid)
        state = init_fdp_state(8, SMALL_CONFIG, grid, rng=stream(22, "st"))
        base = complete_data_loglik(state, groups)
        perm = np.roll(np.arange(state.gp_set.truncation), 3)
        lookup = np.argsort(perm)
        state.gp_set.paths = state.gp_set.paths[perm]
        state.gp_set.weights = state.gp_set.weights[perm]
        is_gp = state.unit_component == GP
        state.unit_atom[is_gp] = lookup[state.unit_atom[is_gp]]
        assert complete_data_loglik(state, groups) == pytest.approx(base, rel=1e-12)

    def test_frozen_atoms_do_not_move(self):
        panel = _panel(10, 12, seed=31, shift=2.5, n_shift=4)
        grid = np.arange(12, dtype=np.int64)
        groups = panel_groups(panel, grid=grid)
        state = init_fdp_state(10, SMALL_CONFIG, grid, rng=stream(32, "st"))
        state.flat_set.n_frozen = 1
        state.gp_set.n_frozen = 2
        level0 = float(state.flat_set.levels[0])
        w_f0 = float(state.flat_set.weights[0])
        paths_head = state.gp_set.paths[:2].copy()
        w_g = state.gp_set.weights[:2].copy()
        rng = stream(33, "sw")
        for _ in range(40):
            gibbs_sweep_joint(state, groups, rng)
            assert state.flat_set.levels[0] == level0
            assert state.flat_set.weights[0] == w_f0
            assert np.array_equal(state.gp_set.paths[:2], paths_head)
            assert np.array_equal(state.gp_set.weights[:2], w_g)
            assert state.flat_set.weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert state.gp_set.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_sweep_determinism(self):
        panel = _panel(6, 10, seed=41)
        grid = np.arange(10, dtype=np.int64)
        states = []
        for _ in range(2):
            state = init_fdp_state(6, SMALL_CONFIG, grid, rng=stream(42, "st"))
            rng = stream(43, "sw")
            for _ in range(15):
                gibbs_sweep_joint(state, panel, rng)
            states.append(state)
        assert np.array_equal(states[0].unit_component, states[1].unit_component)
        assert np.array_equal(states[0].gp_set.paths, states[1].gp_set.paths)
        assert np.array_equal(states[0].residual.stick.phi, states[1].residual.stick.phi)


class TestRunChain:
    def test_deterministic_and_shapes(self):
        panel = _panel(10, 15, seed=51, shift=3.0, n_shift=3)
        out1 = run_chain(panel, SMALL_CONFIG, n_burn=20, n_keep=30, seed=5)
        out2 = run_chain(panel, SMALL_CONFIG, n_burn=20, n_keep=30, seed=5)
        assert np.array_equal(out1.inclusion, out2.inclusion)
        assert np.array_equal(out1.logliks, out2.logliks)
        assert out1.best_sweep == out2.best_sweep
        assert out1.unit_ids == panel.unit_ids
        assert out1.band_samples.dtype == np.float32
        assert out1.band_samples.shape == (3, 10, 15)
        assert out1.logliks.size == 30

    def test_best_sweep_is_argmax_regardless_of_stride(self):
        panel = _panel(8, 12, seed=61, shift=2.0, n_shift=2)
        out_a = run_chain(panel, SMALL_CONFIG, n_burn=15, n_keep=40, seed=6,
                          checkpoint_stride=1)
        out_b = run_chain(panel, SMALL_CONFIG, n_burn=15, n_keep=40, seed=6,
                          checkpoint_stride=13)
        assert out_a.best_sweep == int(np.argmax(out_a.logliks))
        assert out_b.best_sweep == out_a.best_sweep
        assert np.array_equal(out_a.logliks, out_b.logliks)
        assert np.array_equal(out_a.inclusion, out_b.inclusion)

    def test_single_kept_sweep_gives_binary_inclusion(self):
        panel = _panel(6, 10, seed=71)
        out = run_chain(panel, SMALL_CONFIG, n_burn=5, n_keep=1, seed=7)
        assert set(np.unique(out.inclusion)).issubset({0.0, 1.0})

    def test_signal_separation_and_restart_agreement(self):
        panel = _panel(40, 30, seed=81, shift=3.0, n_shift=8)
        cfg = default_hyperparameters(40)
        cfg = ModelConfig(kernel=cfg.kernel, base=cfg.base,
                          resid_concentration=cfg.resid_concentration,
                          traj_concentration=cfg.traj_concentration,
                          trunc_resid=20, trunc_gp=25, trunc_flat=15)
        out1 = run_chain(panel, cfg, n_burn=400, n_keep=2000, seed=1, collect_bands=False)
        out2 = run_chain(panel, cfg, n_burn=400, n_keep=2000, seed=2, collect_bands=False)
        assert np.all(out1.inclusion[:8] > 0.8)
        assert np.median(out1.inclusion[8:]) < 0.5
        agree = np.abs(out1.inclusion - out2.inclusion) < 0.1
        assert agree.mean() >= 0.95
        pooled = merge_inclusion([out1, out2])
        assert np.allclose(pooled, (out1.inclusion + out2.inclusion) / 2.0)

    def test_flagging_threshold(self):
        panel = _panel(5, 10, seed=91)
        out = run_chain(panel, SMALL_CONFIG, n_burn=5, n_keep=10, seed=9)
        flags = out.flagged(0.5)
        assert all(f in panel.unit_ids for f in flags)
        with pytest.raises(DomainError):
            out.flagged(0.0)

    def test_empty_panel_rejected(self):
        with pytest.raises(InvalidInputError):
            run_chain(SeriesPanel(()), SMALL_CONFIG, n_burn=1, n_keep=1, seed=0)

    def test_merge_requires_matching_panels(self):
        p1 = _panel(4, 8, seed=101)
        p2 = _panel(5, 8, seed=102)
        o1 = run_chain(p1, SMALL_CONFIG, n_burn=2, n_keep=3, seed=1)
        o2 = run_chain(p2, SMALL_CONFIG, n_burn=2, n_keep=3, seed=1)
        with pytest.raises(InvalidInputError):
            merge_inclusion([o1, o2])


class TestDefaults:
    def test_elicited_concentrations(self):
        cfg = default_hyperparameters(5498)
        assert cfg.resid_concentration == pytest.approx(10.0 / np.log(5498), rel=1e-12)
        assert cfg.resid_concentration == pytest.approx(1.1611516283595347, rel=1e-10)
        assert cfg.traj_concentration == pytest.approx(15.0 / np.log(5498), rel=1e-12)
        n_e10 = int(round(np.exp(10)))
        assert default_hyperparameters(n_e10).resid_concentration == pytest.approx(1.0, abs=1e-4)

    def test_kernel_defaults(self):
        cfg = default_hyperparameters(100)
        assert cfg.kernel.variance == 1.25
        assert cfg.kernel.length_scale == 13.0
        assert cfg.trunc_resid == 60 and cfg.trunc_gp == 60 and cfg.trunc_flat == 30

    def test_tiny_panel_rejected(self):
        with pytest.raises(DomainError):
            default_hyperparameters(1)
