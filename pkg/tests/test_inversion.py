import numpy as np
import pytest

from shadowsearch import adgraph as ag
from shadowsearch import envproc as ep
from shadowsearch import inversion as inv
from shadowsearch import shadow as sh
from shadowsearch import sim
from shadowsearch import trainers as tr
from shadowsearch.baselines import baseline_fixed
from shadowsearch.errors import ConfigError, ContractError

from oracles import finite_diff_grad

PROBE = sim.StrategyKind.PROBE


def _model(kind=PROBE, seed=0):
    return sh.ShadowModel.initialize(kind, seed=seed)


class TestRegInit:
    def test_zero_at_reference(self):
        x0 = np.linspace(-1, 1, 32)
        t = ag.leaf(x0[None, :].copy())
        assert inv.reg_init(t, x0).item() == 0.0

    def test_full_range_offset_is_two(self):
        # one normalized coordinate moved across the full [-1, 1] range
        x0 = np.zeros(32)
        x0[5] = -1.0
        x = x0.copy()
        x[5] = 1.0
        assert inv.reg_init(ag.leaf(x[None, :]), x0).item() == pytest.approx(2.0)

    def test_gradient_matches_fd_away_from_kinks(self):
        rng = np.random.default_rng(0)
        x0 = rng.uniform(-1, 1, 32)
        x = x0 + rng.choice([-1, 1], 32) * rng.uniform(0.1, 0.5, 32)

        t = ag.leaf(x[None, :].copy())
        ag.backward(inv.reg_init(t, x0))
        numeric = finite_diff_grad(lambda v: inv.reg_init(ag.leaf(v[None, :]), x0).item(), x)
        np.testing.assert_allclose(t.grad.ravel(), numeric, atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            inv.reg_init(ag.leaf(np.zeros((1, 32))), np.zeros(8))


class TestRegCdist:
    def test_well_separated_grid_is_free(self):
        axis = np.arange(4) * 5.0
        gx, gy = np.meshgrid(axis, axis)
        pts = np.column_stack([gx.ravel(), gy.ravel()]).reshape(1, 32)
        val = inv.reg_cdist(ag.leaf(pts), d_target=2.0).item()
        assert val == 0.0  # hinge inactive, smooth-min far above target

    def test_coincident_points_penalized(self):
        pts = np.zeros((1, 32))
        pts[0, 2:4] = [3.0, 3.0]
        pts[0, 4:6] = [3.0, 3.0]  # points 1 and 2 coincide
        val = inv.reg_cdist(ag.leaf(pts), d_target=2.0).item()
        assert val >= 2.0 - inv.SMOOTH_MIN_TAU * np.log(120)

    def test_descent_step_separates_closest_pair(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(scale=0.6, size=(16, 2)).reshape(1, 32)
        t = ag.leaf(pts.copy())
        val = inv.reg_cdist(t, d_target=2.0)
        ag.backward(ag.tsum(val))

        def smooth_min_pairwise(flat):
            d = ag.pair_dists(ag.constant(flat)).data
            tau = inv.SMOOTH_MIN_TAU
            m = d.min()
            return float(m - tau * np.log(np.exp(-(d - m) / tau).sum()))

        before = smooth_min_pairwise(pts)
        after = smooth_min_pairwise(pts - 0.05 * t.grad)
        assert after > before

    def test_spiral_rows_rejected(self):
        with pytest.raises(ContractError):
            inv.reg_cdist(ag.leaf(np.zeros((1, 8))), d_target=1.0)


class TestObjective:
    def test_validation(self):
        with pytest.raises(ConfigError):
            inv.Objective(alpha_cycle=0.0, alpha_fail=0.0)
        with pytest.raises(ConfigError):
            inv.Objective(alpha_fail=-1.0)
        with pytest.raises(ConfigError):
            inv.Objective(lambda_init=-0.1)

    def test_inversion_config_validation(self):
        with pytest.raises(ConfigError):
            inv.InversionConfig(steps=-1)
        with pytest.raises(ConfigError):
            inv.InversionConfig(restarts=0)


class TestInvert:
    def test_zero_steps_returns_x_init(self):
        model = _model()
        x0 = baseline_fixed(PROBE)
        res = inv.invert(model, x0, inv.Objective(alpha_fail=1.0, alpha_cycle=0.0),
                         inv.InversionConfig(steps=0, restarts=4, seed=1))
        np.testing.assert_array_equal(res.params.to_vector(), x0.to_vector())
        stats = sh.predict(model, x0)
        assert res.predicted_fail == pytest.approx(sh.derived_fail(stats).item())
        assert len(res.loss_trace) == 1

    def test_dominating_init_regularizer_pins_to_x0(self):
        model = _model()
        x0 = baseline_fixed(PROBE)
        obj = inv.Objective(alpha_fail=1.0, alpha_cycle=0.0,
                            regularizer=inv.Regularizer.INIT,
                            lambda_init=1e6, x0=x0.to_vector())
        res = inv.invert(model, x0, obj, inv.InversionConfig(steps=60, restarts=4, seed=2))
        np.testing.assert_allclose(res.params.to_vector(), x0.to_vector(), atol=1e-3)

    def test_kind_mismatch_rejected(self):
        model = _model()
        spiral = sim.SpiralParams(center=(0, 0), orientation=0.0, extents=(3, 3),
                                  windings=2, velocity=10, acceleration=100)
        with pytest.raises(ContractError):
            inv.invert(model, spiral, inv.Objective())

    def test_cdist_on_spiral_rejected(self):
        model = _model(sim.StrategyKind.SPIRAL)
        x0 = baseline_fixed(sim.StrategyKind.SPIRAL)
        with pytest.raises(ContractError):
            inv.invert(model, x0,
                       inv.Objective(regularizer=inv.Regularizer.CDIST, alpha_fail=1.0))

    def test_feasibility_and_selection_invariants(self):
        model = _model(seed=3)
        x0 = baseline_fixed(PROBE)
        obj = inv.Objective(alpha_fail=1.0, alpha_cycle=0.01)
        res = inv.invert(model, x0, obj, inv.InversionConfig(steps=80, restarts=6, seed=3))
        bounds = sim.default_bounds(PROBE)
        assert bounds.contains(res.params.to_vector(), atol=0.0)
        # non-worsening vs the initial parameterization
        stats0 = sh.predict(model, x0)
        loss0 = sh.derived_fail(stats0).item() + 0.01 * sh.derived_cycle(stats0).item()
        loss_opt = res.predicted_fail + 0.01 * res.predicted_cycle
        assert loss_opt <= loss0 + 1e-9
        assert np.all(np.isfinite(res.loss_trace))

    def test_seed_determinism(self):
        model = _model(seed=4)
        x0 = baseline_fixed(PROBE)
        obj = inv.Objective(alpha_fail=1.0, alpha_cycle=0.0)
        cfg = inv.InversionConfig(steps=30, restarts=3, seed=9)
        a = inv.invert(model, x0, obj, cfg)
        b = inv.invert(model, x0, obj, cfg)
        np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())
        np.testing.assert_array_equal(a.loss_trace, b.loss_trace)

    def test_result_json_schema(self):
        import json

        model = _model()
        res = inv.invert(model, baseline_fixed(PROBE),
                         inv.Objective(alpha_fail=1.0, alpha_cycle=0.0),
                         inv.InversionConfig(steps=5, restarts=2, seed=0))
        d = json.loads(res.to_json())
        assert set(d) == {"params", "kind", "loss_trace", "restart_index",
                          "predicted_fail", "predicted_cycle"}

    def test_recovers_single_tight_mode(self):
        # train on active (uniform-params) data of one tight-mode environment,
        # then inversion should pack touch points onto the mode
        target = np.array([3.0, -2.0])
        mix = ep.GaussianMixture2D([1.0], [target], [np.eye(2) * 0.04])
        proc = ep.stationary_process(mix, seed=5)
        sampler = sim.uniform_params_sampler(PROBE, seed=6)
        records = sim.collect_task_dataset(proc, sampler, 3000).records
        model = _model(seed=7)
        rng = np.random.default_rng(0)
        x, y, aux = sh.record_arrays(model, records)
        opt = ag.Adam(model.weights, lr=1e-3)
        for _ in range(40):
            idx = rng.permutation(len(records))
            for s in range(0, len(records), 128):
                b = idx[s : s + 128]
                loss = sh.loss_from_arrays(model, x[b], y[b], aux[b])
                opt.zero_grad()
                ag.backward(loss)
                opt.step()
        x0 = baseline_fixed(PROBE)
        obj = inv.Objective(alpha_fail=1.0, alpha_cycle=0.0,
                            regularizer=inv.Regularizer.CDIST, x0=x0.to_vector())
        res = inv.invert(model, x0, obj, inv.InversionConfig(steps=400, restarts=8, seed=8))
        dists = np.linalg.norm(res.params.points - target, axis=1)
        assert dists.min() < 1.0
        success, _ = sim.success_prob_oracle(res.params, mix, 10_000, seed=9)
        assert success > 0.9


class TestParetoReport:
    def test_single_weighting_singleton(self):
        model = _model()
        report = inv.pareto_report(model, [(0.01, 1.0)], baseline_fixed(PROBE),
                                   cfg=inv.InversionConfig(steps=10, restarts=2, seed=0))
        assert len(report) == 1

    def test_empty_grid_rejected(self):
        with pytest.raises(ContractError):
            inv.pareto_report(_model(), [], baseline_fixed(PROBE))

    def test_endpoint_dominance_and_no_dominated_entries(self):
        model = _model(seed=11)
        weightings = [(0.0 + 1e-9, 1.0), (0.05, 0.5), (0.2, 1e-9)]
        report = inv.pareto_report(model, weightings, baseline_fixed(PROBE),
                                   cfg=inv.InversionConfig(steps=60, restarts=4, seed=1))
        assert report
        fails = [r.predicted_fail for _, r in report]
        assert fails == sorted(fails)
        # fail-weighted endpoint achieves the lowest predicted fail of the set
        by_weight = {w: r for w, r in report}
        if (1e-9 + 0.0, 1.0) in by_weight and (0.2, 1e-9) in by_weight:
            assert by_weight[(0.0 + 1e-9, 1.0)].predicted_fail <= by_weight[(0.2, 1e-9)].predicted_fail
        for i, (_, a) in enumerate(report):
            for j, (_, b) in enumerate(report):
                if i == j:
                    continue
                dominates = (
                    b.predicted_fail <= a.predicted_fail
                    and b.predicted_cycle <= a.predicted_cycle
                    and (b.predicted_fail < a.predicted_fail or b.predicted_cycle < a.predicted_cycle)
                )
                assert not dominates
