import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowsearch import envproc as ep
from shadowsearch import sim
from shadowsearch.errors import ConfigError, ContractError, IntegrityError

from oracles import disk_union_mass, spiral_arc_length_quad, trapezoid_time_oracle

T = sim.DEFAULT_TIMING


def _probe_at(points) -> sim.ProbeParams:
    return sim.ProbeParams(points=np.asarray(points, dtype=np.float64))


def _spread_points():
    lim = 9.5
    axis = np.linspace(-lim, lim, 4)
    gx, gy = np.meshgrid(axis, axis)
    return np.column_stack([gx.ravel(), gy.ravel()])


class TestProbeSimulation:
    def test_hole_exactly_at_third_point(self):
        pts = _spread_points()
        hole = ep.HolePose(*pts[2])
        rec = sim.simulate_probe(_probe_at(pts), hole)
        assert rec.success and rec.success_index == 3
        assert rec.duration == pytest.approx(T.t_setup + 3 * T.t_probe)
        probed = [p for p, _ in rec.probe_outcomes]
        assert probed == [True] * 3 + [False] * 13

    def test_all_misses_by_epsilon(self):
        pts = _spread_points()
        # nearest point is exactly clearance + 1e-6 away
        hole = ep.HolePose(pts[0][0] + 0.5 + 1e-6, pts[0][1])
        assert np.linalg.norm(pts - hole.xy, axis=1).min() >= 0.5 + 1e-6 - 1e-12
        rec = sim.simulate_probe(_probe_at(pts), hole)
        assert not rec.success and rec.success_index is None
        assert rec.duration == pytest.approx(T.t_setup + 16 * T.t_probe + T.t_fail)

    def test_success_prob_matches_disk_union_oracle(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-8, 8, size=(16, 2))
        mix = ep.sample_mixture(17, ep.MixtureSpec(count_min=3, count_max=3, eig_min=1.0, eig_max=4.0))
        est, _ = sim.success_prob_oracle(_probe_at(pts), mix, 100_000, seed=3)
        sampler_rng = np.random.default_rng(99)
        union = disk_union_mass(pts, lambda n: mix.sample(sampler_rng, n), 0.5, 100_000)
        assert abs(est - union) < 0.01

    def test_duration_strictly_increases_with_success_index(self):
        pts = _spread_points()
        d = []
        for k in (1, 5, 11):
            rec = sim.simulate_probe(_probe_at(pts), ep.HolePose(*pts[k - 1]))
            assert rec.success_index == k
            d.append(rec.duration)
        assert d[0] < d[1] < d[2]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_record_invariants_fuzz(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-10, 10, size=(16, 2))
        hole = ep.HolePose(*rng.uniform(-10, 10, size=2))
        rec = sim.simulate_probe(_probe_at(pts), hole)
        sim.validate_record(rec)

    @given(st.integers(0, 2**32 - 1), st.floats(0.51, 2.0))
    @settings(max_examples=30, deadline=None)
    def test_probe_monotone_in_clearance(self, seed, bigger):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-9, 9, size=(16, 2))
        hole = ep.HolePose(*rng.uniform(-9, 9, size=2))
        small = sim.SearchRegion(half_extent=10.0, hole_clearance=0.5)
        large = sim.SearchRegion(half_extent=10.0, hole_clearance=bigger)
        rec_small = sim.simulate_probe(_probe_at(pts), hole, region=small)
        rec_large = sim.simulate_probe(_probe_at(pts), hole, region=large)
        assert rec_large.success or not rec_small.success

    def test_purity_bit_identical(self):
        pts = _spread_points()
        hole = ep.HolePose(1.234, -5.678)
        a = sim.simulate_probe(_probe_at(pts), hole)
        b = sim.simulate_probe(_probe_at(pts), hole)
        assert a == b


class TestSpiralSimulation:
    def _params(self, **kw):
        defaults = dict(center=(0.0, 0.0), orientation=0.0, extents=(5.0, 5.0),
                        windings=3.0, velocity=20.0, acceleration=200.0)
        defaults.update(kw)
        return sim.SpiralParams(**defaults)

    def test_hole_at_center_costs_only_setup(self):
        rec = sim.simulate_spiral(self._params(), ep.HolePose(0.0, 0.0))
        assert rec.success and rec.success_index == 0.0
        assert rec.duration == pytest.approx(T.t_setup)

    def test_hole_outside_dilated_ellipse_fails(self):
        p = self._params(extents=(4.0, 2.0), orientation=0.7)
        # point beyond the clearance-dilated ellipse along the rotated minor axis
        offset = np.array([-np.sin(0.7), np.cos(0.7)]) * (2.0 + 0.5 + 0.05)
        rec = sim.simulate_spiral(p, ep.HolePose(*offset))
        assert not rec.success
        assert rec.duration == pytest.approx(
            T.t_setup + sim.trapezoid_time(sim.spiral_path(p)[1][-1], 20.0, 200.0) + T.t_fail
        )

    def test_full_traversal_time_matches_quadrature_oracle(self):
        p = self._params()
        far = ep.HolePose(9.9, 9.9)  # outside reach of a 5mm spiral
        rec = sim.simulate_spiral(p, far)
        assert not rec.success
        s_oracle = spiral_arc_length_quad(5.0, 5.0, 3.0)
        t_oracle = T.t_setup + trapezoid_time_oracle(s_oracle, 20.0, 200.0) + T.t_fail
        assert abs(rec.duration - t_oracle) / t_oracle < 0.005

    def test_success_implies_hole_in_dilated_ellipse(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b = rng.uniform(1, 9, size=2)
            phi = rng.uniform(-np.pi / 2, np.pi / 2)
            p = self._params(extents=(a, b), orientation=phi)
            hole = ep.HolePose(*rng.uniform(-10, 10, size=2))
            rec = sim.simulate_spiral(p, hole)
            if rec.success:
                d = hole.xy
                rot = np.array([[np.cos(phi), np.sin(phi)], [-np.sin(phi), np.cos(phi)]])
                local = rot @ d
                val = (local[0] / (a + 0.5)) ** 2 + (local[1] / (b + 0.5)) ** 2
                assert val <= 1.0 + 1e-9

    def test_purity_bit_identical(self):
        p = self._params(orientation=0.3)
        hole = ep.HolePose(2.0, 1.0)
        assert sim.simulate_spiral(p, hole) == sim.simulate_spiral(p, hole)


class TestOracle:
    def test_dense_grid_covers_small_region(self):
        region = sim.SearchRegion(half_extent=2.0, hole_clearance=0.5)
        axis = np.linspace(-1.05, 1.05, 4)  # spacing 0.7 < 0.5 * sqrt(2)
        gx, gy = np.meshgrid(axis, axis)
        params = _probe_at(np.column_stack([gx.ravel(), gy.ravel()]))
        mix = ep.GaussianMixture2D([1.0], [[0.2, -0.3]], [np.eye(2) * 0.09])
        prob, _ = sim.success_prob_oracle(params, mix, 20_000, seed=1, region=region)
        assert prob >= 0.99

    def test_tight_mode_at_touch_point(self):
        pts = _spread_points()
        mix = ep.GaussianMixture2D([1.0], [pts[7]], [np.eye(2) * 1e-8])
        prob, _ = sim.success_prob_oracle(_probe_at(pts), mix, 5_000, seed=2)
        assert prob == pytest.approx(1.0)

    def test_two_seeds_agree_within_3_sigma(self):
        mix = ep.sample_mixture(31, ep.MixtureSpec(eig_min=1.0, eig_max=4.0))
        params = _probe_at(_spread_points())
        n = 20_000
        p1, _ = sim.success_prob_oracle(params, mix, n, seed=10)
        p2, _ = sim.success_prob_oracle(params, mix, n, seed=11)
        p = 0.5 * (p1 + p2)
        sigma = np.sqrt(max(p * (1 - p), 1e-9) / n)
        assert abs(p1 - p2) <= 3 * np.sqrt(2) * sigma

    def test_oracle_identical_to_sequential_simulation(self):
        from shadowsearch.rng import TAG_ORACLE, make_rng

        mix = ep.sample_mixture(5, ep.MixtureSpec(eig_min=1.0, eig_max=4.0))
        params = _probe_at(_spread_points())
        rate, dur = sim.success_prob_oracle(params, mix, 500, seed=7)
        holes = mix.sample(make_rng(7, TAG_ORACLE), 500)
        recs = [sim.simulate_probe(params, ep.HolePose(*h)) for h in holes]
        assert rate == np.mean([r.success for r in recs])
        assert dur == pytest.approx(np.mean([r.duration for r in recs]), abs=1e-12)

    def test_spiral_oracle_identical_to_sequential_simulation(self):
        from shadowsearch.rng import TAG_ORACLE, make_rng

        mix = ep.sample_mixture(6, ep.MixtureSpec(eig_min=1.0, eig_max=4.0))
        p = sim.SpiralParams(center=(0.5, -0.5), orientation=0.2, extents=(6.0, 4.0),
                             windings=6.0, velocity=25.0, acceleration=300.0)
        rate, dur = sim.success_prob_oracle(p, mix, 400, seed=8)
        holes = mix.sample(make_rng(8, TAG_ORACLE), 400)
        recs = [sim.simulate_spiral(p, ep.HolePose(*h)) for h in holes]
        assert rate == np.mean([r.success for r in recs])
        assert dur == pytest.approx(np.mean([r.duration for r in recs]), abs=1e-9)


class TestCollect:
    def test_passive_mode_repeats_params(self):
        mix = ep.sample_mixture(3)
        proc = ep.stationary_process(mix, seed=4)
        x0 = _probe_at(_spread_points())
        ds = sim.collect_task_dataset(proc, sim.fixed_params_sampler(x0), 128)
        assert len(ds) == 128
        assert all(r.params == x0 for r in ds.records)

    def test_zero_count_rejected(self):
        proc = ep.stationary_process(ep.sample_mixture(3), seed=4)
        with pytest.raises(ConfigError):
            sim.collect_task_dataset(proc, sim.fixed_params_sampler(_probe_at(_spread_points())), 0)

    def test_pretraining_mode_params_uniform(self):
        proc = ep.stationary_process(ep.sample_mixture(3), seed=4)
        sampler = sim.uniform_params_sampler(sim.StrategyKind.PROBE, seed=5)
        ds = sim.collect_task_dataset(proc, sampler, 5_000)
        vecs = np.stack([r.params.to_vector() for r in ds.records])
        # KS statistic against U(-10, 10) per coordinate
        n = vecs.shape[0]
        for dim in range(vecs.shape[1]):
            u = np.sort((vecs[:, dim] + 10.0) / 20.0)
            grid = np.arange(1, n + 1) / n
            ks = np.max(np.abs(u - grid))
            assert ks < 2.0 / np.sqrt(n)

    def test_process_advances_once_per_execution(self):
        mix = ep.sample_mixture(3)
        proc = ep.drift_process(mix, (0.1, 0.0), seed=4)
        sim.collect_task_dataset(proc, sim.fixed_params_sampler(_probe_at(_spread_points())), 10)
        assert proc.timestep == 10


class TestDatasetIO:
    def _dataset(self, kind=sim.StrategyKind.PROBE, n=32):
        mix = ep.sample_mixture(9, ep.MixtureSpec(eig_min=1.0, eig_max=4.0))
        proc = ep.stationary_process(mix, seed=6)
        if kind is sim.StrategyKind.PROBE:
            sampler = sim.uniform_params_sampler(kind, seed=7)
        else:
            sampler = sim.uniform_params_sampler(kind, seed=7)
        return sim.collect_task_dataset(proc, sampler, n)

    @pytest.mark.parametrize("kind", [sim.StrategyKind.PROBE, sim.StrategyKind.SPIRAL])
    def test_roundtrip_bit_exact(self, tmp_path, kind):
        ds = self._dataset(kind)
        path = tmp_path / "task.bin"
        sim.save_dataset(ds, path)
        back = sim.load_dataset(path)
        assert back.kind == ds.kind
        assert len(back) == len(ds)
        for a, b in zip(ds.records, back.records):
            np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())
            assert a.hole == b.hole
            assert a.success == b.success
            assert a.success_index == b.success_index
            assert a.duration == b.duration
            assert a.probe_outcomes == b.probe_outcomes

    def test_bad_magic_rejected(self, tmp_path):
        ds = self._dataset()
        path = tmp_path / "task.bin"
        sim.save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[0] = ord("X")
        path.write_bytes(raw)
        with pytest.raises(IntegrityError):
            sim.load_dataset(path)

    def test_version_mismatch_rejected(self, tmp_path):
        ds = self._dataset()
        path = tmp_path / "task.bin"
        sim.save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(raw)
        with pytest.raises(IntegrityError):
            sim.load_dataset(path)

    def test_corrupt_body_rejected(self, tmp_path):
        ds = self._dataset()
        path = tmp_path / "task.bin"
        sim.save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[-3] ^= 0xFF
        path.write_bytes(raw)
        with pytest.raises(IntegrityError):
            sim.load_dataset(path)

    def test_csv_export_is_lossless(self, tmp_path):
        ds = self._dataset(n=8)
        path = tmp_path / "task.csv"
        sim.export_dataset_csv(ds, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 9
        header = lines[0].split(",")
        row = lines[1].split(",")
        vec = ds.records[0].params.to_vector()
        for i in range(32):
            assert float(row[i]) == vec[i]
        assert float(row[header.index("duration")]) == ds.records[0].duration


class TestMeter:
    def test_counts_only_metered_calls(self):
        pts = _probe_at(_spread_points())
        hole = ep.HolePose(0.0, 0.0)
        meter = sim.ExecutionMeter()
        sim.simulate_probe(pts, hole)  # not metered
        with sim.metered(meter):
            for _ in range(5):
                sim.simulate_probe(pts, hole)
        sim.simulate_probe(pts, hole)  # not metered
        assert meter.count == 5

    def test_nested_meters_charge_innermost(self):
        pts = _probe_at(_spread_points())
        hole = ep.HolePose(0.0, 0.0)
        outer, inner = sim.ExecutionMeter(), sim.ExecutionMeter()
        with sim.metered(outer):
            sim.simulate_probe(pts, hole)
            with sim.metered(inner):
                sim.simulate_probe(pts, hole)
        assert outer.count == 1 and inner.count == 1


class TestParams:
    def test_probe_needs_16_points(self):
        with pytest.raises(ContractError):
            sim.ProbeParams(points=np.zeros((15, 2)))

    def test_spiral_positivity(self):
        with pytest.raises(ContractError):
            sim.SpiralParams(center=(0, 0), orientation=0, extents=(0.0, 1.0),
                             windings=1, velocity=1, acceleration=1)

    def test_vector_roundtrip(self):
        p = sim.SpiralParams(center=(1, 2), orientation=0.3, extents=(4, 5),
                             windings=6, velocity=7, acceleration=8)
        assert sim.SpiralParams.from_vector(p.to_vector()) == p
        q = _probe_at(_spread_points())
        np.testing.assert_array_equal(sim.ProbeParams.from_vector(q.to_vector()).points, q.points)

    def test_center_outside_region_rejected_at_validation(self):
        p = sim.SpiralParams(center=(11.0, 0.0), orientation=0, extents=(1, 1),
                             windings=1, velocity=1, acceleration=1)
        with pytest.raises(ContractError):
            p.validate()
