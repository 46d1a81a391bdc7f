import json

import numpy as np
import pytest

from shadowsearch import envproc as ep
from shadowsearch.errors import ConfigError, ContractError

from oracles import direct_mixture_log_density


class TestGaussianMixture:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ContractError):
            ep.GaussianMixture2D([0.5, 0.4], [[0, 0], [1, 1]], [np.eye(2)] * 2)

    def test_negative_weight_rejected(self):
        with pytest.raises(ContractError):
            ep.GaussianMixture2D([1.5, -0.5], [[0, 0], [1, 1]], [np.eye(2)] * 2)

    def test_non_spd_covariance_rejected(self):
        with pytest.raises(ContractError):
            ep.GaussianMixture2D([1.0], [[0, 0]], [[[1.0, 2.0], [2.0, 1.0]]])

    def test_needs_a_component(self):
        with pytest.raises(ContractError):
            ep.GaussianMixture2D([], np.zeros((0, 2)), np.zeros((0, 2, 2)))


class TestSampleMixture:
    def test_seeded_six_component_mixture_inside_region(self):
        mix = ep.sample_mixture(7, ep.MixtureSpec(count_min=6, count_max=6, mean_bound=10.0))
        assert mix.n_components == 6
        assert np.abs(mix.means).max() <= 10.0
        assert abs(mix.weights.sum() - 1.0) < 1e-9

    def test_degenerate_bounds_give_standard_normal_at_origin(self):
        spec = ep.MixtureSpec(count_min=1, count_max=1, mean_bound=0.0, eig_min=1.0, eig_max=1.0)
        mix = ep.sample_mixture(3, spec)
        assert mix.n_components == 1
        np.testing.assert_allclose(mix.means[0], [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(mix.covariances[0], np.eye(2), atol=1e-12)

    def test_same_seed_bit_identical(self):
        a = ep.sample_mixture(42)
        b = ep.sample_mixture(42)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.covariances, b.covariances)

    def test_invalid_bounds_raise(self):
        with pytest.raises(ConfigError):
            ep.sample_mixture(0, ep.MixtureSpec(count_min=3, count_max=2))
        with pytest.raises(ConfigError):
            ep.sample_mixture(0, ep.MixtureSpec(eig_min=2.0, eig_max=1.0))


class TestSampleHole:
    def test_vanishing_variance_concentrates_at_mean(self):
        mix = ep.GaussianMixture2D([1.0], [[2.0, 3.0]], [np.eye(2) * 1e-12])
        proc = ep.stationary_process(mix, seed=1)
        h = proc.sample_hole()
        assert abs(h.x - 2.0) < 1e-3 and abs(h.y - 3.0) < 1e-3

    def test_law_of_large_numbers_moments(self):
        mix = ep.GaussianMixture2D([1.0], [[1.0, 1.0]], [np.diag([4.0, 1.0])])
        proc = ep.stationary_process(mix, seed=2)
        pts = proc.sample_holes(100_000)
        np.testing.assert_allclose(pts.mean(axis=0), [1.0, 1.0], atol=0.05)
        var = pts.var(axis=0)
        assert abs(var[0] - 4.0) / 4.0 < 0.05
        assert abs(var[1] - 1.0) / 1.0 < 0.05

    def test_component_split_is_binomial(self):
        mix = ep.GaussianMixture2D(
            [0.5, 0.5], [[-5.0, 0.0], [5.0, 0.0]], [np.eye(2) * 1e-9] * 2
        )
        proc = ep.stationary_process(mix, seed=3)
        pts = proc.sample_holes(10_000)
        n_right = int((pts[:, 0] > 0).sum())
        sigma = np.sqrt(10_000 * 0.25)
        assert abs(n_right - 5000) <= 3 * sigma


class TestAdvance:
    def test_drift_accumulates_exactly(self):
        mix = ep.sample_mixture(5)
        proc = ep.drift_process(mix, (0.05, 0.0), seed=1)
        for _ in range(100):
            proc.advance()
        np.testing.assert_array_equal(proc.total_offset(), 100 * np.array([0.05, 0.0]))
        np.testing.assert_array_equal(
            proc.current_mixture().means, mix.means + 100 * np.array([0.05, 0.0])
        )

    def test_stationary_means_unchanged(self):
        mix = ep.sample_mixture(6)
        proc = ep.stationary_process(mix, seed=1)
        for _ in range(57):
            proc.advance()
        np.testing.assert_array_equal(proc.current_mixture().means, mix.means)
        assert proc.timestep == 57

    def test_shift_count_within_binomial_bound(self):
        mix = ep.sample_mixture(8)
        proc = ep.shift_process(mix, p_shift=0.05, max_offset=2.0, seed=4)
        shifts = 0
        prev = proc.total_offset()
        for _ in range(10_000):
            proc.advance()
            cur = proc.total_offset()
            if not np.array_equal(cur, prev):
                shifts += 1
            prev = cur
        mean, sigma = 10_000 * 0.05, np.sqrt(10_000 * 0.05 * 0.95)
        assert abs(shifts - mean) <= 3 * sigma

    def test_translation_preserves_weights_and_covariances(self):
        mix = ep.sample_mixture(9)
        proc = ep.brownian_process(mix, stddev=0.5, seed=2)
        for _ in range(10):
            proc.advance()
        cur = proc.current_mixture()
        np.testing.assert_array_equal(cur.weights, mix.weights)
        np.testing.assert_array_equal(cur.covariances, mix.covariances)

    def test_seed_determinism_across_kinds(self):
        mix = ep.sample_mixture(10)
        for maker in (ep.stationary_process, ep.brownian_process, ep.shift_process):
            a, b = maker(mix, seed=11), maker(mix, seed=11)
            for _ in range(20):
                a.advance()
                b.advance()
                assert a.sample_hole() == b.sample_hole()


class TestLogDensity:
    def test_standard_normal_peak(self):
        mix = ep.GaussianMixture2D([1.0], [[0.0, 0.0]], [np.eye(2)])
        assert abs(mix.log_density([0.0, 0.0]) - np.log(1.0 / (2 * np.pi))) < 1e-12

    def test_duplicate_components_collapse(self):
        single = ep.GaussianMixture2D([1.0], [[1.0, -2.0]], [np.diag([2.0, 0.5])])
        double = ep.GaussianMixture2D(
            [0.5, 0.5], [[1.0, -2.0]] * 2, [np.diag([2.0, 0.5])] * 2
        )
        for pt in np.random.default_rng(0).uniform(-5, 5, size=(10, 2)):
            assert abs(single.log_density(pt) - double.log_density(pt)) < 1e-12

    def test_matches_direct_summation_oracle(self):
        mix = ep.sample_mixture(13)
        rng = np.random.default_rng(7)
        for pt in rng.uniform(-10, 10, size=(10, 2)):
            direct = direct_mixture_log_density(mix.weights, mix.means, mix.covariances, pt)
            assert abs(mix.log_density(pt) - direct) < 1e-10


class TestSerialization:
    def test_process_json_roundtrip_preserves_sample_stream(self):
        mix = ep.sample_mixture(21)
        proc = ep.shift_process(mix, seed=5)
        for _ in range(7):
            proc.advance()
        proc.sample_hole()
        blob = proc.to_json()
        clone = ep.HoleProcess.from_json(blob)
        for _ in range(10):
            proc.advance()
            clone.advance()
            assert proc.sample_hole() == clone.sample_hole()

    def test_json_is_schema_stable(self):
        proc = ep.drift_process(ep.sample_mixture(1), (0.1, 0.2), seed=9)
        d = json.loads(proc.to_json())
        assert set(d) == {
            "kind", "base", "drift_offset", "brownian_stddev", "p_shift",
            "shift_max_offset", "seed", "timestep", "accum", "rng_state",
        }
        assert set(d["base"]) == {"weights", "means", "covariances"}

    def test_invalid_p_shift_rejected(self):
        with pytest.raises(ContractError):
            ep.shift_process(ep.sample_mixture(1), p_shift=1.5)
