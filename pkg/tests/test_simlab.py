"""Tests for pattern generation, simulation, and study metrics."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from spatweedie.graph import sparsity
from spatweedie.simlab import (
    PHI_RANGES,
    PatternSpec,
    SimConfig,
    calibrate_dispersion,
    default_pattern,
    deviance_ratio,
    expected_zero_fraction,
    generate_pattern,
    simulate_dataset,
    sse,
    stratified_split,
    synthetic_areal_graph,
    synthetic_multistate_graph,
    write_study_csv,
)


@pytest.fixture(scope="module")
def state_fixture():
    return synthetic_areal_graph(n_vertices=120, seed=5)


class TestPatterns:
    def test_single_region_block_is_constant(self, state_fixture):
        _, coords = state_fixture
        spec = PatternSpec(kind="block", coords=coords, n_regions=1, levels=(2.5,))
        assert_allclose(generate_pattern(spec), 2.5)

    def test_block_takes_exactly_the_configured_levels(self, state_fixture):
        _, coords = state_fixture
        alpha = generate_pattern(default_pattern("block", coords))
        assert set(np.unique(alpha)) == {-3.0, -1.0, 1.0, 3.0}
        counts = [np.sum(alpha == v) for v in (-3, -1, 1, 3)]
        assert max(counts) - min(counts) <= 1  # quantile regions balance counts

    def test_smooth_takes_ten_values_in_range(self, state_fixture):
        _, coords = state_fixture
        alpha = generate_pattern(default_pattern("smooth", coords))
        values = np.unique(alpha)
        assert len(values) == 10
        assert values.min() == -3.0 and values.max() == 3.0

    def test_hotspot_attains_peak_at_hotspots(self, state_fixture):
        _, coords = state_fixture
        spec = default_pattern("hotspot", coords)
        alpha = generate_pattern(spec)
        for h in spec.hotspots:
            assert alpha[h] == pytest.approx(spec.peak)
        assert np.all(alpha <= spec.peak + 1e-12)
        assert np.all(alpha > 0)

    def test_structured_matches_covariance_kernel(self):
        # Monte Carlo covariance across seeds at a fixed vertex pair
        rng = np.random.default_rng(0)
        coords = rng.uniform(0, 1.5, size=(25, 2))
        spec = PatternSpec(kind="structured", coords=coords)
        draws = np.array([generate_pattern(spec, seed=s) for s in range(200)])
        i, j = 3, 17
        target = np.exp(-np.linalg.norm(coords[i] - coords[j]))
        sample_cov = np.cov(draws[:, i], draws[:, j])[0, 1]
        se = np.sqrt((1.0 + target**2) / (len(draws) - 1))
        assert abs(sample_cov - target) < 3 * se

    def test_deterministic_given_seed(self, state_fixture):
        _, coords = state_fixture
        spec = default_pattern("structured", coords)
        assert np.array_equal(generate_pattern(spec, seed=4), generate_pattern(spec, seed=4))

    def test_too_few_longitudes(self):
        coords = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
        spec = PatternSpec(kind="block", coords=coords, n_regions=4)
        with pytest.raises(ValueError, match="distinct longitudes"):
            generate_pattern(spec)


class TestSimulateDataset:
    def test_zero_fraction_near_target(self, state_fixture):
        g, coords = state_fixture
        spec = default_pattern("block", coords)
        sim = SimConfig(n=10_000, phi_range=PHI_RANGES[("block", 0.30)], seed=12)
        data, _ = simulate_dataset(spec, sim, g)
        assert np.mean(data.y == 0) == pytest.approx(0.30, abs=0.05)

    def test_unbiased_at_null_effects(self, state_fixture):
        g, coords = state_fixture
        spec = PatternSpec(kind="block", coords=coords, n_regions=1, levels=(0.0,))
        sim = SimConfig(n=30_000, phi_range=(7.0, 12.0), seed=3)
        data, alpha_true = simulate_dataset(spec, sim, g)
        assert_allclose(alpha_true, 0.0)
        mu = np.exp(data.lp_mean)
        se = np.sqrt(np.sum(data.phi * mu**1.5)) / len(data)
        assert abs(data.y.mean() - mu.mean()) < 3 * se

    def test_low_effect_regions_have_more_zeros(self, state_fixture):
        g, coords = state_fixture
        spec = default_pattern("block", coords)
        sim = SimConfig(n=10_000, phi_range=(7.0, 12.0), seed=9)
        data, alpha_true = simulate_dataset(spec, sim, g)
        zero = data.y == 0
        frac_low = zero[alpha_true[data.location] == -3.0].mean()
        frac_high = zero[alpha_true[data.location] == 3.0].mean()
        assert frac_low > frac_high

    def test_zero_fraction_monotone_in_dispersion_range(self, state_fixture):
        g, coords = state_fixture
        spec = default_pattern("block", coords)
        fracs = []
        for zt in (0.15, 0.30, 0.60, 0.80):
            sim = SimConfig(n=10_000, phi_range=PHI_RANGES[("block", zt)], seed=21)
            data, _ = simulate_dataset(spec, sim, g)
            fracs.append(np.mean(data.y == 0))
        assert np.all(np.diff(fracs) > 0)

    def test_explicit_allocation(self, state_fixture):
        g, coords = state_fixture
        spec = default_pattern("smooth", coords)
        counts = np.full(g.n_vertices, 2)
        sim = SimConfig(n=int(counts.sum()), phi_range=(7.0, 11.0), seed=1)
        data, _ = simulate_dataset(spec, sim, g, allocation=counts)
        assert_allclose(data.location_counts(), counts)

    def test_offsets_exclude_the_effect(self, state_fixture):
        # the emitted offset is the base predictor, so recovering the signal
        # is the estimator's job
        g, coords = state_fixture
        spec = default_pattern("block", coords)
        sim = SimConfig(n=5_000, phi_range=(7.0, 12.0), seed=2)
        data, alpha_true = simulate_dataset(spec, sim, g)
        by_loc_mean = np.exp(data.lp_mean + alpha_true[data.location])
        assert data.y.mean() == pytest.approx(by_loc_mean.mean(), rel=0.1)
        assert not np.allclose(alpha_true, 0.0)

    def test_calibration_hits_arbitrary_target(self, state_fixture):
        g, coords = state_fixture
        spec = default_pattern("block", coords)
        sim = SimConfig(n=20_000, phi_range=(7.0, 12.0), zero_target=0.45, seed=4)
        data, _ = simulate_dataset(spec, sim, g, calibrate=True)
        assert np.mean(data.y == 0) == pytest.approx(0.45, abs=0.03)


class TestCalibration:
    def test_bisection_matches_expectation(self):
        rng = np.random.default_rng(0)
        mu = rng.uniform(50, 400, 5000)
        phi = rng.uniform(7, 12, 5000)
        mult = calibrate_dispersion(mu, phi, 1.5, 0.5)
        assert expected_zero_fraction(mu, phi * mult, 1.5) == pytest.approx(0.5, abs=1e-3)

    def test_unreachable_target(self):
        mu = np.array([100.0])
        phi = np.array([10.0])
        with pytest.raises(ValueError, match="unreachable"):
            calibrate_dispersion(mu, phi, 1.5, 1.0 - 1e-15)


class TestMetrics:
    def test_sse(self):
        assert sse(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == pytest.approx(5.0)
        assert sse(np.zeros(3), np.zeros(3)) == 0.0
        a, b = np.array([1.0, -2.0]), np.array([0.5, 3.0])
        assert sse(a, b) == sse(b, a)
        with pytest.raises(ValueError):
            sse(np.zeros(2), np.zeros(3))

    def test_deviance_ratio_one_at_truth(self, state_fixture, rng):
        g, coords = state_fixture
        spec = default_pattern("block", coords)
        sim = SimConfig(n=3_000, phi_range=(7.0, 12.0), seed=6)
        data, alpha_true = simulate_dataset(spec, sim, g)
        assert deviance_ratio(data, alpha_true, alpha_true, 1.5) == pytest.approx(1.0)
        assert deviance_ratio(data, alpha_true, np.zeros_like(alpha_true), 1.5) > 1.0


class TestFixtures:
    def test_state_fixture_shape(self, state_fixture):
        g, coords = state_fixture
        assert g.n_vertices == 120 and coords.shape == (120, 2)
        degrees = g.degrees()
        assert degrees.min() >= 1
        assert 4.0 < degrees.mean() < 7.0

    def test_state_fixture_deterministic(self):
        g1, c1 = synthetic_areal_graph(n_vertices=50, seed=8)
        g2, c2 = synthetic_areal_graph(n_vertices=50, seed=8)
        assert g1.edges == g2.edges and np.array_equal(c1, c2)

    def test_multistate_benchmark_sparsity(self):
        g, coords = synthetic_multistate_graph(block_sizes=(282, 537, 77), seed=0)
        assert g.n_vertices == 896
        assert sparsity(g) >= 0.99
        codes, names = g.block_codes()
        assert names == ["S0", "S1", "S2"]
        assert list(np.bincount(codes)) == [282, 537, 77]
        # cross-band edges exist for the approximation to remove
        assert any(codes[i] != codes[j] for i, j in g.edges)


class TestSplit:
    def test_fraction_and_coverage(self, state_fixture, rng):
        g, coords = state_fixture
        spec = default_pattern("block", coords)
        sim = SimConfig(n=6_000, phi_range=(7.0, 12.0), seed=7)
        data, _ = simulate_dataset(spec, sim, g)
        mask = stratified_split(data, 0.6, seed=13)
        assert mask.mean() == pytest.approx(0.6, abs=0.02)
        train = data.subset(mask)
        # every observed location keeps training data
        observed = np.flatnonzero(data.location_counts() > 0)
        assert np.all(train.location_counts()[observed] > 0)

    def test_tiny_locations_go_to_train(self):
        from spatweedie.optimizer import ObservationTable

        data = ObservationTable(
            location=np.array([0, 1, 1, 1, 1]),
            y=np.ones(5),
            lp_mean=np.zeros(5),
            phi=np.ones(5),
            weight=np.ones(5),
            n_locations=2,
        )
        mask = stratified_split(data, 0.6, seed=0)
        assert mask[0]  # the singleton location is wholly in training


class TestStudyCsv:
    def test_columns_and_rows(self, tmp_path):
        rows = [
            {
                "pattern": "block", "n": 100, "zero_target": 0.15, "variant": "gl",
                "seed": 0, "sse": 1.25, "train_dr": 0.999, "valid_dr": 1.001,
                "wall_time_s": 0.5,
            }
        ]
        path = tmp_path / "study.csv"
        write_study_csv(rows, path)
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "pattern,n,zero_target,variant,seed,sse,train_dr,valid_dr,wall_time_s"
        assert lines[1].startswith("block,100,0.15,gl,0,1.25,")
