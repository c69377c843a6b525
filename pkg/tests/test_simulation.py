import math

import numpy as np
import pytest

from npsurvey.model import Theta
from npsurvey.simulation import (
    ALL_ESTIMATORS,
    PROPOSED,
    STUDY_POPULATIONS,
    PopulationSpec,
    StudyConfig,
    alpha_for,
    compute_metrics,
    draw_poisson_sample,
    draw_srswor,
    generate_population,
    run_study,
)


@pytest.fixture(scope="module")
def small_pop():
    return generate_population(PopulationSpec(4.5, 0.8, N=200, seed=3))


class TestPopulation:
    @pytest.mark.parametrize("setting", sorted(STUDY_POPULATIONS))
    def test_table_means_and_expected_sizes(self, setting):
        alpha, gamma = setting
        ena, mu = STUDY_POPULATIONS[setting]
        pop = generate_population(PopulationSpec(alpha, gamma))
        assert pop.mu0 == pop.y.mean()
        assert abs(pop.mu0 - mu) <= 0.02
        assert np.all((pop.X[:, 2] >= 0) & (pop.X[:, 2] <= 3))
        assert np.all((pop.pi_true > 0) & (pop.pi_true < 1))
        spread = math.sqrt(np.sum(pop.pi_true * (1 - pop.pi_true)))
        assert abs(pop.pi_true.sum() - ena) <= 4 * spread

    def test_deterministic(self):
        a = generate_population(PopulationSpec(2.7, 0.8, N=1000, seed=5))
        b = generate_population(PopulationSpec(2.7, 0.8, N=1000, seed=5))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.X, b.X)

    def test_alpha_for_matches_table(self):
        for (alpha, gamma), (ena, _) in STUDY_POPULATIONS.items():
            assert alpha_for(ena, gamma) == alpha


class TestSampling:
    def test_certain_inclusion(self, small_pop):
        A, redraws = draw_poisson_sample(small_pop, Theta(-60.0, np.zeros(2), 0.0), np.random.default_rng(0))
        assert A.n == small_pop.N and redraws == 0

    def test_half_inclusion_binomial_bound(self):
        pop = generate_population(PopulationSpec(4.5, 0.8, N=20000, seed=1))
        A, _ = draw_poisson_sample(pop, Theta(0.0, np.zeros(2), 0.0), np.random.default_rng(1))
        assert abs(A.n - 10000) <= 4 * math.sqrt(5000)

    def test_inclusion_frequencies(self, small_pop):
        rng = np.random.default_rng(2)
        pi = small_pop.pi_true
        units = np.argsort(pi)[-10:]
        hits = np.zeros(small_pop.N)
        for _ in range(10000):
            hits += rng.uniform(size=small_pop.N) < pi
        np.testing.assert_allclose(hits[units] / 10000, pi[units], atol=0.02)
        # the sampler itself includes exactly the rows whose uniforms fall below pi
        A, _ = draw_poisson_sample(small_pop, None, np.random.default_rng(9))
        keep = np.random.default_rng(9).uniform(size=small_pop.N) < pi
        np.testing.assert_array_equal(A.X, small_pop.X[keep])

    def test_srswor_census(self, small_pop):
        B = draw_srswor(small_pop, small_pop.N, np.random.default_rng(0))
        np.testing.assert_array_equal(B.X, small_pop.X)
        assert np.all(B.d == 1.0)

    def test_srswor_size_and_frequency(self, small_pop):
        rng = np.random.default_rng(4)
        counts = np.zeros(small_pop.N)
        rows = {tuple(x): i for i, x in enumerate(small_pop.X)}
        for _ in range(10000):
            B = draw_srswor(small_pop, 50, rng)
            assert B.n == 50
            idx = [rows[tuple(x)] for x in B.X]
            counts[idx] += 1
        assert np.all(np.abs(counts / 10000 - 50 / small_pop.N) <= 0.02)
        assert B.design.n == 50 and B.design.N == small_pop.N
        assert np.all(B.d == small_pop.N / 50)

    def test_srswor_bounds(self, small_pop):
        with pytest.raises(ValueError):
            draw_srswor(small_pop, small_pop.N + 1, np.random.default_rng(0))


class TestMetrics:
    def test_exact(self):
        row = compute_metrics([2.0, 2.0], 2.0, ses=[0.1, 0.1], cis=[(1.9, 2.1), (1.5, 2.5)])
        assert row.pct_rb == 0 and row.rrmse == 0
        assert row.cp == 1.0
        assert row.al == pytest.approx(0.6)

    def test_hand_example(self):
        row = compute_metrics([1.1, 0.9], 1.0)
        assert row.pct_rb == pytest.approx(0.0, abs=1e-12)
        assert row.rrmse == pytest.approx(0.1)
        assert row.sd == pytest.approx(0.141421, abs=1e-6)

    def test_zero_truth(self):
        with pytest.raises(ValueError):
            compute_metrics([0.1], 0.0)


def tiny_config(workers, reps=6, calibration=True):
    spec = PopulationSpec(alpha_for(500, 0.8), 0.8, N=4000, seed=11)
    return StudyConfig(spec, n_b=400, reps=reps, workers=workers, calibration=calibration, n_starts=3)


class TestStudy:
    def test_worker_count_does_not_change_results(self):
        one = run_study(tiny_config(1)).to_dict()
        three = run_study(tiny_config(3)).to_dict()
        assert one == three

    def test_exclusion_accounting_and_smoke(self):
        table = run_study(tiny_config(1, reps=1))
        for kind in ALL_ESTIMATORS:
            used = table.estimators.get(kind, {}).get("n_used", 0)
            assert used + table.excluded[kind] == 1
        for kind in PROPOSED:
            row = table.estimators[kind]
            assert all(np.isfinite(row[k]) for k in ("pct_rb", "rrmse", "se", "cp", "al"))

    def test_no_calibration_drops_el(self):
        cfg = tiny_config(1, reps=2, calibration=False)
        assert "EL" not in cfg.estimators
        table = run_study(cfg)
        assert "EL" not in table.excluded and table.nmr_cal is None

    def test_config_validation(self):
        spec = PopulationSpec(4.5, 0.8, N=100)
        with pytest.raises(ValueError):
            StudyConfig(spec, n_b=101)
        with pytest.raises(ValueError):
            StudyConfig(spec, n_b=10, reps=0)
        with pytest.raises(ValueError):
            StudyConfig(spec, n_b=10, estimators=("BOGUS",))
