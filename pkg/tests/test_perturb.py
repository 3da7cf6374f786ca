import math

import numpy as np
import pytest
from scipy import stats

from perturbmap.model import FORBIDDEN, SpinGlassConfig, build_model, gen_spin_glass
from perturbmap.oracle import EmptyDomainError, exact_log_partition, joint_distribution
from perturbmap.perturb import (
    EstimateReport, GumbelSampler, estimate_logZ_full, estimate_logZ_sequential,
    gibbs_via_argmax, sample_gumbel,
)
from perturbmap.rng import EULER_GAMMA, derive_rng, derive_seed, gumbel, open_uniform


def test_euler_constant():
    assert EULER_GAMMA == float(np.euler_gamma)


@pytest.fixture(scope="module")
def draws():
    return sample_gumbel(GumbelSampler(seed=0), 100_000)


def test_gumbel_mean(draws):
    assert abs(draws.mean()) <= 0.02


def test_gumbel_variance(draws):
    assert abs(draws.var(ddof=1) - math.pi**2 / 6) <= 0.05


def test_gumbel_cdf_at_zero(draws):
    s = GumbelSampler(0)
    assert s.cdf(0.0) == pytest.approx(math.exp(-math.exp(-EULER_GAMMA)), abs=1e-15)
    assert s.cdf(0.0) == pytest.approx(0.5703, abs=1e-4)
    assert abs((draws <= 0).mean() - s.cdf(0.0)) <= 0.01


def test_gumbel_matches_reference_distribution(draws):
    # shifted standard Gumbel: location -c, scale 1
    p = stats.kstest(draws[:20_000], stats.gumbel_r(loc=-EULER_GAMMA).cdf).pvalue
    assert p > 1e-3


def test_sampler_deterministic():
    a = sample_gumbel(GumbelSampler(5), 10)
    assert np.array_equal(a, sample_gumbel(GumbelSampler(5), 10))
    assert not np.array_equal(a, sample_gumbel(GumbelSampler(6), 10))
    with pytest.raises(ValueError):
        sample_gumbel(GumbelSampler(5), 0)


def test_open_uniform_rejects_zero():
    class Stub:
        def __init__(self):
            self.calls = 0

        def random(self, size):
            self.calls += 1
            return np.zeros(size) if self.calls == 1 else np.full(size, 0.5)

    u = open_uniform(Stub(), 4)
    assert (u > 0).all() and (u < 1).all()


def test_derived_streams_independent_of_order():
    a = derive_rng(7, 3).random(3)
    derive_rng(7, 1).random(100)
    assert np.array_equal(a, derive_rng(7, 3).random(3))
    assert derive_seed(7, 1, 2) != derive_seed(7, 2, 1)


@pytest.mark.parametrize("k", [2, 5, 16])
def test_max_stability(k):
    g = gumbel(derive_rng(100, k), (10_000, k)).max(axis=1)
    se = g.std(ddof=1) / math.sqrt(g.size)
    assert abs(g.mean() - math.log(k)) <= 3 * se


def test_report_recomputable():
    r = EstimateReport.from_samples([1.0, 2.0, 4.0], seed=0, estimator_id="x")
    assert r.mean == pytest.approx(np.mean(r.samples), abs=1e-12)
    assert r.std_error == pytest.approx(np.std(r.samples, ddof=1) / math.sqrt(3), abs=1e-12)
    assert r.m == 3
    assert math.isnan(EstimateReport.from_samples([1.0], 0, "x").std_error)


def test_single_feasible_state():
    m = build_model([2, 2], [[0.3, FORBIDDEN], [FORBIDDEN, 1.2]])
    r = estimate_logZ_full(m, 10_000, seed=1)
    assert abs(r.mean - 1.5) <= 3 * r.std_error


def test_uniform_eight_states():
    m = build_model([2, 2, 2], [[0, 0]] * 3)
    r = estimate_logZ_full(m, 10_000, seed=2)
    assert abs(r.mean - math.log(8)) <= 3 * r.std_error


def test_full_estimate_spin_glass():
    m = gen_spin_glass(SpinGlassConfig(2, 2, 1.0, 1.0, "mixed", seed=7))
    r = estimate_logZ_full(m, 10_000, seed=7)
    assert abs(r.mean - exact_log_partition(m)) <= 3 * r.std_error


def test_full_estimate_coverage():
    m = gen_spin_glass(SpinGlassConfig(2, 2, 1.0, 1.0, "mixed", seed=3))
    lz = exact_log_partition(m)
    covered = 0
    for s in range(100):
        r = estimate_logZ_full(m, 200, seed=1000 + s)
        covered += abs(r.mean - lz) <= 3 * r.std_error
    assert covered >= 95


def test_full_estimate_empty_domain():
    from perturbmap.model import PairwiseModel
    m = PairwiseModel([2], [[FORBIDDEN, FORBIDDEN]], check_domain=False)
    with pytest.raises(EmptyDomainError):
        estimate_logZ_full(m, 3, 0)


def test_gibbs_uniform():
    f = gibbs_via_argmax(build_model([2, 2], [[0, 0], [0, 0]]), 40_000, seed=0)
    assert np.abs(f - 0.25).max() <= 0.01


def test_gibbs_single_variable():
    f = gibbs_via_argmax(build_model([2], [[0.0, math.log(3)]]), 40_000, seed=1)
    assert abs(f[1] - 0.75) <= 0.01


def test_gibbs_total_variation():
    m = gen_spin_glass(SpinGlassConfig(2, 2, 1.0, 1.0, "mixed", seed=4))
    f = gibbs_via_argmax(m, 100_000, seed=4)
    assert 0.5 * np.abs(f - joint_distribution(m)).sum() <= 0.02


def test_gibbs_never_picks_forbidden():
    m = build_model([2, 2], [[0, 0], [0, 0]], {(0, 1): [[0, FORBIDDEN], [0, 0]]})
    assert gibbs_via_argmax(m, 2000, seed=0)[1] == 0.0


def test_sequential_single_variable_in_distribution():
    m = build_model([3], [[0.2, -1.0, 0.7]])
    vals = np.array([estimate_logZ_sequential(m, 1, seed=s) for s in range(4000)])
    full = estimate_logZ_full(m, 4000, seed=0).samples
    # same law: two-sample KS on the per-draw values
    assert stats.ks_2samp(vals, full).pvalue > 1e-3


def test_sequential_uniform_pair():
    m = build_model([2, 2], [[0, 0], [0, 0]])
    assert abs(estimate_logZ_sequential(m, 2000, seed=0) - math.log(4)) <= 0.1


def test_sequential_boundary_and_limits():
    m = gen_spin_glass(SpinGlassConfig(2, 2, 1.0, 1.0, "mixed", seed=0))
    assert math.isfinite(estimate_logZ_sequential(m, 1, seed=0))
    assert estimate_logZ_sequential(m, 5, 3) == estimate_logZ_sequential(m, 5, 3)
    with pytest.raises(ValueError):
        estimate_logZ_sequential(build_model([2] * 7, [[0, 0]] * 7), 1, 0)
    with pytest.raises(ValueError):
        estimate_logZ_sequential(build_model([4], [[0, 0, 0, 0]]), 1, 0)


def test_sequential_is_consistent():
    m = gen_spin_glass(SpinGlassConfig(1, 3, 1.0, 1.0, "mixed", seed=2))
    vals = [estimate_logZ_sequential(m, 200, seed=s) for s in range(20)]
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - exact_log_partition(m)) <= 3 * se + 0.02
