import itertools
import math

import numpy as np
import pytest
from scipy import integrate, special

from _util import random_tree
from perturbmap.bounds import (
    InflationConfig, LowerBoundConfig, PerturbationScheme, PerturbedSolver,
    approx_logZ_inflation, draw_noise, gumbel_cgf, inflate_exact_average, inflate_tiled_grid,
    jackknife_logmeanexp, logmeanexp, lower_bound_logZ, upper_bound_logZ,
)
from perturbmap.mapsolve import SolverPreconditionError, score_arrays, solve_map
from perturbmap.model import SpinGlassConfig, build_model, gen_spin_glass
from perturbmap.oracle import exact_log_partition, exact_map
from perturbmap.perturb import estimate_logZ_full
from perturbmap.rng import EULER_GAMMA


def sg(rows, cols, c, mode="mixed", seed=0, f=1.0):
    return gen_spin_glass(SpinGlassConfig(rows, cols, f, c, mode, seed))


# -- schemes --------------------------------------------------------------------


def test_scheme_subsets():
    m = sg(2, 2, 1.0)
    assert PerturbationScheme.full().subsets(m) == ((0, 1, 2, 3),)
    assert PerturbationScheme.unary().subsets(m) == ((0,), (1,), (2,), (3,))
    assert PerturbationScheme.from_blocks([(0, 1), (2, 3)]).sizes(m) == [4, 4]


@pytest.mark.parametrize("blocks", [[(0, 1), (2,)], [(0, 1), ()], [(0, 0), (1, 2, 3)], [(0, 9), (1, 2, 3)]])
def test_scheme_must_cover(blocks):
    with pytest.raises(ValueError):
        PerturbationScheme.from_blocks(blocks).subsets(sg(2, 2, 1.0))


# -- upper bound ----------------------------------------------------------------


def test_upper_bound_single_variable_is_tight():
    m = build_model([3], [[0.4, -0.2, 1.1]])
    r = upper_bound_logZ(m, m=10_000, seed=3)
    assert abs(r.mean - exact_log_partition(m)) <= 3 * r.std_error


def test_full_scheme_matches_full_estimator_draw_for_draw():
    m = sg(2, 2, 1.0, seed=5)
    a = upper_bound_logZ(m, PerturbationScheme.full(), m=50, seed=9)
    b = estimate_logZ_full(m, 50, seed=9)
    assert np.array_equal(a.samples, b.samples)


def test_single_block_matches_full_estimator():
    m = sg(2, 2, 1.0, seed=6)
    a = upper_bound_logZ(m, PerturbationScheme.from_blocks([(0, 1, 2, 3)]), m=30, seed=2)
    b = estimate_logZ_full(m, 30, seed=2)
    assert np.array_equal(a.samples, b.samples)


@pytest.mark.parametrize("seed", range(3))
def test_upper_bound_mixed_grid(seed):
    m = sg(3, 3, 1.0, seed=seed)
    r = upper_bound_logZ(m, m=100, seed=seed)
    assert r.mean - exact_log_partition(m) >= -3 * r.std_error


def test_upper_bound_solvers_agree_on_attractive():
    m = sg(3, 3, 2.0, "attractive", seed=1)
    a = upper_bound_logZ(m, solver="graphcut", m=20, seed=4)
    b = upper_bound_logZ(m, solver="brute", m=20, seed=4)
    assert np.allclose(a.samples, b.samples, rtol=0, atol=1e-9)


def test_upper_bound_mplp_records_dual():
    m = sg(3, 3, 1.0, seed=2)
    dual = upper_bound_logZ(m, solver="mplp", m=10, seed=1)
    exact = upper_bound_logZ(m, solver="brute", m=10, seed=1)
    assert (dual.samples >= exact.samples - 1e-9).all()


def test_pair_blocks_with_mplp_on_tree():
    # a tree plus pair perturbations stays LP-tight, so MPLP is exact
    m = random_tree(5, 1)
    scheme = PerturbationScheme.from_blocks([(0, 1), (2, 3), (4, 1)])
    a = upper_bound_logZ(m, scheme, solver="mplp", m=10, seed=0)
    b = upper_bound_logZ(m, scheme, solver="brute", m=10, seed=0)
    assert np.allclose(a.samples, b.samples, rtol=0, atol=1e-6)


def test_blocks_rejected_by_graphcut():
    m = sg(2, 2, 1.0, "attractive")
    with pytest.raises(SolverPreconditionError):
        upper_bound_logZ(m, PerturbationScheme.from_blocks([(0, 1), (2, 3)]), solver="graphcut", m=2)


def test_blocks_bound_holds():
    m = sg(2, 3, 2.0, seed=4)
    scheme = PerturbationScheme.from_blocks([(0, 1), (2, 5), (3, 4)])
    r = upper_bound_logZ(m, scheme, m=2000, seed=1)
    assert r.mean - exact_log_partition(m) >= -3 * r.std_error


def test_shift_invariance_all_estimators():
    m = sg(2, 2, 2.0, "attractive", seed=8)
    s = m.shifted(1.75, 2)
    a, b = upper_bound_logZ(m, m=20, seed=1), upper_bound_logZ(s, m=20, seed=1)
    assert np.allclose(b.samples - a.samples, 1.75, rtol=0, atol=1e-9)
    cfg = LowerBoundConfig(m=50)
    la, lb = lower_bound_logZ(m, config=cfg, seed=1), lower_bound_logZ(s, config=cfg, seed=1)
    assert np.allclose(np.subtract(lb.values, la.values), 1.75, rtol=0, atol=1e-9)
    for variant, copies in (("exact_average", 4), ("tiled_grid", 4)):
        ic = InflationConfig(copies, variant)
        ia, ib = approx_logZ_inflation(m, ic, 3), approx_logZ_inflation(s, ic, 3)
        assert ib.mean - ia.mean == pytest.approx(1.75, abs=1e-9)


# -- inflation ------------------------------------------------------------------


def test_exact_average_decomposition():
    m = build_model([2, 3, 2], [[0.1, -0.4], [1.0, 0.2, -0.7], [0.3, 0.0]],
                    {(0, 1): np.arange(6.0).reshape(2, 3) / 5, (1, 2): [[1, -1], [0.5, 0], [2, -2]]})
    copies = 2
    un, ends, tabs, cards = inflate_exact_average(m, copies)
    from perturbmap.model import score
    rng = np.random.default_rng(0)
    for _ in range(30):
        big = np.array([rng.integers(0, c) for c in cards])
        y = big.reshape(3, copies)
        avg = np.mean([score(m, [y[i, j[i]] for i in range(3)])
                       for j in itertools.product(range(copies), repeat=3)])
        assert score_arrays(un, ends, tabs, big) == pytest.approx(avg, abs=1e-12)


def test_inflation_single_copy_equals_unary_draw():
    for mode in ("attractive", "mixed"):
        m = sg(2, 3, 1.5, mode, seed=2)
        ub = upper_bound_logZ(m, m=1, seed=11)
        for variant in ("exact_average", "tiled_grid"):
            inf = approx_logZ_inflation(m, InflationConfig(1, variant), seed=11)
            assert inf.mean == ub.mean


def test_inflation_error_shrinks_with_copies():
    errs = {4: [], 25: []}
    for s in range(50):
        m = sg(2, 2, 2.0, "attractive", seed=3 + s)
        lz = exact_log_partition(m)
        for copies in errs:
            errs[copies].append(abs(approx_logZ_inflation(m, InflationConfig(copies), seed=s).mean - lz))
    assert np.mean(errs[25]) < np.mean(errs[4])


def test_inflation_reports():
    m = sg(2, 2, 1.0, "attractive", seed=1)
    r = approx_logZ_inflation(m, InflationConfig(4, reports=5), seed=0)
    assert r.m == 5 and len(set(r.samples.tolist())) > 1


def test_inflation_mixed_uses_general_solver():
    m = sg(2, 2, 1.0, "mixed", seed=1)
    r = approx_logZ_inflation(m, InflationConfig(3), seed=0)
    assert r.settings["solver"] in ("brute", "mplp")
    with pytest.raises(SolverPreconditionError):
        approx_logZ_inflation(m, InflationConfig(3, solver="graphcut"), seed=0)


def test_tiled_grid_structure():
    m = sg(2, 3, 1.0, "attractive", seed=0)
    un, ends, tabs, cards, seam = inflate_tiled_grid(m, 4)
    assert un.shape == (24, 2)
    # 4x6 grid has 4*5 + 3*6 = 38 edges; seams: one column seam and one row seam
    assert ends.shape == (38, 2)
    assert seam.sum() == 4 + 6
    # seam-free part is 4 copies of the original edge set
    assert (~seam).sum() == 4 * m.num_edges
    # constant labelling: seam-free score divided by m equals the original score
    from perturbmap.model import score
    for lab in (0, 1):
        v = score_arrays(un, ends[~seam], tabs[~seam], np.full(24, lab))
        assert v / 4 == pytest.approx(score(m, [lab] * 6), abs=1e-12)


@pytest.mark.parametrize("kw", [dict(m=0), dict(m=3, variant="tiled_grid"), dict(m=4, variant="ring"),
                                dict(m=4, reports=0)])
def test_inflation_config_validation(kw):
    with pytest.raises(ValueError):
        InflationConfig(**kw)


def test_tiled_grid_needs_grid():
    m = random_tree(4, 0)
    with pytest.raises(ValueError):
        approx_logZ_inflation(m, InflationConfig(4, "tiled_grid"))


def test_inflation_default_scales():
    assert InflationConfig(16).scale == 1 / 16
    assert InflationConfig(16, "tiled_grid").scale == 1.0
    assert InflationConfig(16, perturbation_scale=0.5).scale == 0.5


# -- lower bound ----------------------------------------------------------------


def test_cgf_half_analytic():
    assert gumbel_cgf(0.5) == pytest.approx(0.5 * math.log(math.pi) - 0.5 * EULER_GAMMA, abs=1e-15)
    assert gumbel_cgf(0.0) == 0.0
    assert gumbel_cgf(1.0) == math.inf


@pytest.mark.parametrize("lam", [0.1, 0.5, 0.9])
def test_cgf_by_quadrature(lam):
    # E exp(lam * gamma) with gamma = g - c, g standard Gumbel with density exp(-(g + e^-g))
    dens = lambda g: math.exp(lam * (g - EULER_GAMMA) - g - math.exp(-g))
    val, _ = integrate.quad(dens, -20, np.inf, limit=200)
    assert gumbel_cgf(lam) == pytest.approx(math.log(val), abs=1e-9)


def test_logmeanexp_and_jackknife():
    x = np.array([0.0, 1.0, 2.0, 800.0])
    assert logmeanexp(x) == pytest.approx(special.logsumexp(x) - math.log(4), abs=1e-12)
    y = np.random.default_rng(0).normal(size=50)
    loo = [logmeanexp(np.delete(y, k)) for k in range(50)]
    expect = math.sqrt(49 / 50 * np.sum((np.array(loo) - np.mean(loo)) ** 2))
    assert jackknife_logmeanexp(y) == pytest.approx(expect, rel=1e-10)


@pytest.mark.parametrize("lams", [(0.1, 0.2), (0.0, 0.5, 0.3), (0.0, 1.0), (-0.1, 0.0), ()])
def test_lower_config_validation(lams):
    with pytest.raises(ValueError):
        LowerBoundConfig(lams)


def test_lower_bound_lambda_zero_is_map():
    m = sg(3, 3, 1.0, seed=4)
    r = lower_bound_logZ(m, config=LowerBoundConfig((0.0,), m=5), seed=0)
    assert r.bound == solve_map(m, "brute").value
    assert r.values[0] == exact_map(m)[1]


@pytest.mark.parametrize("seed", range(3))
def test_lower_bound_mixed_2x2(seed):
    m = sg(2, 2, 1.0, seed=seed)
    r = lower_bound_logZ(m, config=LowerBoundConfig(m=200), seed=seed)
    assert r.bound <= exact_log_partition(m) + 3 * r.std_error
    assert r.bound >= r.map_value


def test_lower_bound_every_lambda_below():
    # the literal reading of the bound holds for every lambda, not only the best
    m = sg(2, 3, 1.0, seed=1)
    lz = exact_log_partition(m)
    r = lower_bound_logZ(m, config=LowerBoundConfig(m=400), seed=3)
    for v, se in zip(r.values, r.std_errors):
        assert v <= lz + 3 * se


def test_perturbed_solver_noise_layout():
    m = build_model([2, 3], [[0, 0], [0, 0, 0]])
    ps = PerturbedSolver(m, PerturbationScheme.unary(), "brute")
    assert ps.noise_size == 5
    noise = np.array([0.0, 1.0, 0.5, 2.0, -1.0])
    value, labels, _ = ps.solve(noise)
    assert tuple(labels) == (1, 1) and value == 3.0
    assert np.array_equal(draw_noise(4, 2, 5), draw_noise(4, 2, 5))
