import io
import math
from fractions import Fraction
from itertools import permutations

import numpy as np
import pytest
from conftest import random_rational_population
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from designlab.design import Design, DesignError, enumerate_assignments
from designlab.estimator import (
    EstimationError,
    conservative_gap,
    coupling_variance_bound,
    estimate,
    neyman_true_variance,
    normal_quantile,
    observe,
    read_observed_csv,
    sharp_Stau2_lower_bound,
    superpop_variance,
    variance_by_design,
)
from designlab.population import FinitePopulation, SuperPopulationModel, summarize


def _moments_by_averaging(pop, design):
    """Mean and variance of tau_hat and mean vhat, one estimate() per assignment."""
    reports = [estimate(observe(pop, z, design)) for z in enumerate_assignments(design, pop)]
    k = len(reports)
    taus = [r.tau_hat for r in reports]
    m = sum(taus, Fraction(0)) / k
    v = sum(((t - m) ** 2 for t in taus), Fraction(0)) / k
    vh = None
    if all(r.vhat_neyman is not None for r in reports):
        vh = sum((r.vhat_neyman for r in reports), Fraction(0)) / k
    return m, v, vh, reports


def test_four_unit_example(example_n4):
    m, v, vh, reports = _moments_by_averaging(example_n4, Design.complete(2))
    assert len(reports) == 6
    assert m == Fraction(5, 2)
    assert v == Fraction(5, 12)
    assert neyman_true_variance(summarize(example_n4), Design.complete(2)) == Fraction(5, 12)
    assert vh == Fraction(5, 6)
    assert vh - v == summarize(example_n4).Stausq / 4


def test_single_assignment_estimate(example_n4):
    r = estimate(observe(example_n4, [1, 1, 0, 0]))
    assert r.tau_hat == Fraction(3, 2)
    assert r.s1sq == Fraction(1, 2) and r.s0sq == 0
    assert r.vhat_neyman == Fraction(1, 4)
    half = 1.959963984540054 * 0.5
    assert_allclose(r.ci, (1.5 - half, 1.5 + half), rtol=1e-15)
    rec = r.to_record()
    assert rec["tau_hat"] == 1.5 and rec["alpha"] == 0.05


@pytest.mark.parametrize("seed", range(8))
def test_complete_design_matches_neyman_formula(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    n1 = int(rng.integers(2, n - 1))
    pop = random_rational_population(rng, n)
    design = Design.complete(n1)
    m, v, vh, _ = _moments_by_averaging(pop, design)
    s = summarize(pop)
    assert m == s.tau_S
    assert v == neyman_true_variance(s, design) == variance_by_design(pop, design)
    assert vh - v == s.Stausq / n == conservative_gap(pop, design)


@pytest.mark.parametrize("seed", range(6))
def test_stratified_design_matches_blockwise_formula(seed):
    rng = np.random.default_rng(100 + seed)
    sizes = rng.integers(4, 6, size=int(rng.integers(2, 4)))
    strata = [f"s{h}" for h, k in enumerate(sizes) for _ in range(k)]
    rng.shuffle(strata)
    pop = random_rational_population(rng, len(strata), strata=strata)
    design = Design.stratified({f"s{h}": int(rng.integers(2, k - 1)) for h, k in enumerate(sizes)})
    m, v, vh, _ = _moments_by_averaging(pop, design)
    assert m == summarize(pop).tau_S
    assert v == variance_by_design(pop, design)
    assert vh - v == conservative_gap(pop, design)


def test_matched_pairs_gap_is_pair_effect_spread(rng):
    strata = [f"p{i // 2}" for i in range(10)]
    pop = random_rational_population(rng, 10, strata=strata)
    design = Design.matched_pairs()
    m, v, vh, reports = _moments_by_averaging(pop, design)
    assert m == summarize(pop).tau_S
    assert v == variance_by_design(pop, design)
    assert vh - v == conservative_gap(pop, design)
    assert all(r.vhat_sharp is None for r in reports)


def test_cluster_design_targets_cluster_mean_effect(rng):
    clusters = ["a", "a", "b", "b", "b", "c", "d", "d", "e", "e"]
    pop = random_rational_population(rng, 10, clusters=clusters)
    design = Design.cluster(2)
    m, v, vh, _ = _moments_by_averaging(pop, design)
    labels = sorted(set(clusters))
    cl_effects = [np.mean([pop.y1[i] - pop.y0[i] for i in range(10) if clusters[i] == c]) for c in labels]
    assert m == sum(cl_effects, Fraction(0)) / len(labels)
    assert v == variance_by_design(pop, design)
    assert vh - v == conservative_gap(pop, design)


def test_single_unit_clusters_reduce_to_complete(rng):
    pop = random_rational_population(rng, 7)
    clustered = FinitePopulation(pop.y1, pop.y0, clusters=[f"c{i}" for i in range(7)])
    assert variance_by_design(clustered, Design.cluster(3)) == variance_by_design(pop, Design.complete(3))


def test_vhat_sharp_lies_between_truth_gap_and_neyman(rng):
    pop = random_rational_population(rng, 8)
    for z in enumerate_assignments(Design.complete(4), pop):
        r = estimate(observe(pop, z))
        assert 0 <= r.vhat_sharp <= r.vhat_neyman


def test_variance_unavailable_with_single_unit_arm(example_n4):
    r = estimate(observe(example_n4, [1, 0, 0, 0]))
    assert r.tau_hat == 1
    assert not r.variance_available
    assert r.ci is None and r.vhat_sharp is None
    assert r.to_record()["ci_lo"] is None


def test_estimation_errors(example_n4):
    with pytest.raises(DesignError, match="treats 3"):
        observe(example_n4, [1, 1, 1, 0], Design.complete(2))
    with pytest.raises(EstimationError, match="length"):
        observe(example_n4, [1, 0, 1])
    with pytest.raises(EstimationError, match="alpha"):
        estimate(observe(example_n4, [1, 1, 0, 0]), alpha=1.5)
    pop = FinitePopulation([1, 2, 3, 4], [0, 0, 0, 0], clusters=list("aabb"))
    with pytest.raises(DesignError):
        observe(pop, [1, 0, 1, 0], Design.cluster(1))


def test_float_population_matches_exact_route(rng):
    pop = random_rational_population(rng, 8)
    fpop = FinitePopulation(pop.y1f, pop.y0f)
    z = [1, 0, 1, 1, 0, 0, 1, 0]
    a, b = estimate(observe(pop, z)), estimate(observe(fpop, z))
    assert_allclose(float(a.vhat_neyman), b.vhat_neyman, rtol=1e-12)
    assert_allclose(float(a.vhat_sharp), b.vhat_sharp, rtol=1e-10, atol=1e-14)
    assert_allclose(float(a.tau_hat), b.tau_hat, rtol=1e-12, atol=1e-15)


# -- normal quantile ----------------------------------------------------------


@pytest.mark.parametrize("p", [1e-10, 0.001, 0.025, 0.3, 0.5, 0.9, 0.975, 0.995, 1 - 1e-10])
def test_normal_quantile_matches_scipy(p):
    assert_allclose(normal_quantile(p), stats.norm.ppf(p), rtol=1e-12, atol=1e-14)


def test_normal_quantile_tabulated():
    assert_allclose(normal_quantile(0.975), 1.959963984540054, rtol=1e-15)
    assert_allclose(normal_quantile(0.95), 1.6448536269514722, rtol=1e-15)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


def test_superpop_variance():
    m = SuperPopulationModel.gaussian(var1=2.0, var0=1.0, rho=0.9)
    assert superpop_variance(m, 4, 2) == 2.0 / 4 + 1.0 / 2


# -- bounds -------------------------------------------------------------------


def _brute_min_variance(a, b):
    return min(summarize(FinitePopulation(list(a), list(p))).Stausq for p in set(permutations(b)))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6).flatmap(
    lambda n: st.tuples(st.lists(st.integers(-9, 9), min_size=n, max_size=n),
                        st.lists(st.integers(-9, 9), min_size=n, max_size=n))))
def test_sorted_pairing_is_the_minimum(ab):
    a, b = ab
    assert sharp_Stau2_lower_bound(a, b) == _brute_min_variance(a, b)


def test_bound_below_any_joint(rng):
    pop = random_rational_population(rng, 9)
    bound = sharp_Stau2_lower_bound(pop.y1, pop.y0)
    for _ in range(50):
        perm = rng.permutation(9)
        assert bound <= summarize(FinitePopulation(pop.y1, pop.y0[perm])).Stausq


def test_bound_errors():
    with pytest.raises(EstimationError, match="length"):
        sharp_Stau2_lower_bound([1, 2], [1, 2, 3])
    with pytest.raises(EstimationError):
        sharp_Stau2_lower_bound([1], [1])


def test_coupling_bound_equal_arms_is_rescaled_sorted_pairing():
    a, b = [3, 1, 4, 1], [5, 9, 2, 6]
    m = len(a)
    expected = sharp_Stau2_lower_bound(a, b) * Fraction(m - 1, m) * Fraction(2 * m, 2 * m - 1)
    assert coupling_variance_bound(a, b) == expected


def _lcm_brute(a, b):
    """Minimal population variance of X - Y over couplings of the two
    empirical laws, by replicating both to a common size and permuting."""
    size = math.lcm(len(a), len(b))
    ra = sorted(x for x in a for _ in range(size // len(a)))
    rb = [y for y in b for _ in range(size // len(b))]
    best = None
    for p in set(permutations(rb)):
        d = [x - y for x, y in zip(ra, p)]
        mu = Fraction(sum(d), size)
        v = sum((x - mu) ** 2 for x in d) / size
        best = v if best is None else min(best, v)
    return best


@pytest.mark.parametrize("a, b", [
    ([1, 2], [0, 0, 1]),
    ([0, 5, 2], [1, 1]),
    ([1, 2], [0, 0, 1, 1]),
    ([-1, 3], [2, 0, 7]),
])
def test_coupling_bound_unequal_arms_matches_brute_force(a, b):
    n = len(a) + len(b)
    assert coupling_variance_bound(a, b) == _lcm_brute(a, b) * Fraction(n, n - 1)


def test_coupling_bound_is_zero_for_shifted_quantiles():
    assert coupling_variance_bound([1, 2], [0, 0, 1, 1]) == 0


# -- observed CSV -------------------------------------------------------------


def test_read_observed(data_dir):
    data = read_observed_csv(data_dir / "observed_n4.csv")
    assert data.design == Design.complete(2)
    assert estimate(data).tau_hat == Fraction(3, 2)


@pytest.mark.parametrize("text, message", [
    ("unit_id,z,yobs\n1,2,1\n2,0,0\n", "line 2: z must be 0 or 1"),
    ("unit_id,z,yobs\n1,1,1\n2,0,nan\n", "line 3 .*non-finite"),
    ("unit_id,z,yobs\n1,1,1\n", "at least 2"),
    ("z,yobs\n1,1\n", "header"),
])
def test_observed_csv_errors(text, message):
    with pytest.raises(EstimationError, match=message):
        read_observed_csv(io.StringIO(text))


def test_observed_csv_wrong_margin_named():
    with pytest.raises(DesignError, match="treats 1"):
        read_observed_csv(io.StringIO("unit_id,z,yobs\n1,1,1\n2,0,0\n3,0,2\n"), Design.complete(2))
