import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from designlab.population import (
    DEFAULT_TWO_POINT,
    FinitePopulation,
    PopulationError,
    SuperPopulationModel,
    Unit,
    draw_population,
    format_number,
    model_moments,
    read_population_csv,
    summarize,
    write_population_csv,
)


def test_summary_of_four_unit_example(example_n4):
    s = summarize(example_n4)
    assert s.n == 4
    assert s.exact
    assert s.tau_S == Fraction(5, 2)
    assert s.S1sq == Fraction(5, 3)
    assert s.S0sq == 0
    assert s.Stausq == Fraction(5, 3)
    assert s.S10 == 0


def test_summary_matches_numpy_on_floats(rng):
    y1, y0 = rng.normal(size=30), rng.normal(size=30)
    s = summarize(FinitePopulation(y1, y0))
    assert not s.exact
    assert_allclose(s.tau_S, np.mean(y1 - y0), rtol=1e-13)
    assert_allclose(s.S1sq, np.var(y1, ddof=1), rtol=1e-13)
    assert_allclose(s.S0sq, np.var(y0, ddof=1), rtol=1e-13)
    assert_allclose(s.Stausq, np.var(y1 - y0, ddof=1), rtol=1e-13)
    assert_allclose(s.S10, np.cov(y1, y0)[0, 1], rtol=1e-12)


def test_stausq_is_s1_plus_s0_minus_twice_covariance(rng):
    pop = FinitePopulation([Fraction(int(k), 7) for k in rng.integers(-20, 20, 9)],
                           [Fraction(int(k), 3) for k in rng.integers(-20, 20, 9)])
    s = summarize(pop)
    assert s.Stausq == s.S1sq + s.S0sq - 2 * s.S10


def test_constant_effect_has_zero_effect_variance():
    s = summarize(FinitePopulation(["1.5", "2.5", "7.5"], ["0.5", "1.5", "6.5"]))
    assert s.Stausq == 0
    assert s.tau_S == 1


def test_float_constant_column_has_exactly_zero_variance():
    s = summarize(FinitePopulation(np.full(5, 0.1), np.full(5, 0.3)))
    assert s.S1sq == 0.0
    assert s.Stausq == 0.0


def test_population_validation():
    with pytest.raises(PopulationError, match="n >= 2"):
        FinitePopulation([1], [0])
    with pytest.raises(PopulationError, match="y1 has 2 values but y0 has 3"):
        FinitePopulation([1, 2], [0, 0, 0])
    with pytest.raises(PopulationError, match="non-finite"):
        FinitePopulation([1.0, np.nan], [0.0, 0.0])
    with pytest.raises(PopulationError):
        FinitePopulation([1, 2, 3], [0, 0, 0], strata=["a", None, "b"])


def test_mixed_exact_and_float_columns_become_float():
    pop = FinitePopulation([1, 2], [0.5, 0.25])
    assert not pop.exact
    assert pop.y1.dtype == float


def test_units_round_trip():
    units = [Unit(1, 0, stratum="a"), Unit(2, 1, stratum="b"), Unit(3, 1, stratum="b")]
    pop = FinitePopulation.from_units(units)
    assert pop.strata == ("a", "b", "b")
    assert pop.units == tuple(units)


def test_take_preserves_labels():
    pop = FinitePopulation([1, 2, 3], [0, 1, 2], strata=["a", "b", "b"], unit_ids=["x", "y", "z"])
    sub = pop.take([2, 0])
    assert sub.unit_ids == ("z", "x")
    assert sub.strata == ("b", "a")
    assert list(sub.y1) == [3, 1]


# -- CSV ----------------------------------------------------------------------


def test_read_fixture(data_dir):
    pop = read_population_csv(data_dir / "example_n4.csv")
    assert pop.exact
    assert summarize(pop).Stausq == Fraction(5, 3)
    assert pop.unit_ids == ("1", "2", "3", "4")


def test_decimal_parsing_is_exact():
    pop = read_population_csv(io.StringIO("unit_id,y1,y0\na,0.1,0.2\nb,0.3,1e-3\n"))
    assert pop.y1[0] == Fraction(1, 10)
    assert pop.y0[1] == Fraction(1, 1000)
    assert summarize(pop).tau_S == Fraction(199, 2000)


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "population requires n >= 2"),
        ("unit_id,y1,y0\n", "population requires n >= 2"),
        ("unit_id,y1,y0\n1,1,0\n", "population requires n >= 2"),
        ("unit_id,y1,y0\n1,1,0\n2,NaN,0\n", "line 3 .*'2'.*non-finite"),
        ("unit_id,y1,y0\n1,1,0\n2,inf,0\n", "line 3"),
        ("unit_id,y1,y0\n1,1,0\n2,abc,0\n", "line 3"),
        ("unit_id,y1,y0\n1,1\n2,1,0\n", "line 2: expected 3 fields"),
        ("id,y1,y0\n1,1,0\n2,1,0\n", "line 1: header"),
        ("unit_id,y1,y0,stratum\n1,1,0,a\n2,1,0, \n", "line 3: empty stratum"),
    ],
)
def test_csv_errors_name_the_problem(text, message):
    with pytest.raises(PopulationError, match=message):
        read_population_csv(io.StringIO(text))


@pytest.mark.parametrize("x, text", [
    (Fraction(5, 2), "2.5"), (Fraction(-1, 8), "-0.125"), (Fraction(1, 3), "1/3"),
    (Fraction(7), "7"), (Fraction(-3, 50), "-0.06"), (0.1, "0.1"),
])
def test_format_number(x, text):
    assert format_number(x) == text


rationals = st.fractions(min_value=-1000, max_value=1000, max_denominator=64)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(rationals, rationals), min_size=2, max_size=12),
       st.booleans())
def test_csv_round_trip_is_exact(pairs, labelled):
    y1, y0 = zip(*pairs)
    strata = [f"s{i % 3}" for i in range(len(pairs))] if labelled else None
    pop = FinitePopulation(list(y1), list(y0), strata=strata)
    back = read_population_csv(io.StringIO(write_population_csv(pop)))
    assert list(back.y1) == list(pop.y1)
    assert list(back.y0) == list(pop.y0)
    assert back.strata == pop.strata
    assert back.unit_ids == pop.unit_ids


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=8))
def test_float_csv_round_trip_is_bitwise(values):
    pop = FinitePopulation(np.array(values), np.array(values[::-1]))
    back = read_population_csv(io.StringIO(write_population_csv(pop)))
    assert_allclose([float(v) for v in back.y1], values, rtol=0, atol=0)


# -- super-population ---------------------------------------------------------


def test_model_moments():
    g = SuperPopulationModel.gaussian(var1=4.0, var0=1.0, rho=0.5, mean1=1.0)
    tau, v1, v0, vtau = model_moments(g)
    assert (tau, v1, v0) == (1.0, 4.0, 1.0)
    assert_allclose(vtau, 4 + 1 - 2 * 0.5 * 2)
    c = SuperPopulationModel.constant_effect(tau="0.5", var0=2.0)
    assert model_moments(c)[3] == 0
    assert model_moments(c)[0] == Fraction(1, 2)
    t = SuperPopulationModel.two_point()
    assert model_moments(t) == (Fraction(1, 2), Fraction(1, 2), Fraction(1, 4), Fraction(1, 4))
    assert sum(DEFAULT_TWO_POINT.values()) == 1


def test_two_point_masses_validated():
    with pytest.raises(PopulationError):
        SuperPopulationModel.two_point({(1, 0): Fraction(1, 2), (0, 0): Fraction(1, 3)})
    with pytest.raises(PopulationError):
        SuperPopulationModel.two_point({(1, 0): Fraction(3, 2), (0, 0): Fraction(-1, 2)})


def test_gaussian_rho_validated():
    with pytest.raises(PopulationError):
        SuperPopulationModel.gaussian(rho=1.5)
    with pytest.raises(PopulationError):
        SuperPopulationModel.gaussian(var1=-1.0)


@pytest.mark.parametrize("rho", [-0.5, 0.0, 0.8, 1.0])
def test_gaussian_draws_have_model_moments(rho):
    model = SuperPopulationModel.gaussian(var1=2.0, var0=1.0, rho=rho, mean1=1.0, mean0=-1.0)
    pop = draw_population(model, 1_000_000, np.random.default_rng(7))
    tau, v1, v0, vtau = model_moments(model)
    s = summarize(pop)
    # 4 SE of a sample mean / sample variance with n = 10^6
    assert abs(s.tau_S - tau) < 4 * np.sqrt(vtau / 1e6) + 1e-12
    assert abs(s.S1sq - v1) < 4 * v1 * np.sqrt(2 / 1e6)
    assert abs(s.S0sq - v0) < 4 * v0 * np.sqrt(2 / 1e6)
    assert abs(s.Stausq - vtau) < 4 * max(vtau, 1e-3) * np.sqrt(2 / 1e6) + 1e-12


def test_constant_effect_draws_are_exact_with_zero_effect_variance():
    pop = draw_population(SuperPopulationModel.constant_effect(tau="0.3"), 50, np.random.default_rng(1))
    assert pop.exact
    s = summarize(pop)
    assert s.Stausq == 0
    assert s.tau_S == Fraction(3, 10)


def test_two_point_draws_match_masses():
    pop = draw_population(SuperPopulationModel.two_point(), 200_000, np.random.default_rng(3))
    assert pop.exact
    pairs = list(zip(pop.y1, pop.y0))
    for atom, p in DEFAULT_TWO_POINT.items():
        share = sum(1 for q in pairs if q == atom) / len(pairs)
        assert abs(share - float(p)) < 4 * np.sqrt(float(p * (1 - p)) / len(pairs))


def test_draws_are_reproducible():
    m = SuperPopulationModel.gaussian(rho=0.3)
    a = draw_population(m, 10, np.random.default_rng(5))
    b = draw_population(m, 10, np.random.default_rng(5))
    assert np.array_equal(a.y1, b.y1) and np.array_equal(a.y0, b.y0)
