import csv
import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from designlab.design import Design
from designlab.oracle import enumerate_moments
from designlab.population import FinitePopulation, SuperPopulationModel
from designlab.study import (
    StudyConfig,
    StudyError,
    conditional_variance,
    replication_rng,
    run_study,
)

GAUSS = SuperPopulationModel.gaussian(rho=0.0)


def test_conditional_variance_matches_enumeration(rng):
    y1, y0 = rng.normal(size=8), rng.normal(size=8)
    rep = enumerate_moments(FinitePopulation(y1, y0), Design.complete(3))
    assert_allclose(conditional_variance(y1, y0, 3), rep.var_tau_hat, rtol=1e-12)


def test_replication_streams_are_distinct_and_stable():
    a = replication_rng(42, 0).random(4)
    b = replication_rng(42, 1).random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, replication_rng(42, 0).random(4))
    assert not np.allclose(a, replication_rng(43, 0).random(4))


@pytest.mark.parametrize("kwargs, message", [
    (dict(replications=50), "at least 100"),
    (dict(n1=0), "n1"),
    (dict(mode="power"), "mode"),
    (dict(target="att"), "target"),
    (dict(n=30, n1=15), r"C\(30,15\)"),
    (dict(mode="coverage", n=5, n1=1), "2 units per arm"),
    (dict(alpha=1.0), "alpha"),
    (dict(band=0.0), "band"),
])
def test_config_validation(kwargs, message):
    base = dict(model=GAUSS, n=8, n1=4, replications=200, master_seed=1)
    base.update(kwargs)
    with pytest.raises(StudyError, match=message):
        StudyConfig(**base)


@pytest.mark.parametrize("mode", ["decomposition", "unbiasedness", "coverage"])
def test_worker_count_does_not_change_report(mode):
    cfg = StudyConfig(GAUSS, n=8, n1=4, replications=600, master_seed=7, mode=mode)
    one = run_study(cfg).to_json()
    many = run_study(StudyConfig(GAUSS, n=8, n1=4, replications=600, master_seed=7, mode=mode, workers=3))
    assert many.to_json() == one


def test_seed_changes_report():
    a = run_study(StudyConfig(GAUSS, n=8, n1=4, replications=300, master_seed=1))
    b = run_study(StudyConfig(GAUSS, n=8, n1=4, replications=300, master_seed=2))
    assert a.values != b.values


def test_decomposition_small_run():
    rep = run_study(StudyConfig(GAUSS, n=8, n1=4, replications=3000, master_seed=11))
    v = rep.values
    assert rep.passed
    assert_allclose(v["residual"], v["empirical_var_tau_hat"] - v["mean_conditional_var"] - v["vtau_over_n"])
    # 2/8 + Vtau/n: Var(tau_hat) = V1/n1 + V0/n0 under the model
    assert v["superpop_var"] == 0.5
    assert abs(v["empirical_var_tau_hat"] - 0.5) < 4 * rep.ses["empirical_var_tau_hat"]


def test_unbiasedness_constant_effect_has_zero_effect_variance():
    model = SuperPopulationModel.constant_effect(tau="0.5")
    rep = run_study(StudyConfig(model, n=10, n1=5, replications=500, master_seed=3, mode="unbiasedness"))
    assert rep.values["mean_Stausq"] == 0.0
    assert rep.ses["mean_Stausq"] == 0.0
    assert rep.checks["mean_Stausq"]
    assert rep.passed


def test_coverage_rows_and_columns():
    cfg = StudyConfig(GAUSS, n=20, n1=10, replications=400, master_seed=5, mode="coverage", keep_rows=True)
    rep = run_study(cfg)
    rows = list(csv.reader(io.StringIO(rep.rows_csv())))
    assert rows[0] == ["replication", "tau_hat", "tau_S", "vhat_neyman", "vhat_sharp"]
    assert len(rows) == 401
    data = np.array(rows[1:], dtype=float)
    assert np.all(data[:, 4] <= data[:, 3] + 1e-15)
    assert 0.0 <= rep.values["coverage_neyman"] <= 1.0
    assert rep.values["coverage_sharp"] <= rep.values["coverage_neyman"]


def test_rows_not_kept_by_default():
    rep = run_study(StudyConfig(GAUSS, n=8, n1=4, replications=100, master_seed=5))
    with pytest.raises(StudyError, match="keep_rows"):
        rep.rows_csv()


def test_two_point_study_runs_on_exact_draws():
    model = SuperPopulationModel.two_point()
    rep = run_study(StudyConfig(model, n=8, n1=4, replications=2000, master_seed=9))
    assert rep.values["vtau_over_n"] == 0.25 / 8
    assert rep.passed
