"""Monte Carlo studies over super-population draws.

Replication ``r`` draws its population and assignment from the stream
``default_rng(SeedSequence(master_seed, spawn_key=(r,)))``. Rows are
collected in replication order whatever the number of workers, so a seed
reproduces a report bit for bit.

Three modes:

``decomposition``
    empirical Var(tau_hat) against mean Var(tau_hat | S) + Vtau / n, where
    the conditional variance is computed exactly over all C(n, n1)
    assignments of each drawn population.
``unbiasedness``
    means of tau_S, S1sq, S0sq, Stausq, tau_hat against tau, V1, V0, Vtau,
    tau, and the variance of tau_S against Vtau / n.
``coverage``
    coverage of the normal interval built from ``vhat_neyman`` (and from
    ``vhat_sharp``) for tau or tau_S.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import combinations

import numpy as np

from .design import Design, build_layout, sample_group_assignments
from .estimator import estimate, normal_quantile, observe, superpop_variance
from .population import FinitePopulation, SuperPopulationModel, draw_population, model_moments, summarize

__all__ = [
    "StudyConfig",
    "StudyReport",
    "StudyError",
    "run_study",
    "run_decomposition_study",
    "run_unbiasedness_study",
    "run_coverage_study",
    "replication_rng",
    "conditional_variance",
]

MODES = ("decomposition", "unbiasedness", "coverage")
TARGETS = ("tau", "tau_S")
ATOL = 1e-12
CHUNK = 256
ENUM_CAP = 200_000

COLUMNS = {
    "decomposition": ("tau_hat", "var_cond", "tau_S"),
    "unbiasedness": ("tau_hat", "tau_S", "S1sq", "S0sq", "Stausq"),
    "coverage": ("tau_hat", "tau_S", "vhat_neyman", "vhat_sharp"),
}


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    model: SuperPopulationModel
    n: int
    n1: int
    replications: int
    master_seed: int
    mode: str = "decomposition"
    alpha: float = 0.05
    target: str = "tau"
    band: float = 3.0
    workers: int = 1
    keep_rows: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise StudyError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.target not in TARGETS:
            raise StudyError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.replications < 100:
            raise StudyError("use at least 100 replications")
        if not 1 <= self.n1 <= self.n - 1:
            raise StudyError(f"need 1 <= n1 <= n-1; got n1={self.n1}, n={self.n}")
        if self.mode == "coverage" and min(self.n1, self.n - self.n1) < 2:
            raise StudyError("coverage needs at least 2 units per arm")
        if self.mode == "decomposition" and math.comb(self.n, self.n1) > ENUM_CAP:
            raise StudyError(
                f"C({self.n},{self.n1}) = {math.comb(self.n, self.n1)} assignments per population "
                f"exceeds {ENUM_CAP}; use a smaller n")
        if not 0 < self.alpha < 1:
            raise StudyError("alpha must lie in (0, 1)")
        if self.band <= 0:
            raise StudyError("band must be positive")

    @property
    def n0(self) -> int:
        return self.n - self.n1

    def describe(self) -> dict:
        return {
            "model": self.model.describe(),
            "n": self.n,
            "n1": self.n1,
            "replications": self.replications,
            "master_seed": self.master_seed,
            "mode": self.mode,
            "alpha": self.alpha,
            "target": self.target,
            "band": self.band,
        }


@dataclass
class StudyReport:
    """Terms, Monte Carlo standard errors and pass/fail verdicts."""

    mode: str
    config: dict
    values: dict
    ses: dict
    checks: dict
    columns: tuple = ()
    rows: np.ndarray | None = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "values": self.values,
            "ses": self.ses,
            "checks": self.checks,
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def rows_csv(self) -> str:
        if self.rows is None:
            raise StudyError("rows were not kept; set keep_rows=True")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("replication",) + tuple(self.columns))
        for r, row in enumerate(self.rows):
            w.writerow([r] + [repr(float(x)) for x in row])
        return buf.getvalue()


def replication_rng(master_seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(r,)))


@lru_cache(maxsize=16)
def _support_matrix(n: int, n1: int) -> np.ndarray:
    z = np.zeros((math.comb(n, n1), n))
    for k, c in enumerate(combinations(range(n), n1)):
        z[k, list(c)] = 1.0
    return z


def conditional_variance(y1: np.ndarray, y0: np.ndarray, n1: int) -> float:
    """Var(tau_hat | S) over all assignments of a complete design (floats)."""
    n = len(y1)
    n0 = n - n1
    z = _support_matrix(n, n1)
    y1 = y1 - y1.mean()
    y0 = y0 - y0.mean()
    t = z @ (y1 / n1 + y0 / n0) - y0.sum() / n0
    d = t - t.mean()
    return float(np.dot(d, d) / len(t))


def _replicate(cfg: StudyConfig, r: int) -> list[float]:
    rng = replication_rng(cfg.master_seed, r)
    pop = draw_population(cfg.model, cfg.n, rng)
    lay = build_layout(Design.complete(cfg.n1), cfg.n)
    z = sample_group_assignments(lay, rng, 1)[0]
    y1, y0 = pop.y1f, pop.y0f
    if cfg.mode == "decomposition":
        tau_hat = y1[z == 1].mean() - y0[z == 0].mean()
        tau_s = y1.mean() - y0.mean()
        return [tau_hat, conditional_variance(y1, y0, cfg.n1), tau_s]
    if cfg.mode == "unbiasedness":
        s = summarize(pop)
        tau_hat = y1[z == 1].mean() - y0[z == 0].mean()
        return [tau_hat, float(s.tau_S), float(s.S1sq), float(s.S0sq), float(s.Stausq)]
    fpop = FinitePopulation(y1, y0)
    est = estimate(observe(fpop, z, Design.complete(cfg.n1)), cfg.alpha)
    return [float(est.tau_hat), y1.mean() - y0.mean(), float(est.vhat_neyman), float(est.vhat_sharp)]


def _run_chunk(args) -> np.ndarray:
    cfg, start, stop = args
    return np.array([_replicate(cfg, r) for r in range(start, stop)], dtype=float)


def _collect(cfg: StudyConfig) -> np.ndarray:
    jobs = [(cfg, s, min(s + CHUNK, cfg.replications)) for s in range(0, cfg.replications, CHUNK)]
    if cfg.workers <= 1:
        parts = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    return np.concatenate(parts, axis=0)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def _within(diff: float, se: float, band: float) -> bool:
    return abs(diff) <= band * se + ATOL


def _report(cfg: StudyConfig, rows: np.ndarray, values, ses, checks) -> StudyReport:
    return StudyReport(
        mode=cfg.mode,
        config=cfg.describe(),
        values=values,
        ses=ses,
        checks=checks,
        columns=COLUMNS[cfg.mode],
        rows=rows if cfg.keep_rows else None,
    )


def run_decomposition_study(cfg: StudyConfig) -> StudyReport:
    """Empirical Var(tau_hat) = E{Var(tau_hat | S)} + Vtau / n."""
    if cfg.mode != "decomposition":
        cfg = _with_mode(cfg, "decomposition")
    rows = _collect(cfg)
    tau, v1, v0, vtau = (float(x) for x in model_moments(cfg.model))
    tau_hat, var_cond = rows[:, 0], rows[:, 1]
    R = len(rows)
    emp_var = float(np.var(tau_hat, ddof=1))
    mean_cond, se_cond = _mean_se(var_cond)
    _, se_emp = _mean_se((tau_hat - tau_hat.mean()) ** 2 * R / (R - 1))
    # paired per-replication contrast; its mean estimates Vtau / n
    _, se_resid = _mean_se((tau_hat - tau) ** 2 - var_cond)
    vtau_n = vtau / cfg.n
    residual = emp_var - mean_cond - vtau_n
    values = {
        "empirical_var_tau_hat": emp_var,
        "mean_conditional_var": mean_cond,
        "vtau_over_n": vtau_n,
        "residual": residual,
        "superpop_var": float(superpop_variance(cfg.model, cfg.n1, cfg.n0)),
        "mean_tau_hat": float(tau_hat.mean()),
    }
    ses = {"empirical_var_tau_hat": se_emp, "mean_conditional_var": se_cond, "residual": se_resid}
    checks = {"decomposition_residual": _within(residual, se_resid, cfg.band)}
    return _report(cfg, rows, values, ses, checks)


def run_unbiasedness_study(cfg: StudyConfig) -> StudyReport:
    """Means of finite-population quantities against model moments."""
    if cfg.mode != "unbiasedness":
        cfg = _with_mode(cfg, "unbiasedness")
    rows = _collect(cfg)
    tau, v1, v0, vtau = (float(x) for x in model_moments(cfg.model))
    targets = {"tau_hat": tau, "tau_S": tau, "S1sq": v1, "S0sq": v0, "Stausq": vtau}
    values, ses, checks = {}, {}, {}
    for j, name in enumerate(COLUMNS["unbiasedness"]):
        m, se = _mean_se(rows[:, j])
        values[f"mean_{name}"] = m
        values[f"target_{name}"] = targets[name]
        ses[f"mean_{name}"] = se
        checks[f"mean_{name}"] = _within(m - targets[name], se, cfg.band)
    tau_s = rows[:, 1]
    m, se = _mean_se((tau_s - tau) ** 2)
    values["var_tau_S"] = m
    values["target_var_tau_S"] = vtau / cfg.n
    ses["var_tau_S"] = se
    checks["var_tau_S"] = _within(m - vtau / cfg.n, se, cfg.band)
    return _report(cfg, rows, values, ses, checks)


def run_coverage_study(cfg: StudyConfig) -> StudyReport:
    """Coverage of tau_hat +- z * sqrt(vhat) for the configured target."""
    if cfg.mode != "coverage":
        cfg = _with_mode(cfg, "coverage")
    rows = _collect(cfg)
    tau, v1, v0, vtau = (float(x) for x in model_moments(cfg.model))
    tau_hat, tau_s, vn, vs = rows.T
    target = np.full(len(rows), tau) if cfg.target == "tau" else tau_s
    q = normal_quantile(1 - cfg.alpha / 2)
    R = len(rows)
    nominal = 1 - cfg.alpha
    cover_n = np.abs(tau_hat - target) <= q * np.sqrt(vn)
    cover_s = np.abs(tau_hat - target) <= q * np.sqrt(vs)
    rate_n, rate_s = float(cover_n.mean()), float(cover_s.mean())
    se_nominal = math.sqrt(cfg.alpha * nominal / R)
    values = {
        "coverage_neyman": rate_n,
        "coverage_sharp": rate_s,
        "nominal": nominal,
        "mean_width_neyman": float(np.mean(2 * q * np.sqrt(vn))),
        "mean_width_sharp": float(np.mean(2 * q * np.sqrt(vs))),
    }
    ses = {
        "coverage_neyman": math.sqrt(rate_n * (1 - rate_n) / R),
        "coverage_sharp": math.sqrt(rate_s * (1 - rate_s) / R),
        "nominal": se_nominal,
    }
    conservative = cfg.target == "tau_S" and vtau > 0
    if conservative:
        checks = {"coverage_at_least_nominal": rate_n >= nominal - cfg.band * se_nominal}
    else:
        checks = {"coverage_near_nominal": _within(rate_n - nominal, se_nominal, cfg.band)}
    return _report(cfg, rows, values, ses, checks)


def _with_mode(cfg: StudyConfig, mode: str) -> StudyConfig:
    return replace(cfg, mode=mode)


def run_study(cfg: StudyConfig) -> StudyReport:
    return {
        "decomposition": run_decomposition_study,
        "unbiasedness": run_unbiasedness_study,
        "coverage": run_coverage_study,
    }[cfg.mode](cfg)
