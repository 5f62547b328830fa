"""Difference-in-means estimation from observed data.

Estimators follow the design's layout: the estimand is the weighted sum of
block-level effects (weights ``n_h / n``), clusters enter through their
cluster-mean outcomes. For complete randomization everything reduces to
the textbook two-sample formulas.

Confidence intervals use the normal quantile from
:meth:`statistics.NormalDist.inv_cdf`, Wichura's AS241 rational
approximation (relative error about 1e-16).
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import _arith
from .design import COMPLETE, PAIRS, Design, DesignError, Layout, build_layout
from .population import FinitePopulation, PopulationSummary, SuperPopulationModel, model_moments, summarize

__all__ = [
    "EstimationError",
    "ObservedData",
    "EstimateReport",
    "observe",
    "estimate",
    "normal_quantile",
    "neyman_true_variance",
    "superpop_variance",
    "variance_by_design",
    "conservative_gap",
    "sharp_Stau2_lower_bound",
    "coupling_variance_bound",
    "group_outcomes",
    "read_observed_csv",
]

RECORD_FIELDS = ("tau_hat", "s1sq", "s0sq", "vhat_neyman", "vhat_sharp", "ci_lo", "ci_hi", "alpha")


class EstimationError(ValueError):
    pass


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p}")
    return NormalDist().inv_cdf(p)


@dataclass(frozen=True, eq=False)
class ObservedData:
    """Post-randomization view: assignment and one outcome per unit."""

    z: np.ndarray
    yobs: np.ndarray
    design: Design
    strata: tuple | None = None
    clusters: tuple | None = None
    unit_ids: tuple = ()

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim != 1 or not np.all((z == 0) | (z == 1)):
            raise EstimationError("z must be a binary vector")
        yobs = self.yobs
        if not (isinstance(yobs, np.ndarray) and yobs.dtype.kind == "f"):
            yobs = [(_arith.parse_decimal(v) if isinstance(v, str) else v) for v in yobs]
        if len(yobs) != len(z):
            raise EstimationError(f"z has length {len(z)} but yobs has {len(yobs)}")
        try:
            col = _arith.column(yobs)
        except ValueError as exc:
            raise EstimationError(str(exc)) from None
        object.__setattr__(self, "z", z.astype(np.int8))
        object.__setattr__(self, "yobs", col)
        if not self.unit_ids:
            object.__setattr__(self, "unit_ids", tuple(str(i + 1) for i in range(len(z))))
        lay = self.layout
        zg = lay.group_assignment(self.z)
        if zg is None:
            raise DesignError("assignment splits a cluster")
        for b in lay.blocks:
            got = int(zg[list(b.groups)].sum())
            if got != b.n1:
                where = f" in stratum {b.label!r}" if b.label is not None else ""
                raise DesignError(f"assignment treats {got}{where}; the design requires {b.n1}")

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def exact(self) -> bool:
        return self.yobs.dtype == object

    @property
    def layout(self) -> Layout:
        return build_layout(self.design, self.n, self.strata, self.clusters)


def observe(pop: FinitePopulation, z: Sequence[int], design: Design | None = None) -> ObservedData:
    """Reveal ``y1`` for treated and ``y0`` for control units."""
    z = np.asarray(z)
    if z.shape != (pop.n,):
        raise EstimationError(f"assignment has length {z.size}, population has {pop.n} units")
    if design is None:
        design = Design.complete(int(z.sum()))
    yobs = np.where(z == 1, pop.y1, pop.y0)
    return ObservedData(z, yobs if not pop.exact else list(yobs), design, pop.strata, pop.clusters, pop.unit_ids)


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate, variance estimates and normal-approximation CI.

    ``s1sq``/``s0sq`` are reported for single-block designs only
    (complete and cluster). ``vhat_neyman`` is ``None`` when some arm has
    fewer than two groups; ``ci`` is then ``None`` as well.
    """

    tau_hat: object
    ybar1_obs: object
    ybar0_obs: object
    s1sq: object
    s0sq: object
    vhat_neyman: object
    vhat_sharp: object
    ci: tuple[float, float] | None
    alpha: float
    design: str

    @property
    def variance_available(self) -> bool:
        return self.vhat_neyman is not None

    def to_record(self) -> dict:
        lo, hi = self.ci if self.ci is not None else (None, None)
        vals = dict(tau_hat=self.tau_hat, s1sq=self.s1sq, s0sq=self.s0sq,
                    vhat_neyman=self.vhat_neyman, vhat_sharp=self.vhat_sharp,
                    ci_lo=lo, ci_hi=hi, alpha=self.alpha)
        return {k: _arith.as_float(vals[k]) for k in RECORD_FIELDS}


def _group_means(values: np.ndarray, groups) -> list:
    if all(len(g) == 1 for g in groups):
        return [values[g[0]] for g in groups]
    exact = values.dtype == object
    out = []
    for g in groups:
        vals = values[list(g)]
        out.append(Fraction(sum(vals, Fraction(0)), len(g)) if exact else float(np.mean(vals)))
    return out


def group_outcomes(pop: FinitePopulation, layout: Layout) -> tuple[list, list]:
    """Potential outcomes at the layout's group level (cluster means)."""
    return _group_means(pop.y1, layout.groups), _group_means(pop.y0, layout.groups)


def _arm_values(values: list, zg: np.ndarray, block) -> tuple[list, list]:
    t = [values[g] for g in block.groups if zg[g] == 1]
    c = [values[g] for g in block.groups if zg[g] == 0]
    return t, c


def estimate(data: ObservedData, alpha: float = 0.05) -> EstimateReport:
    """Difference in means with Neyman-type and sharpened variance estimates."""
    if not 0.0 < alpha < 1.0:
        raise EstimationError(f"alpha must be in (0, 1), got {alpha}")
    lay = data.layout
    zg = lay.group_assignment(data.z)
    values = _group_means(data.yobs, lay.groups)
    exact = data.exact
    zero = Fraction(0) if exact else 0.0

    ybar1 = ybar0 = zero
    vhat, vsharp = zero, zero
    variance_ok = True
    arms = []
    for b in lay.blocks:
        t, c = _arm_values(values, zg, b)
        if not t or not c:
            raise EstimationError("an arm is empty; the difference in means is undefined")
        ybar1 += b.weight * _arith.mean(t)
        ybar0 += b.weight * _arith.mean(c)
        arms.append((b, t, c))
        if len(t) < 2 or len(c) < 2:
            variance_ok = False
            continue
        s1, s0 = _arith.var(t), _arith.var(c)
        term = s1 / len(t) + s0 / len(c)
        vhat += b.weight**2 * term
        bound = coupling_variance_bound(t, c)
        vsharp += b.weight**2 * (term - bound / b.size)
    tau_hat = ybar1 - ybar0

    s1sq = s0sq = None
    if len(arms) == 1:
        _, t, c = arms[0]
        s1sq = _arith.var(t) if len(t) >= 2 else None
        s0sq = _arith.var(c) if len(c) >= 2 else None

    if lay.design.kind == PAIRS:
        vhat = _pair_variance([t[0] - c[0] for _, t, c in arms])
        vsharp = None
    elif not variance_ok:
        vhat = vsharp = None
    else:
        vsharp = max(vsharp, zero)

    ci = None
    if vhat is not None:
        half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(float(vhat))
        ci = (float(tau_hat) - half, float(tau_hat) + half)
    return EstimateReport(tau_hat, ybar1, ybar0, s1sq, s0sq, vhat, vsharp, ci, alpha, lay.design.kind)


def _pair_variance(diffs: list):
    """Pair-difference estimator: sample variance of differences over K."""
    k = len(diffs)
    if k < 2:
        return None
    return _arith.var(diffs) / k


# -- population-level variances ----------------------------------------------


def neyman_true_variance(summary: PopulationSummary, design: Design):
    """Randomization variance under complete randomization:
    ``S1sq/n1 + S0sq/n0 - Stausq/n``."""
    if design.kind != COMPLETE:
        raise DesignError("neyman_true_variance covers complete randomization; use variance_by_design")
    n, n1 = summary.n, design.n1
    n0 = n - n1
    if not 1 <= n1 <= n - 1:
        raise DesignError(f"need 1 <= n1 <= n-1; got n1={n1}, n={n}")
    return summary.S1sq / n1 + summary.S0sq / n0 - summary.Stausq / n


def superpop_variance(model: SuperPopulationModel, n1: int, n0: int):
    """``V1/n1 + V0/n0``; correlation does not enter."""
    if n1 < 1 or n0 < 1:
        raise EstimationError("arm sizes must be at least 1")
    _, v1, v0, _ = model_moments(model)
    return v1 / n1 + v0 / n0


def _block_population(v1: list, v0: list, block) -> FinitePopulation:
    return FinitePopulation([v1[g] for g in block.groups], [v0[g] for g in block.groups])


def variance_by_design(pop: FinitePopulation, design: Design):
    """True randomization variance of the design's estimator.

    Sum over blocks of ``w_h**2 * (S1h/n1h + S0h/n0h - Stauh/n_h)``,
    computed on cluster means for cluster designs.
    """
    lay = build_layout(design, pop.n, pop.strata, pop.clusters)
    v1, v0 = group_outcomes(pop, lay)
    total = Fraction(0) if pop.exact else 0.0
    for b in lay.blocks:
        s = summarize(_block_population(v1, v0, b))
        total += b.weight**2 * (s.S1sq / b.n1 + s.S0sq / b.n0 - s.Stausq / b.size)
    return total


def conservative_gap(pop: FinitePopulation, design: Design):
    """Expected excess of ``vhat_neyman`` over the true variance.

    ``sum_h w_h**2 * Stau_h / n_h`` for blocked designs; for matched
    pairs the spread of pair-level effects, ``sum (tau_k - mean)**2 / (K (K-1))``.
    Returns ``None`` when the design's variance estimator is undefined.
    """
    lay = build_layout(design, pop.n, pop.strata, pop.clusters)
    v1, v0 = group_outcomes(pop, lay)
    if design.kind == PAIRS:
        k = len(lay.blocks)
        if k < 2:
            return None
        effects = [_arith.mean([v1[g] - v0[g] for g in b.groups]) for b in lay.blocks]
        return _arith.var(effects) / k
    total = Fraction(0) if pop.exact else 0.0
    for b in lay.blocks:
        if b.n1 < 2 or b.n0 < 2:
            return None
        s = summarize(_block_population(v1, v0, b))
        total += b.weight**2 * s.Stausq / b.size
    return total


# -- sharp bound on the effect variance ---------------------------------------


def sharp_Stau2_lower_bound(y1_marginal: Sequence, y0_marginal: Sequence):
    """Smallest (n-1)-divisor variance of ``y1 - y0`` over all pairings.

    Pairing both marginals in sorted order attains the minimum.
    """
    a, b = list(y1_marginal), list(y0_marginal)
    if len(a) != len(b):
        raise EstimationError(f"marginals differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise EstimationError("marginals need at least 2 values")
    if not (_arith.all_exact(a) and _arith.all_exact(b)):
        a, b = [float(x) for x in a], [float(x) for x in b]
    return _arith.var([x - y for x, y in zip(sorted(a), sorted(b))])


def coupling_variance_bound(treated: Sequence, control: Sequence):
    """Plug-in lower bound on the effect variance from two arm samples.

    Couples the empirical quantile functions of the arms (which may differ
    in size) and rescales the minimal variance of the difference by
    ``n/(n-1)``, ``n`` being the total number of units.
    """
    a, b = list(treated), list(control)
    exact = _arith.all_exact(a) and _arith.all_exact(b)
    if exact:
        a, b = sorted(Fraction(x) for x in a), sorted(Fraction(x) for x in b)
    else:
        a, b = sorted(float(x) for x in a), sorted(float(x) for x in b)
    n1, n0 = len(a), len(b)
    n = n1 + n0
    i = j = 0
    pos = 0  # current quantile level times n1*n0
    second = Fraction(0) if exact else 0.0
    while i < n1 and j < n0:
        end = min((i + 1) * n0, (j + 1) * n1)
        width = end - pos
        second += width * (a[i] - b[j]) ** 2
        pos = end
        if end == (i + 1) * n0:
            i += 1
        if end == (j + 1) * n1:
            j += 1
    mean_diff = _arith.mean(a) - _arith.mean(b)
    if exact:
        second = Fraction(second, n1 * n0)
    else:
        second = second / (n1 * n0)
    pop_var = second - mean_diff**2
    if not exact:
        pop_var = max(pop_var, 0.0)
    return pop_var * n / (n - 1)


def read_observed_csv(source, design: Design | None = None) -> ObservedData:
    """Read ``unit_id,z,yobs[,stratum][,cluster]``; design defaults to
    complete randomization with the observed number of treated units."""
    fh = open(source, newline="", encoding="utf-8") if isinstance(source, (str, os.PathLike)) else source
    try:
        reader = csv.reader(fh)
        header = [h.strip() for h in (next(reader, None) or [])]
        if header[:3] != ["unit_id", "z", "yobs"] or not set(header[3:]) <= {"stratum", "cluster"}:
            raise EstimationError("line 1: header must be unit_id,z,yobs[,stratum][,cluster]")
        ids, z, y = [], [], []
        extra = {h: [] for h in header[3:]}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise EstimationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            if row[1].strip() not in ("0", "1"):
                raise EstimationError(f"line {lineno}: z must be 0 or 1, got {row[1].strip()!r}")
            try:
                y.append(_arith.parse_decimal(row[2]))
            except ValueError as exc:
                raise EstimationError(f"line {lineno} (unit {row[0].strip()!r}): {exc}") from None
            ids.append(row[0].strip())
            z.append(int(row[1]))
            for h, cell in zip(header[3:], row[3:]):
                extra[h].append(cell.strip())
    finally:
        if fh is not source:
            fh.close()
    if len(z) < 2:
        raise EstimationError("observed data need at least 2 units")
    if design is None:
        design = Design.complete(sum(z))
    return ObservedData(np.array(z), y, design, _opt(extra.get("stratum")),
                        _opt(extra.get("cluster")), tuple(ids))


def _opt(labels):
    return tuple(labels) if labels is not None else None
