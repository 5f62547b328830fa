"""Exact moments of the difference in means over the whole assignment support.

For exact populations every group value is scaled to an integer by the
common denominator ``D`` and every design coefficient ``w_h / n1h``,
``w_h / n0h`` by a common multiplier ``L``. Per assignment the estimator is
then an integer ``T`` with ``tau_hat = T / (L * D)``, and the per-arm
sample variances are integers ``n q - t**2`` over known denominators, so
all reductions are sums of Python ints. Fractions appear only when the
final moments are formed.

Reductions run over fixed rank chunks and are merged in chunk order, so
the result does not depend on how many workers process the chunks.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import _arith
from .design import (
    COMPLETE,
    PAIRS,
    DEFAULT_CAP,
    Design,
    DesignError,
    Layout,
    SupportTooLarge,
    build_layout,
    enumerate_assignments,
    iter_block_combinations,
    sample_group_assignments,
)
from .estimator import (
    ObservedData,
    conservative_gap,
    group_outcomes,
    neyman_true_variance,
    variance_by_design,
)
from .population import FinitePopulation, summarize

__all__ = [
    "ResidualVectors",
    "EnumerationReport",
    "FRTResult",
    "enumerate_moments",
    "verify_residual_identity",
    "frt_exact",
    "frt_monte_carlo",
    "frt_rejection_rate",
    "CHUNK",
]

CHUNK = 1 << 15
FLOAT_RTOL = 1e-9
ABS_DIFF_MEANS = "abs-diff-means"


# -- streaming engine ---------------------------------------------------------


class _Engine:
    """Per-assignment statistics for one (layout, group outcomes) pair."""

    def __init__(self, layout: Layout, v1: Sequence, v0: Sequence, exact: bool,
                 center: bool = False):
        self.layout = layout
        self.exact = exact
        self.pairs = layout.design.kind == PAIRS
        self.shift = 0
        blocks = layout.blocks
        if exact:
            den = _arith.common_denominator(list(v1) + list(v0))
            coefs = [b.weight / b.n1 for b in blocks] + [b.weight / b.n0 for b in blocks]
            mult = _arith.common_denominator(coefs)
            self.den, self.mult = den, mult
            V1 = _arith.scale_to_ints(v1, den)
            V0 = _arith.scale_to_ints(v0, den)
            self.a = [int(mult * b.weight / b.n1) for b in blocks]
            self.b = [int(mult * b.weight / b.n0) for b in blocks]
        else:
            self.den, self.mult = 1, 1
            V1 = [float(x) for x in v1]
            V0 = [float(x) for x in v0]
            if center:
                # tau_hat moves by a constant; moments stay stable
                m1, m0 = math.fsum(V1) / len(V1), math.fsum(V0) / len(V0)
                self.shift = m1 - m0
                V1 = [x - m1 for x in V1]
                V0 = [x - m0 for x in V0]
            self.a = [float(b.weight) / b.n1 for b in blocks]
            self.b = [float(b.weight) / b.n0 for b in blocks]
        self.v1 = [[V1[g] for g in b.groups] for b in blocks]
        self.v0 = [[V0[g] for g in b.groups] for b in blocks]
        if exact:
            self.c1, self.c0 = self.v1, self.v0
        else:
            # centre within blocks before forming n*q - t**2
            self.c1 = [[x - math.fsum(vs) / len(vs) for x in vs] for vs in self.v1]
            self.c0 = [[x - math.fsum(vs) / len(vs) for x in vs] for vs in self.v0]
        self.tot_v0 = [sum(vs) for vs in self.v0]
        self.tot_c0 = [sum(vs) for vs in self.c0]
        self.tot_q0 = [sum(x * x for x in vs) for vs in self.c0]

    def block_stats(self, h: int, combo: tuple[int, ...]):
        """(T_h, X1_h, X0_h, pair difference) for treated positions ``combo``."""
        blk = self.layout.blocks[h]
        v1, v0, c1, c0 = self.v1[h], self.v0[h], self.c1[h], self.c0[h]
        t1 = sum(v1[p] for p in combo)
        t0 = self.tot_v0[h] - sum(v0[p] for p in combo)
        T = self.a[h] * t1 - self.b[h] * t0
        u1 = sum(c1[p] for p in combo)
        q1 = sum(c1[p] * c1[p] for p in combo)
        u0 = self.tot_c0[h] - sum(c0[p] for p in combo)
        q0 = self.tot_q0[h] - sum(c0[p] * c0[p] for p in combo)
        X1 = blk.n1 * q1 - u1 * u1
        X0 = blk.n0 * q0 - u0 * u0
        d = None
        if self.pairs:
            d = t1 - t0
        return T, X1, X0, d

    def iter_stats(self, start: int, stop: int):
        """Yield (T, [X1_h], [X0_h], pair numerator) per assignment."""
        nb = len(self.layout.blocks)
        prev = [None] * nb
        cache = [None] * nb
        for combos in iter_block_combinations(self.layout, start, stop):
            for h in range(nb):
                if combos[h] != prev[h]:
                    cache[h] = self.block_stats(h, combos[h])
                    prev[h] = combos[h]
            T = sum(c[0] for c in cache)
            P = None
            if self.pairs:
                ds = [c[3] for c in cache]
                s = sum(ds)
                P = nb * sum(x * x for x in ds) - s * s
            yield T, cache, P

    def statistics(self, start: int, stop: int) -> list:
        return [T for T, _, _ in self.iter_stats(start, stop)]

    def first_pass(self, start: int, stop: int):
        nb = len(self.layout.blocks)
        zero = 0 if self.exact else 0.0
        count, sT, sTT, sP = 0, zero, zero, zero
        sX1, sX0 = [zero] * nb, [zero] * nb
        for T, cache, P in self.iter_stats(start, stop):
            count += 1
            sT += T
            sTT += T * T
            for h in range(nb):
                sX1[h] += cache[h][1]
                sX0[h] += cache[h][2]
            if P is not None:
                sP += P
        return count, sT, sTT, sX1, sX0, sP

    def second_pass(self, start: int, stop: int, total: int, sT):
        """Sum of squared deviations, scaled by total**2 when exact."""
        acc = 0 if self.exact else 0.0
        if self.exact:
            for T, _, _ in self.iter_stats(start, stop):
                dev = total * T - sT
                acc += dev * dev
        else:
            mean = sT / total
            for T, _, _ in self.iter_stats(start, stop):
                acc += (T - mean) ** 2
        return acc


def _first_chunk(args):
    layout, v1, v0, exact, start, stop = args
    return _Engine(layout, v1, v0, exact, center=True).first_pass(start, stop)


def _second_chunk(args):
    layout, v1, v0, exact, start, stop, total, sT = args
    return _Engine(layout, v1, v0, exact, center=True).second_pass(start, stop, total, sT)


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _chunks(total: int, chunk: int):
    return [(s, min(s + chunk, total)) for s in range(0, total, chunk)]


# -- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualVectors:
    """Deviations of each potential outcome from its finite-population mean."""

    U: tuple
    W: tuple

    @classmethod
    def from_population(cls, pop: FinitePopulation) -> "ResidualVectors":
        s = summarize(pop)
        return cls(tuple(y - s.ybar1 for y in pop.y1), tuple(y - s.ybar0 for y in pop.y0))

    def sums(self):
        if _arith.all_exact(self.U) and _arith.all_exact(self.W):
            return sum(self.U, Fraction(0)), sum(self.W, Fraction(0))
        return math.fsum(self.U), math.fsum(self.W)


@dataclass(frozen=True)
class EnumerationReport:
    """Exact conditional moments of the design's estimator.

    ``neyman_formula_value`` comes from population summaries alone;
    ``var_tau_hat`` from enumeration. ``f_S`` is their difference.
    Moments of the arm variances are filled for single-block designs.
    """

    design: dict
    support_size: int
    exact: bool
    estimand: object
    mean_tau_hat: object
    var_tau_hat: object
    var_tau_hat_two_pass: object
    mean_s1sq: object
    mean_s0sq: object
    S1sq: object
    S0sq: object
    Stausq: object
    neyman_formula_value: object
    f_S: object
    mean_vhat_neyman: object
    expected_gap: object
    # largest |outcome|; the rounding floor for location comparisons
    outcome_scale: float = 0.0

    def _same(self, a, b, scale: float = 0.0) -> bool:
        if self.exact:
            return a == b
        scale = max(abs(float(a)), abs(float(b)), abs(float(self.var_tau_hat)), scale, 1e-300)
        return abs(float(a) - float(b)) <= FLOAT_RTOL * scale

    def checks(self) -> dict[str, bool]:
        out = {
            "f_S_zero": self._same(self.neyman_formula_value, self.var_tau_hat),
            "mean_tau_hat_equals_estimand": self._same(self.mean_tau_hat, self.estimand, self.outcome_scale),
            "one_pass_equals_two_pass": self._same(self.var_tau_hat, self.var_tau_hat_two_pass),
        }
        if self.mean_s1sq is not None:
            out["mean_s1sq_equals_S1sq"] = self._same(self.mean_s1sq, self.S1sq)
            out["mean_s0sq_equals_S0sq"] = self._same(self.mean_s0sq, self.S0sq)
        if self.mean_vhat_neyman is not None and self.expected_gap is not None:
            out["vhat_gap_equals_effect_term"] = self._same(
                self.mean_vhat_neyman - self.var_tau_hat, self.expected_gap)
        return out

    @property
    def ok(self) -> bool:
        return all(self.checks().values())

    def to_dict(self) -> dict:
        out = {"design": self.design, "support_size": self.support_size, "exact": self.exact}
        for name in ("estimand", "mean_tau_hat", "var_tau_hat", "var_tau_hat_two_pass",
                     "mean_s1sq", "mean_s0sq", "S1sq", "S0sq", "Stausq",
                     "neyman_formula_value", "f_S", "mean_vhat_neyman", "expected_gap"):
            out[name] = _arith.rational_record(getattr(self, name))
        out["checks"] = self.checks()
        out["ok"] = self.ok
        return out


def enumerate_moments(pop: FinitePopulation, design: Design, cap: int = DEFAULT_CAP,
                      workers: int = 1, chunk: int = CHUNK) -> EnumerationReport:
    """Exhaust the support of ``design`` and collect exact moments.

    Raises :class:`~designlab.design.SupportTooLarge` if the support
    exceeds ``cap``.
    """
    lay = build_layout(design, pop.n, pop.strata, pop.clusters)
    K = lay.support_size
    if K > cap:
        raise SupportTooLarge(K, cap, lay.support_formula)
    v1, v0 = group_outcomes(pop, lay)
    exact = pop.exact
    spans = _chunks(K, chunk)
    firsts = _map(_first_chunk, [(lay, v1, v0, exact, s, e) for s, e in spans], workers)
    count = sum(f[0] for f in firsts)
    sT = _reduce_add([f[1] for f in firsts], exact)
    sTT = _reduce_add([f[2] for f in firsts], exact)
    nb = len(lay.blocks)
    sX1 = [_reduce_add([f[3][h] for f in firsts], exact) for h in range(nb)]
    sX0 = [_reduce_add([f[4][h] for f in firsts], exact) for h in range(nb)]
    sP = _reduce_add([f[5] for f in firsts], exact)
    assert count == K
    seconds = _map(_second_chunk, [(lay, v1, v0, exact, s, e, K, sT) for s, e in spans], workers)
    sDev = _reduce_add(seconds, exact)

    eng = _Engine(lay, v1, v0, exact, center=True)
    scale = eng.mult * eng.den
    if exact:
        mean_t = Fraction(sT, K * scale)
        var_t = Fraction(K * sTT - sT * sT, K * K * scale * scale)
        var_two = Fraction(sDev, K**3 * scale * scale)
        cell = lambda num, den: Fraction(num, den)  # noqa: E731
        d2 = eng.den**2
    else:
        centred_mean = sT / K
        mean_t = centred_mean + eng.shift
        var_t = sTT / K - centred_mean**2
        var_two = sDev / K
        cell = lambda num, den: num / den  # noqa: E731
        d2 = 1

    mean_vhat = None
    if design.kind == PAIRS:
        kp = nb
        if kp >= 2:
            mean_vhat = cell(sP, K * kp * kp * (kp - 1) * d2)
    elif all(b.n1 >= 2 and b.n0 >= 2 for b in lay.blocks):
        mean_vhat = 0 if exact else 0.0
        for h, b in enumerate(lay.blocks):
            w2 = b.weight**2 if exact else float(b.weight) ** 2
            mean_vhat += w2 * (cell(sX1[h], K * b.n1**2 * (b.n1 - 1) * d2)
                               + cell(sX0[h], K * b.n0**2 * (b.n0 - 1) * d2))

    mean_s1 = mean_s0 = S1 = S0 = St = None
    if nb == 1:
        b = lay.blocks[0]
        gpop = FinitePopulation(list(v1), list(v0))
        s = summarize(gpop)
        S1, S0, St = s.S1sq, s.S0sq, s.Stausq
        if b.n1 >= 2:
            mean_s1 = cell(sX1[0], K * b.n1 * (b.n1 - 1) * d2)
        if b.n0 >= 2:
            mean_s0 = cell(sX0[0], K * b.n0 * (b.n0 - 1) * d2)
        estimand = s.tau_S
        formula = neyman_true_variance(s, Design.complete(b.n1))
    else:
        s = summarize(pop)
        estimand = s.tau_S
        formula = variance_by_design(pop, design)
    if mean_s1 is None:
        mean_s0 = None
    return EnumerationReport(
        design=design.describe(),
        support_size=K,
        exact=exact,
        estimand=estimand,
        mean_tau_hat=mean_t,
        var_tau_hat=var_t,
        var_tau_hat_two_pass=var_two,
        mean_s1sq=mean_s1,
        mean_s0sq=mean_s0,
        S1sq=S1,
        S0sq=S0,
        Stausq=St,
        neyman_formula_value=formula,
        f_S=formula - var_t,
        mean_vhat_neyman=mean_vhat,
        expected_gap=conservative_gap(pop, design),
        outcome_scale=float(max(np.max(np.abs(pop.y1f)), np.max(np.abs(pop.y0f)))),
    )


def _reduce_add(parts, exact):
    if exact:
        return sum(parts)
    return math.fsum(parts)


# -- residual identity --------------------------------------------------------


def verify_residual_identity(pop: FinitePopulation, design: Design,
                             residuals: ResidualVectors | None = None,
                             cap: int = DEFAULT_CAP) -> bool:
    """Check, assignment by assignment, that the estimation error equals
    ``sum(z*U)/n1 - sum((1-z)*W)/n0``.

    ``residuals`` defaults to the population's own; pass altered vectors
    to confirm the check can fail.
    """
    if design.kind != COMPLETE:
        raise DesignError("the residual identity is stated for complete randomization")
    res = residuals or ResidualVectors.from_population(pop)
    s = summarize(pop)
    n1 = design.n1
    n0 = pop.n - n1
    exact = pop.exact and _arith.all_exact(res.U) and _arith.all_exact(res.W)
    for z in enumerate_assignments(design, pop, cap):
        t = [i for i in range(pop.n) if z[i]]
        c = [i for i in range(pop.n) if not z[i]]
        lhs = _arith.mean(pop.y1[t]) - _arith.mean(pop.y0[c]) - s.tau_S
        if exact:
            rhs = (sum((res.U[i] for i in t), Fraction(0)) / n1
                   - sum((res.W[i] for i in c), Fraction(0)) / n0)
            if lhs != rhs:
                return False
        else:
            rhs = math.fsum(float(res.U[i]) for i in t) / n1 - math.fsum(float(res.W[i]) for i in c) / n0
            scale = max(abs(float(lhs)), abs(rhs), float(abs(s.ybar1)) + float(abs(s.ybar0)), 1e-300)
            if abs(float(lhs) - rhs) > FLOAT_RTOL * scale:
                return False
    return True


# -- Fisher randomization test ------------------------------------------------


@dataclass(frozen=True)
class FRTResult:
    """p-value of the sharp-null randomization test.

    Exact tests carry ``se = 0`` and a ``Fraction`` p-value.
    """

    p_value: object
    statistic: float
    method: str
    count: int
    se: float = 0.0

    def to_dict(self) -> dict:
        return {"p_value": _arith.rational_record(self.p_value), "statistic": self.statistic,
                "method": self.method, "count": self.count, "se": self.se}


def _null_population(data: ObservedData) -> FinitePopulation:
    y = list(data.yobs)
    return FinitePopulation(y, y, strata=data.strata, clusters=data.clusters)


def _null_statistics(data: ObservedData, design: Design, statistic, cap: int):
    """Statistic for every assignment in the support, and the observed one."""
    pop = _null_population(data)
    lay = build_layout(design, pop.n, pop.strata, pop.clusters)
    K = lay.support_size
    if K > cap:
        raise SupportTooLarge(K, cap, lay.support_formula)
    if statistic == ABS_DIFF_MEANS:
        v1, v0 = group_outcomes(pop, lay)
        eng = _Engine(lay, v1, v0, pop.exact)
        stats = [abs(T) for T in eng.statistics(0, K)]
        zg = lay.group_assignment(data.z)
        combos = []
        for b in lay.blocks:
            combos.append(tuple(p for p, g in enumerate(b.groups) if zg[g] == 1))
        obs = abs(sum(eng.block_stats(h, c)[0] for h, c in enumerate(combos)))
        scale = eng.mult * eng.den
        return stats, obs, pop.exact, scale
    y = np.asarray(data.yobs)
    stats = [float(statistic(y, z)) for z in enumerate_assignments(design, pop, cap)]
    return stats, float(statistic(y, data.z)), False, 1


def _tie_floor(obs, stats, exact):
    if exact:
        return obs
    top = max(max(abs(s) for s in stats), abs(obs), 1e-300)
    return obs - 1e-10 * top


def frt_exact(data: ObservedData, design: Design | None = None,
              statistic: str | Callable = ABS_DIFF_MEANS, cap: int = DEFAULT_CAP) -> FRTResult:
    """Exact p-value: share of assignments at least as extreme as observed.

    Under the sharp null every unit's missing outcome equals its observed
    one, so the statistic can be recomputed for every assignment.
    """
    design = design or data.design
    stats, obs, exact, scale = _null_statistics(data, design, statistic, cap)
    floor = _tie_floor(obs, stats, exact)
    hits = sum(1 for s in stats if s >= floor)
    return FRTResult(Fraction(hits, len(stats)), float(obs) / scale, "exact", len(stats))


def frt_rejection_rate(data: ObservedData, alpha, design: Design | None = None,
                       cap: int = DEFAULT_CAP) -> Fraction:
    """P(p <= alpha) over the randomization distribution under the sharp null.

    Treats every assignment in the support as the realised one and
    returns the exact share whose p-value is at most ``alpha``.
    """
    design = design or data.design
    stats, _, exact, _ = _null_statistics(data, design, ABS_DIFF_MEANS, cap)
    level = _arith.parse_decimal(repr(alpha)) if isinstance(alpha, float) else Fraction(alpha)
    K = len(stats)
    ordered = sorted(stats)
    rejected = 0
    for s in stats:
        floor = _tie_floor(s, stats, exact)
        # number of statistics >= floor
        lo, hi = 0, K
        while lo < hi:
            mid = (lo + hi) // 2
            if ordered[mid] >= floor:
                hi = mid
            else:
                lo = mid + 1
        if Fraction(K - lo, K) <= level:
            rejected += 1
    return Fraction(rejected, K)


def frt_monte_carlo(data: ObservedData, rng: np.random.Generator, draws: int = 10_000,
                    design: Design | None = None, statistic: str | Callable = ABS_DIFF_MEANS,
                    batch: int = 8192) -> FRTResult:
    """Monte Carlo p-value ``(1 + hits) / (1 + draws)`` with binomial SE."""
    if draws < 100:
        raise ValueError("use at least 100 draws")
    design = design or data.design
    pop = _null_population(data)
    lay = build_layout(design, pop.n, pop.strata, pop.clusters)
    v, _ = group_outcomes(pop, lay)
    v = np.asarray([float(x) for x in v])
    coef_t = np.zeros(len(lay.groups))
    coef_c = np.zeros(len(lay.groups))
    for b in lay.blocks:
        coef_t[list(b.groups)] = float(b.weight) / b.n1
        coef_c[list(b.groups)] = float(b.weight) / b.n0
    y = np.asarray(data.yobs)

    def stat_rows(zg: np.ndarray) -> np.ndarray:
        if statistic == ABS_DIFF_MEANS:
            return np.abs(zg @ (coef_t * v) - (1 - zg) @ (coef_c * v))
        unit_group = np.empty(lay.n, dtype=np.intp)
        for g, members in enumerate(lay.groups):
            unit_group[list(members)] = g
        return np.array([float(statistic(y, row[unit_group])) for row in zg])

    obs = float(stat_rows(lay.group_assignment(data.z)[None, :].astype(float))[0])
    floor = obs - 1e-10 * max(float(np.sum(np.abs((coef_t + coef_c) * v))), abs(obs), 1e-300)
    hits = 0
    done = 0
    while done < draws:
        size = min(batch, draws - done)
        s = stat_rows(sample_group_assignments(lay, rng, size).astype(float))
        hits += int(np.count_nonzero(s >= floor))
        done += size
    p = (1 + hits) / (1 + draws)
    se = math.sqrt(p * (1 - p) / draws)
    return FRTResult(p, obs, "monte-carlo", draws, se)
