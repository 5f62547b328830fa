"""Finite populations of potential outcomes and super-population generators.

A :class:`FinitePopulation` holds both potential outcomes of every unit.
Columns are exact (object arrays of ``Fraction``) when every value is
rational, otherwise float64. Decimal text read from CSV is always exact.

Gaussian draws use the inverse-CDF transform: a PCG64 stream yields
53-bit integers ``k``, mapped to ``u = (k + 0.5) / 2**53`` in (0, 1) and
then to ``scipy.special.ndtri(u)``. The transform is fixed so that a seed
reproduces the same population on every platform numpy supports.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from . import _arith

__all__ = [
    "PopulationError",
    "Unit",
    "FinitePopulation",
    "PopulationSummary",
    "SuperPopulationModel",
    "summarize",
    "draw_population",
    "model_moments",
    "read_population_csv",
    "write_population_csv",
    "format_number",
]

GAUSSIAN = "bivariate-gaussian"
CONSTANT_EFFECT = "constant-effect"
TWO_POINT = "two-point"
MODEL_KINDS = (GAUSSIAN, CONSTANT_EFFECT, TWO_POINT)
# binary Y(0), effect 0 or 1 with equal mass, independent of Y(0)
DEFAULT_TWO_POINT = {
    (Fraction(0), Fraction(0)): Fraction(1, 4),
    (Fraction(1), Fraction(0)): Fraction(1, 4),
    (Fraction(1), Fraction(1)): Fraction(1, 4),
    (Fraction(2), Fraction(1)): Fraction(1, 4),
}


class PopulationError(ValueError):
    """Invalid population data (bad values, sizes or labels)."""


@dataclass(frozen=True)
class Unit:
    y1: object
    y0: object
    stratum: str | None = None
    cluster: str | None = None

    def __post_init__(self):
        for name in ("y1", "y0"):
            v = getattr(self, name)
            if not _arith.is_exact(v) and not math.isfinite(float(v)):
                raise PopulationError(f"{name} must be finite, got {v!r}")
        for name in ("stratum", "cluster"):
            label = getattr(self, name)
            if label is not None and str(label) == "":
                raise PopulationError(f"{name} label must be non-empty")


def _labels(values, name: str, n: int):
    if values is None:
        return None
    labels = tuple(None if v is None else str(v) for v in values)
    if len(labels) != n:
        raise PopulationError(f"{name} has {len(labels)} labels for {n} units")
    present = [lab is not None for lab in labels]
    if any(present) and not all(present):
        raise PopulationError(f"either every unit carries a {name} label or none does")
    if not any(present):
        return None
    if any(lab == "" for lab in labels):
        raise PopulationError(f"{name} labels must be non-empty")
    return labels


def _parse_column(values):
    if isinstance(values, np.ndarray) and values.dtype.kind == "f":
        return values
    return [(_arith.parse_decimal(v) if isinstance(v, str) else v) for v in values]


@dataclass(frozen=True, eq=False)
class FinitePopulation:
    """Ordered units with both potential outcomes.

    Parameters
    ----------
    y1, y0 : sequence of numbers
        Potential outcomes under treatment and control. ``int``,
        ``Fraction`` or decimal strings keep the population exact; any
        float switches both columns to float64.
    strata, clusters : sequence of str, optional
        Per-unit labels. Either all units are labelled or none.
    unit_ids : sequence of str, optional
        Identifiers, defaulting to ``"1" .. "n"``.
    """

    y1: np.ndarray
    y0: np.ndarray
    strata: tuple | None = None
    clusters: tuple | None = None
    unit_ids: tuple = field(default=())

    def __post_init__(self):
        y1, y0 = _parse_column(self.y1), _parse_column(self.y0)
        if len(y1) != len(y0):
            raise PopulationError(f"y1 has {len(y1)} values but y0 has {len(y0)}")
        n = len(y1)
        if n < 2:
            raise PopulationError("population requires n >= 2")
        try:
            c1, c0 = _arith.column(y1), _arith.column(y0)
        except ValueError as exc:
            raise PopulationError(str(exc)) from None
        if c1.dtype != c0.dtype:
            c1, c0 = c1.astype(float), c0.astype(float)
        object.__setattr__(self, "y1", c1)
        object.__setattr__(self, "y0", c0)
        object.__setattr__(self, "strata", _labels(self.strata, "stratum", n))
        object.__setattr__(self, "clusters", _labels(self.clusters, "cluster", n))
        ids = tuple(str(u) for u in self.unit_ids) or tuple(str(i + 1) for i in range(n))
        if len(ids) != n:
            raise PopulationError(f"{len(ids)} unit ids for {n} units")
        object.__setattr__(self, "unit_ids", ids)

    @classmethod
    def from_units(cls, units: Sequence[Unit], unit_ids: Sequence[str] = ()) -> "FinitePopulation":
        return cls(
            [u.y1 for u in units],
            [u.y0 for u in units],
            strata=[u.stratum for u in units],
            clusters=[u.cluster for u in units],
            unit_ids=tuple(unit_ids),
        )

    @property
    def n(self) -> int:
        return len(self.y1)

    @property
    def exact(self) -> bool:
        return self.y1.dtype == object

    @property
    def units(self) -> tuple[Unit, ...]:
        s = self.strata or (None,) * self.n
        c = self.clusters or (None,) * self.n
        return tuple(Unit(a, b, h, k) for a, b, h, k in zip(self.y1, self.y0, s, c))

    @cached_property
    def y1f(self) -> np.ndarray:
        return self.y1.astype(float)

    @cached_property
    def y0f(self) -> np.ndarray:
        return self.y0.astype(float)

    @property
    def effects(self) -> np.ndarray:
        return self.y1 - self.y0

    def take(self, index: Sequence[int]) -> "FinitePopulation":
        """Sub-population (or reordering) by unit index."""
        idx = list(index)
        pick = (lambda labels: None if labels is None else [labels[i] for i in idx])
        return FinitePopulation(
            list(self.y1[idx]),
            list(self.y0[idx]),
            strata=pick(self.strata),
            clusters=pick(self.clusters),
            unit_ids=[self.unit_ids[i] for i in idx],
        )

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        kind = "exact" if self.exact else "float"
        return f"FinitePopulation(n={self.n}, {kind})"


@dataclass(frozen=True)
class PopulationSummary:
    """Finite-population means and (n-1)-divisor variances.

    Values are ``Fraction`` when the population is exact, else ``float``.
    """

    n: int
    ybar1: object
    ybar0: object
    tau_S: object
    S1sq: object
    S0sq: object
    Stausq: object
    S10: object
    exact: bool

    def floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in self._fields}

    def to_dict(self) -> dict:
        out = {"n": self.n, "exact": self.exact}
        for k in self._fields:
            out[k] = _arith.rational_record(getattr(self, k))
        return out

    _fields = ("ybar1", "ybar0", "tau_S", "S1sq", "S0sq", "Stausq", "S10")


def summarize(pop: FinitePopulation) -> PopulationSummary:
    """All seven finite-population functionals, divisor n - 1."""
    y1, y0 = pop.y1, pop.y0
    ybar1, ybar0 = _arith.mean(y1), _arith.mean(y0)
    return PopulationSummary(
        n=pop.n,
        ybar1=ybar1,
        ybar0=ybar0,
        tau_S=ybar1 - ybar0,
        S1sq=_arith.var(y1),
        S0sq=_arith.var(y0),
        Stausq=_arith.var(pop.effects),
        S10=_arith.cov(y1, y0),
        exact=pop.exact,
    )


# -- super populations -------------------------------------------------------


@dataclass(frozen=True)
class SuperPopulationModel:
    """IID generator of (Y(1), Y(0)) pairs with known moments.

    Use the constructors :meth:`gaussian`, :meth:`constant_effect` and
    :meth:`two_point` rather than filling fields by hand.
    """

    kind: str
    mean1: float = 0.0
    mean0: float = 0.0
    var1: float = 1.0
    var0: float = 1.0
    rho: float = 0.0
    tau_shift: object = 0
    atoms: tuple = ()

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise PopulationError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.kind == TWO_POINT:
            if not self.atoms:
                raise PopulationError("two-point model needs a mass table")
            probs = [p for _, _, p in self.atoms]
            if any(p < 0 for p in probs):
                raise PopulationError("masses must be nonnegative")
            if _arith.all_exact(probs):
                total = sum(Fraction(p) for p in probs)
                bad = total != 1
            else:
                total = math.fsum(float(p) for p in probs)
                bad = abs(total - 1) > 1e-12
            if bad:
                raise PopulationError(f"masses must sum to 1, got {total}")
            return
        if self.var1 < 0 or self.var0 < 0:
            raise PopulationError("variances must be nonnegative")
        if not -1 <= self.rho <= 1:
            raise PopulationError("rho must lie in [-1, 1]")

    @classmethod
    def gaussian(cls, var1=1.0, var0=1.0, rho=0.0, mean1=0.0, mean0=0.0) -> "SuperPopulationModel":
        return cls(GAUSSIAN, mean1=mean1, mean0=mean0, var1=var1, var0=var0, rho=rho)

    @classmethod
    def constant_effect(cls, tau=0, var0=1.0, mean0=0.0) -> "SuperPopulationModel":
        """Y(0) Gaussian, Y(1) = Y(0) + tau exactly (draws are exact rationals)."""
        tau = _arith.parse_decimal(tau) if isinstance(tau, str) else tau
        return cls(CONSTANT_EFFECT, mean1=mean0 + tau, mean0=mean0, var1=var0,
                   var0=var0, rho=1.0, tau_shift=tau)

    @classmethod
    def two_point(cls, table: Mapping[tuple, object] | None = None) -> "SuperPopulationModel":
        """Discrete joint law from ``{(y1, y0): mass}``.

        Exact masses and support points give exact populations. Without a
        table, ``DEFAULT_TWO_POINT`` is used (tau = 1/2, Vtau = 1/4).
        """
        if table is None:
            table = DEFAULT_TWO_POINT
        atoms = tuple(
            (_num(y1), _num(y0), _num(p)) for (y1, y0), p in table.items()
        )
        return cls(TWO_POINT, atoms=atoms)

    @property
    def tau(self):
        return model_moments(self)[0]

    @property
    def Vtau(self):
        return model_moments(self)[3]

    def describe(self) -> dict:
        if self.kind == TWO_POINT:
            return {"kind": self.kind,
                    "atoms": [[str(a), str(b), str(p)] for a, b, p in self.atoms]}
        out = {"kind": self.kind, "mean0": _plain(self.mean0), "var0": _plain(self.var0)}
        if self.kind == GAUSSIAN:
            out.update(mean1=_plain(self.mean1), var1=_plain(self.var1), rho=_plain(self.rho))
        else:
            out["tau"] = str(self.tau_shift)
        return out


def _num(x):
    return _arith.parse_decimal(x) if isinstance(x, str) else x


def _plain(x):
    return str(x) if isinstance(x, Fraction) else x


def model_moments(model: SuperPopulationModel) -> tuple:
    """Closed-form ``(tau, V1, V0, Vtau)`` of a super-population model."""
    if model.kind == TWO_POINT:
        exact = all(_arith.all_exact(a) for a in model.atoms)
        zero = Fraction(0) if exact else 0.0
        e1 = sum((p * a for a, b, p in model.atoms), zero)
        e0 = sum((p * b for a, b, p in model.atoms), zero)
        v1 = sum((p * (a - e1) ** 2 for a, b, p in model.atoms), zero)
        v0 = sum((p * (b - e0) ** 2 for a, b, p in model.atoms), zero)
        vt = sum((p * (a - b - (e1 - e0)) ** 2 for a, b, p in model.atoms), zero)
        return e1 - e0, v1, v0, vt
    if model.kind == CONSTANT_EFFECT:
        return model.tau_shift, model.var0, model.var0, 0
    v1, v0, rho = model.var1, model.var0, model.rho
    vtau = v1 + v0 - 2 * rho * math.sqrt(v1 * v0)
    # rho = 1 with equal variances must give exactly 0, not -1e-16
    return model.mean1 - model.mean0, v1, v0, max(vtau, 0.0)


def standard_normals(rng: np.random.Generator, size) -> np.ndarray:
    """N(0, 1) draws by inverse CDF of open-interval uniforms."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return ndtri((k + 0.5) / 2.0**53)


def draw_population(model: SuperPopulationModel, n: int, rng: np.random.Generator) -> FinitePopulation:
    """Draw ``n`` IID units from ``model`` using ``rng``."""
    if n < 2:
        raise PopulationError("population requires n >= 2")
    if model.kind == GAUSSIAN:
        z = standard_normals(rng, (2, n))
        s1, s0 = math.sqrt(model.var1), math.sqrt(model.var0)
        rho = model.rho
        y0 = model.mean0 + s0 * z[0]
        y1 = model.mean1 + s1 * (rho * z[0] + math.sqrt(max(1.0 - rho * rho, 0.0)) * z[1])
        return FinitePopulation(y1, y0)
    if model.kind == CONSTANT_EFFECT:
        z = standard_normals(rng, n)
        y0 = [Fraction(float(v)) for v in model.mean0 + math.sqrt(model.var0) * z]
        tau = Fraction(model.tau_shift)
        return FinitePopulation([v + tau for v in y0], y0)
    probs = np.array([float(p) for _, _, p in model.atoms])
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    k = rng.integers(0, 2**53, size=n, dtype=np.int64)
    idx = np.searchsorted(cdf, (k + 0.5) / 2.0**53, side="right")
    return FinitePopulation([model.atoms[i][0] for i in idx], [model.atoms[i][1] for i in idx])


# -- CSV interchange ---------------------------------------------------------


def format_number(x) -> str:
    """Text form that parses back to the same value.

    Terminating rationals become plain decimals, other rationals ``p/q``,
    floats use ``repr``.
    """
    if not _arith.is_exact(x):
        return repr(float(x))
    f = Fraction(x)
    if f.denominator == 1:
        return str(f.numerator)
    d, twos, fives = f.denominator, 0, 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{f.numerator}/{f.denominator}"
    k = max(twos, fives)
    scaled = abs(f.numerator) * 10**k // f.denominator
    digits = str(scaled).rjust(k + 1, "0")
    sign = "-" if f < 0 else ""
    return f"{sign}{digits[:-k]}.{digits[-k:]}"


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    return source


def read_population_csv(source) -> FinitePopulation:
    """Read ``unit_id,y1,y0[,stratum][,cluster]`` into an exact population.

    Errors name the 1-based line of the offending row.
    """
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise PopulationError("population requires n >= 2 (file is empty)")
        header = [h.strip() for h in header]
        if header[:3] != ["unit_id", "y1", "y0"] or not set(header[3:]) <= {"stratum", "cluster"}:
            raise PopulationError(
                "line 1: header must be unit_id,y1,y0[,stratum][,cluster]; got " + ",".join(header))
        ids, y1, y0 = [], [], []
        extra = {h: [] for h in header[3:]}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PopulationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                a = _arith.parse_decimal(row[1])
                b = _arith.parse_decimal(row[2])
            except ValueError as exc:
                raise PopulationError(f"line {lineno} (unit {row[0].strip()!r}): {exc}") from None
            for h, cell in zip(header[3:], row[3:]):
                if not cell.strip():
                    raise PopulationError(f"line {lineno}: empty {h} label")
                extra[h].append(cell.strip())
            ids.append(row[0].strip())
            y1.append(a)
            y0.append(b)
    finally:
        if fh is not source:
            fh.close()
    return FinitePopulation(y1, y0, strata=extra.get("stratum"),
                            clusters=extra.get("cluster"), unit_ids=ids)


def write_population_csv(pop: FinitePopulation, target=None) -> str:
    """Write ``pop`` as CSV; returns the text (also written to ``target``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["unit_id", "y1", "y0"]
    if pop.strata is not None:
        header.append("stratum")
    if pop.clusters is not None:
        header.append("cluster")
    w.writerow(header)
    for i in range(pop.n):
        row = [pop.unit_ids[i], format_number(pop.y1[i]), format_number(pop.y0[i])]
        if pop.strata is not None:
            row.append(pop.strata[i])
        if pop.clusters is not None:
            row.append(pop.clusters[i])
        w.writerow(row)
    text = buf.getvalue()
    if target is not None:
        if isinstance(target, (str, os.PathLike)):
            with open(target, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        else:
            target.write(text)
    return text


def population_from_marginals(y1: Iterable, y0: Iterable) -> FinitePopulation:
    """Pair two marginals in the given order (helper for coupling checks)."""
    return FinitePopulation(list(y1), list(y0))
