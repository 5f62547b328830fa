"""Numeric helpers shared by every module.

Values are either exact (``int`` / ``Fraction``) or binary floats. Exact
inputs stay exact through every reduction; float inputs use shifted
two-pass formulas so a constant column has variance exactly 0.
"""
from __future__ import annotations

import math
from fractions import Fraction
from functools import reduce
from numbers import Rational
from typing import Iterable, Sequence

import numpy as np


def parse_decimal(text: str) -> Fraction:
    """Parse a decimal numeral into an exact ``Fraction``.

    Rejects NaN / infinity tokens, which ``Fraction`` would otherwise
    report with a less helpful message.
    """
    token = text.strip()
    if not token:
        raise ValueError("empty numeric field")
    low = token.lower().lstrip("+-")
    if low in {"nan", "inf", "infinity"}:
        raise ValueError(f"non-finite value {token!r}")
    try:
        return Fraction(token)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a decimal number: {token!r}") from exc


def is_exact(x) -> bool:
    return isinstance(x, (Rational, np.integer)) and not isinstance(x, bool)


def all_exact(values: Iterable) -> bool:
    return all(is_exact(v) for v in values)


def to_exact(x) -> Fraction:
    if isinstance(x, np.integer):
        return Fraction(int(x))
    return Fraction(x)


def column(values: Sequence) -> np.ndarray:
    """Normalise a column: object array of Fractions if every entry is
    exact, otherwise a finite float64 array."""
    if isinstance(values, np.ndarray) and values.dtype.kind == "f":
        arr = values.astype(float, copy=True)
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ValueError(f"non-finite outcome at position {bad}")
        return arr
    vals = list(values)
    if vals and all_exact(vals):
        out = np.empty(len(vals), dtype=object)
        out[:] = [to_exact(v) for v in vals]
        return out
    arr = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"non-finite outcome at position {bad}")
    return arr


def _floaty(values) -> bool:
    return isinstance(values, np.ndarray) and values.dtype.kind == "f"


def mean(values) -> Fraction | float:
    vals = values if _floaty(values) else list(values)
    if not _floaty(vals) and all_exact(vals):
        return Fraction(sum(vals, Fraction(0)), len(vals))
    arr = np.asarray(vals, dtype=float)
    shift = arr[0]
    return float(shift + np.mean(arr - shift))


def var(values) -> Fraction | float:
    """Sample variance with divisor ``len - 1``."""
    vals = values if _floaty(values) else list(values)
    n = len(vals)
    if n < 2:
        raise ValueError("variance needs at least 2 values")
    if not _floaty(vals) and all_exact(vals):
        m = Fraction(sum(vals, Fraction(0)), n)
        return sum(((v - m) ** 2 for v in vals), Fraction(0)) / (n - 1)
    arr = np.asarray(vals, dtype=float)
    d = arr - arr[0]
    d = d - np.mean(d)
    return float(np.dot(d, d) / (n - 1))


def cov(x, y) -> Fraction | float:
    xs, ys = list(x), list(y)
    n = len(xs)
    if n != len(ys):
        raise ValueError("length mismatch")
    if n < 2:
        raise ValueError("covariance needs at least 2 values")
    if all_exact(xs) and all_exact(ys):
        mx = Fraction(sum(xs, Fraction(0)), n)
        my = Fraction(sum(ys, Fraction(0)), n)
        return sum(((a - mx) * (b - my) for a, b in zip(xs, ys)), Fraction(0)) / (n - 1)
    a = np.asarray(xs, dtype=float)
    b = np.asarray(ys, dtype=float)
    a = a - a[0]
    b = b - b[0]
    return float(np.dot(a - a.mean(), b - b.mean()) / (n - 1))


def common_denominator(values: Iterable[Fraction]) -> int:
    return reduce(math.lcm, (Fraction(v).denominator for v in values), 1)


def scale_to_ints(values: Sequence[Fraction], den: int) -> list[int]:
    """Multiply exact values by ``den`` (a multiple of every denominator)."""
    out = []
    for v in values:
        v = Fraction(v)
        out.append(v.numerator * (den // v.denominator))
    return out


def as_float(x) -> float | None:
    return None if x is None else float(x)


def rational_record(x) -> dict:
    """Serialisable form of a number: exact string + parts when exact."""
    if x is None:
        return {"exact": None, "float": None}
    if is_exact(x):
        f = Fraction(x)
        return {
            "exact": f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator),
            "numerator": f.numerator,
            "denominator": f.denominator,
            "float": float(f),
        }
    return {"exact": None, "float": float(x)}
