"""Assignment mechanisms with fixed margins.

Every design is reduced to a :class:`Layout`: units are grouped (clusters,
or one group per unit) and groups are partitioned into blocks (strata,
pairs, or a single block). Inside each block exactly ``n1`` groups are
treated, uniformly over all subsets. The support is the cartesian product
of the per-block subsets, enumerated in lexicographic order of the treated
indices with the last block varying fastest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "DesignError",
    "SupportTooLarge",
    "Design",
    "Layout",
    "Block",
    "DEFAULT_CAP",
    "build_layout",
    "support_size",
    "assignment_pmf",
    "enumerate_assignments",
    "iter_block_combinations",
    "unrank_combination",
    "rank_combination",
    "sample_assignment",
    "sample_assignments",
    "sample_group_assignments",
]

DEFAULT_CAP = 10**7

COMPLETE = "complete"
STRATIFIED = "stratified"
PAIRS = "matched-pairs"
CLUSTER = "cluster"
DESIGN_KINDS = (COMPLETE, STRATIFIED, PAIRS, CLUSTER)


class DesignError(ValueError):
    """Design incompatible with the population (or internally invalid)."""


class SupportTooLarge(DesignError):
    """Raised when exhaustive enumeration would exceed the cap."""

    def __init__(self, size: int, cap: int, formula: str | None = None):
        self.size = size
        self.cap = cap
        self.formula = formula
        count = f"{formula} = {size}" if formula else str(size)
        super().__init__(
            f"assignment support has {count} elements, above the cap of {cap}; "
            "raise the cap or use a Monte Carlo method")


@dataclass(frozen=True)
class Design:
    """A fixed-margin randomization design.

    Build with :meth:`complete`, :meth:`stratified`, :meth:`matched_pairs`
    or :meth:`cluster`.
    """

    kind: str
    n1: int | None = None
    n1_by_stratum: tuple | None = None
    m1: int | None = None

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise DesignError(f"unknown design kind {self.kind!r}; expected one of {DESIGN_KINDS}")
        if self.kind == COMPLETE and (self.n1 is None or self.n1 < 1):
            raise DesignError("complete design needs n1 >= 1")
        if self.kind == STRATIFIED and not self.n1_by_stratum:
            raise DesignError("stratified design needs a per-stratum n1 table")
        if self.kind == CLUSTER and (self.m1 is None or self.m1 < 1):
            raise DesignError("cluster design needs m1 >= 1")

    @classmethod
    def complete(cls, n1: int) -> "Design":
        return cls(COMPLETE, n1=int(n1))

    @classmethod
    def stratified(cls, n1_by_stratum: Mapping[str, int]) -> "Design":
        table = tuple((str(k), int(v)) for k, v in n1_by_stratum.items())
        return cls(STRATIFIED, n1_by_stratum=table)

    @classmethod
    def matched_pairs(cls) -> "Design":
        return cls(PAIRS)

    @classmethod
    def cluster(cls, m1: int) -> "Design":
        return cls(CLUSTER, m1=int(m1))

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == COMPLETE:
            out["n1"] = self.n1
        elif self.kind == STRATIFIED:
            out["n1_by_stratum"] = dict(self.n1_by_stratum)
        elif self.kind == CLUSTER:
            out["m1"] = self.m1
        return out


@dataclass(frozen=True)
class Block:
    label: str | None
    groups: tuple[int, ...]
    n1: int
    weight: Fraction

    @property
    def size(self) -> int:
        return len(self.groups)

    @property
    def n0(self) -> int:
        return len(self.groups) - self.n1


@dataclass(frozen=True)
class Layout:
    """Grouping of units (``groups``) and of groups into ``blocks``.

    ``weight`` of a block is its share of the estimand: ``n_h / n`` for
    strata and pairs, 1 for a single block.
    """

    design: Design
    n: int
    groups: tuple[tuple[int, ...], ...]
    blocks: tuple[Block, ...]

    @property
    def support_size(self) -> int:
        return math.prod(math.comb(b.size, b.n1) for b in self.blocks)

    @property
    def support_formula(self) -> str:
        """Support size as a product of binomials, e.g. ``C(30,15)``."""
        parts = [f"C({b.size},{b.n1})" for b in self.blocks]
        if len(parts) > 4:
            return f"{parts[0]} x ... ({len(parts)} blocks)"
        return " x ".join(parts)

    @property
    def clustered(self) -> bool:
        return self.design.kind == CLUSTER

    def unit_assignment(self, treated_groups: Sequence[int]) -> np.ndarray:
        z = np.zeros(self.n, dtype=np.int8)
        for g in treated_groups:
            z[list(self.groups[g])] = 1
        return z

    def group_assignment(self, z: Sequence[int]) -> np.ndarray | None:
        """Group-level vector, or ``None`` if ``z`` splits a group."""
        z = np.asarray(z)
        if not self.clustered:
            return z.astype(np.int8)
        out = np.empty(len(self.groups), dtype=np.int8)
        for g, members in enumerate(self.groups):
            vals = z[list(members)]
            if np.any(vals != vals[0]):
                return None
            out[g] = vals[0]
        return out


def _first_appearance(labels: Sequence[str]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        out.setdefault(lab, []).append(i)
    return out


def build_layout(design: Design, n: int, strata=None, clusters=None) -> Layout:
    """Check ``design`` against unit labels and return its layout."""
    singletons = tuple((i,) for i in range(n))
    if design.kind == COMPLETE:
        if not 1 <= design.n1 <= n - 1:
            raise DesignError(f"complete design needs 1 <= n1 <= n-1; got n1={design.n1}, n={n}")
        return Layout(design, n, singletons,
                      (Block(None, tuple(range(n)), design.n1, Fraction(1)),))
    if design.kind in (STRATIFIED, PAIRS):
        if strata is None:
            raise DesignError(f"{design.kind} design needs stratum labels")
        by_label = _first_appearance(strata)
        blocks = []
        if design.kind == STRATIFIED:
            table = dict(design.n1_by_stratum)
            missing = set(by_label) - set(table)
            extra = set(table) - set(by_label)
            if missing or extra:
                raise DesignError(
                    f"stratum tables disagree: unlabelled in design {sorted(missing)}, "
                    f"absent from population {sorted(extra)}")
            for lab, members in by_label.items():
                n1h = table[lab]
                if not 1 <= n1h <= len(members) - 1:
                    raise DesignError(
                        f"stratum {lab!r}: need 1 <= n1 <= n_h-1; got n1={n1h}, n_h={len(members)}")
                blocks.append(Block(lab, tuple(members), n1h, Fraction(len(members), n)))
        else:
            for lab, members in by_label.items():
                if len(members) != 2:
                    raise DesignError(f"pair {lab!r} has {len(members)} units; matched pairs need 2")
                blocks.append(Block(lab, tuple(members), 1, Fraction(2, n)))
        return Layout(design, n, singletons, tuple(blocks))
    if clusters is None:
        raise DesignError("cluster design needs cluster labels")
    by_label = _first_appearance(clusters)
    groups = tuple(tuple(m) for m in by_label.values())
    m = len(groups)
    if not 1 <= design.m1 <= m - 1:
        raise DesignError(f"cluster design needs 1 <= m1 <= m-1; got m1={design.m1}, m={m}")
    return Layout(design, n, groups, (Block(None, tuple(range(m)), design.m1, Fraction(1)),))


def _layout_for(design: Design, pop) -> Layout:
    return build_layout(design, pop.n, pop.strata, pop.clusters)


def support_size(design: Design, pop) -> int:
    return _layout_for(design, pop).support_size


def assignment_pmf(design: Design, pop, z: Sequence[int]) -> Fraction:
    """Exact probability of ``z``; 0 outside the support."""
    lay = _layout_for(design, pop)
    z = np.asarray(z)
    if z.shape != (pop.n,) or not np.all((z == 0) | (z == 1)):
        return Fraction(0)
    zg = lay.group_assignment(z)
    if zg is None:
        return Fraction(0)
    for b in lay.blocks:
        if int(zg[list(b.groups)].sum()) != b.n1:
            return Fraction(0)
    return Fraction(1, lay.support_size)


# -- combinatorial number system --------------------------------------------


def unrank_combination(n: int, k: int, rank: int) -> tuple[int, ...]:
    """The ``rank``-th k-subset of range(n) in lexicographic order."""
    if not 0 <= rank < math.comb(n, k):
        raise IndexError(f"rank {rank} outside [0, C({n},{k}))")
    out = []
    c = 0
    for j in range(k):
        while True:
            count = math.comb(n - c - 1, k - j - 1)
            if rank < count:
                break
            rank -= count
            c += 1
        out.append(c)
        c += 1
    return tuple(out)


def rank_combination(n: int, comb: Sequence[int]) -> int:
    k = len(comb)
    rank = 0
    prev = -1
    for j, c in enumerate(comb):
        for skipped in range(prev + 1, c):
            rank += math.comb(n - skipped - 1, k - j - 1)
        prev = c
    return rank


def _next_combination(comb: list[int], n: int) -> bool:
    """Advance ``comb`` in place; False once it wraps."""
    k = len(comb)
    i = k - 1
    while i >= 0 and comb[i] == n - k + i:
        i -= 1
    if i < 0:
        return False
    comb[i] += 1
    for j in range(i + 1, k):
        comb[j] = comb[j - 1] + 1
    return True


def iter_block_combinations(layout: Layout, start: int = 0, stop: int | None = None
                            ) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Yield per-block treated positions for ranks ``start .. stop-1``.

    Positions index into ``block.groups``. Nothing is materialised: the
    first element is unranked and the rest follow by successor steps.
    """
    total = layout.support_size
    stop = total if stop is None else min(stop, total)
    if start >= stop:
        return
    sizes = [math.comb(b.size, b.n1) for b in layout.blocks]
    digits = []
    r = start
    for s in reversed(sizes):
        digits.append(r % s)
        r //= s
    digits.reverse()
    state = [list(unrank_combination(b.size, b.n1, d)) for b, d in zip(layout.blocks, digits)]
    for _ in range(stop - start):
        yield tuple(tuple(c) for c in state)
        for h in range(len(state) - 1, -1, -1):
            if _next_combination(state[h], layout.blocks[h].size):
                break
            state[h] = list(range(layout.blocks[h].n1))


def enumerate_assignments(design: Design, pop, cap: int = DEFAULT_CAP,
                          start: int = 0, stop: int | None = None) -> Iterator[np.ndarray]:
    """Every valid assignment once, lexicographically.

    Raises :class:`SupportTooLarge` before yielding anything if the
    support exceeds ``cap``.
    """
    lay = _layout_for(design, pop)
    size = lay.support_size
    if size > cap:
        raise SupportTooLarge(size, cap, lay.support_formula)
    return _lift(lay, start, stop)


def _lift(lay: Layout, start, stop):
    for combos in iter_block_combinations(lay, start, stop):
        treated = [b.groups[p] for b, c in zip(lay.blocks, combos) for p in c]
        yield lay.unit_assignment(treated)


def sample_assignments(design: Design, pop, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent draws, shape ``(size, n)``.

    Each block is shuffled by sorting uniform keys; the first ``n1``
    groups of the shuffled order are treated.
    """
    lay = _layout_for(design, pop)
    return _sample(lay, rng, size)


def sample_group_assignments(lay: Layout, rng: np.random.Generator, size: int) -> np.ndarray:
    """Group-level draws, shape ``(size, number of groups)``."""
    zg = np.zeros((size, len(lay.groups)), dtype=np.int8)
    rows = np.arange(size)[:, None]
    for b in lay.blocks:
        keys = rng.random((size, b.size))
        pick = np.argsort(keys, axis=1, kind="stable")[:, :b.n1]
        members = np.asarray(b.groups)
        zg[rows, members[pick]] = 1
    return zg


def _sample(lay: Layout, rng: np.random.Generator, size: int) -> np.ndarray:
    zg = sample_group_assignments(lay, rng, size)
    if not lay.clustered:
        return zg
    unit_group = np.empty(lay.n, dtype=np.intp)
    for g, members in enumerate(lay.groups):
        unit_group[list(members)] = g
    return zg[:, unit_group]


def sample_assignment(design: Design, pop, rng: np.random.Generator) -> np.ndarray:
    """One draw from the design's uniform assignment distribution."""
    return sample_assignments(design, pop, rng, 1)[0]
