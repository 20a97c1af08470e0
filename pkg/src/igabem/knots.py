"""Admissible knot vectors on the parameter interval and their refinement.

A discretization level is a clamped knot vector: strictly increasing
breakpoints with per-breakpoint multiplicities, full multiplicity p+1 at both
interval endpoints.  For closed boundaries the seam is clamped as well;
continuity across the seam lives in the wrapped basis, not here.

Breakpoints are kept as exact `Fraction`s so that dyadic bisection,
nestedness checks and the mesh-ratio closure loop are free of rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

FractionLike = Fraction | int | float | str


def _as_fraction(x: FractionLike) -> Fraction:
    if isinstance(x, float):
        return Fraction(x).limit_denominator(2**40) if not x.is_integer() else Fraction(int(x))
    return Fraction(x)


class KnotError(ValueError):
    """Invalid knot vector data."""


@dataclass(frozen=True)
class KnotVector:
    """One discretization level: degree, breakpoints, multiplicities, weights."""

    p: int
    breakpoints: tuple[Fraction, ...]
    mults: tuple[int, ...]
    closed: bool
    weights: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", np.ones(self.num_knots))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        self.weights.setflags(write=False)

    # -- counts ---------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def num_knots(self) -> int:
        """N: number of knots in (a, b], i.e. sum of multiplicities for j >= 1."""
        return sum(self.mults[1:])

    @property
    def interval(self) -> tuple[Fraction, Fraction]:
        return self.breakpoints[0], self.breakpoints[-1]

    @property
    def o(self) -> int:
        return 0 if self.closed else 1

    # -- float views (cached: breakpoints are immutable) ------------------
    @property
    def breaks_float(self) -> np.ndarray:
        cached = self.__dict__.get("_breaks_float")
        if cached is None:
            cached = np.array([float(z) for z in self.breakpoints])
            cached.setflags(write=False)
            object.__setattr__(self, "_breaks_float", cached)
        return cached

    @property
    def knots_float(self) -> np.ndarray:
        """Full clamped knot array of length N + p + 1 (indices t_{-p} .. t_N)."""
        cached = self.__dict__.get("_knots_float")
        if cached is None:
            cached = np.repeat(self.breaks_float, self.mults)
            cached.setflags(write=False)
            object.__setattr__(self, "_knots_float", cached)
        return cached

    def element_lengths(self) -> list[Fraction]:
        return [b - a for a, b in zip(self.breakpoints, self.breakpoints[1:])]

    def multiplicity(self, z: Fraction) -> int:
        try:
            return self.mults[self.breakpoints.index(z)]
        except ValueError:
            return 0


def make_initial(
    breakpoints: Sequence[FractionLike],
    multiplicities: Sequence[int],
    degree: int,
    closed: bool,
    weights: Sequence[float] | None = None,
) -> KnotVector:
    """Validate raw data and build a level-0 knot vector."""
    if degree < 1:
        raise KnotError(f"degree must be positive, got {degree}")
    breaks = tuple(_as_fraction(z) for z in breakpoints)
    mults = tuple(int(m) for m in multiplicities)
    if len(breaks) != len(mults):
        raise KnotError(f"{len(breaks)} breakpoints but {len(mults)} multiplicities")
    if len(breaks) < 2:
        raise KnotError("need at least one element")
    for j, (za, zb) in enumerate(zip(breaks, breaks[1:])):
        if not za < zb:
            raise KnotError(f"breakpoints not strictly increasing at index {j + 1}")
    for j, m in enumerate(mults):
        if j in (0, len(mults) - 1):
            if m != degree + 1:
                raise KnotError(
                    f"endpoint breakpoint {j} needs multiplicity p+1={degree + 1}, got {m}"
                )
        elif not 1 <= m <= degree:
            raise KnotError(f"interior breakpoint {j} has multiplicity {m}, allowed 1..{degree}")
    n_knots = sum(mults[1:])
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n_knots,):
            raise KnotError(f"expected {n_knots} weights, got {weights.shape}")
        if np.any(weights <= 0):
            bad = int(np.argmin(weights))
            raise KnotError(f"weight at index {bad} is not positive")
        if weights[0] != weights[-1]:
            raise KnotError("first and last weight must coincide (seam compatibility)")
    return KnotVector(degree, breaks, mults, closed, weights)


def mesh_ratio(kv: KnotVector) -> Fraction:
    """Largest parameter-length ratio over intersecting element pairs.

    Includes the wrap-around pair for closed boundaries.  Exact rational.
    """
    lengths = kv.element_lengths()
    pairs = list(zip(lengths, lengths[1:]))
    if kv.closed and len(lengths) > 1:
        pairs.append((lengths[-1], lengths[0]))
    ratio = Fraction(1)
    for ha, hb in pairs:
        ratio = max(ratio, ha / hb, hb / ha)
    return ratio


@dataclass(frozen=True)
class RefineResult:
    kv: KnotVector
    new_nodes: tuple[Fraction, ...]  # new breakpoints plus nodes with raised multiplicity
    bisected: tuple[Fraction, ...]  # midpoints inserted (subset of new_nodes)
    bumped: tuple[Fraction, ...]  # old nodes whose multiplicity increased


def refine(
    kv: KnotVector,
    marked_elements: Sequence[int],
    marked_nodes: Sequence[FractionLike],
    kappa0: Fraction | float,
    bisectable=None,
) -> RefineResult:
    """One refinement step: bisections, multiplicity increases, mesh-ratio closure.

    marked_elements are element indices (0-based); marked_nodes are breakpoint
    values.  An element whose both endpoints are marked counts as marked.
    Remaining marked interior nodes with multiplicity < p get their
    multiplicity raised; all other remaining marked nodes mark their
    neighbouring elements instead.  Finally the closure loop bisects the
    larger element of each adjacent pair violating kappa <= 2*kappa0.

    `bisectable(za, zb)` may veto bisections of resolution-saturated
    elements; the closure is never vetoed on admissible input since the
    larger element of a violating pair always has room to halve.
    """
    kappa0 = _as_fraction(kappa0)
    if bisectable is None:
        bisectable = lambda za, zb: True
    breaks = list(kv.breakpoints)
    mults = list(kv.mults)
    n_el = kv.n_elements
    marked_el = set(int(e) for e in marked_elements)
    for e in marked_el:
        if not 0 <= e < n_el:
            raise KnotError(f"marked element {e} out of range")
    nodes = [_as_fraction(z) for z in marked_nodes]
    node_idx = set()
    for z in nodes:
        try:
            node_idx.add(breaks.index(z))
        except ValueError:
            raise KnotError(f"marked node {z} is not a breakpoint") from None
    if not marked_el and not node_idx:
        raise KnotError("no refinement: both marked sets are empty")

    # seam of a closed boundary is one node: marking index 0 marks index n too
    last = len(breaks) - 1
    if kv.closed and (0 in node_idx or last in node_idx):
        node_idx |= {0, last}

    def elements_of(j: int) -> list[int]:
        """Elements containing breakpoint j (with wrap for closed)."""
        els = []
        if j > 0:
            els.append(j - 1)
        elif kv.closed:
            els.append(n_el - 1)
        if j < last:
            els.append(j)
        elif kv.closed:
            els.append(0)
        return els

    # step (iv): both endpoints marked -> element marked
    for e in range(n_el):
        j0, j1 = e, e + 1
        m0 = j0 in node_idx or (kv.closed and j0 == 0 and last in node_idx)
        m1 = j1 in node_idx or (kv.closed and j1 == last and 0 in node_idx)
        if m0 and m1:
            marked_el.add(e)

    # step (v): marked nodes not on any element marked so far
    bumped = []
    for j in sorted(node_idx):
        if any(e in marked_el for e in elements_of(j)):
            continue
        at_end = j in (0, last)
        if not at_end and mults[j] < kv.p:
            bumped.append(j)
        else:
            marked_el.update(elements_of(j))

    # step (vi): bisect marked elements (new nodes get multiplicity one)
    bisected = sorted(
        Fraction(breaks[e] + breaks[e + 1], 2)
        for e in marked_el
        if bisectable(breaks[e], breaks[e + 1])
    )
    bumped_vals = [breaks[j] for j in bumped]
    for j in bumped:
        mults[j] += 1
    for z in bisected:
        _insert_breakpoint(breaks, mults, z)

    # closure: restore kappa <= 2*kappa0 by left-to-right passes that bisect
    # the larger element of every violating pair, until a pass stays clean
    limit = 2 * kappa0
    closure = []
    dirty = True
    while dirty:
        dirty = False
        i = 0
        while i < len(breaks) - 2:
            ha = breaks[i + 1] - breaks[i]
            hb = breaks[i + 2] - breaks[i + 1]
            if ha > limit * hb or hb > limit * ha:
                e = i if ha > hb else i + 1
                if not bisectable(breaks[e], breaks[e + 1]):
                    i += 1
                    continue
                z = Fraction(breaks[e] + breaks[e + 1], 2)
                _insert_breakpoint(breaks, mults, z)
                closure.append(z)
                dirty = True
            else:
                i += 1
        if kv.closed and len(breaks) > 2:
            ha = breaks[-1] - breaks[-2]
            hb = breaks[1] - breaks[0]
            if ha > limit * hb or hb > limit * ha:
                e = len(breaks) - 2 if ha > hb else 0
                if bisectable(breaks[e], breaks[e + 1]):
                    z = Fraction(breaks[e] + breaks[e + 1], 2)
                    _insert_breakpoint(breaks, mults, z)
                    closure.append(z)
                    dirty = True

    fine = KnotVector(kv.p, tuple(breaks), tuple(mults), kv.closed, None)
    new_nodes = tuple(sorted(set(bisected) | set(closure) | set(bumped_vals)))
    return RefineResult(fine, new_nodes, tuple(sorted(set(bisected) | set(closure))), tuple(bumped_vals))


def _insert_breakpoint(breaks: list[Fraction], mults: list[int], z: Fraction) -> None:
    lo, hi = 0, len(breaks)
    while lo < hi:
        mid = (lo + hi) // 2
        if breaks[mid] < z:
            lo = mid + 1
        else:
            hi = mid
    if lo < len(breaks) and breaks[lo] == z:
        return
    breaks.insert(lo, z)
    mults.insert(lo, 1)


def is_refinement(coarse: KnotVector, fine: KnotVector) -> bool:
    """Whether `fine` contains all coarse nodes with no smaller multiplicities."""
    if coarse.p != fine.p or coarse.closed != fine.closed:
        return False
    fine_map = dict(zip(fine.breakpoints, fine.mults))
    return all(fine_map.get(z, 0) >= m for z, m in zip(coarse.breakpoints, coarse.mults))


def new_knot_nodes(coarse: KnotVector, fine: KnotVector) -> tuple[Fraction, ...]:
    """Nodes of `fine` that are new or carry a strictly larger multiplicity."""
    if not is_refinement(coarse, fine):
        raise KnotError("fine level is not a refinement of the coarse one")
    coarse_map = dict(zip(coarse.breakpoints, coarse.mults))
    return tuple(
        z for z, m in zip(fine.breakpoints, fine.mults) if m > coarse_map.get(z, 0)
    )


@dataclass
class Hierarchy:
    """Nested sequence of knot vectors with the per-step refinement data."""

    levels: list[KnotVector]
    new_nodes: list[tuple[Fraction, ...]]  # new_nodes[l] = nodes added by step l-1 -> l

    @classmethod
    def from_root(cls, kv0: KnotVector) -> "Hierarchy":
        return cls([kv0], [()])

    def append(self, result: RefineResult) -> None:
        if not is_refinement(self.levels[-1], result.kv):
            raise KnotError("appended level does not refine the current finest level")
        self.levels.append(result.kv)
        self.new_nodes.append(result.new_nodes)

    def append_kv(self, kv: KnotVector) -> None:
        nodes = new_knot_nodes(self.levels[-1], kv)
        self.levels.append(kv)
        self.new_nodes.append(nodes)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def selected_indices(self, level: int) -> np.ndarray:
        """Column indices of the ansatz-basis functions activated on `level`.

        Level 0 selects everything.  On finer levels a function is selected
        when its (closed) support meets a node that the step created or whose
        multiplicity it raised; the seam-merged function of a closed boundary
        participates when either constituent does.
        """
        cache = self.__dict__.setdefault("_selected_cache", {})
        if level in cache:
            return cache[level]
        kv = self.levels[level]
        dim = kv.num_knots - 1 - kv.o
        if level == 0:
            picked = np.arange(dim)
        else:
            from bisect import bisect_left as _bl

            from .splines import wrapped_supports

            supports = wrapped_supports(kv)
            targets = sorted(self.new_nodes[level])

            def hit(lo, hi):
                k = _bl(targets, lo)
                return k < len(targets) and targets[k] <= hi

            picked = np.array(
                [c for c in range(dim) if any(hit(lo, hi) for lo, hi in supports[c])],
                dtype=int,
            )
            if not len(picked):
                raise KnotError(
                    f"level {level} selects no function; refinement bookkeeping broken"
                )
        cache[level] = picked
        return picked
