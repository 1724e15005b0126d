"""Measure spaces made of atoms plus an optional refinable non-atomic region.

The sub-sigma-algebra is given by a partition of a countable point set into
blocks (the atoms) together with the vertical-strip algebra on a dyadic unit
square (the non-atomic part).  Infinite spaces only exist through
:class:`AtomFamily` generators; numeric work happens on truncations, which
are streamed in chunks so that aggregates over very large truncations never
need to be materialised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .genexpr import EvalError, Expr, compile_expr, evaluate, evaluate_ragged, expand, free_variables

CHUNK_POINTS = 1 << 16
MATERIALIZE_LIMIT = 1 << 22
SMALL_SOURCE = 1 << 20
MAX_REGION_LEVEL = 10
EXPLICIT = "blocks"
REGION = "region"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ExponentPair:
    """An exponent ``p`` in ``[1, inf]`` and its conjugate ``q``."""

    p: float
    q: Optional[float] = None

    def __post_init__(self):
        p = float(self.p)
        if not p >= 1.0:
            raise ValueError(f"exponent p={p} outside [1, inf]")
        if self.q is None:
            q = math.inf if p == 1.0 else (1.0 if math.isinf(p) else p / (p - 1.0))
        else:
            q = float(self.q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    def conjugate(self) -> "ExponentPair":
        # swapping keeps p -> q -> p bit-exact
        return ExponentPair(self.q, self.p)

    @classmethod
    def coerce(cls, value) -> "ExponentPair":
        return value if isinstance(value, cls) else cls(float(value))


@dataclass(frozen=True)
class Point:
    id: int
    label: float
    weight: float


@dataclass(frozen=True)
class AtomBlock:
    """An explicitly listed atom: point labels with their weights."""

    labels: tuple
    weights: tuple

    def __post_init__(self):
        labels = tuple(float(v) for v in self.labels)
        weights = tuple(float(v) for v in self.weights)
        if not labels:
            raise ValueError("an atom needs at least one point")
        if len(labels) != len(weights):
            raise ValueError("labels and weights differ in length")
        for lab, wt in zip(labels, weights):
            if not (math.isfinite(wt) and wt > 0):
                raise ValueError(f"nonpositive weight {wt} at label {lab}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)

    @property
    def measure(self) -> float:
        return math.fsum(self.weights)


@dataclass(frozen=True)
class AtomFamily:
    """Generator for atoms ``A_1, A_2, ...``.

    Block ``n`` has ``size(n)`` points; point ``j`` (0-based) of block ``n``
    gets label ``label(n, j)`` and weight ``weight(n, j, x)``.  ``count=None``
    means infinitely many blocks.
    """

    name: str
    size: Expr
    label: Expr
    weight: Expr = 1.0
    count: Optional[int] = None

    def __post_init__(self):
        for attr, allowed in (("size", {"n"}), ("label", {"n", "j"}), ("weight", {"n", "j", "x"})):
            e = compile_expr(getattr(self, attr))
            extra = free_variables(e) - allowed
            if extra:
                raise ValueError(f"family {self.name}: {attr} may not use {sorted(extra)}")
            object.__setattr__(self, attr, e)
        if self.count is not None and int(self.count) < 0:
            raise ValueError("negative block count")
        if self.count is not None:
            object.__setattr__(self, "count", int(self.count))

    @property
    def infinite(self) -> bool:
        return self.count is None

    def sizes(self, count: int) -> np.ndarray:
        n = np.arange(1, count + 1, dtype=float)
        try:
            s = np.broadcast_to(np.asarray(evaluate(self.size, {"n": n}), dtype=float), n.shape)
        except EvalError as exc:
            raise EvaluationError(f"family {self.name}: size: {exc}") from None
        bad = ~(np.isfinite(s) & (s >= 1) & (s == np.floor(s)))
        if np.any(bad):
            i = int(np.argmax(bad))
            raise EvaluationError(f"family {self.name}: block {i + 1} has invalid size {s[i]}")
        return s.astype(np.int64)


@dataclass(frozen=True)
class NonAtomicRegion:
    """Unit square of total measure ``measure``.

    Sigma-cells are the ``2^L x 2^L`` dyadic grid; atoms of the sub-algebra
    do not exist here, the sub-algebra is generated by vertical strips.
    Arrays on the region are indexed ``[strip, row]``.
    """

    measure: float = 1.0
    level: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.measure) and self.measure > 0):
            raise ValueError("region measure must be positive and finite")
        if not 0 <= int(self.level) <= MAX_REGION_LEVEL:
            raise ValueError(f"region level must lie in [0, {MAX_REGION_LEVEL}]")
        object.__setattr__(self, "measure", float(self.measure))
        object.__setattr__(self, "level", int(self.level))

    @property
    def side(self) -> int:
        return 1 << self.level

    @property
    def cell_measure(self) -> float:
        return self.measure / 4.0 ** self.level

    @property
    def strip_measure(self) -> float:
        return self.measure / 2.0 ** self.level

    def refine(self, levels: int = 1) -> "NonAtomicRegion":
        return replace(self, level=self.level + levels)


@dataclass(frozen=True)
class Truncation:
    terms: int
    level: Optional[int] = None

    def __post_init__(self):
        if self.terms < 0:
            raise ValueError("terms must be nonnegative")


@dataclass(frozen=True, eq=False)
class Chunk:
    """Consecutive blocks of one source, flattened to point arrays."""

    source: str
    n: np.ndarray        # block index within the source, per block
    counts: np.ndarray   # points per block
    starts: np.ndarray   # offset of each block inside the chunk
    j: np.ndarray        # position inside the block, per point
    labels: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


def _chunk(source, n, counts, labels=None, weights=None, family=None) -> Chunk:
    counts = np.asarray(counts, dtype=np.int64)
    starts = np.zeros(len(counts), dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    total = int(counts.sum())
    j = (np.arange(total, dtype=np.int64) - np.repeat(starts, counts)).astype(float)
    if family is not None:
        try:
            v, lvl = evaluate_ragged(family.label, {"n": n}, {"j": j}, counts)
            labels = np.asarray(expand(v, lvl, counts, total), dtype=float)
            v, lvl = evaluate_ragged(family.weight, {"n": n}, {"j": j, "x": labels}, counts)
            weights = np.asarray(expand(v, lvl, counts, total), dtype=float)
        except EvalError as exc:
            raise EvaluationError(f"family {family.name}: {exc}") from None
        if not np.all(np.isfinite(labels)):
            raise EvaluationError(f"family {family.name}: non-finite label")
        bad = ~(np.isfinite(weights) & (weights > 0))
        if np.any(bad):
            i = int(np.argmax(bad))
            raise EvaluationError(
                f"family {family.name}: nonpositive weight {weights[i]} at label {labels[i]}")
    return Chunk(source, np.asarray(n, dtype=float), counts, starts, j, labels, weights)


def _family_chunks(fam: AtomFamily, count: int) -> Iterator[Chunk]:
    if count == 0:
        return
    n_all = np.arange(1, count + 1, dtype=float)
    sizes = fam.sizes(count)
    ends = np.cumsum(sizes)
    b = 0
    while b < count:
        base = int(ends[b - 1]) if b else 0
        e = max(int(np.searchsorted(ends, base + CHUNK_POINTS, side="right")), b + 1)
        yield _chunk(fam.name, n_all[b:e], sizes[b:e], family=fam)
        b = e


@dataclass(frozen=True)
class MeasureSpace:
    """``X = (union of atoms) + B``: generated families, explicit blocks, region."""

    families: Sequence[AtomFamily] = ()
    blocks: Sequence[AtomBlock] = ()
    region: Optional[NonAtomicRegion] = None

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        names = [f.name for f in self.families]
        if len(set(names)) != len(names):
            raise ValueError("family names must be unique")
        if EXPLICIT in names or REGION in names:
            raise ValueError(f"family names {EXPLICIT!r} and {REGION!r} are reserved")

    @classmethod
    def from_partition(cls, labels, weights, sizes, region=None) -> "MeasureSpace":
        """Explicit blocks from flat label/weight arrays and block sizes."""
        blocks, at = [], 0
        for s in sizes:
            blocks.append(AtomBlock(tuple(labels[at:at + s]), tuple(weights[at:at + s])))
            at += s
        if at != len(labels):
            raise ValueError("block sizes do not cover all points")
        return cls(blocks=blocks, region=region)

    @property
    def is_finite(self) -> bool:
        return all(not f.infinite for f in self.families)

    @property
    def sources(self) -> list:
        out = [f.name for f in self.families]
        if self.blocks:
            out.append(EXPLICIT)
        return out

    def family(self, name: str) -> AtomFamily:
        for f in self.families:
            if f.name == name:
                return f
        raise KeyError(name)

    def truncate(self, t: Truncation) -> "MeasureSpace":
        fams = tuple(replace(f, count=t.terms if f.infinite else min(f.count, t.terms))
                     for f in self.families)
        region = self.region
        if region is not None and t.level is not None:
            region = replace(region, level=t.level)
        return MeasureSpace(fams, self.blocks, region)

    def block_chunk(self, source: str, n: int) -> Chunk:
        """The single atom ``n`` (1-based) of ``source``, without truncating."""
        if n < 1:
            raise ValueError("atoms are numbered from 1")
        if source == EXPLICIT:
            if n > len(self.blocks):
                raise KeyError((source, n))
            b = self.blocks[n - 1]
            return _chunk(EXPLICIT, np.array([float(n)]), [len(b.labels)],
                          np.array(b.labels), np.array(b.weights))
        f = self.family(source)
        if f.count is not None and n > f.count:
            raise KeyError((source, n))
        size = f.sizes(n)[-1]
        return _chunk(f.name, np.array([float(n)]), [size], family=f)

    def point_count(self) -> int:
        self._require_finite()
        total = sum(len(b.labels) for b in self.blocks)
        for f in self.families:
            if f.count:
                total += int(f.sizes(f.count).sum())
        return total

    def _require_finite(self):
        if not self.is_finite:
            raise ValueError("space has infinite families; truncate it first")

    def iter_chunks(self) -> Iterator[Chunk]:
        """Stream every atom in canonical order, checking label distinctness.

        Sources with at most ``SMALL_SOURCE`` points are checked exactly
        against each other; larger families must generate strictly
        increasing labels and are checked chunk-wise against the small set.
        """
        self._require_finite()
        small_chunks: dict = {}
        large: list = []
        for f in self.families:
            if not f.count:
                continue
            if int(f.sizes(f.count).sum()) <= SMALL_SOURCE:
                small_chunks[f.name] = list(_family_chunks(f, f.count))
            else:
                large.append(f)
        if self.blocks:
            counts = [len(b.labels) for b in self.blocks]
            labels = np.array([v for b in self.blocks for v in b.labels])
            weights = np.array([v for b in self.blocks for v in b.weights])
            small_chunks[EXPLICIT] = [
                _chunk(EXPLICIT, np.arange(1, len(counts) + 1, dtype=float), counts, labels, weights)]
        parts = [c.labels for cs in small_chunks.values() for c in cs]
        small = np.sort(np.concatenate(parts)) if parts else np.empty(0)
        dup = np.flatnonzero(np.diff(small) == 0)
        if dup.size:
            raise ValueError(f"duplicate label {small[dup[0]]}")

        ranges = []
        for name in self.sources:
            if name in small_chunks:
                yield from small_chunks[name]
                continue
            f = self.family(name)
            prev = -math.inf
            first = None
            for c in _family_chunks(f, f.count):
                lab = c.labels
                if lab[0] <= prev or np.any(lab[1:] <= lab[:-1]):
                    raise ValueError(
                        f"family {name}: labels of large families must increase strictly")
                prev = lab[-1]
                first = lab[0] if first is None else first
                lo = np.searchsorted(small, lab[0], side="left")
                hi = np.searchsorted(small, lab[-1], side="right")
                if hi > lo:
                    cand = small[lo:hi]
                    idx = np.minimum(np.searchsorted(lab, cand), len(lab) - 1)
                    clash = cand[lab[idx] == cand]
                    if clash.size:
                        raise ValueError(f"duplicate label {clash[0]}")
                yield c
            ranges.append((first, prev, name))
        ranges.sort()
        for (a0, a1, an), (b0, b1, bn) in zip(ranges, ranges[1:]):
            if b0 <= a1:
                raise ValueError(f"cannot certify distinct labels for families {an} and {bn}")

    def materialize(self) -> "FiniteSpace":
        self._require_finite()
        if self.point_count() > MATERIALIZE_LIMIT:
            raise ValueError(
                f"truncation has {self.point_count()} points; pointwise work is capped at "
                f"{MATERIALIZE_LIMIT}")
        chunks = list(self.iter_chunks())
        cat = (lambda xs, dt=float: np.concatenate(xs).astype(dt) if xs else np.empty(0, dt))
        return FiniteSpace(
            labels=cat([c.labels for c in chunks]),
            weights=cat([c.weights for c in chunks]),
            j=cat([c.j for c in chunks]),
            atom_source=tuple(c.source for c in chunks for _ in range(len(c.counts))),
            atom_n=cat([c.n for c in chunks], np.int64),
            counts=cat([c.counts for c in chunks], np.int64),
            region=self.region,
        )


def truncate(space: MeasureSpace, t: Truncation) -> MeasureSpace:
    return space.truncate(t)


@dataclass(frozen=True, eq=False)
class FiniteSpace:
    """A materialised finite truncation.  Points are grouped by atom."""

    labels: np.ndarray
    weights: np.ndarray
    j: np.ndarray
    atom_source: tuple
    atom_n: np.ndarray
    counts: np.ndarray
    region: Optional[NonAtomicRegion] = None

    def __post_init__(self):
        starts = np.zeros(len(self.counts), dtype=np.int64)
        np.cumsum(self.counts[:-1], out=starts[1:])
        object.__setattr__(self, "starts", starts)
        meas = (np.add.reduceat(self.weights, starts) if len(starts)
                else np.empty(0))
        object.__setattr__(self, "measures", meas)

    @classmethod
    def region_only(cls, region: NonAtomicRegion) -> "FiniteSpace":
        e = np.empty(0)
        return cls(e, e, e, (), np.empty(0, np.int64), np.empty(0, np.int64), region)

    @property
    def n_points(self) -> int:
        return len(self.labels)

    @property
    def n_atoms(self) -> int:
        return len(self.counts)

    @property
    def is_empty(self) -> bool:
        return self.n_points == 0 and self.region is None

    @property
    def block_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_atoms), self.counts)

    def atom_slice(self, i: int) -> slice:
        """Points of atom ``i`` (1-based global index)."""
        s = int(self.starts[i - 1])
        return slice(s, s + int(self.counts[i - 1]))

    def points(self) -> list:
        return [Point(i, float(a), float(b))
                for i, (a, b) in enumerate(zip(self.labels, self.weights))]

    def chunks(self) -> Iterator[Chunk]:
        """Re-split into per-source chunks (for evaluating functions)."""
        b = 0
        while b < self.n_atoms:
            src = self.atom_source[b]
            e = b
            while e < self.n_atoms and self.atom_source[e] == src:
                e += 1
            p0 = int(self.starts[b])
            p1 = int(self.starts[e - 1] + self.counts[e - 1])
            yield Chunk(src, self.atom_n[b:e].astype(float), self.counts[b:e],
                        self.starts[b:e] - p0, self.j[p0:p1], self.labels[p0:p1],
                        self.weights[p0:p1])
            b = e

    def block_sum(self, values: np.ndarray) -> np.ndarray:
        """Per-atom sums in ascending point order."""
        if not self.n_atoms:
            return np.empty(0)
        return np.add.reduceat(values, self.starts)


@dataclass(frozen=True, eq=False)
class MeasurableFunction:
    """A real function given by an expression, per-family expressions and/or
    a table keyed by point label, plus its values on the region.

    Precedence per point: table, then the family expression, then ``expr``.
    ``region`` is a constant or a ``2^l x 2^l`` step table (``[strip, row]``).
    """

    expr: Optional[Expr] = None
    family: Mapping[str, Expr] = field(default_factory=dict)
    table: Mapping[float, float] = field(default_factory=dict)
    region: object = None

    def __post_init__(self):
        if self.expr is not None:
            object.__setattr__(self, "expr", compile_expr(self.expr))
        object.__setattr__(self, "family",
                           {k: compile_expr(v) for k, v in dict(self.family).items()})
        object.__setattr__(self, "table",
                           {float(k): float(v) for k, v in dict(self.table).items()})
        if self.region is not None and not np.isscalar(self.region):
            arr = np.asarray(self.region, dtype=float)
            side = arr.shape[0] if arr.ndim == 2 else 0
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or side & (side - 1):
                raise ValueError("region table must be a square 2^l x 2^l array")
            object.__setattr__(self, "region", arr)
        keys = np.array(sorted(self.table), dtype=float)
        object.__setattr__(self, "_keys", keys)
        object.__setattr__(self, "_vals", np.array([self.table[k] for k in keys], dtype=float))

    @classmethod
    def constant(cls, c: float) -> "MeasurableFunction":
        return cls(expr=float(c), region=float(c))

    @classmethod
    def from_values(cls, space: "FiniteSpace", points, cells=None) -> "MeasurableFunction":
        return cls(table=dict(zip(space.labels.tolist(), np.asarray(points, float).tolist())),
                   region=cells)

    def values_on(self, chunk: Chunk) -> np.ndarray:
        size = chunk.size
        e = self.family.get(chunk.source, self.expr)
        if e is not None:
            try:
                v, lvl = evaluate_ragged(e, {"n": chunk.n},
                                         {"j": chunk.j, "x": chunk.labels}, chunk.counts)
            except EvalError as exc:
                raise EvaluationError(f"{chunk.source}: {exc}") from None
            out = np.asarray(expand(v, lvl, chunk.counts, size), dtype=float)
            if len(self._keys):
                out = out.copy()
        else:
            out = np.full(size, np.nan)
        if len(self._keys):
            idx = np.searchsorted(self._keys, chunk.labels)
            ok = idx < len(self._keys)
            hit = np.zeros(size, dtype=bool)
            hit[ok] = self._keys[idx[ok]] == chunk.labels[ok]
            out[hit] = self._vals[idx[hit]]
        bad = ~np.isfinite(out)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise EvaluationError(
                f"function undefined or non-finite at point with label {chunk.labels[i]}")
        return out

    def region_values(self, region: NonAtomicRegion) -> np.ndarray:
        if self.region is None:
            raise EvaluationError("function has no values on the non-atomic region")
        side = region.side
        if np.isscalar(self.region):
            return np.full((side, side), float(self.region))
        own = self.region.shape[0]
        if own > side:
            raise EvaluationError(
                f"region table of side {own} is finer than refinement level {region.level}")
        r = side // own
        return np.kron(self.region, np.ones((r, r)))

    def region_level(self) -> int:
        if self.region is None or np.isscalar(self.region):
            return 0
        return int(self.region.shape[0]).bit_length() - 1

    def on(self, space: FiniteSpace) -> "StepFunction":
        pts = [self.values_on(c) for c in space.chunks()]
        points = np.concatenate(pts) if pts else np.empty(0)
        cells = self.region_values(space.region) if space.region is not None else None
        return StepFunction(space, points, cells)


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Concrete values of a function on a :class:`FiniteSpace`."""

    space: FiniteSpace
    points: np.ndarray
    cells: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, space: FiniteSpace) -> "StepFunction":
        cells = None
        if space.region is not None:
            cells = np.zeros((space.region.side, space.region.side))
        return cls(space, np.zeros(space.n_points), cells)

    def map(self, fn) -> "StepFunction":
        return StepFunction(self.space, fn(self.points),
                            None if self.cells is None else fn(self.cells))

    def _zip(self, other, fn) -> "StepFunction":
        if isinstance(other, StepFunction):
            cells = None if self.cells is None else fn(self.cells, other.cells)
            return StepFunction(self.space, fn(self.points, other.points), cells)
        return self.map(lambda a: fn(a, other))

    def __add__(self, other):
        return self._zip(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._zip(other, np.subtract)

    def __mul__(self, other):
        return self._zip(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._zip(other, np.divide)

    def __neg__(self):
        return self.map(np.negative)

    def __abs__(self):
        return self.map(np.abs)

    def __pow__(self, e):
        return self.map(lambda a: np.power(a, e))

    def max_abs(self) -> float:
        m = float(np.max(np.abs(self.points))) if self.points.size else 0.0
        if self.cells is not None and self.cells.size:
            m = max(m, float(np.max(np.abs(self.cells))))
        return m


def integrate(f: StepFunction, points=None, cells=None) -> float:
    """Integral of ``f`` over the selected points and region cells.

    With no selection the whole space is used.  ``points`` is anything that
    indexes a numpy array; ``cells`` a boolean ``[strip, row]`` mask.
    """
    space = f.space
    if points is None and cells is None:
        points = slice(None)
        cells = None if f.cells is None else np.ones_like(f.cells, dtype=bool)
    terms = []
    if points is not None:
        v = f.points[points]
        bad = ~np.isfinite(v)
        if np.any(bad):
            lab = space.labels[points][int(np.argmax(bad))]
            raise EvaluationError(f"undefined value at point with label {lab}")
        terms.append(v * space.weights[points])
    if cells is not None:
        terms.append(f.cells[cells] * space.region.cell_measure)
    return math.fsum(np.concatenate(terms)) if terms else 0.0


def lp_norm(f: StepFunction, p) -> float:
    """``(int |f|^p)^(1/p)``; ``p = inf`` gives the maximum of ``|f|``."""
    p = ExponentPair.coerce(p).p
    if math.isinf(p):
        return f.max_abs()

    def raw(g):
        a = abs(g)
        a = a if p == 1.0 else (a * a if p == 2.0 else a ** p)
        if a.max_abs() == math.inf:
            return math.inf
        try:
            return integrate(a) ** (1.0 / p)
        except OverflowError:
            return math.inf

    with np.errstate(over="ignore"):
        val = raw(f)
        if not math.isfinite(val):
            scale = f.max_abs()
            val = scale * raw(f * (1.0 / scale))
    if not math.isfinite(val):
        raise OverflowError("L^p norm overflowed")
    return val
