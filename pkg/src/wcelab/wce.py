"""The weighted conditional expectation operator ``T f = w E(u f)``.

Per-atom quantities come from :func:`atom_table`, which streams the
truncation once and keeps only block aggregates, so norms, level sets and
nuclearity terms can be evaluated on truncations far too large to
materialise.  Pointwise work (:func:`apply`, extremal functions) goes through
a materialised :class:`~wcelab.measure.FiniteSpace`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np

from .condexp import as_step, conditional_expectation
from .measure import (REGION, ExponentPair, FiniteSpace, MeasurableFunction, MeasureSpace,
                      StepFunction, Truncation, lp_norm)
from .tails import TailDeclaration, check_lower, check_upper


@dataclass(frozen=True, eq=False)
class WCEOperator:
    u: MeasurableFunction
    w: MeasurableFunction
    space: MeasureSpace
    p: ExponentPair

    def __post_init__(self):
        object.__setattr__(self, "p", ExponentPair.coerce(self.p))

    def with_exponent(self, p) -> "WCEOperator":
        return WCEOperator(self.u, self.w, self.space, ExponentPair.coerce(p))


def adjoint(T: WCEOperator) -> WCEOperator:
    """``T* = M_u E M_w`` acting on the conjugate exponent."""
    return WCEOperator(T.w, T.u, T.space, T.p.conjugate())


def effective_space(T: WCEOperator, t: Optional[Truncation] = None) -> MeasureSpace:
    """Truncated space, with the region refined far enough for u and w."""
    sp = T.space if t is None else T.space.truncate(t)
    if not sp.is_finite:
        raise ValueError("operator lives on an infinite space; pass a truncation")
    if sp.region is not None:
        lvl = max(sp.region.level, T.u.region_level(), T.w.region_level())
        if lvl != sp.region.level:
            sp = replace(sp, region=sp.region.refine(lvl - sp.region.level))
    return sp


def _pow(a: np.ndarray, e: float) -> np.ndarray:
    if e == 1.0:
        return a
    if e == 2.0:
        return a * a
    if e == 3.0:
        return a * a * a
    return np.power(a, e)


def _root(a: np.ndarray, e: float) -> np.ndarray:
    if e == 1.0:
        return a
    if e == 2.0:
        return np.sqrt(a)
    return np.power(a, 1.0 / e)


def _needs(ex: ExponentPair) -> tuple:
    if math.isfinite(ex.p) and math.isfinite(ex.q):
        return ("wp", "uq")
    return ("u1", "w1", "umax", "wmax", "u", "w")


def _aggregate(u, w, weights, ex: ExponentPair, reduce_sum, reduce_max) -> dict:
    out = {}
    au, aw = np.abs(u), np.abs(w)
    for key in _needs(ex):
        if key == "wp":
            out[key] = reduce_sum(weights * _pow(aw, ex.p))
        elif key == "uq":
            out[key] = reduce_sum(weights * _pow(au, ex.q))
        elif key == "u1":
            out[key] = reduce_sum(weights * au)
        elif key == "w1":
            out[key] = reduce_sum(weights * aw)
        elif key == "umax":
            out[key] = reduce_max(au)
        elif key == "wmax":
            out[key] = reduce_max(aw)
        elif key == "u":
            out[key] = reduce_sum(weights * u)
        else:
            out[key] = reduce_sum(weights * w)
    return out


def _derive(ex: ExponentPair, mass, agg):
    """Symbol (norm/compactness), term (nuclearity) and named variants.

    ``agg`` holds block sums; sums are turned into averages here.
    """
    avg = {k: (v if k.endswith("max") else v / mass) for k, v in agg.items()}
    if "wp" in avg:
        gw = _root(avg["wp"], ex.p)
        gu = _root(avg["uq"], ex.q)
        sym = gw * gu
        return sym, sym, {"symbol": sym}, gu, gw, avg
    if ex.p == 1.0:
        sup = avg["umax"] * avg["w1"]
        signed = np.abs(avg["u"]) * avg["w1"]
        phi, g = avg["umax"], avg["w1"]
    else:
        sup = avg["wmax"] * avg["u1"]
        signed = np.abs(avg["w"]) * avg["u1"]
        phi, g = avg["wmax"], avg["u1"]
    average = avg["u1"] * avg["w1"]
    return sup, average, {"sup": sup, "average": average, "signed_average": signed}, phi, g, avg


@dataclass(frozen=True, eq=False)
class AtomTable:
    """Per-atom (and per-strip) values of the operator's symbol.

    ``symbol`` is the supremum of the norm symbol over each atom: for
    ``1 < p < inf`` the sub-algebra measurable quantity
    ``(E|w|^p)^(1/p) (E|u|^q)^(1/q)``; for ``p = 1`` the largest value of
    ``|u| E|w|`` on the atom.  ``term`` is the nuclearity summand, which
    equals ``symbol`` for ``p > 1`` and is ``E|u| E|w|`` for ``p = 1``.
    ``phi_norm``/``g_norm`` are the norms of the rank-one pieces.

    For ``p = 1`` (and ``p = inf`` with roles swapped) ``variants`` holds
    ``sup`` (``max|u| E|w|``, the symbol), ``average`` (``E|u| E|w|``, the
    term) and ``signed_average`` (``|E u| E|w|``).
    """

    p: ExponentPair
    source: tuple
    n: np.ndarray
    measure: np.ndarray
    symbol: np.ndarray
    term: np.ndarray
    variants: dict
    phi_norm: np.ndarray
    g_norm: np.ndarray
    averages: dict
    region_level: Optional[int] = None
    strip_measure: Optional[float] = None
    region_symbol: Optional[np.ndarray] = None
    region_term: Optional[np.ndarray] = None
    region_variants: dict = field(default_factory=dict)
    region_scale: float = 0.0

    @property
    def n_atoms(self) -> int:
        return len(self.n)

    def mask(self, source: str) -> np.ndarray:
        return np.array([s == source for s in self.source], dtype=bool)

    def index_of(self, source: str, n: int) -> int:
        """1-based global atom index."""
        for i, (s, k) in enumerate(zip(self.source, self.n)):
            if s == source and k == n:
                return i + 1
        raise KeyError((source, n))


@lru_cache(maxsize=16)
def _atom_table_cached(T: WCEOperator, t: Optional[Truncation]) -> AtomTable:
    sp = effective_space(T, t)
    ex = T.p
    sources, ns, masses, aggs = [], [], [], []
    for c in sp.iter_chunks():
        u = T.u.values_on(c)
        w = T.w.values_on(c)
        st = c.starts
        aggs.append(_aggregate(u, w, c.weights, ex,
                               lambda v: np.add.reduceat(v, st),
                               lambda v: np.maximum.reduceat(v, st)))
        masses.append(np.add.reduceat(c.weights, st))
        ns.append(c.n.astype(np.int64))
        sources.extend([c.source] * len(c.counts))
    keys = _needs(ex)
    mass = np.concatenate(masses) if masses else np.empty(0)
    agg = {k: (np.concatenate([a[k] for a in aggs]) if aggs else np.empty(0)) for k in keys}
    sym, term, variants, phi, g, avg = _derive(ex, mass, agg)

    region_kw = {}
    if sp.region is not None:
        reg = sp.region
        uc, wc = T.u.region_values(reg), T.w.region_values(reg)
        cm = reg.cell_measure
        ragg = _aggregate(uc, wc, cm, ex, lambda v: v.sum(axis=1), lambda v: v.max(axis=1))
        rmass = np.full(reg.side, reg.strip_measure)
        rs, rt, rv, _, _, _ = _derive(ex, rmass, ragg)
        region_kw = dict(region_level=reg.level, strip_measure=reg.strip_measure,
                         region_symbol=rs, region_term=rt, region_variants=rv,
                         region_scale=float(np.max(np.abs(uc)) * np.max(np.abs(wc))))
    return AtomTable(ex, tuple(sources), np.concatenate(ns) if ns else np.empty(0, np.int64),
                     mass, sym, term, variants, phi, g, avg, **region_kw)


def atom_table(T: WCEOperator, t: Optional[Truncation] = None) -> AtomTable:
    return _atom_table_cached(T, t)


symbol = atom_table


@lru_cache(maxsize=8)
def _materialized(T: WCEOperator, t: Optional[Truncation]):
    sp = effective_space(T, t).materialize()
    return sp, T.u.on(sp), T.w.on(sp)


def materialize(T: WCEOperator, t: Optional[Truncation] = None):
    """``(FiniteSpace, u, w)`` for pointwise work on a truncation."""
    return _materialized(T, t)


def apply(T: WCEOperator, f, t: Optional[Truncation] = None) -> StepFunction:
    """``w E(u f)``."""
    if isinstance(f, StepFunction):
        sp = f.space
        u, w = T.u.on(sp), T.w.on(sp)
    else:
        sp, u, w = materialize(T, t)
        f = as_step(f, sp)
    return w * conditional_expectation(u * f)


def rayleigh(T: WCEOperator, f: StepFunction) -> float:
    nf = lp_norm(f, T.p)
    return lp_norm(apply(T, f), T.p) / nf if nf else 0.0


def truncated_sources(T: WCEOperator, t: Optional[Truncation]) -> set:
    """Sources whose truncation drops atoms of the full space."""
    if t is None:
        return set()
    return {f.name for f in T.space.families if f.infinite or f.count > t.terms}


@dataclass(frozen=True)
class NormResult:
    value: float
    argmax: tuple            # (source, n); source "region" gives the strip index
    lower_bound: bool        # True when atoms beyond the truncation were not seen
    upper: Optional[float] = None


def norm_formula(T: WCEOperator, t: Optional[Truncation] = None,
                 declarations: Optional[Mapping[str, TailDeclaration]] = None,
                 upper: Optional[float] = None) -> NormResult:
    """Supremum of the norm symbol over the truncation.

    Ties go to the smallest atom index.  On infinite spaces the value is a
    lower bound; declared decreasing tail laws (checked termwise) or an
    explicit ``upper`` turn it into a bracket.
    """
    tab = atom_table(T, t)
    vals = [tab.symbol]
    if tab.region_symbol is not None:
        vals.append(tab.region_symbol)
    allv = np.concatenate(vals)
    if not allv.size:
        raise ValueError("norm of an operator on an empty space")
    k = int(np.argmax(allv))
    value = float(allv[k])
    where = ((tab.source[k], int(tab.n[k])) if k < tab.n_atoms
             else (REGION, k - tab.n_atoms))
    cut = truncated_sources(T, t)
    bracket = upper
    if cut and bracket is None and declarations:
        laws = []
        for src in cut:
            m = tab.mask(src)
            chk = check_upper(declarations.get(src), tab.n[m], tab.symbol[m])
            if chk is None or not chk.ok:
                laws = None
                break
            laws.append(float(chk.law(t.terms + 1)))
        if laws is not None:
            bracket = max([value] + laws)
    if not cut:
        bracket = value
    return NormResult(value, where, bool(cut), bracket)


class Cardinality(str, Enum):
    FINITE = "Finite"
    INFINITE = "InfiniteWitnessed"
    UNKNOWN = "UnknownBeyondTruncation"


@dataclass(frozen=True)
class LevelSetReport:
    epsilon: float
    atoms: tuple              # (source, n) with symbol >= epsilon
    meets_region: bool
    strips: tuple             # strip indices (0-based) with symbol >= epsilon
    cardinality: Cardinality
    complete: bool            # the listed atoms are all atoms of the full space in the set
    reasons: tuple = ()
    variants: dict = field(default_factory=dict)


def level_set(T: WCEOperator, epsilon: float, t: Optional[Truncation] = None,
              declarations: Optional[Mapping[str, TailDeclaration]] = None) -> LevelSetReport:
    """Atoms (and strips) where the symbol is at least ``epsilon``.

    Infinitely many hits are only claimed from a declared constant lower
    law ``>= epsilon``; finiteness beyond the truncation only from a
    declared law tending to zero.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    declarations = declarations or {}
    tab = atom_table(T, t)
    hit = tab.symbol >= epsilon
    atoms = tuple((tab.source[i], int(tab.n[i])) for i in np.flatnonzero(hit))
    strips = ()
    if tab.region_symbol is not None:
        strips = tuple(int(i) for i in np.flatnonzero(tab.region_symbol >= epsilon))
    variants = {}
    for name, vals in tab.variants.items():
        if name == "symbol":
            continue
        variants[name] = tuple((tab.source[i], int(tab.n[i]))
                               for i in np.flatnonzero(vals >= epsilon))

    classes, reasons, complete = [], [], True
    for src in sorted(truncated_sources(T, t)):
        m = tab.mask(src)
        n, a = tab.n[m], tab.symbol[m]
        decl = declarations.get(src)
        low = check_lower(decl, n, a)
        up = check_upper(decl, n, a)
        if low is not None and low.ok and low.law.constant and low.law.c >= epsilon:
            classes.append(Cardinality.INFINITE)
            reasons.append(f"{src}: symbol >= {low.law.describe()} >= eps for all n (checked n<={t.terms})")
        elif up is not None and up.ok:
            classes.append(Cardinality.FINITE)
            tail_clear = float(up.law(t.terms + 1)) < epsilon
            complete = complete and tail_clear
            reasons.append(f"{src}: symbol <= {up.law.describe()} -> 0"
                           + ("" if tail_clear else " (hits beyond truncation not excluded)"))
        else:
            classes.append(Cardinality.UNKNOWN)
            complete = False
            why = "no tail declaration"
            if up is not None and not up.ok:
                why = f"declared bound fails at n={up.offending}"
            if low is not None and not low.ok:
                why = f"declared lower law fails at n={low.offending}"
            reasons.append(f"{src}: {why}")
    if Cardinality.INFINITE in classes:
        card = Cardinality.INFINITE
        complete = False
    elif Cardinality.UNKNOWN in classes:
        card = Cardinality.UNKNOWN
    else:
        card = Cardinality.FINITE
    return LevelSetReport(float(epsilon), atoms, bool(strips), strips, card, complete,
                          tuple(reasons), variants)


class Compactness(str, Enum):
    COMPACT = "Compact"
    NOT_COMPACT = "NotCompact"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class CompactnessResult:
    verdict: Compactness
    reports: tuple
    region_nonzero: bool


def region_nonzero(tab: AtomTable, rel: float = 1e-14) -> np.ndarray:
    if tab.region_symbol is None:
        return np.zeros(0, dtype=bool)
    return tab.region_symbol > rel * max(1.0, tab.region_scale)


def compactness_verdict(T: WCEOperator, t: Optional[Truncation] = None,
                        eps_grid: Sequence[float] = (1.0, 0.1, 0.01, 0.001),
                        declarations: Optional[Mapping[str, TailDeclaration]] = None
                        ) -> CompactnessResult:
    reports = tuple(level_set(T, e, t, declarations) for e in eps_grid)
    # a nonzero symbol on the region is caught by the level set at its own height
    nz = bool(np.any(region_nonzero(atom_table(T, t))))
    if nz or any(r.meets_region or r.cardinality is Cardinality.INFINITE for r in reports):
        verdict = Compactness.NOT_COMPACT
    elif all(r.cardinality is Cardinality.FINITE for r in reports):
        verdict = Compactness.COMPACT
    else:
        verdict = Compactness.INCONCLUSIVE
    return CompactnessResult(verdict, reports, nz)


@dataclass(frozen=True, eq=False)
class Extremal:
    function: StepFunction
    atom: int
    zero: bool               # symbol vanishes on the atom; function is 0


def extremal_function(T: WCEOperator, i: int, t: Optional[Truncation] = None,
                      variant: str = "attain") -> Extremal:
    """Unit-ball function on atom ``i`` (1-based) whose Rayleigh ratio is the
    symbol value there.

    For ``1 < p < inf`` this is ``sign(u)|u|^(q-1) (E|w|^p)^((q-1)/p)``
    normalised by ``||T||^(q/p) mu(A_i)^(1/p)``.  For ``p = 1`` the default
    concentrates on the point of the atom where ``|u|`` is largest;
    ``variant="average"`` gives ``E(u)E|w| chi / (mu ||T|| (||T||+1))``,
    whose ratio is only ``|E(u)| E|w|``.
    """
    sp, u, w = materialize(T, t)
    tab = atom_table(T, t)
    s = sp.atom_slice(i)
    out = StepFunction.zeros(sp)
    if tab.symbol[i - 1] == 0:
        return Extremal(out, i, True)
    ex = T.p
    vals = np.zeros(sp.n_points)
    uu = u.points[s]
    mu = float(tab.measure[i - 1])
    if math.isfinite(ex.p) and ex.p > 1:
        norm = norm_formula(T, t).value
        e_wp = float(tab.averages["wp"][i - 1])
        vals[s] = (np.sign(uu) * np.abs(uu) ** (ex.q - 1.0) * e_wp ** ((ex.q - 1.0) / ex.p)
                   / (norm ** (ex.q / ex.p) * mu ** (1.0 / ex.p)))
    elif ex.p == 1.0 and variant == "average":
        norm = norm_formula(T, t).value
        vals[s] = (tab.averages["u"][i - 1] * tab.averages["w1"][i - 1]
                   / (mu * norm * (norm + 1.0)))
    elif ex.p == 1.0:
        k = s.start + int(np.argmax(np.abs(uu)))
        vals[k] = np.sign(u.points[k]) / sp.weights[k]
    else:
        vals[s] = np.sign(uu)
    return Extremal(StepFunction(sp, vals, out.cells), i, False)
