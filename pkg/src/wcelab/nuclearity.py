"""Nuclearity of weighted conditional expectation operators.

``T`` is nuclear exactly when its symbol vanishes on the non-atomic part and
the per-atom terms are summable.  Summability of an infinite family is
certified only through a declared dominating law; divergence only through a
declared lower law or partial-sum level (see :mod:`wcelab.tails`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Mapping, Optional

import numpy as np

from .condexp import conditional_expectation
from .measure import (EXPLICIT, MAX_REGION_LEVEL, FiniteSpace, MeasurableFunction, StepFunction,
                      Truncation, lp_norm)
from .tails import TailDeclaration, bound_partial_sum, check_lower, check_upper
from .wce import (WCEOperator, _aggregate, _derive, adjoint, apply, atom_table, effective_space,
                  materialize, norm_formula, truncated_sources)

PLATEAU_REL = 1e-12


class Verdict(str, Enum):
    CERTIFIED = "NuclearCertified"
    LIKELY = "NuclearLikely"
    NOT_NUCLEAR = "NotNuclear"
    INCONCLUSIVE = "Inconclusive"


def _truncation(N) -> Truncation:
    return N if isinstance(N, Truncation) else Truncation(int(N))


def atom_term(T: WCEOperator, n: int, source: Optional[str] = None) -> float:
    """Summand of the nuclearity series at atom ``n`` of ``source``.

    ``(E|w|^p)^(1/p) (E|u|^q)^(1/q)`` on the atom for ``p > 1`` and
    ``E|w| E|u|`` for ``p = 1``.  Computed from that one atom, so it also
    works for atoms of infinite families.
    """
    if source is None:
        srcs = T.space.sources
        if len(srcs) != 1:
            raise ValueError(f"space has sources {srcs}; name one")
        source = srcs[0]
    c = T.space.block_chunk(source, n)
    st = c.starts
    agg = _aggregate(T.u.values_on(c), T.w.values_on(c), c.weights, T.p,
                     lambda v: np.add.reduceat(v, st), lambda v: np.maximum.reduceat(v, st))
    _, term, *_ = _derive(T.p, np.add.reduceat(c.weights, st), agg)
    return float(term[0])


def running_sum(a: np.ndarray) -> np.ndarray:
    """Neumaier-compensated running sums in ascending index order."""
    out = np.empty(len(a))
    s = c = 0.0
    for i, x in enumerate(a.tolist()):
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
        out[i] = s + c
    return out


@dataclass(frozen=True)
class DivergenceWitness:
    law: Optional[str]            # declared lower law, verified for n <= checked
    checked: int
    exceed_level: Optional[float] = None
    exceed_index: Optional[int] = None   # first n with partial sum > exceed_level


@dataclass(frozen=True, eq=False)
class FamilyCertificate:
    source: str
    terms_checked: int
    exhausted: bool               # every atom of the source was summed
    terms: np.ndarray
    partial_sums: np.ndarray
    domination: Optional[str] = None
    tail: Optional[float] = None
    majorant_total: Optional[float] = None
    rejected_at: Optional[int] = None
    divergence: Optional[DivergenceWitness] = None

    @property
    def partial_sum(self) -> float:
        return float(self.partial_sums[-1]) if len(self.partial_sums) else 0.0

    @property
    def accepted(self) -> bool:
        return self.exhausted or (self.tail is not None and self.rejected_at is None)

    @property
    def certified_total(self) -> Optional[float]:
        if self.exhausted:
            return self.partial_sum
        if not self.accepted:
            return None
        return self.partial_sum + self.tail

    @property
    def plateau(self) -> bool:
        N = len(self.partial_sums)
        if N < 10:
            return False
        last, earlier = self.partial_sums[-1], self.partial_sums[N // 10 - 1]
        return last == 0 or (last - earlier) < PLATEAU_REL * last


@dataclass(frozen=True, eq=False)
class SeriesCertificate:
    terms_checked: int
    families: tuple

    @property
    def partial_sum(self) -> float:
        return math.fsum(f.partial_sum for f in self.families)

    @property
    def accepted(self) -> bool:
        return all(f.accepted for f in self.families)

    @property
    def divergent(self) -> bool:
        return any(f.divergence is not None for f in self.families)

    @property
    def tail(self) -> Optional[float]:
        if not self.accepted:
            return None
        return math.fsum(f.tail or 0.0 for f in self.families if not f.exhausted)

    @property
    def certified_total(self) -> Optional[float]:
        if not self.accepted:
            return None
        return math.fsum(f.certified_total for f in self.families)

    def family(self, source: str) -> FamilyCertificate:
        for f in self.families:
            if f.source == source:
                return f
        raise KeyError(source)


def series_scan(T: WCEOperator, N: int,
                declarations: Optional[Mapping[str, TailDeclaration]] = None) -> SeriesCertificate:
    """Partial sums of the nuclearity series per family, with certificates."""
    t = _truncation(N)
    if t.terms < 1:
        raise ValueError("need N >= 1")
    declarations = declarations or {}
    tab = atom_table(T, t)
    cut = truncated_sources(T, t)
    fams = []
    for src in T.space.sources:
        m = tab.mask(src)
        n, a = tab.n[m], tab.term[m]
        sums = running_sum(a)
        decl = declarations.get(src)
        kw = {}
        if src in cut and decl is not None:
            if decl.dominate is not None:
                chk = check_upper(TailDeclaration(decl.bound, decl.dominate), n, a)
                kw.update(domination=decl.describe_upper(),
                          tail=decl.dominate.tail_sum(len(n)),
                          majorant_total=bound_partial_sum(decl, len(n))
                          + decl.dominate.tail_sum(len(n)))
                if not chk.ok:
                    kw["rejected_at"] = chk.offending
            witness = None
            low = check_lower(decl, n, a)
            if low is not None and low.ok and not low.law.summable:
                witness = DivergenceWitness(low.law.describe(), len(n))
            if decl.exceed is not None:
                over = np.flatnonzero(sums > decl.exceed)
                if over.size:
                    witness = DivergenceWitness(
                        witness.law if witness else None, len(n),
                        float(decl.exceed), int(n[over[0]]))
            kw["divergence"] = witness
        fams.append(FamilyCertificate(src, len(n), src not in cut, a, sums, **kw))
    return SeriesCertificate(t.terms, tuple(fams))


@dataclass(frozen=True)
class RegionVanishing:
    vanishes: bool
    witness_strips: tuple
    level: Optional[int] = None


def region_vanishing(T: WCEOperator, t: Optional[Truncation] = None) -> RegionVanishing:
    """Does the nuclearity symbol vanish a.e. on the non-atomic region?"""
    if T.space.region is None:
        return RegionVanishing(True, ())
    if t is None and not T.space.is_finite:
        t = Truncation(0)
    tab = atom_table(T, t)
    bad = tab.region_term > 1e-14 * max(1.0, tab.region_scale)
    return RegionVanishing(not bool(np.any(bad)), tuple(int(i) for i in np.flatnonzero(bad)),
                           tab.region_level)


@dataclass(frozen=True, eq=False)
class NuclearityVerdict:
    cls: Verdict
    certificate: SeriesCertificate
    region: RegionVanishing
    reasons: tuple = ()

    def record(self) -> dict:
        """Flat certificate record (used by the CLI in both output forms)."""
        c = self.certificate
        doms = [f"{f.source}: {f.domination}" for f in c.families if f.domination]
        return {
            "verdict": self.cls.value,
            "terms": c.terms_checked,
            "partial_sum": c.partial_sum,
            "domination": "; ".join(doms),
            "tail": c.tail,
            "certified_total": c.certified_total,
            "region_vanishes": self.region.vanishes,
        }


def classify_nuclear(T: WCEOperator, N: int,
                     declarations: Optional[Mapping[str, TailDeclaration]] = None
                     ) -> NuclearityVerdict:
    """Combine region vanishing with the series certificate.

    An operator on ``L^inf`` (an adjoint of an ``L^1`` operator) is
    classified through its pre-adjoint.
    """
    reasons = []
    if math.isinf(T.p.p):
        T = adjoint(T)
        reasons.append("classified through the pre-adjoint on L^1")
    region = region_vanishing(T, _truncation(N))
    cert = series_scan(T, N, declarations)
    if not region.vanishes:
        cls = Verdict.NOT_NUCLEAR
        reasons.append(f"symbol nonzero on {len(region.witness_strips)} region strips")
    elif cert.divergent:
        cls = Verdict.NOT_NUCLEAR
        reasons.append("series diverges: " + ", ".join(
            f.source for f in cert.families if f.divergence is not None))
    elif cert.accepted:
        cls = Verdict.CERTIFIED
        reasons.append("region vanishes and every infinite family is dominated")
    elif all(f.accepted or f.plateau for f in cert.families):
        cls = Verdict.LIKELY
        reasons.append("partial sums plateau without a certificate")
    else:
        cls = Verdict.INCONCLUSIVE
        for f in cert.families:
            if f.rejected_at is not None:
                reasons.append(f"{f.source}: domination fails at n={f.rejected_at}")
            elif not f.accepted:
                reasons.append(f"{f.source}: no domination declared")
    return NuclearityVerdict(cls, cert, region, tuple(reasons))


@dataclass(frozen=True, eq=False)
class NuclearRepresentation:
    """``T = sum_n phi_n (x) g_n`` with ``phi_n(f) = mu^(-1/q) int u chi_n f`` and
    ``g_n = w chi_n / mu^(1/p)``, so that ``||g_n||_p = (E|w|^p)^(1/p)``.

    For ``p = 1`` ``phi_norm`` is the true dual norm ``max |u|`` on the
    atom; ``phi_average`` is ``E|u|`` and ``flagged`` lists atoms where the
    two differ.
    """

    p: float
    source: tuple
    n: np.ndarray
    phi_norm: np.ndarray
    g_norm: np.ndarray
    total: float
    phi_average: Optional[np.ndarray] = None
    average_total: Optional[float] = None
    flagged: tuple = ()

    @property
    def products(self) -> np.ndarray:
        return self.phi_norm * self.g_norm


def nuclear_representation(T: WCEOperator, t=None) -> NuclearRepresentation:
    if isinstance(t, int):
        t = _truncation(t)
    if math.isinf(T.p.p):
        raise ValueError("representation needs 1 <= p < inf")
    tab = atom_table(T, t)
    phi, g = tab.phi_norm, tab.g_norm
    kw = {}
    if T.p.p == 1.0:
        avg = tab.averages["u1"]
        flagged = np.flatnonzero(phi > avg * (1 + 1e-12))
        kw = dict(phi_average=avg, average_total=math.fsum(avg * g),
                  flagged=tuple((tab.source[i], int(tab.n[i])) for i in flagged))
    return NuclearRepresentation(T.p.p, tab.source, tab.n, phi, g, math.fsum(phi * g), **kw)


def verify_representation(T: WCEOperator, t: Optional[Truncation] = None, samples: int = 100,
                          seed: int = 0, terms: Optional[int] = None) -> float:
    """Largest ``||T f - sum_{n <= terms} phi_n(f) g_n||_p`` over random ``f``.

    ``terms`` counts atoms in global order (default: all).
    """
    sp, u, w = materialize(T, t)
    ex = T.p
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((sp.n_points, samples))
    C = None
    if sp.region is not None:
        C = rng.standard_normal((samples, sp.region.side, sp.region.side))
    mu = sp.measures
    phi_scale = mu ** (-1.0 / ex.q) if math.isfinite(ex.q) else np.ones_like(mu)
    g_scale = mu ** (-1.0 / ex.p)
    acc = np.zeros_like(F)
    um = u.points * sp.weights
    for i in range(sp.n_atoms if terms is None else min(terms, sp.n_atoms)):
        s = sp.atom_slice(i + 1)
        phi = phi_scale[i] * (um[s] @ F[s])
        acc[s] += np.outer(w.points[s] * g_scale[i], phi)
    worst = 0.0
    for k in range(samples):
        f = StepFunction(sp, F[:, k], None if C is None else C[k])
        rep = StepFunction(sp, acc[:, k], None if C is None else np.zeros_like(C[k]))
        worst = max(worst, lp_norm(apply(T, f) - rep, ex.p))
    return worst


def multiplication_check(u: MeasurableFunction, p, space, N: int,
                         declarations: Optional[Mapping[str, TailDeclaration]] = None
                         ) -> NuclearityVerdict:
    """Nuclearity of ``M_u`` when every atom is a single point (E = identity)."""
    for b in space.blocks:
        if len(b.labels) != 1:
            raise ValueError("multiplication check needs singleton atoms")
    t = _truncation(N)
    for f in space.families:
        count = t.terms if f.infinite else min(f.count, t.terms)
        if count and np.any(f.sizes(count) != 1):
            raise ValueError(f"family {f.name} has non-singleton atoms")
    T = WCEOperator(u, MeasurableFunction.constant(1.0), space, p)
    return classify_nuclear(T, t, declarations)


@dataclass(frozen=True, eq=False)
class SeparationWitness:
    p: float
    delta: float
    level: int
    strips: tuple
    functions: tuple
    norms: tuple
    bound: float
    distances: dict           # (a, b) -> ||T f_a - T f_b||_p

    @property
    def min_distance(self) -> float:
        return min(self.distances.values())

    @property
    def holds(self) -> bool:
        return all(n <= 1.0 + 1e-12 for n in self.norms) and self.min_distance >= self.bound


def separation_witness(T: WCEOperator, delta: float, k: int,
                       t: Optional[Truncation] = None) -> SeparationWitness:
    """Unit-ball functions on disjoint strips whose images stay apart.

    For ``1 < p < inf`` the functions are
    ``sign(u)|u|^(q-1) (E|w|^p)^((q-1)/p) chi_B / (||T||^(q/p) mu(B)^(1/p))``
    on strips where the symbol exceeds ``delta``; image distances are at
    least ``(2 delta^(pq))^(1/p) / ||T||^(q/p)``.  For ``p = 1`` they are
    ``E(u)E|w| chi_B / (mu(B) c)`` with ``c = ||T|| max(||T||, 1)`` on strips
    where ``|E(u)| E|w| > delta``, with distances at least ``delta^2 / c``.
    The region is refined until ``k`` strips are available.
    """
    if T.space.region is None:
        raise ValueError("separation witness needs a non-atomic region")
    if k < 2:
        raise ValueError("need k >= 2")
    ex = T.p
    if math.isinf(ex.p):
        raise ValueError("separation witness needs 1 <= p < inf")
    if t is None and not T.space.is_finite:
        t = Truncation(0)
    norm = norm_formula(T, t).value
    region = effective_space(T, t).region
    E = conditional_expectation
    while True:
        rsp = FiniteSpace.region_only(region)
        u, w = T.u.on(rsp), T.w.on(rsp)
        if ex.p > 1:
            ewp = E(abs(w) ** ex.p)
            sym = ewp ** (1.0 / ex.p) * E(abs(u) ** ex.q) ** (1.0 / ex.q)
        else:
            ew1 = E(abs(w))
            sym = abs(E(u)) * ew1
        strips = np.flatnonzero(sym.cells[:, 0] > delta)
        if strips.size == 0:
            raise ValueError(f"super-level set of the symbol above delta={delta} is empty")
        if strips.size >= k:
            break
        if region.level >= MAX_REGION_LEVEL:
            raise ValueError("cannot host enough disjoint strips at the maximal refinement")
        region = region.refine()
    chosen = tuple(int(s) for s in strips[:k])
    mu_b = region.strip_measure
    if ex.p > 1:
        shape = (np.sign(u.cells) * np.abs(u.cells) ** (ex.q - 1.0)
                 * ewp.cells ** ((ex.q - 1.0) / ex.p) / (norm ** (ex.q / ex.p) * mu_b ** (1.0 / ex.p)))
        bound = (2.0 * delta ** (ex.p * ex.q)) ** (1.0 / ex.p) / norm ** (ex.q / ex.p)
    else:
        c = norm * max(norm, 1.0)
        shape = E(u).cells * ew1.cells / (mu_b * c)
        bound = delta ** 2 / c
    funcs = []
    for s in chosen:
        cells = np.zeros_like(shape)
        cells[s, :] = shape[s, :]
        funcs.append(StepFunction(rsp, np.empty(0), cells))
    images = [apply(T, f) for f in funcs]
    dist = {(a, b): lp_norm(images[a] - images[b], ex.p)
            for a, b in combinations(range(k), 2)}
    return SeparationWitness(ex.p, float(delta), region.level, chosen, tuple(funcs),
                             tuple(lp_norm(f, ex.p) for f in funcs), bound, dist)
