import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randspace import random_operator
from wcelab.measure import (AtomFamily, MeasurableFunction, MeasureSpace, NonAtomicRegion,
                            Truncation)
from wcelab.nuclearity import (Verdict, atom_term, classify_nuclear, multiplication_check,
                               nuclear_representation, running_sum, separation_witness,
                               series_scan, verify_representation)
from wcelab.specfile import load
from wcelab.tails import TailDeclaration, TailLaw
from wcelab.wce import WCEOperator, atom_table

# sums over n <= 200, high-precision reference
EVENS_200 = {1.0: 0.31981338699512761, 2.0: 0.32992207829677734, 3.0: 0.33575889956294354}
ODDS_200 = 1.2324505527403137


def singletons(u, count=None, decl=None, p=2.0):
    fam = AtomFamily("pts", 1, "n", count=count)
    T = WCEOperator(MeasurableFunction(u), MeasurableFunction.constant(1.0), MeasureSpace([fam]), p)
    return T, ({"pts": decl} if decl else {})


def test_atom_term_matches_the_table():
    T = load("example").operator(2)
    tab = atom_table(T, Truncation(5))
    for src in ("evens", "odds"):
        m = tab.mask(src)
        got = [atom_term(T, n, src) for n in range(1, 6)]
        np.testing.assert_array_equal(got, tab.term[m])
    assert atom_term(T, 2, "evens") == pytest.approx(0.058757665385871821, rel=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
def test_example_partial_sums(p):
    spec = load("example")
    cert = series_scan(spec.operator(p), 200, spec.declarations)
    assert cert.family("evens").partial_sum == pytest.approx(EVENS_200[p], rel=1e-13)
    assert cert.family("odds").partial_sum == pytest.approx(ODDS_200, rel=1e-13)
    assert cert.accepted and not cert.divergent
    assert cert.certified_total >= cert.partial_sum


def test_running_sum_is_compensated():
    a = np.array([1.0, 1e-16, 1e-16, 1e-16, 1e-16])
    assert running_sum(a)[-1] == math.fsum(a)


def test_harmonic_divergence_witness():
    T, d = singletons("1/x", decl=TailDeclaration(lower=TailLaw("power", 1, 1), exceed=10.0))
    v = classify_nuclear(T, 20000, d)
    assert v.cls is Verdict.NOT_NUCLEAR
    w = v.certificate.family("pts").divergence
    assert w.exceed_index == 12367
    assert w.law is not None


def test_multiplication_examples():
    spec = load("multiplication")
    v = multiplication_check(spec.u, 2, spec.space, 5000, spec.declarations)
    assert v.cls is Verdict.CERTIFIED
    one = singletons("1", decl=TailDeclaration(lower=TailLaw("power", 1, 0)))
    assert multiplication_check(one[0].u, 2, one[0].space, 100, one[1]).cls is Verdict.NOT_NUCLEAR


def test_multiplication_needs_singletons():
    space = MeasureSpace.from_partition([1.0, 2.0], [1.0, 1.0], [2])
    with pytest.raises(ValueError):
        multiplication_check(MeasurableFunction("x"), 2, space, 10)
    fam = AtomFamily("a", "n", "k(n)+j")
    with pytest.raises(ValueError):
        multiplication_check(MeasurableFunction("x"), 2, MeasureSpace([fam]), 10)


def test_verdict_classes_without_certificates():
    T, _ = singletons("1/x^2")
    assert classify_nuclear(T, 1000).cls is Verdict.INCONCLUSIVE
    T, _ = singletons("max(0, 5 - x)")
    assert classify_nuclear(T, 1000).cls is Verdict.LIKELY
    T, d = singletons("1/x", decl=TailDeclaration(dominate=TailLaw("power", 1, 2)))
    v = classify_nuclear(T, 100, d)
    assert v.cls is Verdict.INCONCLUSIVE
    assert v.certificate.family("pts").rejected_at == 2


def test_finite_spaces_need_no_declaration():
    T, _ = singletons("1/x", count=50)
    v = classify_nuclear(T, 100)
    assert v.cls is Verdict.CERTIFIED
    assert v.certificate.certified_total == pytest.approx(math.fsum(1 / n for n in range(1, 51)), rel=1e-14)


def test_region_blocks_nuclearity():
    v = classify_nuclear(load("nonatomic").operator(), 10)
    assert v.cls is Verdict.NOT_NUCLEAR
    assert not v.region.vanishes and len(v.region.witness_strips) == 8
    space = MeasureSpace(region=NonAtomicRegion(1.0, 2))
    zero = WCEOperator(MeasurableFunction(region=0.0), MeasurableFunction.constant(1.0), space, 2)
    assert classify_nuclear(zero, 10).cls is Verdict.CERTIFIED


def test_certificate_record_fields():
    spec = load("example")
    rec = classify_nuclear(spec.operator(2), 100, spec.declarations).record()
    assert set(rec) >= {"verdict", "terms", "partial_sum", "domination", "tail"}
    assert rec["verdict"] == "NuclearCertified" and rec["terms"] == 100


def test_representation_norms():
    T = load("example").operator(2)
    r = nuclear_representation(T, 3)
    np.testing.assert_allclose(r.products[:3], [0.25, 0.058757665385871821, 0.013275187107407306],
                               rtol=1e-12)
    assert r.total == pytest.approx(math.fsum(atom_table(T, Truncation(3)).term), rel=1e-15)


def test_l1_representation_flags_sup_above_average():
    space = MeasureSpace.from_partition([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], [2, 1])
    u = MeasurableFunction(table={1.0: 1.0, 2.0: 3.0, 3.0: 2.0})
    T = WCEOperator(u, MeasurableFunction.constant(1.0), space, 1)
    r = nuclear_representation(T)
    assert r.phi_norm.tolist() == [3.0, 2.0]
    assert r.phi_average.tolist() == [2.0, 2.0]
    assert r.flagged == (("blocks", 1),)
    assert r.total == 5.0 and r.average_total == 4.0


def test_representation_residual():
    rng = np.random.default_rng(7)
    T = random_operator(rng, 1.5)
    assert verify_representation(T, samples=50) <= 1e-12
    assert verify_representation(T, samples=50, terms=0) > 1e-3


def test_separation_witness_on_the_square():
    T = load("nonatomic").operator(2)
    w = separation_witness(T, 0.9, 4)
    assert w.bound == pytest.approx(1.145512985522207, rel=1e-14)
    assert len(w.distances) == 6
    for d in w.distances.values():
        assert d == pytest.approx(math.sqrt(2), abs=1e-12)
    assert w.holds


def test_witness_refines_until_enough_strips():
    space = MeasureSpace(region=NonAtomicRegion(1.0, 0))
    T = WCEOperator(MeasurableFunction.constant(1.0), MeasurableFunction.constant(1.0), space, 1.5)
    w = separation_witness(T, 0.5, 2)
    assert w.level == 1 and w.holds
    assert all(n <= 1 + 1e-12 for n in w.norms)


def test_witness_needs_a_large_symbol():
    with pytest.raises(ValueError, match="empty"):
        separation_witness(load("nonatomic").operator(2), 1.5, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.floats(0.05, 0.95))
def test_witness_bound_holds(seed, p, frac):
    rng = np.random.default_rng(seed)
    cells = rng.uniform(-5, 5, (4, 4))
    space = MeasureSpace(region=NonAtomicRegion(float(rng.uniform(0.5, 2)), 2))
    T = WCEOperator(MeasurableFunction(region=cells),
                    MeasurableFunction(region=rng.uniform(-5, 5, (4, 4))), space, p)
    top = float(np.max(atom_table(T).region_symbol if p > 1 else
                       np.abs(atom_table(T).region_variants["signed_average"])))
    w = separation_witness(T, frac * top, 2)
    assert w.holds, (w.norms, w.distances, w.bound)
