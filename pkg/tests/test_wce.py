import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randspace import random_operator
from wcelab.condexp import conditional_expectation
from wcelab.measure import (FiniteSpace, MeasurableFunction, MeasureSpace, NonAtomicRegion,
                            StepFunction, Truncation, lp_norm)
from wcelab.oracle import singular_values, to_matrix
from wcelab.specfile import load
from wcelab.wce import (Cardinality, Compactness, WCEOperator, adjoint, apply, atom_table,
                        compactness_verdict, extremal_function, level_set, materialize,
                        norm_formula, rayleigh)

# per-atom symbol of the first three even blocks, high-precision reference
EVEN_TERMS = {
    1.5: [0.25, 0.056467880685462468, 0.012778246423316322],
    2.0: [0.25, 0.058757665385871821, 0.013275187107407306],
    3.0: [0.25, 0.063166343651989677, 0.014324929327333597],
}


def three_points(u, w):
    space = MeasureSpace.from_partition([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], [2, 1])
    table = lambda v: dict(zip([1.0, 2.0, 3.0], v))
    return WCEOperator(MeasurableFunction(table=table(u)), MeasurableFunction(table=table(w)),
                       space, 2)


def test_apply_on_a_block():
    T = three_points([1, 2, 0], [1, 1, 1])
    sp, _, _ = materialize(T)
    f = StepFunction(sp, np.array([1.0, 2.0, 0.0]))
    assert apply(T, f).points.tolist() == [2.5, 2.5, 0.0]


def test_unit_weights_give_conditional_expectation():
    T = three_points([1, 1, 1], [1, 1, 1])
    sp, _, _ = materialize(T)
    f = StepFunction(sp, np.array([3.0, -1.0, 4.0]))
    assert np.array_equal(apply(T, f).points, conditional_expectation(f).points)
    assert norm_formula(T).value == 1.0


def test_norm_examples():
    assert norm_formula(three_points([1, 2, 0], [1, 1, 1])).value == pytest.approx(math.sqrt(2.5), rel=1e-15)
    r = norm_formula(three_points([1, 1, 1], [3, 0, 0]))
    assert r.value == pytest.approx(3 / math.sqrt(2), rel=1e-15)
    assert r.argmax == ("blocks", 1) and not r.lower_bound


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_example_even_symbols(p):
    T = load("example").operator(p)
    tab = atom_table(T, Truncation(3))
    m = tab.mask("evens")
    np.testing.assert_allclose(tab.symbol[m], EVEN_TERMS[p], rtol=1e-12)
    odd = tab.symbol[tab.mask("odds")]
    np.testing.assert_allclose(odd, [1.0, 1 / 9, 1 / 25], rtol=1e-15)


def test_example_norm_is_bracketed():
    spec = load("example")
    r = norm_formula(spec.operator(2), Truncation(500), spec.declarations)
    assert r.value == 1.0 and r.argmax == ("odds", 1)
    assert r.lower_bound and r.upper == 1.0


def test_level_sets():
    rec = load("reciprocal")
    rep = level_set(rec.operator(), 0.1, Truncation(1000), rec.declarations)
    assert [n for _, n in rep.atoms] == list(range(1, 11))
    assert rep.cardinality is Cardinality.FINITE and rep.complete
    const = load("constant")
    rep = level_set(const.operator(), 0.5, Truncation(100), const.declarations)
    assert rep.cardinality is Cardinality.INFINITE
    undeclared = level_set(const.operator(), 0.5, Truncation(100))
    assert undeclared.cardinality is Cardinality.UNKNOWN


def test_level_set_above_norm_is_empty():
    T = three_points([1, 2, 0], [1, 1, 1])
    assert level_set(T, 2.0).atoms == ()


def test_compactness_examples():
    ex = load("example")
    assert compactness_verdict(ex.operator(2), Truncation(200), declarations=ex.declarations).verdict \
        is Compactness.COMPACT
    const = load("constant")
    assert compactness_verdict(const.operator(), Truncation(100), declarations=const.declarations).verdict \
        is Compactness.NOT_COMPACT
    region = load("nonatomic")
    assert compactness_verdict(region.operator()).verdict is Compactness.NOT_COMPACT
    # without any tail declaration nothing is decided
    assert compactness_verdict(ex.operator(2), Truncation(200)).verdict is Compactness.INCONCLUSIVE


def test_p1_variants_are_all_reported():
    ex = load("example-l1")
    rep = level_set(ex.operator(), 0.01, Truncation(50), ex.declarations)
    assert set(rep.variants) == {"sup", "average", "signed_average"}


def test_p1_variants_differ_when_u_varies_on_an_atom():
    T = three_points([1, -3, 2], [1, 1, 1]).with_exponent(1)
    tab = atom_table(T)
    assert tab.variants["sup"][0] == 3.0
    assert tab.variants["average"][0] == 2.0
    assert tab.variants["signed_average"][0] == 1.0


def test_adjoint_is_an_involution():
    T = three_points([1, 2, 0], [3, 1, 1])
    A = adjoint(adjoint(T))
    assert A.u is T.u and A.w is T.w and A.p == T.p


def test_self_adjoint_matrix_is_symmetric():
    T = three_points([1, 2, 3], [1, 2, 3])
    M = to_matrix(T).matrix
    np.testing.assert_allclose(M, M.T, rtol=0, atol=1e-15)


def test_extremal_on_a_block():
    T = three_points([1, 2, 0], [1, 1, 1])
    e = extremal_function(T, 1)
    assert rayleigh(T, e.function) == pytest.approx(math.sqrt(2.5), rel=1e-14)
    assert lp_norm(e.function, 2) <= 1 + 1e-14
    pts = e.function.points
    assert pts[1] == pytest.approx(2 * pts[0]) and pts[2] == 0


def test_extremal_for_constant_u():
    T = three_points([2, 2, 0], [1, 3, 1])
    e = extremal_function(T, 1)
    assert e.function.points[0] == e.function.points[1]
    assert rayleigh(T, e.function) == pytest.approx(2 * math.sqrt(5), rel=1e-14)


def test_extremal_on_a_zero_atom():
    T = three_points([1, 2, 0], [1, 1, 1])
    e = extremal_function(T, 2)
    assert e.zero and not np.any(e.function.points)


def test_region_operator_symbol():
    space = MeasureSpace(region=NonAtomicRegion(1.0, 2))
    cells = np.arange(16, dtype=float).reshape(4, 4)
    T = WCEOperator(MeasurableFunction(region=cells), MeasurableFunction.constant(1.0), space, 2)
    tab = atom_table(T)
    np.testing.assert_allclose(tab.region_symbol, np.sqrt((cells ** 2).mean(axis=1)), rtol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_adjoint_has_the_same_singular_values(seed):
    T = random_operator(np.random.default_rng(seed), 2.0)
    a = singular_values(to_matrix(T))
    b = singular_values(to_matrix(adjoint(T)))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * (1 + a[0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_no_function_beats_the_norm(seed, p):
    rng = np.random.default_rng(seed)
    T = random_operator(rng, p, region_level=int(rng.integers(0, 2)) if seed % 2 else None)
    sp, _, _ = materialize(T)
    norm = norm_formula(T).value
    for _ in range(5):
        cells = None if sp.region is None else rng.standard_normal((sp.region.side, sp.region.side))
        f = StepFunction(sp, rng.standard_normal(sp.n_points), cells)
        assert rayleigh(T, f) <= norm * (1 + 1e-12)
