import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wcelab.measure import (AtomBlock, AtomFamily, EvaluationError, ExponentPair, FiniteSpace,
                            MeasurableFunction, MeasureSpace, NonAtomicRegion, StepFunction,
                            Truncation, integrate, lp_norm)
from wcelab.specfile import load


def example_space():
    return load("example").space


def test_example_truncation_blocks():
    fs = example_space().truncate(Truncation(3)).materialize()
    assert fs.atom_source == ("evens",) * 3 + ("odds",) * 3
    assert fs.counts.tolist() == [1, 2, 3, 1, 1, 1]
    assert fs.labels.tolist() == [2, 4, 6, 8, 10, 12, 1, 3, 5]
    assert fs.measures.tolist() == [1, 2, 3, 1, 1, 1]


def test_example_point_count_without_materialising():
    sp = example_space().truncate(Truncation(20000))
    assert sp.point_count() == 20000 * 20001 // 2 + 20000


def test_infinite_space_refuses_to_stream():
    with pytest.raises(ValueError):
        next(example_space().iter_chunks())


def test_block_chunk_matches_truncation():
    c = example_space().block_chunk("evens", 4)
    assert c.labels.tolist() == [14, 16, 18, 20]


def test_exponent_pair():
    assert ExponentPair(2).q == 2
    assert ExponentPair(1).q == math.inf
    assert ExponentPair(math.inf).q == 1
    e = ExponentPair(3)
    assert e.conjugate().conjugate() == e
    with pytest.raises(ValueError):
        ExponentPair(0.5)


def test_atom_validation():
    with pytest.raises(ValueError, match="nonpositive"):
        AtomBlock((1.0, 2.0), (1.0, -1.0))
    with pytest.raises(ValueError, match="duplicate"):
        list(MeasureSpace(blocks=[AtomBlock((1.0,), (1.0,)), AtomBlock((1.0,), (2.0,))]).iter_chunks())
    with pytest.raises(EvaluationError, match="nonpositive"):
        fam = AtomFamily("a", 1, "n", "-1", count=3)
        list(MeasureSpace([fam]).iter_chunks())
    with pytest.raises(ValueError):
        AtomFamily("a", "j", "n")


def test_overlapping_families_are_rejected():
    a = AtomFamily("a", 1, "n", count=5)
    b = AtomFamily("b", 1, "n + 4", count=5)
    with pytest.raises(ValueError, match="duplicate"):
        list(MeasureSpace([a, b]).iter_chunks())


def test_region_geometry():
    r = NonAtomicRegion(2.0, 3)
    assert r.side == 8
    assert r.cell_measure == 2.0 / 64
    assert r.strip_measure == 2.0 / 8
    assert r.refine(2).level == 5
    with pytest.raises(ValueError):
        NonAtomicRegion(1.0, 11)


def test_integrate_and_norms():
    sp = MeasureSpace.from_partition([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1, 2]).materialize()
    f = StepFunction(sp, np.array([1.0, -2.0, 3.0]))
    assert integrate(f) == 1 - 4 + 9
    assert integrate(f, points=[0]) == 1
    assert lp_norm(f, 1) == 1 + 4 + 9
    assert lp_norm(f, 2) == math.sqrt(1 + 8 + 27)
    assert lp_norm(f, math.inf) == 3


def test_region_integration_is_exact():
    sp = FiniteSpace.region_only(NonAtomicRegion(1.0, 3))
    cells = np.zeros((8, 8))
    cells[2, :] = 1 / math.sqrt(1 / 8)
    f = StepFunction(sp, np.empty(0), cells)
    assert lp_norm(f, 2) == pytest.approx(1.0, abs=1e-15)


def test_norm_survives_overflow():
    sp = MeasureSpace.from_partition([1.0, 2.0], [1.0, 1.0], [2]).materialize()
    f = StepFunction(sp, np.array([1e200, 1e200]))
    assert lp_norm(f, 2) == pytest.approx(math.sqrt(2) * 1e200, rel=1e-15)


def test_function_precedence_and_region_tables():
    fam = AtomFamily("a", 1, "n", count=3)
    sp = MeasureSpace([fam], region=NonAtomicRegion(1.0, 2)).materialize()
    f = MeasurableFunction("x", {"a": "10*x"}, {2.0: -1.0}, region=[[1.0, 2.0], [3.0, 4.0]])
    g = f.on(sp)
    assert g.points.tolist() == [10, -1, 30]
    assert g.cells.shape == (4, 4)
    assert g.cells[0, 0] == 1 and g.cells[3, 3] == 4 and g.cells[2, 0] == 3
    too_fine = MeasurableFunction(1.0, region=np.ones((8, 8)))
    with pytest.raises(EvaluationError):
        too_fine.on(sp)


def test_undefined_values_name_the_label():
    sp = MeasureSpace.from_partition([1.0, 2.0], [1.0, 1.0], [1, 1]).materialize()
    with pytest.raises(EvaluationError, match="label 1"):
        MeasurableFunction(table={2.0: 1.0}).on(sp)


@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=30), st.integers(0, 2 ** 32 - 1))
def test_measures_are_block_sums(weights, seed):
    rng = np.random.default_rng(seed)
    n = len(weights)
    sizes = np.diff(np.concatenate([[0], np.sort(rng.choice(np.arange(1, n), rng.integers(0, n), replace=False)) if n > 1 else [], [n]])).astype(int)
    sp = MeasureSpace.from_partition(np.arange(n, dtype=float), weights, sizes).materialize()
    assert sp.measures.sum() == pytest.approx(math.fsum(weights), rel=1e-12)
    assert sp.counts.tolist() == sizes.tolist()
