"""Conditional expectation onto the atom/strip sub-algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measure import ExponentPair, FiniteSpace, MeasurableFunction, MeasureSpace, StepFunction, lp_norm


def as_step(f, space=None) -> StepFunction:
    if isinstance(f, StepFunction):
        return f
    if isinstance(space, MeasureSpace):
        space = space.materialize()
    if not isinstance(f, MeasurableFunction) or not isinstance(space, FiniteSpace):
        raise TypeError("need a StepFunction, or a MeasurableFunction and a finite space")
    return f.on(space)


def _block_average(space: FiniteSpace, values: np.ndarray) -> np.ndarray:
    avg = space.block_sum(space.weights * values) / space.measures
    # constant blocks keep their value exactly, so E is idempotent bit-for-bit
    hi = np.maximum.reduceat(values, space.starts)
    lo = np.minimum.reduceat(values, space.starts)
    return np.where(hi == lo, hi, avg)


def _strip_average(cells: np.ndarray) -> np.ndarray:
    avg = cells.mean(axis=1)
    hi, lo = cells.max(axis=1), cells.min(axis=1)
    return np.where(hi == lo, hi, avg)


def conditional_expectation(f, space=None) -> StepFunction:
    """``E(f) = sum_n (1/mu(A_n) int_{A_n} f) chi_{A_n}``, strip averages on the region."""
    f = as_step(f, space)
    sp = f.space
    if sp.is_empty:
        raise ValueError("conditional expectation on an empty space")
    points = np.empty(0)
    if sp.n_atoms:
        points = np.repeat(_block_average(sp, f.points), sp.counts)
    cells = None
    if f.cells is not None:
        cells = np.repeat(_strip_average(f.cells)[:, None], f.cells.shape[1], axis=1)
    return StepFunction(sp, points, cells)


def conditional_sup(f: StepFunction) -> StepFunction:
    """Largest value of ``f`` on each atom / strip (the conditional L^inf bound)."""
    sp = f.space
    points = np.repeat(np.maximum.reduceat(f.points, sp.starts), sp.counts) if sp.n_atoms \
        else np.empty(0)
    cells = None
    if f.cells is not None:
        cells = np.repeat(f.cells.max(axis=1)[:, None], f.cells.shape[1], axis=1)
    return StepFunction(sp, points, cells)


def _flat(f: StepFunction) -> np.ndarray:
    return f.points if f.cells is None else np.concatenate([f.points, f.cells.ravel()])


def _excess(lhs: StepFunction, rhs: StepFunction) -> float:
    """Worst ``lhs - rhs`` relative to the size of ``rhs`` (0 when lhs <= rhs)."""
    a, b = _flat(lhs), _flat(rhs)
    if not a.size:
        return 0.0
    return max(0.0, float(np.max(a - b))) / (1.0 + float(np.max(np.abs(b))))


@dataclass(frozen=True)
class Check:
    passed: bool
    violation: float


@dataclass(frozen=True)
class CEReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    @property
    def max_violation(self) -> float:
        return max(c.violation for c in self.checks.values())

    def __getitem__(self, name) -> Check:
        return self.checks[name]


def check_ce_axioms(f, g, p, space=None, tol: float = 1e-10) -> CEReport:
    """Check the basic conditional-expectation properties on one input pair.

    ``module``, ``jensen``, ``positivity``, ``holder`` and ``support`` are the
    classical properties; ``idempotent``, ``averaging`` and ``contraction``
    are reported alongside.  For ``module`` the factor ``g`` is replaced by
    ``E(g)``; positivity and support are tested on ``|f|``.
    """
    f = as_step(f, space)
    g = as_step(g, f.space)
    ex = ExponentPair.coerce(p)
    E = conditional_expectation
    sp = f.space
    v = {}

    eg = E(g)
    lhs, rhs = E(f * eg), E(f) * eg
    v["module"] = float(np.max(np.abs(_flat(lhs) - _flat(rhs)), initial=0.0)) / (
        1.0 + float(np.max(np.abs(_flat(rhs)), initial=0.0)))

    if math.isinf(ex.p):
        v["jensen"] = _excess(abs(E(f)), conditional_sup(abs(f)))
    else:
        v["jensen"] = _excess(abs(E(f)) ** ex.p, E(abs(f) ** ex.p))

    h = abs(f)
    strict = _flat(E(h + 1.0))
    v["positivity"] = max(0.0, -float(np.min(_flat(E(h)), initial=0.0)),
                          1.0 if np.any(strict <= 0) else 0.0)

    left = abs(E(f * g))
    if math.isinf(ex.p):
        right = conditional_sup(abs(f)) * E(abs(g))
    elif math.isinf(ex.q):
        right = E(abs(f) ** ex.p) ** (1.0 / ex.p) * conditional_sup(abs(g))
    else:
        right = E(abs(f) ** ex.p) ** (1.0 / ex.p) * E(abs(g) ** ex.q) ** (1.0 / ex.q)
    v["holder"] = _excess(left, right)

    eh = _flat(E(h))
    v["support"] = float(np.max(_flat(h)[eh == 0], initial=0.0))

    ef = E(f)
    v["idempotent"] = float(np.max(np.abs(_flat(E(ef)) - _flat(ef)), initial=0.0))

    worst = 0.0
    if sp.n_atoms:
        a = sp.block_sum(sp.weights * ef.points)
        b = sp.block_sum(sp.weights * f.points)
        worst = float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))
    if f.cells is not None:
        a, b = ef.cells.sum(axis=1), f.cells.sum(axis=1)
        scale = sp.region.cell_measure
        worst = max(worst, float(np.max(np.abs(a - b) * scale / (1.0 + np.abs(b) * scale))))
    v["averaging"] = worst

    nf = lp_norm(f, ex.p)
    v["contraction"] = max(0.0, lp_norm(ef, ex.p) - nf) / (1.0 + nf)

    return CEReport({k: Check(x <= tol, x) for k, x in v.items()})
