"""Brute-force matrix checks on small finite truncations.

An operator on ``L^r`` of a finite space is a matrix on ``l^r`` after the
isometry ``f -> (m_i^(1/r) f(x_i))``.  Singular values, trace norm and a
power-type ``p``-norm estimate of that matrix are computed independently of
the closed-form symbol in :mod:`wcelab.wce`.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .measure import StepFunction, Truncation
from .wce import WCEOperator, materialize

MAX_DIM = 256
RATIO_TOL = 1e-12


def default_seed() -> int:
    return int(os.environ.get("WCELAB_SEED", "0"))


@dataclass(frozen=True, eq=False)
class WeightedMatrix:
    matrix: np.ndarray
    exponent: float
    order: np.ndarray        # coordinate k -> point index (region cells follow, offset by n_points)
    blocks: np.ndarray       # block id per coordinate
    mass: np.ndarray         # measure of each coordinate's point or cell

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def coordinates(self, f: StepFunction) -> np.ndarray:
        """``(m_k^(1/r) f_k)`` in matrix order."""
        return self.mass ** (1.0 / self.exponent) * _flat(f)[self.order]

    def function(self, x: np.ndarray, like: StepFunction) -> StepFunction:
        vals = np.empty(self.dim)
        vals[self.order] = x / self.mass ** (1.0 / self.exponent)
        sp = like.space
        k = sp.n_points
        cells = None if like.cells is None else vals[k:].reshape(like.cells.shape)
        return StepFunction(sp, vals[:k], cells)


def _flat(f: StepFunction) -> np.ndarray:
    return f.points if f.cells is None else np.concatenate([f.points, f.cells.ravel()])


def to_matrix(T: WCEOperator, t: Optional[Truncation] = None, exponent: float = 2.0) -> WeightedMatrix:
    """Matrix of ``T`` on ``l^r`` coordinates, points in ascending label order,
    region cells appended with strips as blocks."""
    sp, u, w = materialize(T, t)
    uu, ww = _flat(u), _flat(w)
    mass = np.concatenate([sp.weights, np.full(
        0 if sp.region is None else sp.region.side ** 2,
        0.0 if sp.region is None else sp.region.cell_measure)])
    blocks = np.repeat(np.arange(sp.n_atoms), sp.counts)
    bmass = list(sp.measures)
    if sp.region is not None:
        side = sp.region.side
        blocks = np.concatenate([blocks, sp.n_atoms + np.repeat(np.arange(side), side)])
        bmass += [sp.region.strip_measure] * side
    bmass = np.asarray(bmass, float)
    d = len(mass)
    if d > MAX_DIM:
        raise ValueError(f"matrix oracle is limited to {MAX_DIM} coordinates (got {d})")
    order = np.concatenate([np.argsort(sp.labels, kind="stable"), np.arange(sp.n_points, d)])
    m, b = mass[order], blocks[order]
    r = float(exponent)
    left = m ** (1.0 / r) * ww[order] / bmass[b]
    right = uu[order] * m ** (1.0 - 1.0 / r)
    M = np.where(b[:, None] == b[None, :], np.outer(left, right), 0.0)
    return WeightedMatrix(M, r, order, b, m)


def _array(M) -> np.ndarray:
    return M.matrix if isinstance(M, WeightedMatrix) else np.asarray(M, float)


def singular_values(M) -> np.ndarray:
    return np.linalg.svd(_array(M), compute_uv=False)


def trace_norm(M) -> float:
    return math.fsum(singular_values(M))


def frobenius(M) -> float:
    return float(np.linalg.norm(_array(M)))


@dataclass(frozen=True)
class PNormEstimate:
    lower: float
    argmax: np.ndarray
    converged: bool


def _lp(x: np.ndarray, p: float) -> np.ndarray:
    """Column-wise l^p norms, scaled to avoid overflow."""
    s = np.max(np.abs(x), axis=0)
    s = np.where(s > 0, s, 1.0)
    return s * np.sum(np.abs(x / s) ** p, axis=0) ** (1.0 / p)


def _dual(x: np.ndarray, p: float) -> np.ndarray:
    s = np.max(np.abs(x), axis=0)
    s = np.where(s > 0, s, 1.0)
    return np.sign(x) * np.abs(x / s) ** (p - 1.0)


def _ratios(A, X, p):
    nx = _lp(X, p)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(nx > 0, _lp(A @ X, p) / nx, 0.0)


def pnorm_operator_norm(M, p: float, restarts: int = 32, iters: int = 500,
                        seed: Optional[int] = None, starts: Optional[np.ndarray] = None
                        ) -> PNormEstimate:
    """Lower bound on ``||M||_{p->p}`` from power-type iteration.

    Every reported value is the ratio ``||Mx||_p / ||x||_p`` of an actual
    iterate, so it never exceeds the true norm.  ``p = 1`` is the exact
    largest column sum; ``p = 2`` uses block subspace iteration with a
    Rayleigh-Ritz step.  ``starts`` (columns) are iterated alongside the
    random restarts.
    """
    A = _array(M)
    d = A.shape[1]
    if not (p >= 1 and math.isfinite(p)):
        raise ValueError("p must be in [1, inf)")
    if d == 0 or not np.any(A):
        return PNormEstimate(0.0, np.zeros(d), True)
    if p == 1.0:
        cols = np.abs(A).sum(axis=0)
        j = int(np.argmax(cols))
        return PNormEstimate(float(cols[j]), np.eye(d)[:, j], True)
    rng = np.random.default_rng(default_seed() if seed is None else seed)
    X = rng.standard_normal((d, restarts))
    if starts is not None:
        S = np.asarray(starts, float).reshape(d, -1)
        X = np.concatenate([S, X], axis=1)
    if p == 2.0:
        return _subspace(A, X, iters)

    q = p / (p - 1.0)
    best, arg = -1.0, X[:, 0]
    prev = None
    converged = False
    for _ in range(iters):
        r = _ratios(A, X, p)
        k = int(np.argmax(r))
        if r[k] > best:
            best, arg = float(r[k]), X[:, k].copy()
        if prev is not None and abs(r[k] - prev) <= RATIO_TOL * r[k]:
            converged = True
            break
        prev = float(r[k])
        Z = A.T @ _dual(A @ X, p)
        X = _dual(Z, q)
        X = np.where(np.any(X != 0, axis=0), X, rng.standard_normal(X.shape))
    if not converged:
        warnings.warn("p-norm iteration did not converge; returning best ratio found",
                      RuntimeWarning, stacklevel=2)
    return PNormEstimate(best, arg, converged)


def _subspace(A, X, iters) -> PNormEstimate:
    Q, _ = np.linalg.qr(X)
    best, arg, prev = -1.0, Q[:, 0], None
    converged = False
    for _ in range(iters):
        _, s, vt = np.linalg.svd(A @ Q, full_matrices=False)
        x = Q @ vt[0]
        val = float(np.linalg.norm(A @ x) / np.linalg.norm(x))
        if val > best:
            best, arg = val, x
        if prev is not None and abs(val - prev) <= RATIO_TOL * val:
            converged = True
            break
        prev = val
        Q, _ = np.linalg.qr(A.T @ (A @ Q))
    if not converged:
        warnings.warn("subspace iteration did not converge", RuntimeWarning, stacklevel=2)
    return PNormEstimate(best, arg, converged)


@dataclass(frozen=True)
class OracleReport:
    dim: int
    singular_values: np.ndarray
    trace_norm: float
    pnorm: PNormEstimate

    @property
    def largest(self) -> float:
        return float(self.singular_values[0]) if self.dim else 0.0


def oracle_report(T: WCEOperator, t: Optional[Truncation] = None, starts=(),
                  seed: Optional[int] = None) -> OracleReport:
    """Matrix cross-checks: singular values at ``r = 2`` and the ``p``-norm
    estimate on ``l^p`` coordinates, seeded with ``starts`` (step functions)."""
    M2 = to_matrix(T, t, 2.0)
    sv = singular_values(M2)
    p = T.p.p
    Mp = M2 if p == 2.0 else to_matrix(T, t, p)
    S = np.stack([Mp.coordinates(f) for f in starts], axis=1) if len(starts) else None
    est = pnorm_operator_norm(Mp, p, seed=seed, starts=S)
    return OracleReport(M2.dim, sv, math.fsum(sv), est)

