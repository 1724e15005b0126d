"""User-declared tail behaviour of per-atom sequences.

Nothing about the tail of an infinite family can be decided from finitely
many terms, so verdicts about summability, vanishing or non-vanishing rest on
declarations: a closed-form law that is checked term by term on the
truncation and trusted beyond it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import zeta

from .genexpr import Expr, compile_expr, evaluate, free_variables, to_source

REL_TOL = 1e-12


@dataclass(frozen=True)
class TailLaw:
    """``c * n^(-s)`` (kind ``power``) or ``c * r^n`` (kind ``geometric``, ``s`` holds r)."""

    kind: str
    c: float
    s: float

    def __post_init__(self):
        if self.kind not in ("power", "geometric"):
            raise ValueError(f"unknown tail law {self.kind!r}")
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError("tail law constant must be positive")
        if not math.isfinite(self.s) or (self.kind == "geometric" and self.s <= 0):
            raise ValueError("invalid tail law parameter")

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        if self.kind == "power":
            return self.c * n ** (-self.s)
        return self.c * self.s ** n

    @property
    def summable(self) -> bool:
        return self.s > 1 if self.kind == "power" else self.s < 1

    @property
    def vanishing(self) -> bool:
        return self.s > 0 if self.kind == "power" else self.s < 1

    @property
    def constant(self) -> bool:
        return self.s == 0 if self.kind == "power" else self.s == 1

    def tail_sum(self, N: int) -> float:
        """``sum_{n > N}`` of the law in closed form (inf if divergent)."""
        if not self.summable:
            return math.inf
        if self.kind == "power":
            return float(self.c * zeta(self.s, N + 1))
        return self.c * self.s ** (N + 1) / (1.0 - self.s)

    def describe(self) -> str:
        if self.kind == "power":
            return f"{self.c!r}*n^(-{self.s!r})"
        return f"{self.c!r}*{self.s!r}^n"


@dataclass(frozen=True)
class TailDeclaration:
    """Declarations for one family.

    ``dominate``: summable law with ``a_n <= bound(n) <= law(n)`` for all n.
    ``decay``: law tending to zero with the same termwise meaning (used for
    compactness only).  ``lower``: ``a_n >= law(n)`` for all n.  ``exceed``:
    a partial-sum level whose crossing the user accepts as divergence.
    """

    bound: Optional[Expr] = None
    dominate: Optional[TailLaw] = None
    decay: Optional[TailLaw] = None
    lower: Optional[TailLaw] = None
    exceed: Optional[float] = None

    def __post_init__(self):
        if self.bound is not None:
            b = compile_expr(self.bound)
            if free_variables(b) - {"n"}:
                raise ValueError("a termwise bound may only use n")
            object.__setattr__(self, "bound", b)
        if self.dominate is not None and not self.dominate.summable:
            if self.dominate.kind == "power":
                raise ValueError("power-law domination needs s > 1")
            raise ValueError("geometric domination needs r < 1")
        if self.decay is not None and not self.decay.vanishing:
            raise ValueError("decay law must tend to zero")

    @property
    def upper(self) -> Optional[TailLaw]:
        return self.dominate or self.decay

    def describe_upper(self) -> str:
        law = self.upper
        if law is None:
            return ""
        if self.bound is None:
            return law.describe()
        return f"{to_source(self.bound)} <= {law.describe()}"


@dataclass(frozen=True)
class TermCheck:
    ok: bool
    offending: Optional[int]   # first n where the declared inequality fails
    law: TailLaw


def _bound_values(decl: TailDeclaration, n: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(evaluate(decl.bound, {"n": n.astype(float)}), float), n.shape)


def check_upper(decl: Optional[TailDeclaration], n: np.ndarray, a: np.ndarray) -> Optional[TermCheck]:
    """Verify ``a_n <= bound(n) <= law(n)`` for the given ``n``."""
    if decl is None or decl.upper is None:
        return None
    law = decl.upper
    lv = law(n)
    if decl.bound is not None:
        t = _bound_values(decl, n)
        bad = (a > t * (1 + REL_TOL)) | (t > lv * (1 + REL_TOL))
    else:
        bad = a > lv * (1 + REL_TOL)
    if np.any(bad):
        return TermCheck(False, int(n[int(np.argmax(bad))]), law)
    return TermCheck(True, None, law)


def check_lower(decl: Optional[TailDeclaration], n: np.ndarray, a: np.ndarray) -> Optional[TermCheck]:
    """Verify ``a_n >= law(n)`` for the given ``n``."""
    if decl is None or decl.lower is None:
        return None
    bad = a < decl.lower(n) * (1 - REL_TOL)
    if np.any(bad):
        return TermCheck(False, int(n[int(np.argmax(bad))]), decl.lower)
    return TermCheck(True, None, decl.lower)


def bound_partial_sum(decl: TailDeclaration, N: int) -> float:
    """``sum_{n <= N}`` of the termwise majorant (bound if given, else the law)."""
    n = np.arange(1, N + 1, dtype=float)
    vals = _bound_values(decl, n) if decl.bound is not None else decl.upper(n)
    return math.fsum(vals)
