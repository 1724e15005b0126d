"""Scenario files: a TOML description of a space, an operator and the
tail declarations used to certify its verdicts.

Schema (every key except ``p`` and ``[u]`` is optional)::

    p = 2                        # exponent, 1 <= p < inf
    kind = "wce"                 # or "multiplication" (w is fixed to 1)

    [truncation]
    terms = 20000                # default number of blocks per family
    level = 3                    # region refinement level

    [[family]]
    name = "evens"
    count = "inf"                # or an integer
    size = "n"                   # expression in n
    label = "2*(k(n)+j)"         # expression in n, j
    weight = "1"                 # expression in n, j, x
    exceed = 10                  # partial-sum level accepted as divergence
    [family.dominate]            # summable termwise majorant
    law = "power"                # c*n^(-s); or "geometric": c*r^n
    c = "32/9"                   # number or constant expression
    s = 4
    bound = "1/(2*k(n)^2)"       # optional intermediate bound in n
    [family.decay]               # same fields; law need only tend to 0
    [family.lower]               # same fields; termwise lower law

    [[block]]
    labels = [1.5, 2.5]
    weights = [1, 1]

    [region]
    measure = 1
    level = 3

    [u]
    expr = "x"
    region = 1.0                 # constant or 2^l x 2^l table [strip][row]
    family = { odds = "1" }      # per-family expressions
    table = [[2, 0.5]]           # [label, value] overrides

    [w]                          # same fields as [u]
    [norm]
    upper = 1.0                  # externally known upper bound on ||T||
    [compact]
    eps = [1, 0.1, 0.01]
    [witness]
    delta = 0.9
    count = 8
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .genexpr import ExprError, compile_expr, evaluate, free_variables
from .measure import (AtomBlock, AtomFamily, MeasurableFunction, MeasureSpace, NonAtomicRegion,
                      Truncation)
from .tails import TailDeclaration, TailLaw
from .wce import WCEOperator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PROBE_BLOCKS = 64
DEFAULT_EPS = (1.0, 0.1, 0.01, 0.001)
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class SpecError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True, eq=False)
class SpaceSpec:
    name: str
    p: float
    kind: str
    space: MeasureSpace
    u: MeasurableFunction
    w: MeasurableFunction
    terms: int = 1000
    level: Optional[int] = None
    declarations: dict = field(default_factory=dict)
    norm_upper: Optional[float] = None
    eps: tuple = DEFAULT_EPS
    delta: Optional[float] = None
    count: int = 8

    def operator(self, p: Optional[float] = None) -> WCEOperator:
        return WCEOperator(self.u, self.w, self.space, self.p if p is None else p)

    def truncation(self, terms: Optional[int] = None, level: Optional[int] = None) -> Truncation:
        return Truncation(self.terms if terms is None else terms,
                          self.level if level is None else level)


def _number(value, where, errors, positive=False) -> Optional[float]:
    """A number, or a string expression without variables."""
    try:
        if isinstance(value, bool):
            raise TypeError
        if isinstance(value, str):
            e = compile_expr(value)
            if free_variables(e):
                raise ValueError(f"constant may not use {sorted(free_variables(e))}")
            x = float(evaluate(e, {}))
        else:
            x = float(value)
    except (ExprError, ValueError, TypeError) as exc:
        detail = f" ({exc})" if str(exc) else ""
        errors.append(f"{where}: not a number: {value!r}{detail}")
        return None
    if not math.isfinite(x) or (positive and x <= 0):
        errors.append(f"{where}: must be {'positive and ' if positive else ''}finite, got {x}")
        return None
    return x


def _expr(value, where, allowed, errors):
    try:
        e = compile_expr(value)
    except ExprError as exc:
        errors.append(f"{where}: {exc}")
        return None
    except TypeError:
        errors.append(f"{where}: expected an expression, got {value!r}")
        return None
    extra = free_variables(e) - allowed
    if extra:
        errors.append(f"{where}: may not use {sorted(extra)}")
        return None
    return e


def _law(tab, where, errors) -> Optional[TailLaw]:
    kind = tab.get("law", "power")
    c = _number(tab.get("c", 1.0), f"{where}.c", errors, positive=True)
    key = "r" if kind == "geometric" else "s"
    if key not in tab:
        errors.append(f"{where}: missing {key}")
        return None
    s = _number(tab[key], f"{where}.{key}", errors)
    if c is None or s is None:
        return None
    try:
        return TailLaw(kind, c, s)
    except ValueError as exc:
        errors.append(f"{where}: {exc}")
        return None


def _declaration(fam: dict, where: str, errors) -> Optional[TailDeclaration]:
    kw = {}
    bound = None
    for key in ("dominate", "decay", "lower"):
        if key in fam:
            tab = fam[key]
            if not isinstance(tab, dict):
                errors.append(f"{where}.{key}: expected a table")
                continue
            law = _law(tab, f"{where}.{key}", errors)
            if law is not None:
                kw[key] = law
            if "bound" in tab and key != "lower":
                bound = _expr(tab["bound"], f"{where}.{key}.bound", {"n"}, errors)
    if "exceed" in fam:
        kw["exceed"] = _number(fam["exceed"], f"{where}.exceed", errors, positive=True)
    if not kw:
        return None
    try:
        return TailDeclaration(bound=bound, **kw)
    except ValueError as exc:
        errors.append(f"{where}: {exc}")
        return None


def _function(tab, where, errors) -> Optional[MeasurableFunction]:
    if not isinstance(tab, dict):
        errors.append(f"{where}: expected a table")
        return None
    allowed = {"n", "j", "x"}
    kw = {}
    n0 = len(errors)
    if "expr" in tab:
        kw["expr"] = _expr(tab["expr"], f"{where}.expr", allowed, errors)
    fam = tab.get("family", {})
    kw["family"] = {k: _expr(v, f"{where}.family.{k}", allowed, errors) for k, v in fam.items()}
    table = {}
    for i, row in enumerate(tab.get("table", [])):
        if not (isinstance(row, list) and len(row) == 2):
            errors.append(f"{where}.table[{i}]: expected [label, value]")
            continue
        a = _number(row[0], f"{where}.table[{i}]", errors)
        b = _number(row[1], f"{where}.table[{i}]", errors)
        if a is not None and b is not None:
            table[a] = b
    kw["table"] = table
    if "region" in tab:
        kw["region"] = tab["region"]
    if len(errors) > n0:
        return None
    try:
        return MeasurableFunction(**kw)
    except (ValueError, TypeError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def _family(fam, i, errors) -> Optional[AtomFamily]:
    where = f"family[{i}]"
    if not isinstance(fam, dict) or "name" not in fam:
        errors.append(f"{where}: needs a name")
        return None
    where = f"family {fam['name']}"
    count = fam.get("count", "inf")
    if count == "inf":
        count = None
    elif isinstance(count, bool) or not isinstance(count, int) or count < 0:
        errors.append(f"{where}: count must be a nonnegative integer or \"inf\"")
        return None
    n0 = len(errors)
    size = _expr(fam.get("size", 1), f"{where}.size", {"n"}, errors)
    label = _expr(fam.get("label"), f"{where}.label", {"n", "j"}, errors) \
        if "label" in fam else None
    if label is None and "label" not in fam:
        errors.append(f"{where}: missing label")
    weight = _expr(fam.get("weight", 1), f"{where}.weight", {"n", "j", "x"}, errors)
    if len(errors) > n0:
        return None
    return AtomFamily(fam["name"], size, label, weight, count)


def _probe(space: MeasureSpace, errors):
    """Evaluate the first blocks to catch bad weights, sizes and clashes early."""
    for f in space.families:
        sub = MeasureSpace((f,)).truncate(Truncation(PROBE_BLOCKS))
        try:
            for _ in sub.iter_chunks():
                pass
        except ValueError as exc:
            errors.append(str(exc))
    if errors:
        return
    try:
        for _ in space.truncate(Truncation(PROBE_BLOCKS)).iter_chunks():
            pass
    except ValueError as exc:
        errors.append(str(exc))


def parse_spec(text: str, name: str = "<string>") -> SpaceSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError([f"{name}: {exc}"]) from None
    errors: list = []

    p = doc.get("p")
    if p is None:
        errors.append("p: missing")
    else:
        p = _number(p, "p", errors)
        if p is not None and not 1.0 <= p < math.inf:
            errors.append(f"p: {p} out of [1, inf)")
            p = None
    kind = doc.get("kind", "wce")
    if kind not in ("wce", "multiplication"):
        errors.append(f"kind: unknown {kind!r}")

    trunc = doc.get("truncation", {})
    terms = trunc.get("terms", 1000)
    if isinstance(terms, bool) or not isinstance(terms, int) or terms < 1:
        errors.append("truncation.terms: positive integer required")
        terms = 1
    level = trunc.get("level")

    families, decls = [], {}
    for i, fam in enumerate(doc.get("family", [])):
        f = _family(fam, i, errors)
        if f is None:
            continue
        families.append(f)
        d = _declaration(fam, f"family {f.name}", errors)
        if d is not None:
            decls[f.name] = d

    blocks = []
    seen = {}
    for i, b in enumerate(doc.get("block", [])):
        labels, weights = b.get("labels", []), b.get("weights", [1.0] * len(b.get("labels", [])))
        ok = True
        for k, wt in enumerate(weights):
            if not isinstance(wt, (int, float)) or isinstance(wt, bool) or not wt > 0:
                errors.append(f"block[{i}]: nonpositive weight {wt!r}")
                ok = False
        for lab in labels:
            if lab in seen:
                errors.append(f"block[{i}]: duplicate label {lab} (also in block[{seen[lab]}])")
                ok = False
            seen[lab] = i
        if ok:
            try:
                blocks.append(AtomBlock(tuple(labels), tuple(weights)))
            except (ValueError, TypeError) as exc:
                errors.append(f"block[{i}]: {exc}")

    region = None
    if "region" in doc:
        r = doc["region"]
        try:
            region = NonAtomicRegion(float(r.get("measure", 1.0)), int(r.get("level", 0)))
        except (ValueError, TypeError) as exc:
            errors.append(f"region: {exc}")
    if level is not None and not (isinstance(level, int) and 0 <= level <= 10):
        errors.append("truncation.level: integer in [0, 10] required")
        level = None

    if "u" not in doc:
        errors.append("u: missing")
    u = _function(doc.get("u", {}), "u", errors)
    if kind == "multiplication":
        if "w" in doc:
            errors.append("w: a multiplication operator has w = 1")
        w = MeasurableFunction.constant(1.0)
    else:
        if "w" not in doc:
            errors.append("w: missing")
        w = _function(doc.get("w", {}), "w", errors)

    upper = doc.get("norm", {}).get("upper")
    if upper is not None:
        upper = _number(upper, "norm.upper", errors, positive=True)
    eps = tuple(_number(e, "compact.eps", errors, positive=True) or 1.0
                for e in doc.get("compact", {}).get("eps", DEFAULT_EPS))
    wit = doc.get("witness", {})
    delta = _number(wit["delta"], "witness.delta", errors, positive=True) if "delta" in wit else None
    count = wit.get("count", 8)

    space = None
    if not errors:
        try:
            space = MeasureSpace(families, blocks, region)
        except ValueError as exc:
            errors.append(str(exc))
    if space is not None and not errors:
        _probe(space, errors)
    if errors:
        raise SpecError(errors)
    return SpaceSpec(name, p, kind, space, u, w, terms, level, decls, upper, eps, delta, count)


def load(path) -> SpaceSpec:
    """Load a scenario from a path, or a bundled scenario by name."""
    path = resolve(path)
    return parse_spec(path.read_text(), path.name)


# the bundled example takes p from the file or --p
ALIASES = {"example-lp": "example", "example-lp.spec": "example.spec"}


def resolve(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    name = ALIASES.get(p.name, p.name)
    for cand in (SCENARIO_DIR / name, SCENARIO_DIR / f"{name}.spec"):
        if cand.exists():
            return cand
    raise FileNotFoundError(path)


def bundled() -> list:
    return sorted(q.name for q in SCENARIO_DIR.glob("*.spec"))
