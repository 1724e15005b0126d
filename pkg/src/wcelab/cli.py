"""Command line front end: ``wcelab <command> <scenario> [options]``.

Exit codes: 0 analysis completed, 2 invalid input, 3 an internal
cross-check disagreed beyond tolerance.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional

import numpy as np

from . import nuclearity as nuc
from . import oracle as orc
from .measure import EvaluationError, Truncation
from .specfile import SpaceSpec, SpecError, bundled, load
from .wce import (WCEOperator, atom_table, compactness_verdict, effective_space, extremal_function,
                  norm_formula)

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 3
ORACLE_POINTS = orc.MAX_DIM
REPRESENT_POINTS = 256
NORM_TOL = 1e-6
EXACT_TOL = 1e-9


class CheckFailed(RuntimeError):
    pass


def dumps(obj, indent: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return '"nan"'
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return format(x, ".17g")
    return json.dumps(str(obj))


def small_truncation(T: WCEOperator, t: Truncation, limit: int) -> Optional[Truncation]:
    """Largest truncation (in blocks per family) with at most ``limit`` coordinates."""
    def size(N):
        sp = effective_space(T, Truncation(N, t.level))
        cells = 0 if sp.region is None else sp.region.side ** 2
        return sp.point_count() + cells

    if size(0) > limit:
        return None
    lo, hi = 0, t.terms
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if size(mid) <= limit:
            lo = mid
        else:
            hi = mid - 1
    return Truncation(lo, t.level)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


class Report:
    def __init__(self):
        self.sections: dict = {}
        self.lines: list = []

    def section(self, name: str, data: dict, lines):
        self.sections[name] = data
        self.lines.append(f"== {name} ==")
        self.lines.extend(lines)


def run_norm(spec: SpaceSpec, T, t, rep: Report, seed):
    res = norm_formula(T, t, spec.declarations, spec.norm_upper)
    data = {"value": res.value, "argmax": list(res.argmax), "lower_bound": res.lower_bound,
            "upper": res.upper}
    lines = [f"norm: {_fmt(res.value)} at {res.argmax[0]} {res.argmax[1]}"]
    if res.lower_bound:
        lines.append("atoms beyond the truncation not seen: value is a lower bound")
        lines.append(f"upper bracket: {_fmt(res.upper) if res.upper is not None else 'none'}")
    small = small_truncation(T, t, ORACLE_POINTS)
    if small is not None and math.isfinite(T.p.p):
        ref = norm_formula(T, small).value
        starts = _extremals(T, small)
        est = orc.oracle_report(T, small, starts, seed).pnorm
        agree = abs(est.lower - ref) <= NORM_TOL * (1 + ref)
        under = est.lower <= ref + EXACT_TOL * (1 + ref)
        data["oracle"] = {"terms": small.terms, "formula": ref, "lower": est.lower,
                          "converged": est.converged, "agrees": agree and under}
        lines.append(f"oracle on {small.terms} blocks per family: formula {_fmt(ref)}, "
                     f"power iteration {_fmt(est.lower)} "
                     f"({'agrees' if agree and under else 'DISAGREES'})")
        if not (agree and under):
            rep.section("norm", data, lines)
            raise CheckFailed("norm formula and matrix oracle disagree")
    rep.section("norm", data, lines)


def _extremals(T, t):
    n = atom_table(T, t).n_atoms
    return [extremal_function(T, i, t).function for i in range(1, n + 1)]


def run_compact(spec, T, t, rep: Report, eps):
    res = compactness_verdict(T, t, eps, spec.declarations)
    data = {"verdict": res.verdict.value, "region_nonzero": res.region_nonzero, "levels": []}
    lines = [f"verdict: {res.verdict.value}"]
    for r in res.reports:
        entry = {"epsilon": r.epsilon, "atoms": len(r.atoms), "cardinality": r.cardinality.value,
                 "complete": r.complete, "meets_region": r.meets_region,
                 "strips": len(r.strips), "reasons": list(r.reasons)}
        line = (f"eps {_fmt(r.epsilon)}: {len(r.atoms)} atoms in truncation, "
                f"{r.cardinality.value}, region {'met' if r.meets_region else 'clear'}")
        if r.variants:
            entry["variants"] = {k: len(v) for k, v in r.variants.items()}
            line += " | " + ", ".join(f"{k} {len(v)}" for k, v in r.variants.items())
        data["levels"].append(entry)
        lines.append(line)
        lines.extend(f"  {why}" for why in r.reasons)
    rep.section("compact", data, lines)


def run_nuclear(spec, T, t, rep: Report):
    if spec.kind == "multiplication":
        v = nuc.multiplication_check(T.u, T.p, spec.space, t, spec.declarations)
    else:
        v = nuc.classify_nuclear(T, t, spec.declarations)
    rec = v.record()
    fams = []
    lines = [f"verdict: {v.cls.value}"]
    lines += [f"{k}: {_fmt(x)}" for k, x in rec.items() if k != "verdict"]
    for f in v.certificate.families:
        entry = {"source": f.source, "terms": f.terms_checked, "partial_sum": f.partial_sum,
                 "exhausted": f.exhausted, "domination": f.domination, "tail": f.tail,
                 "rejected_at": f.rejected_at}
        line = f"  {f.source}: {f.terms_checked} terms, partial sum {_fmt(f.partial_sum)}"
        if f.tail is not None:
            line += f", tail <= {_fmt(f.tail)}"
        if f.rejected_at is not None:
            line += f", domination fails at n={f.rejected_at}"
        if f.divergence is not None:
            d = f.divergence
            entry["divergence"] = {"law": d.law, "checked": d.checked,
                                   "exceed_level": d.exceed_level, "exceed_index": d.exceed_index}
            line += f", diverges (lower law {d.law}"
            if d.exceed_index is not None:
                line += f"; partial sum passes {_fmt(d.exceed_level)} at n={d.exceed_index}"
            line += ")"
        fams.append(entry)
        lines.append(line)
    lines.extend(f"  {r}" for r in v.reasons)
    rec["families"] = fams
    rec["reasons"] = list(v.reasons)
    rep.section("nuclear", rec, lines)


def run_represent(spec, T, t, rep: Report, seed):
    if math.isinf(T.p.p):
        raise ValueError("representation needs 1 <= p < inf")
    r = nuc.nuclear_representation(T, t)
    data = {"atoms": len(r.n), "total": r.total}
    lines = [f"sum of ||phi_n|| ||g_n|| over {len(r.n)} atoms: {_fmt(r.total)}"]
    if r.average_total is not None:
        data["average_total"] = r.average_total
        data["flagged"] = len(r.flagged)
        lines.append(f"with E|u| in place of the dual norm: {_fmt(r.average_total)}")
        lines.append(f"atoms where max|u| exceeds E|u|: {len(r.flagged)}")
    small = small_truncation(T, t, REPRESENT_POINTS)
    if small is not None:
        res = nuc.verify_representation(T, small, samples=100, seed=seed)
        scale = 1.0 + norm_formula(T, small).value
        # a non-vanishing region part is exactly what the atom sum cannot capture
        expected = nuc.region_vanishing(T, small).vanishes
        ok = res <= 1e-12 * scale * 10 or not expected
        data["residual"] = {"terms": small.terms, "max": res, "checked": expected, "ok": ok}
        lines.append(f"residual on {small.terms} blocks per family, 100 random f: {res:.3e}"
                     + ("" if expected else " (region part not representable)"))
        if not ok:
            rep.section("represent", data, lines)
            raise CheckFailed("representation residual too large")
    rep.section("represent", data, lines)


def run_witness(spec, T, t, rep: Report, delta, count):
    if T.space.region is None:
        rep.section("witness", {"available": False},
                    ["no non-atomic region: no separation witness"])
        return
    if delta is None:
        raise ValueError("witness needs --delta (or [witness] delta in the scenario)")
    try:
        w = nuc.separation_witness(T, delta, count, t)
    except ValueError as exc:
        rep.section("witness", {"available": False, "reason": str(exc)}, [f"no witness: {exc}"])
        return
    data = {"available": True, "delta": w.delta, "count": len(w.functions), "level": w.level,
            "strips": list(w.strips), "bound": w.bound, "min_distance": w.min_distance,
            "max_norm": max(w.norms), "holds": w.holds}
    lines = [f"{len(w.functions)} functions on strips {list(w.strips)} at level {w.level}",
             f"largest norm {_fmt(max(w.norms))}",
             f"smallest pairwise distance {_fmt(w.min_distance)} >= bound {_fmt(w.bound)}: "
             f"{'yes' if w.holds else 'NO'}"]
    rep.section("witness", data, lines)
    if not w.holds:
        raise CheckFailed("separation witness violates its bound")


def run_oracle(spec, T, t, rep: Report, seed):
    small = small_truncation(T, t, ORACLE_POINTS)
    if small is None:
        rep.section("oracle", {"available": False}, ["space too large for the matrix oracle"])
        return
    T2 = T.with_exponent(2.0)
    M = orc.to_matrix(T2, small)
    sv = orc.singular_values(M)
    tn = math.fsum(sv)
    tab = atom_table(T2, small)
    terms = math.fsum(list(tab.term) + (list(tab.region_term) if tab.region_term is not None else []))
    rep_total = nuc.nuclear_representation(T2, small).total + (
        math.fsum(tab.region_term) if tab.region_term is not None else 0.0)
    top = float(sv[0]) if len(sv) else 0.0
    nf = norm_formula(T2, small).value
    checks = {
        "trace_norm": abs(tn - terms) <= EXACT_TOL * (1 + tn),
        "representation": abs(tn - rep_total) <= EXACT_TOL * (1 + tn),
        "largest_singular_value": abs(top - nf) <= EXACT_TOL * (1 + nf),
    }
    data = {"terms": small.terms, "dim": M.dim, "trace_norm": tn, "sum_of_terms": terms,
            "representation_total": rep_total, "largest_singular_value": top,
            "norm_formula_p2": nf, "checks": checks}
    lines = [f"matrix of dimension {M.dim} ({small.terms} blocks per family)",
             f"trace norm {_fmt(tn)} vs sum of terms {_fmt(terms)}: "
             f"{'agree' if checks['trace_norm'] else 'DISAGREE'}",
             f"representation total {_fmt(rep_total)}: "
             f"{'agrees' if checks['representation'] else 'DISAGREES'}",
             f"largest singular value {_fmt(top)} vs norm formula {_fmt(nf)}: "
             f"{'agree' if checks['largest_singular_value'] else 'DISAGREE'}"]
    if math.isfinite(T.p.p) and T.p.p != 2.0:
        ref = norm_formula(T, small).value
        est = orc.oracle_report(T, small, _extremals(T, small), seed).pnorm
        ok = abs(est.lower - ref) <= NORM_TOL * (1 + ref) and est.lower <= ref + EXACT_TOL * (1 + ref)
        checks["pnorm"] = ok
        data["pnorm"] = {"p": T.p.p, "formula": ref, "lower": est.lower, "converged": est.converged}
        lines.append(f"p={_fmt(T.p.p)} power iteration {_fmt(est.lower)} vs formula {_fmt(ref)}: "
                     f"{'agree' if ok else 'DISAGREE'}")
    rep.section("oracle", data, lines)
    if not all(checks.values()):
        raise CheckFailed("matrix oracle disagrees with the closed forms")


COMMANDS = {
    "norm": "norm formula with an oracle bracket",
    "compact": "level sets and compactness verdict",
    "nuclear": "nuclearity verdict and series certificate",
    "represent": "explicit rank-one representation and residual check",
    "witness": "separation witness on the non-atomic region",
    "oracle": "matrix cross-checks on a small truncation",
    "report": "all of the above",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wcelab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("spec", help="scenario file or bundled scenario name")
    common.add_argument("--p", type=float, help="override the exponent")
    common.add_argument("--terms", type=int, help="blocks per family in the truncation")
    common.add_argument("--level", type=int, help="region refinement level")
    common.add_argument("--out", help="write the machine-readable report here")
    common.add_argument("--seed", type=int, help="oracle seed (default: WCELAB_SEED or 0)")
    for name, text in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=text)
        if name in ("compact", "report"):
            sp.add_argument("--eps", type=float, nargs="+", help="level-set heights")
        if name in ("witness", "report"):
            sp.add_argument("--delta", type=float, help="super-level height of the symbol")
            sp.add_argument("--count", type=int, help="number of witness functions")
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def execute(args) -> Report:
    spec = load(args.spec)
    p = spec.p if args.p is None else args.p
    if not 1.0 <= p < math.inf:
        raise ValueError(f"p={p} out of [1, inf)")
    T = spec.operator(p)
    t = spec.truncation(args.terms, args.level)
    if t.terms < 1:
        raise ValueError("--terms must be positive")
    seed = orc.default_seed() if args.seed is None else args.seed
    eps = tuple(getattr(args, "eps", None) or spec.eps)
    delta = getattr(args, "delta", None)
    delta = spec.delta if delta is None else delta
    count = getattr(args, "count", None) or spec.count

    rep = Report()
    rep.section("scenario", {"name": spec.name, "p": p, "kind": spec.kind, "terms": t.terms,
                             "level": t.level, "seed": seed},
                [f"{spec.name}: p={_fmt(p)}, {t.terms} blocks per family"])
    cmd = args.command
    steps = {
        "norm": lambda: run_norm(spec, T, t, rep, seed),
        "compact": lambda: run_compact(spec, T, t, rep, eps),
        "nuclear": lambda: run_nuclear(spec, T, t, rep),
        "represent": lambda: run_represent(spec, T, t, rep, seed),
        "witness": lambda: run_witness(spec, T, t, rep, delta, count),
        "oracle": lambda: run_oracle(spec, T, t, rep, seed),
    }
    order = list(steps) if cmd == "report" else [cmd]
    if cmd == "report" and delta is None:
        order.remove("witness")
    try:
        for name in order:
            steps[name]()
    finally:
        args._report = rep
    return rep


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "list":
        print("\n".join(bundled()))
        return EXIT_OK
    code = EXIT_OK
    try:
        execute(args)
    except SpecError as exc:
        print("invalid scenario:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, ValueError, EvaluationError) as exc:
        if getattr(args, "_report", None) is None:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INVALID
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        code = EXIT_CHECK
    rep = args._report
    print("\n".join(rep.lines))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dumps(rep.sections) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
