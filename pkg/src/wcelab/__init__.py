"""Weighted conditional expectation operators ``f -> w E(u f)`` on L^p spaces."""

from .condexp import check_ce_axioms, conditional_expectation
from .genexpr import evaluate, parse
from .measure import (AtomBlock, AtomFamily, ExponentPair, FiniteSpace, MeasurableFunction,
                      MeasureSpace, NonAtomicRegion, StepFunction, Truncation, integrate, lp_norm,
                      truncate)
from .nuclearity import (Verdict, atom_term, classify_nuclear, multiplication_check,
                         nuclear_representation, separation_witness, series_scan,
                         verify_representation)
from .oracle import pnorm_operator_norm, singular_values, to_matrix, trace_norm
from .specfile import load
from .tails import TailDeclaration, TailLaw
from .wce import (WCEOperator, adjoint, apply, atom_table, compactness_verdict,
                  extremal_function, level_set, norm_formula)

__version__ = "0.1.0"
