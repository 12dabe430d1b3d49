"""Finite-domain theories: syntax, grounding, deduction and IC checks."""

from .ground import DEFAULT_GROUND_CAP, GroundRule, GroundTheory, ground, load_theory
from .parser import Program, parse_atom, parse_program, parse_theory
from .procedural import ProceduralTheory
from .types import (
    BOTTOM,
    Assignment,
    Atom,
    GroundingError,
    IncompleteAssignmentError,
    Literal,
    Outcome,
    RangeRestrictionError,
    Rule,
    Slot,
    SlotSchema,
    StratificationError,
    TheoryError,
    TheorySyntaxError,
    UnknownDomainValueError,
    Var,
)


def deduce(theory, assignment) -> Outcome:
    return theory.deduce(assignment)


def check_ics(theory, assignment) -> str:
    return theory.check_ics(assignment)
