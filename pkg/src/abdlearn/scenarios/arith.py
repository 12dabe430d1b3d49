"""Digit and operator scenarios: add, operator, apply, member, math, dba."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..logic import Atom, Outcome, ProceduralTheory, SlotSchema, load_theory
from .base import ImageGroup, ScenarioSpec
from .glyphs import DIGITS, OPERATOR_CLASS, OPERATORS

DIGIT_VALUES = tuple(range(10))
ARITH_OPS = ("plus", "minus", "times")
GRID = ("g11", "g12", "g21", "g22")


def _digit_group(slots, values=DIGIT_VALUES, name="digits") -> ImageGroup:
    return ImageGroup(name, tuple(slots), DIGITS, tuple(int(v) for v in values))


def _op_group(slots, ops, name="ops") -> ImageGroup:
    return ImageGroup(name, tuple(slots), OPERATORS, tuple(OPERATOR_CLASS[o] for o in ops))


def apply_op(op: str, x: int, y: int) -> int:
    if op == "plus":
        return x + y
    if op == "minus":
        return x - y
    if op == "times":
        return x * y
    raise ValueError(f"unknown operator {op!r}")


# -- add ---------------------------------------------------------------------

PAIR_ADD_SOURCE = """\
% sum of two digits
slot d1 : {0..9}
slot d2 : {0..9}
outcome : {sum(0..18)}
rule sum(S) :- val(d1,X), val(d2,Y), sum(X,Y,S).
"""

GRID_ADD_SOURCE = """\
% row and column sums of a 2x2 grid of digits
slot g11 : {0..9}
slot g12 : {0..9}
slot g21 : {0..9}
slot g22 : {0..9}
outcome : {row(1..2, 0..18), col(1..2, 0..18)}
rule row(1,S) :- val(g11,X), val(g12,Y), sum(X,Y,S).
rule row(2,S) :- val(g21,X), val(g22,Y), sum(X,Y,S).
rule col(1,S) :- val(g11,X), val(g21,Y), sum(X,Y,S).
rule col(2,S) :- val(g12,X), val(g22,Y), sum(X,Y,S).
"""


@lru_cache(maxsize=None)
def pair_add_theory():
    t = load_theory(PAIR_ADD_SOURCE)
    t.name = "pair-add"
    return t


@lru_cache(maxsize=None)
def add_theory():
    t = load_theory(GRID_ADD_SOURCE)
    t.name = "add"
    return t


def grid_label(grid) -> Outcome:
    """Outcome of the add scenario for ``[[a, b], [c, d]]``."""
    (a, b), (c, d) = grid
    return Outcome.of(f"row(1,{a + b})", f"row(2,{c + d})", f"col(1,{a + c})", f"col(2,{b + d})")


def add_spec() -> ScenarioSpec:
    theory = add_theory()

    def sampler(rng, i):
        return {s: int(v) for s, v in zip(GRID, rng.integers(10, size=4))}, ()

    return ScenarioSpec("add", theory.schema, theory, (_digit_group(GRID),), sampler)


def pair_add_spec() -> ScenarioSpec:
    theory = pair_add_theory()

    def sampler(rng, i):
        return {"d1": int(rng.integers(10)), "d2": int(rng.integers(10))}, ()

    return ScenarioSpec("pair-add", theory.schema, theory, (_digit_group(("d1", "d2")),), sampler)


# -- operator (program induction) ----------------------------------------------

OPERATOR_SOURCE = """\
% row and column results of one unknown operator over a 2x2 digit grid
slot g11 : {0..9}
slot g12 : {0..9}
slot g21 : {0..9}
slot g22 : {0..9}
slot op : {plus, minus, times}
outcome : {row(1..2, -9..81), col(1..2, -9..81)}
fact digit(0), digit(1), digit(2), digit(3), digit(4), digit(5), digit(6), digit(7), digit(8), digit(9).
rule apply(plus,X,Y,Z) :- digit(X), digit(Y), sum(X,Y,Z).
rule apply(minus,X,Y,Z) :- digit(X), digit(Y), sum(Y,Z,X).
rule apply(times,X,Y,Z) :- digit(X), digit(Y), mul(X,Y,Z).
rule row(1,Z) :- val(op,O), val(g11,X), val(g12,Y), apply(O,X,Y,Z).
rule row(2,Z) :- val(op,O), val(g21,X), val(g22,Y), apply(O,X,Y,Z).
rule col(1,Z) :- val(op,O), val(g11,X), val(g21,Y), apply(O,X,Y,Z).
rule col(2,Z) :- val(op,O), val(g12,X), val(g22,Y), apply(O,X,Y,Z).
"""


@lru_cache(maxsize=None)
def operator_theory():
    t = load_theory(OPERATOR_SOURCE)
    t.name = "operator"
    return t


def operator_spec(op: str | None = None, seed: int = 0) -> ScenarioSpec:
    """The operator is global to a run; by default it is drawn from ``seed``."""
    theory = operator_theory()
    if op is None:
        op = ARITH_OPS[int(np.random.default_rng([seed, 7]).integers(len(ARITH_OPS)))]
    if op not in ARITH_OPS:
        raise ValueError(f"operator must be one of {ARITH_OPS}")

    def sampler(rng, i):
        values = {s: int(v) for s, v in zip(GRID, rng.integers(10, size=4))}
        values["op"] = op
        return values, ()

    return ScenarioSpec(
        "operator", theory.schema, theory, (_digit_group(GRID),), sampler, latent=("op",), params={"op": op}
    )


# -- apply -------------------------------------------------------------------

OP_GRID = ("o11", "o12", "o21", "o22")


def _apply_source() -> str:
    nums = ", ".join(f"num({i})" for i in range(-9, 82))
    return f"""\
% three symbolic digits combined left to right by a 2x2 grid of operators
slot o11 : {{plus, minus, times}}
slot o12 : {{plus, minus, times}}
slot o21 : {{plus, minus, times}}
slot o22 : {{plus, minus, times}}
outcome : {{row(1..2, -81..729), col(1..2, -81..729)}}
fact {', '.join(f'digit({i})' for i in range(10))}.
fact {nums}.
rule apply(plus,X,Y,Z) :- num(X), digit(Y), sum(X,Y,Z).
rule apply(minus,X,Y,Z) :- num(X), digit(Y), sum(Y,Z,X).
rule apply(times,X,Y,Z) :- num(X), digit(Y), mul(X,Y,Z).
rule chain(A,B,R) :- val(A,OA), val(B,OB), d(1,X), d(2,Y), d(3,W), apply(OA,X,Y,T), apply(OB,T,W,R).
rule row(1,R) :- chain(o11,o12,R).
rule row(2,R) :- chain(o21,o22,R).
rule col(1,R) :- chain(o11,o21,R).
rule col(2,R) :- chain(o12,o22,R).
"""


@lru_cache(maxsize=None)
def apply_theory():
    t = load_theory(_apply_source())
    t.name = "apply"
    return t


def apply_label(digits, ops) -> Outcome:
    d1, d2, d3 = digits
    o11, o12, o21, o22 = ops

    def chain(a, b):
        return apply_op(b, apply_op(a, d1, d2), d3)

    return Outcome.of(f"row(1,{chain(o11, o12)})", f"row(2,{chain(o21, o22)})", f"col(1,{chain(o11, o21)})", f"col(2,{chain(o12, o22)})")


def apply_spec() -> ScenarioSpec:
    theory = apply_theory()

    def sampler(rng, i):
        digits = [int(v) for v in rng.integers(10, size=3)]
        ops = {s: ARITH_OPS[int(j)] for s, j in zip(OP_GRID, rng.integers(3, size=4))}
        facts = tuple(Atom("d", (k + 1, d)) for k, d in enumerate(digits))
        return ops, facts

    return ScenarioSpec("apply", theory.schema, theory, (_op_group(OP_GRID, ARITH_OPS),), sampler)


# -- member ------------------------------------------------------------------


def _member_source(n: int) -> str:
    slots = "\n".join(f"slot d{i} : {{0..9}}" for i in range(1, n + 1))
    return f"""\
% does the queried digit q(D) occur among the {n} digits?
{slots}
outcome : {{in, out}}
rule in :- q(D), val(S,D).
rule out :- not in.
"""


@lru_cache(maxsize=None)
def member_theory(n: int = 3):
    t = load_theory(_member_source(n))
    t.name = f"member({n})"
    return t


def member_spec(n: int = 3) -> ScenarioSpec:
    theory = member_theory(n)
    slots = tuple(f"d{i}" for i in range(1, n + 1))

    def sampler(rng, i):
        digits = [int(v) for v in rng.integers(10, size=n)]
        # alternate: query one of the digits, or a digit absent from the set
        if i % 2 == 0:
            q = digits[int(rng.integers(n))]
        else:
            absent = [d for d in DIGIT_VALUES if d not in digits]
            q = absent[int(rng.integers(len(absent)))]
        return dict(zip(slots, digits)), (Atom("q", (q,)),)

    return ScenarioSpec(
        f"member({n})", theory.schema, theory, (_digit_group(slots),), sampler, labels=("in", "out"), params={"n": n}
    )


# -- expressions (procedural) -----------------------------------------------------

_PREC = {"plus": 1, "minus": 1, "times": 2}


def evaluate(tokens) -> int:
    """Value of an alternating digit/operator sequence, ``times`` binding tighter."""
    tokens = list(tokens)
    if len(tokens) % 2 == 0:
        raise ValueError("expressions have an odd number of tokens")
    # fold products first, then sums and differences left to right
    terms, signs = [tokens[0]], []
    for op, d in zip(tokens[1::2], tokens[2::2]):
        if op == "times":
            terms[-1] = terms[-1] * d
        elif op in ("plus", "minus"):
            signs.append(op)
            terms.append(d)
        else:
            raise ValueError(f"unknown operator {op!r}")
    total = terms[0]
    for op, t in zip(signs, terms[1:]):
        total = total + t if op == "plus" else total - t
    return total


def _token_schema(n: int, digits, ops) -> SlotSchema:
    if n < 1 or n % 2 == 0:
        raise ValueError("expression length must be odd")
    return SlotSchema.of((f"t{i}", digits if i % 2 == 1 else ops) for i in range(1, n + 1))


def math_theory(n: int = 3) -> ProceduralTheory:
    schema = _token_schema(n, DIGIT_VALUES, ARITH_OPS)
    names = schema.names
    n_digits = (n + 1) // 2
    hi = 9**n_digits if n_digits > 1 else 9
    lo = -9 * 9 ** max(n_digits - 2, 0) * (n_digits - 1)
    outcomes = [Atom("result", (r,)) for r in range(min(lo, 0), hi + 1)]

    def fn(values, facts):
        return Outcome(frozenset({Atom("result", (evaluate(values[s] for s in names),))}))

    return ProceduralTheory(f"math({n})", schema, outcomes, fn, params=f"n={n}")


def math_spec(n: int = 3) -> ScenarioSpec:
    theory = math_theory(n)
    names = theory.schema.names

    def sampler(rng, i):
        return {
            s: int(rng.integers(10)) if k % 2 == 0 else ARITH_OPS[int(rng.integers(3))] for k, s in enumerate(names)
        }, ()

    digit_slots = names[0::2]
    op_slots = names[1::2]
    groups = [_digit_group(digit_slots)]
    if op_slots:
        groups.append(_op_group(op_slots, ARITH_OPS))
    return ScenarioSpec(f"math({n})", theory.schema, theory, tuple(groups), sampler, params={"n": n})


DBA_OPS = ("plus", "minus", "times", "eq")


def equation_valid(tokens) -> bool:
    tokens = list(tokens)
    ops = tokens[1::2]
    if ops.count("eq") != 1:
        return False
    k = tokens.index("eq")
    return evaluate(tokens[:k]) == evaluate(tokens[k + 1 :])


def dba_theory(n: int = 5) -> ProceduralTheory:
    schema = _token_schema(n, (0, 1), DBA_OPS)
    names = schema.names
    valid, invalid = Atom("valid"), Atom("invalid")

    def fn(values, facts):
        ok = equation_valid(values[s] for s in names)
        return Outcome(frozenset({valid if ok else invalid}))

    return ProceduralTheory(f"dba({n})", schema, (valid, invalid), fn, params=f"n={n}")


def dba_spec(n: int = 5) -> ScenarioSpec:
    theory = dba_theory(n)
    names = theory.schema.names

    def sampler(rng, i):
        values = {}
        eq_at = 2 * int(rng.integers((n - 1) // 2)) + 1 if n > 1 else None
        for k, s in enumerate(names):
            if k % 2 == 0:
                values[s] = int(rng.integers(2))
            elif k == eq_at:
                values[s] = "eq"
            else:
                values[s] = DBA_OPS[int(rng.integers(3))]
        return values, ()

    return ScenarioSpec(
        f"dba({n})",
        theory.schema,
        theory,
        (_digit_group(names[0::2], (0, 1)), _op_group(names[1::2], DBA_OPS)),
        sampler,
        labels=("valid", "invalid"),
        params={"n": n},
    )
