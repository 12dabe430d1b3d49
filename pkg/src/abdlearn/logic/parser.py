"""Concrete syntax for finite-domain theories.

A theory source is a sequence of statements::

    slot d1 : {0..9}
    outcome : {even, odd, sum(0..18)}
    rule even :- val(d1, X), mod(X, 2, 0).
    rule odd :- not even.
    fact piece(wq), piece(wr).
    ic :- val(d1, 0), val(d2, 0).

``%`` starts a comment.  ``val(Slot, Value)`` is the reserved abducible
predicate: it holds iff the slot is bound to the value.  Built-in atoms are
``sum/3`` (X+Y=Z), ``abs/3`` (|X-Y|=D), ``mod/3`` (X mod M = R) and ``mul/3``
(X*Y=Z); infix guards are ``= != < <= > >=``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

from .types import (
    IC,
    VAL,
    Atom,
    Literal,
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

BUILTINS = {"sum": 3, "abs": 3, "mod": 3, "mul": 3}
COMPARISONS = ("!=", "<=", ">=", "=", "<", ">")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>%[^\n]*)
  | (?P<int>-?\d+)
  | (?P<ident>[a-z][A-Za-z0-9_]*)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<op>:-|\.\.|!=|<=|>=|[{}(),.:=<>])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise TheorySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self._anon = itertools.count()

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = tok.text or "end of input"
        return TheorySyntaxError(f"{message}, found {found!r}", tok.line, tok.col)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        tok = self.tok
        if tok.kind == kind and (text is None or tok.text == text):
            self.i += 1
            return tok
        return None

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        tok = self.accept(kind, text)
        if tok is None:
            raise self.error(f"expected {what or text or kind}")
        return tok

    # -- terms -------------------------------------------------------------
    def term(self):
        tok = self.tok
        if self.accept("int"):
            return int(tok.text)
        if self.accept("ident"):
            return tok.text
        if self.accept("var"):
            if tok.text == "_":
                return Var(f"_anon{next(self._anon)}")
            return Var(tok.text)
        raise self.error("expected a term")

    def atom(self) -> Atom:
        name = self.expect("ident", what="a predicate name").text
        args = []
        if self.accept("op", "("):
            args.append(self.term())
            while self.accept("op", ","):
                args.append(self.term())
            self.expect("op", ")")
        return Atom(name, tuple(args))

    def ground_pattern(self) -> list[Atom]:
        """An atom whose integer arguments may be ranges ``a..b``."""
        name = self.expect("ident", what="an outcome atom").text
        choices = []
        if self.accept("op", "("):
            choices.append(self.range_value())
            while self.accept("op", ","):
                choices.append(self.range_value())
            self.expect("op", ")")
        return [Atom(name, tuple(args)) for args in itertools.product(*choices)]

    def range_value(self) -> list:
        tok = self.tok
        if self.accept("int"):
            lo = int(tok.text)
            if self.accept("op", ".."):
                hi = int(self.expect("int", what="range upper bound").text)
                if hi < lo:
                    raise TheorySyntaxError(f"empty range {lo}..{hi}", tok.line, tok.col)
                return list(range(lo, hi + 1))
            return [lo]
        if self.accept("ident"):
            return [tok.text]
        raise self.error("expected a constant")

    def literal(self) -> Literal:
        tok = self.tok
        if tok.kind == "eof":
            raise self.error("expected a body literal")
        nxt = self.tokens[self.i + 1]
        if tok.kind == "ident" and tok.text == "not" and nxt.kind == "ident":
            self.i += 1
            return Literal("neg", self.atom())
        if tok.kind == "ident" and not (nxt.kind == "op" and nxt.text in COMPARISONS):
            a = self.atom()
            if BUILTINS.get(a.pred) == len(a.args):
                return Literal("builtin", a)
            return Literal("pos", a)
        lhs = self.term()
        op = self.tok
        if not (op.kind == "op" and op.text in COMPARISONS):
            raise self.error("expected a comparison operator")
        self.i += 1
        rhs = self.term()
        return Literal("cmp", Atom(op.text, (lhs, rhs)))

    def body(self) -> tuple[Literal, ...]:
        lits = [self.literal()]
        while self.accept("op", ","):
            lits.append(self.literal())
        return tuple(lits)

    # -- statements --------------------------------------------------------
    def parse(self):
        slots: list[Slot] = []
        outcomes: list[Atom] = []
        rules: list[Rule] = []
        seen_outcome = False
        while self.tok.kind != "eof":
            tok = self.expect("ident", what="a statement")
            if tok.text == "slot":
                name = self.expect("ident", what="a slot id").text
                self.expect("op", ":")
                values = self.value_set()
                slots.append(Slot(name, tuple(values)))
                self.accept("op", ".")
            elif tok.text == "outcome":
                self.expect("op", ":")
                self.expect("op", "{")
                if not self.accept("op", "}"):
                    outcomes.extend(self.ground_pattern())
                    while self.accept("op", ","):
                        outcomes.extend(self.ground_pattern())
                    self.expect("op", "}")
                seen_outcome = True
                self.accept("op", ".")
            elif tok.text == "rule":
                head = self.atom()
                if BUILTINS.get(head.pred) == len(head.args) or head.pred == VAL:
                    raise TheorySyntaxError(f"{head.pred!r} cannot be defined by rules", tok.line, tok.col)
                body = ()
                if self.accept("op", ":-"):
                    body = self.body()
                self.expect("op", ".")
                rules.append(Rule(head, body, tok.line))
            elif tok.text == "fact":
                facts = [self.atom()]
                while self.accept("op", ","):
                    facts.append(self.atom())
                self.expect("op", ".")
                for f in facts:
                    if not f.is_ground():
                        raise TheorySyntaxError(f"fact {f} is not ground", tok.line, tok.col)
                    rules.append(Rule(f, (), tok.line))
            elif tok.text == IC:
                self.expect("op", ":-")
                body = self.body()
                self.expect("op", ".")
                rules.append(Rule(Atom(IC), body, tok.line))
            else:
                raise self.error("expected 'slot', 'outcome', 'rule', 'fact' or 'ic'", tok)
        if not slots:
            raise TheorySyntaxError("theory declares no slots", self.tok.line, self.tok.col)
        if not seen_outcome:
            raise TheorySyntaxError("theory declares no outcome set", self.tok.line, self.tok.col)
        return slots, outcomes, rules

    def value_set(self) -> list:
        self.expect("op", "{")
        values = list(self.range_value())
        while self.accept("op", ","):
            values.extend(self.range_value())
        self.expect("op", "}")
        return values


@dataclass(frozen=True)
class Program:
    """A parsed (not yet grounded) theory."""

    schema: SlotSchema
    outcomes: tuple[Atom, ...]
    rules: tuple[Rule, ...]
    strata: dict  # predicate -> stratum number

    def with_facts(self, facts) -> "Program":
        extra = tuple(Rule(f, ()) for f in facts)
        return Program(self.schema, self.outcomes, self.rules + extra, predicate_strata(self.rules + extra))

    def source(self) -> str:
        lines = [f"slot {s.name} : {{{', '.join(map(str, s.domain))}}}" for s in self.schema]
        lines.append(f"outcome : {{{', '.join(map(str, self.outcomes))}}}")
        for r in self.rules:
            if r.head.pred == IC:
                lines.append(f"ic :- {', '.join(map(str, r.body))}.")
            else:
                lines.append(f"rule {r}")
        return "\n".join(lines) + "\n"


def parse_atom(text: str) -> Atom:
    p = _Parser(text)
    a = p.atom()
    if p.tok.kind != "eof":
        raise p.error("trailing input after atom")
    if not a.is_ground():
        raise TheoryError(f"atom {text!r} is not ground")
    return a


def parse_theory(text: str) -> tuple[SlotSchema, list[Rule]]:
    """Parse a theory and return its schema and rules."""
    program = parse_program(text)
    return program.schema, list(program.rules)


def parse_program(text: str) -> Program:
    slots, outcomes, rules = _Parser(text).parse()
    try:
        schema = SlotSchema(tuple(slots))
    except TheoryError as exc:
        raise TheorySyntaxError(str(exc)) from None
    for a in outcomes:
        if a.pred in (VAL, IC):
            raise TheoryError(f"outcome atom {a} uses a reserved predicate")
    if len(set(outcomes)) != len(outcomes):
        raise TheoryError("duplicate outcome atoms")
    for rule in rules:
        check_range_restricted(rule)
        check_val_literals(rule, schema)
    strata = predicate_strata(rules)
    return Program(schema, tuple(outcomes), tuple(rules), strata)


def check_val_literals(rule: Rule, schema: SlotSchema) -> None:
    for lit in rule.body:
        if lit.kind in ("pos", "neg") and lit.atom.pred == VAL:
            if len(lit.atom.args) != 2:
                raise TheoryError(f"line {rule.line}: val/2 expects (slot, value)")
            slot, value = lit.atom.args
            if not isinstance(slot, Var):
                if slot not in schema:
                    raise UnknownDomainValueError(f"line {rule.line}: unknown slot {slot!r}")
                if not isinstance(value, Var):
                    schema.value_index(slot, value)
            elif not isinstance(value, Var):
                if not any(value in s.domain for s in schema):
                    raise UnknownDomainValueError(f"line {rule.line}: value {value!r} is in no slot domain")


def builtin_outputs(lit: Literal, bound: set[str]) -> set[str] | None:
    """Variables a builtin/comparison can bind given ``bound``; None if not evaluable yet."""
    args = lit.atom.args
    free = [i for i, a in enumerate(args) if isinstance(a, Var) and a.name not in bound]
    free_names = {args[i].name for i in free}
    if not free:
        return set()
    if lit.kind == "cmp":
        if lit.atom.pred == "=" and len(free_names) == 1 and len(free) == 1:
            return free_names
        return None
    name = lit.atom.pred
    if len(free) != 1:
        return None
    (i,) = free
    if name == "sum":
        return free_names
    if name in ("abs", "mod", "mul") and i == 2:
        return free_names
    if name == "mul" and i in (0, 1):
        return free_names
    return None


def binding_order(rule: Rule) -> list[Literal] | None:
    """Order body literals so generators precede the guards that consume them."""
    bound: set[str] = set()
    pending = list(rule.body)
    order = []
    while pending:
        for j, lit in enumerate(pending):
            if lit.kind == "pos":
                pick = j
                break
            if lit.kind == "neg":
                if lit.variables() <= bound:
                    pick = j
                    break
                continue
            if builtin_outputs(lit, bound) is not None:
                pick = j
                break
        else:
            return None
        lit = pending.pop(pick)
        # Prefer evaluable guards immediately after each generator.
        order.append(lit)
        if lit.kind == "pos":
            bound |= lit.variables()
        elif lit.kind in ("builtin", "cmp"):
            bound |= builtin_outputs(lit, bound) or set()
        # pull forward anything that became evaluable
        progressed = True
        while progressed:
            progressed = False
            for j, other in enumerate(pending):
                if other.kind == "neg" and other.variables() <= bound:
                    order.append(pending.pop(j))
                    progressed = True
                    break
                if other.kind in ("builtin", "cmp"):
                    out = builtin_outputs(other, bound)
                    if out is not None:
                        order.append(pending.pop(j))
                        bound |= out
                        progressed = True
                        break
    if not rule.head.variables() <= bound:
        return None
    return order


def check_range_restricted(rule: Rule) -> None:
    if binding_order(rule) is None:
        bound: set[str] = set()
        for lit in rule.body:
            if lit.kind == "pos":
                bound |= lit.variables()
        loose = (rule.head.variables() | {v for lit in rule.body for v in lit.variables()}) - bound
        names = ", ".join(sorted(v for v in loose if not v.startswith("_anon"))) or "_"
        raise RangeRestrictionError(f"line {rule.line}: variables {names} in rule '{rule}' are not range-restricted")


def dependency_graph(rules) -> dict[str, set[tuple[str, bool]]]:
    graph: dict[str, set[tuple[str, bool]]] = {}
    for r in rules:
        deps = graph.setdefault(r.head.pred, set())
        for lit in r.body:
            if lit.kind in ("pos", "neg"):
                deps.add((lit.atom.pred, lit.kind == "neg"))
                graph.setdefault(lit.atom.pred, set())
    return graph


def strongly_connected(graph: dict[str, set]) -> list[list[str]]:
    """Tarjan's algorithm; components come out in reverse topological order."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    comps: list[list[str]] = []
    counter = itertools.count()

    for root in sorted(graph):
        if root in index:
            continue
        work = [(root, iter(sorted(graph[root])))]
        index[root] = low[root] = next(counter)
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for dep, _neg in it:
                if dep not in index:
                    index[dep] = low[dep] = next(counter)
                    stack.append(dep)
                    on_stack.add(dep)
                    work.append((dep, iter(sorted(graph[dep]))))
                    advanced = True
                    break
                if dep in on_stack:
                    low[node] = min(low[node], index[dep])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                comps.append(sorted(comp))
    return comps


def predicate_strata(rules) -> dict[str, int]:
    """Stratum number per predicate; raises on negative cycles."""
    graph = dependency_graph(rules)
    comps = strongly_connected(graph)
    comp_of = {p: i for i, comp in enumerate(comps) for p in comp}
    for p, deps in graph.items():
        for q, neg in deps:
            if neg and comp_of[p] == comp_of[q]:
                raise StratificationError(q)
    strata: dict[str, int] = {}
    # Tarjan emits dependencies before dependents.
    for comp in comps:
        s = 0
        for p in comp:
            for q, neg in graph[p]:
                if q in comp:
                    continue
                s = max(s, strata[q] + (1 if neg else 0))
        for p in comp:
            strata[p] = s
    return strata
