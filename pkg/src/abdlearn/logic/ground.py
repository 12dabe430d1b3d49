"""Eager grounding of stratified finite-domain programs and forward chaining.

Predicates that do not depend on ``val`` are *static*: they are evaluated
completely while grounding and disappear from the ground program.  The
remaining ground rules only mention abducible atoms ``val(s, v)`` and derived
dynamic atoms, and are compiled into index arrays grouped by evaluation level
so that deduction is a handful of vectorised passes.
"""

from __future__ import annotations

import hashlib
import logging
from collections import OrderedDict, defaultdict
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .parser import Program, binding_order, dependency_graph, parse_program, strongly_connected
from .types import (
    BOTTOM,
    IC,
    VAL,
    Assignment,
    Atom,
    GroundingError,
    IncompleteAssignmentError,
    Literal,
    Outcome,
    Rule,
    TheoryError,
    Var,
    value_key,
)

log = logging.getLogger(__name__)

DEFAULT_GROUND_CAP = 5_000_000


class GroundRule(NamedTuple):
    head: Atom
    pos: tuple[Atom, ...]
    neg: tuple[Atom, ...]

    def __str__(self):
        body = [str(a) for a in self.pos] + [f"not {a}" for a in self.neg]
        return f"{self.head} :- {', '.join(body)}." if body else f"{self.head}."


def _atom_key(a: Atom):
    return (a.pred, tuple(value_key(v) for v in a.args))


# --------------------------------------------------------------------------
# built-ins


def _num(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _compare(op, a, b) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    ka, kb = value_key(a), value_key(b)
    return {"<": ka < kb, "<=": ka <= kb, ">": ka > kb, ">=": ka >= kb}[op]


def eval_guard(lit: Literal, binding: dict) -> Iterator[dict]:
    """Evaluate a built-in or comparison, yielding extended bindings."""
    args = lit.atom.args
    vals = [binding.get(a.name) if isinstance(a, Var) else a for a in args]
    free = [i for i, v in enumerate(vals) if v is None]
    if lit.kind == "cmp":
        if not free:
            if _compare(lit.atom.pred, vals[0], vals[1]):
                yield binding
            return
        # only "=" may bind
        i = free[0]
        other = vals[1 - i]
        yield {**binding, args[i].name: other}
        return
    name = lit.atom.pred
    if any(v is not None and not _num(v) for v in vals):
        return
    x, y, z = vals
    if not free:
        ok = {
            "sum": lambda: x + y == z,
            "abs": lambda: abs(x - y) == z,
            "mod": lambda: y != 0 and x % y == z,
            "mul": lambda: x * y == z,
        }[name]()
        if ok:
            yield binding
        return
    (i,) = free
    var = args[i].name
    if name == "sum":
        out = z - y if i == 0 else z - x if i == 1 else x + y
    elif name == "abs":
        out = abs(x - y)
    elif name == "mod":
        if y == 0:
            return
        out = x % y
    elif name == "mul":
        if i == 2:
            out = x * y
        else:
            known = y if i == 0 else x
            if known == 0:
                if z != 0:
                    return
                raise GroundingError(f"mul/3 with a zero factor cannot bind {var}: add a domain guard")
            if z % known:
                return
            out = z // known
    else:  # pragma: no cover - parser restricts names
        return
    yield {**binding, var: out}


# --------------------------------------------------------------------------
# joins


class _Relations:
    """Indexed sets of ground tuples per predicate."""

    def __init__(self):
        self.tuples: dict[str, set] = defaultdict(set)
        self._index: dict = {}

    def add(self, pred: str, args: tuple) -> bool:
        s = self.tuples[pred]
        if args in s:
            return False
        s.add(args)
        self._index = {k: v for k, v in self._index.items() if k[0] != pred}
        return True

    def contains(self, pred: str, args: tuple) -> bool:
        return args in self.tuples.get(pred, ())

    def match(self, pred: str, pattern: tuple) -> Iterable[tuple]:
        positions = tuple(i for i, v in enumerate(pattern) if v is not None)
        if not positions:
            return self.tuples.get(pred, ())
        key = (pred, positions)
        idx = self._index.get(key)
        if idx is None:
            idx = defaultdict(list)
            for t in self.tuples.get(pred, ()):
                if len(t) == len(pattern):
                    idx[tuple(t[i] for i in positions)].append(t)
            self._index[key] = idx
        return idx.get(tuple(pattern[i] for i in positions), ())


def _solve(order: Sequence[Literal], i: int, binding: dict, lookup, negcheck) -> Iterator[dict]:
    if i == len(order):
        yield binding
        return
    lit = order[i]
    if lit.kind == "pos":
        args = lit.atom.args
        pattern = tuple(binding.get(a.name) if isinstance(a, Var) else a for a in args)
        for t in lookup(lit.atom.pred, pattern):
            if len(t) != len(args):
                continue
            b = binding
            ok = True
            for a, v in zip(args, t):
                if isinstance(a, Var):
                    cur = b.get(a.name)
                    if cur is None:
                        if b is binding:
                            b = dict(binding)
                        b[a.name] = v
                    elif cur != v:
                        ok = False
                        break
                elif a != v:
                    ok = False
                    break
            if ok:
                yield from _solve(order, i + 1, b, lookup, negcheck)
    elif lit.kind == "neg":
        if negcheck(lit.atom.substitute(binding)):
            yield from _solve(order, i + 1, binding, lookup, negcheck)
    else:
        for b in eval_guard(lit, binding):
            yield from _solve(order, i + 1, b, lookup, negcheck)


# --------------------------------------------------------------------------
# compiled evaluator


class _Level:
    __slots__ = ("heads", "pos_flat", "pos_rule", "neg_flat", "neg_rule", "n", "recursive")

    def __init__(self, rules, atom_id, recursive):
        self.n = len(rules)
        self.recursive = recursive
        self.heads = np.array([atom_id[r.head] for r in rules], dtype=np.intp)
        pf, pr, nf, nr = [], [], [], []
        for j, r in enumerate(rules):
            for a in r.pos:
                pf.append(atom_id[a])
                pr.append(j)
            for a in r.neg:
                nf.append(atom_id[a])
                nr.append(j)
        self.pos_flat = np.array(pf, dtype=np.intp)
        self.pos_rule = np.array(pr, dtype=np.intp)
        self.neg_flat = np.array(nf, dtype=np.intp)
        self.neg_rule = np.array(nr, dtype=np.intp)


class GroundTheory:
    """A grounded, immutable theory exposing ``deduce`` and IC checks.

    ``strata`` groups the ground derivation rules by predicate stratum,
    ``ic_clauses`` holds the ground integrity-constraint bodies, and
    ``outcome_atoms`` is the outcome set.
    """

    declarative = True

    def __init__(self, program: Program, cap: int = DEFAULT_GROUND_CAP, facts: tuple = ()):
        self.program = program
        self.schema = program.schema
        self.outcome_atoms = frozenset(program.outcomes)
        self.facts = tuple(sorted(set(facts), key=_atom_key))
        self.cap = cap
        self._extended: OrderedDict = OrderedDict()
        overlap = {a for a in self.outcome_atoms if a.pred == VAL}
        if overlap:
            raise TheoryError("outcome atoms overlap the abducibles")
        self._ground(cap)
        self._compile()
        text = program.source() + "".join(f"fact {f}.\n" for f in self.facts)
        self.digest = hashlib.sha256(text.encode()).hexdigest()[:16]

    # -- grounding ---------------------------------------------------------
    def _ground(self, cap: int) -> None:
        program = self.program
        rules = list(program.rules) + [Rule(f) for f in self.facts]
        graph = dependency_graph(rules)
        dynamic = {VAL}
        changed = True
        while changed:
            changed = False
            for p, deps in graph.items():
                if p not in dynamic and any(q in dynamic for q, _ in deps):
                    dynamic.add(p)
                    changed = True
        self.dynamic_preds = frozenset(dynamic)
        strata = dict(program.strata)
        for r in rules:
            strata.setdefault(r.head.pred, 0)

        orders = {}
        for r in rules:
            order = binding_order(r)
            if order is None:  # pragma: no cover - rejected by the parser
                raise TheoryError(f"rule {r} is not range-restricted")
            orders[id(r)] = order

        # static model, stratum by stratum
        static = _Relations()
        static_rules = [r for r in rules if r.head.pred not in dynamic]
        for s in sorted({strata.get(r.head.pred, 0) for r in static_rules}):
            layer = [r for r in static_rules if strata.get(r.head.pred, 0) == s]
            changed = True
            while changed:
                changed = False
                for r in layer:
                    for b in list(_solve(orders[id(r)], 0, {}, static.match, lambda a: not static.contains(a.pred, a.args))):
                        if static.add(r.head.pred, r.head.substitute(b).args):
                            changed = True
        self.static_model = frozenset(Atom(p, t) for p, ts in static.tuples.items() for t in ts)

        # over-approximation of the dynamic atoms that can ever hold
        possible = _Relations()
        for slot in self.schema:
            for v in slot.domain:
                possible.add(VAL, (slot.name, v))

        def lookup(pred, pattern):
            if pred in dynamic:
                return possible.match(pred, pattern)
            return static.match(pred, pattern)

        def negcheck_loose(a: Atom) -> bool:
            if a.pred in dynamic:
                return True
            return not static.contains(a.pred, a.args)

        dyn_rules = [r for r in rules if r.head.pred in dynamic]
        changed = True
        while changed:
            changed = False
            for r in dyn_rules:
                for b in list(_solve(orders[id(r)], 0, {}, lookup, negcheck_loose)):
                    if possible.add(r.head.pred, r.head.substitute(b).args):
                        changed = True

        ground: dict[GroundRule, None] = {}
        count = 0
        for r in dyn_rules:
            for b in _solve(orders[id(r)], 0, {}, lookup, negcheck_loose):
                count += 1
                if count > cap:
                    raise GroundingError(
                        f"grounding exceeded the cap of {cap} rule instances (while grounding '{r}')"
                    )
                pos, neg = [], []
                for lit in r.body:
                    if lit.kind == "pos" and lit.atom.pred in dynamic:
                        pos.append(lit.atom.substitute(b))
                    elif lit.kind == "neg" and lit.atom.pred in dynamic:
                        a = lit.atom.substitute(b)
                        if possible.contains(a.pred, a.args):
                            neg.append(a)
                g = GroundRule(r.head.substitute(b), tuple(dict.fromkeys(pos)), tuple(dict.fromkeys(neg)))
                ground[g] = None
        self.ground_rule_count = count

        by_stratum: dict[int, list[GroundRule]] = defaultdict(list)
        ics = []
        for g in ground:
            if g.head.pred == IC:
                ics.append(g)
            else:
                by_stratum[strata.get(g.head.pred, 0)].append(g)
        self.strata = [by_stratum[s] for s in sorted(by_stratum)]
        self.ic_clauses = ics
        self._ground_rules = list(ground)
        self._graph = graph

    # -- compilation ---------------------------------------------------------
    def _compile(self) -> None:
        schema = self.schema
        atoms: list[Atom] = [Atom(VAL, (s, v)) for s, v in schema.literals()]
        derived = sorted({g.head for g in self._ground_rules} | {a for g in self._ground_rules for a in g.pos + g.neg if a.pred != VAL}, key=_atom_key)
        atoms.extend(a for a in derived if a.pred != VAL)
        self.atoms = atoms
        atom_id = {a: i for i, a in enumerate(atoms)}
        self._atom_id = atom_id
        self.n_atoms = len(atoms)

        dyn_graph = {p: {(q, n) for q, n in deps if q in self.dynamic_preds} for p, deps in self._graph.items() if p in self.dynamic_preds}
        dyn_graph.setdefault(VAL, set())
        comps = strongly_connected(dyn_graph)
        comp_of = {p: i for i, c in enumerate(comps) for p in c}
        level: dict[int, int] = {}
        recursive_comp = {}
        for i, comp in enumerate(comps):
            lv = 0
            rec = False
            for p in comp:
                for q, _ in dyn_graph[p]:
                    if comp_of[q] == i:
                        rec = True
                    else:
                        lv = max(lv, level[comp_of[q]] + 1)
            level[i] = 0 if comp == [VAL] else max(lv, 1)
            recursive_comp[i] = rec
        by_level: dict[int, list[GroundRule]] = defaultdict(list)
        rec_level: dict[int, bool] = defaultdict(bool)
        for g in self._ground_rules:
            c = comp_of[g.head.pred]
            by_level[level[c]].append(g)
            rec_level[level[c]] |= recursive_comp[c]
        self._levels = [_Level(by_level[lv], atom_id, rec_level[lv]) for lv in sorted(by_level)]

        self._ic_id = atom_id.get(Atom(IC))
        static_out = [a for a in self.outcome_atoms if a.pred not in self.dynamic_preds and a in self.static_model]
        dyn_out = [a for a in self.outcome_atoms if a in atom_id]
        self._static_outcomes = frozenset(static_out)
        self._outcome_ids = np.array([atom_id[a] for a in sorted(dyn_out, key=_atom_key)], dtype=np.intp)
        self._outcome_atoms = [atoms[i] for i in self._outcome_ids]
        self.unreachable_outcomes = frozenset(self.outcome_atoms - set(static_out) - set(dyn_out))
        offsets = schema.offsets
        self._offsets = offsets
        self._sizes = schema.sizes

    # -- evaluation ----------------------------------------------------------
    def _run(self, T: np.ndarray, P: np.ndarray | None) -> None:
        """Least-model evaluation in place; ``P`` is None for complete inputs."""
        for lv in self._levels:
            if lv.n == 0:
                continue
            while True:
                failT = np.zeros(lv.n, dtype=bool)
                if lv.pos_flat.size:
                    failT[lv.pos_rule[~T[lv.pos_flat]]] = True
                if lv.neg_flat.size:
                    failT[lv.neg_rule[(T if P is None else P)[lv.neg_flat]]] = True
                newT = lv.heads[~failT]
                grewT = lv.recursive and not T[newT].all()
                T[newT] = True
                grewP = False
                if P is not None:
                    failP = np.zeros(lv.n, dtype=bool)
                    if lv.pos_flat.size:
                        failP[lv.pos_rule[~P[lv.pos_flat]]] = True
                    if lv.neg_flat.size:
                        failP[lv.neg_rule[T[lv.neg_flat]]] = True
                    newP = lv.heads[~failP]
                    grewP = lv.recursive and not P[newP].all()
                    P[newP] = True
                if not (grewT or grewP):
                    break

    def _initial(self, indices: Sequence[int], partial: bool):
        T = np.zeros(self.n_atoms, dtype=bool)
        P = np.zeros(self.n_atoms, dtype=bool) if partial else None
        for off, size, j in zip(self._offsets, self._sizes, indices):
            if j >= 0:
                T[off + j] = True
                if partial:
                    P[off + j] = True
            elif partial:
                P[off : off + size] = True
            else:
                raise IncompleteAssignmentError("deduce requires a complete assignment")
        return T, P

    def _indices(self, a) -> tuple[int, ...]:
        if isinstance(a, Assignment):
            if a.schema != self.schema:
                raise TheoryError("assignment schema does not match the theory")
            return a.indices()
        return tuple(a)

    def least_model(self, a) -> set[Atom]:
        idx = self._indices(a)
        if any(j < 0 for j in idx) or len(idx) != len(self.schema):
            raise IncompleteAssignmentError("deduce requires a complete assignment")
        T, _ = self._initial(idx, False)
        self._run(T, None)
        return {self.atoms[i] for i in np.flatnonzero(T)} | set(self.static_model)

    def deduce(self, a) -> Outcome:
        """Outcome atoms of the least model, or ``BOTTOM`` if an IC body holds."""
        idx = self._indices(a)
        if len(idx) != len(self.schema) or any(j < 0 for j in idx):
            raise IncompleteAssignmentError("deduce requires a complete assignment")
        T, _ = self._initial(idx, False)
        self._run(T, None)
        if self._ic_id is not None and T[self._ic_id]:
            return BOTTOM
        hits = T[self._outcome_ids]
        return Outcome(frozenset(self._static_outcomes | {a for a, h in zip(self._outcome_atoms, hits) if h}))

    def status(self, a):
        """Three-valued evaluation of a partial assignment.

        Returns boolean vectors ``(certain, possible)`` over ``self.atoms``:
        an atom is in every completion's least model if ``certain`` and in none
        of them if not ``possible``.
        """
        idx = self._indices(a)
        T, P = self._initial(idx, True)
        self._run(T, P)
        return T, P

    def check_ics(self, a) -> str:
        if self._ic_id is None:
            return "consistent-so-far"
        T, _ = self.status(a)
        return "violated" if T[self._ic_id] else "consistent-so-far"

    def prune(self, indices: Sequence[int], target: Outcome) -> bool:
        """True if no completion of the partial assignment deduces ``target``."""
        T, P = self.status(indices)
        if self._ic_id is not None and T[self._ic_id]:
            return True
        want = target.atoms
        if not self._static_outcomes <= want:
            return True
        for a, t, p in zip(self._outcome_atoms, T[self._outcome_ids], P[self._outcome_ids]):
            if a in want:
                if not p:
                    return True
            elif t:
                return True
        if want - self._possible_outcomes():
            return True
        return False

    def _possible_outcomes(self) -> frozenset:
        return self._static_outcomes | frozenset(self._outcome_atoms)

    # -- extension -------------------------------------------------------------
    def extend(self, facts: Iterable[Atom]) -> "GroundTheory":
        """The theory extended with ground facts (cached per fact set)."""
        facts = tuple(sorted(set(self.facts) | set(facts), key=_atom_key))
        if facts == self.facts:
            return self
        for f in facts:
            if f.pred in (VAL, IC) or not f.is_ground():
                raise TheoryError(f"cannot extend a theory with {f}")
        key = facts
        hit = self._extended.get(key)
        if hit is not None:
            self._extended.move_to_end(key)
            return hit
        base = self.program
        theory = GroundTheory(base, cap=self.cap, facts=facts)
        theory.name = getattr(self, "name", None)
        self._extended[key] = theory
        if len(self._extended) > 4096:
            self._extended.popitem(last=False)
        return theory

    @property
    def rule_count(self) -> int:
        return sum(len(s) for s in self.strata) + len(self.ic_clauses)

    def summary(self) -> dict:
        return {
            "digest": self.digest,
            "slots": len(self.schema),
            "literals": self.schema.k,
            "outcomes": len(self.outcome_atoms),
            "strata": len(self.strata),
            "ground_rules": sum(len(s) for s in self.strata),
            "ic_clauses": len(self.ic_clauses),
            "atoms": self.n_atoms,
            "levels": len(self._levels),
        }


def ground(schema, rules, cap: int = DEFAULT_GROUND_CAP, outcomes=None) -> GroundTheory:
    """Ground ``rules`` over ``schema``.

    ``outcomes`` defaults to every atom that some derivation rule may produce.
    """
    from .parser import Program, check_range_restricted, check_val_literals, predicate_strata

    rules = tuple(rules)
    for r in rules:
        check_range_restricted(r)
        check_val_literals(r, schema)
    program = Program(schema, tuple(outcomes or ()), rules, predicate_strata(rules))
    return GroundTheory(program, cap=cap)


def load_theory(text: str, cap: int = DEFAULT_GROUND_CAP) -> GroundTheory:
    """Parse and ground a theory source in one step."""
    return GroundTheory(parse_program(text), cap=cap)
