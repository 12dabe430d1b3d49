"""Symbolic modules given as opaque evaluators over assignments."""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Mapping, Sequence

from .types import BOTTOM, Assignment, Atom, IncompleteAssignmentError, Outcome, SlotSchema, TheoryError, Value

Deducer = Callable[[Mapping[str, Value], frozenset], Outcome]
PartialCheck = Callable[[Mapping[str, Value], frozenset, Outcome], bool]


class ProceduralTheory:
    """A theory whose ``deduce`` is an arbitrary Python function.

    ``fn(values, facts)`` receives the complete slot->value mapping and the
    ground facts the theory was extended with.  ``partial`` optionally decides
    from a partial mapping that no completion can deduce the target; without
    it the abduction search only checks complete assignments.  ``ics``
    optionally flags partial mappings that already violate a constraint.
    """

    declarative = False

    def __init__(
        self,
        name: str,
        schema: SlotSchema,
        outcome_atoms: Iterable[Atom],
        fn: Deducer,
        partial: PartialCheck | None = None,
        ics: Callable[[Mapping[str, Value], frozenset], bool] | None = None,
        facts: Iterable[Atom] = (),
        params: str = "",
    ):
        self.name = name
        self.schema = schema
        self.outcome_atoms = frozenset(outcome_atoms)
        self.fn = fn
        self.partial = partial
        self.ics = ics
        self.facts = tuple(sorted(set(facts)))
        self.params = params
        text = f"{name}|{params}|{schema.digest()}|" + ";".join(map(str, self.facts))
        self.digest = hashlib.sha256(text.encode()).hexdigest()[:16]

    def _values(self, a) -> dict:
        if isinstance(a, Assignment):
            return dict(a)
        return {s.name: s.domain[j] for s, j in zip(self.schema.slots, a) if j >= 0}

    def deduce(self, a) -> Outcome:
        values = self._values(a)
        if len(values) != len(self.schema):
            raise IncompleteAssignmentError("deduce requires a complete assignment")
        facts = frozenset(self.facts)
        if self.ics is not None and self.ics(values, facts):
            return BOTTOM
        out = self.fn(values, facts)
        if not out.violated and not out.atoms <= self.outcome_atoms:
            raise TheoryError(f"{self.name}: deducer produced atoms outside the outcome set: {out}")
        return out

    def check_ics(self, a) -> str:
        if self.ics is None:
            return "consistent-so-far"
        values = self._values(a)
        return "violated" if self.ics(values, frozenset(self.facts)) else "consistent-so-far"

    def prune(self, indices: Sequence[int], target: Outcome) -> bool:
        values = self._values(indices)
        facts = frozenset(self.facts)
        if self.ics is not None and self.ics(values, facts):
            return True
        if self.partial is not None:
            return bool(self.partial(values, facts, target))
        return False

    def extend(self, facts: Iterable[Atom]) -> "ProceduralTheory":
        facts = tuple(sorted(set(self.facts) | set(facts)))
        if facts == self.facts:
            return self
        return ProceduralTheory(
            self.name, self.schema, self.outcome_atoms, self.fn, self.partial, self.ics, facts, self.params
        )

    def summary(self) -> dict:
        return {
            "digest": self.digest,
            "name": self.name,
            "slots": len(self.schema),
            "literals": self.schema.k,
            "outcomes": len(self.outcome_atoms),
            "procedural": True,
        }
