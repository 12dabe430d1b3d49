"""Core value types shared by the theory parser, grounder and evaluators."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Union

Value = Union[int, str]

# Reserved predicate names.
VAL = "val"
IC = "ic"


class TheoryError(Exception):
    """Base class for every error raised while building or using a theory."""


class TheorySyntaxError(TheoryError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        super().__init__(f"{message} (line {line}, column {col})" if line else message)


class StratificationError(TheoryError):
    def __init__(self, predicate: str):
        self.predicate = predicate
        super().__init__(f"program is not stratifiable: predicate {predicate!r} depends negatively on itself")


class RangeRestrictionError(TheoryError):
    pass


class UnknownDomainValueError(TheoryError):
    pass


class GroundingError(TheoryError):
    pass


class IncompleteAssignmentError(TheoryError):
    pass


class Var(NamedTuple):
    name: str

    def __str__(self):
        return self.name


Term = Union[Var, int, str]


def value_key(v: Value):
    """Total order over values: integers first (numerically), then symbols."""
    return (0, v, "") if isinstance(v, int) else (1, 0, v)


def format_value(v: Value) -> str:
    return str(v)


class Atom(NamedTuple):
    pred: str
    args: tuple = ()

    def __str__(self):
        if not self.args:
            return self.pred
        return f"{self.pred}({','.join(str(a) for a in self.args)})"

    def is_ground(self) -> bool:
        return not any(isinstance(a, Var) for a in self.args)

    def variables(self) -> set[str]:
        return {a.name for a in self.args if isinstance(a, Var)}

    def substitute(self, binding: Mapping[str, Value]) -> "Atom":
        return Atom(self.pred, tuple(binding[a.name] if isinstance(a, Var) else a for a in self.args))


@dataclass(frozen=True)
class Literal:
    """A body literal.

    ``kind`` is one of ``pos``, ``neg`` (negation as failure over an atom),
    ``builtin`` (sum/abs/mod/mul) or ``cmp`` (infix comparison, with the
    operator stored as ``atom.pred`` and the two operands as its args).
    """

    kind: str
    atom: Atom

    def variables(self) -> set[str]:
        return self.atom.variables()

    def __str__(self):
        if self.kind == "neg":
            return f"not {self.atom}"
        if self.kind == "cmp":
            lhs, rhs = self.atom.args
            return f"{lhs} {self.atom.pred} {rhs}"
        return str(self.atom)


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple[Literal, ...] = ()
    line: int = 0

    @property
    def kind(self) -> str:
        return "integrity-constraint" if self.head.pred == IC else "derivation"

    def __str__(self):
        if not self.body:
            return f"{self.head}."
        return f"{self.head} :- {', '.join(str(lit) for lit in self.body)}."


@dataclass(frozen=True)
class Slot:
    name: str
    domain: tuple[Value, ...]


@dataclass(frozen=True)
class SlotSchema:
    """Ordered finite-domain slots; each slot takes exactly one value."""

    slots: tuple[Slot, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)
    _offsets: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise TheoryError(f"duplicate slot ids in {names}")
        index = {}
        for i, s in enumerate(self.slots):
            if not s.domain:
                raise TheoryError(f"slot {s.name!r} has an empty domain")
            if len(set(s.domain)) != len(s.domain):
                raise TheoryError(f"slot {s.name!r} has duplicate values")
            index[s.name] = (i, {v: j for j, v in enumerate(s.domain)})
        object.__setattr__(self, "_index", index)
        offsets, acc = [], 0
        for s in self.slots:
            offsets.append(acc)
            acc += len(s.domain)
        object.__setattr__(self, "_offsets", tuple(offsets))

    @classmethod
    def of(cls, pairs: Iterable[tuple[str, Iterable[Value]]]) -> "SlotSchema":
        return cls(tuple(Slot(name, tuple(dom)) for name, dom in pairs))

    def __len__(self):
        return len(self.slots)

    def __iter__(self) -> Iterator[Slot]:
        return iter(self.slots)

    def __contains__(self, name):
        return name in self._index

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.slots]

    @property
    def sizes(self) -> list[int]:
        return [len(s.domain) for s in self.slots]

    @property
    def k(self) -> int:
        """Total number of Boolean literals (slot, value)."""
        return sum(self.sizes)

    @property
    def offsets(self) -> list[int]:
        return list(self._offsets)

    def slot(self, name: str) -> Slot:
        return self.slots[self.slot_index(name)]

    def slot_index(self, name: str) -> int:
        try:
            return self._index[name][0]
        except KeyError:
            raise TheoryError(f"unknown slot {name!r}") from None

    def value_index(self, name: str, value: Value) -> int:
        entry = self._index.get(name)
        if entry is None:
            raise TheoryError(f"unknown slot {name!r}")
        try:
            return entry[1][value]
        except (KeyError, TypeError):
            raise UnknownDomainValueError(f"value {value!r} is not in the domain of slot {name!r}") from None

    def literal_index(self, name: str, value: Value) -> int:
        return self._offsets[self.slot_index(name)] + self.value_index(name, value)

    def literals(self) -> list[tuple[str, Value]]:
        return [(s.name, v) for s in self.slots for v in s.domain]

    def to_json(self) -> list[dict]:
        return [{"slot": s.name, "domain": list(s.domain)} for s in self.slots]

    @classmethod
    def from_json(cls, data: list[dict]) -> "SlotSchema":
        return cls.of((d["slot"], d["domain"]) for d in data)

    def digest(self) -> str:
        text = ";".join(f"{s.name}:{','.join(map(repr, s.domain))}" for s in self.slots)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


class Assignment(Mapping):
    """A (possibly partial) binding of slots to values of their domains."""

    __slots__ = ("schema", "_bindings")

    def __init__(self, schema: SlotSchema, bindings: Mapping[str, Value] = ()):
        bindings = dict(bindings)
        for name, value in bindings.items():
            schema.value_index(name, value)
        self.schema = schema
        self._bindings = bindings

    @classmethod
    def from_indices(cls, schema: SlotSchema, indices) -> "Assignment":
        out = {}
        for slot, j in zip(schema.slots, indices):
            if j >= 0:
                out[slot.name] = slot.domain[j]
        return cls(schema, out)

    def __getitem__(self, key):
        return self._bindings[key]

    def __iter__(self):
        return (s.name for s in self.schema.slots if s.name in self._bindings)

    def __len__(self):
        return len(self._bindings)

    @property
    def complete(self) -> bool:
        return len(self._bindings) == len(self.schema)

    def indices(self) -> tuple[int, ...]:
        """Value index per slot in schema order, ``-1`` for unbound slots."""
        return tuple(
            self.schema.value_index(s.name, self._bindings[s.name]) if s.name in self._bindings else -1
            for s in self.schema.slots
        )

    def __eq__(self, other):
        if isinstance(other, Assignment):
            return self.schema == other.schema and self._bindings == other._bindings
        return NotImplemented

    def __hash__(self):
        return hash(self.indices())

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in self.items())
        return f"Assignment({inner})"


@dataclass(frozen=True)
class Outcome:
    """A subset of the outcome atoms, or the violation marker."""

    atoms: frozenset = frozenset()
    violated: bool = False

    @classmethod
    def of(cls, *atoms) -> "Outcome":
        from .parser import parse_atom

        return cls(frozenset(parse_atom(a) if isinstance(a, str) else a for a in atoms))

    def __str__(self):
        if self.violated:
            return "⊥"
        return "{" + ", ".join(sorted(str(a) for a in self.atoms)) + "}"

    def to_json(self):
        if self.violated:
            return None
        return sorted(str(a) for a in self.atoms)

    @classmethod
    def from_json(cls, data) -> "Outcome":
        if data is None:
            return BOTTOM
        return cls.of(*data)

    def key(self) -> str:
        return "⊥" if self.violated else "|".join(sorted(str(a) for a in self.atoms))


BOTTOM = Outcome(frozenset(), violated=True)
