"""Abduction: enumerating the assignments that explain an outcome.

Proofs are complete slot assignments, stored as rows of value indices in a
``FeedbackFormula``.  The search is a plain depth-first walk over slots in
schema order that asks the theory, at every node, whether any completion can
still deduce the target.  Guided abduction keeps only the proofs closest to
the neural module's argmax prediction under a ``CostModel``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .logic import Assignment, Atom, Outcome, SlotSchema

log = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 10**8


class AbductionError(Exception):
    pass


class AbductionBudgetExceeded(AbductionError):
    """Raised when the search visits more nodes than allowed.

    ``partial`` holds the proofs found so far; it is marked incomplete and
    must not be used as training feedback.
    """

    def __init__(self, budget: int, partial: "FeedbackFormula"):
        self.budget = budget
        self.partial = partial
        super().__init__(f"abduction exceeded the node budget of {budget} ({len(partial)} proofs found so far)")


@dataclass(frozen=True)
class FeedbackFormula:
    """A disjunction of proofs, each a complete assignment.

    ``proofs`` is an ``(n, slots)`` integer matrix of value indices whose rows
    are unique and sorted lexicographically.  ``cost`` is set for guided
    feedback and is the shared (minimal) cost of every proof.
    """

    schema: SlotSchema
    target: Outcome
    proofs: np.ndarray
    mode: str = "all"
    cost: float | None = None
    complete: bool = True

    def __post_init__(self):
        p = np.asarray(self.proofs, dtype=np.int64).reshape(-1, len(self.schema))
        if len(p):
            p = np.unique(p, axis=0)
        p.setflags(write=False)
        object.__setattr__(self, "proofs", p)

    def __len__(self):
        return len(self.proofs)

    def __bool__(self):
        return len(self.proofs) > 0

    def __eq__(self, other):
        if not isinstance(other, FeedbackFormula):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.target == other.target
            and self.mode == other.mode
            and self.cost == other.cost
            and self.complete == other.complete
            and np.array_equal(self.proofs, other.proofs)
        )

    __hash__ = None

    def assignments(self) -> list[Assignment]:
        return [Assignment.from_indices(self.schema, row) for row in self.proofs]

    def rows(self) -> set[tuple[int, ...]]:
        return {tuple(int(v) for v in row) for row in self.proofs}

    def contains(self, assignment) -> bool:
        idx = assignment.indices() if isinstance(assignment, Assignment) else tuple(assignment)
        return idx in self.rows()

    def to_json(self) -> dict:
        slots = self.schema.slots
        return {
            "schema_digest": self.schema.digest(),
            "schema": self.schema.to_json(),
            "target": self.target.to_json(),
            "mode": self.mode,
            "cost": self.cost,
            "complete": self.complete,
            "proofs": [{s.name: s.domain[j] for s, j in zip(slots, row)} for row in self.proofs],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, data: Mapping) -> "FeedbackFormula":
        schema = SlotSchema.from_json(data["schema"])
        if "schema_digest" in data and data["schema_digest"] != schema.digest():
            raise AbductionError("feedback schema digest does not match its schema")
        rows = [Assignment(schema, p).indices() for p in data["proofs"]]
        for row in rows:
            if -1 in row:
                raise AbductionError("feedback proofs must be complete assignments")
        return cls(
            schema,
            Outcome.from_json(data["target"]),
            np.array(rows, dtype=np.int64).reshape(-1, len(schema)),
            data.get("mode", "all"),
            data.get("cost"),
            data.get("complete", True),
        )


def empty_feedback(schema: SlotSchema, target: Outcome, mode: str = "all") -> FeedbackFormula:
    return FeedbackFormula(schema, target, np.zeros((0, len(schema)), dtype=np.int64), mode)


# -- cost model -------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Mismatch cost between a proof and the predicted argmax assignment.

    The cost of a proof is the sum over slots of ``slot_costs[slot]`` times
    ``value_costs[slot][predicted, proposed]``.  Unlisted slots weigh 1 and
    the default value matrix charges 1 for any change, giving Hamming
    distance.  Diagonals must be zero and everything else positive, so cost 0
    means the proof is the argmax assignment.
    """

    slot_costs: Mapping[str, float] = field(default_factory=dict)
    value_costs: Mapping[str, np.ndarray] = field(default_factory=dict)
    name: str = "hamming"

    def matrices(self, schema: SlotSchema) -> list[np.ndarray]:
        out = []
        for slot in schema.slots:
            n = len(slot.domain)
            m = self.value_costs.get(slot.name)
            m = (1.0 - np.eye(n)) if m is None else np.asarray(m, dtype=float)
            if m.shape != (n, n):
                raise AbductionError(f"cost matrix for slot {slot.name!r} must be {n}x{n}")
            w = float(self.slot_costs.get(slot.name, 1.0))
            if w < 0:
                raise AbductionError("slot costs must be non-negative")
            out.append(w * m)
        return out

    def cost(self, schema: SlotSchema, proof: Sequence[int], argmax: Sequence[int]) -> float:
        return float(sum(m[a, p] for m, a, p in zip(self.matrices(schema), argmax, proof)))

    def costs(self, schema: SlotSchema, proofs: np.ndarray, argmax: Sequence[int]) -> np.ndarray:
        """Vectorised cost of every row of ``proofs``."""
        total = np.zeros(len(proofs))
        for s, (m, a) in enumerate(zip(self.matrices(schema), argmax)):
            total += m[a][proofs[:, s]]
        return total

    def digest(self) -> str:
        parts = [self.name]
        for k in sorted(self.slot_costs):
            parts.append(f"{k}={self.slot_costs[k]}")
        for k in sorted(self.value_costs):
            parts.append(k + ":" + ",".join(f"{x:g}" for x in np.asarray(self.value_costs[k]).ravel()))
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


# -- search -------------------------------------------------------------------


def _argmax_indices(schema: SlotSchema, prediction) -> tuple[int, ...]:
    """Accept a Prediction, an Assignment or a raw index sequence."""
    if hasattr(prediction, "argmax_indices"):
        return tuple(prediction.argmax_indices)
    if isinstance(prediction, Assignment):
        if not prediction.complete:
            raise AbductionError("guided abduction needs a complete predicted assignment")
        return prediction.indices()
    idx = tuple(int(v) for v in prediction)
    if len(idx) != len(schema) or any(not 0 <= j < n for j, n in zip(idx, schema.sizes)):
        raise AbductionError("prediction does not match the schema")
    return idx


def _check_target(theory, target: Outcome) -> None:
    if target.violated:
        raise AbductionError("cannot abduce the violation marker")
    extra = target.atoms - theory.outcome_atoms
    if extra:
        raise AbductionError(f"target mentions non-outcome atoms: {sorted(map(str, extra))}")


def _search(theory, target: Outcome, budget: int, order=None, bound: Callable | None = None):
    """Depth-first enumeration of proofs.

    ``order(slot)`` gives the value order tried at a slot; ``bound(slot, value,
    acc)`` returns the accumulated cost after choosing ``value`` or ``None``
    to cut the branch.  Yields ``(row, acc)`` pairs; raises on budget.
    """
    schema = theory.schema
    sizes = schema.sizes
    n = len(sizes)
    indices = [-1] * n
    found: list = []
    nodes = 0

    def visit(depth: int, acc: float):
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            rows = np.array([r for r, _ in found], dtype=np.int64).reshape(-1, n)
            raise AbductionBudgetExceeded(budget, FeedbackFormula(schema, target, rows, complete=False))
        if theory.prune(indices, target):
            return
        if depth == n:
            if theory.deduce(indices) == target:
                found.append((tuple(indices), acc))
            return
        values = order(depth) if order is not None else range(sizes[depth])
        for v in values:
            nacc = acc
            if bound is not None:
                nacc = bound(depth, v, acc)
                if nacc is None:
                    continue
            indices[depth] = v
            visit(depth + 1, nacc)
        indices[depth] = -1

    visit(0, 0.0)
    return found, nodes


def abduce_all(theory, target: Outcome, budget: int = DEFAULT_NODE_BUDGET) -> FeedbackFormula:
    """Every complete assignment whose deduction equals ``target``."""
    _check_target(theory, target)
    found, _ = _search(theory, target, budget)
    rows = np.array([r for r, _ in found], dtype=np.int64).reshape(-1, len(theory.schema))
    return FeedbackFormula(theory.schema, target, rows, "all")


def filter_min_cost(full: FeedbackFormula, prediction, cost: CostModel) -> FeedbackFormula:
    """Minimal-cost subset of an already computed full feedback."""
    schema = full.schema
    if not full:
        return FeedbackFormula(schema, full.target, full.proofs, "guided", None, full.complete)
    argmax = _argmax_indices(schema, prediction)
    c = cost.costs(schema, full.proofs, argmax)
    best = float(c.min())
    keep = full.proofs[np.isclose(c, best, rtol=0, atol=1e-9)]
    return FeedbackFormula(schema, full.target, keep, "guided", best, full.complete)


def abduce_guided(
    theory,
    target: Outcome,
    prediction,
    cost: CostModel | None = None,
    budget: int = DEFAULT_NODE_BUDGET,
    full: FeedbackFormula | None = None,
) -> FeedbackFormula:
    """Proofs of minimal cost relative to the prediction's argmax assignment.

    With ``full`` (the complete feedback, e.g. from a cache) the result is a
    filter over it; otherwise a branch-and-bound search explores values in
    increasing cost order and cuts branches already dearer than the best
    complete proof found.
    """
    _check_target(theory, target)
    cost = cost or CostModel()
    schema = theory.schema
    if full is not None:
        return filter_min_cost(full, prediction, cost)
    argmax = _argmax_indices(schema, prediction)
    mats = cost.matrices(schema)
    orders = [sorted(range(n), key=lambda v, m=m, a=a: (m[a, v], v)) for m, a, n in zip(mats, argmax, schema.sizes)]
    best = [np.inf]

    def bound(slot, v, acc):
        nacc = acc + mats[slot][argmax[slot], v]
        return None if nacc > best[0] + 1e-9 else nacc

    # The zero-cost proof, if any, is the first leaf tried; checking it
    # directly avoids a search when the prediction already explains the label.
    if theory.deduce(argmax) == target:
        return FeedbackFormula(schema, target, np.array([argmax]), "guided", 0.0)

    found: list = []

    def order(slot):
        return orders[slot]

    class _Tracker:
        def __init__(self, inner):
            self.inner = inner
            self.schema = inner.schema

        def prune(self, idx, tgt):
            return self.inner.prune(idx, tgt)

        def deduce(self, idx):
            out = self.inner.deduce(idx)
            if out == target:
                acc = sum(m[a, v] for m, a, v in zip(mats, argmax, idx))
                best[0] = min(best[0], acc)
            return out

    found, _ = _search(_Tracker(theory), target, budget, order, bound)
    if not found:
        return FeedbackFormula(schema, target, np.zeros((0, len(schema)), dtype=np.int64), "guided")
    least = min(acc for _, acc in found)
    rows = [r for r, acc in found if acc <= least + 1e-9]
    return FeedbackFormula(schema, target, np.array(rows, dtype=np.int64), "guided", float(least))


# -- caching -------------------------------------------------------------------


def facts_digest(facts: Iterable[Atom]) -> str:
    text = ";".join(sorted(str(f) for f in facts))
    return hashlib.sha256(text.encode()).hexdigest()[:16] if text else ""


def indices_digest(indices: Sequence[int]) -> str:
    return hashlib.sha256(",".join(map(str, indices)).encode()).hexdigest()[:16]


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    computations: int = 0

    @property
    def requests(self) -> int:
        return self.hits + self.misses

    def to_json(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "computations": self.computations}


class AbductionCache:
    """Feedback formulas keyed by (theory digest, outcome, side-information digest).

    Reads are lock-free; insertion takes a lock.  Concurrent computation of
    the same key is allowed: results are deterministic, the last write wins.
    With ``spill_dir`` every stored formula is also written as a JSON file
    and missing keys are looked up there before recomputing.

    ``stats`` counts only top-level requests.  Auxiliary entries used inside
    guided abduction (the full feedback a filter runs over) go through
    ``auxiliary`` and are tallied separately.
    """

    def __init__(self, spill_dir: str | os.PathLike | None = None, enabled: bool = True):
        self._store: dict = {}
        self._aux: dict = {}
        self._lock = threading.Lock()
        self.stats = CacheStats()
        self.aux_computations = 0
        self.spill_dir = os.fspath(spill_dir) if spill_dir else None
        self.enabled = enabled
        if self.spill_dir:
            os.makedirs(self.spill_dir, exist_ok=True)

    def __len__(self):
        return len(self._store)

    def __contains__(self, key):
        return key in self._store

    def keys(self):
        return list(self._store)

    @staticmethod
    def key(theory_digest: str, target: Outcome, side: str = "") -> tuple:
        return (theory_digest, target.key(), side)

    def _spill_path(self, key) -> str:
        name = hashlib.sha256(repr(key).encode()).hexdigest()[:24]
        return os.path.join(self.spill_dir, f"{name}.json")

    def _load_spill(self, key):
        if not self.spill_dir:
            return None
        path = self._spill_path(key)
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            return FeedbackFormula.from_json(json.load(fh))

    def get_or_compute(self, key, compute: Callable[[], FeedbackFormula]) -> FeedbackFormula:
        if self.enabled:
            hit = self._store.get(key)
            if hit is not None:
                self.stats.hits += 1
                return hit
        self.stats.misses += 1
        value = self._load_spill(key) if self.enabled else None
        if value is None:
            value = compute()
            self.stats.computations += 1
        if self.enabled and value.complete:
            with self._lock:
                self._store[key] = value
            if self.spill_dir:
                with open(self._spill_path(key), "w", encoding="utf-8") as fh:
                    fh.write(value.dumps())
        return value

    def auxiliary(self, key, compute: Callable[[], FeedbackFormula]) -> FeedbackFormula:
        hit = self._aux.get(key)
        if hit is not None:
            return hit
        value = compute()
        self.aux_computations += 1
        if value.complete:
            with self._lock:
                self._aux[key] = value
        return value


def get_feedback(
    cache: AbductionCache,
    theory,
    target: Outcome,
    side_info: Iterable[Atom] | None = None,
    mode: str = "basic",
    prediction=None,
    cost: CostModel | None = None,
    budget: int = DEFAULT_NODE_BUDGET,
) -> FeedbackFormula:
    """Feedback for one sample, served from ``cache`` when possible.

    ``basic`` keys on the label alone.  ``isk`` extends the theory with the
    side-information facts and keys on label plus their digest.  ``nga``
    keys on label plus the argmax digest and filters the (separately cached)
    full feedback down to its minimal-cost proofs.
    """
    if mode == "basic":
        key = cache.key(theory.digest, target)
        return cache.get_or_compute(key, lambda: abduce_all(theory, target, budget))
    if mode == "isk":
        facts = tuple(side_info or ())
        extended = theory.extend(facts)
        key = cache.key(theory.digest, target, "isk:" + facts_digest(facts))
        return cache.get_or_compute(key, lambda: abduce_all(extended, target, budget))
    if mode == "nga":
        if prediction is None:
            raise AbductionError("guided abduction needs a prediction")
        cost = cost or CostModel()
        argmax = _argmax_indices(theory.schema, prediction)
        key = cache.key(theory.digest, target, f"nga:{cost.digest()}:{indices_digest(argmax)}")

        def compute():
            full = cache.auxiliary(cache.key(theory.digest, target), lambda: abduce_all(theory, target, budget))
            return abduce_guided(theory, target, argmax, cost, budget, full=full)

        return cache.get_or_compute(key, compute)
    raise AbductionError(f"unknown abduction mode {mode!r}")
