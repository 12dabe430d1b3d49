"""Arithmetic circuits for feedback formulas: WMC, gradients, semantic loss.

Weights are categorical per slot, so a literal is a (slot, value) pair and a
slot's literal weights sum to one.  Feedback proofs are complete
assignments, which makes the sum-of-products circuit (one product per proof)
deterministic, decomposable and smooth as is; that is the default compiler.
A Shannon compiler that splits on slots in schema order handles formulas made
of partial assignments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .abduction import FeedbackFormula
from .logic import SlotSchema
from .logic.types import Value

EPS = 1e-12
NORM_TOL = 1e-9


class CircuitError(Exception):
    pass


class DimensionError(CircuitError):
    pass


class EmptyFormulaError(CircuitError):
    pass


# -- weights -------------------------------------------------------------------


class WeightTable:
    """Per-slot categorical weights, stored flat in literal order.

    ``check=True`` enforces non-negativity and per-slot normalisation; the
    gradient code turns the check off because finite differences perturb
    single entries.
    """

    __slots__ = ("schema", "flat")

    def __init__(self, schema: SlotSchema, flat, check: bool = True):
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.shape != (schema.k,):
            raise DimensionError(f"expected {schema.k} weights, got {flat.size}")
        self.schema = schema
        self.flat = flat
        if check:
            self.validate()

    def validate(self) -> None:
        if not np.all(np.isfinite(self.flat)) or np.any(self.flat < 0):
            raise CircuitError("weights must be finite and non-negative")
        for name, vec in self.items():
            if abs(vec.sum() - 1.0) > NORM_TOL:
                raise CircuitError(f"weights of slot {name!r} sum to {vec.sum():.12g}, not 1")

    def slot(self, name: str) -> np.ndarray:
        i = self.schema.slot_index(name)
        off = self.schema.offsets[i]
        return self.flat[off : off + self.schema.sizes[i]]

    def items(self):
        for s, off, n in zip(self.schema.slots, self.schema.offsets, self.schema.sizes):
            yield s.name, self.flat[off : off + n]

    def weight(self, name: str, value: Value) -> float:
        return float(self.flat[self.schema.literal_index(name, value)])

    @classmethod
    def uniform(cls, schema: SlotSchema) -> "WeightTable":
        return cls(schema, np.concatenate([np.full(n, 1.0 / n) for n in schema.sizes]))

    @classmethod
    def one_hot(cls, schema: SlotSchema, indices: Sequence[int]) -> "WeightTable":
        flat = np.zeros(schema.k)
        for off, j in zip(schema.offsets, indices):
            flat[off + j] = 1.0
        return cls(schema, flat)

    @classmethod
    def from_mapping(cls, schema: SlotSchema, data: Mapping[str, Sequence[float]], check: bool = True):
        missing = [n for n in schema.names if n not in data]
        extra = [n for n in data if n not in schema]
        if missing or extra:
            raise DimensionError(f"weight table slots do not match the schema (missing {missing}, unknown {extra})")
        parts = []
        for s in schema.slots:
            vec = np.asarray(data[s.name], dtype=np.float64).ravel()
            if vec.size != len(s.domain):
                raise DimensionError(f"slot {s.name!r} needs {len(s.domain)} weights, got {vec.size}")
            parts.append(vec)
        return cls(schema, np.concatenate(parts), check)

    def to_mapping(self) -> dict:
        return {name: vec.tolist() for name, vec in self.items()}

    def argmax(self) -> tuple[int, ...]:
        return tuple(int(np.argmax(vec)) for _, vec in self.items())


def _flat_weights(schema: SlotSchema, w) -> np.ndarray:
    if isinstance(w, WeightTable):
        if w.schema != schema:
            raise DimensionError("weight table is over a different schema")
        return w.flat
    flat = np.asarray(w, dtype=np.float64).ravel()
    if flat.shape != (schema.k,):
        raise DimensionError(f"expected {schema.k} weights, got {flat.size}")
    return flat


# -- circuit -----------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    """One circuit node.

    ``kind`` is ``lit`` (``slot``/``value`` set), ``const`` (``value`` 0 or 1),
    ``sum`` or ``prod`` (``children`` set).  A sum node's ``decision`` is the
    slot index every child fixes to a distinct value, or -1 when the children
    are complete assignments told apart by pairwise disagreement.
    """

    kind: str
    children: tuple[int, ...] = ()
    slot: int = -1
    value: int = -1
    decision: int | None = None


class Circuit:
    """An immutable DAG of nodes listed children-before-parents.

    Sum-of-products circuits keep their proof matrix and evaluate from it
    directly; their node list is only materialised when someone asks for it
    (structural checks, JSON dumps, the generic evaluator).
    """

    def __init__(self, schema: SlotSchema, nodes: Sequence[Node] | None, root: int | None, proofs=None):
        self.schema = schema
        self._nodes = None if nodes is None else tuple(nodes)
        self._root = root
        self.proofs = proofs
        self._scopes = None
        if nodes is None and proofs is None:
            raise CircuitError("a circuit needs nodes or a proof matrix")

    @classmethod
    def sum_of_products(cls, schema: SlotSchema, proofs: np.ndarray) -> "Circuit":
        proofs = np.asarray(proofs, dtype=np.int64)
        if not len(proofs):
            raise EmptyFormulaError("cannot compile an empty feedback formula")
        return cls(schema, None, None, proofs)

    def _materialise(self) -> None:
        b = _Builder()
        lits = {}
        for s, n in enumerate(self.schema.sizes):
            for v in range(n):
                lits[(s, v)] = b.add(Node("lit", slot=s, value=v))
        products = [b.add(Node("prod", tuple(lits[(s, int(v))] for s, v in enumerate(row)))) for row in self.proofs]
        root = products[0] if len(products) == 1 else b.add(Node("sum", tuple(products), decision=-1))
        trimmed = _trim(Circuit(self.schema, b.nodes, root))
        self._nodes, self._root = trimmed.nodes, trimmed.root

    @property
    def nodes(self) -> tuple:
        if self._nodes is None:
            self._materialise()
        return self._nodes

    @property
    def root(self) -> int:
        if self._nodes is None:
            self._materialise()
        return self._root

    def __len__(self):
        return len(self.nodes)

    @property
    def sop(self) -> bool:
        return self.proofs is not None

    def scopes(self) -> list[frozenset]:
        """Slot indices mentioned below each node."""
        if self._scopes is None:
            out = []
            for n in self.nodes:
                if n.kind == "lit":
                    out.append(frozenset((n.slot,)))
                elif n.kind == "const":
                    out.append(frozenset())
                else:
                    out.append(frozenset().union(*(out[c] for c in n.children)))
            self._scopes = out
        return self._scopes

    def literal_of(self, node: int) -> int:
        n = self.nodes[node]
        return self.schema.offsets[n.slot] + n.value

    def to_json(self) -> dict:
        names = self.schema.names
        out = []
        for i, n in enumerate(self.nodes):
            d = {"id": i, "type": n.kind}
            if n.kind == "lit":
                d["slot"] = names[n.slot]
                d["value"] = self.schema.slots[n.slot].domain[n.value]
            elif n.kind == "const":
                d["value"] = n.value
            else:
                d["children"] = list(n.children)
                if n.kind == "sum" and n.decision is not None:
                    d["decision"] = names[n.decision] if n.decision >= 0 else "complete-assignments"
            out.append(d)
        return {"schema_digest": self.schema.digest(), "root": self.root, "nodes": out}

    def dumps(self) -> str:
        return json.dumps(self.to_json())


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []
        self.memo: dict = {}

    def add(self, node: Node) -> int:
        i = self.memo.get(node)
        if i is None:
            i = len(self.nodes)
            self.nodes.append(node)
            self.memo[node] = i
        return i


def compile_formula(formula: FeedbackFormula, method: str = "sop") -> Circuit:
    """Compile a feedback formula; ``method`` is ``sop`` or ``shannon``.

    Rows may leave slots free (index ``-1``).  Such rows can overlap, so a
    plain sum of products would double count; they always go through the
    Shannon compiler.
    """
    if not len(formula):
        raise EmptyFormulaError("cannot compile an empty feedback formula")
    if method not in ("sop", "shannon"):
        raise CircuitError(f"unknown compilation method {method!r}")
    schema = formula.schema
    proofs = np.asarray(formula.proofs)
    if method == "shannon" or (proofs < 0).any():
        terms = [{i: int(v) for i, v in enumerate(row) if v >= 0} for row in proofs]
        return compile_terms(schema, terms)
    return Circuit.sum_of_products(schema, proofs)


compile = compile_formula


def compile_terms(schema: SlotSchema, terms: Iterable[Mapping[int, int]]) -> Circuit:
    """Shannon compilation of a DNF whose terms bind any subset of slots.

    Terms map slot index to value index.  Splitting on slots in schema order
    gives deterministic sums (each child fixes the split slot differently);
    satisfied terms expand to the tautology over the remaining slots, which
    keeps the circuit smooth.
    """
    n = len(schema)
    sizes = schema.sizes
    b = _Builder()
    terms = [tuple(sorted(t.items())) for t in terms]
    if not terms:
        raise EmptyFormulaError("cannot compile an empty formula")
    zero = b.add(Node("const", value=0))
    taut: dict[int, int] = {}

    def tautology(i: int) -> int:
        if i in taut:
            return taut[i]
        if i == n:
            node = b.add(Node("const", value=1))
        else:
            slot_sum = b.add(
                Node("sum", tuple(b.add(Node("lit", slot=i, value=v)) for v in range(sizes[i])), decision=i)
            )
            rest = tautology(i + 1)
            rest_node = b.nodes[rest]
            node = slot_sum if rest_node.kind == "const" else b.add(Node("prod", (slot_sum, rest)))
        taut[i] = node
        return node

    memo: dict = {}

    def rec(i: int, active: frozenset) -> int:
        key = (i, active)
        if key in memo:
            return memo[key]
        if not active:
            out = zero
        elif any(len(t) == 0 for t in active):
            out = tautology(i)
        else:
            children = []
            for v in range(sizes[i]):
                nxt = []
                for t in active:
                    if t and t[0][0] == i:
                        if t[0][1] == v:
                            nxt.append(t[1:])
                    else:
                        nxt.append(t)
                sub = rec(i + 1, frozenset(nxt))
                if sub == zero:
                    continue
                lit = b.add(Node("lit", slot=i, value=v))
                sub_node = b.nodes[sub]
                children.append(lit if sub_node.kind == "const" else b.add(Node("prod", (lit, sub))))
            if not children:
                out = zero
            elif len(children) == 1:
                out = children[0]
            else:
                out = b.add(Node("sum", tuple(children), decision=i))
        memo[key] = out
        return out

    root = rec(0, frozenset(terms))
    return _trim(Circuit(schema, b.nodes, root))


def _trim(c: Circuit) -> Circuit:
    """Drop nodes unreachable from the root and renumber."""
    keep = set()
    stack = [c.root]
    while stack:
        i = stack.pop()
        if i in keep:
            continue
        keep.add(i)
        stack.extend(c.nodes[i].children)
    order = sorted(keep)
    remap = {old: new for new, old in enumerate(order)}
    nodes = []
    for old in order:
        n = c.nodes[old]
        nodes.append(Node(n.kind, tuple(remap[x] for x in n.children), n.slot, n.value, n.decision))
    return Circuit(c.schema, nodes, remap[c.root], c.proofs)


# -- structural checks ----------------------------------------------------------


def _top_literals(c: Circuit, i: int) -> dict[int, int]:
    """Slot -> value for literals conjoined at the top of node ``i``."""
    n = c.nodes[i]
    if n.kind == "lit":
        return {n.slot: n.value}
    if n.kind == "prod":
        out = {}
        for ch in n.children:
            out.update(_top_literals(c, ch))
        return out
    return {}


def check_structure(c: Circuit) -> dict[str, bool]:
    """Verify decomposability, smoothness and (witnessed) determinism."""
    scopes = c.scopes()
    decomposable = smooth = deterministic = True
    for i, n in enumerate(c.nodes):
        if n.kind == "prod":
            seen: set = set()
            for ch in n.children:
                if seen & scopes[ch]:
                    decomposable = False
                seen |= scopes[ch]
        elif n.kind == "sum":
            if len({scopes[ch] for ch in n.children}) > 1:
                smooth = False
            if n.decision is None:
                deterministic = False
            elif n.decision >= 0:
                vals = [_top_literals(c, ch).get(n.decision) for ch in n.children]
                if None in vals or len(set(vals)) != len(vals):
                    deterministic = False
            else:
                rows = np.array(
                    [[_top_literals(c, ch).get(s, -1) for s in range(len(c.schema))] for ch in n.children]
                )
                if (rows < 0).any():
                    deterministic = False
                else:
                    for a in range(len(rows)):
                        if not np.all((rows[a + 1 :] != rows[a]).any(axis=1)):
                            deterministic = False
                            break
    return {"decomposable": decomposable, "smooth": smooth, "deterministic": deterministic}


# -- evaluation -------------------------------------------------------------------


def _gather(c: Circuit, flat: np.ndarray) -> np.ndarray:
    offsets = np.asarray(c.schema.offsets)
    return flat[offsets[None, :] + c.proofs]


def _exclusive(values: np.ndarray, op, identity: float):
    """Products (or sums) over every column except one, per row."""
    n, m = values.shape
    pre = np.full((n, m), identity)
    suf = np.full((n, m), identity)
    if m > 1:
        pre[:, 1:] = op.accumulate(values[:, :-1], axis=1)
        suf[:, :-1] = op.accumulate(values[:, :0:-1], axis=1)[:, ::-1]
    return op(pre, suf)


def _node_values(c: Circuit, flat: np.ndarray) -> np.ndarray:
    vals = np.empty(len(c.nodes))
    for i, n in enumerate(c.nodes):
        if n.kind == "lit":
            vals[i] = flat[c.schema.offsets[n.slot] + n.value]
        elif n.kind == "const":
            vals[i] = float(n.value)
        elif n.kind == "sum":
            vals[i] = sum(vals[j] for j in n.children)
        else:
            p = 1.0
            for j in n.children:
                p *= vals[j]
            vals[i] = p
    return vals


def _node_logs(c: Circuit, flat: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(flat)
    vals = np.empty(len(c.nodes))
    for i, n in enumerate(c.nodes):
        if n.kind == "lit":
            vals[i] = logw[c.schema.offsets[n.slot] + n.value]
        elif n.kind == "const":
            vals[i] = 0.0 if n.value else -np.inf
        elif n.kind == "sum":
            vals[i] = np.logaddexp.reduce([vals[j] for j in n.children])
        else:
            vals[i] = sum(vals[j] for j in n.children)
    return vals


def wmc(c: Circuit, w, log: bool = False, generic: bool = False) -> float:
    """Weighted model count (its natural log with ``log=True``)."""
    flat = _flat_weights(c.schema, w)
    if c.sop and not generic:
        g = _gather(c, flat)
        if log:
            with np.errstate(divide="ignore"):
                return float(np.logaddexp.reduce(np.log(g).sum(axis=1)))
        return float(np.prod(g, axis=1).sum())
    vals = _node_logs(c, flat) if log else _node_values(c, flat)
    return float(vals[c.root])


def _backward(c: Circuit, flat: np.ndarray) -> tuple[float, np.ndarray]:
    vals = _node_values(c, flat)
    adj = np.zeros(len(c.nodes))
    adj[c.root] = 1.0
    grad = np.zeros_like(flat)
    for i in range(len(c.nodes) - 1, -1, -1):
        n = c.nodes[i]
        a = adj[i]
        if a == 0.0:
            continue
        if n.kind == "lit":
            grad[c.schema.offsets[n.slot] + n.value] += a
        elif n.kind == "sum":
            for j in n.children:
                adj[j] += a
        elif n.kind == "prod":
            ch = list(n.children)
            cv = np.array([vals[j] for j in ch])[None, :]
            others = _exclusive(cv, np.multiply, 1.0)[0]
            for j, o in zip(ch, others):
                adj[j] += a * o
    return float(vals[c.root]), grad


def wmc_and_gradient(c: Circuit, w, generic: bool = False) -> tuple[float, np.ndarray]:
    flat = _flat_weights(c.schema, w)
    if c.sop and not generic:
        g = _gather(c, flat)
        others = _exclusive(g, np.multiply, 1.0)
        grad = np.zeros_like(flat)
        offsets = np.asarray(c.schema.offsets)
        np.add.at(grad, (offsets[None, :] + c.proofs).ravel(), others.ravel())
        return float(np.prod(g, axis=1).sum()), grad
    return _backward(c, flat)


def wmc_gradient(c: Circuit, w, generic: bool = False) -> np.ndarray:
    """Exact partial derivatives of the WMC with respect to every literal weight."""
    return wmc_and_gradient(c, w, generic)[1]


def _log_wmc_and_gradient(c: Circuit, flat: np.ndarray) -> tuple[float, np.ndarray]:
    """``ln WMC`` and ``ln(dWMC/dw)`` for sum-of-products circuits, in log space."""
    g = _gather(c, flat)
    with np.errstate(divide="ignore"):
        lg = np.log(g)
    others = _exclusive(lg, np.add, 0.0)
    logz = float(np.logaddexp.reduce(lg.sum(axis=1)))
    lgrad = np.full(flat.shape, -np.inf)
    offsets = np.asarray(c.schema.offsets)
    np.logaddexp.at(lgrad, (offsets[None, :] + c.proofs).ravel(), others.ravel())
    return logz, lgrad


@dataclass(frozen=True)
class LossResult:
    loss: float
    gradient: np.ndarray
    wmc: float


def semantic_loss(formula, w, eps: float = EPS, log: bool = False, method: str = "sop") -> LossResult:
    """``-ln max(WMC, eps)`` and its gradient with respect to the weights.

    ``formula`` may be a FeedbackFormula or an already compiled Circuit.  The
    gradient is ``-(dWMC/dw) / max(WMC, eps)``.  ``log=True`` evaluates in log
    space, which avoids underflow when proofs mention many slots; only there
    may the clamp be switched off with ``eps=0``.
    """
    c = formula if isinstance(formula, Circuit) else compile_formula(formula, method)
    flat = _flat_weights(c.schema, w)
    if eps <= 0 and not log:
        raise CircuitError("an unclamped loss (eps <= 0) needs log=True")
    if log:
        if c.sop:
            logz, lgrad = _log_wmc_and_gradient(c, flat)
        else:
            z, grad = _backward(c, flat)
            with np.errstate(divide="ignore"):
                logz, lgrad = math.log(z) if z > 0 else -math.inf, np.log(grad)
        denom = max(logz, math.log(eps) if eps > 0 else -math.inf)
        grad = -np.exp(lgrad - denom)
        return LossResult(float(-denom), grad, float(math.exp(logz)) if logz > -math.inf else 0.0)
    z, grad = wmc_and_gradient(c, flat)
    denom = max(z, eps)
    return LossResult(float(-math.log(denom)), -grad / denom, z)
