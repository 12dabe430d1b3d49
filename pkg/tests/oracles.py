"""Slow but obviously-correct reference implementations used by the tests.

None of these share code with the package's grounder, search or circuits:
the evaluator interprets non-ground rules directly, abduction enumerates
the full product of domains and WMC sums products of weights.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from abdlearn.logic import Atom, Outcome, Rule, Var
from abdlearn.logic.types import BOTTOM, IC, VAL

# -- stratified least model by naive iteration -------------------------------------


def _strata(rules) -> dict[str, int]:
    """Smallest level map with pos deps <= and neg deps < (fixpoint iteration)."""
    preds = {r.head.pred for r in rules}
    level = dict.fromkeys(preds, 0)
    for _ in range(len(preds) + 2):
        changed = False
        for r in rules:
            for lit in r.body:
                q = lit.atom.pred
                if q not in level:
                    continue
                need = level[q] + (1 if lit.kind == "neg" else 0)
                if need > level[r.head.pred]:
                    level[r.head.pred] = need
                    changed = True
        if not changed:
            return level
    raise ValueError("not stratifiable")


def _value(term, b):
    return b.get(term.name) if isinstance(term, Var) else term


def _guard(lit, b):
    """Yield extensions of ``b`` satisfying a builtin or comparison, or None if not yet solvable."""
    a = lit.atom
    vals = [_value(t, b) for t in a.args]
    free = [i for i, v in enumerate(vals) if v is None]
    if lit.kind == "cmp":
        x, y = vals
        if not free:
            ok = {
                "=": x == y,
                "!=": x != y,
                "<": _order(x) < _order(y),
                "<=": _order(x) <= _order(y),
                ">": _order(x) > _order(y),
                ">=": _order(x) >= _order(y),
            }[a.pred]
            return [b] if ok else []
        if a.pred == "=" and len(free) == 1:
            return [{**b, a.args[free[0]].name: vals[1 - free[0]]}]
        return None
    if any(v is not None and not isinstance(v, int) for v in vals):
        return []
    if not free:
        x, y, z = vals
        ok = {
            "sum": x + y == z,
            "abs": abs(x - y) == z,
            "mod": y != 0 and x % y == z,
            "mul": x * y == z,
        }[a.pred]
        return [b] if ok else []
    if len(free) != 1:
        return None
    i = free[0]
    x, y, z = vals
    name = a.args[i].name
    if a.pred == "sum":
        return [{**b, name: z - y if i == 0 else z - x if i == 1 else x + y}]
    if a.pred == "mul":
        if i == 2:
            return [{**b, name: x * y}]
        known = y if i == 0 else x
        if known == 0 or z % known:
            return []
        return [{**b, name: z // known}]
    if i != 2:
        return None
    if a.pred == "abs":
        return [{**b, name: abs(x - y)}]
    return [] if y == 0 else [{**b, name: x % y}]


def _order(v):
    return (0, v, "") if isinstance(v, int) else (1, 0, v)


def _bindings(body, b, model):
    if not body:
        yield b
        return
    # positive atoms first, then whichever guard/negation is ready
    for k, lit in enumerate(body):
        rest = body[:k] + body[k + 1 :]
        if lit.kind == "pos":
            for fact in model.get(lit.atom.pred, ()):
                if len(fact) != len(lit.atom.args):
                    continue
                nb = dict(b)
                ok = True
                for t, v in zip(lit.atom.args, fact):
                    if isinstance(t, Var):
                        if t.name in nb and nb[t.name] != v:
                            ok = False
                            break
                        nb[t.name] = v
                    elif t != v:
                        ok = False
                        break
                if ok:
                    yield from _bindings(rest, nb, model)
            return
    for k, lit in enumerate(body):
        rest = body[:k] + body[k + 1 :]
        if lit.kind == "neg":
            if all(_value(t, b) is not None for t in lit.atom.args):
                args = tuple(_value(t, b) for t in lit.atom.args)
                if args not in model.get(lit.atom.pred, set()):
                    yield from _bindings(rest, b, model)
                return
            continue
        out = _guard(lit, b)
        if out is not None:
            for nb in out:
                yield from _bindings(rest, nb, model)
            return
    raise ValueError(f"cannot order body {body}")


def naive_model(program, values: dict, facts=()) -> dict[str, set]:
    """Least model of ``program`` with ``val`` facts for ``values``."""
    rules = list(program.rules) + [Rule(f, ()) for f in facts]
    model: dict[str, set] = {VAL: {(s, v) for s, v in values.items()}}
    level = _strata(rules)
    for lv in sorted(set(level.values())):
        layer = [r for r in rules if level[r.head.pred] == lv]
        changed = True
        while changed:
            changed = False
            for r in layer:
                for b in list(_bindings(tuple(r.body), {}, model)):
                    args = tuple(_value(t, b) for t in r.head.args)
                    bucket = model.setdefault(r.head.pred, set())
                    if args not in bucket:
                        bucket.add(args)
                        changed = True
    return model


def naive_deduce(program, values: dict, facts=()) -> Outcome:
    model = naive_model(program, values, facts)
    if model.get(IC):
        return BOTTOM
    atoms = {Atom(p, args) for p, rows in model.items() for args in rows}
    return Outcome(frozenset(atoms & set(program.outcomes)))


# -- brute force over assignments -------------------------------------------------


def all_assignments(schema):
    """Every complete assignment as a dict, in lexicographic domain order."""
    for combo in itertools.product(*(s.domain for s in schema.slots)):
        yield dict(zip(schema.names, combo))


def brute_abduce(theory, target: Outcome) -> set[tuple]:
    """Value-index tuples of every complete assignment deducing exactly ``target``."""
    out = set()
    sizes = [range(n) for n in theory.schema.sizes]
    for idx in itertools.product(*sizes):
        if theory.deduce(idx) == target:
            out.add(idx)
    return out


def brute_wmc(schema, proofs, flat) -> float:
    """Sum over complete assignments consistent with some (partial) proof row."""
    flat = np.asarray(flat, dtype=float)
    offsets = schema.offsets
    rows = [tuple(r) for r in proofs]
    total = 0.0
    for idx in itertools.product(*(range(n) for n in schema.sizes)):
        if any(all(r[i] < 0 or r[i] == idx[i] for i in range(len(idx))) for r in rows):
            total += math.prod(flat[o + j] for o, j in zip(offsets, idx))
    return total


def finite_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function at ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def min_cost_filter(proofs, prediction_idx, slot_cost, value_cost=None):
    """Reference NGA selection: proofs at the minimum cost w.r.t. ``prediction_idx``."""
    if not proofs:
        return set()

    def cost(p):
        c = 0.0
        for i, (a, b) in enumerate(zip(p, prediction_idx)):
            if a != b:
                c += value_cost[i][b][a] if value_cost is not None else slot_cost[i]
        return c

    best = min(cost(p) for p in proofs)
    return {p for p in proofs if abs(cost(p) - best) < 1e-9}


def enum_wmc(sizes, proofs, flat) -> float:
    """Vectorised ``brute_wmc``: the full assignment table as one integer array."""
    flat = np.asarray(flat, dtype=float)
    grid = np.indices(tuple(sizes)).reshape(len(sizes), -1).T
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    mass = np.prod(flat[grid + offsets], axis=1)
    hit = np.zeros(len(grid), dtype=bool)
    for r in np.asarray(proofs).reshape(-1, len(sizes)):
        free = r < 0
        hit |= np.all((grid == r) | free, axis=1)
    return float(mass[hit].sum())
