"""Hypothesis strategies for small random theories and feedback formulas."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from abdlearn.logic import load_theory

SYMBOLS = ("a", "b", "c", "d")


@st.composite
def theory_sources(draw, max_slots: int = 3, max_values: int = 3, max_rules: int = 7, ics: bool = True):
    """Random stratified programs over tiny slot domains.

    A propositional head ``ph`` refers positively to ``p0..ph`` (so recursion
    happens) and negatively only to lower-numbered predicates, which keeps
    every program stratified.  Unary ``q`` / ``r`` exercise variable binding.
    """
    n_slots = draw(st.integers(1, max_slots))
    doms = [SYMBOLS[: draw(st.integers(2, max_values))] for _ in range(n_slots)]
    lines = [f"slot s{i} : {{{', '.join(d)}}}" for i, d in enumerate(doms)]
    lines.append("outcome : {p0, p1, p2, p3, r(a), r(b), r(c), r(d)}")
    lines.append("fact tag(a), tag(c).")

    def val_lit():
        i = draw(st.integers(0, n_slots - 1))
        return f"val(s{i}, {draw(st.sampled_from(doms[i]))})"

    n_rules = draw(st.integers(1, max_rules))
    for _ in range(n_rules):
        kind = draw(st.integers(0, 4))
        if kind <= 2:
            h = draw(st.integers(0, 3))
            body = []
            for _ in range(draw(st.integers(1, 3))):
                c = draw(st.integers(0, 3))
                if c == 0 or h == 0:
                    body.append(val_lit())
                elif c == 1:
                    body.append(f"p{draw(st.integers(0, h))}")
                else:
                    body.append(f"not p{draw(st.integers(0, h - 1))}")
            if all(b.startswith("not") for b in body):
                body.insert(0, val_lit())
            lines.append(f"rule p{h} :- {', '.join(body)}.")
        elif kind == 3:
            i = draw(st.integers(0, n_slots - 1))
            neg = draw(st.booleans())
            lines.append(f"rule q(X) :- val(s{i}, X){', not tag(X)' if neg else ''}.")
        else:
            i = draw(st.integers(0, n_slots - 1))
            lines.append(f"rule r(X) :- q(X), val(s{i}, X).")
            if draw(st.booleans()):
                lines.append("rule p3 :- q(X), tag(X), not p0.")
    if ics and draw(st.booleans()):
        lines.append(f"ic :- {val_lit()}, {val_lit()}.")
    if ics and draw(st.booleans()):
        lines.append(f"ic :- p{draw(st.integers(0, 3))}, {val_lit()}.")
    return "\n".join(lines) + "\n"


@st.composite
def theories(draw, **kw):
    return load_theory(draw(theory_sources(**kw)))


def random_proofs(rng: np.random.Generator, sizes, count: int, partial: bool = False) -> np.ndarray:
    """Distinct random proof rows; ``-1`` marks a free slot when ``partial``."""
    lo = -1 if partial else 0
    rows = {tuple(int(rng.integers(lo, n)) for n in sizes) for _ in range(count)}
    return np.array(sorted(rows), dtype=np.int64).reshape(-1, len(sizes))


def random_weights(rng: np.random.Generator, sizes, sharp: float = 1.0) -> np.ndarray:
    parts = [rng.dirichlet(np.full(n, sharp)) for n in sizes]
    return np.concatenate(parts)
