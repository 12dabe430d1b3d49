"""path(n): is the goal cell reachable from the start through passable signs?"""

from __future__ import annotations

from functools import lru_cache

from ..logic import Atom, load_theory
from .base import ImageGroup, ScenarioSpec
from .glyphs import SIGNS

SIGN_VALUES = ("go", "slow", "stop")


def cell_name(x: int, y: int) -> str:
    return f"p{x}{y}"


def path_source(n: int) -> str:
    cells = [(x, y) for y in range(1, n + 1) for x in range(1, n + 1)]
    slots = "\n".join(f"slot {cell_name(x, y)} : {{go, slow, stop}}" for x, y in cells)
    return f"""\
% 4-neighbour reachability on an {n}x{n} grid; stop signs are impassable
{slots}
outcome : {{reachable, unreachable}}
fact {', '.join(f'coord({i})' for i in range(1, n + 1))}.
fact {', '.join(f'cell({cell_name(x, y)},{x},{y})' for x, y in cells)}.
rule adj(X,Y,X2,Y) :- coord(X), coord(Y), coord(X2), abs(X,X2,1).
rule adj(X,Y,X,Y2) :- coord(X), coord(Y), coord(Y2), abs(Y,Y2,1).
rule open(X,Y) :- cell(C,X,Y), val(C,go).
rule open(X,Y) :- cell(C,X,Y), val(C,slow).
rule reach(X,Y) :- start(X,Y), open(X,Y).
rule reach(X2,Y2) :- reach(X,Y), adj(X,Y,X2,Y2), open(X2,Y2).
rule reachable :- goal(X,Y), reach(X,Y).
rule unreachable :- not reachable.
"""


@lru_cache(maxsize=None)
def path_theory(n: int = 3):
    t = load_theory(path_source(n))
    t.name = f"path({n})"
    return t


def query_facts(start, goal) -> tuple[Atom, ...]:
    return (Atom("start", tuple(start)), Atom("goal", tuple(goal)))


def path_spec(n: int = 3) -> ScenarioSpec:
    theory = path_theory(n)
    cells = [(x, y) for y in range(1, n + 1) for x in range(1, n + 1)]
    names = tuple(cell_name(x, y) for x, y in cells)

    def sampler(rng, i):
        values = {s: SIGN_VALUES[int(rng.integers(3))] for s in names}
        a, b = rng.choice(len(cells), size=2, replace=False)
        return values, query_facts(cells[a], cells[b])

    group = ImageGroup("signs", names, SIGNS, (0, 1, 2))
    return ScenarioSpec(
        f"path({n})", theory.schema, theory, (group,), sampler, labels=("reachable", "unreachable"), params={"n": n}
    )
