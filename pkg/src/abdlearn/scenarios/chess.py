"""Mini-chess on an n x n board: a black king against two white pieces.

Each cell is a slot whose value is ``e`` (empty) or one of the seven piece
types; the outcome is the status of the black king.  Line attacks are blocked
by white pieces only, so the black king cannot hide behind its own square.
"""

from __future__ import annotations

import numpy as np

from ..abduction import CostModel
from ..logic import Assignment, Atom, GroundTheory, load_theory
from .base import ImageGroup, ScenarioSpec
from .glyphs import DIGITS

PIECES = ("bk", "wk", "wq", "wr", "wb", "wn", "wp")
CELL_VALUES = ("e",) + PIECES
WHITE = PIECES[1:]
OUTCOMES = ("safe", "draw", "mate")


def cell_name(x: int, y: int) -> str:
    return f"c{x}{y}"


def chess_source(n: int = 3, isk: bool = False) -> str:
    cells = [(x, y) for y in range(1, n + 1) for x in range(1, n + 1)]
    slots = "\n".join(f"slot {cell_name(x, y)} : {{{', '.join(CELL_VALUES)}}}" for x, y in cells)
    cell_facts = ", ".join(f"cell({cell_name(x, y)},{x},{y})" for x, y in cells)
    coords = ", ".join(f"coord({i})" for i in range(1, n + 1))
    text = f"""\
% mini-chess: black king status against two white pieces
{slots}
outcome : {{safe, draw, mate}}

fact {coords}.
fact {cell_facts}.
fact piece(bk), piece(wk), piece(wq), piece(wr), piece(wb), piece(wn), piece(wp).
fact white(wk), white(wq), white(wr), white(wb), white(wn), white(wp).

% board geometry
rule delta(X1,Y1,X2,Y2,DX,DY) :- coord(X1), coord(Y1), coord(X2), coord(Y2), abs(X1,X2,DX), abs(Y1,Y2,DY).
rule dist(X1,Y1,X2,Y2,D) :- delta(X1,Y1,X2,Y2,DX,DY), sum(DX,DY,D).
rule kstep(X1,Y1,X2,Y2) :- delta(X1,Y1,X2,Y2,DX,DY), DX <= 1, DY <= 1, sum(DX,DY,S), 0 < S.
rule orth(X1,Y1,X2,Y2) :- delta(X1,Y1,X2,Y2,0,D), 0 < D.
rule orth(X1,Y1,X2,Y2) :- delta(X1,Y1,X2,Y2,D,0), 0 < D.
rule diag(X1,Y1,X2,Y2) :- delta(X1,Y1,X2,Y2,D,D), 0 < D.
rule between(X1,Y1,X2,Y2,X,Y) :- orth(X1,Y1,X2,Y2), orth(X1,Y1,X,Y), orth(X,Y,X2,Y2),
    dist(X1,Y1,X,Y,A), dist(X,Y,X2,Y2,B), dist(X1,Y1,X2,Y2,D), sum(A,B,D).
rule between(X1,Y1,X2,Y2,X,Y) :- diag(X1,Y1,X2,Y2), diag(X1,Y1,X,Y), diag(X,Y,X2,Y2),
    dist(X1,Y1,X,Y,A), dist(X,Y,X2,Y2,B), dist(X1,Y1,X2,Y2,D), sum(A,B,D).

% how each white piece attacks, before blocking
rule reach(wk,X1,Y1,X2,Y2) :- kstep(X1,Y1,X2,Y2).
rule reach(wq,X1,Y1,X2,Y2) :- orth(X1,Y1,X2,Y2).
rule reach(wq,X1,Y1,X2,Y2) :- diag(X1,Y1,X2,Y2).
rule reach(wr,X1,Y1,X2,Y2) :- orth(X1,Y1,X2,Y2).
rule reach(wb,X1,Y1,X2,Y2) :- diag(X1,Y1,X2,Y2).
rule reach(wn,X1,Y1,X2,Y2) :- delta(X1,Y1,X2,Y2,1,2).
rule reach(wn,X1,Y1,X2,Y2) :- delta(X1,Y1,X2,Y2,2,1).
rule reach(wp,X1,Y1,X2,Y2) :- delta(X1,Y1,X2,Y2,1,1), sum(Y1,1,Y2).

% board state
rule at(P,X,Y) :- cell(C,X,Y), val(C,P), piece(P).
rule wcell(C) :- val(C,P), white(P).
rule wocc(X,Y) :- cell(C,X,Y), wcell(C).
rule blocked(X1,Y1,X2,Y2) :- between(X1,Y1,X2,Y2,X,Y), wocc(X,Y).
rule attacked(X,Y) :- at(P,PX,PY), white(P), reach(P,PX,PY,X,Y), not blocked(PX,PY,X,Y).
rule incheck :- at(bk,X,Y), attacked(X,Y).
rule movable :- at(bk,X,Y), kstep(X,Y,X2,Y2), not attacked(X2,Y2).
rule twowhite :- wcell(C1), wcell(C2), C1 < C2.
rule placed :- at(bk,X,Y), twowhite.

rule safe :- placed, movable.
rule draw :- placed, not incheck, not movable.
rule mate :- placed, incheck, not movable.

% the same piece type is not at more than one position (covers "one black piece")
ic :- val(C1,P), val(C2,P), piece(P), C1 < C2.
% the kings do not attack each other
ic :- at(bk,X1,Y1), at(wk,X2,Y2), kstep(X1,Y1,X2,Y2).
% at most two white pieces
ic :- wcell(C1), wcell(C2), wcell(C3), C1 < C2, C2 < C3.
"""
    if isk:
        text += """
% input-specific knowledge: occ(X,Y) lists exactly the non-empty cells
ic :- cell(C,X,Y), val(C,e), occ(X,Y).
ic :- at(P,X,Y), not occ(X,Y).
"""
    return text


_CACHE: dict = {}


def chess_theory(n: int = 3, isk: bool = False) -> GroundTheory:
    key = (n, isk)
    if key not in _CACHE:
        theory = load_theory(chess_source(n, isk))
        theory.name = "chess-isk" if isk else "chess"
        _CACHE[key] = theory
    return _CACHE[key]


def board(schema, pieces: dict, n: int = 3) -> Assignment:
    """Complete assignment from ``{(x, y): piece}``; other cells empty."""
    values = {cell_name(x, y): "e" for y in range(1, n + 1) for x in range(1, n + 1)}
    for (x, y), p in pieces.items():
        values[cell_name(x, y)] = p
    return Assignment(schema, values)


def occupancy_facts(assignment) -> tuple[Atom, ...]:
    """Side information for the ISK variant: coordinates of non-empty cells."""
    out = []
    for name, value in assignment.items():
        if value != "e":
            out.append(Atom("occ", (int(name[1]), int(name[2]))))
    return tuple(sorted(out))


# -- guided abduction cost --------------------------------------------------------


def tiered_cost(schema) -> CostModel:
    """Per-cell costs ranking perturbations of a predicted board.

    Changing the type of a white piece in place costs 1, emptying or filling
    a cell costs 1 (so moving a piece costs 2), and turning any piece into or
    out of a king costs 2: king identities fix which side a piece is on and
    which constraints apply, so they are revised last.
    """
    n = len(CELL_VALUES)
    m = np.zeros((n, n))
    kings = {"bk", "wk"}
    for i, a in enumerate(CELL_VALUES):
        for j, b in enumerate(CELL_VALUES):
            if i == j:
                continue
            if a == "e" or b == "e":
                m[i, j] = 1.0
            elif a in kings or b in kings:
                m[i, j] = 2.0
            else:
                m[i, j] = 1.0
    return CostModel(value_costs={s.name: m for s in schema.slots}, name="chess-tiered")


# -- scenario ---------------------------------------------------------------------


def random_board(rng: np.random.Generator, n: int = 3) -> dict:
    """One black king and two white pieces of distinct types on distinct cells."""
    cells = [(x, y) for y in range(1, n + 1) for x in range(1, n + 1)]
    picks = rng.choice(len(cells), size=3, replace=False)
    types = rng.choice(len(WHITE), size=2, replace=False)
    values = {cell_name(x, y): "e" for x, y in cells}
    values[cell_name(*cells[picks[0]])] = "bk"
    values[cell_name(*cells[picks[1]])] = WHITE[types[0]]
    values[cell_name(*cells[picks[2]])] = WHITE[types[1]]
    return values


def chess_spec(variant: str = "bsv", n: int = 3) -> ScenarioSpec:
    if variant not in ("bsv", "isk", "nga"):
        raise ValueError(f"unknown chess variant {variant!r}")
    theory = chess_theory(n, isk=variant == "isk")
    names = tuple(s.name for s in theory.schema.slots)

    def sampler(rng, i):
        return random_board(rng, n), ()

    # piece class i is drawn with digit glyph i
    group = ImageGroup("cells", names, DIGITS, tuple(range(len(CELL_VALUES))))
    return ScenarioSpec(
        f"chess-{variant}",
        theory.schema,
        theory,
        (group,),
        sampler,
        cost=tiered_cost(theory.schema) if variant == "nga" else None,
        default_mode={"bsv": "basic", "isk": "isk", "nga": "nga"}[variant],
        labels=OUTCOMES,
        params={"n": n},
        side_info=occupancy_facts if variant == "isk" else None,
    )
