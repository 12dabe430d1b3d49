"""Benchmark scenarios: theories, generators and image sources."""

from __future__ import annotations

import re

from .arith import add_spec, apply_spec, dba_spec, math_spec, member_spec, operator_spec, pair_add_spec
from .base import ImageGroup, Sample, ScenarioSpec, generate, read_dataset, stack_inputs, write_dataset
from .chess import chess_spec
from .glyphs import DIGITS, OPERATORS, SIGNS, GlyphSet, render_glyph
from .idx import IdxError, load_idx, load_idx_pair
from .path import path_spec

# scenario id -> (builder, default n or None when the scenario takes no size)
_BUILDERS = {
    "add": (lambda n, **kw: add_spec(), None),
    "pair-add": (lambda n, **kw: pair_add_spec(), None),
    "operator": (lambda n, **kw: operator_spec(kw.get("op"), kw.get("seed", 0)), None),
    "apply": (lambda n, **kw: apply_spec(), None),
    "member": (lambda n, **kw: member_spec(n), 3),
    "math": (lambda n, **kw: math_spec(n), 3),
    "dba": (lambda n, **kw: dba_spec(n), 5),
    "path": (lambda n, **kw: path_spec(n), 3),
    "chess-bsv": (lambda n, **kw: chess_spec("bsv", n), 3),
    "chess-isk": (lambda n, **kw: chess_spec("isk", n), 3),
    "chess-nga": (lambda n, **kw: chess_spec("nga", n), 3),
}

SCENARIO_IDS = tuple(_BUILDERS)


class UnknownScenarioError(ValueError):
    pass


def parse_id(scenario: str, n: int | None = None) -> tuple[str, int | None]:
    """Split ``member(3)`` into ``("member", 3)``; an explicit ``n`` wins."""
    m = re.fullmatch(r"([a-z-]+)(?:\((\d+)\))?", scenario.strip())
    if not m or m.group(1) not in _BUILDERS:
        raise UnknownScenarioError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIO_IDS)}")
    name = m.group(1)
    default = _BUILDERS[name][1]
    size = n if n is not None else (int(m.group(2)) if m.group(2) else default)
    if default is None and size is not None and m.group(2):
        raise UnknownScenarioError(f"scenario {name!r} takes no size")
    return name, size if default is not None else None


def get_scenario(scenario: str, n: int | None = None, noise: float | None = None, **params) -> ScenarioSpec:
    name, size = parse_id(scenario, n)
    spec = _BUILDERS[name][0](size, **params)
    if noise is not None:
        spec = spec.with_noise(noise)
    return spec


def build_theory(scenario: str, n: int | None = None, **params):
    return get_scenario(scenario, n, **params).theory


__all__ = [
    "DIGITS",
    "OPERATORS",
    "SIGNS",
    "SCENARIO_IDS",
    "GlyphSet",
    "IdxError",
    "ImageGroup",
    "Sample",
    "ScenarioSpec",
    "UnknownScenarioError",
    "build_theory",
    "generate",
    "get_scenario",
    "load_idx",
    "load_idx_pair",
    "parse_id",
    "read_dataset",
    "render_glyph",
    "stack_inputs",
    "write_dataset",
]
