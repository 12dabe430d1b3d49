"""Shared scenario machinery: samples, specs, generation and dataset files."""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping

import numpy as np

from ..abduction import CostModel
from ..logic import Assignment, Atom, Outcome, SlotSchema, parse_atom
from ..neural import ArchSpec, HeadGroup
from .glyphs import GLYPH_SETS, GlyphSet, render_glyph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    """One training pair.

    ``x`` maps image-group names to ``(slots, pixels)`` arrays; ``facts`` are
    symbolic inputs that are part of x (e.g. query coordinates); ``side_info``
    is optional external knowledge for ISK training; ``ground_truth`` is kept
    for diagnostics and is never shown to the trainer.  ``glyph_ids`` records
    the (class, instance seed) behind every image for compact storage.
    """

    x: Mapping[str, np.ndarray]
    label: Outcome
    facts: tuple[Atom, ...] = ()
    side_info: tuple[Atom, ...] | None = None
    ground_truth: Assignment | None = None
    glyph_ids: Mapping[str, tuple] = field(default_factory=dict)

    def stripped(self) -> "Sample":
        return replace(self, ground_truth=None)


@dataclass(frozen=True)
class ImageGroup:
    """Slots rendered as images of one glyph set, sharing one sub-network.

    ``classes[j]`` is the glyph class drawn for the j-th domain value.
    """

    name: str
    slots: tuple[str, ...]
    glyphs: GlyphSet
    classes: tuple[int, ...]


# A sampler draws the ground truth of one sample: slot values and symbolic facts.
Sampler = Callable[[np.random.Generator, int], tuple[dict, tuple]]


@dataclass
class ScenarioSpec:
    id: str
    schema: SlotSchema
    theory: object
    groups: tuple[ImageGroup, ...]
    sampler: Sampler
    latent: tuple[str, ...] = ()
    cost: CostModel | None = None
    default_mode: str = "basic"
    labels: tuple[str, ...] | None = None
    params: dict = field(default_factory=dict)
    side_info: Callable[[Assignment], tuple] | None = None
    hidden: tuple[int, ...] = (128,)

    def arch(self, hidden: tuple[int, ...] | None = None) -> ArchSpec:
        hidden = self.hidden if hidden is None else tuple(hidden)
        return ArchSpec(
            tuple(HeadGroup(g.name, g.slots, g.glyphs.dim, hidden) for g in self.groups),
            self.latent,
        )

    def theory_for(self, sample: Sample):
        return self.theory.extend(sample.facts) if sample.facts else self.theory

    def with_noise(self, noise: float) -> "ScenarioSpec":
        groups = tuple(replace(g, glyphs=g.glyphs.with_noise(noise)) for g in self.groups)
        return replace(self, groups=groups)


MAX_TRIES = 2000


def generate(spec: ScenarioSpec, count: int, seed: int, image_bank=None) -> list[Sample]:
    """``count`` samples whose ground truth deduces to their label.

    The sampler aims at balanced labels (cycling through ``spec.labels``); a
    label that keeps failing after ``MAX_TRIES`` draws is given up with a
    warning and the natural label distribution is used instead.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    out: list[Sample] = []
    given_up: set = set()
    for i in range(count):
        want = None
        if spec.labels:
            want = spec.labels[i % len(spec.labels)]
            if want in given_up:
                want = None
        found = None
        for attempt in range(MAX_TRIES):
            values, facts = spec.sampler(rng, i)
            gt = Assignment(spec.schema, values)
            side = spec.side_info(gt) if spec.side_info else ()
            extra = tuple(facts) + tuple(side)
            theory = spec.theory.extend(extra) if extra else spec.theory
            label = theory.deduce(gt)
            if label.violated:
                continue
            found = (gt, facts, label)
            if want is None or label.key() == want:
                break
        else:
            if want is not None:
                log.warning("label %s of %s is too rare; falling back to natural frequency", want, spec.id)
                given_up.add(want)
            if found is None:
                raise RuntimeError(f"{spec.id}: sampler produced only constraint-violating inputs")
        gt, facts, label = found
        x, ids = render_inputs(spec, gt, rng, image_bank)
        side = tuple(spec.side_info(gt)) if spec.side_info else None
        out.append(Sample(x, label, tuple(facts), side, gt, ids))
    return out


def render_inputs(spec: ScenarioSpec, gt: Assignment, rng: np.random.Generator, image_bank=None):
    x, ids = {}, {}
    for g in spec.groups:
        dom = {s: spec.schema.slot(s).domain for s in g.slots}
        rows, gid = [], []
        banked = image_bank is not None and g.glyphs.name == "digits"
        for s in g.slots:
            cls = g.classes[dom[s].index(gt[s])]
            inst = int(rng.integers(2**31))
            if banked:
                rows.append(image_bank.draw(cls, inst))
            else:
                rows.append(render_glyph(g.glyphs, cls, inst).ravel())
            gid.append((cls, inst))
        x[g.name] = np.stack(rows).astype(np.float32)
        if not banked:
            # glyph ids only reproduce synthetic images
            ids[g.name] = tuple(gid)
    return x, ids


def stack_inputs(samples: Iterable[Sample], groups) -> dict[str, np.ndarray]:
    samples = list(samples)
    return {g.name: np.stack([s.x[g.name] for s in samples]) for g in groups}


# -- dataset files --------------------------------------------------------------


def sample_to_json(spec: ScenarioSpec, s: Sample, compact: bool = True) -> dict:
    if compact:
        missing = [g.name for g in spec.groups if g.name not in s.glyph_ids]
        if missing:
            raise ValueError(f"groups {missing} hold external images; write the dataset with compact=False")
        images = {k: [list(p) for p in v] for k, v in s.glyph_ids.items()}
    else:
        images = {
            k: base64.b64encode(np.ascontiguousarray(v, dtype="<f4").tobytes()).decode() for k, v in s.x.items()
        }
    return {
        "scenario": spec.id,
        "compact": compact,
        "glyphs": {g.name: g.glyphs.to_json() for g in spec.groups},
        "images": images,
        "symbolic_facts": [str(f) for f in s.facts],
        "label": s.label.to_json(),
        "side_info": None if s.side_info is None else [str(f) for f in s.side_info],
        "ground_truth": None if s.ground_truth is None else dict(s.ground_truth),
    }


def sample_from_json(spec: ScenarioSpec, d: Mapping) -> Sample:
    x, ids = {}, {}
    for g in spec.groups:
        raw = d["images"][g.name]
        if d.get("compact", True):
            gs = GlyphSet.from_json(d["glyphs"][g.name]) if "glyphs" in d else g.glyphs
            pairs = [tuple(p) for p in raw]
            x[g.name] = np.stack([render_glyph(gs, c, inst).ravel() for c, inst in pairs]).astype(np.float32)
            ids[g.name] = tuple(pairs)
        else:
            arr = np.frombuffer(base64.b64decode(raw), dtype="<f4")
            x[g.name] = arr.reshape(len(g.slots), -1).astype(np.float32)
    facts = tuple(parse_atom(f) for f in d.get("symbolic_facts", ()))
    side = d.get("side_info")
    side = None if side is None else tuple(parse_atom(f) for f in side)
    gt = d.get("ground_truth")
    gt = None if gt is None else Assignment(spec.schema, gt)
    return Sample(x, Outcome.from_json(d["label"]), facts, side, gt, ids)


def write_dataset(path, spec: ScenarioSpec, samples: Iterable[Sample], compact: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_json(spec, s, compact), sort_keys=True) + "\n")


def read_dataset(path, spec: ScenarioSpec) -> list[Sample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                if d.get("scenario") not in (None, spec.id):
                    raise ValueError(f"{path}: sample of scenario {d.get('scenario')!r}, expected {spec.id!r}")
                out.append(sample_from_json(spec, d))
    return out


def glyph_set(name: str) -> GlyphSet:
    return GLYPH_SETS[name]
