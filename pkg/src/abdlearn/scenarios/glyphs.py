"""Synthetic glyph images standing in for MNIST-style datasets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIZE = 28


def _stroke_bitmap(rng: np.random.Generator, size: int) -> np.ndarray:
    """A few thick random line segments inside a margin."""
    img = np.zeros((size, size), dtype=np.float32)
    lo, hi = 4, size - 5
    for _ in range(int(rng.integers(3, 6))):
        (x0, y0), (x1, y1) = rng.integers(lo, hi + 1, size=(2, 2))
        steps = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
        xs = np.rint(np.linspace(x0, x1, steps)).astype(int)
        ys = np.rint(np.linspace(y0, y1, steps)).astype(int)
        for dx in (0, 1):
            for dy in (0, 1):
                img[np.clip(ys + dy, 0, size - 1), np.clip(xs + dx, 0, size - 1)] = 1.0
    return img


@dataclass(frozen=True)
class GlyphSet:
    """``classes`` deterministic base bitmaps plus a pixel-flip noise model.

    ``noise`` is the probability of flipping each pixel; ``jitter`` is the
    maximum shift in pixels along each axis.  Base bitmaps depend only on
    ``(name, classes, size)``.
    """

    name: str
    classes: int
    noise: float = 0.05
    jitter: int = 0
    size: int = SIZE
    _bases: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seed = [sum(self.name.encode()), len(self.name), self.classes]
        rng = np.random.default_rng(seed)
        bases: list[np.ndarray] = []
        while len(bases) < self.classes:
            cand = _stroke_bitmap(rng, self.size)
            # keep classes well apart so the task is about noise, not ambiguity
            if all(np.abs(cand - b).sum() >= 0.1 * self.size * self.size for b in bases):
                bases.append(cand)
        object.__setattr__(self, "_bases", np.stack(bases))

    @property
    def dim(self) -> int:
        return self.size * self.size

    def base(self, cls: int) -> np.ndarray:
        self._check(cls)
        return self._bases[cls].copy()

    def _check(self, cls: int) -> None:
        if not 0 <= cls < self.classes:
            raise ValueError(f"glyph class {cls} out of range for {self.name!r} ({self.classes} classes)")

    def with_noise(self, noise: float, jitter: int | None = None) -> "GlyphSet":
        return GlyphSet(self.name, self.classes, noise, self.jitter if jitter is None else jitter, self.size)

    def to_json(self) -> dict:
        return {"name": self.name, "classes": self.classes, "noise": self.noise, "jitter": self.jitter, "size": self.size}

    @classmethod
    def from_json(cls, d) -> "GlyphSet":
        return cls(d["name"], d["classes"], d["noise"], d["jitter"], d["size"])


def render_glyph(glyphs: GlyphSet, cls: int, seed: int) -> np.ndarray:
    """Image of class ``cls`` for instance ``seed``; values in {0, 1}."""
    glyphs._check(cls)
    img = glyphs._bases[cls].copy()
    rng = np.random.default_rng([int(seed), cls])
    if glyphs.jitter:
        dx, dy = rng.integers(-glyphs.jitter, glyphs.jitter + 1, size=2)
        img = np.roll(img, (int(dy), int(dx)), axis=(0, 1))
    if glyphs.noise > 0:
        flip = rng.random(img.shape) < glyphs.noise
        img = np.where(flip, 1.0 - img, img).astype(np.float32)
    return img


DIGITS = GlyphSet("digits", 10)
# plus, minus, times, div, eq
OPERATORS = GlyphSet("operators", 5)
OPERATOR_CLASS = {"plus": 0, "minus": 1, "times": 2, "div": 3, "eq": 4}
# go, slow, stop
SIGNS = GlyphSet("signs", 3)

GLYPH_SETS = {g.name: g for g in (DIGITS, OPERATORS, SIGNS)}
