"""A small numpy MLP with one softmax head per slot.

Image slots are grouped by kind.  Every slot of a group is produced by the
same sub-network applied to that slot's image, so e.g. all digit cells share
weights.  Latent slots have no input and carry a free logit vector, which is
how the operator scenario learns its hidden operator.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .circuits import WeightTable
from .logic import Assignment, SlotSchema

CHECKPOINT_MAGIC = b"ABDLNN01"


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class HeadGroup:
    """Slots sharing one sub-network: ``input_dim`` -> hidden... -> width."""

    name: str
    slots: tuple[str, ...]
    input_dim: int
    hidden: tuple[int, ...] = (128,)
    width: int | None = None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "slots": list(self.slots),
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "width": self.width,
        }

    @classmethod
    def from_json(cls, d) -> "HeadGroup":
        return cls(d["name"], tuple(d["slots"]), int(d["input_dim"]), tuple(d["hidden"]), d.get("width"))


@dataclass(frozen=True)
class ArchSpec:
    groups: tuple[HeadGroup, ...]
    latent: tuple[str, ...] = ()
    output_scale: float = 0.1

    def to_json(self) -> dict:
        return {
            "groups": [g.to_json() for g in self.groups],
            "latent": list(self.latent),
            "output_scale": self.output_scale,
        }

    @classmethod
    def from_json(cls, d) -> "ArchSpec":
        return cls(tuple(HeadGroup.from_json(g) for g in d["groups"]), tuple(d["latent"]), d.get("output_scale", 0.1))


@dataclass
class NeuralModel:
    """Parameters live in ``params``: per group ``W0, b0, W1, b1, ...``, then
    one logit vector per latent slot, all in a fixed order."""

    schema: SlotSchema
    arch: ArchSpec
    params: list[np.ndarray]
    seed: int = 0
    step: int = 0
    _layout: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._layout = _layout(self.schema, self.arch)
        shapes = [shape for _, shape in _param_shapes(self.schema, self.arch)]
        if [p.shape for p in self.params] != shapes:
            raise ModelError("parameter shapes do not match the architecture")

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def copy(self) -> "NeuralModel":
        return NeuralModel(self.schema, self.arch, [p.copy() for p in self.params], self.seed, self.step)


def _layout(schema: SlotSchema, arch: ArchSpec):
    """Validate ownership: per group the slot indices and shared width."""
    owner: dict[str, str] = {}
    out = []
    for g in arch.groups:
        if not g.slots:
            raise ModelError(f"head group {g.name!r} has no slots")
        widths = set()
        for s in g.slots:
            if s not in schema:
                raise ModelError(f"head group {g.name!r} names unknown slot {s!r}")
            if s in owner:
                raise ModelError(f"slot {s!r} is owned by two heads")
            owner[s] = g.name
            widths.add(len(schema.slot(s).domain))
        if len(widths) != 1:
            raise ModelError(f"slots of head group {g.name!r} have different domain sizes")
        width = widths.pop()
        if g.width is not None and g.width != width:
            raise ModelError(f"head group {g.name!r} declares width {g.width} but its slots have {width} values")
        out.append(([schema.slot_index(s) for s in g.slots], width))
    for s in arch.latent:
        if s not in schema:
            raise ModelError(f"latent head names unknown slot {s!r}")
        if s in owner:
            raise ModelError(f"slot {s!r} is owned by two heads")
        owner[s] = "latent"
    missing = [s for s in schema.names if s not in owner]
    if missing:
        raise ModelError(f"slots without a head: {missing}")
    return out


def _param_shapes(schema: SlotSchema, arch: ArchSpec):
    shapes = []
    for g, (_, width) in zip(arch.groups, _layout(schema, arch)):
        dims = [g.input_dim, *g.hidden, width]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            shapes.append((f"{g.name}.W{i}", (a, b)))
            shapes.append((f"{g.name}.b{i}", (b,)))
    for s in arch.latent:
        shapes.append((f"latent.{s}", (len(schema.slot(s).domain),)))
    return shapes


def init(seed: int, schema: SlotSchema, arch: ArchSpec) -> NeuralModel:
    """He-uniform hidden layers, a down-scaled output layer, zero latent logits.

    The small output layer makes every head close to uniform at the start.
    """
    rng = np.random.default_rng(seed)
    params = []
    for g, (_, width) in zip(arch.groups, _layout(schema, arch)):
        dims = [g.input_dim, *g.hidden, width]
        last = len(dims) - 2
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            limit = math.sqrt(6.0 / a)
            if i == last:
                limit *= arch.output_scale
            params.append(rng.uniform(-limit, limit, size=(a, b)))
            params.append(np.zeros(b))
    for s in arch.latent:
        params.append(np.zeros(len(schema.slot(s).domain)))
    return NeuralModel(schema, arch, params, seed)


# -- prediction -------------------------------------------------------------


class Prediction:
    """The concatenated head outputs ``omega`` for one input."""

    __slots__ = ("schema", "omega", "_argmax")

    def __init__(self, schema: SlotSchema, omega):
        self.schema = schema
        self.omega = np.asarray(omega, dtype=np.float64)
        if self.omega.shape != (schema.k,):
            raise ModelError(f"prediction needs {schema.k} entries, got {self.omega.shape}")
        self._argmax = None

    @property
    def weights(self) -> WeightTable:
        return WeightTable(self.schema, self.omega)

    @property
    def argmax_indices(self) -> tuple[int, ...]:
        # np.argmax returns the first maximum, i.e. the lowest domain index.
        if self._argmax is None:
            self._argmax = tuple(
                int(np.argmax(self.omega[o : o + n])) for o, n in zip(self.schema.offsets, self.schema.sizes)
            )
        return self._argmax

    @property
    def argmax(self) -> Assignment:
        return Assignment.from_indices(self.schema, self.argmax_indices)

    def slot(self, name: str) -> np.ndarray:
        i = self.schema.slot_index(name)
        o = self.schema.offsets[i]
        return self.omega[o : o + self.schema.sizes[i]]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(model: NeuralModel, x) -> list[np.ndarray]:
    """Normalise inputs to one ``(B, slots, input_dim)`` array per group.

    ``x`` may be a mapping from group name to arrays, a list aligned with the
    groups, or a single array when there is exactly one group.  Arrays may
    omit the batch axis.
    """
    groups = model.arch.groups
    if isinstance(x, Mapping):
        arrays = [x[g.name] for g in groups]
    elif isinstance(x, (list, tuple)) and len(x) == len(groups) and len(groups) != 1:
        arrays = list(x)
    elif len(groups) == 1:
        arrays = [x]
    elif not groups:
        arrays = []
    else:
        raise ModelError("inputs must be given per head group")
    out = []
    for g, a in zip(groups, arrays):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 2:
            a = a[None]
        if a.ndim != 3 or a.shape[1:] != (len(g.slots), g.input_dim):
            raise ModelError(
                f"group {g.name!r} expects inputs of shape (batch, {len(g.slots)}, {g.input_dim}), got {a.shape}"
            )
        out.append(a)
    return out


def forward_batch(model: NeuralModel, x, batch: int | None = None, keep: bool = False):
    """Head probabilities for a batch: ``(B, k)`` (plus activations if ``keep``)."""
    schema = model.schema
    arrays = _as_batch(model, x)
    if arrays:
        B = arrays[0].shape[0]
    elif batch is not None:
        B = batch
    else:
        B = 1
    omega = np.empty((B, schema.k))
    offsets = schema.offsets
    acts = []
    pi = 0
    for g, (slot_idx, width), a in zip(model.arch.groups, model._layout, arrays):
        n_layers = len(g.hidden) + 1
        h = a.reshape(B * len(slot_idx), g.input_dim)
        layer_inputs = []
        for i in range(n_layers):
            W, b = model.params[pi + 2 * i], model.params[pi + 2 * i + 1]
            layer_inputs.append(h)
            z = h @ W + b
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        pi += 2 * n_layers
        p = _softmax(h).reshape(B, len(slot_idx), width)
        for j, s in enumerate(slot_idx):
            omega[:, offsets[s] : offsets[s] + width] = p[:, j]
        acts.append((layer_inputs, p))
    for s in model.arch.latent:
        si = schema.slot_index(s)
        p = _softmax(model.params[pi])
        omega[:, offsets[si] : offsets[si] + len(p)] = p
        pi += 1
    if keep:
        return omega, acts
    return omega


def forward(model: NeuralModel, x) -> Prediction:
    """Prediction for a single input."""
    omega = forward_batch(model, x, batch=1)
    if omega.shape[0] != 1:
        raise ModelError("forward takes a single input; use forward_batch for batches")
    return Prediction(model.schema, omega[0])


def backward(model: NeuralModel, x, upstream, acts=None) -> list[np.ndarray]:
    """Gradients of ``sum_b upstream[b] . omega[b]`` wrt every parameter.

    ``upstream`` is ``(k,)`` or ``(B, k)``; passing the activations returned by
    ``forward_batch(..., keep=True)`` skips the recomputation.
    """
    schema = model.schema
    up = np.asarray(upstream, dtype=np.float64)
    single = up.ndim == 1
    if single:
        up = up[None]
    if up.shape[1] != schema.k:
        raise ModelError(f"upstream gradient needs {schema.k} entries, got {up.shape[1]}")
    if acts is None:
        _, acts = forward_batch(model, x, batch=up.shape[0], keep=True)
    B = up.shape[0]
    offsets = schema.offsets
    grads: list[np.ndarray] = [None] * len(model.params)
    pi = 0
    for g, (slot_idx, width), (layer_inputs, p) in zip(model.arch.groups, model._layout, acts):
        if p.shape[0] != B:
            raise ModelError("upstream batch size does not match the inputs")
        u = np.stack([up[:, offsets[s] : offsets[s] + width] for s in slot_idx], axis=1)
        # softmax Jacobian: dz = p * (u - <u, p>).  It ignores constant shifts
        # of u, so shifting by u[0] first changes nothing except that a
        # constant upstream (a tautology) yields exactly zero, not roundoff
        # that Adam would blow up into a full step.
        u = u - u[..., :1]
        dz = p * (u - (u * p).sum(axis=-1, keepdims=True))
        delta = dz.reshape(B * len(slot_idx), width)
        n_layers = len(g.hidden) + 1
        for i in range(n_layers - 1, -1, -1):
            W = model.params[pi + 2 * i]
            h_in = layer_inputs[i]
            grads[pi + 2 * i] = h_in.T @ delta
            grads[pi + 2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ W.T) * (h_in > 0)
        pi += 2 * n_layers
    for s in model.arch.latent:
        si = schema.slot_index(s)
        p = _softmax(model.params[pi])
        u = up[:, offsets[si] : offsets[si] + len(p)]
        u = u - u[:, :1]
        grads[pi] = (p[None] * (u - (u * p[None]).sum(axis=-1, keepdims=True))).sum(axis=0)
        pi += 1
    return grads


# -- optimiser -----------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: NeuralModel, lr: float = 0.001, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in model.params], [np.zeros_like(p) for p in model.params], 0, lr, beta1, beta2, eps)


def adam_step(model: NeuralModel, grads: Sequence[np.ndarray], state: AdamState) -> tuple[NeuralModel, AdamState]:
    """One bias-corrected Adam update, applied in place and returned."""
    if len(grads) != len(model.params):
        raise ModelError("gradient list does not match the parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(model.params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ModelError("gradient shape does not match its parameter")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    model.step += 1
    return model, state


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: NeuralModel, path) -> None:
    """JSON header line, then the parameters as little-endian float64."""
    header = {
        "format": "abdlearn-mlp-1",
        "arch": model.arch.to_json(),
        "schema": model.schema.to_json(),
        "schema_digest": model.schema.digest(),
        "seed": model.seed,
        "step": model.step,
        "shapes": [list(p.shape) for p in model.params],
    }
    head = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Q", len(head)))
    buf.write(head)
    for p in model.params:
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> NeuralModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a model checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n])
    schema = SlotSchema.from_json(header["schema"])
    if schema.digest() != header["schema_digest"]:
        raise ModelError(f"{path}: schema digest mismatch")
    arch = ArchSpec.from_json(header["arch"])
    pos = 16 + n
    params = []
    for shape in header["shapes"]:
        size = int(np.prod(shape)) if shape else 1
        chunk = data[pos : pos + 8 * size]
        if len(chunk) != 8 * size:
            raise ModelError(f"{path}: truncated parameter blob")
        params.append(np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape))
        pos += 8 * size
    return NeuralModel(schema, arch, params, header["seed"], header["step"])


def latent_probs(model: NeuralModel) -> dict[str, np.ndarray]:
    """Current distribution of every latent head."""
    out = {}
    pi = len(model.params) - len(model.arch.latent)
    for s in model.arch.latent:
        out[s] = _softmax(model.params[pi])
        pi += 1
    return out
