"""Training the neural module from outcome labels through abductive feedback.

One step of training on a sample: predict, fetch the abductive feedback for
its label (from the cache when possible), turn it into the semantic loss via
weighted model counting, backpropagate, and let Adam move the parameters.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .abduction import (
    DEFAULT_NODE_BUDGET,
    AbductionBudgetExceeded,
    AbductionCache,
    CostModel,
    FeedbackFormula,
    get_feedback,
)
from .circuits import WeightTable, compile_formula, semantic_loss
from .logic import Outcome
from .neural import AdamState, NeuralModel, Prediction, adam_step, backward, forward, forward_batch, init, latent_probs
from .scenarios import ScenarioSpec, get_scenario, stack_inputs
from .scenarios.base import Sample

log = logging.getLogger(__name__)

MODES = ("basic", "isk", "nga")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    scenario: str = "add"
    n: int | None = None
    mode: str | None = None
    epochs: int = 3
    batch_size: int = 16
    seed: int = 0
    data_seed: int | None = None
    lr: float = 0.001
    train_size: int = 3000
    test_size: int = 1000
    noise: float = 0.05
    hidden: list[int] = field(default_factory=lambda: [128])
    eval_every: int = 0
    cache: bool = True
    cache_dir: str | None = None
    budget: int = DEFAULT_NODE_BUDGET
    cost: str | None = None
    log_space: bool = False
    op: str | None = None
    dataset: str | None = None
    test_dataset: str | None = None

    def validate(self) -> None:
        errors = []
        if self.mode is not None and self.mode not in MODES:
            errors.append(f"mode: must be one of {', '.join(MODES)}")
        for name in ("epochs", "batch_size", "train_size", "test_size", "budget"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) <= 0:
                errors.append(f"{name}: must be a positive integer")
        if not isinstance(self.eval_every, int) or self.eval_every < 0:
            errors.append("eval_every: must be a non-negative integer")
        if not self.lr > 0:
            errors.append("lr: must be positive")
        if not 0 <= self.noise < 0.5:
            errors.append("noise: must be in [0, 0.5)")
        if self.cost not in (None, "hamming", "tiered"):
            errors.append("cost: must be hamming or tiered")
        if not self.hidden or any(not isinstance(h, int) or h <= 0 for h in self.hidden):
            errors.append("hidden: must be a non-empty list of positive integers")
        if errors:
            raise ConfigError("; ".join(errors))

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError("; ".join(f"{k}: unknown field" for k in unknown))
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def resolved_mode(self, spec: ScenarioSpec) -> str:
        return self.mode or spec.default_mode

    def scenario_spec(self) -> ScenarioSpec:
        params = {"seed": self.seed if self.data_seed is None else self.data_seed}
        if self.op:
            params["op"] = self.op
        return get_scenario(self.scenario, self.n, noise=self.noise, **params)

    def cost_model(self, spec: ScenarioSpec) -> CostModel | None:
        if self.cost == "hamming":
            return CostModel()
        if self.cost == "tiered":
            if spec.cost is None:
                raise ConfigError("cost: the tiered cost model exists only for chess scenarios")
            return spec.cost
        return spec.cost or CostModel()


@dataclass
class MetricsRecord:
    iteration: int
    epoch: int
    accuracy: float | None
    mean_loss: float | None
    seconds: float
    hits: int
    misses: int
    distinct_feedbacks: int
    visits: int
    updates: int
    skips: int
    slot_accuracy: float | None = None
    latent: dict | None = None

    def to_json(self, timing: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not timing:
            # wall time varies between runs; it goes to the CSV summary only
            d.pop("seconds")
        return d


# -- translation and inference -----------------------------------------------------


def translate(prediction: Prediction) -> WeightTable:
    """The translator r: head probabilities reshaped into a weight table."""
    return prediction.weights


def infer(theory, model: NeuralModel, x, facts: Iterable = ()) -> Outcome:
    """End-to-end reasoning: deduce over the argmax of the prediction."""
    if isinstance(x, Sample):
        facts = x.facts
        x = x.x
    facts = tuple(facts)
    th = theory.extend(facts) if facts else theory
    pred = forward(model, x)
    return th.deduce(translate(pred).argmax())


@dataclass
class EvalResult:
    accuracy: float
    total: int
    correct: int
    violations: int
    confusion: dict
    slot_accuracy: float | None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(spec: ScenarioSpec, model: NeuralModel, samples: Sequence[Sample], batch: int = 256) -> EvalResult:
    """Exact-match accuracy of end-to-end outcomes; ⊥ counts as wrong."""
    correct = violations = 0
    confusion: Counter = Counter()
    slot_hits = slot_total = 0
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        omega = forward_batch(model, stack_inputs(chunk, model.arch.groups) if model.arch.groups else None, len(chunk))
        for s, w in zip(chunk, omega):
            pred = Prediction(model.schema, w)
            idx = pred.argmax_indices
            out = spec.theory_for(s).deduce(idx)
            if out.violated:
                violations += 1
            if out == s.label:
                correct += 1
            confusion[(s.label.key(), out.key())] += 1
            if s.ground_truth is not None:
                gt = s.ground_truth.indices()
                slot_hits += sum(int(a == b) for a, b in zip(idx, gt))
                slot_total += len(gt)
    total = len(samples)
    return EvalResult(
        correct / total if total else 0.0,
        total,
        correct,
        violations,
        {f"{a} -> {b}": c for (a, b), c in sorted(confusion.items())},
        slot_hits / slot_total if slot_total else None,
    )


# -- training --------------------------------------------------------------------


@dataclass
class StepResult:
    loss: float
    used: int
    skipped: int


class Trainer:
    """Owns the model, optimiser state, feedback cache and counters of one run."""

    def __init__(
        self,
        spec: ScenarioSpec,
        config: TrainConfig,
        model: NeuralModel | None = None,
        cache: AbductionCache | None = None,
    ):
        config.validate()
        self.spec = spec
        self.config = config
        self.mode = config.resolved_mode(spec)
        self.cost = config.cost_model(spec) if self.mode == "nga" else None
        self.model = model or init(config.seed, spec.schema, spec.arch(tuple(config.hidden)))
        self.state = AdamState.for_model(self.model, lr=config.lr)
        self.cache = cache or AbductionCache(config.cache_dir, enabled=config.cache)
        self.visits = self.updates = self.skips = 0
        self.feedback_log: list[tuple[str, int]] = []
        self.record_feedback = False

    def feedback(self, sample: Sample, prediction: Prediction) -> FeedbackFormula:
        theory = self.spec.theory_for(sample)
        if self.mode == "isk" and sample.side_info is None:
            raise ConfigError("mode isk needs samples carrying side information")
        return get_feedback(
            self.cache,
            theory,
            sample.label,
            side_info=sample.side_info if self.mode == "isk" else None,
            mode=self.mode,
            prediction=prediction,
            cost=self.cost,
            budget=self.config.budget,
        )

    def step(self, samples: Sequence[Sample]) -> StepResult:
        """One optimiser update on the mean semantic loss of a minibatch."""
        samples = [s.stripped() for s in samples]
        model = self.model
        groups = model.arch.groups
        x = stack_inputs(samples, groups) if groups else None
        omega, acts = forward_batch(model, x, batch=len(samples), keep=True)
        upstream = np.zeros_like(omega)
        losses = []
        for i, s in enumerate(samples):
            self.visits += 1
            pred = Prediction(model.schema, omega[i])
            try:
                phi = self.feedback(s, pred)
            except AbductionBudgetExceeded as exc:
                log.warning("skipping sample: %s", exc)
                self.skips += 1
                continue
            if self.record_feedback:
                self.feedback_log.append((s.label.key(), len(phi)))
            if not phi:
                log.warning("skipping sample: no abductive proof for label %s", s.label)
                self.skips += 1
                continue
            res = semantic_loss(compile_formula(phi), omega[i], log=self.config.log_space)
            losses.append(res.loss)
            upstream[i] = res.gradient
            self.updates += 1
        if not losses:
            return StepResult(0.0, 0, len(samples))
        upstream /= len(losses)
        grads = backward(model, x, upstream, acts)
        adam_step(model, grads, self.state)
        return StepResult(float(np.mean(losses)), len(losses), len(samples) - len(losses))

    def record(self, iteration, epoch, test, losses, started) -> MetricsRecord:
        ev = evaluate(self.spec, self.model, test) if test else None
        latent = None
        if self.model.arch.latent:
            latent = {}
            for s, p in latent_probs(self.model).items():
                dom = self.spec.schema.slot(s).domain
                latent[s] = {"argmax": dom[int(np.argmax(p))], "probs": [float(v) for v in p]}
        st = self.cache.stats
        return MetricsRecord(
            iteration=iteration,
            epoch=epoch,
            accuracy=ev.accuracy if ev else None,
            mean_loss=float(np.mean(losses)) if losses else None,
            seconds=time.perf_counter() - started,
            hits=st.hits,
            misses=st.misses,
            distinct_feedbacks=st.computations,
            visits=self.visits,
            updates=self.updates,
            skips=self.skips,
            slot_accuracy=ev.slot_accuracy if ev else None,
            latent=latent,
        )

    def fit(
        self,
        train_set: Sequence[Sample],
        test_set: Sequence[Sample] | None = None,
        on_record: Callable[[MetricsRecord], None] | None = None,
    ) -> list[MetricsRecord]:
        if not train_set:
            raise ConfigError("dataset: must not be empty")
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, 1])
        started = time.perf_counter()
        records: list[MetricsRecord] = []
        iteration = 0
        window: list[float] = []

        def emit(epoch):
            rec = self.record(iteration, epoch, test_set, window, started)
            records.append(rec)
            window.clear()
            if on_record:
                on_record(rec)

        emit(0)
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(train_set))
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_set[j] for j in order[start : start + cfg.batch_size]]
                res = self.step(batch)
                iteration += 1
                if res.used:
                    window.append(res.loss)
                if cfg.eval_every and iteration % cfg.eval_every == 0:
                    emit(epoch)
            if not (cfg.eval_every and iteration % cfg.eval_every == 0):
                emit(epoch)
        return records


def train(
    model: NeuralModel | None,
    dataset: Sequence[Sample],
    config: TrainConfig,
    spec: ScenarioSpec | None = None,
    test: Sequence[Sample] | None = None,
    cache: AbductionCache | None = None,
) -> tuple[NeuralModel, list[MetricsRecord]]:
    spec = spec or config.scenario_spec()
    trainer = Trainer(spec, config, model, cache)
    records = trainer.fit(dataset, test)
    return trainer.model, records


def train_step(
    model: NeuralModel,
    sample: Sample,
    config: TrainConfig,
    cache: AbductionCache,
    spec: ScenarioSpec | None = None,
    state: AdamState | None = None,
) -> NeuralModel:
    """Algorithm-1 step on one sample (a minibatch of one)."""
    spec = spec or config.scenario_spec()
    trainer = Trainer(spec, config, model, cache)
    if state is not None:
        trainer.state = state
    trainer.step([sample])
    return trainer.model


def write_metrics(path, records: Iterable[MetricsRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def write_summary(path, records: Iterable[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "accuracy", "loss", "seconds"])
        for r in records:
            w.writerow([r.iteration, "" if r.accuracy is None else f"{r.accuracy:.6f}", "" if r.mean_loss is None else f"{r.mean_loss:.6f}", f"{r.seconds:.3f}"])
