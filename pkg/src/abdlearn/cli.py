"""Command-line entry point: ``abdlearn <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every config key of ``train`` can be overridden through an environment
variable ``ABDLEARN_<KEY>`` (e.g. ``ABDLEARN_EPOCHS=1``); values are parsed
as JSON when possible.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .abduction import AbductionError, CostModel, FeedbackFormula, abduce_all, abduce_guided
from .circuits import CircuitError, WeightTable, compile_formula, semantic_loss
from .logic import Assignment, Outcome, TheoryError, load_theory, parse_atom
from .neural import load_checkpoint, save_checkpoint
from .scenarios import SCENARIO_IDS, IdxError, load_idx_pair, UnknownScenarioError, generate, get_scenario, read_dataset, write_dataset
from .scenarios.idx import ImageBank
from .trainer import ConfigError, TrainConfig, Trainer, evaluate, write_summary

ENV_PREFIX = "ABDLEARN_"
log = logging.getLogger("abdlearn")


class UsageError(Exception):
    """Invalid input from the command line; exits with status 2."""


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _check_target_path(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


# -- gen-data -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.count <= 0:
        raise UsageError("--count must be positive")
    spec = get_scenario(args.scenario, args.n, noise=args.noise, seed=args.seed)
    out = Path(args.out or f"{spec.id}-{args.count}-{args.seed}.jsonl")
    _check_target_path(out, args.force)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    bank = None
    if args.idx_images or args.idx_labels:
        if not (args.idx_images and args.idx_labels):
            raise UsageError("--idx-images and --idx-labels go together")
        for path in (args.idx_images, args.idx_labels):
            if not Path(path).exists():
                raise UsageError(f"file not found: {path}")
        try:
            bank = ImageBank(*load_idx_pair(args.idx_images, args.idx_labels))
        except IdxError as exc:
            raise UsageError(str(exc)) from None
    samples = generate(spec, args.count, args.seed, image_bank=bank)
    # digit images from an IDX bank cannot be rebuilt from glyph ids
    write_dataset(out, spec, samples, compact=not args.full and bank is None)
    _emit(args, {"path": str(out), "count": len(samples), "scenario": spec.id}, f"wrote {len(samples)} samples to {out}")
    return 0


# -- train / eval -----------------------------------------------------------------


def _load_config(args) -> TrainConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config: must be a JSON object")
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    for name in fields:
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            try:
                data[name] = json.loads(raw)
            except json.JSONDecodeError:
                data[name] = raw
    for name in ("scenario", "mode", "epochs", "n", "dataset", "test_dataset"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        cfg = TrainConfig.from_json(data)
    except TypeError as exc:
        raise UsageError(f"config: {exc}") from None
    except ConfigError as exc:
        raise UsageError(f"config: {exc}") from None
    for name in ("dataset", "test_dataset"):
        path = getattr(cfg, name)
        if path is not None and not Path(path).exists():
            raise UsageError(f"{name}: file not found: {path}")
    return cfg


def _datasets(cfg: TrainConfig, spec):
    data_seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
    train = read_dataset(cfg.dataset, spec) if cfg.dataset else generate(spec, cfg.train_size, data_seed)
    # held-out data comes from a disjoint seed stream
    test = read_dataset(cfg.test_dataset, spec) if cfg.test_dataset else generate(spec, cfg.test_size, data_seed + 1_000_003)
    return train, test


def _run_name(scenario: str, mode: str, seed: int) -> str:
    stem = re.sub(r"[^A-Za-z0-9]+", "-", scenario).strip("-")
    return f"{stem}-{mode}-seed{seed}"


def cmd_train(args) -> int:
    cfg = _load_config(args)
    try:
        spec = cfg.scenario_spec()
    except UnknownScenarioError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(args.out_dir or "runs") / _run_name(spec.id, cfg.resolved_mode(spec), cfg.seed)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise UsageError(f"{out_dir} is not empty; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    config_text = json.dumps(cfg.to_json(), sort_keys=True, indent=2)
    (out_dir / "config.json").write_text(config_text + "\n", encoding="utf-8")

    train_set, test_set = _datasets(cfg, spec)
    trainer = Trainer(spec, cfg)
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as fh:

        def on_record(rec):
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            fh.flush()
            if not args.json:
                loss = "-" if rec.mean_loss is None else f"{rec.mean_loss:.4f}"
                acc = "-" if rec.accuracy is None else f"{rec.accuracy:.4f}"
                print(f"iter {rec.iteration:5d}  acc {acc}  loss {loss}  {rec.seconds:7.1f}s", file=sys.stderr)

        records = trainer.fit(train_set, test_set, on_record)
    write_summary(out_dir / "summary.csv", records)
    save_checkpoint(trainer.model, out_dir / "model.ckpt")
    manifest = {
        "config_digest": hashlib.sha256(config_text.encode()).hexdigest()[:16],
        "scenario": spec.id,
        "mode": cfg.resolved_mode(spec),
        "cost_model": trainer.cost.name if trainer.cost is not None else None,
        "seed": cfg.seed,
        "code_version": __version__,
        "outputs": {"config": "config.json", "metrics": "metrics.jsonl", "summary": "summary.csv", "checkpoint": "model.ckpt"},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    final = records[-1]
    _emit(
        args,
        {"run_dir": str(out_dir), "accuracy": final.accuracy, "iteration": final.iteration, "skips": final.skips},
        f"final accuracy {final.accuracy} after {final.iteration} iterations; run directory {out_dir}",
    )
    if trainer.visits and trainer.skips > 0.1 * trainer.visits:
        print(f"error: {trainer.skips} of {trainer.visits} sample visits were skipped", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    spec = cfg.scenario_spec()
    model = load_checkpoint(args.checkpoint)
    if model.schema != spec.schema:
        raise UsageError("checkpoint schema does not match the scenario")
    if cfg.test_dataset:
        samples = read_dataset(cfg.test_dataset, spec)
    else:
        data_seed = cfg.seed if cfg.data_seed is None else cfg.data_seed
        samples = generate(spec, cfg.test_size, data_seed + 1_000_003)
    res = evaluate(spec, model, samples)
    _emit(args, res.to_json(), f"accuracy {res.accuracy:.4f} ({res.correct}/{res.total}, {res.violations} violations)")
    return 0


# -- abduce / wmc / compile-theory ------------------------------------------------------


def _theory_from_args(args):
    if args.theory:
        try:
            text = Path(args.theory).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read theory: {exc}") from None
        return load_theory(text), None
    if args.scenario:
        spec = get_scenario(args.scenario, args.n)
        return spec.theory, spec
    raise UsageError("give --theory FILE or --scenario ID")


def _parse_atoms(items) -> tuple:
    out = []
    for item in items or ():
        for part in _split_top(item):
            out.append(parse_atom(part))
    return tuple(out)


def _split_top(text: str) -> list[str]:
    """Split on commas that are not inside parentheses."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


def _coerce(schema, slot: str, raw):
    dom = schema.slot(slot).domain
    if raw in dom:
        return raw
    if isinstance(raw, str):
        try:
            value = int(raw)
        except ValueError:
            return raw
        return value if value in dom else raw
    return raw


def _parse_prediction(schema, text: str) -> Assignment:
    """``slot=value,...`` or a JSON object (inline or a file path).

    Slots left out take their first domain value (``e`` on a chess board).
    JSON values may be weight vectors, reduced to their argmax.
    """
    raw = text
    if os.path.exists(text):
        raw = Path(text).read_text(encoding="utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        data = {}
        for part in text.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise UsageError(f"prediction entries look like slot=value, got {part!r}")
            k, v = part.split("=", 1)
            data[k.strip()] = v.strip()
    if not isinstance(data, dict):
        raise UsageError("prediction must map slots to values")
    values = {}
    for s in schema.slots:
        v = data.get(s.name, s.domain[0])
        if isinstance(v, list):
            if len(v) != len(s.domain):
                raise UsageError(f"prediction weights for {s.name!r} need {len(s.domain)} entries")
            v = s.domain[int(np.argmax(v))]
        values[s.name] = _coerce(schema, s.name, v)
    unknown = set(data) - set(schema.names)
    if unknown:
        raise UsageError(f"prediction names unknown slots: {sorted(unknown)}")
    return Assignment(schema, values)


def cmd_abduce(args) -> int:
    theory, spec = _theory_from_args(args)
    facts = _parse_atoms(args.facts) + _parse_atoms(args.side_info)
    if facts:
        theory = theory.extend(facts)
    target = Outcome.of(*_split_top(args.target)) if args.target.strip() else Outcome()
    if args.prediction:
        pred = _parse_prediction(theory.schema, args.prediction)
        if args.cost == "tiered":
            if spec is None or spec.cost is None:
                raise UsageError("--cost tiered needs a chess scenario")
            cost = spec.cost
        elif args.cost == "hamming":
            cost = CostModel()
        else:
            cost = spec.cost if spec is not None and spec.cost is not None else CostModel()
        phi = abduce_guided(theory, target, pred, cost, args.budget)
    else:
        phi = abduce_all(theory, target, args.budget)
    if not phi:
        print(f"warning: no abductive proof for {target}", file=sys.stderr)
    if args.out:
        _check_target_path(Path(args.out), args.force)
        Path(args.out).write_text(phi.dumps() + "\n", encoding="utf-8")
    if args.json:
        print(phi.dumps())
    else:
        head = f"{len(phi)} proof(s) for {target}"
        if phi.cost is not None:
            head += f" at cost {phi.cost:g}"
        lines = [head]
        for a in phi.assignments()[: args.limit]:
            lines.append("  " + ", ".join(f"{k}={v}" for k, v in a.items()))
        if len(phi) > args.limit:
            lines.append(f"  ... {len(phi) - args.limit} more")
        print("\n".join(lines))
    return 0


def cmd_wmc(args) -> int:
    try:
        formula = FeedbackFormula.from_json(json.loads(Path(args.formula).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError, AbductionError, TheoryError) as exc:
        raise UsageError(f"cannot read feedback formula: {exc}") from None
    try:
        weights_raw = json.loads(Path(args.weights).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read weights: {exc}") from None
    schema = formula.schema
    try:
        if isinstance(weights_raw, dict):
            w = WeightTable.from_mapping(schema, weights_raw)
        else:
            w = WeightTable(schema, weights_raw)
    except (CircuitError, ValueError, TypeError) as exc:
        raise UsageError(f"weights: {exc}") from None
    if not formula:
        raise UsageError("the feedback formula has no proofs")
    circuit = compile_formula(formula)
    res = semantic_loss(circuit, w, log=args.log_space)
    grad = {
        name: res.gradient[off : off + n].tolist()
        for name, off, n in zip(schema.names, schema.offsets, schema.sizes)
    }
    payload = {"wmc": res.wmc, "loss": res.loss, "gradient": grad}
    if args.dump_circuit:
        payload["circuit"] = circuit.to_json()
    text = f"wmc {res.wmc:.12g}\nloss {res.loss:.12g}\n" + "\n".join(
        f"d/d{name}: " + " ".join(f"{g:.6g}" for g in vals) for name, vals in grad.items()
    )
    _emit(args, payload, text)
    return 0


def cmd_compile_theory(args) -> int:
    theory, _ = _theory_from_args(args)
    facts = _parse_atoms(args.facts)
    if facts:
        theory = theory.extend(facts)
    summary = theory.summary()
    if args.out:
        _check_target_path(Path(args.out), args.force)
        with open(args.out, "w", encoding="utf-8") as fh:
            for stratum in getattr(theory, "strata", ()):
                for rule in stratum:
                    fh.write(f"{rule}\n")
            for body in getattr(theory, "ic_clauses", ()):
                fh.write(f"{body}\n")
    _emit(args, summary, "\n".join(f"{k}: {v}" for k, v in summary.items()))
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommand copies must not reset flags given before the subcommand
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        f = argparse.ArgumentParser(add_help=False)
        f.add_argument("--seed", type=int, default=d(None), help="random seed")
        f.add_argument("--config", default=d(None), help="JSON config file (train/eval)")
        f.add_argument("--out-dir", default=d(None), help="directory for run outputs")
        f.add_argument("--json", action="store_true", default=d(False), help="machine-readable JSON on stdout")
        f.add_argument("--force", action="store_true", default=d(False), help="overwrite existing outputs")
        f.add_argument("-v", "--verbose", action="store_true", default=d(False), help="log progress to stderr")
        return f

    common = flags(True)
    p = argparse.ArgumentParser(prog="abdlearn", description=__doc__.splitlines()[0], parents=[flags(False)])
    p.add_argument("--version", action="version", version=f"abdlearn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a scenario dataset (JSONL)")
    g.add_argument("--scenario", required=True, help=f"one of {', '.join(SCENARIO_IDS)}, optionally with (n)")
    g.add_argument("--n", type=int)
    g.add_argument("--count", type=int, default=3000)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--out", help="output path (default: <scenario>-<count>-<seed>.jsonl)")
    g.add_argument("--full", action="store_true", help="store pixels instead of glyph ids")
    g.add_argument("--idx-images", help="IDX image file whose digits replace the synthetic glyphs")
    g.add_argument("--idx-labels", help="IDX label file matching --idx-images")
    g.set_defaults(func=cmd_gen_data, seed_default=0)

    for name, func, helptext in (("train", cmd_train, "train a model"), ("eval", cmd_eval, "evaluate a checkpoint")):
        t = sub.add_parser(name, parents=[common], help=helptext)
        t.add_argument("--scenario")
        t.add_argument("--n", type=int)
        t.add_argument("--mode", choices=("basic", "isk", "nga"))
        t.add_argument("--epochs", type=int)
        t.add_argument("--dataset", help="training set JSONL")
        t.add_argument("--test-dataset", dest="test_dataset", help="held-out set JSONL")
        if name == "eval":
            t.add_argument("--checkpoint", required=True)
        t.set_defaults(func=func)

    a = sub.add_parser("abduce", parents=[common], help="print the abductive feedback for an outcome")
    a.add_argument("--theory", help="theory source file")
    a.add_argument("--scenario")
    a.add_argument("--n", type=int)
    a.add_argument("--target", required=True, help="outcome atoms, comma separated (e.g. 'sum(3)')")
    a.add_argument("--facts", action="append", help="symbolic input facts, e.g. 'q(3)'")
    a.add_argument("--side-info", dest="side_info", action="append", help="side-information facts")
    a.add_argument("--prediction", help="argmax assignment for guided abduction (slot=value,... or JSON)")
    a.add_argument("--cost", choices=("hamming", "tiered"))
    a.add_argument("--budget", type=int, default=10**8)
    a.add_argument("--limit", type=int, default=20, help="proofs shown in text mode")
    a.add_argument("--out", help="also write the feedback JSON here")
    a.set_defaults(func=cmd_abduce)

    w = sub.add_parser("wmc", parents=[common], help="WMC, loss and gradient of a feedback formula")
    w.add_argument("--formula", required=True)
    w.add_argument("--weights", required=True, help="JSON map slot -> weights, or a flat list")
    w.add_argument("--log-space", action="store_true")
    w.add_argument("--dump-circuit", action="store_true")
    w.set_defaults(func=cmd_wmc)

    c = sub.add_parser("compile-theory", parents=[common], help="ground a theory and print its summary")
    c.add_argument("--theory")
    c.add_argument("--scenario")
    c.add_argument("--n", type=int)
    c.add_argument("--facts", action="append")
    c.add_argument("--out", help="write the ground rules here")
    c.set_defaults(func=cmd_compile_theory)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed_default", None) is not None and args.seed is None:
        args.seed = args.seed_default
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, UnknownScenarioError, ConfigError) as exc:
        print(f"abdlearn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TheoryError, AbductionError, CircuitError) as exc:
        print(f"abdlearn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
