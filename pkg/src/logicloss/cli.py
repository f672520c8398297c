"""``logicloss`` command line.

Exit codes: 0 success, 1 data or validation error, 2 usage error.
Every flag can also come from an environment variable ``LOGICLOSS_<FLAG>``
(dashes become underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import fol
from .batcher import (ValidationError, PoolTooSmall, batch_stats, build_hybrid_batches, group_families,
                      read_records, validate_records, write_batches, write_records)
from .compiler import (SampleOutputs, compile_formula, family_pairs, pair_loss_expr, total_loss,
                       truth_degree)
from .kb import KB_DIR, DataFileCorrupt, load_kb
from .metrics import (DanglingEntailedId, EmptyInput, MissingPrediction, evaluate, format_table,
                      read_predictions, write_predictions)
from .synthetic import SyntheticConfig, answer_vocabulary, generate_synthetic
from .tnorms import DomainError, UnsupportedConnective, semantics_from_name
from .trainer import (NonFiniteLoss, ShapeMismatch, TrainConfig, load_checkpoint, predict, save_checkpoint,
                      train, write_curves)

ENV_PREFIX = "LOGICLOSS_"
DATA_ERRORS = (OSError, ValueError, KeyError, IndexError, json.JSONDecodeError, fol.FOLError, DataFileCorrupt,
               ValidationError, PoolTooSmall, MissingPrediction, DanglingEntailedId, EmptyInput,
               NonFiniteLoss, ShapeMismatch, UnsupportedConnective, DomainError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _kb_path(text: str) -> Path:
    p = Path(text)
    if not p.exists() and (KB_DIR.parent / p).exists():
        p = KB_DIR.parent / p  # "kb/..." relative to the installed package
    return p


def _semantics(args):
    return semantics_from_name(args.semantics, args.lam)


def _add_semantics(p, default="product"):
    p.add_argument("--semantics", default=default, choices=["godel", "lukasiewicz", "product", "ss", "frank"])
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="family parameter for ss/frank")


def _add_kb(p):
    p.add_argument("--kb", type=_kb_path, default=KB_DIR, help="KB directory or rules file")


# ------------------------------------------------------------------ commands


def cmd_compile(args) -> int:
    kb = load_kb(args.kb)
    gen = _semantics(args).generator()
    if args.formula:
        formulas = [("formula", fol.parse_formula(args.formula, kb.task_names))]
    else:
        formulas = [(r.name, r.formula) for r in kb.formulas]
    for name, f in formulas:
        c = compile_formula(f, gen, args.samples)
        print(json.dumps({"rule": name, "formula": fol.render(f), "loss": ad.to_prefix(c.expr, args.max_len),
                          "inputs": {k: list(v) for k, v in c.schema.items()}}))
    if args.pair_loss:
        e = pair_loss_expr(kb, gen, not args.no_task_antecedent)
        print(json.dumps({"rule": "pair_loss", "loss": ad.to_prefix(e, args.max_len), "inputs": ad.inputs_of(e)}))
    return 0


def _samples_from(binding: dict, task_names) -> list[SampleOutputs]:
    index = {n: i for i, n in enumerate(task_names)}
    out = []
    for s in binding["samples"]:
        tp = s["task_probs"]
        if isinstance(tp, dict):
            vec = np.zeros(len(task_names))
            for k, v in tp.items():
                vec[index[k]] = v
            tp = vec
        gt = s["gold_task"]
        out.append(SampleOutputs(np.asarray(s["answer_probs"], float), np.asarray(tp, float), int(s["gold_answer"]),
                                 index[gt] if isinstance(gt, str) else int(gt)))
    return out


def cmd_eval(args) -> int:
    kb = load_kb(args.kb)
    binding = json.loads(Path(args.binding).read_text(encoding="utf-8"))
    samples = _samples_from(binding, kb.task_names)
    sem = _semantics(args)
    f = fol.parse_formula(args.formula, kb.task_names)
    out = {"truth": truth_degree(f, samples, sem, kb.task_names)}
    if sem.has_generator:
        try:
            out["loss"] = compile_formula(f, sem, len(samples)).evaluate(samples, kb.task_names)
        except UnsupportedConnective as exc:
            out["loss"] = None
            out["note"] = str(exc)
    print(json.dumps(out))
    return 0


def cmd_grad_check(args) -> int:
    kb = load_kb(args.kb)
    gen = _semantics(args).generator()
    rng = np.random.default_rng(args.seed)
    reports = []
    tries = 0
    while len(reports) < args.points and tries < 20 * args.points:
        tries += 1
        batch = []
        for _ in range(args.batch):
            a = rng.dirichlet(np.ones(args.answers))
            t = rng.dirichlet(np.ones(len(kb.task_names)))
            batch.append(SampleOutputs(a, t, int(rng.integers(args.answers)), int(rng.integers(len(kb.task_names)))))
        g = total_loss(batch, family_pairs(min(args.family, args.batch)), kb, gen, args.beta)
        report = ad.finite_diff_check(g.expr, g.inputs, tol=args.tol)
        if not report.near_kink:
            reports.append(report)
    passed = sum(r.passed for r in reports)
    worst = max(reports, key=lambda r: r.max_rel_error, default=None)
    print(json.dumps({"points": len(reports), "passed": passed,
                      "max_rel_error": worst.max_rel_error if worst else 0.0,
                      "worst": worst.to_dict() if worst else None}))
    return 0 if reports and passed == len(reports) else 1


def cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(image_noise=args.image_noise, question_noise=args.question_noise,
                          scale=args.scale, fusion=not args.no_fusion)
    records = generate_synthetic(args.images, args.seed, cfg)
    write_records(records, args.out)
    print(json.dumps({"records": len(records), "images": args.images, "out": str(args.out)}))
    return 0


def cmd_batch(args) -> int:
    records = read_records(args.input)
    validate_records(records, vocabulary=load_kb(args.kb).task_names)
    batches = build_hybrid_batches(group_families(records), records, args.batch_size, args.seed)
    write_batches(batches, args.out)
    print(json.dumps(batch_stats(batches).to_dict()))
    return 0


def cmd_train(args) -> int:
    records = read_records(args.data)
    kb = load_kb(args.kb)
    cfg = TrainConfig(mode=args.mode, beta=args.beta, semantics=args.semantics, lam=args.lam, lr=args.lr,
                      epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, hidden=args.hidden,
                      duo_task=args.duo_task, include_task_antecedent=not args.no_task_antecedent)
    answers = sorted({r.gold_answer for r in records} | set(answer_vocabulary()))
    result = train(cfg, records, kb, answers=answers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_curves(result.curves, out / "curves.csv")
    save_checkpoint(result.params, out / "model.json", cfg)
    last = result.curves[-1] if result.curves else {}
    print(json.dumps({"config": asdict(cfg), "final": last, "curves": str(out / "curves.csv"),
                      "model": str(out / "model.json")}, default=float))
    return 0


def cmd_predict(args) -> int:
    params = load_checkpoint(args.model)
    rows = predict(params, read_records(args.input), with_probs=args.with_probs)
    write_predictions(rows, args.out)
    print(json.dumps({"predictions": len(rows), "out": str(args.out)}))
    return 0


def cmd_evaluate(args) -> int:
    pred = read_predictions(args.pred)
    gold = read_records(args.gold)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = evaluate(pred, gold, load_kb(args.kb))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    print(format_table({args.label: report}))
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="logicloss", description="Compile consistency rules into t-norm losses and train with them.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compile", help="print compiled rule losses (prefix notation) and input schemas")
    _add_kb(p)
    _add_semantics(p)
    p.add_argument("--formula", help="compile this formula instead of the KB rules")
    p.add_argument("--samples", type=int, default=2, help="samples each quantifier ranges over")
    p.add_argument("--pair-loss", action="store_true", help="also print the pairwise consistency loss")
    p.add_argument("--no-task-antecedent", action="store_true")
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("eval", help="truth degree and loss of a formula on a JSON binding")
    _add_kb(p)
    _add_semantics(p)
    p.add_argument("--formula", required=True)
    p.add_argument("--binding", required=True, help='JSON {"samples": [{answer_probs, task_probs, gold_answer, gold_task}]}')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of the total loss at random points")
    _add_kb(p)
    _add_semantics(p)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--family", type=int, default=3)
    p.add_argument("--answers", type=int, default=5)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("gen-data", help="write a synthetic question set as JSON lines")
    p.add_argument("--images", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-noise", type=float, default=SyntheticConfig.image_noise)
    p.add_argument("--question-noise", type=float, default=SyntheticConfig.question_noise)
    p.add_argument("--scale", type=float, default=SyntheticConfig.scale)
    p.add_argument("--no-fusion", action="store_true", help="omit slot-times-image features")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("batch", help="group families and write hybrid batches")
    _add_kb(p)
    p.add_argument("--input", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("train", help="train the two-head classifier; writes curves.csv and model.json")
    _add_kb(p)
    _add_semantics(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["original", "hybrid", "logic"], default="logic")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--duo-task", action="store_true", help="hybrid mode also trains the task head")
    p.add_argument("--no-task-antecedent", action="store_true")
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="argmax answers and tasks for a record file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--with-probs", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy, consistency and distribution of a prediction file")
    _add_kb(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--label", default="model")
    p.add_argument("--json", help="also write the report as JSON here")
    p.set_defaults(func=cmd_evaluate)

    for action in sub.choices.values():
        _env_defaults(action)
    return parser


def _env_defaults(p: argparse.ArgumentParser) -> None:
    for action in p._actions:
        if not action.option_strings or action.dest == "help":
            continue
        raw = os.environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            action.default = raw  # argparse converts string defaults with action.type
            action.required = False


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BrokenPipeError:
        sys.stdout = open(os.devnull, "w")  # reader went away, e.g. piped into head
        return 0
    except DATA_ERRORS as exc:
        msg = f"{exc.strerror}: {exc.filename}" if isinstance(exc, OSError) and exc.filename else str(exc)
        print(f"logicloss {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    code = run()
    try:
        sys.stdout.flush()
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    sys.exit(code)


if __name__ == "__main__":
    main()
