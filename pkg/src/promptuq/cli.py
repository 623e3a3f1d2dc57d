"""Command-line entry points.

Subcommands: task, tune, predict, eval, compare, lower-bound, serve.
Exit codes: 0 success, 2 config error, 3 budget or stagnation, 4 simulator
or protocol error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import estimators, predictive, uqeval
from .blackbox import make_synthetic_task, task_config_from_dict, task_config_to_dict
from .errors import (AccessDeniedError, BudgetExhaustedError, ConfigError,
                     ProtocolError, StagnationError)
from .experiment import (compare_methods, experiment_config_from_dict,
                         run_experiment)
from .prompt_space import sample_prior
from .protocol import serve_stdio, serve_tcp


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("config", f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from exc


def _load_task(path):
    try:
        return task_config_from_dict(_load_json(path))
    except (TypeError, ValueError) as exc:
        raise ConfigError("task", str(exc)) from exc


def _split_inputs(task, name: str):
    if name == "train":
        return task.train.X
    if name == "test":
        return task.test.X
    if name == "near_ood":
        return task.near_ood
    if name == "far_ood":
        return task.far_ood
    raise ConfigError("split", f"unknown split {name!r}")


def cmd_task(args) -> int:
    cfg = _load_task(args.config)
    task = make_synthetic_task(cfg)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "task.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(task_config_to_dict(cfg), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path}")
    if args.inspect:
        sim = task.simulator()
        rng = np.random.default_rng(cfg.seed)
        chance = np.mean([
            np.mean(sim.query_labels(z, task.train.X) != task.train.y)
            for z in sample_prior(task.prior, 20, rng)])
        print(f"train: {len(task.train)} items, "
              f"class counts {np.bincount(task.train.y, minlength=cfg.classes).tolist()}")
        print(f"test:  {len(task.test)} items, "
              f"class counts {np.bincount(task.test.y, minlength=cfg.classes).tolist()}")
        print(f"ood:   {len(task.near_ood)} near + {len(task.far_ood)} far inputs")
        print(f"mean train error of 20 prior draws: {chance:.4f}")
    return 0


def cmd_tune(args) -> int:
    payload = _load_json(args.config)
    if args.seed is not None:
        payload["seed"] = args.seed
    config = experiment_config_from_dict(payload)
    out_dir = args.out or payload.get("out") or "out"
    report = run_experiment(config, out_dir, trace=args.trace)
    print(f"wrote {report.files['summary']}")
    for key in ("accuracy", "ece"):
        if key in report.summary:
            print(f"{key}: {report.summary[key]:.4f}")
    print(f"simulator calls: {report.summary['simulator_calls']}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_task(args.task)
    task = make_synthetic_task(cfg)
    ensemble = estimators.load_ensemble(args.posterior)
    sim = task.simulator(allow_logits=(args.mode == "logits"))
    inputs = _split_inputs(task, args.split)
    if args.mode == "logits":
        table = predictive.predictive_from_logits(ensemble, sim, inputs)
    else:
        rng = (np.random.default_rng(args.seed)
               if args.decode == "sample" else None)
        table = predictive.predictive_from_labels(ensemble, sim, inputs,
                                                  decode=args.decode, rng=rng)
    predictive.save_predictive_csv(table, args.out)
    print(f"wrote {args.out} ({len(table.probs)} rows, {table.classes} classes)")
    return 0


def cmd_eval(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    summary = {}
    if args.pred_ood:
        id_table = predictive.load_predictive_csv(args.pred)
        ood_table = predictive.load_predictive_csv(args.pred_ood)
        for score in uqeval.SCORES:
            report = uqeval.ood_detection_eval(id_table.probs, ood_table.probs, score)
            summary[f"aurrrc_{score}"] = report.aurrrc
            summary["lower_bound"] = report.lower_bound
            uqeval.save_curve_csv(report.curve,
                                  os.path.join(args.out, f"curve_ood_{score}.csv"))
    else:
        if not args.task:
            raise ConfigError("task", "selective evaluation needs --task for labels")
        task = make_synthetic_task(_load_task(args.task))
        labels = task.test.y if args.split == "test" else task.train.y
        table = predictive.load_predictive_csv(args.pred)
        for score in uqeval.SCORES:
            report = uqeval.selective_classification_eval(table.probs, labels, score)
            summary[f"aurrrc_{score}"] = report.aurrrc
            summary["lower_bound"] = report.lower_bound
            summary["accuracy"] = report.accuracy
            summary["ece"] = report.ece
            uqeval.save_curve_csv(
                report.curve, os.path.join(args.out, f"curve_selective_{score}.csv"))
    path = os.path.join(args.out, "eval.json")
    uqeval.save_summary_json(summary, path)
    print(f"wrote {path}")
    for key, value in sorted(summary.items()):
        print(f"{key}: {value:.6f}")
    return 0


def cmd_compare(args) -> int:
    payload = _load_json(args.config)
    for key in ("task", "seed", "methods"):
        if key not in payload:
            raise ConfigError(key, "missing required field")
    if args.seed is not None:
        payload["seed"] = args.seed
    configs = []
    for spec in payload["methods"]:
        entry = {"task": payload["task"], "seed": payload["seed"],
                 "method": spec.get("method"), "params": spec.get("params", {})}
        if "evaluation" in payload:
            entry["evaluation"] = payload["evaluation"]
        if "predictive_mode" in spec:
            entry["predictive_mode"] = spec["predictive_mode"]
        configs.append(experiment_config_from_dict(entry))
    out_dir = args.out or "compare_out"
    rows = compare_methods(configs, out_dir, trace=args.trace)
    headers = list(rows[0].keys())
    print("\t".join(headers))
    for row in rows:
        print("\t".join("" if row[h] is None
                        else f"{row[h]:.4f}" if isinstance(row[h], float)
                        else str(row[h]) for h in headers))
    return 0


def cmd_lower_bound(args) -> int:
    if args.flags:
        with open(args.flags, encoding="utf-8") as fh:
            flags = np.array([bool(int(line.strip())) for line in fh if line.strip()])
    elif args.n_id is not None and args.n_ood is not None:
        flags = np.concatenate([np.zeros(args.n_id, dtype=bool),
                                np.ones(args.n_ood, dtype=bool)])
    else:
        raise ConfigError("flags", "need --flags FILE or --n-id N --n-ood M")
    value = uqeval.oracle_lower_bound(flags)
    if args.out:
        curve = uqeval.risk_rejection_curve(np.where(flags, 100.0, 0.0), flags)
        uqeval.save_curve_csv(curve, args.out)
        print(f"wrote {args.out}")
    print(f"lower bound: {value:.6f}")
    return 0


def cmd_serve(args) -> int:
    task = make_synthetic_task(_load_task(args.task))
    sim = task.simulator(allow_logits=not args.labels_only)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        serve_tcp(sim, host or "127.0.0.1", int(port))
    else:
        serve_stdio(sim)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptuq",
        description="Posterior inference over black-box prompt parameters "
                    "and uncertainty evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("task", help="generate or inspect a synthetic task")
    p.add_argument("--config", required=True, help="task config JSON")
    p.add_argument("--out", help="directory for task.json")
    p.add_argument("--inspect", action="store_true")
    p.set_defaults(func=cmd_task)

    p = sub.add_parser("tune", help="run one inference method end to end")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trace", action="store_true", help="write trace.csv")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("predict", help="predictive table from a saved posterior")
    p.add_argument("--task", required=True, help="task config JSON")
    p.add_argument("--posterior", required=True, help="posterior NDJSON")
    p.add_argument("--split", default="test",
                   choices=["train", "test", "near_ood", "far_ood"])
    p.add_argument("--mode", default="logits", choices=["logits", "labels"])
    p.add_argument("--decode", default="argmax", choices=["argmax", "sample"])
    p.add_argument("--seed", type=int, default=0, help="seed for sample decode")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="metrics from predictive CSVs")
    p.add_argument("--pred", required=True, help="predictive CSV (ID rows)")
    p.add_argument("--pred-ood", help="predictive CSV of OOD rows (OOD evaluation)")
    p.add_argument("--task", help="task config JSON (labels for selective eval)")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run several methods on one task")
    p.add_argument("--config", required=True, help="comparison config JSON")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("lower-bound", help="oracle risk-rejection lower bound")
    p.add_argument("--flags", help="file with one 0/1 flag per line")
    p.add_argument("--n-id", type=int, help="count of in-distribution items")
    p.add_argument("--n-ood", type=int, help="count of OOD items")
    p.add_argument("--out", help="optional curve CSV")
    p.set_defaults(func=cmd_lower_bound)

    p = sub.add_parser("serve", help="serve the built-in simulator over the protocol")
    p.add_argument("--task", required=True, help="task config JSON")
    p.add_argument("--labels-only", action="store_true")
    p.add_argument("--tcp", help="HOST:PORT to serve over TCP instead of stdio")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BudgetExhaustedError, StagnationError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 3
    except (ProtocolError, AccessDeniedError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
