"""Command-line entry points: generate instances and data, train, verify, sweep."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datagen import MODES, REGIMES, BehaviorSpec, make_behavior, sample_dataset, save_dataset, load_dataset
from .decmdp import DecMdp
from .generators import random_mdp
from .harness import (
    KNOWN_ALGOS,
    ExperimentConfig,
    default_benchmark_config,
    load_train_log,
    report_uncertainty,
    report_weights,
    run_experiment,
)
from .learners import LearnerConfig, train_icql_qs, train_joint_cql_baseline, train_spacql
from .tasks import TASK_BUILDERS, task_mdp
from .theory import verify_theory


def _load_mdp(args) -> DecMdp:
    if getattr(args, "task", None):
        return task_mdp(args.task)
    with open(args.mdp) as fh:
        return DecMdp.from_json(json.load(fh))


def _cmd_gen_mdp(args) -> int:
    if args.task:
        mdp = task_mdp(args.task)
    else:
        rng = np.random.default_rng(args.seed)
        mdp = random_mdp(rng, args.states, args.actions, args.gamma, name="random")
    doc = mdp.to_json()
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
    else:
        json.dump(doc, sys.stdout, sort_keys=True, separators=(",", ":"))
        sys.stdout.write("\n")
    print(f"mdp hash: {mdp.content_hash()}", file=sys.stderr)
    return 0


def _cmd_gen_dataset(args) -> int:
    mdp = _load_mdp(args)
    spec = BehaviorSpec(args.regime, epsilon=args.epsilon, rho=args.rho, seed=args.seed)
    behavior = make_behavior(mdp, spec)
    ds = sample_dataset(mdp, behavior, args.size, mode=args.mode, seed=args.seed,
                        behavior_spec=spec)
    save_dataset(ds, args.out)
    print(f"wrote {ds.size} records to {args.out} (mdp {ds.mdp_hash[:12]}...)",
          file=sys.stderr)
    return 0


_TRAIN_OVERRIDES = (
    "ensemble_size", "alpha", "icql_lambda", "tau", "lr_q", "lr_pi",
    "batch_size", "steps", "u_min", "temperature", "seed", "eval_every",
)


def _cmd_train(args) -> int:
    mdp = _load_mdp(args) if (args.mdp or args.task) else None
    ds = load_dataset(args.data, mdp)
    overrides = {
        name: getattr(args, name) for name in _TRAIN_OVERRIDES
        if getattr(args, name) is not None
    }
    config = LearnerConfig(**overrides)
    trainer = {
        "spacql": train_spacql,
        "icql-qs": train_icql_qs,
        "jointcql": train_joint_cql_baseline,
    }[args.algo]
    _, policies, log = trainer(ds, config, mdp)
    if args.log_out:
        log.to_jsonl(args.log_out, header={"algo": args.algo, "data": str(args.data)})
        print(f"wrote training log to {args.log_out}", file=sys.stderr)
    if log.steps:
        last = {
            "algo": args.algo,
            "steps": log.steps,
            "final_td": float(log.td[-1]),
            "final_k_eff": float(log.k_eff[-1]),
        }
        if mdp is not None and not np.isnan(log.value[-1]):
            last["value"] = float(log.value[-1])
            if not np.isnan(log.score[-1]):
                last["score"] = float(log.score[-1])
        print(json.dumps(last, sort_keys=True))
    return 0


def _cmd_verify_theory(args) -> int:
    summary = verify_theory(args.suite, args.instances, args.seed, args.out)
    print(json.dumps(summary, sort_keys=True))
    return 0 if summary["ok"] else 1


def _cmd_run(args) -> int:
    if args.benchmark:
        config = default_benchmark_config(args.out_dir or "parlab_out")
    else:
        config = ExperimentConfig.from_file(args.config)
    table = run_experiment(config, out_dir=args.out_dir)
    sys.stdout.write(table.to_markdown())
    return 0


def _cmd_report(args) -> int:
    logs = {Path(p).stem: load_train_log(p) for p in args.logs}
    if args.kind == "weights":
        if len(logs) != 1:
            raise SystemExit("weights report takes exactly one log")
        (name, log), = logs.items()
        series = report_weights(log)
        cols = ["step"] + [k for k in series if k != "step"]
    else:
        out = report_uncertainty(logs)
        series = {"step": out["step"], **out["series"]}
        cols = ["step"] + sorted(out["series"])
        if out["resampled"]:
            print("# note: step grids differed; resampled to the coarsest grid",
                  file=sys.stderr)
    lines = [",".join(cols)]
    length = len(series["step"])
    for t in range(length):
        row = []
        for c in cols:
            v = series[c][t]
            row.append(str(int(v)) if c == "step" else repr(float(v)))
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parlab",
        description="Exact desk-scale laboratory for offline multi-agent "
                    "Q-learning with partial action replacement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mdp", help="write a built-in or random mdp as JSON")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--task", choices=sorted(TASK_BUILDERS))
    group.add_argument("--random", action="store_true")
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--actions", type=int, nargs="+", default=[2, 2],
                   help="per-agent action counts")
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gen_mdp)

    p = sub.add_parser("gen-dataset", help="sample an offline dataset from a behavior regime")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--task", choices=sorted(TASK_BUILDERS))
    group.add_argument("--mdp", help="mdp JSON file")
    p.add_argument("--regime", choices=REGIMES, default="random")
    p.add_argument("--size", type=int, default=400)
    p.add_argument("--mode", choices=MODES, default="trajectory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("train", help="train one learner on a saved dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--algo", choices=KNOWN_ALGOS, required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--task", choices=sorted(TASK_BUILDERS))
    group.add_argument("--mdp", help="mdp JSON file (enables exact evaluation)")
    for name in _TRAIN_OVERRIDES:
        kind = int if name in ("ensemble_size", "batch_size", "steps", "seed",
                               "eval_every") else float
        p.add_argument(f"--{name.replace('_', '-')}", type=kind, default=None,
                       dest=name)
    p.add_argument("--log-out", dest="log_out")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("verify-theory", help="run a brute-force verification suite")
    p.add_argument("--suite", choices=["lemmas", "bounds", "gradients", "all"],
                   default="all")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="JSONL report path")
    p.set_defaults(func=_cmd_verify_theory)

    p = sub.add_parser("run", help="execute an experiment sweep")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="ExperimentConfig JSON file")
    group.add_argument("--benchmark", action="store_true",
                       help="use the default benchmark sweep")
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="plot-ready CSV from saved training logs")
    p.add_argument("--kind", choices=["weights", "uncertainty"], required=True)
    p.add_argument("--logs", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
