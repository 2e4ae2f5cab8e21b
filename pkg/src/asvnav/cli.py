"""Command-line entry point: train, eval, simulate and plot."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .experiments import (POLICIES, SUITES, ExperimentConfig, export_trajectories, load_world, make_policy,
                          metrics_document, run_experiment_suite, write_scenarios, compute_metrics)
from .plotting import plot_metrics, render_svg
from .rollout import run_episode
from .training import TrainConfig, train

log = logging.getLogger("asvnav")


def _write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> None:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    _, eval_log = train(config, out_dir=args.out)
    _write_json({"config": config.__dict__, "evaluations": eval_log}, os.path.join(args.out, "metrics.json"))
    print(f"final checkpoint: {os.path.join(args.out, 'final.json')}")


def cmd_eval(args) -> None:
    config = ExperimentConfig(suite=args.suite, episodes_per_level=args.episodes_per_level, policy=args.policy,
                              seed=args.seed, timeout=args.timeout, adaptive_d0=args.d0)
    summary, records = run_experiment_suite(config, model_path=args.model)
    os.makedirs(args.out, exist_ok=True)
    doc = metrics_document(summary, config)
    _write_json(doc, os.path.join(args.out, "metrics.json"))
    export_trajectories(records, os.path.join(args.out, "trajectories.csv"))
    write_scenarios(records, os.path.join(args.out, "scenarios.jsonl"))
    plot_metrics(doc, os.path.join(args.out, "metrics.svg"))
    for rec in records[:args.render]:
        render_svg(rec, os.path.join(args.out, f"episode_{rec.episode_id}.svg"))
    for m in summary.levels:
        print(f"robots={m.level} success={m.success_rate:.2f} episodes={m.episodes}")


def cmd_simulate(args) -> None:
    world = load_world(args.scenario)
    policy = make_policy(args.policy, args.model, args.d0)
    max_steps = int(round(args.timeout / world.params.dt))
    record = run_episode(world, policy, max_steps, np.random.default_rng(args.seed), 0,
                         len(world.robots), args.policy)
    os.makedirs(args.out, exist_ok=True)
    export_trajectories(record, os.path.join(args.out, "trajectory.csv"))
    render_svg(record, os.path.join(args.out, "trajectory.svg"))
    summary = compute_metrics([record])
    _write_json({"outcomes": record.outcomes, "success": record.success, **summary.to_dict()},
                os.path.join(args.out, "metrics.json"))
    print(f"outcomes: {', '.join(record.outcomes)}")


def cmd_plot(args) -> None:
    docs = []
    for path in args.metrics:
        with open(path) as fh:
            docs.append(json.load(fh))
    plot_metrics(docs, args.out, labels=args.labels)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asvnav", description="Multi-robot navigation in vortical flows.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a shared IQN or DQN model")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation suite")
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--model", help="checkpoint for learned policies")
    p.add_argument("--suite", choices=SUITES, default="dynamic")
    p.add_argument("--episodes-per-level", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=180.0, help="simulated seconds per episode")
    p.add_argument("--d0", type=float, default=10.0, help="adaptive risk distance scale")
    p.add_argument("--render", type=int, default=0, metavar="N", help="write SVGs of the first N episodes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="replay one scenario and render it")
    p.add_argument("--scenario", required=True, help="world JSON")
    p.add_argument("--policy", choices=POLICIES, required=True)
    p.add_argument("--model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=180.0)
    p.add_argument("--d0", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot", help="plot one or more metrics files")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # report any failure through the exit code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
