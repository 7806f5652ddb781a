"""Command-line interface.

Exit codes: 0 success, 2 no plan found, 3 invalid input, 4 budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from . import __version__
from .a3c import (
    Hyperparameters,
    NoPlanFoundError,
    load_policy_checkpoint,
    save_policy_checkpoint,
    train,
)
from .encoding import bounding_box_for
from .expert import generate_dataset, load_dataset, save_dataset
from .lattice import config_from_dict, load_configuration, validate
from .pipeline import (
    PipelineError,
    PipelineOptions,
    UnreachablePickError,
    execute_plan,
    export_scene,
    export_trace,
    load_trace,
    plan_reconfiguration,
)

EXIT_OK = 0
EXIT_NO_PLAN = 2
EXIT_INVALID_INPUT = 3
EXIT_BUDGET = 4


def _load_config(path):
    try:
        config = load_configuration(path)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: cannot read configuration {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_INPUT)
    result = validate(config)
    if not result.ok:
        print(f"error: invalid configuration {path}: {result.violation} "
              f"(modules {list(result.module_ids)})", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_INPUT)
    return config


def cmd_check(args) -> int:
    try:
        config = load_configuration(args.config)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    result = validate(config)
    if result.ok:
        print(f"ok: {len(config.modules)} modules, anchor {config.anchor_id}")
        return EXIT_OK
    print(f"violation: {result.violation} (modules {list(result.module_ids)})")
    return EXIT_INVALID_INPUT


def cmd_gen_expert(args) -> int:
    target = _load_config(args.target)
    trajectories = generate_dataset(
        target, args.count, (args.f_min, args.f_max), args.seed
    )
    save_dataset(trajectories, args.out)
    total = sum(len(t) for t in trajectories)
    print(f"wrote {len(trajectories)} trajectories ({total} transitions) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    target = _load_config(args.target)
    if args.expert:
        trajectories = load_dataset(args.expert)
    else:
        trajectories = generate_dataset(
            target, args.expert_count, (args.f_min, args.f_max), args.seed
        )
    if args.start:
        starts = [_load_config(p) for p in args.start]
    else:
        starts = [t.start for t in trajectories]
    hyper = Hyperparameters(
        workers=args.workers,
        total_steps=args.steps,
        t_max=args.t_max,
        lr_actor=args.lr_actor,
        lr_critic=args.lr_critic,
        imitation_weight=args.imitation_weight,
        entropy_beta=args.entropy_beta,
    )
    box = bounding_box_for([target] + starts, margin=args.box_margin)
    result = train(
        starts, target, hyper, args.seed, trajectories,
        box=box,
        pretrain_epochs=args.pretrain_epochs,
        pretrain_lr=args.pretrain_lr,
        use_discriminator=not args.no_discriminator,
        metrics_path=args.metrics,
        budget_seconds=args.budget_seconds,
    )
    if args.out:
        save_policy_checkpoint(result.shared, args.out, result.discriminator)
        print(f"checkpoint written to {args.out}")
    if args.metrics:
        print(f"metrics written to {args.metrics}")
    print(f"episodes={result.episodes} steps={result.global_steps}")
    if result.aborted:
        print("training aborted: budget exceeded", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def _plan_actions(args, start, target):
    net = None
    if args.ckpt:
        shared, _ = load_policy_checkpoint(args.ckpt)
        net = shared.net
    options = PipelineOptions(planner=args.planner, max_steps=args.max_steps,
                              seed=args.seed)
    return plan_reconfiguration(start, target, options, net=net)


def cmd_plan(args) -> int:
    start = _load_config(args.config)
    target = _load_config(args.target)
    t0 = time.monotonic()
    try:
        plan = _plan_actions(args, start, target)
    except NoPlanFoundError as exc:
        print(f"no plan: best mismatch {exc.best_mismatch}", file=sys.stderr)
        return EXIT_NO_PLAN
    except (UnreachablePickError, PipelineError) as exc:
        print(f"no plan: {exc}", file=sys.stderr)
        return EXIT_NO_PLAN
    if args.budget_seconds and time.monotonic() - t0 > args.budget_seconds:
        print("budget exceeded", file=sys.stderr)
        return EXIT_BUDGET
    payload = {
        "format_version": 1,
        "planner": plan.planner,
        "used_fallback": plan.used_fallback,
        "actions": [
            {"mover": s.action.mover, "anchor": s.action.anchor,
             "face": s.action.face, "new_orient": list(s.action.new_orient)}
            for s in plan.steps
        ],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"plan with {len(plan.steps)} steps written to {args.out} "
              f"(planner={plan.planner})")
    else:
        print(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    start = _load_config(args.config)
    target = _load_config(args.target)
    t0 = time.monotonic()
    try:
        plan = _plan_actions(args, start, target)
        options = PipelineOptions(planner=args.planner, max_steps=args.max_steps,
                                  seed=args.seed, dt=args.dt)
        trace = execute_plan(start, plan, options)
    except NoPlanFoundError as exc:
        print(f"no plan: best mismatch {exc.best_mismatch}", file=sys.stderr)
        return EXIT_NO_PLAN
    except (UnreachablePickError, PipelineError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_NO_PLAN
    if args.budget_seconds and time.monotonic() - t0 > args.budget_seconds:
        print("budget exceeded", file=sys.stderr)
        return EXIT_BUDGET
    export_trace(trace, args.out)
    print(f"trace with {len(trace.frames)} frames written to {args.out} "
          f"(planner={plan.planner}, fallback={plan.used_fallback})")
    return EXIT_OK


def cmd_export(args) -> int:
    if args.trace:
        trace = load_trace(args.trace)
        final = trace.frames[-1]
        modules = [
            {"id": m["id"], "pos": [int(round(v)) for v in m["pos"]],
             "orient": m["orient"], "function": ""}
            for m in final["modules"]
        ]
        config = config_from_dict({
            "anchor_id": trace.header["start"]["anchor_id"],
            "modules": modules,
        })
    else:
        config = _load_config(args.config)
    export_scene(config, args.out, mesh_path=args.mesh)
    written = [args.out] + ([args.mesh] if args.mesh else [])
    print("wrote " + ", ".join(str(w) for w in written))
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_trace_report, render_training_report

    written: list[str] = []
    if args.metrics:
        written += render_training_report(args.metrics, args.out)
    if args.trace:
        written += render_trace_report(load_trace(args.trace), args.out)
    if not written:
        print("error: provide --metrics and/or --trace", file=sys.stderr)
        return EXIT_INVALID_INPUT
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modrecon",
        description="Lattice-modular spacecraft reconfiguration planner",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a configuration file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen-expert", help="generate expert trajectories")
    p.add_argument("--target", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--f-min", type=int, default=1)
    p.add_argument("--f-max", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_expert)

    p = sub.add_parser("train", help="train the handling policy")
    p.add_argument("--target", required=True)
    p.add_argument("--start", action="append", default=[],
                   help="start configuration file (repeatable)")
    p.add_argument("--expert", help="expert dataset (JSONL); generated if omitted")
    p.add_argument("--expert-count", type=int, default=200)
    p.add_argument("--f-min", type=int, default=1)
    p.add_argument("--f-max", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--t-max", type=int, default=24)
    p.add_argument("--lr-actor", type=float, default=1e-3)
    p.add_argument("--lr-critic", type=float, default=2e-3)
    p.add_argument("--imitation-weight", type=float, default=0.3)
    p.add_argument("--entropy-beta", type=float, default=0.003)
    p.add_argument("--pretrain-epochs", type=int, default=20)
    p.add_argument("--pretrain-lr", type=float, default=1e-2)
    p.add_argument("--box-margin", type=int, default=2)
    p.add_argument("--no-discriminator", action="store_true")
    p.add_argument("--metrics", help="metrics CSV path")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--budget-seconds", type=float)
    p.set_defaults(func=cmd_train)

    for name, func in (("plan", cmd_plan), ("simulate", cmd_simulate)):
        p = sub.add_parser(name, help=f"{name} a reconfiguration")
        p.add_argument("--config", required=True, help="start configuration")
        p.add_argument("--target", required=True)
        p.add_argument("--ckpt", help="policy checkpoint")
        p.add_argument("--planner", default="auto",
                       choices=["auto", "policy", "bfs", "greedy"])
        p.add_argument("--max-steps", type=int, default=64)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--budget-seconds", type=float)
        if name == "plan":
            p.add_argument("--out")
        else:
            p.add_argument("--out", required=True, help="trace output (JSONL)")
            p.add_argument("--dt", type=float, default=0.02)
        p.set_defaults(func=func)

    p = sub.add_parser("export", help="export a scene (JSON + optional OBJ mesh)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config")
    group.add_argument("--trace", help="use the final frame of a trace")
    p.add_argument("--out", required=True, help="scene JSON path")
    p.add_argument("--mesh", help="OBJ mesh path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("report", help="render figures from metrics or traces")
    p.add_argument("--metrics")
    p.add_argument("--trace")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID_INPUT


if __name__ == "__main__":
    sys.exit(main())
