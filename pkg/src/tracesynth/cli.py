"""Command-line surface: generate traces, run induction, evaluate a program
against a trace, and count the structure space.

Exit codes: 0 success, 1 usage error, 2 input/format error, 3 induction
finished without an accepted solution (the top-k report is still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .interpreter import matches_trace
from .program import (
    ProgramError,
    canonical_key,
    initial_params,
    parse_program,
    print_program,
    standard_registry,
)
from .search import SolutionSet, enumerate_programs, induce
from .systems import OSCILLATOR, PENDULUM, PaddleConfig, SecondOrderConfig, simulate_paddle, simulate_second_order
from .interpreter import execute
from .trace import ObservationTrace, TraceFormatError, load_trace, save_trace

USAGE_ERROR = 1
INPUT_ERROR = 2
NO_SOLUTION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracesynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a generated trace file")
    sim.add_argument("system", choices=["pendulum", "oscillator", "paddle"])
    sim.add_argument("--out", required=True)
    sim.add_argument("--k1", type=float)
    sim.add_argument("--k2", type=float)
    sim.add_argument("--x0", type=float)
    sim.add_argument("--v0", type=float)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--steps", type=int)
    sim.add_argument("--c-agent", type=float)
    sim.add_argument("--c-ball", type=float)
    sim.add_argument("--deadband", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--height", type=float)
    sim.add_argument("--ball-speed", type=float)
    sim.add_argument("--paddle-speed", type=float)

    ind = sub.add_parser("induce", help="induce a program reproducing a trace")
    ind.add_argument("--trace", required=True)
    ind.add_argument("--out", default=None)
    ind.add_argument("--config", default=None, help="JSON file of run-config fields")
    _add_config_flags(ind)

    ev = sub.add_parser("eval", help="evaluate a program file against a trace")
    ev.add_argument("--program", required=True)
    ev.add_argument("--trace", required=True)
    ev.add_argument("--max-step-error", type=float)

    enum = sub.add_parser("enumerate", help="count program structures up to a depth")
    enum.add_argument("--depth", type=int, required=True)
    enum.add_argument("--trace", required=True)
    return parser


def _add_config_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--seed", type=int)
    cmd.add_argument("--workers", type=int)
    cmd.add_argument("--max-step-error", type=float, dest="max_step_error")
    cmd.add_argument("--learning-rate", type=float, dest="learning_rate")
    cmd.add_argument("--max-opt-iters", type=int, dest="max_opt_iters")
    cmd.add_argument("--max-iterations", type=int, dest="max_iterations")
    cmd.add_argument("--top-k", type=int, dest="top_k")
    cmd.add_argument(
        "--weights", type=float, nargs=3, metavar=("DEPTH", "PARAMS", "VARS"), dest="weights"
    )
    cmd.add_argument("--error-model", choices=["euclidean", "discrete"], dest="error_model")
    cmd.add_argument("--deadband", type=float, dest="deadband")


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        config = RunConfig.from_dict(doc)
    overrides = {
        name: getattr(args, name, None)
        for name in (
            "seed",
            "workers",
            "max_step_error",
            "learning_rate",
            "max_opt_iters",
            "max_iterations",
            "top_k",
            "weights",
            "error_model",
            "deadband",
        )
    }
    return config.override(**overrides)


def _cmd_simulate(args: argparse.Namespace) -> int:
    def picked(**pairs):
        return {k: v for k, v in pairs.items() if v is not None}

    if args.system == "paddle":
        cfg = PaddleConfig(
            **picked(
                height=args.height,
                ball_speed=args.ball_speed,
                paddle_speed=args.paddle_speed,
                deadband=args.deadband,
                c_agent=args.c_agent,
                c_ball=args.c_ball,
                steps=args.steps,
                seed=args.seed,
            )
        )
        trace = simulate_paddle(cfg)
    else:
        base = PENDULUM if args.system == "pendulum" else OSCILLATOR
        cfg = SecondOrderConfig(
            **picked(
                k1=args.k1 if args.k1 is not None else base.k1,
                k2=args.k2 if args.k2 is not None else base.k2,
                x0=args.x0,
                v0=args.v0,
                dt=args.dt,
                steps=args.steps,
            )
        )
        trace = simulate_second_order(cfg)
    save_trace(trace, args.out)
    print(f"wrote {trace.length}-step trace to {args.out}")
    return 0


def render_report(result: SolutionSet, config: RunConfig, trace_path: str) -> str:
    """Text report; the ``programs`` section is a pure function of (trace,
    config, seed), byte-identical across runs and worker counts."""

    def line(tag: str, cand) -> str:
        text = print_program(cand.ast, cand.opt.params)
        return (
            f"{tag}: {text}\n"
            f"    loss={cand.loss:.9g} complexity={cand.complexity:.9g} "
            f"f_total={cand.score:.9g}"
        )

    parts = ["tracesynth induction report", "===========================", ""]
    parts.append(f"trace: {trace_path}")
    parts.append("config: " + json.dumps(config.to_dict(), sort_keys=True))
    parts.append("")
    parts.append("programs")
    parts.append("--------")
    if result.solution is not None:
        parts.append("status: accepted")
        parts.append(line("solution", result.solution))
    else:
        parts.append("status: no accepted solution")
    for i, cand in enumerate(result.top, start=1):
        parts.append(line(f"top[{i}]", cand))
    parts.append("")
    parts.append("stats")
    parts.append("-----")
    parts.append(f"iterations: {result.iterations}")
    parts.append(f"wall_time_s: {result.wall_time:.3f}")
    parts.append("")
    parts.append("json")
    parts.append("----")
    doc = {
        "trace": trace_path,
        "config": config.to_dict(),
        "status": "accepted" if result.solution else "no-solution",
        "solution": _cand_dict(result.solution) if result.solution else None,
        "top": [_cand_dict(c) for c in result.top],
        "iterations": result.iterations,
        "wall_time_s": round(result.wall_time, 3),
    }
    parts.append(json.dumps(doc, indent=1, sort_keys=True))
    parts.append("")
    return "\n".join(parts)


def _cand_dict(cand) -> dict:
    return {
        "program": print_program(cand.ast, cand.opt.params),
        "structure": canonical_key(cand.ast),
        "loss": cand.loss,
        "complexity": cand.complexity,
        "f_total": cand.score,
    }


def _cmd_induce(args: argparse.Namespace) -> int:
    config = _load_config(args)
    trace = load_trace(args.trace)
    registry = standard_registry(trace.schema.variables, trace.schema.actions)
    result = induce(trace, registry, config=config)
    report = render_report(result, config, args.trace)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
        print(f"wrote report to {args.out}")
    else:
        print(report, end="")
    if result.solution is None:
        return NO_SOLUTION
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    trace = load_trace(args.trace)
    registry = standard_registry(trace.schema.variables, trace.schema.actions)
    text = Path(args.program).read_text(encoding="utf-8").strip()
    ast = parse_program(text, registry, trace.schema)
    config = RunConfig() if args.max_step_error is None else RunConfig(
        max_step_error=args.max_step_error
    )
    spec = config.error_spec()
    result = execute(ast, initial_params(ast), trace, registry, spec)
    errors = result.step_errors
    print(f"program: {print_program(ast)}")
    print(f"loss: {result.loss:.9g}")
    print(f"executed: {result.executed_len} of {result.observed_len} steps")
    if len(errors):
        print(
            "step errors: "
            f"max={errors.max():.9g} mean={errors.mean():.9g} last={errors[-1]:.9g}"
        )
    print(f"matches: {'true' if matches_trace(result, spec) else 'false'}")
    return 0


def _cmd_enumerate(args: argparse.Namespace) -> int:
    trace = load_trace(args.trace)
    registry = standard_registry(trace.schema.variables, trace.schema.actions)
    count = enumerate_programs(registry, trace.schema, args.depth)
    print(f"structures with depth <= {args.depth}: {count}")
    return 0


def run_cli(argv: list[str] | None = None) -> int:
    """Run one command; returns the exit code instead of exiting."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else USAGE_ERROR
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "induce":
            return _cmd_induce(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "enumerate":
            return _cmd_enumerate(args)
        return USAGE_ERROR
    except (TraceFormatError, ProgramError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
