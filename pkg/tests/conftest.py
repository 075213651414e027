"""Shared fixtures and independent oracles for the test suite.

The reference evaluator here recomputes program execution with plain
per-step recursion, independently of the library's vectorised interpreter;
several suites use it as the ground truth.
"""

from __future__ import annotations

import numpy as np
import pytest

from tracesynth import (
    ActionNode,
    ErrorSpec,
    FunctionNode,
    ObservationTrace,
    ParamLeaf,
    ProgramAst,
    Registry,
    TraceSchema,
    TraceStep,
    VarLeaf,
    standard_registry,
)


def make_trace(
    var_values: dict[str, list],
    thetas: list,
    action: str = "accel",
    actions: dict[str, int] | None = None,
) -> ObservationTrace:
    """Build a trace from per-variable value lists and per-step theta rows."""
    names = sorted(var_values)
    length = len(thetas)
    variables = {}
    for name in names:
        rows = [np.atleast_1d(np.asarray(r, dtype=float)) for r in var_values[name]]
        assert len(rows) == length
        variables[name] = rows
    schema_vars = {name: variables[name][0].shape[0] for name in names}
    theta_rows = [np.atleast_1d(np.asarray(t, dtype=float)) for t in thetas]
    schema_actions = actions or {action: theta_rows[0].shape[0]}
    steps = tuple(
        TraceStep(
            t=i + 1,
            vars={name: variables[name][i] for name in names},
            action_name=action,
            theta=theta_rows[i],
        )
        for i in range(length)
    )
    return ObservationTrace(TraceSchema(schema_vars, schema_actions), steps).validate()


def eval_program_at(
    ast: ProgramAst,
    registry: Registry,
    params: dict[int, np.ndarray],
    var_values: dict[str, np.ndarray],
    override: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Reference recursive evaluation at a single timestep.

    ``override`` replaces the value read by the variable leaf with the given
    preorder node id, enabling finite differences of a single read.
    """
    override = override or {}
    counter = [0]

    def ev(node):
        nid = counter[0]
        counter[0] += 1
        if isinstance(node, ParamLeaf):
            return np.asarray(params[node.pid], dtype=float)
        if isinstance(node, VarLeaf):
            if nid in override:
                return np.asarray(override[nid], dtype=float)
            return np.asarray(var_values[node.name], dtype=float)
        args = [ev(c) for c in node.children]
        if isinstance(node, ActionNode):
            return np.concatenate(args)
        return registry.impl(node.name)(*[a.reshape(1, -1) for a in args])[0]

    return ev(ast.root)


def reference_loss(
    ast: ProgramAst,
    registry: Registry,
    params: dict[int, np.ndarray],
    trace: ObservationTrace,
    spec: ErrorSpec,
    override: tuple[int, int, np.ndarray] | None = None,
) -> float:
    """Reference step-by-step loss with early termination.

    ``override`` = (timestep, leaf node id, value) perturbs one variable
    read at one step.
    """
    total = 0.0
    executed = 0
    for step in trace.steps:
        ov = None
        if override is not None and override[0] == step.t:
            ov = {override[1]: override[2]}
        theta_hat = eval_program_at(ast, registry, params, step.vars, ov)
        err = float(
            spec.act_error(theta_hat.reshape(1, -1), step.theta.reshape(1, -1))[0]
        )
        if step.action_name != ast.root.name:
            err += spec.max_step_error + 1.0
        total += err
        executed += 1
        if err > spec.max_step_error:
            break
    return total + spec.len_error(trace.length, executed)


@pytest.fixture
def scalar_registry() -> Registry:
    return standard_registry({"x": 1, "v": 1}, {"accel": 1})


@pytest.fixture
def scalar_schema() -> dict[str, int]:
    return {"x": 1, "v": 1}
