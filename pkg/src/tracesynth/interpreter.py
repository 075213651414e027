"""Forward pass: evaluate a program against a trace, record the call tree,
accumulate the action-error loss and stop early when a step exceeds the
error threshold.

A program here is a per-step policy: the action expression is re-evaluated
at every timestep with the variable leaves re-read from that step's memory.
Because steps do not feed state to each other, the whole trace is evaluated
in one vectorised pass and truncated at the first offending step; the result
is identical to step-by-step execution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

from .program import (
    ActionNode,
    FunctionNode,
    ParamLeaf,
    ProgramAst,
    ProgramError,
    Registry,
    VarLeaf,
)
from .trace import MemoryState, ObservationTrace


class EvaluationError(ProgramError):
    """Program cannot be evaluated against the given bindings."""


# ---------------------------------------------------------------------------
# error model


def euclidean_error(theta_hat: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Per-step Euclidean action-parameter error; inputs are (n, D)."""
    return np.linalg.norm(theta_hat - theta, axis=1)


def euclidean_error_grad(theta_hat: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """d(error)/d(theta_hat), rows (theta_hat-theta)/||.||; the zero
    subgradient is used where the norm vanishes."""
    diff = theta_hat - theta
    norm = np.linalg.norm(diff, axis=1, keepdims=True)
    out = np.zeros_like(diff)
    nz = norm[:, 0] > 0.0
    out[nz] = diff[nz] / norm[nz]
    return out


def zero_length_error(observed_len: int, executed_len: int) -> float:
    return 0.0


@dataclass(frozen=True)
class ErrorSpec:
    """User-specified equivalence between executed and observed actions.

    ``act_error``/``act_error_grad`` operate on (n, D) arrays of predicted
    and observed action parameters.  ``max_step_error`` is the per-step
    threshold above which execution terminates.  A mismatch of action names
    adds ``max_step_error + 1`` to that step's error, forcing termination.
    """

    act_error: Callable[[np.ndarray, np.ndarray], np.ndarray] = euclidean_error
    act_error_grad: Callable[[np.ndarray, np.ndarray], np.ndarray] = euclidean_error_grad
    len_error: Callable[[int, int], float] = zero_length_error
    max_step_error: float = 0.05


def discretized_error_spec(deadband: float, max_step_error: float = 0.02) -> ErrorSpec:
    """Error model for traces whose actions are discretised to {-1, 0, +1}
    by a deadband rule.

    The per-step error is the distance from the predicted value to the
    region that discretises to the observed class (componentwise): zero for
    a correctly classified prediction, otherwise how far the prediction
    must move to classify correctly.  Correctly classified steps therefore
    contribute no gradient, and every misclassified step pulls with unit
    slope toward its class boundary; a match means every step classifies
    within ``max_step_error`` of its region.
    """

    def class_gap(theta_hat: np.ndarray, theta: np.ndarray) -> np.ndarray:
        # distance below the +deadband boundary (theta=+1), above the
        # -deadband boundary (theta=-1), or outside the deadband (theta=0)
        gap_pos = np.maximum(0.0, deadband - theta_hat)
        gap_neg = np.maximum(0.0, theta_hat + deadband)
        gap_zero = np.maximum(0.0, np.abs(theta_hat) - deadband)
        return np.where(theta > 0.5, gap_pos, np.where(theta < -0.5, gap_neg, gap_zero))

    def err(theta_hat: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return class_gap(theta_hat, theta).sum(axis=1)

    def err_grad(theta_hat: np.ndarray, theta: np.ndarray) -> np.ndarray:
        grad_pos = np.where(theta_hat < deadband, -1.0, 0.0)
        grad_neg = np.where(theta_hat > -deadband, 1.0, 0.0)
        grad_zero = np.where(np.abs(theta_hat) > deadband, np.sign(theta_hat), 0.0)
        return np.where(theta > 0.5, grad_pos, np.where(theta < -0.5, grad_neg, grad_zero))

    return ErrorSpec(err, err_grad, zero_length_error, max_step_error)


def discretize_actions(theta: np.ndarray, deadband: float) -> np.ndarray:
    """Map continuous action parameters to {-1, 0, +1} with a deadband."""
    out = np.sign(theta)
    out[np.abs(theta) <= deadband] = 0.0
    return out


# ---------------------------------------------------------------------------
# call trace


@dataclass(frozen=True)
class ParamArg:
    """Argument bound to a parameter leaf (constant across steps)."""

    node_id: int
    pid: int
    value: np.ndarray  # (d,)


@dataclass(frozen=True)
class VarArg:
    """Argument read from a trace variable; stores every read: the 1-based
    read times and the value used at each."""

    node_id: int
    name: str
    times: np.ndarray  # (n,)
    values: np.ndarray  # (n, d)


@dataclass(frozen=True)
class CallRecord:
    """One recorded application; ``value`` holds the outputs of that node at
    every executed timestep."""

    node_id: int
    name: str
    args: tuple[Union["CallRecord", ParamArg, VarArg], ...]
    value: np.ndarray  # (n, out_dim)


ArgRecord = Union[CallRecord, ParamArg, VarArg]


@dataclass(frozen=True)
class CallTrace:
    """Recorded computation tree of one execution.

    Stored columnar: each record carries its values for all executed steps,
    and per-step record trees are materialised on demand via
    :meth:`records_at`.
    """

    root: CallRecord
    times: np.ndarray  # executed 1-based timesteps

    @property
    def executed_len(self) -> int:
        return len(self.times)

    def records_at(self, t: int) -> list[dict]:
        """Flat per-node view of the computation at 1-based timestep ``t``;
        one entry per AST node."""
        idx = int(np.searchsorted(self.times, t))
        if idx >= len(self.times) or self.times[idx] != t:
            raise IndexError(f"timestep {t} was not executed")
        out: list[dict] = []

        def walk(rec: ArgRecord) -> None:
            if isinstance(rec, ParamArg):
                out.append({"node": rec.node_id, "kind": "param", "value": rec.value})
            elif isinstance(rec, VarArg):
                out.append(
                    {
                        "node": rec.node_id,
                        "kind": "var",
                        "name": rec.name,
                        "read_time": int(rec.times[idx]),
                        "value": rec.values[idx],
                    }
                )
            else:
                out.append(
                    {"node": rec.node_id, "kind": "call", "name": rec.name, "value": rec.value[idx]}
                )
                for a in rec.args:
                    walk(a)

        walk(self.root)
        return out


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of executing a program against a trace."""

    action_name: str
    theta_hat: np.ndarray  # (T', D) predicted action parameters
    theta_obs: np.ndarray  # (T', D) observed targets over the executed prefix
    obs_names: tuple[str, ...]  # observed action names over the executed prefix
    step_errors: np.ndarray  # (T',) per-step action errors
    length_error: float
    loss: float
    observed_len: int
    executed_len: int
    terminated_early: bool
    call_trace: CallTrace


# ---------------------------------------------------------------------------
# evaluation


def _eval(
    node,
    registry: Registry,
    var_values: Mapping[str, np.ndarray],
    params: Mapping[int, np.ndarray],
    times: np.ndarray,
    node_id: list[int],
) -> tuple[np.ndarray, ArgRecord]:
    """Evaluate ``node`` over all steps at once; returns the (n, d) values
    and the provenance record.  ``node_id`` is a running preorder counter."""
    my_id = node_id[0]
    node_id[0] += 1
    n = len(times)
    if isinstance(node, ParamLeaf):
        if node.pid not in params:
            raise EvaluationError(f"unbound parameter p{node.pid}")
        value = np.asarray(params[node.pid], dtype=float)
        return np.broadcast_to(value, (n, node.dim)), ParamArg(my_id, node.pid, value)
    if isinstance(node, VarLeaf):
        values = var_values[node.name]
        return values, VarArg(my_id, node.name, times, values)
    arg_values = []
    arg_records = []
    for child in node.children:
        v, r = _eval(child, registry, var_values, params, times, node_id)
        arg_values.append(v)
        arg_records.append(r)
    if isinstance(node, ActionNode):
        out = np.concatenate(arg_values, axis=1)
    else:
        out = registry.impl(node.name)(*arg_values)
    return out, CallRecord(my_id, node.name, tuple(arg_records), out)


def evaluate_step(
    ast: ProgramAst, registry: Registry, memory: MemoryState
) -> tuple[str, np.ndarray, CallRecord]:
    """Evaluate the program once against a single memory state.

    Returns the action name, its parameter vector and the per-step call
    record capturing all reads and applications.
    """
    if ast.is_empty:
        raise EvaluationError("cannot evaluate the empty program")
    times = np.array([memory.t])
    var_values = {k: np.asarray(v, dtype=float).reshape(1, -1) for k, v in memory.variables.items()}
    out, record = _eval(ast.root, registry, var_values, memory.params, times, [0])
    assert isinstance(record, CallRecord)
    return ast.root.name, out[0], record


def _slice_record(rec: ArgRecord, n: int) -> ArgRecord:
    if isinstance(rec, ParamArg):
        return rec
    if isinstance(rec, VarArg):
        return VarArg(rec.node_id, rec.name, rec.times[:n], rec.values[:n])
    return CallRecord(rec.node_id, rec.name, tuple(_slice_record(a, n) for a in rec.args), rec.value[:n])


def execute(
    ast: ProgramAst,
    params: Mapping[int, np.ndarray],
    trace: ObservationTrace,
    registry: Registry,
    spec: ErrorSpec = ErrorSpec(),
) -> ExecutionResult:
    """Run the program once per timestep in trace order.

    After each step t the per-step error is computed from the predicted and
    observed action; execution stops after the first step whose error
    strictly exceeds ``spec.max_step_error`` (that step's error is included
    in the loss).  The loss is the sum of per-step errors over the executed
    prefix plus the length error.
    """
    if ast.is_empty:
        raise EvaluationError("cannot execute the empty program")
    T = trace.length
    times = np.arange(1, T + 1)
    var_values = {name: trace.var_matrix(name) for name in trace.schema.variables}
    out, record = _eval(ast.root, registry, var_values, params, times, [0])
    assert isinstance(record, CallRecord)

    obs_names = trace.action_names()
    theta_obs = trace.theta_matrix()
    root_name = ast.root.name
    D = ast.root.dim

    name_match = trace.action_mask(root_name)
    comparable = name_match & (trace.theta_dims() == D)
    errors = np.zeros(T)
    if comparable.any():
        errors[comparable] = spec.act_error(out[comparable], theta_obs[comparable, :D])
    errors[~name_match] += spec.max_step_error + 1.0

    over = np.nonzero(errors > spec.max_step_error)[0]
    executed = int(over[0]) + 1 if over.size else T
    # a threshold cut at the final step still counts as termination
    terminated = over.size > 0

    step_errors = errors[:executed]
    length_error = float(spec.len_error(T, executed))
    loss = float(step_errors.sum() + length_error)
    call_trace = CallTrace(_slice_record(record, executed), times[:executed])
    return ExecutionResult(
        action_name=root_name,
        theta_hat=out[:executed],
        theta_obs=theta_obs[:executed, :D],
        obs_names=tuple(obs_names[:executed]),
        step_errors=step_errors,
        length_error=length_error,
        loss=loss,
        observed_len=T,
        executed_len=executed,
        terminated_early=terminated,
        call_trace=call_trace,
    )


def matches_trace(result: ExecutionResult, spec: ErrorSpec) -> bool:
    """True iff execution covered the whole trace, no step error exceeded
    the threshold, and the length error is zero."""
    return (
        result.executed_len == result.observed_len
        and bool(np.all(result.step_errors <= spec.max_step_error))
        and result.length_error == 0.0
    )
