"""Observation traces, per-timestep memory views and the per-timestep
nearest-variable index."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np


class TraceFormatError(Exception):
    """Document does not satisfy the trace file contract."""


@dataclass(frozen=True)
class TraceSchema:
    variables: dict[str, int]  # variable name -> dimension
    actions: dict[str, int]  # action name -> parameter dimension

    def __post_init__(self) -> None:
        for name, dim in {**self.variables, **self.actions}.items():
            if dim < 1:
                raise TraceFormatError(f"{name}: dimension must be >= 1")


@dataclass(frozen=True)
class TraceStep:
    t: int
    vars: dict[str, np.ndarray]
    action_name: str
    theta: np.ndarray


@dataclass(frozen=True)
class ObservationTrace:
    schema: TraceSchema
    steps: tuple[TraceStep, ...]

    @property
    def length(self) -> int:
        return len(self.steps)

    def validate(self) -> "ObservationTrace":
        if not self.steps:
            raise TraceFormatError("trace must contain at least one step")
        for i, step in enumerate(self.steps):
            if step.t != i + 1:
                raise TraceFormatError(f"timesteps must be contiguous from 1; step {i} has t={step.t}")
            for name, dim in self.schema.variables.items():
                if name not in step.vars:
                    raise TraceFormatError(f"step {step.t}: missing variable {name}")
                if step.vars[name].shape != (dim,):
                    raise TraceFormatError(f"step {step.t}: variable {name} has wrong dimension")
            for name in step.vars:
                if name not in self.schema.variables:
                    raise TraceFormatError(f"step {step.t}: undeclared variable {name}")
            if step.action_name not in self.schema.actions:
                raise TraceFormatError(f"step {step.t}: undeclared action {step.action_name}")
            want = self.schema.actions[step.action_name]
            if step.theta.shape != (want,):
                raise TraceFormatError(
                    f"step {step.t}: action {step.action_name} expects theta of dimension {want}"
                )
        return self

    def _cache(self) -> dict:
        # dense views are rebuilt on demand and memoised; the trace is
        # immutable so the cache never invalidates
        cache = self.__dict__.get("_dense_cache")
        if cache is None:
            cache = {}
            object.__setattr__(self, "_dense_cache", cache)
        return cache

    def var_matrix(self, name: str) -> np.ndarray:
        """Values of one variable over all steps, shape (T, d)."""
        cache = self._cache()
        key = ("var", name)
        if key not in cache:
            cache[key] = np.stack([s.vars[name] for s in self.steps])
        return cache[key]

    def theta_matrix(self) -> np.ndarray:
        """Observed action parameters over all steps, shape (T, D).

        Only meaningful when every step uses the same action (padded with
        NaN where dimensions differ otherwise)."""
        cache = self._cache()
        if "theta" not in cache:
            dmax = max(s.theta.shape[0] for s in self.steps)
            out = np.full((self.length, dmax), np.nan)
            for i, s in enumerate(self.steps):
                out[i, : s.theta.shape[0]] = s.theta
            cache["theta"] = out
        return cache["theta"]

    def theta_dims(self) -> np.ndarray:
        cache = self._cache()
        if "theta_dims" not in cache:
            cache["theta_dims"] = np.array([s.theta.shape[0] for s in self.steps])
        return cache["theta_dims"]

    def action_names(self) -> list[str]:
        cache = self._cache()
        if "names" not in cache:
            cache["names"] = [s.action_name for s in self.steps]
        return cache["names"]

    def action_mask(self, name: str) -> np.ndarray:
        """Boolean mask of steps whose observed action is ``name``."""
        cache = self._cache()
        key = ("mask", name)
        if key not in cache:
            cache[key] = np.array([nm == name for nm in self.action_names()])
        return cache[key]


@dataclass(frozen=True)
class MemoryState:
    """Variable and parameter bindings visible to a program at one timestep."""

    t: int
    variables: dict[str, np.ndarray]
    params: dict[int, np.ndarray] = field(default_factory=dict)


def memory_at(
    trace: ObservationTrace, t: int, params: Mapping[int, np.ndarray] | None = None
) -> MemoryState:
    """Memory view at 1-based timestep ``t``; raises IndexError out of range."""
    if not 1 <= t <= trace.length:
        raise IndexError(f"timestep {t} outside 1..{trace.length}")
    step = trace.steps[t - 1]
    return MemoryState(t, dict(step.vars), dict(params or {}))


class VariableIndex:
    """Exact nearest-neighbour lookup over variable values, per timestep and
    per dimension.

    The candidate sets are the handful of schema variables sharing a
    dimension, so the index stores them as dense (T, n_vars, d) arrays and
    answers queries by a vectorised scan: exact, and deterministic because
    candidates are ordered by variable name (argmin takes the first, i.e.
    lexicographically smallest, on ties).
    """

    def __init__(self, trace: ObservationTrace):
        self._length = trace.length
        self.names: dict[int, list[str]] = {}
        self.values: dict[int, np.ndarray] = {}
        by_dim: dict[int, list[str]] = {}
        for name, dim in sorted(trace.schema.variables.items()):
            by_dim.setdefault(dim, []).append(name)
        for dim, names in by_dim.items():
            self.names[dim] = names
            self.values[dim] = np.stack([trace.var_matrix(n) for n in names], axis=1)

    def query(self, t: int, dim: int, point: np.ndarray) -> tuple[str, np.ndarray]:
        """Nearest d-dimensional variable to ``point`` at timestep ``t``,
        ties broken by ascending variable name."""
        if dim not in self.names:
            raise KeyError(f"no variable of dimension {dim}")
        if not 1 <= t <= self._length:
            raise IndexError(f"timestep {t} outside 1..{self._length}")
        cands = self.values[dim][t - 1]  # (n_vars, d)
        dist = np.linalg.norm(cands - np.asarray(point, dtype=float), axis=1)
        j = int(np.argmin(dist))
        return self.names[dim][j], cands[j]

    def query_steps(self, dim: int, points: np.ndarray) -> np.ndarray:
        """Vectorised query for timesteps 1..len(points): ``points`` has
        shape (n, d); returns the winning variable's index into
        ``names[dim]`` per step."""
        if dim not in self.names:
            raise KeyError(f"no variable of dimension {dim}")
        n = points.shape[0]
        cands = self.values[dim][:n]  # (n, n_vars, d)
        dist = np.linalg.norm(cands - points[:, None, :], axis=2)
        return np.argmin(dist, axis=1)


def build_variable_index(trace: ObservationTrace) -> VariableIndex:
    """Build the per-timestep nearest-variable index for a trace.  The trace
    is immutable during induction, so all timesteps are indexed once."""
    return VariableIndex(trace)


def nearest_variable(
    index: VariableIndex, t: int, dim: int, query: np.ndarray
) -> tuple[str, np.ndarray]:
    return index.query(t, dim, query)


# ---------------------------------------------------------------------------
# file format


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise TraceFormatError(msg)


def trace_from_dict(doc: dict) -> ObservationTrace:
    _require(isinstance(doc, dict), "trace document must be an object")
    _require("schema" in doc and "steps" in doc, "trace document needs schema and steps")
    sch = doc["schema"]
    _require(
        isinstance(sch, dict) and "variables" in sch and "actions" in sch,
        "schema needs variables and actions",
    )
    try:
        schema = TraceSchema(
            {str(k): int(v) for k, v in sch["variables"].items()},
            {str(k): int(v) for k, v in sch["actions"].items()},
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise TraceFormatError(f"bad schema: {exc}") from None
    steps = []
    _require(isinstance(doc["steps"], list), "steps must be an array")
    for raw in doc["steps"]:
        _require(isinstance(raw, dict), "each step must be an object")
        for key in ("t", "vars", "action"):
            _require(key in raw, f"step missing field {key!r}")
        action = raw["action"]
        _require(
            isinstance(action, dict) and "name" in action and "theta" in action,
            "step action needs name and theta",
        )
        try:
            step = TraceStep(
                t=int(raw["t"]),
                vars={k: np.asarray(v, dtype=float).reshape(-1) for k, v in raw["vars"].items()},
                action_name=str(action["name"]),
                theta=np.asarray(action["theta"], dtype=float).reshape(-1),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise TraceFormatError(f"bad step: {exc}") from None
        steps.append(step)
    return ObservationTrace(schema, tuple(steps)).validate()


def trace_to_dict(trace: ObservationTrace) -> dict:
    return {
        "schema": {
            "variables": dict(trace.schema.variables),
            "actions": dict(trace.schema.actions),
        },
        "steps": [
            {
                "t": s.t,
                "vars": {k: v.tolist() for k, v in s.vars.items()},
                "action": {"name": s.action_name, "theta": s.theta.tolist()},
            }
            for s in trace.steps
        ],
    }


def load_trace(path: str | Path) -> ObservationTrace:
    """Load and validate a trace file (JSON, UTF-8)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"not valid JSON: {exc}") from None
    return trace_from_dict(doc)


def save_trace(trace: ObservationTrace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(trace_to_dict(trace), indent=1), encoding="utf-8")
