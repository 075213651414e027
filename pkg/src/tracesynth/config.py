"""Run configuration shared by the optimiser, the structure search and the
command-line surface."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .interpreter import ErrorSpec, discretized_error_spec
from .optimizer import OptimizeConfig
from .program import ComplexityWeights


@dataclass(frozen=True)
class RunConfig:
    max_step_error: float = 0.05
    learning_rate: float = 0.2
    div_guard: float = 1e-8
    max_opt_iters: int = 1500
    tol: float = 1e-9
    tol_window: int = 10
    max_iterations: int = 1000
    weights: ComplexityWeights = field(default_factory=ComplexityWeights)
    top_k: int = 3
    seed: int = 0
    workers: int = 1
    error_model: str = "euclidean"  # "euclidean" or "discrete"
    deadband: float = 0.05  # discrete error model: classification deadband

    def __post_init__(self) -> None:
        positive = {
            "max_step_error": self.max_step_error,
            "learning_rate": self.learning_rate,
            "div_guard": self.div_guard,
            "max_opt_iters": self.max_opt_iters,
            "tol": self.tol,
            "tol_window": self.tol_window,
            "max_iterations": self.max_iterations,
            "top_k": self.top_k,
            "workers": self.workers,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        if self.error_model not in ("euclidean", "discrete"):
            raise ValueError(f"unknown error model: {self.error_model}")

    def optimize_config(self) -> OptimizeConfig:
        return OptimizeConfig(
            learning_rate=self.learning_rate,
            div_guard=self.div_guard,
            max_opt_iters=self.max_opt_iters,
            tol=self.tol,
            tol_window=self.tol_window,
        )

    def error_spec(self) -> ErrorSpec:
        if self.error_model == "discrete":
            return discretized_error_spec(self.deadband, self.max_step_error)
        return ErrorSpec(max_step_error=self.max_step_error)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, ComplexityWeights):
                value = [value.depth, value.params, value.variables]
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(doc)
        if "weights" in kwargs and not isinstance(kwargs["weights"], ComplexityWeights):
            w = kwargs["weights"]
            kwargs["weights"] = ComplexityWeights(*[float(x) for x in w])
        return cls(**kwargs)

    def override(self, **kwargs) -> "RunConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        if "weights" in kwargs and not isinstance(kwargs["weights"], ComplexityWeights):
            kwargs["weights"] = ComplexityWeights(*[float(x) for x in kwargs["weights"]])
        return replace(self, **kwargs)
