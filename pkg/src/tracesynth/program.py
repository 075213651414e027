"""Typed s-expression program representation.

A program is a tree whose root applies a primitive action to argument
expressions built from pure functions, free parameters and trace
variables.  Trees are immutable; structural edits return new trees.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np


class ProgramError(Exception):
    """Base class for program construction and formatting errors."""


class ParseError(ProgramError):
    """Malformed program text."""


class ProgramTypeError(ProgramError):
    """Symbol resolution, arity or dimension violation."""


@dataclass(frozen=True)
class ParamLeaf:
    """Free parameter slot.  ``init`` is the value the leaf was created with
    (a source literal or a sampled proposal); optimisation state keeps the
    live value separately, keyed by ``pid``."""

    pid: int
    dim: int
    init: tuple[float, ...]


@dataclass(frozen=True)
class VarLeaf:
    """Reference to a trace variable, re-read at every executed timestep."""

    name: str
    dim: int


@dataclass(frozen=True)
class FunctionNode:
    name: str
    children: tuple["Node", ...]
    dim: int


@dataclass(frozen=True)
class ActionNode:
    name: str
    children: tuple["Node", ...]
    dim: int  # total action-parameter dimension


Node = Union[ParamLeaf, VarLeaf, FunctionNode, ActionNode]


@dataclass(frozen=True)
class ProgramAst:
    """A program: an action application, or the empty program (root None)."""

    root: ActionNode | None = None

    @property
    def is_empty(self) -> bool:
        return self.root is None


EMPTY_PROGRAM = ProgramAst(None)


@dataclass(frozen=True)
class FunctionSpec:
    """Signature of a pure function or primitive action.

    ``arg_dims`` lists the required dimension of each argument; the arity is
    its length.  For actions ``out_dim`` equals the action-parameter
    dimension carried in the trace.
    """

    name: str
    arg_dims: tuple[int, ...]
    out_dim: int
    is_action: bool = False

    @property
    def arity(self) -> int:
        return len(self.arg_dims)

    def __post_init__(self) -> None:
        if self.arity < 1:
            raise ProgramTypeError(f"{self.name}: functions take at least one argument")


@dataclass(frozen=True)
class ComplexityWeights:
    """Weights of the structural cost: tree depth, parameter leaves, variable
    leaf occurrences."""

    depth: float = 10.0
    params: float = 5.0
    variables: float = 1.0

    def __post_init__(self) -> None:
        if min(self.depth, self.params, self.variables) < 0:
            raise ValueError("complexity weights must be nonnegative")


# impl(*args) -> output, vectorised over a leading step axis: (n, d_i) -> (n, out)
Impl = Callable[..., np.ndarray]
# jac(args, index) -> (out_dim, arg_dim) matrix at a single evaluation point
Jac = Callable[[tuple[np.ndarray, ...], int], np.ndarray]
# vjp(args, upstream) -> per-argument gradients, all vectorised over steps
Vjp = Callable[[tuple[np.ndarray, ...], np.ndarray], tuple[np.ndarray, ...]]


class Registry:
    """Named function and action signatures with their semantics.

    Every entry carries a vectorised implementation and an analytic Jacobian;
    a vectorised vector-Jacobian product is optional (the backward pass falls
    back to per-step Jacobian multiplication without one).
    """

    def __init__(self) -> None:
        self._specs: dict[str, FunctionSpec] = {}
        self._impls: dict[str, Impl] = {}
        self._jacs: dict[str, Jac] = {}
        self._vjps: dict[str, Vjp | None] = {}

    def register(self, spec: FunctionSpec, impl: Impl, jac: Jac, vjp: Vjp | None = None) -> None:
        if spec.name in self._specs:
            raise ProgramTypeError(f"duplicate registry name: {spec.name}")
        self._specs[spec.name] = spec
        self._impls[spec.name] = impl
        self._jacs[spec.name] = jac
        self._vjps[spec.name] = vjp

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def spec(self, name: str) -> FunctionSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise ProgramTypeError(f"unknown function or action: {name}") from None

    def impl(self, name: str) -> Impl:
        return self._impls[name]

    def jac(self, name: str) -> Jac:
        return self._jacs[name]

    def vjp(self, name: str) -> Vjp | None:
        return self._vjps[name]

    def actions(self) -> list[FunctionSpec]:
        return sorted((s for s in self._specs.values() if s.is_action), key=lambda s: s.name)

    def pure_functions(self) -> list[FunctionSpec]:
        return sorted((s for s in self._specs.values() if not s.is_action), key=lambda s: s.name)


def _as_variables(schema: object) -> dict[str, int]:
    """Accept either a plain name->dim mapping or an object with a
    ``variables`` attribute (a trace schema)."""
    if isinstance(schema, Mapping):
        return dict(schema)
    variables = getattr(schema, "variables", None)
    if variables is None:
        raise ProgramTypeError("schema must be a mapping or carry .variables")
    return dict(variables)


def standard_registry(variables: object, actions: Mapping[str, int]) -> Registry:
    """Registry with vector addition, subtraction and scaling at every
    dimension used by the schema variables, plus one action per entry of
    ``actions`` (name -> parameter dimension).

    At dimension 1 the plain names ``add``/``sub``/``scale`` are used;
    other dimensions get a numeric suffix (``add2`` ...).
    """
    var_dims = _as_variables(variables)
    reg = Registry()
    dims = sorted(set(var_dims.values()) | {d for d in actions.values()})
    for d in dims:
        sfx = "" if d == 1 else str(d)
        eye = np.eye(d)
        reg.register(
            FunctionSpec(f"add{sfx}", (d, d), d),
            lambda a, b: a + b,
            lambda args, i, eye=eye: eye,
            lambda args, g: (g, g),
        )
        reg.register(
            FunctionSpec(f"sub{sfx}", (d, d), d),
            lambda a, b: a - b,
            lambda args, i, eye=eye: eye if i == 0 else -eye,
            lambda args, g: (g, -g),
        )
        reg.register(
            FunctionSpec(f"scale{sfx}", (1, d), d),
            lambda c, x: c * x,
            lambda args, i, eye=eye: args[1].reshape(-1, 1) if i == 0 else args[0][0] * eye,
            lambda args, g: ((g * args[1]).sum(axis=1, keepdims=True), g * args[0]),
        )
    for name in sorted(actions):
        d = actions[name]
        reg.register(
            FunctionSpec(name, (d,), d, is_action=True),
            lambda x: x,
            lambda args, i: np.eye(args[0].shape[-1]),
            lambda args, g: (g,),
        )
    return reg


# ---------------------------------------------------------------------------
# tree utilities


def iter_nodes(ast: ProgramAst) -> list[tuple[int, Node]]:
    """(preorder index, node) pairs for every node of the tree; memoised on
    the immutable tree."""
    if ast.is_empty:
        return []
    cached = ast.__dict__.get("_nodes_cache")
    if cached is not None:
        return cached
    out: list[tuple[int, Node]] = []
    stack: list[Node] = [ast.root]
    # explicit preorder walk; children pushed in reverse to pop left-first
    while stack:
        node = stack.pop()
        out.append((len(out), node))
        if isinstance(node, (FunctionNode, ActionNode)):
            stack.extend(reversed(node.children))
    object.__setattr__(ast, "_nodes_cache", out)
    return out


def leaves(ast: ProgramAst) -> list[tuple[int, ParamLeaf | VarLeaf]]:
    """Leaves of the tree with their preorder node ids (stable slot ids)."""
    cached = ast.__dict__.get("_leaves_cache")
    if cached is not None:
        return cached
    out = [(i, n) for i, n in iter_nodes(ast) if isinstance(n, (ParamLeaf, VarLeaf))]
    if not ast.is_empty:
        object.__setattr__(ast, "_leaves_cache", out)
    return out


def replace_node(ast: ProgramAst, node_id: int, replacement: Node) -> ProgramAst:
    """Return a copy of the tree with the node at preorder ``node_id``
    swapped for ``replacement``."""
    if ast.is_empty:
        raise ProgramError("cannot replace nodes of the empty program")

    counter = [0]

    def rebuild(node: Node) -> Node:
        my_id = counter[0]
        counter[0] += 1
        if my_id == node_id:
            # skip the subtree rooted here in the numbering
            counter[0] += _subtree_size(node) - 1
            return replacement
        if isinstance(node, (FunctionNode, ActionNode)):
            children = tuple(rebuild(c) for c in node.children)
            if isinstance(node, ActionNode):
                return ActionNode(node.name, children, node.dim)
            return FunctionNode(node.name, children, node.dim)
        return node

    new_root = rebuild(ast.root)
    if counter[0] <= node_id:
        raise ProgramError(f"node id {node_id} out of range")
    assert isinstance(new_root, ActionNode)
    return ProgramAst(new_root)


def _subtree_size(node: Node) -> int:
    if isinstance(node, (FunctionNode, ActionNode)):
        return 1 + sum(_subtree_size(c) for c in node.children)
    return 1


def next_pid(ast: ProgramAst) -> int:
    pids = [n.pid for _, n in iter_nodes(ast) if isinstance(n, ParamLeaf)]
    return max(pids) + 1 if pids else 0


def initial_params(ast: ProgramAst) -> dict[int, np.ndarray]:
    """Parameter values the leaves were created with."""
    return {
        n.pid: np.asarray(n.init, dtype=float)
        for _, n in iter_nodes(ast)
        if isinstance(n, ParamLeaf)
    }


def depth(ast: ProgramAst) -> int:
    """Edges on the longest root-to-leaf path; the empty program has depth 0."""
    if ast.is_empty:
        return 0

    def node_depth(node: Node) -> int:
        if isinstance(node, (FunctionNode, ActionNode)):
            return 1 + max(node_depth(c) for c in node.children)
        return 0

    return node_depth(ast.root)


def complexity(ast: ProgramAst, weights: ComplexityWeights = ComplexityWeights()) -> float:
    """Structural cost: weighted depth + parameter count + variable-leaf count."""
    n_params = sum(1 for _, n in iter_nodes(ast) if isinstance(n, ParamLeaf))
    n_vars = sum(1 for _, n in iter_nodes(ast) if isinstance(n, VarLeaf))
    return weights.depth * depth(ast) + weights.params * n_params + weights.variables * n_vars


def canonical_key(ast: ProgramAst) -> str:
    """Structural fingerprint: the program text with every parameter leaf
    reduced to ``?``.  Equal keys mean identical structure and variable
    names."""
    if ast.is_empty:
        return "()"

    def render(node: Node) -> str:
        if isinstance(node, ParamLeaf):
            return "?"
        if isinstance(node, VarLeaf):
            return node.name
        inner = " ".join(render(c) for c in node.children)
        return f"({node.name} {inner})"

    return render(ast.root)


# ---------------------------------------------------------------------------
# textual format


def _format_value(value: np.ndarray, precision: int) -> str:
    vals = [f"{float(v):#.{precision}g}" for v in np.atleast_1d(value)]
    if len(vals) == 1:
        return vals[0]
    return "[" + " ".join(vals) + "]"


def print_program(
    ast: ProgramAst,
    params: Mapping[int, np.ndarray] | None = None,
    precision: int = 6,
) -> str:
    """Canonical text of a program with parameter values as decimal literals.

    With ``params=None`` the leaves' initial values are printed; otherwise
    ``params`` must hold a value for every parameter leaf.
    """
    if ast.is_empty:
        return "()"
    if params is None:
        values = initial_params(ast)
    else:
        values = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    def render(node: Node) -> str:
        if isinstance(node, ParamLeaf):
            if node.pid not in values:
                raise ProgramError(f"missing value for parameter p{node.pid}")
            return _format_value(values[node.pid], precision)
        if isinstance(node, VarLeaf):
            return node.name
        inner = " ".join(render(c) for c in node.children)
        return f"({node.name} {inner})"

    return render(ast.root)


_TOKEN_BOUNDARIES = {"(": " ( ", ")": " ) ", "[": " [ ", "]": " ] "}


def _tokenize(text: str) -> list[str]:
    for ch, spaced in _TOKEN_BOUNDARIES.items():
        text = text.replace(ch, spaced)
    return text.split()


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


class _Parser:
    def __init__(self, tokens: list[str], registry: Registry, variables: dict[str, int]):
        self.tokens = tokens
        self.pos = 0
        self.registry = registry
        self.variables = variables
        self.pid = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input")
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.take()
        if got != tok:
            raise ParseError(f"expected {tok!r}, got {got!r}")

    def parse_root(self) -> ProgramAst:
        self.expect("(")
        if self.peek() == ")":
            self.take()
            if self.peek() is not None:
                raise ParseError("trailing tokens after program")
            return EMPTY_PROGRAM
        head = self.take()
        spec = self.registry.spec(head)
        if not spec.is_action:
            raise ProgramTypeError(f"program root must be an action, got function {head}")
        children = self.parse_args(spec)
        self.expect(")")
        if self.peek() is not None:
            raise ParseError("trailing tokens after program")
        return ProgramAst(ActionNode(spec.name, children, spec.out_dim))

    def parse_args(self, spec: FunctionSpec) -> tuple[Node, ...]:
        children = []
        for want_dim in spec.arg_dims:
            if self.peek() is None:
                raise ParseError("unexpected end of input")
            if self.peek() == ")":
                raise ProgramTypeError(
                    f"{spec.name} takes {spec.arity} argument(s), got {len(children)}"
                )
            children.append(self.parse_expr(want_dim))
        if self.peek() is None:
            raise ParseError("unexpected end of input")
        if self.peek() != ")":
            raise ProgramTypeError(f"{spec.name} takes {spec.arity} argument(s), got more")
        return tuple(children)

    def parse_expr(self, want_dim: int) -> Node:
        tok = self.take()
        if tok == "(":
            head = self.take()
            spec = self.registry.spec(head)
            if spec.is_action:
                raise ProgramTypeError(f"action {head} may only appear at the root")
            if spec.out_dim != want_dim:
                raise ProgramTypeError(
                    f"{head} produces dimension {spec.out_dim}, expected {want_dim}"
                )
            children = self.parse_args(spec)
            self.expect(")")
            return FunctionNode(spec.name, children, spec.out_dim)
        if tok == "[":
            vals = []
            while self.peek() != "]":
                num = self.take()
                if not _is_number(num):
                    raise ParseError(f"expected number in vector literal, got {num!r}")
                vals.append(float(num))
            self.take()
            if len(vals) != want_dim:
                raise ProgramTypeError(
                    f"vector literal of length {len(vals)}, expected dimension {want_dim}"
                )
            return self.new_param(tuple(vals), want_dim)
        if _is_number(tok):
            # scalar literal broadcast across the slot dimension
            return self.new_param((float(tok),) * want_dim, want_dim)
        if tok in (")", "]"):
            raise ParseError(f"unexpected {tok!r}")
        if tok in self.variables:
            if self.variables[tok] != want_dim:
                raise ProgramTypeError(
                    f"variable {tok} has dimension {self.variables[tok]}, expected {want_dim}"
                )
            return VarLeaf(tok, want_dim)
        raise ProgramTypeError(f"unknown symbol: {tok}")

    def new_param(self, init: tuple[float, ...], dim: int) -> ParamLeaf:
        leaf = ParamLeaf(self.pid, dim, init)
        self.pid += 1
        return leaf


def parse_program(text: str, registry: Registry, schema: object) -> ProgramAst:
    """Parse program text against a registry and a trace schema.

    Numeric literals become parameter leaves initialised to the literal.
    Raises :class:`ParseError` for malformed text and
    :class:`ProgramTypeError` for unknown symbols, arity or dimension
    violations.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty program text")
    ast = _Parser(tokens, registry, _as_variables(schema)).parse_root()
    check_program(ast, registry, schema)
    return ast


def check_program(ast: ProgramAst, registry: Registry, schema: object) -> None:
    """Validate the structural invariants of a tree: root is an action,
    signatures line up, parameter ids are unique, variables exist in the
    schema with matching dimension."""
    if ast.is_empty:
        return
    variables = _as_variables(schema)
    seen_pids: set[int] = set()

    def check(node: Node, want_dim: int | None) -> None:
        if isinstance(node, ParamLeaf):
            if node.pid in seen_pids:
                raise ProgramTypeError(f"duplicate parameter id p{node.pid}")
            seen_pids.add(node.pid)
            if len(node.init) != node.dim:
                raise ProgramTypeError(f"p{node.pid}: init length != dimension")
            got = node.dim
        elif isinstance(node, VarLeaf):
            if node.name not in variables:
                raise ProgramTypeError(f"unknown variable: {node.name}")
            if variables[node.name] != node.dim:
                raise ProgramTypeError(f"variable {node.name}: dimension mismatch")
            got = node.dim
        else:
            spec = registry.spec(node.name)
            if isinstance(node, ActionNode) != spec.is_action:
                raise ProgramTypeError(f"{node.name}: action/function kind mismatch")
            if len(node.children) != spec.arity:
                raise ProgramTypeError(
                    f"{node.name} takes {spec.arity} argument(s), got {len(node.children)}"
                )
            for child, d in zip(node.children, spec.arg_dims):
                check(child, d)
            got = spec.out_dim
            if node.dim != got:
                raise ProgramTypeError(f"{node.name}: node dimension mismatch")
        if want_dim is not None and got != want_dim:
            raise ProgramTypeError(f"expected dimension {want_dim}, got {got}")

    if not isinstance(ast.root, ActionNode):
        raise ProgramTypeError("program root must be an action")
    check(ast.root, None)
