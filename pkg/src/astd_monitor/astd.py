"""Interpreted runtime for a small algebra of hierarchical state machines.

Three node kinds compose a finite tree:

* ``Automaton``: named states plus guarded, action-carrying transitions.
* ``Flow``: binary node that offers the same event to both children; every
  child that can execute it does, left child first.
* ``Interleave``: quantified node that keeps one isolated child per value
  of a payload variable, created on first sight.

Every node may declare attributes (state variables) and an optional node
action. Attribute lookup is lexical: a child reads and writes attributes
declared by its ancestors unless it shadows them. Within one event step,
actions run bottom-up: a fired transition's action first, then the node
actions of the enclosing nodes along the executed path.

Guards, actions and attribute initializers are plain callables registered
by name and resolved when the tree is built. Guards and actions receive
``(payload, attrs)``; initializers take no arguments. An event that no
path can execute is a no-op and leaves no trace anywhere in the tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Union

Registry = Mapping[str, Callable]


class BuildError(ValueError):
    """A composition tree references something that does not resolve."""


class DispatchError(KeyError):
    """An event payload is missing the variable an interleave dispatches on."""


# --------------------------------------------------------------------------
# Composition tree (immutable templates)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AttributeDecl:
    name: str
    initializer: str


@dataclass(frozen=True)
class Transition:
    event: str
    source: str
    target: str
    guard: str | None = None
    action: str | None = None


@dataclass(frozen=True)
class Automaton:
    name: str
    states: tuple[str, ...]
    initial: str
    transitions: tuple[Transition, ...]
    attributes: tuple[AttributeDecl, ...] = ()
    action: str | None = None


@dataclass(frozen=True)
class Flow:
    name: str
    left: "AstdNode"
    right: "AstdNode"
    attributes: tuple[AttributeDecl, ...] = ()
    action: str | None = None


@dataclass(frozen=True)
class Interleave:
    name: str
    variable: str
    child: "AstdNode"
    attributes: tuple[AttributeDecl, ...] = ()
    action: str | None = None


AstdNode = Union[Automaton, Flow, Interleave]


@dataclass(frozen=True)
class EventMessage:
    label: str
    payload: Mapping[str, Any]


# --------------------------------------------------------------------------
# Execution report
# --------------------------------------------------------------------------

@dataclass
class ActionRun:
    """One callable executed during a step, in execution order."""

    node: str
    kind: str  # "transition" or "node"
    action: str
    result: Any = None


@dataclass
class FiredTransition:
    node: str
    event: str
    source: str
    target: str


@dataclass
class StepReport:
    executed: bool = False
    fired: list[FiredTransition] = field(default_factory=list)
    actions: list[ActionRun] = field(default_factory=list)


# --------------------------------------------------------------------------
# Attribute scoping
# --------------------------------------------------------------------------

class AttributeScope:
    """Chained attribute store; names resolve to the nearest declaration."""

    __slots__ = ("_values", "_parent")

    def __init__(self, values: dict[str, Any], parent: "AttributeScope | None" = None):
        self._values = values
        self._parent = parent

    def __contains__(self, name: str) -> bool:
        scope: AttributeScope | None = self
        while scope is not None:
            if name in scope._values:
                return True
            scope = scope._parent
        return False

    def __getitem__(self, name: str) -> Any:
        scope: AttributeScope | None = self
        while scope is not None:
            if name in scope._values:
                return scope._values[name]
            scope = scope._parent
        raise KeyError(f"attribute {name!r} is not declared in any enclosing scope")

    def __setitem__(self, name: str, value: Any) -> None:
        scope: AttributeScope | None = self
        while scope is not None:
            if name in scope._values:
                scope._values[name] = value
                return
            scope = scope._parent
        raise KeyError(f"attribute {name!r} is not declared in any enclosing scope")

    def get(self, name: str, default: Any = None) -> Any:
        try:
            return self[name]
        except KeyError:
            return default

    def local_items(self) -> dict[str, Any]:
        """The attributes declared at this level only."""
        return dict(self._values)


# --------------------------------------------------------------------------
# Instances
# --------------------------------------------------------------------------

class AutomatonInstance:
    __slots__ = ("node", "scope", "state", "_registry")

    def __init__(self, node: Automaton, registry: Registry, scope: AttributeScope):
        self.node = node
        self.scope = scope
        self.state = node.initial
        self._registry = registry

    def _select(self, ev: EventMessage) -> Transition | None:
        for tr in self.node.transitions:
            if tr.source != self.state or tr.event != ev.label:
                continue
            if tr.guard is None or self._registry[tr.guard](ev.payload, self.scope):
                return tr
        return None

    def _can(self, ev: EventMessage) -> bool:
        return self._select(ev) is not None

    def _step(self, ev: EventMessage, report: StepReport) -> bool:
        tr = self._select(ev)
        if tr is None:
            return False
        if tr.action is not None:
            result = self._registry[tr.action](ev.payload, self.scope)
            report.actions.append(ActionRun(self.node.name, "transition", tr.action, result))
        self.state = tr.target
        report.fired.append(FiredTransition(self.node.name, ev.label, tr.source, tr.target))
        _run_node_action(self.node, self._registry, self.scope, ev, report)
        return True


class FlowInstance:
    __slots__ = ("node", "scope", "left", "right", "_registry")

    def __init__(self, node: Flow, registry: Registry, scope: AttributeScope):
        self.node = node
        self.scope = scope
        self._registry = registry
        self.left = _instantiate(node.left, registry, scope)
        self.right = _instantiate(node.right, registry, scope)

    def _can(self, ev: EventMessage) -> bool:
        return self.left._can(ev) or self.right._can(ev)

    def _step(self, ev: EventMessage, report: StepReport) -> bool:
        # Left child always goes first; the right child's guards see any
        # attribute writes the left child made during this same step.
        ran_left = self.left._step(ev, report)
        ran_right = self.right._step(ev, report)
        if ran_left or ran_right:
            _run_node_action(self.node, self._registry, self.scope, ev, report)
            return True
        return False


class InterleaveInstance:
    __slots__ = ("node", "scope", "children", "_registry", "_probe")

    def __init__(self, node: Interleave, registry: Registry, scope: AttributeScope):
        self.node = node
        self.scope = scope
        self._registry = registry
        self.children: dict[Any, Any] = {}
        self._probe = None

    def ensure_child(self, value: Any):
        """Get or create the persistent child bound to ``value``."""
        child = self.children.get(value)
        if child is None:
            child = _instantiate(self.node.child, self._registry, self.scope)
            self.children[value] = child
        return child

    def evict(self, value: Any) -> bool:
        """Drop the child bound to ``value``. Never called by the runtime."""
        return self.children.pop(value, None) is not None

    def _fresh_probe(self):
        # A pristine child used only for executability queries; it is never
        # stepped, so reusing one instance is safe.
        if self._probe is None:
            self._probe = _instantiate(self.node.child, self._registry, self.scope)
        return self._probe

    def _can(self, ev: EventMessage) -> bool:
        if self.node.variable not in ev.payload:
            return False
        child = self.children.get(ev.payload[self.node.variable])
        if child is None:
            child = self._fresh_probe()
        return child._can(ev)

    def _step(self, ev: EventMessage, report: StepReport) -> bool:
        try:
            value = ev.payload[self.node.variable]
        except KeyError:
            raise DispatchError(
                f"event {ev.label!r} has no {self.node.variable!r} in its payload"
            ) from None
        child = self.children.get(value)
        fresh = child is None
        if fresh:
            child = _instantiate(self.node.child, self._registry, self.scope)
        executed = child._step(ev, report)
        if executed:
            if fresh:
                self.children[value] = child
            _run_node_action(self.node, self._registry, self.scope, ev, report)
        # A fresh child that refused the event is discarded: refusal leaves
        # no trace.
        return executed


AstdInstance = Union[AutomatonInstance, FlowInstance, InterleaveInstance]


def _run_node_action(node: AstdNode, registry: Registry, scope: AttributeScope,
                     ev: EventMessage, report: StepReport) -> None:
    if node.action is not None:
        result = registry[node.action](ev.payload, scope)
        report.actions.append(ActionRun(node.name, "node", node.action, result))


# --------------------------------------------------------------------------
# Build and drive
# --------------------------------------------------------------------------

def _check_ref(registry: Registry, name: str, role: str, node: AstdNode) -> None:
    if name not in registry:
        raise BuildError(f"unresolved {role} {name!r} in node {node.name!r}")
    if not callable(registry[name]):
        raise BuildError(f"{role} {name!r} in node {node.name!r} is not callable")


def _validate(node: AstdNode, registry: Registry) -> None:
    names = [decl.name for decl in node.attributes]
    if len(set(names)) != len(names):
        raise BuildError(f"duplicate attribute names in node {node.name!r}")
    for decl in node.attributes:
        _check_ref(registry, decl.initializer, "initializer", node)
    if node.action is not None:
        _check_ref(registry, node.action, "action", node)

    if isinstance(node, Automaton):
        if not node.states:
            raise BuildError(f"automaton {node.name!r} has no states")
        if node.initial not in node.states:
            raise BuildError(f"automaton {node.name!r} initial state {node.initial!r} unknown")
        for tr in node.transitions:
            if tr.source not in node.states or tr.target not in node.states:
                raise BuildError(
                    f"automaton {node.name!r} transition {tr.source!r}->{tr.target!r} "
                    f"uses an unknown state"
                )
            if tr.guard is not None:
                _check_ref(registry, tr.guard, "guard", node)
            if tr.action is not None:
                _check_ref(registry, tr.action, "action", node)
    elif isinstance(node, Flow):
        _validate(node.left, registry)
        _validate(node.right, registry)
    elif isinstance(node, Interleave):
        if not node.variable:
            raise BuildError(f"interleave {node.name!r} has an empty variable name")
        _validate(node.child, registry)
    else:
        raise BuildError(f"unknown node kind: {node!r}")


def _instantiate(node: AstdNode, registry: Registry, parent: AttributeScope | None):
    scope = AttributeScope(
        {decl.name: registry[decl.initializer]() for decl in node.attributes},
        parent,
    )
    if isinstance(node, Automaton):
        return AutomatonInstance(node, registry, scope)
    if isinstance(node, Flow):
        return FlowInstance(node, registry, scope)
    return InterleaveInstance(node, registry, scope)


def build(spec: AstdNode, registry: Registry) -> AstdInstance:
    """Validate a composition tree and return a fresh runnable instance.

    All guard, action and initializer references must resolve in
    ``registry``; the first missing one is reported by name.
    """
    _validate(spec, registry)
    return _instantiate(spec, registry, None)


def can_execute(instance: AstdInstance, ev: EventMessage) -> bool:
    """Whether some path in the tree would execute ``ev``. Never mutates."""
    return instance._can(ev)


def step(instance: AstdInstance, ev: EventMessage) -> StepReport:
    """Deliver one event and report every transition and action it ran."""
    report = StepReport()
    report.executed = instance._step(ev, report)
    return report
