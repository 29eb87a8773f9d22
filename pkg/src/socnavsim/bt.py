"""Behavior-tree interpreter.

``BtNode`` is the plain, comparable description of a tree (what the XML
parser produces). ``BehaviorTree`` compiles it against a leaf registry into
runtime nodes that carry the tick memory (running child, repeat counters,
timers). Leaves get a ``LeafContext`` and return a ``Status``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

from .world import AgentState, WorldSnapshot

SPEECH_TTL = 5.0  # seconds an utterance counts as "currently speaking"
TIME_EPS = 1e-9


class Status(enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"


SUCCESS, FAILURE, RUNNING = Status.SUCCESS, Status.FAILURE, Status.RUNNING

CONTROL_KINDS = ("Sequence", "ReactiveSequence", "Fallback", "ReactiveFallback", "Parallel")
DECORATOR_KINDS = ("Inverter", "Repeat", "Timeout")
LEAF_KINDS = ("Action", "Condition")

# typed parameters of the non-leaf kinds
CONTROL_PARAMS = {
    "Parallel": {"success_threshold": "int"},
    "Repeat": {"num_cycles": "int"},
    "Timeout": {"seconds": "float"},
}
FOREVER = -1


class BtValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=True)
class BtNode:
    kind: str
    name: str = ""
    params: Mapping[str, Any] = field(default_factory=dict)
    children: tuple["BtNode", ...] = ()
    meta: Mapping[str, str] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return self.kind in LEAF_KINDS

    @property
    def tag(self) -> str:
        return self.name if self.is_leaf else self.kind

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaf_names(self) -> set[str]:
        return {n.name for n in self.walk() if n.is_leaf}


# Small constructors, handy for presets and tests.
def sequence(*children: BtNode) -> BtNode:
    return BtNode("Sequence", children=tuple(children))


def reactive_sequence(*children: BtNode) -> BtNode:
    return BtNode("ReactiveSequence", children=tuple(children))


def fallback(*children: BtNode) -> BtNode:
    return BtNode("Fallback", children=tuple(children))


def reactive_fallback(*children: BtNode) -> BtNode:
    return BtNode("ReactiveFallback", children=tuple(children))


def parallel(threshold: int, *children: BtNode) -> BtNode:
    return BtNode("Parallel", params={"success_threshold": threshold}, children=tuple(children))


def inverter(child: BtNode) -> BtNode:
    return BtNode("Inverter", children=(child,))


def repeat(child: BtNode, n: int = FOREVER) -> BtNode:
    return BtNode("Repeat", params={"num_cycles": n}, children=(child,))


def timeout(child: BtNode, seconds: float) -> BtNode:
    return BtNode("Timeout", params={"seconds": float(seconds)}, children=(child,))


def action(name: str, **params) -> BtNode:
    return BtNode("Action", name=name, params=params)


def condition(name: str, **params) -> BtNode:
    return BtNode("Condition", name=name, params=params)


# ---------------------------------------------------------------- blackboard


@dataclass(frozen=True)
class Utterance:
    t: float
    speaker_id: int
    message: str


class SpeechChannel:
    """Append-only log shared by all agents."""

    def __init__(self):
        self._entries: list[Utterance] = []

    def say(self, t: float, speaker_id: int, message: str) -> Utterance:
        if self._entries and t < self._entries[-1].t:
            raise ValueError("speech timestamps must be non-decreasing")
        u = Utterance(float(t), int(speaker_id), str(message))
        self._entries.append(u)
        return u

    @property
    def entries(self) -> tuple[Utterance, ...]:
        return tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def active(self, now: float, speaker_id: Optional[int] = None,
               message: Optional[str] = None, ttl: float = SPEECH_TTL,
               include_now: bool = True) -> bool:
        """Whether a matching utterance is at most ``ttl`` seconds old."""
        for u in reversed(self._entries):
            if now - u.t > ttl + TIME_EPS:
                break
            if u.t > now + TIME_EPS or (not include_now and u.t > now - TIME_EPS):
                continue
            if speaker_id is not None and u.speaker_id != speaker_id:
                continue
            if message is not None and u.message != message:
                continue
            return True
        return False


class Blackboard(dict):
    """Per-agent key/value store with a handle on the shared speech channel."""

    def __init__(self, agent_id: int, speech: Optional[SpeechChannel] = None, **kw):
        super().__init__(**kw)
        self.agent_id = agent_id
        self.speech = speech if speech is not None else SpeechChannel()


# ------------------------------------------------------------------ leaves


@dataclass
class LeafContext:
    agent_id: int
    bb: Blackboard
    view: WorldSnapshot
    params: Mapping[str, Any]
    mem: dict
    path: str
    emit: Callable[[str, str, str], None]

    @property
    def t(self) -> float:
        return self.view.t

    @property
    def me(self) -> AgentState:
        return self.view.agent(self.agent_id)

    def elapsed(self) -> float:
        """Seconds since this leaf's first tick after its last reset."""
        start = self.mem.setdefault("t_start", self.view.t)
        return self.view.t - start


@dataclass(frozen=True)
class LeafSpec:
    name: str
    kind: str  # "Action" | "Condition"
    fn: Callable[[LeafContext], Status]
    params: Mapping[str, tuple] = field(default_factory=dict)  # name -> (type, default)
    keep_memory: bool = False
    doc: str = ""


REQUIRED = object()


class NodeRegistry:
    def __init__(self):
        self._specs: dict[str, LeafSpec] = {}
        self.aliases: dict[str, str] = {}

    def register(self, spec: LeafSpec) -> LeafSpec:
        if spec.name in self._specs:
            raise ValueError(f"leaf {spec.name!r} already registered")
        self._specs[spec.name] = spec
        return spec

    def leaf(self, kind: str, name: Optional[str] = None, keep_memory: bool = False, **params):
        """Decorator registering ``fn(ctx) -> Status`` as a leaf node."""

        def deco(fn):
            self.register(LeafSpec(name or fn.__name__, kind, fn, params, keep_memory,
                                   (fn.__doc__ or "").strip()))
            return fn

        return deco

    def resolve(self, name: str) -> Optional[LeafSpec]:
        return self._specs.get(self.aliases.get(name, name))

    def canonical(self, name: str) -> str:
        return self.aliases.get(name, name)

    def __contains__(self, name: str) -> bool:
        return self.resolve(name) is not None

    def __iter__(self):
        return iter(sorted(self._specs))

    def __getitem__(self, name: str) -> LeafSpec:
        spec = self.resolve(name)
        if spec is None:
            raise KeyError(name)
        return spec

    def __len__(self):
        return len(self._specs)


def default_registry() -> NodeRegistry:
    from .behaviors import REGISTRY

    return REGISTRY


def validate(node: BtNode, registry: Optional[NodeRegistry] = None, path: str = "") -> None:
    """Structural checks plus leaf-name resolution; raises BtValidationError."""
    registry = registry or default_registry()
    path = f"{path}/{node.tag}" if path else node.tag
    if node.is_leaf:
        spec = registry.resolve(node.name)
        if spec is None:
            raise BtValidationError(f"unknown BT node '{node.name}' at {path}")
        if node.children:
            raise BtValidationError(f"leaf node has children at {path}")
        unknown = set(node.params) - set(spec.params)
        if unknown:
            raise BtValidationError(f"unknown parameter(s) {sorted(unknown)} at {path}")
        missing = [k for k, (_, d) in spec.params.items() if d is REQUIRED and k not in node.params]
        if missing:
            raise BtValidationError(f"missing parameter(s) {missing} at {path}")
        return
    if node.kind in DECORATOR_KINDS:
        if len(node.children) != 1:
            raise BtValidationError(
                f"decorator {node.kind} needs exactly 1 child, got {len(node.children)} at {path}")
    elif node.kind in CONTROL_KINDS:
        if not node.children:
            raise BtValidationError(f"{node.kind} without children at {path}")
    else:
        raise BtValidationError(f"unknown node kind '{node.kind}' at {path}")
    if node.kind == "Parallel":
        thr = node.params.get("success_threshold", len(node.children))
        if not 1 <= thr <= len(node.children):
            raise BtValidationError(f"Parallel threshold {thr} outside [1, {len(node.children)}] at {path}")
    if node.kind == "Timeout" and node.params.get("seconds", 0) <= 0:
        raise BtValidationError(f"Timeout needs seconds > 0 at {path}")
    if node.kind == "Repeat":
        n = node.params.get("num_cycles", FOREVER)
        if n != FOREVER and n < 1:
            raise BtValidationError(f"Repeat num_cycles must be >= 1 or forever at {path}")
    for i, c in enumerate(node.children):
        validate(c, registry, f"{path}[{i}]")


# ----------------------------------------------------------------- runtime


class _Node:
    def __init__(self, desc: BtNode, path: str):
        self.desc = desc
        self.path = path

    def tick(self, ctx) -> Status:
        raise NotImplementedError

    def reset(self) -> None:
        pass


class _Composite(_Node):
    def __init__(self, desc, path, children):
        super().__init__(desc, path)
        self.children = children
        self.idx = 0

    def reset(self):
        self.idx = 0
        for c in self.children:
            c.reset()


class _Sequence(_Composite):
    # with memory: resumes at the running child
    stop_on = FAILURE

    def tick(self, ctx):
        while self.idx < len(self.children):
            st = self.children[self.idx].tick(ctx)
            if st is RUNNING:
                return RUNNING
            if st is self.stop_on:
                self.reset()
                return st
            self.idx += 1
        self.reset()
        return SUCCESS if self.stop_on is FAILURE else FAILURE


class _Fallback(_Sequence):
    stop_on = SUCCESS


class _ReactiveSequence(_Composite):
    stop_on = FAILURE

    def tick(self, ctx):
        for i, child in enumerate(self.children):
            st = child.tick(ctx)
            if st is RUNNING or st is self.stop_on:
                # children after i lose their turn; halt any still running
                for later in self.children[i + 1:]:
                    later.reset()
                if st is not RUNNING:
                    self.reset()
                return st
        self.reset()
        return SUCCESS if self.stop_on is FAILURE else FAILURE


class _ReactiveFallback(_ReactiveSequence):
    stop_on = SUCCESS


class _Parallel(_Composite):
    def __init__(self, desc, path, children):
        super().__init__(desc, path, children)
        self.threshold = desc.params.get("success_threshold", len(children))
        self.done: dict[int, Status] = {}

    def reset(self):
        self.done = {}
        super().reset()

    def tick(self, ctx):
        for i, child in enumerate(self.children):
            if i in self.done:
                continue
            st = child.tick(ctx)
            if st is not RUNNING:
                self.done[i] = st
        succ = sum(1 for s in self.done.values() if s is SUCCESS)
        fail = sum(1 for s in self.done.values() if s is FAILURE)
        if succ >= self.threshold:
            self.reset()
            return SUCCESS
        if fail > len(self.children) - self.threshold:
            self.reset()
            return FAILURE
        return RUNNING


class _Inverter(_Composite):
    def tick(self, ctx):
        st = self.children[0].tick(ctx)
        if st is SUCCESS:
            return FAILURE
        if st is FAILURE:
            return SUCCESS
        return RUNNING


class _Repeat(_Composite):
    """Re-enters its child after each SUCCESS (on the next tick) until
    ``num_cycles`` successes; child FAILURE fails the repeat."""

    def __init__(self, desc, path, children):
        super().__init__(desc, path, children)
        self.n = desc.params.get("num_cycles", FOREVER)
        self.count = 0

    def reset(self):
        self.count = 0
        super().reset()

    def tick(self, ctx):
        st = self.children[0].tick(ctx)
        if st is RUNNING:
            return RUNNING
        if st is FAILURE:
            self.reset()
            return FAILURE
        self.count += 1
        self.children[0].reset()
        if self.n != FOREVER and self.count >= self.n:
            self.reset()
            return SUCCESS
        return RUNNING


class _Timeout(_Composite):
    def __init__(self, desc, path, children):
        super().__init__(desc, path, children)
        self.limit = float(desc.params["seconds"])
        self.t_start: Optional[float] = None

    def reset(self):
        self.t_start = None
        super().reset()

    def tick(self, ctx):
        if self.t_start is None:
            self.t_start = ctx.view.t
        st = self.children[0].tick(ctx)
        if st is not RUNNING:
            self.reset()
            return st
        if ctx.view.t - self.t_start >= self.limit - TIME_EPS:
            self.reset()
            ctx.emit(self.path, "timeout", "")
            return FAILURE
        return RUNNING


class _Leaf(_Node):
    def __init__(self, desc, path, spec: LeafSpec):
        super().__init__(desc, path)
        self.spec = spec
        self.params = {k: d for k, (_, d) in spec.params.items() if d is not REQUIRED}
        self.params.update(desc.params)
        self.mem: dict = {}
        self.active = False
        self.last: Optional[Status] = None
        self.latched: Optional[Status] = None  # keep_memory actions after completion

    def reset(self):
        if self.active and self.spec.kind == "Action":
            self._emit_fn(self.spec.name, "halted")
        self.mem = {}
        self.active = False
        self.latched = None
        # a condition keeps ``last`` so events mark changes, not re-evaluations

    _emit_fn = staticmethod(lambda name, detail: None)

    def tick(self, ctx):
        lc = LeafContext(ctx.agent_id, ctx.bb, ctx.view, self.params, self.mem, self.path,
                         ctx.emit)
        is_action = self.spec.kind == "Action"
        if is_action and not self.active and self.latched is None:
            ctx.emit(self.spec.name, "start", "")
        self.active = True
        st = self.spec.fn(lc)
        if not isinstance(st, Status):
            raise TypeError(f"leaf {self.spec.name} returned {st!r}")
        if is_action:
            if st is RUNNING and self.latched is not None:
                ctx.emit(self.spec.name, "start", "")
                self.latched = None
            elif st is not RUNNING and st is not self.latched:
                ctx.emit(self.spec.name, st.value.lower(), "")
        elif st is not self.last:
            ctx.emit(self.spec.name, st.value.lower(), "")
        self.last = st
        if st is not RUNNING:
            self.active = False
            if self.spec.keep_memory:
                if is_action:
                    self.latched = st
            else:
                self.mem = {}
                self.last = st if not is_action else None
        return st


_RUNTIME = {
    "Sequence": _Sequence,
    "Fallback": _Fallback,
    "ReactiveSequence": _ReactiveSequence,
    "ReactiveFallback": _ReactiveFallback,
    "Parallel": _Parallel,
    "Inverter": _Inverter,
    "Repeat": _Repeat,
    "Timeout": _Timeout,
}


@dataclass
class _TickCtx:
    agent_id: int
    bb: Blackboard
    view: WorldSnapshot
    emit: Callable


class BehaviorTree:
    """A compiled tree with tick memory, owned by one agent."""

    def __init__(self, root: BtNode, registry: Optional[NodeRegistry] = None):
        self.registry = registry or default_registry()
        validate(root, self.registry)
        self.root_desc = root
        self._leaves: list[_Leaf] = []
        self.root = self._build(root, root.tag)
        self.ticks = 0
        self._sink: Optional[Callable] = None

    def _build(self, desc: BtNode, path: str) -> _Node:
        if desc.is_leaf:
            leaf = _Leaf(desc, path, self.registry[desc.name])
            leaf._emit_fn = self._emit_halt
            self._leaves.append(leaf)
            return leaf
        children = [self._build(c, f"{path}/{c.tag}[{i}]") for i, c in enumerate(desc.children)]
        return _RUNTIME[desc.kind](desc, path, children)

    def _emit_halt(self, name, detail):
        if self._sink is not None:
            self._sink(name, detail, "")

    def tick(self, bb: Blackboard, view: WorldSnapshot, agent_id: Optional[int] = None,
             on_event: Optional[Callable[[str, str, str], None]] = None) -> Status:
        """Tick once. ``on_event(name, event, detail)`` receives leaf
        start/success/failure/halted events."""
        agent_id = bb.agent_id if agent_id is None else agent_id
        sink = on_event or (lambda *a: None)
        self._sink = sink
        try:
            st = self.root.tick(_TickCtx(agent_id, bb, view, sink))
        finally:
            self._sink = None
        self.ticks += 1
        return st

    def reset(self) -> None:
        self.root.reset()


def tick(tree: BehaviorTree, bb: Blackboard, view: WorldSnapshot, agent_id=None, on_event=None) -> Status:
    return tree.tick(bb, view, agent_id, on_event)


def reset(tree: BehaviorTree) -> None:
    tree.reset()
