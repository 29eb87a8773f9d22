"""Scenario YAML and behavior-tree XML: parsing, validation, serialization.

Scenario schema (defaults in brackets)::

    name: str                      [omitted]
    map:                           one of
      inline: "<ascii rows>"        '#' occupied, '.' free, first row = top
      file: warehouse.yaml          map-server YAML (image + metadata)
      width: 20 / height: 20        empty map of that size (meters)
      resolution: 0.1  origin: [x, y]
    dt: 0.05  duration: 120  seed: 0
    robot:
      pose: [x, y, yaw]  radius: [0.3]  goal: [x, y]
      policy: {type: static | straight | waypoints | replay, ...}
    agents:
      - id: 1
        pose: [x, y, yaw]
        radius: [0.3]  desired_speed: [1.0]  max_speed: [1.5]
        goals: [[x, y], ...]
        behavior: {preset: regular} | {bt_file: f.xml} | {bt_inline: "<...>"}
        sfm: {mode: default | custom | random, overrides: {k_social: 2.5}, seed: 3}
    groups: [{id: 1, members: [1, 2]}]
    metrics: all | [name, ...]

BT XML dialect: tags are node kinds (Sequence, ReactiveSequence, Fallback,
ReactiveFallback, Parallel, Inverter, Repeat, Timeout) or leaf names,
attributes are typed parameters. Points are written "x,y", point lists
"x,y;x,y", id lists "1,2". An optional ``<BehaviorTree>`` wrapper holds
tree-level attributes such as ``robot_mode``.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from . import bt as btmod
from .behaviors import PRESETS, build_reaction_preset
from .bt import CONTROL_KINDS, CONTROL_PARAMS, DECORATOR_KINDS, FOREVER, BtNode, NodeRegistry
from .sfm import MAX_DT, MODES, RobotMode, SfmParams
from .world import OccupancyGrid, Pose2D

DEFAULT_DT = 0.05
DEFAULT_DURATION = 120.0
POLICY_KINDS = ("static", "straight", "waypoints", "replay")


class ScenarioError(ValueError):
    pass


class BtParseError(ScenarioError):
    def __init__(self, message: str, unknown: Optional[str] = None, path: str = ""):
        super().__init__(message)
        self.unknown = unknown
        self.path = path


# ------------------------------------------------------------- value types


def _parse_value(kind: str, text: str):
    if kind == "str":
        return text
    text = text.strip()
    if kind == "float":
        v = float(text)
        if math.isnan(v):
            raise ValueError("NaN is not allowed")
        return v
    if kind == "int":
        return int(text)
    if kind == "id":
        v = int(text)
        if v < 0:
            raise ValueError("ids are non-negative")
        return v
    if kind == "ids":
        return tuple(_parse_value("id", p) for p in text.split(",") if p.strip())
    if kind == "point":
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError("expected 'x,y'")
        return (float(parts[0]), float(parts[1]))
    if kind == "points":
        return tuple(_parse_value("point", p) for p in text.split(";") if p.strip())
    if kind == "bool":
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError("expected true/false")
    raise ValueError(f"unknown parameter type {kind}")


def _format_value(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind in ("int", "id"):
        return str(int(value))
    if kind == "ids":
        return ",".join(str(int(v)) for v in value)
    if kind == "point":
        return f"{float(value[0])!r},{float(value[1])!r}"
    if kind == "points":
        return ";".join(_format_value("point", p) for p in value)
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


# ---------------------------------------------------------------- BT XML


def _registry(registry):
    return registry or btmod.default_registry()


def parse_bt(xml: str, registry: Optional[NodeRegistry] = None) -> BtNode:
    """Parse the XML dialect into a validated BtNode tree."""
    registry = _registry(registry)
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as e:
        raise BtParseError(f"malformed BT XML: {e}") from None
    meta: dict[str, str] = {}
    path = ""
    if root.tag == "BehaviorTree":
        meta = dict(root.attrib)
        kids = list(root)
        if len(kids) != 1:
            raise BtParseError(f"BehaviorTree must have exactly one root node, got {len(kids)}",
                               path="BehaviorTree")
        if "robot_mode" in meta:
            try:
                RobotMode.parse(meta["robot_mode"])
            except ValueError as e:
                raise BtParseError(f"{e} at BehaviorTree", path="BehaviorTree") from None
        root, path = kids[0], "BehaviorTree"
    node = _parse_element(root, registry, path)
    if meta:
        node = BtNode(node.kind, node.name, node.params, node.children, meta)
    return node


def _parse_element(el: ET.Element, registry: NodeRegistry, parent: str, index: int = 0) -> BtNode:
    tag = el.tag
    path = f"{parent}/{tag}" if parent else tag
    if parent:
        path += f"[{index}]"
    if tag in CONTROL_KINDS or tag in DECORATOR_KINDS:
        schema = CONTROL_PARAMS.get(tag, {})
        params: dict[str, Any] = {}
        for key, raw in el.attrib.items():
            if key not in schema:
                raise BtParseError(f"unknown attribute '{key}' at {path}", path=path)
            if tag == "Repeat" and raw.strip().lower() in ("forever", "-1"):
                params[key] = FOREVER
                continue
            try:
                params[key] = _parse_value(schema[key], raw)
            except ValueError as e:
                raise BtParseError(f"cannot parse {key}={raw!r} as {schema[key]} ({e}) at {path}",
                                   path=path) from None
        children = tuple(_parse_element(c, registry, path, i) for i, c in enumerate(el))
        if tag in DECORATOR_KINDS and len(children) != 1:
            raise BtParseError(
                f"decorator {tag} needs exactly 1 child, got {len(children)} at {path}", path=path)
        node = BtNode(tag, params=params, children=children)
        try:
            btmod.validate(node, registry, parent)
        except btmod.BtValidationError as e:
            raise BtParseError(str(e), path=path) from None
        return node
    spec = registry.resolve(tag)
    if spec is None:
        raise BtParseError(f"unknown BT node '{tag}' at {path}", unknown=tag, path=path)
    if len(el):
        raise BtParseError(f"leaf node {tag} cannot have children at {path}", path=path)
    params = {}
    for key, raw in el.attrib.items():
        if key not in spec.params:
            raise BtParseError(f"unknown attribute '{key}' for {spec.name} at {path}", path=path)
        kind = spec.params[key][0]
        try:
            params[key] = _parse_value(kind, raw)
        except ValueError as e:
            raise BtParseError(f"cannot parse {key}={raw!r} as {kind} ({e}) at {path}",
                               path=path) from None
    missing = [k for k, (_, d) in spec.params.items() if d is btmod.REQUIRED and k not in params]
    if missing:
        raise BtParseError(f"missing attribute(s) {missing} for {spec.name} at {path}", path=path)
    return BtNode(spec.kind, name=spec.name, params=params)


def _to_element(node: BtNode, registry: NodeRegistry) -> ET.Element:
    if node.is_leaf:
        schema = {k: t for k, (t, _) in registry[node.name].params.items()}
    else:
        schema = CONTROL_PARAMS.get(node.kind, {})
    attrib = {}
    for k, v in node.params.items():
        if node.kind == "Repeat" and k == "num_cycles" and v == FOREVER:
            attrib[k] = "forever"
        else:
            attrib[k] = _format_value(schema[k], v)
    el = ET.Element(node.tag, attrib)
    for c in node.children:
        el.append(_to_element(c, registry))
    return el


def serialize_bt(node: BtNode, registry: Optional[NodeRegistry] = None) -> str:
    registry = _registry(registry)
    wrapper = ET.Element("BehaviorTree", dict(node.meta))
    wrapper.append(_to_element(node, registry))
    ET.indent(wrapper)
    return ET.tostring(wrapper, encoding="unicode") + "\n"


# -------------------------------------------------------------- scenario


@dataclass(frozen=True)
class MapSpec:
    inline: Optional[str] = None
    file: Optional[str] = None
    width: Optional[float] = None
    height: Optional[float] = None
    resolution: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)

    def load(self, base_dir: Optional[Path] = None) -> OccupancyGrid:
        origin = Pose2D(self.origin[0], self.origin[1], 0.0)
        if self.inline is not None:
            return OccupancyGrid.from_ascii(self.inline, self.resolution, origin)
        if self.file is not None:
            p = Path(self.file)
            if not p.is_absolute() and base_dir is not None:
                p = Path(base_dir) / p
            return OccupancyGrid.from_map_yaml(p)
        return OccupancyGrid.empty(self.width, self.height, self.resolution, origin)


@dataclass(frozen=True)
class PolicySpec:
    type: str = "static"
    velocity: Optional[tuple[float, float]] = None
    points: tuple[tuple[float, float], ...] = ()
    speed: Optional[float] = None
    file: Optional[str] = None


@dataclass(frozen=True)
class RobotSpec:
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.3
    policy: PolicySpec = PolicySpec()
    goal: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class SfmSpec:
    mode: str = "default"
    overrides: tuple[tuple[str, float], ...] = ()
    seed: Optional[int] = None

    def base_params(self) -> SfmParams:
        p = SfmParams()
        if self.overrides:
            p = p.with_overrides(dict(self.overrides))
        return p


@dataclass(frozen=True)
class AgentSpec:
    id: int
    pose: tuple[float, float, float]
    radius: float = 0.3
    desired_speed: float = 1.0
    max_speed: float = 1.5
    goals: tuple[tuple[float, float], ...] = ()
    behavior: tuple[str, str] = ("preset", "regular")  # (variant, value)
    sfm: SfmSpec = SfmSpec()
    tree: Optional[BtNode] = field(default=None, repr=False)


@dataclass(frozen=True)
class GroupSpec:
    id: int
    members: tuple[int, ...]


@dataclass(frozen=True)
class Scenario:
    map: MapSpec
    robot: RobotSpec
    agents: tuple[AgentSpec, ...]
    dt: float = DEFAULT_DT
    duration: float = DEFAULT_DURATION
    seed: int = 0
    groups: tuple[GroupSpec, ...] = ()
    metrics: Any = "all"  # "all" or tuple of names
    name: Optional[str] = None
    base_dir: Optional[str] = field(default=None, compare=False, repr=False)

    def agent(self, agent_id: int) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def group_of(self, agent_id: int) -> Optional[int]:
        for g in self.groups:
            if agent_id in g.members:
                return g.id
        return None

    def load_grid(self) -> OccupancyGrid:
        return self.map.load(Path(self.base_dir) if self.base_dir else None)


class _Locator:
    """Maps a key path inside the YAML document to a source line."""

    def __init__(self, text: str):
        try:
            self.root = yaml.compose(text)
        except yaml.YAMLError:
            self.root = None

    def line(self, *path) -> Optional[int]:
        node = self.root
        best = node
        for key in path:
            if node is None:
                break
            nxt = None
            if isinstance(node, yaml.MappingNode):
                for k, v in node.value:
                    if k.value == key:
                        nxt = v
                        break
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                nxt = node.value[key]
            if nxt is None:
                break
            node = best = nxt
        return None if best is None else best.start_mark.line + 1

    def where(self, *path) -> str:
        ln = self.line(*path)
        return f" (line {ln})" if ln else ""


def _num(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{what} must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"{what} must be finite")
    return v


def _point(v, what: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValueError(f"{what} must be [x, y], got {v!r}")
    return (_num(v[0], what), _num(v[1], what))


def _pose(v, what: str) -> tuple[float, float, float]:
    if not isinstance(v, (list, tuple)) or len(v) not in (2, 3):
        raise ValueError(f"{what} must be [x, y] or [x, y, yaw], got {v!r}")
    vals = [_num(x, what) for x in v]
    return (vals[0], vals[1], vals[2] if len(vals) == 3 else 0.0)


def _check_keys(d: dict, allowed: set, what: str):
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) {sorted(unknown)} in {what}")


def parse_scenario(text: str, base_dir=None, registry: Optional[NodeRegistry] = None) -> Scenario:
    """Parse and fully validate a scenario, resolving every behavior tree."""
    registry = _registry(registry)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"invalid YAML: {e}") from None
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a YAML mapping")
    loc = _Locator(text)
    base = Path(base_dir) if base_dir is not None else None

    def fail(msg, *path):
        raise ScenarioError(msg + loc.where(*path))

    try:
        _check_keys(raw, {"name", "map", "dt", "duration", "seed", "robot", "agents", "groups",
                          "metrics"}, "scenario")
    except ValueError as e:
        fail(str(e))

    # map
    m = raw.get("map")
    if not isinstance(m, dict):
        fail("map must be a mapping with one of inline/file/width+height", "map")
    try:
        _check_keys(m, {"inline", "file", "width", "height", "resolution", "origin"}, "map")
        sources = [k for k in ("inline", "file") if k in m]
        if ("width" in m) != ("height" in m):
            raise ValueError("map width and height go together")
        if "width" in m:
            sources.append("width")
        if len(sources) != 1:
            raise ValueError("map needs exactly one of inline, file, width/height")
        map_spec = MapSpec(
            inline=str(m["inline"]).strip("\n") if "inline" in m else None,
            file=str(m["file"]) if "file" in m else None,
            width=_num(m["width"], "map width") if "width" in m else None,
            height=_num(m["height"], "map height") if "height" in m else None,
            resolution=_num(m.get("resolution", 0.1), "map resolution"),
            origin=_point(m.get("origin", [0.0, 0.0]), "map origin"),
        )
        if map_spec.resolution <= 0:
            raise ValueError("map resolution must be positive")
        if map_spec.inline is not None:
            OccupancyGrid.from_ascii(map_spec.inline, map_spec.resolution)
    except ValueError as e:
        fail(f"map: {e}", "map")

    # timing
    try:
        dt = _num(raw.get("dt", DEFAULT_DT), "dt")
        duration = _num(raw.get("duration", DEFAULT_DURATION), "duration")
        seed = raw.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ValueError("seed must be an integer")
    except ValueError as e:
        fail(str(e))
    if not 0 < dt <= MAX_DT:
        fail(f"dt={dt} outside (0, {MAX_DT}]", "dt")
    if duration <= 0:
        fail("duration must be positive", "duration")

    # robot
    r = raw.get("robot", {}) or {}
    if not isinstance(r, dict):
        fail("robot must be a mapping", "robot")
    try:
        _check_keys(r, {"pose", "radius", "policy", "goal"}, "robot")
        pol = r.get("policy", {"type": "static"}) or {"type": "static"}
        if not isinstance(pol, dict):
            raise ValueError("robot policy must be a mapping")
        _check_keys(pol, {"type", "velocity", "points", "speed", "file"}, "robot policy")
        ptype = pol.get("type", "static")
        if ptype not in POLICY_KINDS:
            raise ValueError(f"unknown robot policy {ptype!r}")
        policy = PolicySpec(
            type=ptype,
            velocity=_point(pol["velocity"], "policy velocity") if "velocity" in pol else None,
            points=tuple(_point(p, "policy point") for p in pol.get("points", []) or []),
            speed=_num(pol["speed"], "policy speed") if "speed" in pol else None,
            file=str(pol["file"]) if "file" in pol else None,
        )
        if ptype == "straight" and policy.velocity is None:
            raise ValueError("straight policy needs velocity")
        if ptype == "waypoints" and (not policy.points or not policy.speed or policy.speed <= 0):
            raise ValueError("waypoints policy needs points and a positive speed")
        if ptype == "replay" and not policy.file:
            raise ValueError("replay policy needs file")
        robot = RobotSpec(
            pose=_pose(r.get("pose", [0.0, 0.0, 0.0]), "robot pose"),
            radius=_num(r.get("radius", 0.3), "robot radius"),
            policy=policy,
            goal=_point(r["goal"], "robot goal") if r.get("goal") is not None else None,
        )
        if robot.radius <= 0:
            raise ValueError("robot radius must be positive")
    except ValueError as e:
        fail(f"robot: {e}", "robot")

    # agents
    agents_raw = raw.get("agents", []) or []
    if not isinstance(agents_raw, list):
        fail("agents must be a list", "agents")
    agents = []
    seen: set[int] = set()
    for i, a in enumerate(agents_raw):
        if not isinstance(a, dict):
            fail(f"agent entry {i} must be a mapping", "agents", i)
        aid = a.get("id")
        if isinstance(aid, bool) or not isinstance(aid, int) or aid < 0:
            fail(f"agent entry {i}: id must be a non-negative integer", "agents", i)
        if aid in seen:
            fail(f"duplicate agent id {aid}", "agents", i, "id")
        seen.add(aid)
        agents.append(_parse_agent(a, aid, i, loc, base, registry))

    # groups
    groups = []
    member_of: dict[int, int] = {}
    for j, g in enumerate(raw.get("groups", []) or []):
        if not isinstance(g, dict) or "id" not in g or "members" not in g:
            fail(f"group entry {j} needs id and members", "groups", j)
        gid = g["id"]
        members = tuple(g["members"] or [])
        if len(members) < 2:
            fail(f"group {gid} requires ≥2 members", "groups", j)
        for mid in members:
            if mid not in seen:
                fail(f"group {gid} references unknown agent {mid}", "groups", j, "members")
            if mid in member_of:
                fail(f"agent {mid} is in groups {member_of[mid]} and {gid}", "groups", j)
            member_of[mid] = gid
        groups.append(GroupSpec(int(gid), tuple(int(x) for x in members)))

    metrics = raw.get("metrics", "all")
    if metrics != "all":
        if not isinstance(metrics, list) or not all(isinstance(x, str) for x in metrics):
            fail("metrics must be 'all' or a list of names", "metrics")
        from .evaluator import METRICS

        unknown = [x for x in metrics if x not in METRICS]
        if unknown:
            fail(f"unknown metric(s) {unknown}", "metrics")
        metrics = tuple(metrics)

    return Scenario(map=map_spec, robot=robot, agents=tuple(agents), dt=dt, duration=duration,
                    seed=seed, groups=tuple(groups), metrics=metrics,
                    name=raw.get("name"), base_dir=str(base) if base else None)


def _parse_agent(a: dict, aid: int, i: int, loc: _Locator, base, registry) -> AgentSpec:
    def fail(msg, *path):
        raise ScenarioError(f"agent {aid}: {msg}" + loc.where("agents", i, *path))

    try:
        _check_keys(a, {"id", "pose", "radius", "desired_speed", "max_speed", "goals", "behavior",
                        "sfm"}, f"agent {aid}")
    except ValueError as e:
        fail(str(e))
    if "pose" not in a:
        fail("missing pose")
    try:
        pose = _pose(a["pose"], "pose")
    except ValueError as e:
        fail(f"malformed pose: {e}", "pose")
    try:
        radius = _num(a.get("radius", 0.3), "radius")
        v0 = _num(a.get("desired_speed", 1.0), "desired_speed")
        vmax = _num(a.get("max_speed", max(1.5, v0)), "max_speed")
    except ValueError as e:
        fail(str(e))
    if not 0.2 <= radius <= 0.6:
        fail(f"radius {radius} outside [0.2, 0.6]", "radius")
    if v0 <= 0 or vmax <= 0:
        fail("speeds must be positive", "desired_speed")
    if vmax < v0:
        fail("max_speed must be >= desired_speed", "max_speed")
    try:
        goals = tuple(_point(g, "goal") for g in a.get("goals", []) or [])
    except ValueError as e:
        fail(f"malformed goal: {e}", "goals")

    beh = a.get("behavior", {"preset": "regular"})
    if not isinstance(beh, dict) or len(beh) != 1 or next(iter(beh)) not in ("preset", "bt_file", "bt_inline"):
        fail("behavior must have exactly one of preset, bt_file, bt_inline", "behavior")
    variant, value = next(iter(beh.items()))
    value = str(value)
    if variant == "preset":
        if value not in PRESETS:
            fail(f"unknown preset {value!r}", "behavior")
        tree = build_reaction_preset(value, goals or None)
    else:
        if variant == "bt_file":
            p = Path(value)
            if not p.is_absolute() and base is not None:
                p = base / p
            try:
                xml = p.read_text()
            except OSError as e:
                fail(f"cannot read BT file {value}: {e.strerror}", "behavior")
        else:
            xml = value
        try:
            tree = parse_bt(xml, registry)
        except BtParseError as e:
            if e.unknown is not None:
                fail_msg = f"unknown BT node '{e.unknown}' (agent {aid}) at {e.path}"
                raise ScenarioError(fail_msg + loc.where("agents", i, "behavior")) from None
            fail(str(e), "behavior")

    sfm_raw = a.get("sfm", {}) or {}
    if not isinstance(sfm_raw, dict):
        fail("sfm must be a mapping", "sfm")
    try:
        _check_keys(sfm_raw, {"mode", "overrides", "seed"}, "sfm")
        mode = sfm_raw.get("mode", "default")
        if mode not in MODES:
            raise ValueError(f"unknown sfm mode {mode!r}")
        over = sfm_raw.get("overrides", {}) or {}
        if not isinstance(over, dict):
            raise ValueError("sfm overrides must be a mapping")
        overrides = tuple(sorted((str(k), _num(v, f"sfm {k}")) for k, v in over.items()))
        sfm = SfmSpec(mode, overrides, sfm_raw.get("seed"))
        sfm.base_params()
        if sfm.seed is not None and (isinstance(sfm.seed, bool) or not isinstance(sfm.seed, int)):
            raise ValueError("sfm seed must be an integer")
        if mode == "default" and overrides:
            raise ValueError("overrides need mode custom or random")
    except ValueError as e:
        fail(str(e), "sfm")

    return AgentSpec(aid, pose, radius, v0, vmax, goals, (variant, value), sfm, tree)


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    return x


def scenario_to_dict(s: Scenario) -> dict:
    out: dict[str, Any] = {}
    if s.name is not None:
        out["name"] = s.name
    m: dict[str, Any] = {}
    if s.map.inline is not None:
        m["inline"] = s.map.inline + "\n"
    elif s.map.file is not None:
        m["file"] = s.map.file
    else:
        m["width"], m["height"] = s.map.width, s.map.height
    if s.map.resolution != 0.1:
        m["resolution"] = s.map.resolution
    if s.map.origin != (0.0, 0.0):
        m["origin"] = list(s.map.origin)
    out["map"] = m
    if s.dt != DEFAULT_DT:
        out["dt"] = s.dt
    if s.duration != DEFAULT_DURATION:
        out["duration"] = s.duration
    if s.seed != 0:
        out["seed"] = s.seed
    r: dict[str, Any] = {"pose": list(s.robot.pose)}
    if s.robot.radius != 0.3:
        r["radius"] = s.robot.radius
    if s.robot.goal is not None:
        r["goal"] = list(s.robot.goal)
    pol = s.robot.policy
    if pol != PolicySpec():
        p: dict[str, Any] = {"type": pol.type}
        if pol.velocity is not None:
            p["velocity"] = list(pol.velocity)
        if pol.points:
            p["points"] = _plain(pol.points)
        if pol.speed is not None:
            p["speed"] = pol.speed
        if pol.file is not None:
            p["file"] = pol.file
        r["policy"] = p
    out["robot"] = r
    agents = []
    for a in s.agents:
        d: dict[str, Any] = {"id": a.id, "pose": list(a.pose)}
        if a.radius != 0.3:
            d["radius"] = a.radius
        if a.desired_speed != 1.0:
            d["desired_speed"] = a.desired_speed
        if a.max_speed != max(1.5, a.desired_speed):
            d["max_speed"] = a.max_speed
        if a.goals:
            d["goals"] = _plain(a.goals)
        if a.behavior != ("preset", "regular"):
            d["behavior"] = {a.behavior[0]: a.behavior[1]}
        if a.sfm != SfmSpec():
            sd: dict[str, Any] = {"mode": a.sfm.mode}
            if a.sfm.overrides:
                sd["overrides"] = dict(a.sfm.overrides)
            if a.sfm.seed is not None:
                sd["seed"] = a.sfm.seed
            d["sfm"] = sd
        agents.append(d)
    out["agents"] = agents
    if s.groups:
        out["groups"] = [{"id": g.id, "members": list(g.members)} for g in s.groups]
    if s.metrics != "all":
        out["metrics"] = list(s.metrics)
    return out


class _Dumper(yaml.SafeDumper):
    pass


def _str_presenter(dumper, data):
    style = "|" if "\n" in data else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", data, style=style)


_Dumper.add_representer(str, _str_presenter)


def serialize_scenario(s: Scenario) -> str:
    return yaml.dump(scenario_to_dict(s), Dumper=_Dumper, sort_keys=False,
                     default_flow_style=None, allow_unicode=True)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), base_dir=path.parent)


def scenario_filename(map_name: str, tag: str) -> str:
    return f"{map_name}_agents_{tag}.yaml"


def bt_filename(yaml_basename: str, agent_id: int) -> str:
    return f"{yaml_basename}__agent_{agent_id}_bt.xml"


def save_scenario(s: Scenario, directory, map_name: str, tag: str) -> Path:
    """Write ``<map>_agents_<tag>.yaml`` plus one BT XML file per agent.

    Every agent's tree (preset or custom) is written out and the YAML
    refers to it through ``bt_file``.
    """
    from dataclasses import replace

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    yaml_name = scenario_filename(map_name, tag)
    stem = Path(yaml_name).stem
    agents = []
    for a in s.agents:
        fname = bt_filename(stem, a.id)
        (directory / fname).write_text(serialize_bt(a.tree))
        agents.append(replace(a, behavior=("bt_file", fname)))
    out = directory / yaml_name
    out.write_text(serialize_scenario(replace(s, agents=tuple(agents))))
    return out
