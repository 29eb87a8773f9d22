"""Fixed-timestep simulation engine, scripted robot policies and ``run``.

One step reads snapshot k and produces snapshot k+1:

1. the robot is advanced by its policy (or by the bridge client),
2. every agent's behavior tree ticks on snapshot k,
3. every agent's social-force step runs on snapshot k,
4. snapshot k+1 is recorded.

Agents never see each other's step-k+1 state, so the update order inside a
step does not matter. Time is ``k * dt`` rounded to 1e-9 s, never accumulated.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

from .behaviors import HOLD_RADIUS
from .bt import Blackboard, BehaviorTree, SpeechChannel, Status, default_registry
from .evaluator import (
    ROBOT_ID,
    MetricsReport,
    Recorder,
    TrajectoryLog,
    evaluate,
    scenario_hash,
    write_report,
)
from .scenario_io import PolicySpec, Scenario, ScenarioError, load_scenario, parse_scenario
from .sfm import DegeneracyCounter, RobotMode, SfmParams, sample_params, step_agent
from .world import AgentState, BehaviorStatus, Pose2D, RobotState, WorldSnapshot, dist, groups_in

MASK64 = 0xFFFFFFFFFFFFFFFF
ROBOT_GOAL_TOLERANCE = 0.3
ANIMATION = {
    BehaviorStatus.IDLE: "wait",
    BehaviorStatus.WAITING: "wait",
    BehaviorStatus.NAVIGATING: "walk",
    BehaviorStatus.INTERACTING: "talk",
}


class SimulationError(RuntimeError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def agent_seed(seed: int, agent_id: int) -> int:
    """Noise seed of one agent; depends only on (run seed, agent id)."""
    return splitmix64(splitmix64(seed & MASK64) ^ agent_id)


# ---------------------------------------------------------------- policies


class RobotPolicy:
    """Scripted robot motion: a pure function of time."""

    def __init__(self, spec: PolicySpec, start: Pose2D, radius: float, base_dir=None):
        self.spec = spec
        self.start = start
        self.radius = radius
        kind = spec.type
        if kind == "straight":
            if spec.velocity is None:
                raise ValueError("straight policy needs a velocity")
        elif kind == "waypoints":
            if not spec.points or not spec.speed or spec.speed <= 0:
                raise ValueError("waypoints policy needs points and a positive speed")
            self._path = [start.position, *spec.points]
            self._cum = [0.0]
            for a, b in zip(self._path, self._path[1:]):
                self._cum.append(self._cum[-1] + dist(a, b))
        elif kind == "replay":
            if not spec.file:
                raise ValueError("replay policy needs a file")
            p = Path(spec.file)
            if not p.is_absolute() and base_dir is not None:
                p = Path(base_dir) / p
            self._rows = read_replay(p)
        elif kind != "static":
            raise ValueError(f"unknown robot policy {kind!r}")

    @property
    def goal(self) -> Optional[tuple[float, float]]:
        if self.spec.type == "waypoints":
            return tuple(self.spec.points[-1])
        return None

    def state_at(self, t: float) -> RobotState:
        kind = self.spec.type
        s = self.start
        if kind == "static":
            return RobotState(s, (0.0, 0.0), self.radius)
        if kind == "straight":
            vx, vy = self.spec.velocity
            yaw = math.atan2(vy, vx) if (vx or vy) else s.yaw
            return RobotState(Pose2D(s.x + vx * t, s.y + vy * t, yaw), (vx, vy), self.radius)
        if kind == "waypoints":
            return self._waypoint_state(t)
        return self._replay_state(t)

    def _waypoint_state(self, t: float) -> RobotState:
        speed = self.spec.speed
        s = speed * t
        path, cum = self._path, self._cum
        if s >= cum[-1]:
            a, b = path[-2], path[-1]
            yaw = math.atan2(b[1] - a[1], b[0] - a[0]) if a != b else self.start.yaw
            return RobotState(Pose2D(b[0], b[1], yaw), (0.0, 0.0), self.radius)
        i = bisect_right(cum, s) - 1
        a, b = path[i], path[i + 1]
        seg = cum[i + 1] - cum[i]
        u = (s - cum[i]) / seg
        ux, uy = (b[0] - a[0]) / seg, (b[1] - a[1]) / seg
        pose = Pose2D(a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), math.atan2(uy, ux))
        return RobotState(pose, (speed * ux, speed * uy), self.radius)

    def _replay_state(self, t: float) -> RobotState:
        rows = self._rows
        ts = [r[0] for r in rows]
        if t <= ts[0]:
            r = rows[0]
            return RobotState(Pose2D(r[1], r[2], r[3]), (r[4], r[5]), self.radius)
        if t >= ts[-1]:
            r = rows[-1]
            return RobotState(Pose2D(r[1], r[2], r[3]), (r[4], r[5]), self.radius)
        i = bisect_right(ts, t) - 1
        a, b = rows[i], rows[i + 1]
        if t == a[0]:
            return RobotState(Pose2D(a[1], a[2], a[3]), (a[4], a[5]), self.radius)
        u = (t - a[0]) / (b[0] - a[0])
        lerp = lambda k: a[k] + u * (b[k] - a[k])  # noqa: E731
        yaw = a[3] + u * math.remainder(b[3] - a[3], 2 * math.pi)
        return RobotState(Pose2D(lerp(1), lerp(2), yaw), (lerp(4), lerp(5)), self.radius)


def read_replay(path) -> list[tuple[float, ...]]:
    """Rows (t, x, y, yaw, vx, vy) from a replay CSV.

    Accepts a bare ``t,x,y[,yaw][,vx,vy]`` file or a trajectories.csv, in
    which case the robot rows (id -1) are used. Missing velocities come
    from finite differences.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        raw = []
        for row in reader:
            if "id" in row and int(row["id"]) != ROBOT_ID:
                continue
            raw.append(row)
    if not raw:
        raise ValueError(f"{path}: no robot rows")
    rows = []
    for r in raw:
        rows.append([float(r["t"]), float(r["x"]), float(r["y"]), float(r.get("yaw") or 0.0),
                     float(r["vx"]) if r.get("vx") else None,
                     float(r["vy"]) if r.get("vy") else None])
    rows.sort(key=lambda r: r[0])
    for i, r in enumerate(rows):
        if r[4] is None or r[5] is None:
            j, k = (i, i + 1) if i + 1 < len(rows) else (i - 1, i)
            if j < 0:
                r[4] = r[5] = 0.0
            else:
                span = rows[k][0] - rows[j][0]
                r[4] = (rows[k][1] - rows[j][1]) / span
                r[5] = (rows[k][2] - rows[j][2]) / span
    return [tuple(r) for r in rows]


def parse_policy(text: str) -> PolicySpec:
    """CLI form: ``static``, ``straight:VX,VY``, ``waypoints:X,Y;X,Y@SPEED``,
    ``replay:FILE``."""
    kind, _, arg = text.partition(":")
    try:
        if kind == "static" and not arg:
            return PolicySpec("static")
        if kind == "straight":
            vx, vy = (float(v) for v in arg.split(","))
            return PolicySpec("straight", velocity=(vx, vy))
        if kind == "waypoints":
            pts, _, speed = arg.partition("@")
            points = tuple(tuple(float(v) for v in p.split(",")) for p in pts.split(";"))
            if any(len(p) != 2 for p in points):
                raise ValueError
            return PolicySpec("waypoints", points=points, speed=float(speed))
        if kind == "replay" and arg:
            return PolicySpec("replay", file=arg)
    except ValueError:
        pass
    raise ValueError(f"bad robot policy {text!r}")


# ------------------------------------------------------------------ engine


def step_time(k: int, dt: float) -> float:
    """Time of snapshot k, rounded so logs read 0.15 rather than 0.15000000000000002."""
    return round(k * dt, 9)


def _agent_params(spec, seed: int) -> SfmParams:
    mode = spec.sfm.mode
    if mode == "default":
        return SfmParams()
    base = spec.sfm.base_params()
    if mode == "custom":
        return replace(base, mode="custom")
    s = spec.sfm.seed if spec.sfm.seed is not None else agent_seed(seed, spec.id)
    return sample_params(base, s)


class Engine:
    """Owns agent states, their trees and the trajectory log.

    Drive it with ``observe`` (record the world at time t, optionally
    adopting externally supplied states) followed by ``advance`` (tick and
    step every agent on that snapshot).
    """

    def __init__(self, scenario: Scenario, seed: Optional[int] = None, dt: Optional[float] = None,
                 registry=None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.dt = scenario.dt if dt is None else dt
        if not 0.0 < self.dt <= 0.2:
            raise ValueError(f"dt={self.dt} outside (0, 0.2]")
        self.grid = scenario.load_grid()
        registry = registry or default_registry()
        self.speech = SpeechChannel()
        self.params: dict[int, SfmParams] = {}
        self.modes: dict[int, RobotMode] = {}
        self.trees: dict[int, BehaviorTree] = {}
        self.boards: dict[int, Blackboard] = {}
        self.done: set[int] = set()
        states = []
        for spec in sorted(scenario.agents, key=lambda a: a.id):
            self.params[spec.id] = _agent_params(spec, self.seed)
            self.modes[spec.id] = RobotMode.parse(spec.tree.meta.get("robot_mode", "as_pedestrian"))
            self.trees[spec.id] = BehaviorTree(spec.tree, registry)
            self.boards[spec.id] = Blackboard(spec.id, self.speech)
            states.append(AgentState(
                spec.id, Pose2D(*spec.pose), (0.0, 0.0), spec.desired_speed, spec.max_speed,
                spec.radius, group_id=scenario.group_of(spec.id), goals=spec.goals))
        self.pending: list[AgentState] = states
        self.robot_radius = scenario.robot.radius
        self.robot_goal = scenario.robot.goal
        self.robot_goal_reached = False
        self.log = TrajectoryLog(self.dt, grid=self.grid)
        self.recorder = Recorder()
        self.counter = DegeneracyCounter()
        self.current: Optional[WorldSnapshot] = None
        self.last_status: dict[int, Status] = {}

    # -- recording

    def _header_events(self, t: float):
        log = self.log
        log.event(t, ROBOT_ID, "run", "dt", repr(self.dt))
        log.event(t, ROBOT_ID, "spawn", "robot", repr(self.robot_radius))
        if self.robot_goal is not None:
            log.event(t, ROBOT_ID, "robot_goal", "", f"{self.robot_goal[0]!r},{self.robot_goal[1]!r}")
        for a in self.pending:
            log.event(t, a.id, "spawn", "agent", repr(a.radius))

    def observe(self, t: float, robot: RobotState, adopt: Optional[dict] = None) -> WorldSnapshot:
        """Record the world at time ``t``. ``adopt`` maps agent id to
        (pose, velocity) reported by an external simulator."""
        if self.current is not None and t <= self.current.t:
            raise ValueError("non-monotonic time")
        if self.current is None:
            self._header_events(t)
        agents = self.pending
        if adopt:
            known = {a.id for a in agents}
            unknown = sorted(set(adopt) - known)
            if unknown:
                raise KeyError(f"unknown agent id {unknown[0]}")
            agents = [replace(a, pose=adopt[a.id][0], velocity=adopt[a.id][1]) if a.id in adopt else a
                      for a in agents]
        snap = WorldSnapshot(float(t), robot, tuple(agents), self.grid)
        self.log.append(snap)
        self.current = snap
        if (self.robot_goal is not None and not self.robot_goal_reached
                and dist(robot.position, self.robot_goal) <= ROBOT_GOAL_TOLERANCE):
            self.robot_goal_reached = True
            self.log.event(t, ROBOT_ID, "robot_goal_reached")
        return snap

    def record(self, cmd: str):
        """Open or close a metrics window at the current time."""
        if self.current is None:
            raise ValueError("nothing observed yet")
        t = self.current.t
        self.recorder.control(cmd, t)
        self.log.event(t, ROBOT_ID, f"record_{cmd}")

    # -- stepping

    def _tick(self, agent: AgentState, snap: WorldSnapshot) -> AgentState:
        aid = agent.id
        bb = self.boards[aid]
        if aid in self.done:
            return agent
        log, t = self.log, snap.t

        def on_event(name, event, detail):
            log.event(t, aid, event, name, detail)

        st = self.trees[aid].tick(bb, snap, aid, on_event)
        if st is not Status.RUNNING:
            self.done.add(aid)
            log.event(t, aid, "tree_" + st.value.lower(), self.trees[aid].root_desc.tag)
            # a finished agent stands its ground
            return replace(agent, active_goal=agent.position, gaze_target=None,
                           arrival_radius=HOLD_RADIUS, speed_factor=1.0,
                           behavior_status=BehaviorStatus.IDLE)
        idx = bb.get("goal_index", agent.current_goal_index)
        return replace(
            agent,
            active_goal=bb.get("goal"),
            gaze_target=bb.get("gaze_target"),
            arrival_radius=bb.get("arrival_radius"),
            speed_factor=float(bb.get("speed_factor", 1.0)),
            behavior_status=BehaviorStatus(bb.get("status", BehaviorStatus.IDLE)),
            current_goal_index=min(idx, len(agent.goals)),
        )

    def advance(self) -> list[AgentState]:
        """Tick and step every agent on the current snapshot."""
        snap = self.current
        if snap is None:
            raise ValueError("uninitialized")
        groups = groups_in(snap)
        out, forces = [], {}
        for agent in snap.agents:
            commanded = self._tick(agent, snap)
            new, fb = step_agent(commanded, snap, self.params[agent.id], self.dt,
                                 self.modes[agent.id], self.counter, groups)
            if not all(math.isfinite(v) for v in (*fb.total, new.pose.x, new.pose.y, *new.velocity)):
                raise SimulationError(
                    f"non-finite force at t={snap.t!r} for agent {agent.id}: "
                    f"state={commanded} forces={fb}")
            forces[agent.id] = fb
            out.append(new)
        self.log.forces[-1] = forces
        self.pending = out
        return out

    def finish(self, selection="all", metadata: Optional[dict] = None) -> list[MetricsReport]:
        meta = {"seed": self.seed, "dt": self.dt}
        meta.update(metadata or {})
        return evaluate(self.log, None, selection, meta)


# --------------------------------------------------------------------- run


@dataclass
class RunConfig:
    scenario: Union[str, Path, Scenario]
    dt: Optional[float] = None
    duration: Optional[float] = None
    seed: Optional[int] = None
    metrics: Optional[Sequence[str]] = None
    out_dir: Optional[Union[str, Path]] = None
    robot_policy: Optional[Union[str, PolicySpec]] = None
    record: Sequence[tuple[float, float]] = field(default_factory=tuple)


def _load(config: RunConfig) -> tuple[Scenario, Optional[str]]:
    if isinstance(config.scenario, Scenario):
        return config.scenario, None
    p = Path(config.scenario)
    text = p.read_text()
    return parse_scenario(text, base_dir=p.parent), text


def make_policy(scenario: Scenario, override=None) -> RobotPolicy:
    spec = override if override is not None else scenario.robot.policy
    if isinstance(spec, str):
        spec = parse_policy(spec)
    return RobotPolicy(spec, Pose2D(*scenario.robot.pose), scenario.robot.radius,
                       scenario.base_dir)


def _check_markers(markers, duration):
    last = -math.inf
    for start, stop in markers:
        if not 0 <= start < stop:
            raise ValueError(f"bad record window {start}:{stop}")
        if start < last:
            raise ValueError("record windows must be sorted and disjoint")
        if start > duration:
            raise ValueError(f"record window {start}:{stop} starts after the run ends")
        last = stop


def simulate(scenario: Scenario, dt: Optional[float] = None, duration: Optional[float] = None,
             seed: Optional[int] = None, policy=None, record=()) -> Engine:
    """Run the scenario in-process and return the engine holding the log."""
    engine = Engine(scenario, seed=seed, dt=dt)
    dt = engine.dt
    duration = scenario.duration if duration is None else duration
    if duration <= 0:
        raise ValueError("duration must be positive")
    _check_markers(record, duration)
    pol = make_policy(scenario, policy)
    if engine.robot_goal is None and pol.goal is not None:
        engine.robot_goal = pol.goal
    # marker -> step index, then "start"/"stop" commands at that snapshot
    marks: dict[int, list[str]] = {}
    for start, stop in record:
        marks.setdefault(round(start / dt), []).append("start")
        marks.setdefault(round(stop / dt), []).append("stop")
    n = int(round(duration / dt))
    for k in range(n + 1):
        t = step_time(k, dt)
        engine.observe(t, pol.state_at(t))
        for cmd in sorted(marks.get(k, ()), key=lambda c: c != "stop"):
            engine.record(cmd)
        if k < n:
            engine.advance()
    return engine


def run(config: RunConfig) -> tuple[TrajectoryLog, list[MetricsReport]]:
    """Simulate, compute the selected metrics and (with ``out_dir``) write
    metrics.yaml, trajectories.csv and events.csv."""
    scenario, text = _load(config)
    selection = config.metrics if config.metrics is not None else scenario.metrics
    engine = simulate(scenario, config.dt, config.duration, config.seed,
                      config.robot_policy, config.record)
    meta = {"scenario": scenario.name or (str(config.scenario) if text is not None else None),
            "duration": engine.log.snapshots[-1].t}
    if text is not None:
        meta["scenario_hash"] = scenario_hash(text)
    reports = engine.finish(selection, meta)
    if config.out_dir is not None:
        write_report(reports, engine.log, config.out_dir, reports[0].metadata)
    return engine.log, reports


__all__ = [
    "ANIMATION", "Engine", "RobotPolicy", "RunConfig", "ScenarioError", "SimulationError",
    "agent_seed", "load_scenario", "make_policy", "parse_policy", "read_replay", "run",
    "simulate", "splitmix64",
]
