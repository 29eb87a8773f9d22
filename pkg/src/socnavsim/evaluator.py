"""Trajectory recording and social-navigation metrics.

A metric is a function of one recording window of a ``TrajectoryLog``.
Metrics are kept in a registry so users can add their own::

    @register("max_robot_x", "m", "user.max_robot_x.v1")
    def max_robot_x(w):
        return float(w.robot_pos[:, 0].max())

Distances between the robot and humans are surface distances (center
distance minus both radii). Human-side force terms use the default SFM
parameters so values compare across runs with noisy agents.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from .sfm import SfmParams, pair_social_force
from .world import (
    AgentState,
    OccupancyGrid,
    Pose2D,
    RobotState,
    WorldSnapshot,
    distance_to_nearest_obstacle,
)

ROBOT_ID = -1
ZONES = {"intimate": (-math.inf, 0.45), "personal": (0.45, 1.2), "social": (1.2, 3.6)}
COLLISION_HYSTERESIS = 0.05
DANGER_LENGTH = 1.5  # m
DANGER_SPEED = 1.0  # m/s
SURPRISE_RANGE = 2.5  # m
SURPRISE_HALF_FOV = math.radians(50.0)
SURPRISE_MIN_APPROACH = 0.5  # m/s
TIME_EPS = 1e-9

TRAJ_COLUMNS = ("t", "id", "x", "y", "yaw", "vx", "vy")
EVENT_COLUMNS = ("t", "agent_id", "event", "name", "detail")


class Inapplicable(Exception):
    """Raised by a metric that cannot be computed on a window."""


@dataclass(frozen=True)
class Event:
    t: float
    agent_id: int
    event: str
    name: str = ""
    detail: str = ""


@dataclass
class TrajectoryLog:
    """Snapshots at dt spacing plus the event log of a run.

    ``radii`` maps agent id (and ROBOT_ID) to body radius; it is also
    recoverable from the ``spawn`` events written to events.csv.
    """

    dt: float
    snapshots: list = field(default_factory=list)
    events: list = field(default_factory=list)
    forces: list = field(default_factory=list)  # per snapshot: {agent_id: ForceBreakdown}
    grid: Optional[OccupancyGrid] = None

    def append(self, snap: WorldSnapshot, forces: Optional[dict] = None):
        if self.snapshots:
            prev = self.snapshots[-1].t
            if snap.t <= prev:
                raise ValueError(f"non-increasing snapshot time {snap.t} after {prev}")
        self.snapshots.append(snap)
        self.forces.append(forces or {})

    def event(self, t, agent_id, event, name="", detail=""):
        self.events.append(Event(float(t), int(agent_id), event, name, str(detail)))

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def __len__(self):
        return len(self.snapshots)


# -------------------------------------------------------------- recording


class Recorder:
    """Start/stop control of metric windows; several disjoint windows allowed."""

    def __init__(self):
        self.windows: list[tuple[float, float]] = []
        self._open: Optional[float] = None

    @property
    def is_open(self) -> bool:
        return self._open is not None

    def start(self, t: float):
        if self._open is not None:
            raise ValueError("recording already started")
        if self.windows and t < self.windows[-1][1]:
            raise ValueError("recording windows must not overlap")
        self._open = float(t)

    def stop(self, t: float):
        if self._open is None:
            raise ValueError("stop without start")
        if t < self._open:
            raise ValueError("stop before start")
        self.windows.append((self._open, float(t)))
        self._open = None

    def control(self, cmd: str, t: float):
        if cmd == "start":
            self.start(t)
        elif cmd == "stop":
            self.stop(t)
        else:
            raise ValueError(f"unknown recording command {cmd!r}")

    def resolved(self, t_end: float, t_begin: float = 0.0) -> list[tuple[float, float]]:
        """Windows to evaluate: explicit ones (an open one closes at t_end),
        or the whole run [t_begin, t_end] when recording was never used."""
        wins = list(self.windows)
        if self._open is not None:
            wins.append((self._open, t_end))
        return wins or [(t_begin, t_end)]


def recording_control(recorder: Recorder, cmd: str, t: float):
    recorder.control(cmd, t)


# ---------------------------------------------------------- window arrays


class Window:
    """Array view of the snapshots inside [t_start, t_end).

    The whole-run window is closed at the end so the last snapshot counts.
    """

    def __init__(self, log: TrajectoryLog, t_start: float, t_end: float, closed: bool = False):
        self.log = log
        self.t_start, self.t_end = t_start, t_end
        snaps = [s for s in log.snapshots
                 if s.t >= t_start - TIME_EPS
                 and (s.t < t_end - TIME_EPS or (closed and s.t <= t_end + TIME_EPS))]
        self.snapshots = snaps
        self.dt = log.dt
        self.n = len(snaps)
        self.t = np.array([s.t for s in snaps], dtype=float)
        self.robot_pos = np.array([s.robot.position for s in snaps], dtype=float).reshape(-1, 2)
        self.robot_vel = np.array([s.robot.velocity for s in snaps], dtype=float).reshape(-1, 2)
        self.robot_yaw = np.array([s.robot.pose.yaw for s in snaps], dtype=float)
        self.robot_radius = snaps[0].robot.radius if snaps else 0.0
        ids = sorted({a.id for s in snaps for a in s.agents})
        self.ids = ids
        m = len(ids)
        col = {aid: k for k, aid in enumerate(ids)}
        self.h_pos = np.full((self.n, m, 2), np.nan)
        self.h_vel = np.full((self.n, m, 2), np.nan)
        self.h_yaw = np.full((self.n, m), np.nan)
        self.h_radius = np.zeros(m)
        for i, s in enumerate(snaps):
            for a in s.agents:
                k = col[a.id]
                self.h_pos[i, k] = a.position
                self.h_vel[i, k] = a.velocity
                self.h_yaw[i, k] = a.pose.yaw
                self.h_radius[k] = a.radius
        self.present = ~np.isnan(self.h_yaw)
        self._cache: dict = {}

    def cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def surface(self) -> np.ndarray:
        """(n, m) robot-human surface distance; NaN where a human is absent."""
        def f():
            rel = self.h_pos - self.robot_pos[:, None, :]
            d = np.hypot(rel[..., 0], rel[..., 1])
            return d - self.robot_radius - self.h_radius[None, :]
        return self.cached("surface", f)

    @property
    def approach_speed(self) -> np.ndarray:
        """(n, m) rate at which robot and human close in (-d/dt of distance)."""
        def f():
            rel = self.h_pos - self.robot_pos[:, None, :]
            vrel = self.h_vel - self.robot_vel[:, None, :]
            d = np.hypot(rel[..., 0], rel[..., 1])
            with np.errstate(invalid="ignore", divide="ignore"):
                out = -(rel[..., 0] * vrel[..., 0] + rel[..., 1] * vrel[..., 1]) / d
            return np.where(d > 0, out, 0.0)
        return self.cached("approach", f)

    @property
    def robot_speed(self) -> np.ndarray:
        return np.hypot(self.robot_vel[:, 0], self.robot_vel[:, 1])

    def need_humans(self):
        if not self.ids:
            raise Inapplicable("no humans in window")

    def need_steps(self, k: int):
        if self.n < k:
            raise Inapplicable(f"window shorter than {k} steps")


# --------------------------------------------------------------- registry


@dataclass(frozen=True)
class Metric:
    name: str
    unit: str
    definition_id: str
    fn: Callable[[Window], float]
    description: str = ""


METRICS: dict[str, Metric] = {}


def register(name: str, unit: str, definition_id: str):
    def deco(fn):
        if name in METRICS:
            raise ValueError(f"metric {name!r} already registered")
        METRICS[name] = Metric(name, unit, definition_id, fn, (fn.__doc__ or "").strip())
        return fn
    return deco


# ------------------------------------------------------ navigation metrics


def _goal_event(w: Window) -> Optional[float]:
    for ev in w.log.events:
        if ev.event == "robot_goal_reached" and w.t_start - TIME_EPS <= ev.t:
            if w.n and ev.t <= w.t[-1] + TIME_EPS:
                return ev.t
    return None


def _has_goal(w: Window) -> bool:
    return any(ev.event == "robot_goal" for ev in w.log.events)


@register("success", "bool", "nav.success.v1")
def success(w):
    """1 when the robot reached its goal inside the window."""
    if not _has_goal(w):
        raise Inapplicable("robot has no goal")
    return 1.0 if _goal_event(w) is not None else 0.0


@register("time_to_goal", "s", "nav.time_to_goal.v1")
def time_to_goal(w):
    if not _has_goal(w):
        raise Inapplicable("robot has no goal")
    t = _goal_event(w)
    if t is None:
        raise Inapplicable("goal not reached in window")
    return t - w.t_start


@register("path_length", "m", "nav.path_length.v1")
def path_length(w):
    w.need_steps(1)
    return float(np.hypot(*np.diff(w.robot_pos, axis=0).T).sum())


@register("cumulative_heading_change", "rad", "nav.heading_change.v1")
def cumulative_heading_change(w):
    w.need_steps(1)
    dyaw = np.diff(w.robot_yaw)
    return float(np.abs(np.remainder(dyaw + math.pi, 2 * math.pi) - math.pi).sum())


@register("avg_robot_speed", "m/s", "nav.speed.avg.v1")
def avg_robot_speed(w):
    w.need_steps(1)
    return float(w.robot_speed.mean())


@register("max_robot_speed", "m/s", "nav.speed.max.v1")
def max_robot_speed(w):
    w.need_steps(1)
    return float(w.robot_speed.max())


def _accel(w):
    w.need_steps(2)
    return np.abs(np.diff(w.robot_speed) / w.dt)


def _jerk(w):
    w.need_steps(3)
    return np.abs(np.diff(w.robot_speed, n=2) / w.dt ** 2)


@register("avg_robot_acceleration", "m/s^2", "nav.accel.avg.v1")
def avg_robot_acceleration(w):
    return float(_accel(w).mean())


@register("max_robot_acceleration", "m/s^2", "nav.accel.max.v1")
def max_robot_acceleration(w):
    return float(_accel(w).max())


@register("avg_robot_jerk", "m/s^3", "nav.jerk.avg.v1")
def avg_robot_jerk(w):
    return float(_jerk(w).mean())


@register("max_robot_jerk", "m/s^3", "nav.jerk.max.v1")
def max_robot_jerk(w):
    return float(_jerk(w).max())


# ------------------------------------------------------- proxemics metrics


def zone_mask(surface: np.ndarray, zone: str) -> np.ndarray:
    lo, hi = ZONES[zone]
    with np.errstate(invalid="ignore"):
        return (surface >= lo) & (surface < hi)


def rising_edges(mask: np.ndarray) -> int:
    """Number of False->True transitions down axis 0, counting an initial True."""
    m = np.asarray(mask, dtype=bool)
    if m.size == 0:
        return 0
    prev = np.concatenate([np.zeros((1,) + m.shape[1:], dtype=bool), m[:-1]], axis=0)
    return int((m & ~prev).sum())


def _zone_metrics(zone):
    def episodes(w):
        w.need_humans()
        return float(rising_edges(zone_mask(w.surface, zone)))

    def duration(w):
        w.need_humans()
        return float(zone_mask(w.surface, zone).sum() * w.dt)

    episodes.__doc__ = f"Entries of the robot into a human's {zone} zone."
    duration.__doc__ = f"Human-seconds the robot spends in {zone} zones."
    register(f"{zone}_space_intrusions", "count", f"prox.{zone}.episodes.v1")(episodes)
    register(f"{zone}_space_time", "s", f"prox.{zone}.time.v1")(duration)


for _zone in ZONES:
    _zone_metrics(_zone)


@register("min_distance_to_human", "m", "prox.min_distance.v1")
def min_distance_to_human(w):
    w.need_humans()
    return float(np.nanmin(w.surface))


@register("avg_distance_to_closest_human", "m", "prox.avg_closest.v1")
def avg_distance_to_closest_human(w):
    w.need_humans()
    closest = np.nanmin(np.where(w.present, w.surface, np.inf), axis=1)
    closest = closest[np.isfinite(closest)]
    if closest.size == 0:
        raise Inapplicable("no humans in window")
    return float(closest.mean())


def collision_count(surface: np.ndarray, hysteresis: float = COLLISION_HYSTERESIS) -> int:
    """Contacts (surface distance <= 0); a human re-arms only after separating
    by more than ``hysteresis``."""
    count = 0
    for k in range(surface.shape[1]):
        armed = True
        for d in surface[:, k]:
            if np.isnan(d):
                continue
            if armed and d <= 0.0:
                count += 1
                armed = False
            elif not armed and d > hysteresis:
                armed = True
    return count


@register("human_collisions", "count", "prox.collisions.v1")
def human_collisions(w):
    w.need_humans()
    return float(collision_count(w.surface))


@register("robot_obstacle_collisions", "count", "prox.obstacle_collisions.v1")
def robot_obstacle_collisions(w):
    """Episodes with the nearest occupied cell closer than the robot radius."""
    grid = w.log.grid
    if grid is None:
        raise Inapplicable("no map available")
    contact = []
    for p in w.robot_pos:
        if not grid.contains(p):
            contact.append(False)
            continue
        d, _ = distance_to_nearest_obstacle(grid, p)
        contact.append(d < w.robot_radius)
    return float(rising_edges(np.array(contact, dtype=bool)))


# ------------------------------------------------------------ force metrics

_FORCE_PARAMS = SfmParams()


def _force_terms(w: Window):
    """Per snapshot: |social force on the robot| and the sum over humans of
    |social force on the human due to the robot|."""
    def f():
        p = _FORCE_PARAMS
        r2 = p.perception_radius ** 2
        on_robot = np.zeros(w.n)
        on_humans = np.zeros(w.n)
        for i in range(w.n):
            rp, rv = tuple(w.robot_pos[i]), tuple(w.robot_vel[i])
            fx = fy = 0.0
            for k in range(len(w.ids)):
                if not w.present[i, k]:
                    continue
                hp, hv = tuple(w.h_pos[i, k]), tuple(w.h_vel[i, k])
                if (hp[0] - rp[0]) ** 2 + (hp[1] - rp[1]) ** 2 > r2:
                    continue
                gx, gy = pair_social_force(rp, rv, hp, hv, p)
                fx += gx
                fy += gy
                hx, hy = pair_social_force(hp, hv, rp, rv, p)
                on_humans[i] += p.k_social * math.hypot(hx, hy)
            on_robot[i] = p.k_social * math.hypot(fx, fy)
        return on_robot, on_humans
    return w.cached("forces", f)


@register("social_work", "N*s/kg", "force.social_work.v1")
def social_work(w):
    """Time integral of robot-felt plus robot-induced social force magnitudes."""
    w.need_steps(1)
    a, b = _force_terms(w)
    return float(((a + b) * w.dt).sum())


@register("avg_robot_social_force", "m/s^2", "force.robot.avg.v1")
def avg_robot_social_force(w):
    w.need_steps(1)
    return float(_force_terms(w)[0].mean())


@register("max_robot_social_force", "m/s^2", "force.robot.max.v1")
def max_robot_social_force(w):
    w.need_steps(1)
    return float(_force_terms(w)[0].max())


@register("avg_human_social_force_from_robot", "m/s^2", "force.humans.avg.v1")
def avg_human_social_force_from_robot(w):
    w.need_steps(1)
    return float(_force_terms(w)[1].mean())


@register("max_human_social_force_from_robot", "m/s^2", "force.humans.max.v1")
def max_human_social_force_from_robot(w):
    w.need_steps(1)
    return float(_force_terms(w)[1].max())


# ----------------------------------------------------- danger and surprise


def time_to_collision(p_rel, v_rel, radius_sum: float) -> float:
    """Smallest t >= 0 with |p_rel + v_rel t| = radius_sum, 0 when already
    touching, inf when the discs never meet."""
    px, py = p_rel
    vx, vy = v_rel
    c = px * px + py * py - radius_sum * radius_sum
    if c <= 0.0:
        return 0.0
    a = vx * vx + vy * vy
    b = 2.0 * (px * vx + py * vy)
    if a == 0.0 or b >= 0.0:
        return math.inf
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return math.inf
    return (-b - math.sqrt(disc)) / (2.0 * a)


@register("min_time_to_collision", "s", "danger.ttc_min.approx.v1")
def min_time_to_collision(w):
    w.need_humans()
    best = math.inf
    for i in range(w.n):
        for k in range(len(w.ids)):
            if not w.present[i, k]:
                continue
            ttc = time_to_collision(w.h_pos[i, k] - w.robot_pos[i], w.h_vel[i, k] - w.robot_vel[i],
                                    w.robot_radius + w.h_radius[k])
            best = min(best, ttc)
    return best


def danger_index(w: Window) -> np.ndarray:
    """Per snapshot: max over humans of exp(-d/1.5 m) * max(0, v_approach)/1 m/s."""
    def f():
        with np.errstate(invalid="ignore"):
            per = np.exp(-w.surface / DANGER_LENGTH) * np.maximum(0.0, w.approach_speed) / DANGER_SPEED
        per = np.where(w.present, per, 0.0)
        return per.max(axis=1) if per.shape[1] else np.zeros(w.n)
    return w.cached("danger", f)


@register("mean_danger_index", "1", "danger.mean_index.approx.v1")
def mean_danger_index(w):
    w.need_humans()
    w.need_steps(1)
    return float(danger_index(w).mean())


@register("cumulative_danger", "s", "danger.cumulative.approx.v1")
def cumulative_danger(w):
    w.need_humans()
    return float((danger_index(w) * w.dt).sum())


def surprise_mask(w: Window) -> np.ndarray:
    """(n, m): robot close, approaching fast, and outside the human's view cone."""
    rel = w.robot_pos[:, None, :] - w.h_pos
    bearing = np.arctan2(rel[..., 1], rel[..., 0])
    off = np.abs(np.remainder(bearing - w.h_yaw + math.pi, 2 * math.pi) - math.pi)
    with np.errstate(invalid="ignore"):
        return ((w.surface <= SURPRISE_RANGE) & (off > SURPRISE_HALF_FOV)
                & (w.approach_speed > SURPRISE_MIN_APPROACH) & w.present)


@register("surprise_event_count", "count", "surprise.events.approx.v1")
def surprise_event_count(w):
    w.need_humans()
    return float(rising_edges(surprise_mask(w)))


DANGER_SURPRISE = ("min_time_to_collision", "mean_danger_index", "surprise_event_count",
                   "cumulative_danger")


# ----------------------------------------------------------------- report


@dataclass
class MetricEntry:
    value: Optional[float]
    unit: str
    definition_id: str
    reason: Optional[str] = None

    def as_dict(self) -> dict:
        d = {"value": self.value, "unit": self.unit, "definition": self.definition_id}
        if self.reason is not None:
            d["inapplicable"] = self.reason
        return d


@dataclass
class MetricsReport:
    window: tuple[float, float]
    entries: dict
    metadata: dict = field(default_factory=dict)

    def value(self, name: str):
        return self.entries[name].value


def select_metrics(selection) -> list[str]:
    if selection in (None, "all"):
        return list(METRICS)
    names = list(selection)
    unknown = [n for n in names if n not in METRICS]
    if unknown:
        raise KeyError(f"unknown metric(s): {', '.join(unknown)}")
    return names


def compute_window(log: TrajectoryLog, window: tuple[float, float], selection="all",
                   closed: bool = False) -> dict:
    w = Window(log, window[0], window[1], closed=closed)
    entries = {}
    for name in select_metrics(selection):
        m = METRICS[name]
        if w.n == 0:
            entries[name] = MetricEntry(None, m.unit, m.definition_id, "empty window")
            continue
        try:
            v = m.fn(w)
            entries[name] = MetricEntry(float(v), m.unit, m.definition_id)
        except Inapplicable as e:
            entries[name] = MetricEntry(None, m.unit, m.definition_id, str(e))
    return entries


def _group(prefix: str):
    def compute(log, window, closed=False):
        names = [n for n, m in METRICS.items() if m.definition_id.startswith(prefix)]
        return compute_window(log, window, names, closed)
    return compute


compute_navigation_metrics = _group("nav.")
compute_proxemics_metrics = _group("prox.")
compute_force_metrics = _group("force.")


def compute_danger_surprise_metrics(log, window, closed=False):
    return compute_window(log, window, DANGER_SURPRISE, closed)


def evaluate(log: TrajectoryLog, recorder: Optional[Recorder] = None, selection="all",
             metadata: Optional[dict] = None) -> list[MetricsReport]:
    """One report per recording window (whole run when never recorded)."""
    if not log.snapshots:
        raise ValueError("empty trajectory log")
    t0, t1 = log.snapshots[0].t, log.snapshots[-1].t
    recorder = recorder or recorder_from_events(log.events)
    explicit = bool(recorder.windows) or recorder.is_open
    reports = []
    for win in recorder.resolved(t1, t0):
        closed = not explicit or (recorder.is_open and win == recorder.resolved(t1, t0)[-1])
        entries = compute_window(log, win, selection, closed=closed)
        reports.append(MetricsReport(win, entries, dict(metadata or {})))
    return reports


def recorder_from_events(events: Sequence[Event]) -> Recorder:
    rec = Recorder()
    for ev in events:
        if ev.event == "record_start":
            rec.start(ev.t)
        elif ev.event == "record_stop":
            rec.stop(ev.t)
    return rec


# ------------------------------------------------------------------ files


def _num(x) -> str:
    """Shortest round-tripping text of a float."""
    return repr(float(x))


def trajectories_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(TRAJ_COLUMNS)
    for s in log.snapshots:
        r = s.robot
        wr.writerow([_num(s.t), ROBOT_ID, *map(_num, (r.pose.x, r.pose.y, r.pose.yaw,
                                                       r.velocity[0], r.velocity[1]))])
        for a in sorted(s.agents, key=lambda a: a.id):
            wr.writerow([_num(s.t), a.id, *map(_num, (a.pose.x, a.pose.y, a.pose.yaw,
                                                       a.velocity[0], a.velocity[1]))])
    return buf.getvalue()


def events_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(EVENT_COLUMNS)
    for e in log.events:
        wr.writerow([_num(e.t), e.agent_id, e.event, e.name, e.detail])
    return buf.getvalue()


def _report_dict(reports: Sequence[MetricsReport], metadata: dict) -> dict:
    return {
        "metadata": dict(metadata),
        "windows": [
            {"window": [float(r.window[0]), float(r.window[1])],
             "metrics": {k: e.as_dict() for k, e in r.entries.items()}}
            for r in reports
        ],
    }


def write_report(reports: Sequence[MetricsReport], log: TrajectoryLog, out_dir,
                 metadata: Optional[dict] = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(metadata or (reports[0].metadata if reports else {}))
    paths = {
        "metrics": out / "metrics.yaml",
        "trajectories": out / "trajectories.csv",
        "events": out / "events.csv",
    }
    paths["trajectories"].write_text(trajectories_csv(log))
    paths["events"].write_text(events_csv(log))
    paths["metrics"].write_text(yaml.safe_dump(_report_dict(reports, meta), sort_keys=False))
    return paths


def write_partial(log: TrajectoryLog, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trajectories": out / "trajectories.csv", "events": out / "events.csv"}
    paths["trajectories"].write_text(trajectories_csv(log))
    paths["events"].write_text(events_csv(log))
    return paths


def read_report(path) -> dict:
    return yaml.safe_load(Path(path).read_text())


def load_log(traj_csv, events_csv_path=None, dt: Optional[float] = None,
             grid: Optional[OccupancyGrid] = None) -> TrajectoryLog:
    """Rebuild a TrajectoryLog from trajectories.csv (+ events.csv).

    Radii come from ``spawn`` events; dt from the events' ``run`` record or
    the snapshot spacing.
    """
    events: list[Event] = []
    if events_csv_path is not None:
        with open(events_csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                events.append(Event(float(row["t"]), int(row["agent_id"]), row["event"],
                                    row["name"], row["detail"]))
    radii = {e.agent_id: float(e.detail) for e in events if e.event == "spawn"}
    for e in events:
        if e.event == "run" and e.name == "dt" and dt is None:
            dt = float(e.detail)
    rows: dict[float, list] = {}
    order: list[float] = []
    with open(traj_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            t = float(row["t"])
            if t not in rows:
                rows[t] = []
                order.append(t)
            rows[t].append(row)
    if dt is None:
        dt = order[1] - order[0] if len(order) > 1 else 0.05
    log = TrajectoryLog(dt=dt, events=events, grid=grid)
    for t in order:
        robot = None
        agents = []
        for row in rows[t]:
            aid = int(row["id"])
            pose = Pose2D(float(row["x"]), float(row["y"]), float(row["yaw"]))
            vel = (float(row["vx"]), float(row["vy"]))
            if aid == ROBOT_ID:
                robot = RobotState(pose, vel, radii.get(ROBOT_ID, 0.3))
            else:
                # speeds are bounds only; the logged velocity is what matters
                sp = max(math.hypot(*vel), 1e-6)
                agents.append(AgentState(aid, pose, vel, desired_speed=sp, max_speed=sp,
                                         radius=radii.get(aid, 0.3)))
        if robot is None:
            raise ValueError(f"trajectory row block at t={t} lacks the robot (id {ROBOT_ID})")
        log.append(WorldSnapshot(t, robot, tuple(agents)))
    return log


def scenario_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
