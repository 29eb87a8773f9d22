"""Social Force Model locomotion for simulated humans.

Forces are mass-normalized accelerations. The pedestrian interaction term
follows the velocity-dependent anisotropic form (Moussaid et al. 2009),
with a simplified gaze/coherence/repulsion group extension.

Hot-path code works on plain float tuples; numpy's per-call overhead
dominates for 2-vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .world import (
    AgentState,
    Group,
    OccupancyGrid,
    Point,
    Pose2D,
    WorldSnapshot,
    bearing,
    distance_to_nearest_obstacle,
    groups_in,
    wrap_angle,
)

FORCE_FACTORS = (
    "k_desired",
    "k_obstacle",
    "k_social",
    "k_group_gaze",
    "k_group_coherence",
    "k_group_repulsion",
)
NOISE_SIGMA = 0.10
NOISE_TRUNCATION = 0.25
MODES = ("default", "custom", "random")

YAW_RATE_LIMIT = math.pi  # rad/s
HEADING_MIN_SPEED = 0.05  # m/s
GROUP_REPULSION_MARGIN = 0.2  # m
THETA_EPS = 1e-9  # rad; rounding noise around theta = 0 must not switch on sign(theta)
MAX_DT = 0.2


@dataclass(frozen=True)
class SfmParams:
    k_desired: float = 1.0
    relaxation_time: float = 0.5
    k_obstacle: float = 10.0
    B_obstacle: float = 0.2
    k_social: float = 2.1
    lambda_: float = 2.0
    gamma: float = 0.35
    n: float = 2.0
    n_prime: float = 3.0
    k_group_gaze: float = 3.0
    k_group_coherence: float = 2.0
    k_group_repulsion: float = 1.0
    perception_radius: float = 10.0
    mode: str = "default"

    def __post_init__(self):
        for name in FORCE_FACTORS + ("B_obstacle", "lambda_", "n", "n_prime"):
            if getattr(self, name) < 0:
                raise ValueError(f"SFM parameter {name} must be >= 0")
        for name in ("relaxation_time", "gamma", "perception_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SFM parameter {name} must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown SFM mode {self.mode!r}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "mode"]

    def with_overrides(self, overrides: dict) -> "SfmParams":
        unknown = set(overrides) - set(self.field_names())
        if unknown:
            raise ValueError(f"unknown SFM parameter(s): {', '.join(sorted(unknown))}")
        return replace(self, **{k: float(v) for k, v in overrides.items()}, mode="custom")


@dataclass(frozen=True)
class ForceBreakdown:
    desired: Point
    obstacle: Point
    social: Point
    group: Point
    total: Point

    @classmethod
    def of(cls, desired, obstacle, social, group) -> "ForceBreakdown":
        total = (desired[0] + obstacle[0] + social[0] + group[0],
                 desired[1] + obstacle[1] + social[1] + group[1])
        return cls(desired, obstacle, social, group, total)


@dataclass(frozen=True)
class RobotMode:
    """How the robot enters an agent's social force: as one more pedestrian
    (factor 1), ignored (factor 0), or scaled by a custom factor."""

    kind: str = "as_pedestrian"
    factor: float = 1.0

    @classmethod
    def as_pedestrian(cls) -> "RobotMode":
        return cls("as_pedestrian", 1.0)

    @classmethod
    def ignored(cls) -> "RobotMode":
        return cls("ignored", 0.0)

    @classmethod
    def custom_factor(cls, k: float) -> "RobotMode":
        if k < 0:
            raise ValueError("robot force factor must be >= 0")
        return cls("custom_factor", float(k))

    @classmethod
    def parse(cls, text: str) -> "RobotMode":
        """'as_pedestrian', 'ignored' or 'custom_factor:<k>'."""
        if text == "as_pedestrian":
            return cls.as_pedestrian()
        if text == "ignored":
            return cls.ignored()
        if text.startswith("custom_factor:"):
            return cls.custom_factor(float(text.split(":", 1)[1]))
        raise ValueError(f"unknown robot mode {text!r}")

    def __str__(self) -> str:
        if self.kind == "custom_factor":
            return f"custom_factor:{self.factor!r}"
        return self.kind


def default_params() -> SfmParams:
    return SfmParams()


def sample_params(base: SfmParams, seed: int) -> SfmParams:
    """Draw every force factor from a normal distribution centred on its base
    value (sigma 10 %), truncated to +/-25 % by rejection. Shape parameters
    (tau, lambda, gamma, n, n') are kept."""
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    drawn = {}
    for name in FORCE_FACTORS:
        mu = getattr(base, name)
        if mu == 0.0:
            drawn[name] = 0.0
            continue
        sigma = NOISE_SIGMA * mu
        lo, hi = (1 - NOISE_TRUNCATION) * mu, (1 + NOISE_TRUNCATION) * mu
        while True:
            x = float(rng.normal(mu, sigma))
            if lo <= x <= hi:
                break
        drawn[name] = x
    return replace(base, **drawn, mode="random")


def desired_force(agent: AgentState, goal: Optional[Sequence[float]], params: SfmParams) -> Point:
    """k_desired * (v0 * e_goal - v) / tau.

    No goal, or a goal at the agent position, means a desired velocity of
    zero. Inside ``agent.arrival_radius`` the desired speed ramps down
    linearly with the remaining distance.
    """
    vx, vy = agent.velocity
    ex = ey = 0.0
    speed = agent.desired_speed * agent.speed_factor
    if goal is not None:
        dx, dy = goal[0] - agent.pose.x, goal[1] - agent.pose.y
        d = math.hypot(dx, dy)
        if d > 0.0:
            ex, ey = dx / d, dy / d
            if agent.arrival_radius and d < agent.arrival_radius:
                speed *= d / agent.arrival_radius
    k = params.k_desired / params.relaxation_time
    return (k * (speed * ex - vx), k * (speed * ey - vy))


def obstacle_force(agent: AgentState, grid: Optional[OccupancyGrid], params: SfmParams) -> Point:
    """Exponential repulsion from the nearest occupied cell. Agents outside
    the map (or without one) feel no obstacle force."""
    if grid is None or not grid.contains(agent.position):
        return (0.0, 0.0)
    d, (nx, ny) = distance_to_nearest_obstacle(grid, agent.position)
    if math.isinf(d):
        return (0.0, 0.0)
    mag = params.k_obstacle * math.exp((agent.radius - d) / params.B_obstacle)
    return (mag * nx, mag * ny)


class DegeneracyCounter:
    """Counts skipped pairs (coincident positions); shared by a run."""

    def __init__(self):
        self.coincident = 0
        self.zero_interaction = 0


def pair_social_force(p_i: Sequence[float], v_i: Sequence[float],
                      p_j: Sequence[float], v_j: Sequence[float],
                      params: SfmParams, counter: Optional[DegeneracyCounter] = None) -> Point:
    """Force exerted on pedestrian i by pedestrian j (unscaled by k_social)."""
    dx, dy = p_j[0] - p_i[0], p_j[1] - p_i[1]
    d = math.hypot(dx, dy)
    if d == 0.0:
        if counter is not None:
            counter.coincident += 1
        return (0.0, 0.0)
    ex, ey = dx / d, dy / d
    Dx = params.lambda_ * (v_i[0] - v_j[0]) + ex
    Dy = params.lambda_ * (v_i[1] - v_j[1]) + ey
    Dn = math.hypot(Dx, Dy)
    if Dn == 0.0:
        if counter is not None:
            counter.zero_interaction += 1
        return (0.0, 0.0)
    tx, ty = Dx / Dn, Dy / Dn
    B = params.gamma * Dn
    theta = math.atan2(tx * ey - ty * ex, tx * ex + ty * ey)
    base = -d / B
    f_v = -math.exp(base - (params.n_prime * B * theta) ** 2)
    if theta > THETA_EPS:
        f_th = -math.exp(base - (params.n * B * theta) ** 2)
    elif theta < -THETA_EPS:
        f_th = math.exp(base - (params.n * B * theta) ** 2)
    else:
        f_th = 0.0
    # left normal of t is (-ty, tx)
    return (f_v * tx - f_th * ty, f_v * ty + f_th * tx)


def social_force(agent: AgentState, others: Iterable[tuple], params: SfmParams,
                 counter: Optional[DegeneracyCounter] = None) -> Point:
    """Sum of pairwise interaction forces.

    ``others`` yields ``(position, velocity)`` or ``(position, velocity,
    scale)``; neighbours beyond the perception radius are ignored.
    """
    p_i, v_i = agent.position, agent.velocity
    fx = fy = 0.0
    r2 = params.perception_radius ** 2
    for other in others:
        p_j, v_j = other[0], other[1]
        scale = other[2] if len(other) > 2 else 1.0
        if scale == 0.0:
            continue
        if (p_j[0] - p_i[0]) ** 2 + (p_j[1] - p_i[1]) ** 2 > r2:
            continue
        gx, gy = pair_social_force(p_i, v_i, p_j, v_j, params, counter)
        fx += scale * gx
        fy += scale * gy
    return (params.k_social * fx, params.k_social * fy)


def group_forces(agent: AgentState, group: Group, states: Sequence[AgentState],
                 params: SfmParams) -> Point:
    """Gaze + coherence + repulsion relative to the other members' centroid."""
    if len(group.member_ids) < 2:
        raise ValueError("group requires ≥2 members")
    if agent.id not in group.member_ids:
        raise ValueError(f"agent {agent.id} is not a member of group {group.group_id}")
    members = [s for s in states if s.id in group.member_ids and s.id != agent.id]
    if not members:
        return (0.0, 0.0)
    px, py = agent.position
    cx = sum(m.pose.x for m in members) / len(members)
    cy = sum(m.pose.y for m in members) / len(members)
    dcx, dcy = cx - px, cy - py
    dc = math.hypot(dcx, dcy)
    fx = fy = 0.0
    if dc > 0.0:
        ecx, ecy = dcx / dc, dcy / dc
        beta = abs(wrap_angle(math.atan2(dcy, dcx) - agent.pose.yaw))
        g = params.k_group_gaze * max(0.0, beta - math.pi / 2)
        fx += g * ecx
        fy += g * ecy
        if dc > (len(group.member_ids) - 1) / 2.0:
            fx += params.k_group_coherence * ecx
            fy += params.k_group_coherence * ecy
    for m in members:
        dx, dy = m.pose.x - px, m.pose.y - py
        d = math.hypot(dx, dy)
        if 0.0 < d < agent.radius + m.radius + GROUP_REPULSION_MARGIN:
            fx -= params.k_group_repulsion * dx / d
            fy -= params.k_group_repulsion * dy / d
    return (fx, fy)


def compute_forces(agent: AgentState, snapshot: WorldSnapshot, params: SfmParams,
                   robot_mode: RobotMode = RobotMode(),
                   counter: Optional[DegeneracyCounter] = None,
                   groups: Optional[dict] = None) -> ForceBreakdown:
    others = [(a.position, a.velocity) for a in snapshot.agents if a.id != agent.id]
    if robot_mode.factor != 0.0:
        others.append((snapshot.robot.position, snapshot.robot.velocity, robot_mode.factor))
    f_des = desired_force(agent, agent.active_goal, params)
    f_obs = obstacle_force(agent, snapshot.grid, params)
    f_soc = social_force(agent, others, params, counter)
    f_grp = (0.0, 0.0)
    if agent.group_id is not None:
        if groups is None:
            groups = groups_in(snapshot)
        group = groups.get(agent.group_id)
        if group is not None:
            f_grp = group_forces(agent, group, snapshot.agents, params)
    return ForceBreakdown.of(f_des, f_obs, f_soc, f_grp)


def integrate(agent: AgentState, force: Sequence[float], dt: float) -> AgentState:
    """Semi-implicit Euler with speed clamp and a yaw-rate limit.

    The body turns toward the gaze target when one is set, otherwise toward
    the velocity heading while walking, otherwise keeps its yaw.
    """
    vx = agent.velocity[0] + force[0] * dt
    vy = agent.velocity[1] + force[1] * dt
    speed = math.hypot(vx, vy)
    if speed > agent.max_speed:
        s = agent.max_speed / speed
        vx, vy, speed = vx * s, vy * s, agent.max_speed
    x = agent.pose.x + vx * dt
    y = agent.pose.y + vy * dt
    yaw = agent.pose.yaw
    target = None
    if agent.gaze_target is not None and (agent.gaze_target[0], agent.gaze_target[1]) != (x, y):
        target = bearing((x, y), agent.gaze_target)
    elif speed > HEADING_MIN_SPEED:
        target = math.atan2(vy, vx)
    if target is not None:
        err = wrap_angle(target - yaw)
        limit = YAW_RATE_LIMIT * dt
        yaw += max(-limit, min(limit, err))
    return replace(agent, pose=Pose2D(x, y, yaw), velocity=(vx, vy))


def step_agent(agent: AgentState, snapshot: WorldSnapshot, params: SfmParams, dt: float,
               robot_mode: RobotMode = RobotMode(),
               counter: Optional[DegeneracyCounter] = None,
               groups: Optional[dict] = None) -> tuple[AgentState, ForceBreakdown]:
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt={dt} outside (0, {MAX_DT}]")
    forces = compute_forces(agent, snapshot, params, robot_mode, counter, groups)
    return integrate(agent, forces.total, dt), forces
