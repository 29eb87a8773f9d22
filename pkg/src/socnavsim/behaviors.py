"""Leaf nodes (actions and conditions) and the robot-reaction presets.

Leaves steer their agent by writing a motion command onto the agent's
blackboard; the engine copies it into the ``AgentState`` before the
social-force step:

    goal            target point, or None to stand still
    arrival_radius  slow-down radius for point holding (None: full speed)
    speed_factor    multiplier on the desired speed
    gaze_target     point the agent looks at (None: look where walking)
    status          BehaviorStatus shown to external simulators
    goal_index      progress through the agent's own goal list

Conditions are pure reads of the world snapshot.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

from . import bt
from .bt import FAILURE, REQUIRED, RUNNING, SUCCESS, BtNode, LeafContext, NodeRegistry
from .world import BehaviorStatus, bearing, dist, in_fov, segment_clear, wrap_angle

REGISTRY = NodeRegistry()
action = lambda **params: REGISTRY.leaf("Action", **params)  # noqa: E731
condition = lambda **params: REGISTRY.leaf("Condition", **params)  # noqa: E731

HOLD_RADIUS = 0.5  # arrival slow-down for point holding leaves
GOTO_STALL_PROGRESS = 0.05  # m
GOTO_STALL_TIME = 10.0  # s
APPROACH_STALL_TIME = 20.0  # s
DEFAULT_FOV = math.pi
FOLLOW_MIN_SPEED = 0.3  # below this the target counts as standing
FORMATION_POS_TOL = 0.2
FORMATION_YAW_TOL = 0.3
FORMATION_MAX_SPEED = 0.25  # m/s; arrival must be settled, not a fly-through
EPS = 1e-9


def _steer(ctx: LeafContext, goal, status: BehaviorStatus, arrival_radius=None, gaze=None):
    ctx.bb["goal"] = None if goal is None else (float(goal[0]), float(goal[1]))
    ctx.bb["arrival_radius"] = arrival_radius
    ctx.bb["gaze_target"] = gaze
    ctx.bb["status"] = status


def _stalled(ctx: LeafContext, d: float, window: float) -> bool:
    """True when d has not improved by GOTO_STALL_PROGRESS for ``window`` s."""
    best = ctx.mem.get("best")
    if best is None or d < best - GOTO_STALL_PROGRESS:
        ctx.mem["best"] = d
        ctx.mem["t_best"] = ctx.t
        return False
    return ctx.t - ctx.mem["t_best"] >= window - EPS


def _visible(ctx: LeafContext, a, b) -> bool:
    return segment_clear(ctx.view.grid, a, b)


# ------------------------------------------------------------------ actions


@action(goal=("point", None), goals=("points", None), tolerance=("float", 0.3))
def GoTo(ctx):
    """Walk straight to ``goal``. Without ``goal`` it cycles through
    ``goals`` (or the agent's own goal list), one goal per activation;
    progress survives interruptions. FAILURE after 10 s without 5 cm of
    progress."""
    me = ctx.me
    goal = ctx.params["goal"]
    advance = None
    if goal is None:
        goals = ctx.params["goals"]
        key = f"goal_index:{ctx.path}"
        if goals is None:
            goals, key = me.goals, "goal_index"
        if not goals:
            return FAILURE
        idx = ctx.bb.get(key, me.current_goal_index if key == "goal_index" else 0) % len(goals)
        goal = goals[idx]
        advance = (key, (idx + 1) % len(goals))
    _steer(ctx, goal, BehaviorStatus.NAVIGATING)
    d = dist(me.position, goal)
    if d <= ctx.params["tolerance"]:
        # keep the goal but brake, in case nothing replaces it
        ctx.bb["arrival_radius"] = HOLD_RADIUS
        if advance:
            ctx.bb[advance[0]] = advance[1]
        return SUCCESS
    if _stalled(ctx, d, GOTO_STALL_TIME):
        ctx.bb["goal"] = None
        return FAILURE
    return RUNNING


@action(duration=("float", REQUIRED))
def StopAndWaitTimer(ctx):
    """Stand still for ``duration`` seconds of simulated time."""
    ctx.bb["goal"] = None
    ctx.bb["arrival_radius"] = None
    ctx.bb["status"] = BehaviorStatus.WAITING
    if ctx.elapsed() >= ctx.params["duration"] - EPS:
        return SUCCESS
    return RUNNING


def _look(ctx, point):
    ctx.bb["gaze_target"] = (float(point[0]), float(point[1]))
    return SUCCESS if ctx.elapsed() >= ctx.params["duration"] - EPS else RUNNING


@action(point=("point", REQUIRED), duration=("float", 0.0))
def LookAtPoint(ctx):
    return _look(ctx, ctx.params["point"])


@action(agent_id=("id", REQUIRED), duration=("float", 0.0))
def LookAtAgent(ctx):
    other = ctx.view.agent(ctx.params["agent_id"])
    if other is None:
        return FAILURE
    return _look(ctx, other.position)


@action(duration=("float", 0.0))
def LookAtRobot(ctx):
    return _look(ctx, ctx.view.robot.position)


@action(stop_distance=("float", 1.5), observe_time=("float", 3.0))
def ApproachRobot(ctx):
    """Walk up to ``stop_distance`` from the robot, then watch it for
    ``observe_time`` seconds."""
    me, robot = ctx.me, ctx.view.robot
    stop = ctx.params["stop_distance"]
    if stop <= robot.radius + me.radius:
        return FAILURE
    r = robot.position
    d = dist(me.position, r)
    ux, uy = ((me.pose.x - r[0]) / d, (me.pose.y - r[1]) / d) if d > 0 else (1.0, 0.0)
    target = (r[0] + stop * ux, r[1] + stop * uy)
    if "t_obs" not in ctx.mem:
        if d <= 1.1 * stop:
            ctx.mem["t_obs"] = ctx.t
        elif _stalled(ctx, d, APPROACH_STALL_TIME):
            _steer(ctx, None, BehaviorStatus.IDLE)
            return FAILURE
    observing = "t_obs" in ctx.mem
    _steer(ctx, target, BehaviorStatus.INTERACTING if observing else BehaviorStatus.NAVIGATING,
           HOLD_RADIUS, r)
    if observing and ctx.t - ctx.mem["t_obs"] >= ctx.params["observe_time"] - EPS:
        ctx.bb["goal"] = None
        return SUCCESS
    return RUNNING


@action(keep_memory=True, partner_ids=("ids", REQUIRED), circle_radius=("float", 0.9))
def ConversationFormation(ctx):
    """Take a slot on a circle around the participants' centroid and face it.

    Slots are spaced evenly, assigned by ascending agent id starting at
    angle 0. The slot counts as reached when the agent is close, facing the
    centre and nearly stopped. Once reached the result latches to SUCCESS until the node is
    reset, while the agent keeps holding its slot.
    """
    me = ctx.me
    ids = sorted({me.id, *ctx.params["partner_ids"]})
    members = [ctx.view.agent(i) for i in ids]
    if any(m is None for m in members):
        return FAILURE
    cx = sum(m.pose.x for m in members) / len(members)
    cy = sum(m.pose.y for m in members) / len(members)
    angle = 2.0 * math.pi * ids.index(me.id) / len(ids)
    R = ctx.params["circle_radius"]
    slot = (cx + R * math.cos(angle), cy + R * math.sin(angle))
    _steer(ctx, slot, BehaviorStatus.INTERACTING if ctx.mem.get("done") else BehaviorStatus.NAVIGATING,
           HOLD_RADIUS, (cx, cy))
    if ctx.mem.get("done"):
        return SUCCESS
    facing = abs(wrap_angle(bearing(me.position, (cx, cy)) - me.pose.yaw)) < FORMATION_YAW_TOL
    settled = me.speed <= FORMATION_MAX_SPEED
    if dist(me.position, slot) <= FORMATION_POS_TOL and facing and settled:
        ctx.mem["done"] = True
        ctx.bb["status"] = BehaviorStatus.INTERACTING
        return SUCCESS
    return RUNNING


@action(target_id=("id", REQUIRED), follow_distance=("float", 1.2))
def FollowAgent(ctx):
    """Walk ``follow_distance`` behind the target along its walking
    direction. While the target stands, keep that distance on the current side.
    Runs until the target despawns (SUCCESS)."""
    target = ctx.view.agent(ctx.params["target_id"])
    if target is None:
        if ctx.mem.get("seen"):
            _steer(ctx, None, BehaviorStatus.IDLE)
            return SUCCESS
        return FAILURE
    ctx.mem["seen"] = True
    me = ctx.me
    fd = ctx.params["follow_distance"]
    tx, ty = target.position
    sp = target.speed
    if sp > FOLLOW_MIN_SPEED:
        ux, uy = target.velocity[0] / sp, target.velocity[1] / sp
    else:
        d = dist(target.position, me.position)
        ux, uy = ((tx - me.pose.x) / d, (ty - me.pose.y) / d) if d > 0 else (1.0, 0.0)
    _steer(ctx, (tx - fd * ux, ty - fd * uy), BehaviorStatus.NAVIGATING, HOLD_RADIUS, (tx, ty))
    return RUNNING


@action(message=("str", ""))
def SaySomething(ctx):
    u = ctx.bb.speech.say(ctx.t, ctx.agent_id, ctx.params["message"])
    ctx.emit("SaySomething", "speech", u.message)
    ctx.bb["status"] = BehaviorStatus.INTERACTING
    return SUCCESS


@action(distance=("float", 1.0))
def BlockRobot(ctx):
    """Stand in the robot's way ``distance`` ahead of it, facing it."""
    robot = ctx.view.robot
    r = robot.position
    d = ctx.params["distance"]
    target = (r[0] + d * math.cos(robot.pose.yaw), r[1] + d * math.sin(robot.pose.yaw))
    _steer(ctx, target, BehaviorStatus.INTERACTING, HOLD_RADIUS, r)
    return RUNNING


@action(safe_distance=("float", 4.0))
def FleeFromRobot(ctx):
    """Move directly away from the robot until ``safe_distance`` away."""
    me, r = ctx.me, ctx.view.robot.position
    d = dist(me.position, r)
    if d >= ctx.params["safe_distance"]:
        _steer(ctx, None, BehaviorStatus.IDLE)
        return SUCCESS
    ux, uy = ((me.pose.x - r[0]) / d, (me.pose.y - r[1]) / d) if d > 0 else (1.0, 0.0)
    reach = ctx.params["safe_distance"] + 1.0
    _steer(ctx, (r[0] + reach * ux, r[1] + reach * uy), BehaviorStatus.NAVIGATING)
    return RUNNING


@action(factor=("float", 1.0), hold=("bool", False))
def SetSpeedFactor(ctx):
    """Scale the desired speed. With ``hold`` the leaf stays RUNNING, so a
    reactive parent can swap factors without a start/success per tick."""
    if ctx.params["factor"] < 0:
        return FAILURE
    ctx.bb["speed_factor"] = ctx.params["factor"]
    return RUNNING if ctx.params["hold"] else SUCCESS


# --------------------------------------------------------------- conditions


def _ok(flag: bool):
    return SUCCESS if flag else FAILURE


@condition(agent_id=("id", None), point=("point", REQUIRED), tolerance=("float", 0.5))
def IsAtPosition(ctx):
    aid = ctx.params["agent_id"]
    a = ctx.me if aid is None else ctx.view.agent(aid)
    if a is None:
        return FAILURE
    return _ok(dist(a.position, ctx.params["point"]) <= ctx.params["tolerance"])


@condition(agent_id=("id", REQUIRED), range=("float", 2.0))
def IsAgentNearby(ctx):
    other = ctx.view.agent(ctx.params["agent_id"])
    if other is None:
        return FAILURE
    return _ok(dist(ctx.me.position, other.position) <= ctx.params["range"])


@condition(range=("float", 3.0))
def IsRobotNearby(ctx):
    return _ok(dist(ctx.me.position, ctx.view.robot.position) <= ctx.params["range"])


@condition(range=("float", 5.0), fov=("float", DEFAULT_FOV), once=("bool", False))
def IsRobotVisible(ctx):
    """Robot within ``range``, inside the field of view and not occluded.

    With ``once`` the condition succeeds only on the first tick of each
    encounter; the encounter ends when the robot is no longer visible.
    """
    me, r = ctx.me, ctx.view.robot.position
    seen = (dist(me.position, r) <= ctx.params["range"]
            and in_fov(me.pose, r, ctx.params["fov"])
            and _visible(ctx, me.position, r))
    if not ctx.params["once"]:
        return _ok(seen)
    key = f"encounter:{ctx.path}"
    if not seen:
        ctx.bb.pop(key, None)
        return FAILURE
    if ctx.bb.get(key):
        return FAILURE
    ctx.bb[key] = True
    return SUCCESS


@condition(speaker_id=("id", None), message=("str", None))
def IsSpeaking(ctx):
    """Someone (optionally a given speaker / exact message) spoke during the
    last 5 s. Utterances from the current tick become visible next tick."""
    return _ok(ctx.bb.speech.active(ctx.t, ctx.params["speaker_id"], ctx.params["message"],
                                    include_now=False))


@condition(observer_id=("id", REQUIRED), cone=("float", math.pi / 3))
def IsLookingAtMe(ctx):
    obs = ctx.view.agent(ctx.params["observer_id"])
    if obs is None:
        return FAILURE
    me = ctx.me
    if obs.gaze_target is not None and tuple(obs.gaze_target) != obs.position:
        gaze = bearing(obs.position, obs.gaze_target)
    else:
        gaze = obs.pose.yaw
    if me.position != obs.position:
        off = abs(wrap_angle(bearing(obs.position, me.position) - gaze))
        if off > ctx.params["cone"] / 2.0:
            return FAILURE
    return _ok(_visible(ctx, obs.position, me.position))


@condition(keep_memory=True, duration=("float", REQUIRED))
def TimeExpired(ctx):
    """SUCCESS once ``duration`` seconds passed since the first tick after
    the last reset."""
    return _ok(ctx.elapsed() >= ctx.params["duration"] - EPS)


REGISTRY.aliases.update({
    "LookingAtPoint": "LookAtPoint",
    "LookingAtAgent": "LookAtAgent",
    "LookingAtRobot": "LookAtRobot",
    "isAtPosition": "IsAtPosition",
    "isSpeaking": "IsSpeaking",
    "isLookingAtMe": "IsLookingAtMe",
    "isRobotVisible": "IsRobotVisible",
    "isRobotNearby": "IsRobotNearby",
    "isAgentNearby": "IsAgentNearby",
})


# ----------------------------------------------------------------- presets

PRESETS = ("regular", "impassive", "surprised", "curious", "scared", "threatening")
SCARED_ROBOT_FACTOR = 2.5
SCARED_SPEED_BOOST = 1.25
SURPRISE_STOP = 3.0  # s


def _walk(goals: Optional[Sequence]) -> BtNode:
    """Goal walking for the reactive presets. A single goal ends in an
    open-ended wait so the enclosing loop does not restart every tick."""
    if goals is None:
        return bt.action("GoTo")
    pts = tuple((float(x), float(y)) for x, y in goals)
    if len(pts) == 1:
        return bt.sequence(bt.action("GoTo", goal=pts[0]),
                           bt.action("StopAndWaitTimer", duration=math.inf))
    return bt.action("GoTo", goals=pts)


def _walk_loop(goals: Optional[Sequence]) -> BtNode:
    """Cycle through the goals forever; a single goal is walked once."""
    if goals is not None and len(goals) == 1:
        (x, y), = goals
        return bt.repeat(bt.action("GoTo", goal=(float(x), float(y))), 1)
    return bt.repeat(_walk(goals))


def build_reaction_preset(kind: str, goals: Optional[Sequence] = None) -> BtNode:
    """Behavior tree for one of the six robot reactions.

    The tree root carries the robot social-force mode in ``meta``. With no
    ``goals`` the GoTo leaves walk the agent's own goal list.
    """
    if kind not in PRESETS:
        raise ValueError(f"unknown reaction preset {kind!r}; expected one of {', '.join(PRESETS)}")
    if goals is not None and not goals:
        goals = None
    walk = _walk(goals)
    robot_mode = "as_pedestrian"
    if kind in ("regular", "impassive"):
        tree = _walk_loop(goals)
        if kind == "impassive":
            robot_mode = "ignored"
    elif kind == "surprised":
        startle = bt.reactive_sequence(
            bt.condition("IsRobotVisible", range=4.0),
            bt.parallel(2, bt.action("LookAtRobot", duration=SURPRISE_STOP),
                        bt.action("StopAndWaitTimer", duration=SURPRISE_STOP)),
        )
        tree = bt.repeat(bt.reactive_fallback(
            bt.sequence(bt.condition("IsRobotVisible", range=4.0, once=True), startle),
            walk,
        ))
    elif kind == "curious":
        tree = bt.repeat(bt.reactive_fallback(
            bt.sequence(bt.condition("IsRobotVisible", range=5.0, once=True),
                        bt.action("ApproachRobot", stop_distance=1.5, observe_time=4.0)),
            walk,
        ))
    elif kind == "scared":
        robot_mode = f"custom_factor:{SCARED_ROBOT_FACTOR!r}"
        boost = bt.reactive_fallback(
            bt.reactive_sequence(bt.condition("IsRobotNearby", range=3.0),
                                 bt.action("SetSpeedFactor", factor=SCARED_SPEED_BOOST, hold=True)),
            bt.action("SetSpeedFactor", factor=1.0, hold=True),
        )
        tree = bt.parallel(2, bt.repeat(walk), boost)
    else:  # threatening
        tree = bt.repeat(bt.reactive_fallback(
            bt.reactive_sequence(bt.condition("IsRobotVisible", range=5.0), bt.action("BlockRobot")),
            walk,
        ))
    return BtNode(tree.kind, tree.name, tree.params, tree.children,
                  {"robot_mode": robot_mode, "preset": kind})
