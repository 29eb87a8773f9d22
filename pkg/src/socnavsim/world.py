"""Geometry, agent/robot state types and the occupancy grid.

Everything here is immutable once built; the simulation produces new
``AgentState`` values every step instead of mutating old ones.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

Point = tuple[float, float]

TWO_PI = 2.0 * math.pi
NO_OBSTACLE = math.inf


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def bearing(src: Sequence[float], dst: Sequence[float]) -> float:
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def dist(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def norm(v: Sequence[float]) -> float:
    return math.hypot(v[0], v[1])


@dataclass(frozen=True, slots=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> Point:
        return (self.x, self.y)


class BehaviorStatus(str, enum.Enum):
    IDLE = "idle"
    NAVIGATING = "navigating"
    WAITING = "waiting"
    INTERACTING = "interacting"


@dataclass(frozen=True, slots=True)
class AgentState:
    """State of one simulated human.

    ``active_goal``, ``speed_factor`` and ``arrival_radius`` are the motion
    command written by the agent's behavior tree and consumed by the
    social force step. With ``arrival_radius`` set, the desired speed
    ramps down linearly inside that radius so the agent can hold a point.
    """

    id: int
    pose: Pose2D
    velocity: Point = (0.0, 0.0)
    desired_speed: float = 1.0
    max_speed: float = 1.5
    radius: float = 0.3
    group_id: Optional[int] = None
    gaze_target: Optional[Point] = None
    goals: tuple[Point, ...] = ()
    current_goal_index: int = 0
    behavior_status: BehaviorStatus = BehaviorStatus.IDLE
    active_goal: Optional[Point] = None
    speed_factor: float = 1.0
    arrival_radius: Optional[float] = None

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"agent id must be non-negative, got {self.id}")
        if not 0.2 <= self.radius <= 0.6:
            raise ValueError(f"agent {self.id}: radius {self.radius} outside [0.2, 0.6]")
        if self.desired_speed <= 0 or self.max_speed < self.desired_speed:
            raise ValueError(f"agent {self.id}: need 0 < desired_speed <= max_speed")
        if not 0 <= self.current_goal_index <= len(self.goals):
            raise ValueError(f"agent {self.id}: current_goal_index out of range")

    @property
    def position(self) -> Point:
        return (self.pose.x, self.pose.y)

    @property
    def speed(self) -> float:
        return norm(self.velocity)


@dataclass(frozen=True, slots=True)
class RobotState:
    pose: Pose2D
    velocity: Point = (0.0, 0.0)
    radius: float = 0.3

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("robot radius must be positive")

    @property
    def position(self) -> Point:
        return (self.pose.x, self.pose.y)


@dataclass(frozen=True)
class Group:
    group_id: int
    member_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.member_ids) < 2:
            raise ValueError("group requires ≥2 members")


class OutsideMapError(ValueError):
    pass


class OccupancyGrid:
    """Binary occupancy grid with a precomputed obstacle distance field.

    ``cells[row, col]`` is True for occupied cells. Row 0 is the bottom of
    the map (smallest y), so a cell's center is
    ``origin + ((col + 0.5) * resolution, (row + 0.5) * resolution)``.
    The origin yaw is carried for map-server compatibility but must be 0.
    """

    def __init__(self, cells, resolution: float, origin: Pose2D = Pose2D()):
        cells = np.asarray(cells, dtype=bool)
        if cells.ndim != 2 or cells.size == 0:
            raise ValueError("occupancy grid must be a non-empty 2-D array")
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if origin.yaw != 0.0:
            raise ValueError("rotated map origins are not supported")
        self.cells = cells
        self.cells.setflags(write=False)
        self.resolution = float(resolution)
        self.origin = origin
        self.height, self.width = cells.shape
        self._occupied = cells.tolist()
        if cells.any():
            edt, idx = ndimage.distance_transform_edt(~cells, return_indices=True)
            self.distance_field = edt * self.resolution
            self._nearest_row = idx[0].tolist()
            self._nearest_col = idx[1].tolist()
        else:
            self.distance_field = np.full(cells.shape, NO_OBSTACLE)
            self._nearest_row = self._nearest_col = None
        self.distance_field.setflags(write=False)

    @classmethod
    def empty(cls, width_m: float, height_m: float, resolution: float = 0.1,
              origin: Pose2D = Pose2D()) -> "OccupancyGrid":
        w = int(round(width_m / resolution))
        h = int(round(height_m / resolution))
        return cls(np.zeros((h, w), dtype=bool), resolution, origin)

    @classmethod
    def from_ascii(cls, text: str, resolution: float, origin: Pose2D = Pose2D()) -> "OccupancyGrid":
        """'#' occupied, '.' free; the first text line is the top (max y) row."""
        rows = [ln.strip() for ln in text.strip("\n").splitlines() if ln.strip()]
        if not rows:
            raise ValueError("inline map is empty")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ValueError("inline map rows have unequal length")
        bad = set("".join(rows)) - {"#", "."}
        if bad:
            raise ValueError(f"inline map contains invalid characters {sorted(bad)}")
        cells = np.array([[c == "#" for c in r] for r in rows], dtype=bool)[::-1]
        return cls(cells, resolution, origin)

    @classmethod
    def from_map_yaml(cls, path) -> "OccupancyGrid":
        """Load a map-server style YAML (image, resolution, origin, thresholds)."""
        import yaml
        from PIL import Image

        path = Path(path)
        meta = yaml.safe_load(path.read_text())
        image_path = Path(meta["image"])
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        pixels = np.asarray(Image.open(image_path).convert("L"), dtype=float) / 255.0
        occ = pixels if meta.get("negate", 0) else 1.0 - pixels
        cells = occ > float(meta.get("occupied_thresh", 0.65))
        ox, oy, oyaw = (list(meta.get("origin", [0.0, 0.0, 0.0])) + [0.0])[:3]
        return cls(cells[::-1], float(meta["resolution"]), Pose2D(ox, oy, oyaw))

    def to_ascii(self) -> str:
        return "\n".join("".join("#" if c else "." for c in row) for row in self.cells[::-1])

    @property
    def size_m(self) -> Point:
        return (self.width * self.resolution, self.height * self.resolution)

    def contains(self, p: Sequence[float]) -> bool:
        fx = (p[0] - self.origin.x) / self.resolution
        fy = (p[1] - self.origin.y) / self.resolution
        return 0.0 <= fx < self.width and 0.0 <= fy < self.height

    def cell_of(self, p: Sequence[float]) -> tuple[int, int]:
        """(row, col) of the cell containing p."""
        if not self.contains(p):
            raise OutsideMapError(f"point ({p[0]:.3f}, {p[1]:.3f}) outside map")
        col = int((p[0] - self.origin.x) / self.resolution)
        row = int((p[1] - self.origin.y) / self.resolution)
        return row, col

    def cell_center(self, row: int, col: int) -> Point:
        return (self.origin.x + (col + 0.5) * self.resolution,
                self.origin.y + (row + 0.5) * self.resolution)

    def is_occupied(self, p: Sequence[float]) -> bool:
        row, col = self.cell_of(p)
        return self._occupied[row][col]


def distance_to_nearest_obstacle(grid: OccupancyGrid, p: Sequence[float]) -> tuple[float, Point]:
    """Distance from p to the nearest occupied cell center and the unit
    vector pointing from that cell toward p.

    Returns ``(inf, (0, 0))`` on a map without obstacles and ``(0, (0, 0))``
    when p lies inside an occupied cell.
    """
    row, col = grid.cell_of(p)
    if grid._occupied[row][col]:
        return 0.0, (0.0, 0.0)
    if grid._nearest_row is None:
        return NO_OBSTACLE, (0.0, 0.0)
    cx, cy = grid.cell_center(grid._nearest_row[row][col], grid._nearest_col[row][col])
    dx, dy = p[0] - cx, p[1] - cy
    d = math.hypot(dx, dy)
    return d, (dx / d, dy / d)


def _crosses_occupied(grid: OccupancyGrid, a: Sequence[float], b: Sequence[float]) -> bool:
    # Amanatides-Woo traversal; cells outside the map are skipped.
    res = grid.resolution
    x0 = (a[0] - grid.origin.x) / res
    y0 = (a[1] - grid.origin.y) / res
    x1 = (b[0] - grid.origin.x) / res
    y1 = (b[1] - grid.origin.y) / res
    cx, cy = math.floor(x0), math.floor(y0)
    ex, ey = math.floor(x1), math.floor(y1)
    dx, dy = x1 - x0, y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    t_dx = abs(1.0 / dx) if dx != 0 else math.inf
    t_dy = abs(1.0 / dy) if dy != 0 else math.inf
    if dx > 0:
        t_max_x = (cx + 1 - x0) / dx
    elif dx < 0:
        t_max_x = (x0 - cx) / -dx
    else:
        t_max_x = math.inf
    if dy > 0:
        t_max_y = (cy + 1 - y0) / dy
    elif dy < 0:
        t_max_y = (y0 - cy) / -dy
    else:
        t_max_y = math.inf
    occ = grid._occupied
    w, h = grid.width, grid.height
    n = abs(ex - cx) + abs(ey - cy)
    for _ in range(n + 1):
        if 0 <= cx < w and 0 <= cy < h and occ[cy][cx]:
            return True
        if t_max_x < t_max_y:
            if t_max_x > 1.0:
                break
            cx += step_x
            t_max_x += t_dx
        else:
            if t_max_y > 1.0:
                break
            cy += step_y
            t_max_y += t_dy
    return False


def line_of_sight(grid: OccupancyGrid, a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff the segment a-b crosses no occupied cell."""
    for p in (a, b):
        if not grid.contains(p):
            raise OutsideMapError(f"point ({p[0]:.3f}, {p[1]:.3f}) outside map")
    return segment_clear(grid, a, b)


def segment_clear(grid: Optional[OccupancyGrid], a: Sequence[float], b: Sequence[float]) -> bool:
    """Like line_of_sight but tolerant: no map, or the part of the segment
    outside the map, counts as free space."""
    if grid is None:
        return True
    # Traverse in canonical endpoint order so the answer is symmetric.
    if (b[0], b[1]) < (a[0], a[1]):
        a, b = b, a
    return not _crosses_occupied(grid, a, b)


def in_fov(observer: Pose2D, target: Sequence[float], fov: float) -> bool:
    if not 0.0 < fov <= TWO_PI + 1e-12:
        raise ValueError("fov must be in (0, 2*pi]")
    if target[0] == observer.x and target[1] == observer.y:
        return True
    return abs(wrap_angle(bearing(observer.position, target) - observer.yaw)) <= fov / 2.0


@dataclass(frozen=True)
class WorldSnapshot:
    t: float
    robot: RobotState
    agents: tuple[AgentState, ...]
    grid: Optional[OccupancyGrid] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids in snapshot are not unique")

    def agent(self, agent_id: int) -> Optional[AgentState]:
        for a in self.agents:
            if a.id == agent_id:
                return a
        return None

    def with_agents(self, agents) -> "WorldSnapshot":
        return replace(self, agents=tuple(agents))


def groups_in(snapshot: WorldSnapshot) -> dict[int, Group]:
    members: dict[int, list[int]] = {}
    for a in snapshot.agents:
        if a.group_id is not None:
            members.setdefault(a.group_id, []).append(a.id)
    return {gid: Group(gid, tuple(ids)) for gid, ids in members.items() if len(ids) >= 2}
