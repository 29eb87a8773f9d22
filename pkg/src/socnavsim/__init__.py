"""Headless 2-D simulator of human navigation behavior for testing
human-aware robot navigation."""

from .bt import BehaviorTree, Blackboard, BtNode, SpeechChannel, Status
from .evaluator import METRICS, MetricsReport, Recorder, TrajectoryLog, evaluate, register
from .harness import Engine, RunConfig, run, simulate
from .scenario_io import Scenario, load_scenario, parse_bt, parse_scenario, serialize_bt, serialize_scenario
from .sfm import RobotMode, SfmParams
from .world import AgentState, OccupancyGrid, Pose2D, RobotState, WorldSnapshot

__version__ = "0.1.0"

__all__ = [
    "AgentState", "BehaviorTree", "Blackboard", "BtNode", "Engine", "METRICS", "MetricsReport",
    "OccupancyGrid", "Pose2D", "Recorder", "RobotMode", "RobotState", "RunConfig", "Scenario",
    "SfmParams", "SpeechChannel", "Status", "TrajectoryLog", "WorldSnapshot", "evaluate",
    "load_scenario", "parse_bt", "parse_scenario", "register", "run", "serialize_bt",
    "serialize_scenario", "simulate",
]
