import yaml

from socnavsim.bt import BehaviorTree, Blackboard, SpeechChannel
from socnavsim.scenario_io import parse_scenario
from socnavsim.world import AgentState, Pose2D, RobotState, WorldSnapshot

FAR = [60.0, 60.0, 0.0]  # parks the robot well away from everyone


def make_scenario(agents, robot=None, map=None, duration=30.0, dt=0.05, seed=1, **extra):
    """Build and parse a scenario from plain dicts."""
    doc = {
        "map": map or {"width": 30, "height": 30, "resolution": 0.5},
        "dt": dt,
        "duration": duration,
        "seed": seed,
        "robot": robot or {"pose": FAR},
        "agents": agents,
        **extra,
    }
    return parse_scenario(yaml.safe_dump(doc, sort_keys=False))


def inline_bt(body: str) -> dict:
    return {"bt_inline": f"<BehaviorTree>{body}</BehaviorTree>"}


def events_of(log, agent_id=None, name=None, event=None):
    return [e for e in log.events
            if (agent_id is None or e.agent_id == agent_id)
            and (name is None or e.name == name)
            and (event is None or e.event == event)]


def state_at(log, t, agent_id):
    for s in log.snapshots:
        if abs(s.t - t) < 1e-9:
            return s.agent(agent_id)
    raise KeyError(t)


class Ticker:
    """Ticks one tree by hand on snapshots the test builds."""

    def __init__(self, node, agent_id=1, speech=None):
        self.tree = BehaviorTree(node)
        self.bb = Blackboard(agent_id, speech if speech is not None else SpeechChannel())
        self.agent_id = agent_id
        self.events = []

    def tick(self, agents, robot=(5.0, 5.0, 0.0), t=0.0, grid=None):
        view = WorldSnapshot(t, RobotState(Pose2D(*robot)), tuple(agents), grid)
        return self.tree.tick(self.bb, view, self.agent_id,
                              lambda *e: self.events.append((t, *e)))


def person(aid=1, x=0.0, y=0.0, yaw=0.0, **kw):
    return AgentState(aid, Pose2D(x, y, yaw), **kw)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title, ok, note in sorted(results):
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] AC{number:02d} {title} ({note})")
