"""Newline-delimited JSON bridge for external simulators.

One JSON object per line, UTF-8, strictly request -> reply. Requests:

    {"type": "init", "scenario": "<yaml text>", "base_dir": ".", "out_dir": "run1", "seed": 3}
    {"type": "step", "t": 0.0, "dt": 0.05,
     "robot": {"x": 0, "y": 0, "yaw": 0, "vx": 0, "vy": 0},
     "agents": [{"id": 1, "x": 2, "y": 0, "yaw": 3.14, "vx": 0, "vy": 0}]}
    {"type": "command", "command": "record_start" | "record_stop" | "finish"}
    {"type": "bye"}

Replies are ``ack``, ``agents_reply``, ``error`` or ``bye``. The states in
a ``step`` are authoritative: the engine adopts them, ticks every behavior
tree, runs one social-force step and answers with the agents at t + dt.
``finish`` may carry a last observation (``t``, ``robot``, ``agents``)
that is recorded without stepping. The full field list is in the README.
"""

from __future__ import annotations

import json
import os
import socket
import sys
import threading
from pathlib import Path
from typing import Callable, Optional, TextIO

from .evaluator import write_partial, write_report
from .harness import ANIMATION, Engine, make_policy, step_time
from .scenario_io import ScenarioError, parse_scenario
from .world import Pose2D, RobotState

DEFAULT_PORT = 7878
OUT_ENV = "SOCNAVSIM_OUT"


class ProtocolError(ValueError):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "socnavsim_out"))


def _num(d: dict, key: str, default=None) -> float:
    if key not in d:
        if default is None:
            raise ProtocolError(f"missing field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError(f"field {key!r} must be a number")
    return float(v)


def robot_from_json(d, radius: float) -> RobotState:
    if not isinstance(d, dict):
        raise ProtocolError("robot must be an object")
    return RobotState(Pose2D(_num(d, "x"), _num(d, "y"), _num(d, "yaw", 0.0)),
                      (_num(d, "vx", 0.0), _num(d, "vy", 0.0)), radius)


def agents_from_json(items) -> dict:
    if not isinstance(items, list):
        raise ProtocolError("agents must be a list")
    out = {}
    for a in items:
        if not isinstance(a, dict) or not isinstance(a.get("id"), int):
            raise ProtocolError("agent entries need an integer id")
        if a["id"] in out:
            raise ProtocolError(f"duplicate agent id {a['id']}")
        out[a["id"]] = (Pose2D(_num(a, "x"), _num(a, "y"), _num(a, "yaw", 0.0)),
                        (_num(a, "vx", 0.0), _num(a, "vy", 0.0)))
    return out


def robot_to_json(r: RobotState) -> dict:
    return {"x": r.pose.x, "y": r.pose.y, "yaw": r.pose.yaw, "vx": r.velocity[0], "vy": r.velocity[1]}


def agent_to_json(a) -> dict:
    d = {"id": a.id, "x": a.pose.x, "y": a.pose.y, "yaw": a.pose.yaw,
         "vx": a.velocity[0], "vy": a.velocity[1],
         "status": a.behavior_status.value, "animation": ANIMATION[a.behavior_status]}
    if a.gaze_target is not None:
        d["gaze_target"] = list(a.gaze_target)
    return d


class Session:
    """Protocol state machine for one client."""

    def __init__(self, out_dir: Optional[Path] = None):
        self.engine: Optional[Engine] = None
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.closed = False
        self.finished = False

    def handle(self, msg) -> dict:
        try:
            if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
                raise ProtocolError("message must be an object with a string 'type'")
            kind = msg["type"]
            fn = getattr(self, f"_on_{kind}", None)
            if fn is None:
                raise ProtocolError(f"unknown message type {kind!r}")
            return fn(msg)
        except (ProtocolError, ScenarioError, ValueError, KeyError) as e:
            text = e.args[0] if isinstance(e, KeyError) and e.args else str(e)
            return {"type": "error", "message": str(text)}

    def handle_line(self, line: str) -> dict:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            return {"type": "error", "message": f"malformed JSON: {e.msg}"}
        return self.handle(msg)

    # -- messages

    def _on_init(self, msg):
        if self.engine is not None:
            raise ProtocolError("already initialized")
        text = msg.get("scenario")
        if not isinstance(text, str):
            raise ProtocolError("init needs the scenario YAML text in 'scenario'")
        scenario = parse_scenario(text, base_dir=msg.get("base_dir"))
        seed = msg.get("seed")
        self.engine = Engine(scenario, seed=seed)
        if "out_dir" in msg:
            self.out_dir = Path(msg["out_dir"])
        self._policy_goal = make_policy(scenario).goal
        if self.engine.robot_goal is None:
            self.engine.robot_goal = self._policy_goal
        return {"type": "ack", "agents": len(self.engine.pending), "dt": self.engine.dt,
                "agent_states": [agent_to_json(a) for a in self.engine.pending]}

    def _need_engine(self) -> Engine:
        if self.engine is None:
            raise ProtocolError("uninitialized")
        if self.finished:
            raise ProtocolError("session finished")
        return self.engine

    def _observe(self, msg):
        eng = self.engine
        t = _num(msg, "t")
        if eng.current is not None and t <= eng.current.t:
            raise ProtocolError("non-monotonic time")
        robot = robot_from_json(msg.get("robot"), eng.robot_radius)
        adopt = agents_from_json(msg.get("agents", []))
        eng.observe(t, robot, adopt)

    def _on_step(self, msg):
        eng = self._need_engine()
        if "dt" in msg and abs(_num(msg, "dt") - eng.dt) > 1e-12:
            raise ProtocolError(f"dt mismatch: scenario uses {eng.dt!r}")
        if "robot" not in msg:
            raise ProtocolError("missing field 'robot'")
        self._observe(msg)
        agents = eng.advance()
        return {"type": "agents_reply", "t": round(eng.current.t + eng.dt, 9),
                "agents": [agent_to_json(a) for a in agents]}

    def _on_command(self, msg):
        eng = self._need_engine()
        cmd = msg.get("command")
        if cmd in ("record_start", "record_stop"):
            eng.record(cmd.split("_")[1])
            return {"type": "ack", "command": cmd, "t": eng.current.t}
        if cmd == "finish":
            if "robot" in msg:
                self._observe(msg)
            if eng.current is None:
                raise ProtocolError("nothing to evaluate")
            reports = eng.finish(eng.scenario.metrics,
                                 {"scenario": eng.scenario.name, "duration": eng.current.t})
            out = self.out_dir or default_out_dir()
            paths = write_report(reports, eng.log, out, reports[0].metadata)
            self.finished = True
            return {"type": "ack", "command": "finish", "report": str(paths["metrics"]),
                    "trajectories": str(paths["trajectories"])}
        raise ProtocolError(f"unknown command {cmd!r}")

    def _on_bye(self, msg):
        self.closed = True
        return {"type": "bye"}

    def flush_partial(self) -> Optional[dict]:
        """Write what was logged so far (used on EOF / disconnect)."""
        if self.engine is None or self.finished or not self.engine.log.snapshots:
            return None
        return write_partial(self.engine.log, self.out_dir or default_out_dir())


def serve_lines(readline: Callable[[], str], write: Callable[[str], None],
                session: Optional[Session] = None) -> Session:
    """Run one session over a line reader and writer until bye or EOF."""
    session = session or Session()
    try:
        while not session.closed:
            line = readline()
            if not line:
                break
            if not line.strip():
                continue
            reply = session.handle_line(line)
            write(json.dumps(reply) + "\n")
    finally:
        if not session.closed:
            session.flush_partial()
    return session


def serve_stdio(stdin: TextIO = None, stdout: TextIO = None, out_dir=None) -> Session:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def write(s):
        stdout.write(s)
        stdout.flush()

    return serve_lines(stdin.readline, write, Session(out_dir))


def serve_tcp(host: str = "127.0.0.1", port: int = DEFAULT_PORT, out_dir=None,
              ready: Optional[Callable[[int], None]] = None) -> Session:
    """Serve exactly one client. Connections arriving while it is active
    get an error line and are closed."""
    srv = socket.create_server((host, port))
    srv.settimeout(0.2)
    if ready is not None:
        ready(srv.getsockname()[1])
    session = Session(out_dir)
    done = threading.Event()

    def refuse_others():
        while not done.is_set():
            try:
                extra, _ = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with extra:
                msg = {"type": "error", "message": "server busy: single session only"}
                extra.sendall((json.dumps(msg) + "\n").encode())

    try:
        while True:
            try:
                conn, _ = srv.accept()
                break
            except socket.timeout:
                continue
        guard = threading.Thread(target=refuse_others, daemon=True)
        guard.start()
        with conn, conn.makefile("r", encoding="utf-8", newline="\n") as rf:
            def write(s):
                conn.sendall(s.encode())
            try:
                serve_lines(rf.readline, write, session)
            except (ConnectionError, OSError):
                session.flush_partial()
    finally:
        done.set()
        srv.close()
    return session


class Client:
    """Minimal NDJSON client over a pair of text streams (or a socket)."""

    def __init__(self, rfile, wfile):
        self.rfile, self.wfile = rfile, wfile

    @classmethod
    def connect(cls, host: str, port: int) -> "Client":
        sock = socket.create_connection((host, port))
        cli = cls(sock.makefile("r", encoding="utf-8"), sock.makefile("w", encoding="utf-8"))
        cli.sock = sock
        return cli

    def request(self, msg: dict) -> dict:
        self.wfile.write(json.dumps(msg) + "\n")
        self.wfile.flush()
        line = self.rfile.readline()
        if not line:
            raise ConnectionError("bridge closed the connection")
        return json.loads(line)

    def close(self):
        for f in (self.wfile, self.rfile):
            try:
                f.close()
            except OSError:
                pass
        if hasattr(self, "sock"):
            self.sock.close()


def drive_scripted(client: Client, scenario_text: str, base_dir=None, out_dir=None,
                   duration: Optional[float] = None, seed: Optional[int] = None,
                   record=()) -> dict:
    """Play a scenario through the bridge the way an external simulator
    would: the robot follows the scenario policy, agent states are echoed
    back unchanged. Returns the ``finish`` reply."""
    scenario = parse_scenario(scenario_text, base_dir=base_dir)
    init = {"type": "init", "scenario": scenario_text}
    if base_dir is not None:
        init["base_dir"] = str(base_dir)
    if out_dir is not None:
        init["out_dir"] = str(out_dir)
    if seed is not None:
        init["seed"] = seed
    ack = client.request(init)
    if ack["type"] != "ack":
        raise ProtocolError(ack.get("message", "init failed"))
    dt = ack["dt"]
    policy = make_policy(scenario)
    n = int(round((scenario.duration if duration is None else duration) / dt))
    agents = [{k: a[k] for k in ("id", "x", "y", "yaw", "vx", "vy")} for a in ack["agent_states"]]
    marks = {}
    for start, stop in record:
        marks.setdefault(round(start / dt), []).append("record_start")
        marks.setdefault(round(stop / dt), []).append("record_stop")
    for k in range(n):
        t = step_time(k, dt)
        reply = client.request({"type": "step", "t": t, "dt": dt,
                                "robot": robot_to_json(policy.state_at(t)), "agents": agents})
        if reply["type"] != "agents_reply":
            raise ProtocolError(reply.get("message", "step failed"))
        for cmd in sorted(marks.get(k, ()), key=lambda c: c != "record_stop"):
            client.request({"type": "command", "command": cmd})
        agents = [{k2: a[k2] for k2 in ("id", "x", "y", "yaw", "vx", "vy")} for a in reply["agents"]]
    t = step_time(n, dt)
    fin = client.request({"type": "command", "command": "finish", "t": t,
                          "robot": robot_to_json(policy.state_at(t)), "agents": agents})
    client.request({"type": "bye"})
    return fin
