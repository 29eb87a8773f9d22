"""The ten acceptance criteria, one test each.

Every test records a PASS or FAIL line; ``conftest.py`` prints them at the
end of the session. Run alone with ``pytest tests/test_acceptance.py``.
"""

import math
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

import socnavsim
from socnavsim.bridge import Client, drive_scripted
from socnavsim.evaluator import trajectories_csv
from socnavsim.harness import RunConfig, run, simulate
from socnavsim.sfm import FORCE_FACTORS, default_params, sample_params
from socnavsim.world import dist

import test_bt
import test_evaluator
import test_scenario_io
import test_sfm
from conftest import FAR, events_of, make_scenario

DATA = Path(socnavsim.__file__).parent / "data"
RESULTS: list[tuple[int, str, bool, str]] = []


@contextmanager
def criterion(number, title):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as e:
        RESULTS.append((number, title, False, f"{type(e).__name__}: {str(e).splitlines()[0][:90]}"))
        raise
    RESULTS.append((number, title, True, f"{time.perf_counter() - t0:.2f} s"))


def within(seconds, t0):
    elapsed = time.perf_counter() - t0
    assert elapsed < seconds, f"took {elapsed:.2f} s, budget {seconds} s"


# 1 -------------------------------------------------------------------------


def test_ac01_sfm_unit_suite():
    with criterion(1, "SFM closed forms, monotonicity and mirror symmetry"):
        t0 = time.perf_counter()
        test_sfm.test_desired_force_examples()
        for extra, expected in [(0.0, 10.0), (0.2, 10.0 / math.e)]:
            test_sfm.test_obstacle_force_decay(extra, expected)
        test_sfm.test_social_force_head_on_at_rest()
        assert len(list(test_sfm.geometry_sweep())) == 200
        test_sfm.test_social_force_monotone_in_distance()
        test_sfm.test_social_force_mirror_symmetry()
        within(1.0, t0)


# 2 -------------------------------------------------------------------------


def test_ac02_free_space_convergence():
    with criterion(2, "free-space convergence over 50 seeds"):
        t0 = time.perf_counter()
        d, v0 = 10.0, 1.0
        budget = 1.5 * d / v0 + 5.0
        for seed in range(50):
            sc = make_scenario([{"id": 1, "pose": [5, 15, 0], "goals": [[15, 15]],
                                 "desired_speed": v0, "sfm": {"mode": "random"}}],
                               seed=seed, duration=budget)
            log = simulate(sc).log
            arrival = next((s.t for s in log.snapshots
                            if dist(s.agent(1).position, (15, 15)) <= 0.3), None)
            assert arrival is not None, f"seed {seed}: goal not reached in {budget} s"
            # cruising speed en route, between 4 m and 6 m travelled
            cruise = [math.hypot(*s.agent(1).velocity) for s in log.snapshots
                      if 9.0 <= s.agent(1).pose.x <= 11.0]
            assert cruise and all(abs(v - v0) <= 0.01 * v0 for v in cruise), seed
        within(10.0, t0)


# 3 -------------------------------------------------------------------------


def test_ac03_noise_modes():
    with criterion(3, "default, random and custom SFM modes"):
        sc = make_scenario([{"id": 1, "pose": [5, 15, 0], "goals": [[25, 15]]},
                            {"id": 2, "pose": [25, 15.2, math.pi], "goals": [[5, 15]]}],
                           duration=30)
        a, b = trajectories_csv(simulate(sc).log), trajectories_csv(simulate(sc).log)
        assert a == b
        assert simulate(sc, seed=99).log.snapshots[-1] == simulate(sc).log.snapshots[-1]

        base = default_params()
        n_sets = -(-100_000 // len(FORCE_FACTORS))
        draws = {k: np.empty(n_sets) for k in FORCE_FACTORS}
        for s in range(n_sets):
            p = sample_params(base, s)
            for k in FORCE_FACTORS:
                draws[k][s] = getattr(p, k)
        total = 0
        for k, x in draws.items():
            mu = getattr(base, k)
            if mu == 0.0:
                continue
            total += x.size
            assert x.min() >= 0.75 * mu and x.max() <= 1.25 * mu, k
            assert abs(x.mean() - mu) <= 0.005 * mu, k
            assert 0.09 * mu <= x.std() <= 0.10 * mu, k  # truncation trims sigma slightly
        assert total >= 100_000
        assert sample_params(base, 42) == sample_params(base, 42)

        test_sfm.test_custom_overrides_field_by_field()


# 4 -------------------------------------------------------------------------


def test_ac04_bt_semantics():
    with criterion(4, "BT truth tables and memory-sequence tick counts"):
        for kind, build, stop in [("Sequence", test_bt.sequence, "F"),
                                  ("ReactiveSequence", test_bt.reactive_sequence, "F"),
                                  ("Fallback", test_bt.fallback, "S"),
                                  ("ReactiveFallback", test_bt.reactive_fallback, "S")]:
            test_bt.test_sequence_fallback_truth_tables(kind, build, stop)
        test_bt.test_parallel_truth_table()
        for code, want in [("S", test_bt.F), ("F", test_bt.S), ("R", test_bt.R)]:
            test_bt.test_inverter_truth_table(code, want)
        test_bt.test_memory_sequence_ticks_succeeded_child_once()
        test_bt.test_memory_sequence_per_cycle_property()


# 5 -------------------------------------------------------------------------


def _first(log, aid, name, event, after=-1.0):
    evs = [e for e in events_of(log, aid, name, event) if e.t > after]
    assert evs, f"agent {aid}: no {name} {event} after t={after}"
    return evs[0]


def test_ac05_warehouse_workers():
    with criterion(5, "two-worker warehouse narrative"):
        t0 = time.perf_counter()
        log, _ = run(RunConfig(DATA / "warehouse_workers.yaml"))
        # worker 1: goto / look / wait cycles before anything social
        looks = {e.t for e in events_of(log, 1, "LookAtPoint", "start")}
        arrivals = events_of(log, 1, "GoTo", "success")
        assert len(arrivals) == 3 and all(g.t in looks for g in arrivals)
        waits = events_of(log, 1, "StopAndWaitTimer", "success")
        assert len(waits) >= 2
        at_pos = _first(log, 1, "IsAtPosition", "success")
        assert at_pos.t > waits[1].t

        # formation for both, then speech, then following
        f1 = _first(log, 1, "ConversationFormation", "success", after=at_pos.t)
        f2 = _first(log, 2, "ConversationFormation", "success")
        for f in (f1, f2):
            snap = next(s for s in log.snapshots if abs(s.t - f.t) < 1e-9)
            gap = dist(snap.agent(1).position, snap.agent(2).position)
            assert abs(gap - 1.8) <= 0.25, f"pair distance {gap:.3f} at formation"
        speech = [e for e in events_of(log, 2, "SaySomething", "speech") if e.detail == "follow me"]
        assert len(speech) == 1 and speech[0].t >= max(f1.t, f2.t)
        heard = _first(log, 1, "IsSpeaking", "success", after=f1.t)
        follow = _first(log, 1, "FollowAgent", "start")
        assert speech[0].t <= heard.t <= follow.t <= heard.t + 1e-9
        # FollowAgent stays active to the end
        assert not [e for e in log.events if e.agent_id == 1 and e.name == "FollowAgent"
                    and e.event in ("success", "failure", "halted")]
        assert not events_of(log, 1, event="tree_success")
        tail = log.snapshots[-1]
        assert dist(tail.agent(1).position, tail.agent(2).position) < 2.5
        within(10.0, t0)


# 6 -------------------------------------------------------------------------


def _head_on(kind, robot_pose=(18.0, 4.0, math.pi), velocity=(-0.6, 0.0)):
    sc = make_scenario([{"id": 1, "pose": [2, 3, 0], "goals": [[18, 3]],
                         "behavior": {"preset": kind}}],
                       robot={"pose": list(robot_pose),
                              "policy": {"type": "straight", "velocity": list(velocity)}},
                       map={"width": 20, "height": 6, "resolution": 0.5}, duration=25, seed=3)
    return simulate(sc).log


def _min_surface(log):
    return min(dist(s.agent(1).position, s.robot.position) - s.agent(1).radius - s.robot.radius
               for s in log.snapshots)


def test_ac06_reaction_presets():
    with criterion(6, "preset ordering scared > regular > threatening, impassive = baseline"):
        d = {k: _min_surface(_head_on(k)) for k in ("scared", "regular", "threatening")}
        assert d["scared"] > d["regular"] > d["threatening"], d
        passed = _head_on("impassive")
        baseline = _head_on("impassive", robot_pose=tuple(FAR), velocity=(0.0, 0.0))
        assert [s.agent(1) for s in passed.snapshots] == [s.agent(1) for s in baseline.snapshots]


# 7 -------------------------------------------------------------------------


def test_ac07_metrics_oracles(tmp_path):
    with criterion(7, "metric examples, brute-force zones, rigid-motion invariance"):
        ev = test_evaluator
        for fn in (ev.test_straight_east, ev.test_open_square_heading_change, ev.test_static_robot,
                   ev.test_short_window_makes_jerk_inapplicable, ev.test_static_intimate,
                   ev.test_flyby_social_only, ev.test_three_step_overlap_is_one_collision,
                   ev.test_force_far_is_zero, ev.test_force_halving_symmetric_log,
                   ev.test_head_on_beats_offset, ev.test_receding_has_no_danger,
                   ev.test_window_step_count, ev.test_default_window_is_whole_run,
                   ev.test_recorder_errors, ev.test_registry_size_and_custom_metric,
                   ev.test_ttc_closed_form):
            fn()
        ev.test_head_on_approach(math.pi, 0)
        ev.test_head_on_approach(0.0, 1)
        ev.test_report_roundtrip(tmp_path)
        ev.test_zone_counts_match_brute_force()
        ev.test_metrics_invariant_under_rigid_transforms()


# 8 -------------------------------------------------------------------------


@pytest.mark.parametrize("fixture, seed, duration", [("warehouse_workers.yaml", 11, 60.0)])
def test_ac08_bridge_equivalence(tmp_path, fixture, seed, duration):
    with criterion(8, "harness and stdio bridge give byte-identical trajectories.csv"):
        path = DATA / fixture
        run(RunConfig(path, seed=seed, duration=duration, out_dir=tmp_path / "a"))
        run(RunConfig(path, seed=seed, duration=duration, out_dir=tmp_path / "b"))
        a = (tmp_path / "a" / "trajectories.csv").read_bytes()
        assert a == (tmp_path / "b" / "trajectories.csv").read_bytes()

        proc = subprocess.Popen([sys.executable, "-m", "socnavsim", "serve", "--stdio",
                                 "--out", str(tmp_path / "bridge")],
                                stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        try:
            fin = drive_scripted(Client(proc.stdout, proc.stdin), path.read_text(),
                                 base_dir=DATA, duration=duration, seed=seed)
        finally:
            proc.stdin.close()
            proc.wait(timeout=60)
        assert fin["type"] == "ack"
        assert (tmp_path / "bridge" / "trajectories.csv").read_bytes() == a


# 9 -------------------------------------------------------------------------


def test_ac09_parser_suite():
    with criterion(9, "scenario and BT round trips, documented diagnostics"):
        sio = test_scenario_io
        for path in sio.FIXTURES:
            sio.test_fixture_roundtrip(path)
        for path in sio.BT_FIXTURES:
            sio.test_bt_fixture_roundtrip(path)
        sio.test_random_scenario_roundtrip()  # 200 generated scenarios
        sio.test_random_bt_roundtrip()
        for text, pattern in sio.SCENARIO_ERRORS:
            sio.test_scenario_errors(text, pattern)
        for xml, pattern in sio.BT_ERRORS:
            sio.test_bt_errors(xml, pattern)


# 10 ------------------------------------------------------------------------


def test_ac10_performance_budget():
    with criterion(10, "10 agents x 120 s at dt 0.05 under 15 s"):
        sc = test_scenario_io.load_scenario(DATA / "cafe.yaml")
        assert len(sc.agents) == 10
        t0 = time.perf_counter()
        log = simulate(sc, dt=0.05, duration=120.0).log
        within(15.0, t0)
        assert len(log) == 2401
