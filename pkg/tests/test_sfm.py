import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socnavsim.sfm import (
    FORCE_FACTORS,
    DegeneracyCounter,
    ForceBreakdown,
    RobotMode,
    SfmParams,
    default_params,
    desired_force,
    group_forces,
    obstacle_force,
    pair_social_force,
    sample_params,
    social_force,
    step_agent,
)
from socnavsim.world import AgentState, Group, OccupancyGrid, Pose2D, RobotState, WorldSnapshot

P = default_params()


def agent(x=0.0, y=0.0, yaw=0.0, v=(0.0, 0.0), **kw):
    return AgentState(kw.pop("id", 1), Pose2D(x, y, yaw), velocity=v, **kw)


def oracle_pair(p_i, v_i, p_j, v_j, prm=P):
    """Independent numpy evaluation of the pairwise interaction term."""
    p_i, v_i, p_j, v_j = map(np.asarray, (p_i, v_i, p_j, v_j))
    d = p_j - p_i
    e = d / np.linalg.norm(d)
    D = prm.lambda_ * (v_i - v_j) + e
    t = D / np.linalg.norm(D)
    B = prm.gamma * np.linalg.norm(D)
    theta = math.atan2(t[0] * e[1] - t[1] * e[0], np.dot(t, e))
    if abs(theta) <= 1e-9:
        theta = 0.0
    dist = np.linalg.norm(d)
    f_v = -math.exp(-dist / B - (prm.n_prime * B * theta) ** 2)
    f_th = -np.sign(theta) * math.exp(-dist / B - (prm.n * B * theta) ** 2)
    normal = np.array([-t[1], t[0]])
    return prm.k_social * (f_v * t + f_th * normal)


# -------------------------------------------------------------- params


def test_default_params():
    p = default_params()
    assert p == default_params()
    assert p.mode == "default"
    assert (p.k_desired, p.relaxation_time, p.k_obstacle, p.B_obstacle, p.k_social) == (
        1.0, 0.5, 10.0, 0.2, 2.1)
    assert (p.lambda_, p.gamma, p.n, p.n_prime) == (2.0, 0.35, 2.0, 3.0)
    assert (p.k_group_gaze, p.k_group_coherence, p.k_group_repulsion, p.perception_radius) == (
        3.0, 2.0, 1.0, 10.0)


def test_param_invariants():
    with pytest.raises(ValueError):
        SfmParams(k_social=-1)
    with pytest.raises(ValueError):
        SfmParams(relaxation_time=0)
    with pytest.raises(ValueError):
        SfmParams(mode="noisy")


def test_custom_overrides_field_by_field():
    c = P.with_overrides({"k_social": 3.0, "gamma": 0.5})
    assert c.mode == "custom" and c.k_social == 3.0 and c.gamma == 0.5
    for name in SfmParams.field_names():
        if name not in ("k_social", "gamma"):
            assert getattr(c, name) == getattr(P, name)
    with pytest.raises(ValueError, match="unknown SFM parameter"):
        P.with_overrides({"k_soc": 1})


def test_sample_params_bounds_and_mean():
    ks = np.array([sample_params(P, s).k_social for s in range(10_000)])
    assert ks.min() >= 1.575 and ks.max() <= 2.625
    assert abs(ks.mean() - 2.1) <= 0.01


def test_sample_params_deterministic_and_shape_kept():
    a, b = sample_params(P, 12345), sample_params(P, 12345)
    assert a == b and a.mode == "random"
    assert sample_params(P, 1) != sample_params(P, 2)
    for name in ("relaxation_time", "lambda_", "gamma", "n", "n_prime", "perception_radius"):
        assert getattr(a, name) == getattr(P, name)


@settings(max_examples=200)
@given(st.integers(0, 2**64 - 1))
def test_sample_params_within_truncation(seed):
    s = sample_params(P, seed)
    for name in FORCE_FACTORS:
        base = getattr(P, name)
        assert 0.75 * base <= getattr(s, name) <= 1.25 * base


# ------------------------------------------------------------- desired


def test_desired_force_examples():
    assert desired_force(agent(), (5, 0), P) == (2.0, 0.0)
    assert desired_force(agent(v=(1.0, 0.0)), (5, 0), P) == (0.0, 0.0)
    assert desired_force(agent(v=(1.0, 0.0)), (-5, 0), P) == (-4.0, 0.0)


def test_desired_force_without_goal_brakes():
    assert desired_force(agent(v=(0.5, 0.0)), None, P) == (-1.0, 0.0)
    assert desired_force(agent(), (0, 0), P) == (0.0, 0.0)


# ------------------------------------------------------------ obstacle


def wall_grid():
    cells = np.zeros((40, 40), bool)
    cells[:, 0] = True  # column x in [0, 0.1)
    return OccupancyGrid(cells, 0.1)


def test_obstacle_force_empty_map():
    assert obstacle_force(agent(1, 1), OccupancyGrid.empty(20, 20, 0.1), P) == (0.0, 0.0)
    assert obstacle_force(agent(1, 1), None, P) == (0.0, 0.0)


@pytest.mark.parametrize("extra, expected", [(0.0, 10.0), (0.2, 10.0 / math.e)])
def test_obstacle_force_decay(extra, expected):
    # nearest occupied cell centre is x = 0.05
    a = agent(0.05 + 0.3 + extra, 2.05)
    f = obstacle_force(a, wall_grid(), P)
    assert math.isclose(math.hypot(*f), expected, rel_tol=1e-9)
    assert f[0] > 0 and abs(f[1]) < 1e-12


# -------------------------------------------------------------- social


def test_social_force_no_neighbors():
    assert social_force(agent(), [], P) == (0.0, 0.0)


def test_social_force_head_on_at_rest():
    f = social_force(agent(), [((2.0, 0.0), (0.0, 0.0))], P)
    expected = -2.1 * math.exp(-2 / 0.35)
    assert abs(f[0] - expected) <= 1e-9 and f[1] == 0.0
    assert abs(math.hypot(*f) - 6.9e-3) < 1e-4


def test_social_force_closer_is_stronger():
    near = social_force(agent(), [((1.0, 0.0), (0.0, 0.0))], P)
    far = social_force(agent(), [((2.0, 0.0), (0.0, 0.0))], P)
    assert math.hypot(*near) > math.hypot(*far)


def test_social_force_perception_radius():
    assert social_force(agent(), [((10.5, 0.0), (0.0, 0.0))], P) == (0.0, 0.0)


def test_social_force_degeneracies_counted():
    c = DegeneracyCounter()
    assert social_force(agent(1, 1), [((1.0, 1.0), (0.0, 0.0))], P, c) == (0.0, 0.0)
    assert c.coincident == 1
    # lambda*(v_i - v_j) = -e makes D vanish
    f = pair_social_force((0, 0), (0.0, 0.0), (1, 0), (0.5, 0.0), P, c)
    assert f == (0.0, 0.0) and c.zero_interaction == 1


@settings(max_examples=200, deadline=None)
@given(st.tuples(st.floats(-6, 6), st.floats(-6, 6)),
       st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)),
       st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)))
def test_social_force_matches_oracle(d, v_i, v_j):
    if math.hypot(*d) < 0.1:
        return
    D = np.array(v_i) * 2 - np.array(v_j) * 2 + np.array(d) / math.hypot(*d)
    if np.linalg.norm(D) < 1e-6:
        return
    got = pair_social_force((0.0, 0.0), v_i, d, v_j, P)
    want = oracle_pair((0, 0), v_i, d, v_j) / P.k_social
    assert np.allclose(got, want, rtol=1e-9, atol=1e-12)


def geometry_sweep(n=200, seed=3):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield (rng.uniform(0.2, 1.4), rng.uniform(-np.pi, np.pi), rng.uniform(-1.4, 1.4),
               rng.uniform(-1.4, 1.4), rng.uniform(-np.pi, np.pi))


def test_social_force_monotone_in_distance():
    dists = np.linspace(0.5, 8.0, 16)
    for speed, bearing, vjx, vjy, _ in geometry_sweep():
        v_i = (speed, 0.0)
        u = (math.cos(bearing), math.sin(bearing))
        mags = [math.hypot(*pair_social_force((0, 0), v_i, (r * u[0], r * u[1]), (vjx, vjy), P))
                for r in dists]
        if mags[0] == 0.0:
            continue
        assert all(a > b for a, b in zip(mags, mags[1:]))


def test_social_force_mirror_symmetry():
    for speed, bearing, vjx, vjy, _ in geometry_sweep():
        r = 2.0
        p = (r * math.cos(bearing), r * math.sin(bearing))
        f = pair_social_force((0, 0), (speed, 0.0), p, (vjx, vjy), P)
        g = pair_social_force((0, 0), (speed, 0.0), (p[0], -p[1]), (vjx, -vjy), P)
        assert math.isclose(f[0], g[0], rel_tol=1e-9, abs_tol=1e-15)
        assert math.isclose(f[1], -g[1], rel_tol=1e-9, abs_tol=1e-15)


# --------------------------------------------------------------- group


def test_group_forces_facing_centroid_zero():
    a = agent(0, 0, 0.0, id=1, radius=0.2)
    b = agent(0.9, 0.4, 0.0, id=2, radius=0.2)
    c = agent(0.9, -0.4, 0.0, id=3, radius=0.2)
    # centroid 0.9 m ahead, coherence radius (3-1)/2 = 1.0, nobody closer than 0.6
    assert group_forces(a, Group(1, (1, 2, 3)), [a, b, c], P) == (0.0, 0.0)


def test_group_centroid_on_agent():
    c = agent(0, 0, 0.0, id=3, radius=0.2)
    d = agent(0.0, 0.7, 0.0, id=4, radius=0.2)
    e = agent(0.0, -0.7, 0.0, id=5, radius=0.2)
    assert group_forces(c, Group(2, (3, 4, 5)), [c, d, e], P) == (0.0, 0.0)


def test_group_coherence_pulls_toward_partner():
    a = agent(0, 0, 0.0, id=1)
    b = agent(3, 0, 0.0, id=2)
    assert group_forces(a, Group(1, (1, 2)), [a, b], P) == (2.0, 0.0)


def test_group_gaze_term():
    a = agent(0, 0, math.pi, id=1)  # facing away from the partner
    b = agent(3, 0, 0.0, id=2)
    f = group_forces(a, Group(1, (1, 2)), [a, b], P)
    assert math.isclose(f[0], 2.0 + 3.0 * math.pi / 2, rel_tol=1e-12)


def test_group_repulsion_pushes_away():
    a = agent(0, 0, 0.0, id=1)
    b = agent(0.3, 0, 0.0, id=2)
    f = group_forces(a, Group(1, (1, 2)), [a, b], P)
    assert f == (-1.0, 0.0)


def test_group_errors():
    a = agent(id=1)
    with pytest.raises(ValueError, match="not a member"):
        group_forces(a, Group(1, (2, 3)), [a], P)


# ---------------------------------------------------------------- step


def snap(*agents, robot=(50.0, 50.0), rv=(0.0, 0.0), grid=None):
    return WorldSnapshot(0.0, RobotState(Pose2D(*robot), rv), tuple(agents), grid)


def test_step_converges_to_desired_speed():
    a = agent(active_goal=(1000.0, 0.0))
    for _ in range(200):
        a, _ = step_agent(a, snap(a), P, 0.05)
    assert abs(a.speed - 1.0) <= 0.01
    assert abs(a.pose.yaw) < 1e-6


def test_step_zero_force_is_pure_drift():
    a = agent(v=(0.5, 0.25), active_goal=None, desired_speed=1.0)
    p = SfmParams(k_desired=0.0)
    b, forces = step_agent(a, snap(a), p, 0.1)
    assert forces.total == (0.0, 0.0)
    assert b.position == (0.05, 0.025) and b.velocity == (0.5, 0.25)


def test_step_breakdown_sums_exactly():
    a = agent(1, 1, v=(0.3, 0.1), active_goal=(8.0, 5.0), group_id=1)
    b = agent(1.8, 1.2, v=(-0.2, 0.0), id=2, group_id=1)
    s = snap(a, b, robot=(2.5, 1.0), rv=(-0.5, 0.0), grid=wall_grid())
    new, f = step_agent(a, s, P, 0.05)
    assert f.total == (f.desired[0] + f.obstacle[0] + f.social[0] + f.group[0],
                       f.desired[1] + f.obstacle[1] + f.social[1] + f.group[1])
    vx = a.velocity[0] + f.total[0] * 0.05
    assert math.isclose(new.velocity[0], vx, rel_tol=1e-12) or new.speed == pytest.approx(a.max_speed)


def test_breakdown_of_is_exact():
    b = ForceBreakdown.of((0.1, 0.2), (0.3, 0.4), (0.5, 0.6), (0.7, 0.8))
    assert b.total == (0.1 + 0.3 + 0.5 + 0.7, 0.2 + 0.4 + 0.6 + 0.8)


def test_speed_clamped():
    a = agent(v=(1.4, 0.0), active_goal=(100.0, 0.0), desired_speed=1.5, max_speed=1.5)
    for _ in range(50):
        a, _ = step_agent(a, snap(a), SfmParams(k_desired=50.0), 0.2)
        assert a.speed <= 1.5 + 1e-12


def test_yaw_rate_limited():
    a = agent(yaw=0.0, v=(-1.0, 0.0), active_goal=(-100.0, 0.0))
    b, _ = step_agent(a, snap(a), P, 0.1)
    assert abs(b.pose.yaw) == pytest.approx(math.pi * 0.1)


def test_slow_agent_keeps_yaw():
    a = agent(yaw=1.0, v=(0.0, 0.0), active_goal=None)
    b, _ = step_agent(a, snap(a), P, 0.05)
    assert b.pose.yaw == 1.0


def test_step_dt_range():
    a = agent()
    for dt in (0.0, -0.1, 0.25):
        with pytest.raises(ValueError):
            step_agent(a, snap(a), P, dt)


def test_robot_modes():
    a = agent(active_goal=None)
    s = snap(a, robot=(1.0, 0.0))
    base = step_agent(a, s, P, 0.05)[1].social
    assert step_agent(a, s, P, 0.05, RobotMode.ignored())[1].social == (0.0, 0.0)
    half = step_agent(a, s, P, 0.05, RobotMode.custom_factor(0.5))[1].social
    assert half[0] == pytest.approx(0.5 * base[0], rel=1e-12)
    assert base[0] < 0


def test_robot_mode_parse():
    assert RobotMode.parse("ignored") == RobotMode.ignored()
    m = RobotMode.parse("custom_factor:2.5")
    assert m.factor == 2.5 and str(m) == "custom_factor:2.5"
    with pytest.raises(ValueError):
        RobotMode.parse("shy")
    with pytest.raises(ValueError):
        RobotMode.custom_factor(-1)


def test_step_deterministic():
    def go():
        a = agent(active_goal=(5.0, 3.0))
        b = agent(4, 2, id=2, active_goal=(0.0, 0.0))
        out = []
        for _ in range(100):
            s = snap(a, b, robot=(2.0, 1.0), rv=(0.1, 0.1))
            a, b = step_agent(a, s, P, 0.05)[0], step_agent(b, s, P, 0.05)[0]
            out.append((a.pose, b.pose))
        return out
    assert go() == go()
