"""Monte-Carlo safety estimation for a symbolic driving action.

A control (accel, steer) counts as safe against a surrounding vehicle at time
t when holding it constant for the rest of the horizon keeps the two
footprints separated by at least d_safe at every sampled instant. The safety
value of an action is the fraction of uniformly sampled controls that are
safe, folded over the horizon with (max + mean) / 2 and minimized over the
surrounding vehicles, i.e. only the most dangerous vehicle counts.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import EstimatorParams, KMH_20
from .geometry import ControlEnvelope, Pose, Trajectory, footprints_clear
from .motion_planner import NoPath, VehicleState, plan_path
from .seeding import derive_rng, derive_seed
from .symbolic import map_state


def predict_surrounding(v: VehicleState, horizon, interval=0.5, turn_rate=0.0) -> Trajectory:
    """Constant-speed, constant-turn-rate extrapolation sampled at `interval`.

    The turn rate defaults to zero (straight-line motion) because observed
    states carry no angular speed.
    """
    t1, t2 = horizon
    if t2 <= t1:
        raise ValueError("empty prediction horizon")
    n = int(math.floor((t2 - t1) / interval + 1e-9)) + 1
    times = [t1 + k * interval for k in range(n)]
    if times[-1] < t2 - 1e-9:
        times.append(t2)
    samples = []
    x0, y0, h0 = v.pose.x, v.pose.y, v.pose.heading
    for t in times:
        dt = t - t1
        if abs(turn_rate) < 1e-12:
            x = x0 + v.speed * dt * math.cos(h0)
            y = y0 + v.speed * dt * math.sin(h0)
            h = h0
        else:
            r = v.speed / turn_rate
            h = h0 + turn_rate * dt
            x = x0 + r * (math.sin(h) - math.sin(h0))
            y = y0 - r * (math.cos(h) - math.cos(h0))
        samples.append((t, Pose(x, y, h), v.speed))
    return Trajectory(samples)


@dataclass
class SafeControlSet:
    """Membership test over the control envelope at a fixed time."""

    time: float
    membership: object  # callable (accel array, steer array) -> bool array
    envelope: ControlEnvelope = field(default_factory=ControlEnvelope)

    def contains(self, u):
        if not self.envelope.contains(u):
            return False
        return bool(self.membership(np.array([u.accel]), np.array([u.steer]))[0])


def footprint_membership(ego_pose, ego_speed, ego_dims, predicted: Trajectory,
                         t, t_end, step, d_safe, wheelbase, other_dims=(4.5, 2.0)):
    """Safe-set membership for an ego at (pose, speed) at time t.

    A control is a member when forward-simulating it (held constant, at the
    same `step` the instants are checked at) keeps the ego footprint clear of
    the predicted footprint by d_safe at every instant t, t + step, ..., t_end.
    Clearance uses the inflated separating-axis test of footprints_clear.
    """
    steps = max(0, int(round((t_end - t) / step)))
    others = []
    for k in range(steps + 1):
        pose, _ = predicted.state_at(t + k * step)
        others.append((pose.x, pose.y, pose.heading))

    def member(accel, steer):
        accel = np.asarray(accel, dtype=float)
        steer = np.asarray(steer, dtype=float)
        xs = np.full(accel.shape, ego_pose.x)
        ys = np.full(accel.shape, ego_pose.y)
        hs = np.full(accel.shape, ego_pose.heading)
        vs = np.full(accel.shape, ego_speed)
        tan_steer = np.tan(steer)
        ok = footprints_clear(xs, ys, hs, ego_dims, *others[0], other_dims, d_safe)
        for k in range(1, steps + 1):
            if not ok.any():
                break
            vs = np.maximum(0.0, vs + accel * step)
            hs = hs + (vs / wheelbase) * tan_steer * step
            xs = xs + vs * np.cos(hs) * step
            ys = ys + vs * np.sin(hs) * step
            ok &= footprints_clear(xs, ys, hs, ego_dims, *others[k], other_dims, d_safe)
        return ok

    return member


def safe_probability(ego: VehicleState, predicted: Trajectory, t, M, d_safe, seed,
                     t_end=None, step=0.5, envelope=ControlEnvelope(),
                     membership=None, rng=None, other_dims=(4.5, 2.0)) -> float:
    """Fraction of M uniform control draws lying in the safe set at time t.

    By default membership is the footprint-separation test against the
    predicted trajectory over [t, t_end]; pass `membership` to swap in a
    synthetic region (used by the convergence tests).
    """
    if M < 1:
        raise ValueError("need at least one sample")
    if membership is None:
        end = t + 3.0 if t_end is None else t_end
        membership = footprint_membership(ego.pose, ego.speed, (ego.length, ego.width),
                                          predicted, t, end, step, d_safe,
                                          ego.wheelbase, other_dims)
    rng = rng if rng is not None else derive_rng(seed, "safe-probability", round(t, 9))
    accel, steer = envelope.sample(rng, M)
    return float(np.count_nonzero(membership(accel, steer))) / M


def aggregate_over_time(values) -> float:
    """(max + mean) / 2 of the per-instant safety values."""
    values = list(values)
    if not values:
        raise ValueError("empty safety value list")
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ValueError("safety values live in [0, 1]")
    return 0.5 * (max(values) + sum(values) / len(values))


@dataclass
class SafetyQuery:
    """Inputs of one safety estimation: the action, the scene and the
    sampling configuration."""

    action: tuple                 # (s, a, s') transition
    ego: VehicleState
    surrounding: list
    horizon: float = 3.0          # T
    interval: float = 0.5         # omega
    samples: int = 2000           # M
    seed: int = 0
    poses: Optional[tuple] = None  # explicit (start, goal) poses, else sampled

    def __post_init__(self):
        if self.horizon <= 0 or not 0 < self.interval <= self.horizon:
            raise ValueError("need horizon > 0 and 0 < interval <= horizon")
        if self.samples < 1:
            raise ValueError("need at least one control sample")


def estimate_safety(query: SafetyQuery, network, d_safe=2.0, sensing_radius=50.0,
                    envelope=ControlEnvelope(), target_speed=KMH_20,
                    detail=False):
    """Safety value in [0, 1] of executing the queried action right now.

    Plans the ego trajectory between the action's start and goal poses,
    predicts every sensed surrounding vehicle forward, scores each vehicle
    with aggregate_over_time over the horizon grid, and returns the minimum.
    With nothing around the action is fully safe (1.0); an unplannable motion
    makes it fully unsafe (0.0).
    """
    from .motion_planner import resolve_goal_pose

    s, _, s2 = query.action
    try:
        if query.poses is not None:
            x, x_goal = query.poses
            ego_traj = plan_path(x, x_goal, network, target_speed=target_speed)
        else:
            x = query.ego.pose
            x_goal, ego_traj = resolve_goal_pose(x, s2, network, query.seed, target_speed)
        ego_traj = ego_traj.truncated(query.horizon)
    except NoPath:
        return (0.0, []) if detail else 0.0

    t1 = ego_traj.t_start
    t2 = t1 + query.horizon
    sensed = [v for v in query.surrounding if v.pose.distance_to(x) <= sensing_radius]
    if not sensed:
        return (1.0, []) if detail else 1.0

    n_steps = int(math.floor(query.horizon / query.interval + 1e-9))
    grid = [t1 + k * query.interval for k in range(n_steps + 1)]
    scores = []
    for i, v in enumerate(sensed):
        pred = predict_surrounding(v, (t1, t2), query.interval)
        rng = derive_rng(query.seed, "vehicle", i)
        o_values = []
        for t in grid:
            ego_pose, ego_speed = ego_traj.state_at(t)
            member = footprint_membership(ego_pose, ego_speed, (query.ego.length, query.ego.width),
                                          pred, t, t2, query.interval, d_safe,
                                          query.ego.wheelbase, other_dims=(v.length, v.width))
            o_values.append(safe_probability(query.ego, pred, t, query.samples, d_safe,
                                             seed=None, membership=member,
                                             envelope=envelope, rng=rng))
        scores.append(aggregate_over_time(o_values))
    value = min(scores)
    return (value, scores) if detail else value


def estimator_from_params(params: EstimatorParams):
    """Convenience: bind EstimatorParams into an estimate_safety call."""
    def run(action, ego, surrounding, network, seed, poses=None, envelope=ControlEnvelope(),
            detail=False, target_speed=KMH_20):
        query = SafetyQuery(action, ego, list(surrounding), horizon=params.horizon,
                            interval=params.interval, samples=params.samples,
                            seed=seed, poses=poses)
        return estimate_safety(query, network, d_safe=params.d_safe,
                               sensing_radius=params.sensing_radius,
                               envelope=envelope, detail=detail, target_speed=target_speed)
    return run
