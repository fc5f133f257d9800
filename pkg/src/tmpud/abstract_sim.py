"""Abstract traffic simulation: outcome models learned by micro-simulation.

Instead of simulating continuous dynamics end to end, batch experiments
sample each executed action's outcome (merge/success, collide, or forced
stop) from categorical world models. The models are learned by repeatedly
spawning the ego and surrounding vehicles on a short two-lane straightaway,
scoring the scene with the Monte-Carlo safety estimator, executing the
maneuver with the motion planner, and tallying outcomes per safety bucket.
Conditioning the outcome on the estimator's own bucketed assessment is what
lets abstract trials differentiate policies that act on safety values.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .config import StackConfig
from .executor import ContinuousEnv, ExecutionTrace, SurroundingVehicle
from .geometry import Pose
from .motion_planner import (
    NoPath,
    TrackingController,
    VehicleState,
    densify_trajectory,
    extend_reference,
    plan_path,
)
from .safety import SafetyQuery, estimate_safety
from .scenarios import micro_arena_network
from .seeding import derive_rng, derive_seed
from .symbolic import Plan
from .task_planner import NoPlanExists, PlanningProblem, compute_plan

N_BUCKETS = 5
BUCKET_EDGES = tuple(np.linspace(0.0, 1.0, N_BUCKETS + 1))
LANE_CHANGE_KINDS = ("mergeleft", "mergeright")
LANE_CHANGE_OUTCOMES = ("merge", "collide", "stop")
OTHER_OUTCOMES = ("success", "collide", "stop")
SCHEMA_VERSION = 1


class MissingCell(KeyError):
    """The world model has no distribution for the queried action/factors."""


@dataclass(frozen=True)
class DomainFactors:
    """The two experiment factors: traffic density and how aggressively the
    surrounding vehicles change speed."""

    density: str = "low"
    acceleration: str = "low"

    def __post_init__(self):
        for name in (self.density, self.acceleration):
            if name not in ("low", "high"):
                raise ValueError("factors are 'low' or 'high'")

    @property
    def vehicle_count(self):
        return 3 if self.density == "high" else 1

    @property
    def accel_range(self):
        return (-1.0, 1.0) if self.acceleration == "high" else (-0.5, 0.5)

    @property
    def label(self):
        return f"d{self.density}_a{self.acceleration}"


def bucket_of(mu):
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"safety value {mu} outside [0, 1]")
    return min(int(mu * N_BUCKETS), N_BUCKETS - 1)


def outcome_labels(kind):
    return LANE_CHANGE_OUTCOMES if kind in LANE_CHANGE_KINDS else OTHER_OUTCOMES


def cell_kind(kind):
    """Model cell an action kind draws from. Turning actions reuse the
    forward cell: the learning arena is a straightaway and through-traffic
    risk is what both capture."""
    if kind in ("turnleft", "turnright"):
        return "forward"
    return kind


class WorldModel:
    """Per-(action kind, safety bucket) outcome statistics for one factor pair.

    `mu_counts[kind][b]` is how often learning scenes landed in bucket b (the
    traffic-condition distribution trials draw from); `outcome_counts` holds
    the observed outcomes per bucket. Probabilities are Laplace-smoothed
    (+1 per outcome) so no cell is ever exactly zero.
    """

    def __init__(self, factors: DomainFactors, cells=None, episodes_per_kind=0):
        self.factors = factors
        self.cells = cells or {}
        self.episodes_per_kind = episodes_per_kind

    def add_episode(self, kind, mu, outcome):
        labels = outcome_labels(kind)
        if outcome not in labels:
            raise ValueError(f"outcome {outcome!r} not in {labels}")
        cell = self.cells.setdefault(kind, {
            "mu_counts": [0] * N_BUCKETS,
            "outcome_counts": [[0] * len(labels) for _ in range(N_BUCKETS)],
        })
        b = bucket_of(mu)
        cell["mu_counts"][b] += 1
        cell["outcome_counts"][b][labels.index(outcome)] += 1

    def has_cell(self, kind):
        return cell_kind(kind) in self.cells

    def _cell(self, kind):
        cell = self.cells.get(cell_kind(kind))
        if cell is None:
            raise MissingCell(f"no world-model cell for action {kind!r} "
                              f"(factors {self.factors.label})")
        return cell

    def outcome_probabilities(self, kind, bucket):
        """Laplace-smoothed categorical distribution for one bucket."""
        cell = self._cell(kind)
        counts = np.asarray(cell["outcome_counts"][bucket], dtype=float)
        probs = (counts + 1.0) / (counts.sum() + len(counts))
        return probs

    def bucket_distribution(self, kind):
        cell = self._cell(kind)
        counts = np.asarray(cell["mu_counts"], dtype=float)
        total = counts.sum()
        if total <= 0:
            raise MissingCell(f"world-model cell for {kind!r} has no scenes")
        return counts / total

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "factors": {"density": self.factors.density,
                        "acceleration": self.factors.acceleration},
            "bucket_edges": list(BUCKET_EDGES),
            "episodes_per_kind": self.episodes_per_kind,
            "cells": self.cells,
        }

    @staticmethod
    def from_dict(doc):
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported world-model schema {version!r} "
                             f"(expected {SCHEMA_VERSION})")
        factors = DomainFactors(**doc["factors"])
        cells = {}
        for kind, cell in doc["cells"].items():
            labels = outcome_labels(kind)
            mu_counts = list(cell["mu_counts"])
            oc = [list(row) for row in cell["outcome_counts"]]
            if len(mu_counts) != N_BUCKETS or any(len(r) != len(labels) for r in oc):
                raise ValueError(f"malformed cell {kind!r}")
            cells[kind] = {"mu_counts": mu_counts, "outcome_counts": oc}
        return WorldModel(factors, cells, doc.get("episodes_per_kind", 0))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @staticmethod
    def load(path):
        with open(path) as fh:
            return WorldModel.from_dict(json.load(fh))


def sample_outcome(model: WorldModel, kind, factors: DomainFactors, mu, seed=None,
                   rng=None):
    """Draw one outcome for an executed action under safety value mu."""
    if factors != model.factors:
        raise MissingCell(f"model learned for {model.factors.label}, "
                          f"queried with {factors.label}")
    probs = model.outcome_probabilities(kind, bucket_of(mu))
    rng = rng if rng is not None else derive_rng(seed, "outcome")
    idx = int(rng.choice(len(probs), p=probs))
    return outcome_labels(kind)[idx]


def draw_scene_mu(model: WorldModel, kind, rng):
    """Sample the safety value the estimator would report for a fresh scene:
    a bucket from the learned scene distribution, then uniform within it."""
    dist = model.bucket_distribution(kind)
    b = int(rng.choice(N_BUCKETS, p=dist))
    return float(rng.uniform(BUCKET_EDGES[b], BUCKET_EDGES[b + 1]))


# ---------------------------------------------------------------------------
# Micro-simulation learning.

@dataclass
class MicroSimParams:
    arena_length: float = 200.0
    ego_x: float = 60.0
    goal_ahead: float = 25.0
    episode_horizon: float = 8.0
    dt: float = 0.1
    estimator_samples: int = 500
    merge_offset_range: tuple = (-24.0, 40.0)   # focus car: ego_x - offset
    lateral_jitter: float = 0.5
    convoy_spacing: float = 17.0
    speed_factor_range: tuple = (0.6, 1.55)
    queue_probability: float = 0.35             # slow queue tail ahead instead
    queue_ahead_range: tuple = (8.0, 28.0)
    queue_speed_range: tuple = (0.0, 3.5)
    forward_gap_range: tuple = (18.0, 70.0)
    panic_gap: float = 2.0
    ego_guard_gap: float = 5.0


def _spawn_scene(kind, factors, params: MicroSimParams, config: StackConfig, rng):
    """Ego state, goal pose and surrounding vehicles for one episode."""
    target = config.gains.target_speed
    lane_w = 4.2
    if kind in LANE_CHANGE_KINDS:
        ego_lane, other_lane = (0, 1) if kind == "mergeleft" else (1, 0)
    else:
        ego_lane = other_lane = 0
    ego_y = ego_lane * lane_w
    ego = VehicleState(Pose(params.ego_x, ego_y, 0.0), target)
    goal = Pose(params.ego_x + params.goal_ahead, other_lane * lane_w, 0.0)

    vehicles = []
    if kind in LANE_CHANGE_KINDS:
        ys = other_lane * lane_w
        queue = rng.uniform() < params.queue_probability
        if queue:
            # slow queue in the target lane; its tail is what the ego meets,
            # the rest of the queue extends forward from it
            tail = rng.uniform(*params.queue_ahead_range)
            speed0 = rng.uniform(*params.queue_speed_range)
            positions = [params.ego_x + tail]
            for k in range(1, factors.vehicle_count):
                positions.append(positions[-1] + rng.uniform(8.0, 14.0))
            for x in positions:
                jitter = rng.uniform(-params.lateral_jitter, params.lateral_jitter)
                vehicles.append(SurroundingVehicle(
                    VehicleState(Pose(x, ys + jitter, 0.0),
                                 max(0.0, speed0 + rng.uniform(-0.5, 0.5))),
                    behavior="follower", accel=0.0, panic_gap=params.panic_gap))
        else:
            lo, hi = params.merge_offset_range
            focus = rng.uniform(lo, hi)
            offsets = [focus]
            for k in range(1, factors.vehicle_count):
                side = 1 if k % 2 else -1
                offsets.append(focus + side * ((k + 1) // 2) * params.convoy_spacing
                               + rng.uniform(-5.0, 5.0))
            for off in offsets:
                speed = target * rng.uniform(*params.speed_factor_range)
                accel = rng.uniform(*factors.accel_range)
                jitter = rng.uniform(-params.lateral_jitter, params.lateral_jitter)
                vehicles.append(SurroundingVehicle(
                    VehicleState(Pose(params.ego_x - off, ys + jitter, 0.0), speed),
                    behavior="follower", accel=accel, panic_gap=params.panic_gap))
    else:
        for k in range(factors.vehicle_count):
            gap = rng.uniform(*params.forward_gap_range) + k * params.convoy_spacing
            speed = target * rng.uniform(*params.speed_factor_range)
            accel = rng.uniform(*factors.accel_range)
            vehicles.append(SurroundingVehicle(
                VehicleState(Pose(params.ego_x + gap, ego_y, 0.0), speed),
                behavior="follower", accel=accel, panic_gap=params.panic_gap))
    return ego, goal, vehicles


def _run_episode(network, kind, factors, params, config, seed):
    """One spawn-estimate-execute-classify cycle; returns (mu, outcome)."""
    rng = derive_rng(seed, "episode")
    ego, goal, vehicles = _spawn_scene(kind, factors, params, config, rng)
    from .symbolic import DrivingAction, SymbolicState

    lane0 = 0 if kind != "mergeright" else 1
    lane1 = 1 if kind == "mergeleft" else (0 if kind == "mergeright" else lane0)
    s = SymbolicState("arena", lane0)
    s2 = SymbolicState("arena", lane1)
    action = (s, DrivingAction(kind if kind in LANE_CHANGE_KINDS else "forward", s, s2), s2)
    query = SafetyQuery(action, ego, [v.state for v in vehicles],
                        horizon=config.estimator.horizon,
                        interval=config.estimator.interval,
                        samples=params.estimator_samples,
                        seed=derive_seed(seed, "mu"),
                        poses=(ego.pose, goal))
    mu = estimate_safety(query, network, d_safe=config.estimator.d_safe,
                         sensing_radius=config.estimator.sensing_radius,
                         envelope=config.envelope,
                         target_speed=config.gains.target_speed)

    env = ContinuousEnv(network, ego, vehicles, dt=params.dt, envelope=config.envelope)
    try:
        traj = plan_path(ego.pose, goal, network, target_speed=config.gains.target_speed)
    except NoPath:
        return mu, "collide"  # unreachable maneuver counts as failed
    reference = extend_reference(densify_trajectory(traj, config.gains.target_speed))
    controller = TrackingController(config.gains, config.envelope)
    stops = 0
    steps = int(round(params.episode_horizon / params.dt))
    for _ in range(steps):
        u = controller.track_step(env.ego, reference, params.dt)
        if _lead_gap(env) < params.ego_guard_gap:
            # the ego brakes for slower traffic directly ahead instead of
            # tracking blindly into it
            u = type(u)(config.envelope.delta_min, u.steer)
        env.step(u)
        stops += env.take_forced_stops()
        if env.collided:
            return mu, "collide"
    if stops:
        return mu, "stop"
    return mu, "merge" if kind in LANE_CHANGE_KINDS else "success"


def _lead_gap(env: ContinuousEnv):
    """Bumper gap to the nearest vehicle directly ahead of the ego."""
    ego = env.ego
    heading = ego.pose.heading
    best = math.inf
    for v in env.vehicles:
        dx = v.state.pose.x - ego.pose.x
        dy = v.state.pose.y - ego.pose.y
        longitudinal = dx * math.cos(heading) + dy * math.sin(heading)
        lateral = -dx * math.sin(heading) + dy * math.cos(heading)
        if longitudinal > 0.0 and abs(lateral) < 2.2:
            best = min(best, longitudinal - 0.5 * (ego.length + v.state.length))
    return best


def learn_world_model(factors: DomainFactors, episodes, seed,
                      kinds=("mergeleft", "mergeright", "forward"),
                      params: MicroSimParams = None,
                      config: StackConfig = None) -> WorldModel:
    """Micro-simulate `episodes` scenes per action kind and tally outcomes."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    params = params or MicroSimParams()
    config = config or StackConfig()
    network = micro_arena_network(params.arena_length)
    model = WorldModel(factors, episodes_per_kind=episodes)
    for kind in kinds:
        for e in range(episodes):
            mu, outcome = _run_episode(network, kind, factors, params, config,
                                       derive_seed(seed, factors.label, kind, e))
            model.add_episode(kind, mu, outcome)
    return model


# ---------------------------------------------------------------------------
# Abstract trial execution.

def step_trial(current_state, transition, model, factors, mu, tables, rng):
    """Apply one executed action: sample its outcome, accumulate the route
    length of its motion-level path (the cost-table entry)."""
    kind = transition[1].kind
    outcome = sample_outcome(model, kind, factors, mu, rng=rng)
    distance = tables.cost_of(transition)
    next_state = current_state if outcome == "collide" else transition[2]
    return next_state, outcome, distance


@dataclass
class AbstractTrialResult:
    trace: ExecutionTrace
    distance: float
    completed: bool
    collisions: int
    stops: int
    replans: int


def run_abstract_trial(problem: PlanningProblem, model: WorldModel, policy,
                       config: StackConfig, tables_base, seed,
                       traffic_free_segments=frozenset()) -> AbstractTrialResult:
    """One abstract trial under a policy ('tmpud' | 'nocom' | 'thbased').

    Per encountered action the environment draws a scene safety value from
    the learned distribution (actions starting on a traffic-free segment are
    always clear); the policy reacts to it (or ignores it, for no-com) and
    executed actions sample their outcome from the matching bucket.
    """
    rng = derive_rng(seed, "abstract-trial")
    tables = tables_base.copy()
    trace = ExecutionTrace()
    factors = model.factors
    step = 0

    def clear_scene(transition):
        return transition[0].segment in traffic_free_segments

    try:
        plan = compute_plan(problem, tables)
    except NoPlanExists:
        trace.record(0, "failure", reason="no_plan")
        return AbstractTrialResult(trace, 0.0, False, 0, 0, 0)
    trace.record(step, "plan_computed", actions=plan.action_kinds())

    distance = 0.0
    collisions = 0
    stops = 0
    replans = 0

    def execute(transition, mu):
        nonlocal distance, collisions, stops, step
        s, action, s2 = transition
        step += 1
        trace.record(step, "action_started", action=action.kind,
                     source=str(s), target=str(s2))
        if clear_scene(transition):
            outcome = "merge" if action.kind in LANE_CHANGE_KINDS else "success"
            inc = tables.cost_of(transition)
        else:
            _, outcome, inc = step_trial(s, transition, model, factors, mu, tables, rng)
        distance += inc
        if outcome == "collide":
            collisions += 1
            trace.record(step, "collision", action=action.kind)
            return False
        if outcome == "stop":
            stops += 1
            trace.record(step, "forced_stop", action=action.kind)
        trace.record(step, "action_completed", action=action.kind,
                     source=str(s), target=str(s2))
        return True

    while plan:
        transition = plan.transitions[0]
        current = transition[0]
        step += 1
        if clear_scene(transition):
            mu = 1.0
        else:
            mu = draw_scene_mu(model, cell_kind(transition[1].kind), rng)

        if policy.kind == "nocom":
            if not execute(transition, mu):
                return AbstractTrialResult(trace, distance, False, collisions, stops, replans)
            plan = plan.suffix(1)
            continue

        trace.record(step, "safety_estimated", action=transition[1].kind,
                     source=str(transition[0]), target=str(transition[2]), mu=mu)
        if policy.kind == "thbased":
            if mu >= policy.beta:
                if not execute(transition, mu):
                    return AbstractTrialResult(trace, distance, False, collisions, stops, replans)
                plan = plan.suffix(1)
                continue
            replans += 1
            if replans > config.sim.max_replans:
                trace.record(step, "failure", reason="replan_limit")
                return AbstractTrialResult(trace, distance, False, collisions, stops, replans)
            try:
                plan = compute_plan(PlanningProblem(current, problem.goal, problem.network),
                                    tables, forbidden={(transition[0], transition[1].kind,
                                                        transition[2])})
            except NoPlanExists:
                trace.record(step, "failure", reason="no_plan")
                return AbstractTrialResult(trace, distance, False, collisions, stops, replans)
            trace.record(step, "replanned", actions=plan.action_kinds())
            continue

        # tmpud
        tables.set_safe(transition, mu)
        try:
            fresh = compute_plan(PlanningProblem(current, problem.goal, problem.network),
                                 tables)
        except NoPlanExists:
            trace.record(step, "failure", reason="no_plan")
            return AbstractTrialResult(trace, distance, False, collisions, stops, replans)
        if fresh == plan:
            if not execute(transition, mu):
                return AbstractTrialResult(trace, distance, False, collisions, stops, replans)
            plan = plan.suffix(1)
        else:
            replans += 1
            if replans > config.sim.max_replans:
                trace.record(step, "failure", reason="replan_limit")
                return AbstractTrialResult(trace, distance, False, collisions, stops, replans)
            plan = fresh
            trace.record(step, "replanned", actions=plan.action_kinds())

    step += 1
    trace.record(step, "goal_reached")
    return AbstractTrialResult(trace, distance, True, collisions, stops, replans)
