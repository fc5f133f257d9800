"""Interactive task-motion execution loop and the literature baselines.

The main loop starts from an optimistic safety table (everything 1.0),
estimates the safety of the next action just before committing to it, feeds
the value back into the utility tables, and replans; the action is executed
at the motion level only when replanning confirms the remaining plan. The
No-com baseline executes the initial plan blindly; the Th-based baseline
rejects any action whose safety value falls below a fixed threshold and
routes around it.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import StackConfig
from .geometry import ControlSignal, Pose, rects_overlap
from .motion_planner import (
    NoPath,
    TrackingController,
    VehicleState,
    densify_trajectory,
    extend_reference,
    plan_path,
    resolve_goal_pose,
    simulate_vehicle,
)
from .safety import SafetyQuery, estimate_safety
from .seeding import derive_rng, derive_seed
from .symbolic import Plan, map_state, transition_key
from .task_planner import NoPlanExists, PlanningProblem, UtilityTables, compute_plan

EVENT_KINDS = (
    "plan_computed",
    "safety_estimated",
    "replanned",
    "action_started",
    "action_completed",
    "collision",
    "forced_stop",
    "goal_reached",
    "failure",
)


@dataclass(frozen=True)
class ExecutionPolicy:
    kind: str                    # "tmpud" | "nocom" | "thbased"
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("tmpud", "nocom", "thbased"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "thbased":
            if self.beta is None or not 0.0 <= self.beta <= 1.0:
                raise ValueError("thbased needs beta in [0, 1]")
        elif self.beta is not None:
            raise ValueError(f"beta only applies to thbased, not {self.kind}")

    @property
    def label(self):
        return self.kind if self.beta is None else f"{self.kind}({self.beta})"


@dataclass
class TraceEvent:
    time: float
    kind: str
    payload: dict = field(default_factory=dict)


class ExecutionTrace:
    """Time-ordered evidence stream of one trial."""

    def __init__(self):
        self.events = []

    def record(self, time, kind, **payload):
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        if self.events and time < self.events[-1].time - 1e-9:
            raise ValueError("events must be time-ordered")
        self.events.append(TraceEvent(float(time), kind, payload))

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def count(self, kind):
        return sum(1 for e in self.events if e.kind == kind)

    def of_kind(self, kind):
        return [e for e in self.events if e.kind == kind]

    @property
    def reached_goal(self):
        return any(e.kind == "goal_reached" for e in self.events)

    @property
    def collided(self):
        return any(e.kind == "collision" for e in self.events)

    def executed_action_kinds(self):
        return [e.payload["action"] for e in self.events if e.kind == "action_completed"]

    def to_jsonl(self):
        import json

        lines = []
        for e in self.events:
            lines.append(json.dumps({"t": round(e.time, 6), "event": e.kind, **e.payload},
                                    sort_keys=True, default=str))
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Continuous environment: kinematic ego plus scripted surrounding vehicles.

class SurroundingVehicle:
    """Scripted traffic participant.

    behavior "constant": holds its sampled acceleration (speed clamped at
    zero). behavior "follower": additionally reacts to an ego ahead in its
    lane corridor -- comfort braking to keep a time headway, and an
    emergency slam (with hysteresis, so the stop is sustained) when the ego
    cuts in within the panic bumper gap. Panicked stalls are what the
    forced-stop metric counts.
    """

    def __init__(self, state: VehicleState, behavior="constant", accel=0.0,
                 panic_gap=2.0, release_gap=16.0, brake=-6.0, headway=1.2):
        self.state = state
        self.behavior = behavior
        self.accel = accel
        self.panic_gap = panic_gap
        self.release_gap = release_gap
        self.brake = brake
        self.headway = headway
        self.panicking = False
        self.low_speed_time = 0.0
        self.stop_flagged = False
        self._speed_at_panic = 0.0

    def _relative_ego(self, ego: VehicleState):
        """Ego position in this vehicle's frame: (longitudinal, lateral)."""
        dx = ego.pose.x - self.state.pose.x
        dy = ego.pose.y - self.state.pose.y
        heading = self.state.pose.heading
        longitudinal = dx * math.cos(heading) + dy * math.sin(heading)
        lateral = -dx * math.sin(heading) + dy * math.cos(heading)
        return longitudinal, lateral

    def _ego_ahead(self, ego: VehicleState):
        """(bumper gap, |lateral offset|) of an ego ahead of this vehicle, or None."""
        longitudinal, lateral = self._relative_ego(ego)
        if longitudinal <= 0.0 or abs(lateral) >= 2.2:
            return None
        return longitudinal - 0.5 * (self.state.length + ego.length), abs(lateral)

    def _should_yield(self, ego: VehicleState):
        """A clearly faster driver gives way to an ego converging into the
        lane; a speed-matched driver alongside has no time to react."""
        if self.state.speed - ego.speed <= 0.8:
            return False
        longitudinal, lateral = self._relative_ego(ego)
        if longitudinal <= -12.0 or abs(lateral) >= 3.8:
            return False
        heading_delta = ego.pose.heading - self.state.pose.heading
        converging = ego.speed * math.sin(heading_delta) * (-1.0 if lateral > 0 else 1.0)
        return converging > 0.05 or abs(lateral) < 2.2

    def step(self, ego, dt):
        accel = self.accel
        if self.behavior == "follower":
            rel = self._ego_ahead(ego)
            if self.panicking:
                self.panicking = rel is not None and rel[0] < self.release_gap
            else:
                # slam only for an ego that has actually entered the lane
                was = self.panicking
                self.panicking = (rel is not None and rel[0] < self.panic_gap
                                  and rel[1] < 1.2)
                if self.panicking and not was:
                    self._speed_at_panic = self.state.speed
            if self.panicking:
                accel = self.brake
            elif rel is not None:
                desired = self.headway * self.state.speed + 2.0
                if rel[0] < desired:
                    accel = min(accel, max(-3.0, 2.0 * (rel[0] - desired)))
            elif self._should_yield(ego):
                accel = -2.5
        else:
            self.panicking = False
        speed = max(0.0, self.state.speed + accel * dt)
        pose = self.state.pose
        self.state = VehicleState(
            Pose(pose.x + speed * math.cos(pose.heading) * dt,
                 pose.y + speed * math.sin(pose.heading) * dt,
                 pose.heading),
            speed, self.state.length, self.state.width)
        # sustained near-stop under panic counts as a forced stop, but only
        # for a vehicle that was actually moving when it had to slam
        if self.panicking and speed < 0.5 and self._speed_at_panic > 2.0:
            self.low_speed_time += dt
        elif speed > 1.0:
            self.low_speed_time = 0.0
            self.stop_flagged = False

    def sustained_stop(self, min_duration=1.0):
        if self.low_speed_time >= min_duration and not self.stop_flagged:
            self.stop_flagged = True
            return True
        return False


class ContinuousEnv:
    """Kinematic world the executor acts in: one ego, scripted traffic."""

    def __init__(self, network, ego: VehicleState, surrounding=(), dt=0.05,
                 envelope=None):
        from .geometry import ControlEnvelope

        self.network = network
        self.ego = ego
        self.vehicles = list(surrounding)
        self.dt = dt
        self.envelope = envelope or ControlEnvelope()
        self.time = 0.0
        self.distance = 0.0
        self.collided = False
        self._pending_stops = 0

    def surrounding_states(self):
        return [v.state for v in self.vehicles]

    def step(self, control: ControlSignal):
        before = self.ego.pose
        self.ego = simulate_vehicle(self.ego, control, self.dt, self.envelope)
        self.distance += before.distance_to(self.ego.pose)
        for v in self.vehicles:
            v.step(self.ego, self.dt)
            if v.sustained_stop():
                self._pending_stops += 1
        self.time += self.dt
        if not self.collided and self.vehicles:
            ego_fp = self.ego.footprint()
            for v in self.vehicles:
                if bool(rects_overlap(ego_fp, v.state.footprint())):
                    self.collided = True
                    break

    def take_forced_stops(self):
        n = self._pending_stops
        self._pending_stops = 0
        return n


# ---------------------------------------------------------------------------
# Safety sources: where the per-action safety value comes from.

class ScriptedSafety:
    """Fixed safety values per transition (default 1.0); used by fixtures."""

    def __init__(self, values=None, default=1.0):
        self.values = {transition_key(t): v for t, v in (values or {}).items()}
        self.default = default

    def __call__(self, transition, env, seed):
        return self.values.get(transition_key(transition), self.default)


class EstimatedSafety:
    """Runs the Monte-Carlo estimator against the environment's current scene."""

    def __init__(self, config: StackConfig):
        self.config = config

    def __call__(self, transition, env, seed):
        est = self.config.estimator
        query = SafetyQuery(transition, env.ego, env.surrounding_states(),
                            horizon=est.horizon, interval=est.interval,
                            samples=est.samples, seed=seed)
        return estimate_safety(query, env.network, d_safe=est.d_safe,
                               sensing_radius=est.sensing_radius,
                               envelope=self.config.envelope,
                               target_speed=self.config.gains.target_speed)


# ---------------------------------------------------------------------------
# Shared machinery.

def _pose_for(state, network, seed):
    return map_state(state, network).sample(seed)


def _cost_table_value(transition, network, cost_source, seed, target_speed):
    s, _, s2 = transition
    if cost_source == "euclidean":
        a = map_state(s, network).midpoint()
        b = map_state(s2, network).midpoint()
        return a.distance_to(b)
    x = _pose_for(s, network, seed)
    _, traj = resolve_goal_pose(x, s2, network, seed, target_speed)
    return traj.length()


def initial_cost_tables(problem: PlanningProblem, config: StackConfig, seed) -> UtilityTables:
    """Cost from motion-level path lengths between sampled poses, safety
    optimistically 1.0 everywhere."""
    from .symbolic import SymbolicState, successors

    tables = UtilityTables(problem.network, gamma=config.planner.gamma)
    for seg in problem.network.segments.values():
        for lane in range(seg.lane_count):
            s = SymbolicState(seg.id, lane)
            for action, s2 in successors(s, problem.network):
                t = (s, action, s2)
                try:
                    tables.set_cost(t, _cost_table_value(t, problem.network,
                                                         config.planner.cost_source, seed,
                                                         config.gains.target_speed))
                except NoPath:
                    pass  # unreachable at the motion level; default cost stands
    return tables


def _reached(pose, goal, pos_tol, heading_tol):
    return (pose.distance_to(goal) <= pos_tol
            and abs(pose.heading_error_to(goal)) <= heading_tol)


def _execute_action(env: ContinuousEnv, transition, config: StackConfig, trace, seed):
    """Track the action's trajectory until the sampled goal pose is reached.

    Returns True on completion; records collision/failure events otherwise.
    """
    s, action, s2 = transition
    trace.record(env.time, "action_started", action=action.kind,
                 source=str(s), target=str(s2))
    try:
        x_goal, traj = resolve_goal_pose(env.ego.pose, s2, env.network, seed,
                                         config.gains.target_speed)
    except NoPath:
        trace.record(env.time, "failure", reason="motion_infeasible", action=action.kind)
        return False
    reference = extend_reference(densify_trajectory(traj, config.gains.target_speed))
    controller = TrackingController(config.gains, config.envelope)
    deadline = env.time + config.sim.action_timeout
    while not _reached(env.ego.pose, x_goal, config.sim.completion_pos_tol,
                       config.sim.completion_heading_tol):
        u = controller.track_step(env.ego, reference, config.sim.dt)
        env.step(u)
        stops = env.take_forced_stops()
        if stops:  # at most one forced_stop per action execution
            trace.record(env.time, "forced_stop", action=action.kind)
        if env.collided:
            trace.record(env.time, "collision", action=action.kind)
            return False
        if env.time > deadline:
            trace.record(env.time, "failure", reason="action_timeout", action=action.kind)
            return False
    trace.record(env.time, "action_completed", action=action.kind,
                 source=str(s), target=str(s2))
    return True


def run_tmpud(problem: PlanningProblem, env: ContinuousEnv, config: StackConfig,
              safety_source=None, seed=0) -> ExecutionTrace:
    """Interactive loop: estimate, update tables, replan, execute on agreement."""
    safety_source = safety_source or EstimatedSafety(config)
    trace = ExecutionTrace()
    tables = initial_cost_tables(problem, config, seed)
    goal = problem.goal_fn()
    try:
        plan = compute_plan(problem, tables)
    except NoPlanExists:
        trace.record(env.time, "failure", reason="no_plan")
        return trace
    trace.record(env.time, "plan_computed", actions=plan.action_kinds())
    estimates = 0
    while plan:
        transition = plan.transitions[0]
        current = transition[0]
        mu = safety_source(transition, env, derive_seed(seed, "estimate", estimates))
        estimates += 1
        trace.record(env.time, "safety_estimated", action=transition[1].kind,
                     source=str(transition[0]), target=str(transition[2]), mu=mu)
        tables.set_safe(transition, mu)
        tables.set_cost(transition, _cost_table_value(transition, problem.network,
                                                      config.planner.cost_source, seed,
                                                      config.gains.target_speed))
        try:
            fresh = compute_plan(PlanningProblem(current, problem.goal, problem.network), tables)
        except NoPlanExists:
            trace.record(env.time, "failure", reason="no_plan")
            return trace
        if fresh == plan:
            if not _execute_action(env, transition, config, trace, seed):
                return trace
            plan = plan.suffix(1)
        else:
            plan = fresh
            trace.record(env.time, "replanned", actions=plan.action_kinds())
    trace.record(env.time, "goal_reached")
    return trace


def run_baseline(problem: PlanningProblem, env: ContinuousEnv,
                 policy: ExecutionPolicy, config: StackConfig,
                 safety_source=None, seed=0) -> ExecutionTrace:
    """No-com executes the initial optimal plan blindly; Th-based estimates
    before each action and reroutes around any transition with mu < beta."""
    safety_source = safety_source or EstimatedSafety(config)
    trace = ExecutionTrace()
    tables = initial_cost_tables(problem, config, seed)
    try:
        plan = compute_plan(problem, tables)
    except NoPlanExists:
        trace.record(env.time, "failure", reason="no_plan")
        return trace
    trace.record(env.time, "plan_computed", actions=plan.action_kinds())

    if policy.kind == "nocom":
        for transition in plan:
            if not _execute_action(env, transition, config, trace, seed):
                return trace
        trace.record(env.time, "goal_reached")
        return trace

    if policy.kind != "thbased":
        raise ValueError(f"run_baseline got policy {policy.kind!r}; use run_tmpud for tmpud")
    estimates = 0
    replans = 0
    while plan:
        transition = plan.transitions[0]
        current = transition[0]
        mu = safety_source(transition, env, derive_seed(seed, "estimate", estimates))
        estimates += 1
        trace.record(env.time, "safety_estimated", action=transition[1].kind,
                     source=str(transition[0]), target=str(transition[2]), mu=mu)
        if mu >= policy.beta:
            if not _execute_action(env, transition, config, trace, seed):
                return trace
            plan = plan.suffix(1)
            continue
        # rejected: route around the risky transition for this replan only
        replans += 1
        if replans > config.sim.max_replans:
            trace.record(env.time, "failure", reason="replan_limit")
            return trace
        try:
            plan = compute_plan(PlanningProblem(current, problem.goal, problem.network),
                                tables, forbidden={transition_key(transition)})
        except NoPlanExists:
            trace.record(env.time, "failure", reason="no_plan")
            return trace
        trace.record(env.time, "replanned", actions=plan.action_kinds())
    trace.record(env.time, "goal_reached")
    return trace


def run_policy(problem, env, policy: ExecutionPolicy, config, safety_source=None, seed=0):
    if policy.kind == "tmpud":
        return run_tmpud(problem, env, config, safety_source=safety_source, seed=seed)
    return run_baseline(problem, env, policy, config, safety_source=safety_source, seed=seed)
