"""Task-level world model: symbolic states, the five driving actions, plans,
and the mapping from symbolic states to feasible pose regions.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Pose
from .seeding import derive_rng

ACTION_KINDS = ("mergeleft", "mergeright", "forward", "turnleft", "turnright")
# deterministic tie-break order used by the task planner
ACTION_RANK = {kind: i for i, kind in enumerate(ACTION_KINDS)}

# share of a lane's arc length (from the far end) whose poses count as
# completing a transition into that state
COMPLETION_FRACTION = 0.2


class InfeasibleState(ValueError):
    """The symbolic state has no feasible pose in continuous space."""


@dataclass(frozen=True, order=True)
class SymbolicState:
    segment: str
    lane: int
    direction: int = 1

    def __str__(self):
        arrow = ">" if self.direction >= 0 else "<"
        return f"{self.segment}/L{self.lane}{arrow}"


@dataclass(frozen=True)
class DrivingAction:
    kind: str
    source: SymbolicState
    target: SymbolicState

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")

    def __str__(self):
        return f"{self.kind}({self.source} -> {self.target})"


Transition = tuple  # (SymbolicState, DrivingAction, SymbolicState)


def transition_key(t):
    s, a, s2 = t
    return (s, a.kind if isinstance(a, DrivingAction) else a, s2)


class Plan:
    """Ordered transitions (s, a, s'); consecutive transitions chain."""

    def __init__(self, transitions=()):
        transitions = tuple(transitions)
        for (_, _, s2), (s, _, _) in zip(transitions, transitions[1:]):
            if s2 != s:
                raise ValueError(f"plan transitions do not chain at {s2} -> {s}")
        self.transitions = transitions

    def __len__(self):
        return len(self.transitions)

    def __bool__(self):
        return bool(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    def __eq__(self, other):
        if not isinstance(other, Plan):
            return NotImplemented
        return [transition_key(t) for t in self.transitions] == [
            transition_key(t) for t in other.transitions
        ]

    def __repr__(self):
        return "Plan[" + ", ".join(str(a) for _, a, _ in self.transitions) + "]"

    @property
    def initial(self):
        return self.transitions[0][0] if self.transitions else None

    @property
    def final(self):
        return self.transitions[-1][2] if self.transitions else None

    def actions(self):
        return [a for _, a, _ in self.transitions]

    def action_kinds(self):
        return [a.kind for _, a, _ in self.transitions]

    def suffix(self, k):
        return Plan(self.transitions[k:])


def state_in_network(s, network):
    seg = network.segments.get(s.segment)
    return seg is not None and 0 <= s.lane < seg.lane_count


def successors(s, network):
    """All (DrivingAction, next_state) pairs legal from s.

    Merge actions move between neighbor lanes of the same segment; forward
    and turning actions follow the tagged connections out of (segment, lane).
    """
    if not state_in_network(s, network):
        return []
    out = []
    left = network.left_lane(s.segment, s.lane)
    if left is not None:
        s2 = SymbolicState(s.segment, left, s.direction)
        out.append((DrivingAction("mergeleft", s, s2), s2))
    right = network.right_lane(s.segment, s.lane)
    if right is not None:
        s2 = SymbolicState(s.segment, right, s.direction)
        out.append((DrivingAction("mergeright", s, s2), s2))
    for conn in network.outgoing(s.segment, s.lane):
        s2 = SymbolicState(conn.to_segment, conn.to_lane, s.direction)
        out.append((DrivingAction(conn.kind, s, s2), s2))
    out.sort(key=lambda pair: (ACTION_RANK[pair[0].kind], pair[1]))
    return out


def action_preconditions(action, s, network):
    """True iff `action` may be taken in state s (and, when the action names a
    target, that the target is the one the network yields)."""
    if action.kind not in ACTION_KINDS or not state_in_network(s, network):
        return False
    for cand, s2 in successors(s, network):
        if cand.kind == action.kind and (action.target is None or action.target == s2):
            return True
    return False


class PoseRegion:
    """Feasible poses of a symbolic state: the lane centerline restricted to
    the final completion zone of the segment, resampled at ~1 m."""

    def __init__(self, state, poses):
        self.state = state
        self.poses = tuple(poses)
        if not self.poses:
            raise InfeasibleState(f"state {state} has an empty pose region")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __contains__(self, pose):
        return any(
            p.distance_to(pose) < 1e-6 and abs(p.heading_error_to(pose)) < 1e-6 for p in self.poses
        )

    def sample(self, seed):
        """One member pose, deterministic per seed.

        Draws from the early part of the zone so a follow-up maneuver (e.g. a
        lane change out of this state) keeps longitudinal headroom. The drawn
        zone fraction depends on the seed alone, so with one seed every
        state's pose sits at the same relative station and a plan's summed
        edge costs telescope cleanly along its route.
        """
        rng = derive_rng(seed, "pose-region")
        fraction = rng.uniform(0.0, 0.55)
        return self.poses[min(int(fraction * len(self.poses)), len(self.poses) - 1)]

    def midpoint(self):
        return self.poses[len(self.poses) // 2]


def map_state(s: SymbolicState, network) -> PoseRegion:
    """Feasible pose region of s (see PoseRegion). Raises InfeasibleState when
    the state references nothing drivable."""
    seg = network.segments.get(s.segment)
    if seg is None:
        raise InfeasibleState(f"state references unknown segment {s.segment!r}")
    if not 0 <= s.lane < seg.lane_count:
        raise InfeasibleState(f"lane {s.lane} out of range for segment {s.segment!r}")
    poses = seg.lane_poses(s.lane, s.direction)
    if not poses:
        raise InfeasibleState(f"lane {s.lane} of {s.segment!r} has no usable centerline")
    start = int(np.floor(len(poses) * (1.0 - COMPLETION_FRACTION)))
    zone = poses[min(start, len(poses) - 1):]
    return PoseRegion(s, zone)


def sample_state_pose(s, network, seed) -> Pose:
    """Deterministic pose draw from map_state(s)."""
    return map_state(s, network).sample(seed)


def plan_errors(plan, network, initial: Optional[SymbolicState] = None):
    """Diagnostics for an invalid plan; empty list means valid."""
    problems = []
    prev_target = initial
    for i, (s, a, s2) in enumerate(plan.transitions):
        if prev_target is not None and s != prev_target:
            problems.append(f"step {i}: source {s} does not chain from {prev_target}")
        if a.source != s or a.target != s2:
            problems.append(f"step {i}: action endpoints disagree with transition states")
        if not action_preconditions(a, s, network):
            problems.append(f"step {i}: preconditions of {a} fail in {s}")
        prev_target = s2
    return problems


def validate_plan(plan, network, initial: Optional[SymbolicState] = None) -> bool:
    """True iff the plan chains correctly and every action's preconditions hold."""
    return not plan_errors(plan, network, initial)
