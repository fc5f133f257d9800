"""Optimal symbolic planner over the lane graph.

Each transition is scored by its traveling cost plus a safety penalty
``gamma / (1 + exp(safe - 1))``: cheap when the transition is believed safe
(safe = 1 halves gamma), increasingly expensive as the safety value drops.
Uniform-cost search over symbolic states minimizes the summed score, with
deterministic tie-breaking, so replanning under updated tables is exact.
"""

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .symbolic import (
    ACTION_RANK,
    Plan,
    SymbolicState,
    map_state,
    successors,
    transition_key,
)


class NoPlanExists(RuntimeError):
    """No action sequence reaches the goal under the current preconditions."""


def safety_penalty(safe, gamma):
    return gamma / (1.0 + math.exp(safe - 1.0))


class UtilityTables:
    """Mutable per-transition cost (meters) and safety (in [0, 1]) tables.

    Missing entries fall back to an optimistic safety of 1.0 and to a
    geometric cost (straight-line distance between the two states' completion
    zones), so planning works before any motion-level feedback arrives.
    """

    def __init__(self, network, gamma=50.0, cost=None, safe=None):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.network = network
        self.gamma = float(gamma)
        self.cost = dict(cost or {})
        self.safe = dict(safe or {})
        self._default_cost_cache = {}

    def copy(self):
        out = UtilityTables(self.network, self.gamma, self.cost, self.safe)
        out._default_cost_cache = self._default_cost_cache
        return out

    def set_cost(self, transition, value):
        if value < 0:
            raise ValueError("cost must be nonnegative")
        self.cost[transition_key(transition)] = float(value)

    def set_safe(self, transition, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError("safety values live in [0, 1]")
        self.safe[transition_key(transition)] = float(value)

    def cost_of(self, transition):
        key = transition_key(transition)
        if key in self.cost:
            return self.cost[key]
        if key not in self._default_cost_cache:
            s, _, s2 = key
            a = map_state(s, self.network).midpoint()
            b = map_state(s2, self.network).midpoint()
            self._default_cost_cache[key] = a.distance_to(b)
        return self._default_cost_cache[key]

    def safe_of(self, transition):
        return self.safe.get(transition_key(transition), 1.0)


def transition_utility(transition, tables: UtilityTables) -> float:
    """Cost plus the gamma-weighted safety penalty for one transition."""
    return tables.cost_of(transition) + safety_penalty(tables.safe_of(transition), tables.gamma)


GoalSpec = Union[SymbolicState, Callable[[SymbolicState], bool]]


@dataclass
class PlanningProblem:
    initial: SymbolicState
    goal: GoalSpec
    network: object

    def goal_fn(self):
        if isinstance(self.goal, SymbolicState):
            target = self.goal
            return lambda s: s == target
        return self.goal


def compute_plan(problem: PlanningProblem, tables: UtilityTables,
                 forbidden=frozenset()) -> Plan:
    """Minimum-total-utility plan from the initial state to the goal.

    Ties are broken toward fewer transitions, then by the fixed action order
    mergeleft < mergeright < forward < turnleft < turnright compared
    lexicographically along the plan, making results fully deterministic.
    `forbidden` removes transitions (by key) for one planning call.
    """
    goal = problem.goal_fn()
    start = problem.initial
    if goal(start):
        return Plan()

    counter = 0  # heap tiebreak only; never influences the returned plan
    frontier = [(0.0, 0, (), counter, start, ())]
    settled = {}
    while frontier:
        utility, steps, ranks, _, state, path = heapq.heappop(frontier)
        if state in settled:
            continue
        settled[state] = (utility, steps, ranks)
        if goal(state):
            return Plan(path)
        for action, nxt in successors(state, problem.network):
            if nxt in settled:
                continue
            t = (state, action, nxt)
            if transition_key(t) in forbidden:
                continue
            cand = (
                utility + transition_utility(t, tables),
                steps + 1,
                ranks + (ACTION_RANK[action.kind],),
            )
            counter += 1
            heapq.heappush(frontier, cand + (counter, nxt, path + (t,)))
    raise NoPlanExists(f"goal unreachable from {start}")


def plan_utility(plan: Plan, tables: UtilityTables) -> float:
    return sum(transition_utility(t, tables) for t in plan.transitions)
