"""Canned road networks and scenario plumbing.

Two networks drive most fixtures and experiments: a two-junction map where a
risky early merge can be deferred to a later one at a small detour cost, and
a longer merge corridor that repeats that structure block after block for
batch experiments.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .geometry import Pose
from .motion_planner import VehicleState
from .network import Connection, RoadNetwork, polyline_segment, straight_segment
from .symbolic import SymbolicState

LANE_WIDTH = 4.2


def _dipped_points(start, end, extra, parts=2):
    """Polyline from start to end bowing south so its arc length is about
    `extra` meters longer than the straight span."""
    (x0, y0), (x1, y1) = start, end
    span = math.hypot(x1 - x0, y1 - y0)
    if extra <= 0:
        return [list(start), list(end)]
    half = span / 2.0
    depth = math.sqrt(max(((span + extra) / 2.0) ** 2 - half**2, 0.0))
    return [[x0, y0], [(x0 + x1) / 2.0, (y0 + y1) / 2.0 - depth], [x1, y1]]


def two_junction_network(lane_width=LANE_WIDTH, detour_extra=6.0):
    """Two eastbound blocks, each ending at a left turn toward a common
    destination road. The second block bows south by `detour_extra` meters,
    so turning at the first junction is the shorter route."""
    w = lane_width
    segs = [
        straight_segment("main1", (0, 0), (100, 0), lanes=2, lane_width=w),
        polyline_segment("main2", _dipped_points((100, 0), (200, 0), detour_extra),
                         lanes=2, lane_width=w),
        straight_segment("avenue1", (104, 8), (104, 88), lanes=1),
        straight_segment("avenue2", (204, 8), (204, 88), lanes=1),
        straight_segment("link", (108, 92), (204, 92), lanes=1),
        straight_segment("dest", (208, 92), (308, 92), lanes=1),
    ]
    conns = [
        Connection("main1", 0, "main2", 0, "forward"),
        Connection("main1", 1, "main2", 1, "forward"),
        Connection("main1", 1, "avenue1", 0, "turnleft"),
        Connection("main2", 1, "avenue2", 0, "turnleft"),
        Connection("avenue1", 0, "link", 0, "turnright"),
        Connection("avenue2", 0, "dest", 0, "turnright"),
        Connection("link", 0, "dest", 0, "forward"),
    ]
    net = RoadNetwork(segs, conns)
    initial = SymbolicState("main1", 0)
    goal = SymbolicState("dest", 0)
    return net, initial, goal


def merge_corridor_network(blocks=8, span=50.0, detour_extra=7.0, avenue=60.0,
                           lane_width=LANE_WIDTH):
    """Eastbound two-lane corridor with `blocks` left-turn junctions.

    The bottom road bows south so each block is `detour_extra` meters longer
    than its straight top-road counterpart: merging (and turning) early is
    optimal, and every deferred merge costs about `detour_extra` meters.
    Single left-turn lanes feed north avenues that join an eastbound top road
    ending at the destination segment.
    """
    w = lane_width
    segs = []
    conns = []
    for k in range(1, blocks + 1):
        x0, x1 = (k - 1) * span, k * span
        segs.append(polyline_segment(f"bottom{k}", _dipped_points((x0, 0), (x1, 0), detour_extra),
                                     lanes=2, lane_width=w))
        segs.append(straight_segment(f"avenue{k}", (x1 + 4, 8), (x1 + 4, 8 + avenue), lanes=1))
        if k < blocks:
            conns.append(Connection(f"bottom{k}", 0, f"bottom{k + 1}", 0, "forward"))
            conns.append(Connection(f"bottom{k}", 1, f"bottom{k + 1}", 1, "forward"))
        conns.append(Connection(f"bottom{k}", 1, f"avenue{k}", 0, "turnleft"))
    top_y = 8 + avenue + 4
    for k in range(1, blocks):
        x0, x1 = k * span + 8, (k + 1) * span + 8
        segs.append(straight_segment(f"top{k}", (x0, top_y), (x1, top_y), lanes=1))
        conns.append(Connection(f"avenue{k}", 0, f"top{k}", 0, "turnright"))
        if k < blocks - 1:
            conns.append(Connection(f"top{k}", 0, f"top{k + 1}", 0, "forward"))
    dest_x = blocks * span + 8
    segs.append(straight_segment("dest", (dest_x, top_y), (dest_x + 100, top_y), lanes=1))
    conns.append(Connection(f"avenue{blocks}", 0, "dest", 0, "turnright"))
    if blocks > 1:
        conns.append(Connection(f"top{blocks - 1}", 0, "dest", 0, "forward"))
    net = RoadNetwork(segs, conns)
    initial = SymbolicState("bottom1", 0)
    goal = SymbolicState("dest", 0)
    return net, initial, goal


def micro_arena_network(length=200.0, lane_width=LANE_WIDTH):
    """Two-lane straightaway used to learn world-model statistics."""
    seg = straight_segment("arena", (0, 0), (length, 0), lanes=2, lane_width=lane_width)
    return RoadNetwork([seg], [])


BUILTIN_NETWORKS = {
    "two_junction": two_junction_network,
    "merge_corridor": merge_corridor_network,
}


# ---------------------------------------------------------------------------
# Scenario snapshot files: a network plus an initial/goal pair and (for the
# continuous executor and the `estimate` subcommand) a concrete scene.

@dataclass
class Scenario:
    network: RoadNetwork
    initial: SymbolicState
    goal: SymbolicState
    ego: Optional[VehicleState] = None
    surrounding: list = field(default_factory=list)
    scripted_safety: dict = field(default_factory=dict)
    name: str = "scenario"
    traffic_free_segments: tuple = ()


def _state_from(doc, what):
    try:
        return SymbolicState(doc["segment"], int(doc["lane"]), int(doc.get("direction", 1)))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"scenario {what} needs 'segment' and 'lane'") from exc


def _vehicle_from(doc):
    pose = Pose(float(doc["x"]), float(doc["y"]), float(doc.get("heading", 0.0)))
    return VehicleState(pose, float(doc.get("speed", 0.0)),
                        float(doc.get("length", 4.5)), float(doc.get("width", 2.0)))


def load_scenario(path):
    with open(path) as fh:
        doc = json.load(fh)
    return scenario_from_dict(doc, name=str(path))


def scenario_from_dict(doc, name="scenario"):
    net_doc = doc.get("network")
    if isinstance(net_doc, str):
        if net_doc not in BUILTIN_NETWORKS:
            raise ValueError(f"unknown builtin network {net_doc!r}; "
                             f"options: {sorted(BUILTIN_NETWORKS)}")
        params = doc.get("network_params", {})
        network, initial, goal = BUILTIN_NETWORKS[net_doc](**params)
    elif isinstance(net_doc, dict):
        network = RoadNetwork.from_dict(net_doc)
        initial = goal = None
    else:
        raise ValueError("scenario needs a 'network' (builtin name or inline document)")
    if "initial" in doc:
        initial = _state_from(doc["initial"], "initial")
    if "goal" in doc:
        goal = _state_from(doc["goal"], "goal")
    if initial is None or goal is None:
        raise ValueError("scenario needs 'initial' and 'goal' states")

    ego = _vehicle_from(doc["ego"]) if "ego" in doc else None
    surrounding = [_vehicle_from(v) for v in doc.get("surrounding", [])]
    scripted = {}
    for entry in doc.get("scripted_safety", []):
        key = (_state_from(entry["source"], "scripted_safety.source"),
               entry["action"],
               _state_from(entry["target"], "scripted_safety.target"))
        scripted[key] = float(entry["mu"])
    return Scenario(network, initial, goal, ego, surrounding, scripted, name,
                    tuple(doc.get("traffic_free_segments", ())))
