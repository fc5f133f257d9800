"""Two-phase motion level: an A* path planner over the discretized lane graph
and a PID tracking controller driving a kinematic bicycle model.
"""

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ControllerGains, VehicleParams
from .geometry import (
    ControlEnvelope,
    ControlSignal,
    Pose,
    Trajectory,
    normalize_angle,
    rect_corners,
)

NODE_SPACING = 1.0        # meters between centerline nodes
LANE_CHANGE_RUN = 8.0     # longitudinal meters consumed by a lane change edge
OBSTACLE_MARGIN = 0.3     # inflation added to obstacle footprints


class NoPath(RuntimeError):
    """The goal pose is unreachable on the discretized road graph."""


@dataclass
class VehicleState:
    pose: Pose
    speed: float
    length: float = 4.5
    width: float = 2.0

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be nonnegative")
        if self.length <= 0 or self.width <= 0:
            raise ValueError("vehicle dimensions must be positive")

    @property
    def wheelbase(self):
        return 0.6 * self.length

    def footprint(self):
        return rect_corners(self.pose.x, self.pose.y, self.pose.heading, self.length, self.width)


def simulate_vehicle(v: VehicleState, u: ControlSignal, dt: float,
                     envelope: ControlEnvelope = ControlEnvelope()) -> VehicleState:
    """One kinematic bicycle step.

    The control is clamped to the envelope first; speed updates and clamps at
    zero, then heading turns with the new speed, then position advances along
    the new heading. Heading stays normalized and speed never goes negative.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = envelope.clamp(u.accel, u.steer)
    speed = max(0.0, v.speed + u.accel * dt)
    heading = normalize_angle(v.pose.heading + (speed / v.wheelbase) * math.tan(u.steer) * dt)
    pose = Pose(
        v.pose.x + speed * math.cos(heading) * dt,
        v.pose.y + speed * math.sin(heading) * dt,
        heading,
    )
    return replace(v, pose=pose, speed=speed)


# ---------------------------------------------------------------------------
# Path graph construction.

def connector_polyline(a: Pose, b: Pose, spacing=NODE_SPACING):
    """Waypoints joining pose a to pose b.

    Straight when the headings agree; otherwise a cubic Hermite blend whose
    end tangents follow the two headings, so turns come out as smooth arcs
    the tracking controller can follow.
    """
    dist = a.distance_to(b)
    if dist < 1e-9:
        return [b]
    n = max(2, int(math.ceil(dist / spacing)) + 1)
    chord = math.atan2(b.y - a.y, b.x - a.x)
    if (abs(normalize_angle(b.heading - a.heading)) < 0.05
            and abs(normalize_angle(chord - a.heading)) < 0.05):
        xs = np.linspace(a.x, b.x, n)
        ys = np.linspace(a.y, b.y, n)
        return [Pose(x, y, chord) for x, y in zip(xs, ys)][1:]
    t = np.linspace(0.0, 1.0, n)
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    m = dist
    xs = h00 * a.x + h10 * m * math.cos(a.heading) + h01 * b.x + h11 * m * math.cos(b.heading)
    ys = h00 * a.y + h10 * m * math.sin(a.heading) + h01 * b.y + h11 * m * math.sin(b.heading)
    poses = []
    for i in range(1, n):
        heading = math.atan2(ys[i] - ys[i - 1], xs[i] - xs[i - 1])
        poses.append(Pose(xs[i], ys[i], heading))
    return poses


class PathGraph:
    """Discretized drivable space: lane centerline nodes at ~1 m spacing with
    along-lane, lane-change, and inter-segment connector edges."""

    def __init__(self, network, spacing=NODE_SPACING):
        self.network = network
        self.spacing = spacing
        self.nodes = []       # Pose per node id
        self.node_lane = []   # (segment, lane) per node id
        self.adj = []         # node id -> list of (node id, length)
        self._lane_nodes = {}
        self._build()

    def _add_node(self, pose, lane_key):
        self.nodes.append(pose)
        self.node_lane.append(lane_key)
        self.adj.append([])
        return len(self.nodes) - 1

    def _add_edge(self, u, v, extra=0.0):
        self.adj[u].append((v, self.nodes[u].distance_to(self.nodes[v]) + extra))

    def _build(self):
        net = self.network
        for seg in net.segments.values():
            for lane in range(seg.lane_count):
                poses = seg.lane_poses(lane, spacing=self.spacing)
                ids = [self._add_node(p, (seg.id, lane)) for p in poses]
                self._lane_nodes[(seg.id, lane)] = ids
                for u, v in zip(ids, ids[1:]):
                    self._add_edge(u, v)
        # lane-change edges: hop to the neighbor lane a short run ahead; a
        # microscopic station-indexed surcharge breaks length ties toward the
        # earliest opportunity so planned maneuvers start inside the safety
        # estimation horizon
        ahead = max(1, int(round(LANE_CHANGE_RUN / self.spacing)))
        for seg in net.segments.values():
            for lane in range(seg.lane_count):
                ids = self._lane_nodes[(seg.id, lane)]
                for neighbor in (lane - 1, lane + 1):
                    if not 0 <= neighbor < seg.lane_count:
                        continue
                    other = self._lane_nodes[(seg.id, neighbor)]
                    for i, u in enumerate(ids):
                        # hops near the segment end clamp to the last node so
                        # a late merge stays representable
                        j = min(i + ahead, len(other) - 1)
                        if j > i or (j == i and i == len(other) - 1):
                            self._add_edge(u, other[j], extra=1e-6 * i)
        # inter-segment connectors
        for conn in net.connections:
            exit_ids = self._lane_nodes[(conn.from_segment, conn.from_lane)]
            entry_ids = self._lane_nodes[(conn.to_segment, conn.to_lane)]
            a, b = self.nodes[exit_ids[-1]], self.nodes[entry_ids[0]]
            if a.distance_to(b) < 1e-6:
                self._add_edge(exit_ids[-1], entry_ids[0])
                continue
            prev = exit_ids[-1]
            for pose in connector_polyline(a, b, self.spacing):
                node = self._add_node(pose, (conn.from_segment, conn.from_lane))
                self._add_edge(prev, node)
                prev = node
            self._add_edge(prev, entry_ids[0])

    def nearest_node(self, pose, max_dist=None, blocked=None):
        best, best_d = None, float("inf")
        for i, p in enumerate(self.nodes):
            if blocked is not None and blocked[i]:
                continue
            d = p.distance_to(pose)
            if d < best_d:
                best, best_d = i, d
        if best is None or (max_dist is not None and best_d > max_dist):
            raise NoPath(f"pose ({pose.x:.1f}, {pose.y:.1f}) is not on the drivable graph")
        return best

    def blocked_mask(self, obstacles, vehicle: VehicleParams):
        """Boolean mask of nodes swallowed by inflated obstacle footprints."""
        mask = np.zeros(len(self.nodes), dtype=bool)
        if not obstacles:
            return mask
        pts = np.array([[p.x, p.y] for p in self.nodes])
        radius = 0.5 * vehicle.width + OBSTACLE_MARGIN
        for rect in obstacles:
            corners = np.asarray(rect, dtype=float)
            center = corners.mean(axis=0)
            ex = corners[1] - corners[0]
            ey = corners[3] - corners[0]
            lx, ly = np.hypot(*ex), np.hypot(*ey)
            ux, uy = ex / max(lx, 1e-12), ey / max(ly, 1e-12)
            rel = pts - center
            du = np.abs(rel @ ux)
            dv = np.abs(rel @ uy)
            mask |= (du <= lx / 2 + radius) & (dv <= ly / 2 + radius)
        return mask


_GRAPH_CACHE = {}


def path_graph(network) -> PathGraph:
    """Per-network memoized PathGraph (networks are immutable once built)."""
    key = id(network)
    cached = _GRAPH_CACHE.get(key)
    if cached is None or cached.network is not network:
        cached = PathGraph(network)
        _GRAPH_CACHE[key] = cached
    return cached


def _astar(graph, start, goal, blocked):
    goal_pose = graph.nodes[goal]
    h0 = graph.nodes[start].distance_to(goal_pose)
    frontier = [(h0, 0.0, start)]
    dist = {start: 0.0}
    parent = {start: None}
    while frontier:
        f, g, u = heapq.heappop(frontier)
        if u == goal:
            path = []
            while u is not None:
                path.append(u)
                u = parent[u]
            return path[::-1], g
        if g > dist.get(u, float("inf")):
            continue
        for v, w in graph.adj[u]:
            if blocked is not None and blocked[v]:
                continue
            ng = g + w
            if ng < dist.get(v, float("inf")) - 1e-12:
                dist[v] = ng
                parent[v] = u
                heapq.heappush(frontier, (ng + graph.nodes[v].distance_to(goal_pose), ng, v))
    raise NoPath("goal pose unreachable on the road graph")


def plan_path(x: Pose, x_goal: Pose, network, obstacles=(),
              target_speed=20.0 / 3.6, vehicle: VehicleParams = VehicleParams(),
              snap_tolerance=6.0) -> Trajectory:
    """Minimum-length waypoint trajectory from x to x_goal over the lane graph.

    Obstacles are rectangular footprints (4x2 corner arrays); nodes within
    half a vehicle width plus a 0.3 m margin of one are dropped from the
    graph. Timestamps assume constant `target_speed`.
    """
    graph = path_graph(network)
    blocked = graph.blocked_mask(obstacles, vehicle) if obstacles else None
    start = graph.nearest_node(x, max_dist=snap_tolerance, blocked=blocked)
    goal = graph.nearest_node(x_goal, max_dist=snap_tolerance, blocked=blocked)
    node_path, _ = _astar(graph, start, goal, blocked)
    poses = [graph.nodes[i] for i in node_path]
    if len(poses) == 1:
        poses = poses * 2  # degenerate start == goal: hold position
    samples = []
    t = 0.0
    samples.append((0.0, poses[0], target_speed))
    for a, b in zip(poses, poses[1:]):
        step = a.distance_to(b)
        if step < 1e-9:
            continue
        t += step / target_speed
        samples.append((t, b, target_speed))
    if len(samples) == 1:
        samples.append((1e-3, poses[-1], target_speed))
    return Trajectory(samples)


def path_length(x, x_goal, network, **kwargs) -> float:
    """Arc length of plan_path's result (the A* cost used for cost tables)."""
    return plan_path(x, x_goal, network, **kwargs).length()


def resolve_goal_pose(x: Pose, target_state, network, seed,
                      target_speed=20.0 / 3.6):
    """Goal pose in the target state's region reachable from x, plus its path.

    Tries the region's seeded sample first; if that pose is not reachable
    (e.g. a merge goal drawn behind the current pose), scans the region
    front-to-back deterministically. Raises NoPath when no region pose is
    motion-reachable.
    """
    from .symbolic import map_state

    region = map_state(target_state, network)
    sampled = region.sample(seed)
    candidates = [sampled] + [p for p in region.poses if p != sampled]
    last_err = None
    for cand in candidates:
        try:
            return cand, plan_path(x, cand, network, target_speed=target_speed)
        except NoPath as exc:
            last_err = exc
    raise last_err


def densify_trajectory(traj: Trajectory, target_speed=None, spacing=NODE_SPACING) -> Trajectory:
    """Tracking-friendly version of a waypoint trajectory.

    Long hops (lane changes, connectors) are replaced by smooth blended
    waypoints so the controller follows an S-curve instead of cutting a
    two-point diagonal. Timestamps are rebuilt from cumulative arc length.
    """
    poses = [traj.samples[0].pose]
    for prev, cur in zip(traj.samples, traj.samples[1:]):
        if prev.pose.distance_to(cur.pose) > 1.6 * spacing:
            poses.extend(connector_polyline(prev.pose, cur.pose, spacing))
        else:
            poses.append(cur.pose)
    speed = target_speed or max(traj.samples[0].speed, 1e-6)
    samples = [(0.0, poses[0], speed)]
    t = 0.0
    for a, b in zip(poses, poses[1:]):
        step = a.distance_to(b)
        if step < 1e-9:
            continue
        t += step / speed
        samples.append((t, b, speed))
    if len(samples) == 1:
        samples.append((1e-3, poses[-1], speed))
    return Trajectory(samples)


def extend_reference(traj: Trajectory, meters=12.0, spacing=4.0) -> Trajectory:
    """Tracking reference with a straight continuation past the goal.

    The controller needs waypoints beyond the goal pose to stabilize heading
    on arrival; the continuation follows the final waypoint's heading and is
    never part of any length or cost accounting.
    """
    last = traj.samples[-1]
    samples = list(traj.samples)
    n = max(1, int(round(meters / spacing)))
    for k in range(1, n + 1):
        d = k * spacing
        pose = Pose(last.pose.x + d * math.cos(last.pose.heading),
                    last.pose.y + d * math.sin(last.pose.heading),
                    last.pose.heading)
        speed = max(last.speed, 1e-6)
        samples.append((last.time + d / speed, pose, last.speed))
    return Trajectory(samples)


# ---------------------------------------------------------------------------
# Tracking control.

class TrackingController:
    """PID tracking of a waypoint trajectory.

    Steering acts on the cross-track error to a lookahead waypoint plus the
    heading error; acceleration acts on the speed error against the target
    speed. Carries integrator state, so use one instance per vehicle.
    """

    def __init__(self, gains: ControllerGains = ControllerGains(),
                 envelope: ControlEnvelope = ControlEnvelope()):
        self.gains = gains
        self.envelope = envelope
        self.reset()

    def reset(self):
        self._steer_i = 0.0
        self._speed_i = 0.0
        self._prev_cross = None
        self._prev_speed_err = None

    def _lateral_error(self, v, traj):
        # signed cross-track to the nearest waypoint segment: positive when
        # the vehicle sits left of the path
        pts = traj.samples
        best_i = min(range(len(pts)), key=lambda i: pts[i].pose.distance_to(v.pose))
        ref = pts[best_i].pose
        dx, dy = v.pose.x - ref.x, v.pose.y - ref.y
        cross = -math.sin(ref.heading) * dx + math.cos(ref.heading) * dy
        # lookahead waypoint sets the heading reference
        remaining = self.gains.lookahead
        j = best_i
        while j + 1 < len(pts) and remaining > 0:
            remaining -= pts[j].pose.distance_to(pts[j + 1].pose)
            j += 1
        heading_err = normalize_angle(pts[j].pose.heading - v.pose.heading)
        return cross, heading_err

    def track_step(self, v: VehicleState, traj: Trajectory, dt: float) -> ControlSignal:
        if dt <= 0:
            raise ValueError("dt must be positive")
        if len(traj) == 0:
            raise ValueError("empty trajectory")
        g = self.gains
        cross, heading_err = self._lateral_error(v, traj)
        self._steer_i += cross * dt
        d_cross = 0.0 if self._prev_cross is None else (cross - self._prev_cross) / dt
        self._prev_cross = cross
        steer = -(g.steer_kp * cross + g.steer_ki * self._steer_i + g.steer_kd * d_cross)
        steer += g.heading_kp * heading_err

        speed_err = g.target_speed - v.speed
        self._speed_i += speed_err * dt
        d_speed = 0.0 if self._prev_speed_err is None else (speed_err - self._prev_speed_err) / dt
        self._prev_speed_err = speed_err
        accel = g.speed_kp * speed_err + g.speed_ki * self._speed_i + g.speed_kd * d_speed
        return self.envelope.clamp(accel, steer)


def track_step(v, traj, gains, dt, envelope=ControlEnvelope(), controller=None):
    """One-shot convenience wrapper around TrackingController.track_step."""
    ctrl = controller or TrackingController(gains, envelope)
    return ctrl.track_step(v, traj, dt)
