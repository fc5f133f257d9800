"""Continuous-space primitives: poses, trajectories, control signals, footprints."""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a):
    """Wrap an angle to [-pi, pi). Idempotent for any finite input."""
    return (a + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class Pose:
    """2D vehicle configuration. Heading is stored normalized to [-pi, pi)."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        x, y, heading = float(self.x), float(self.y), float(self.heading)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(heading)):
            raise ValueError(f"pose coordinates must be finite, got {self}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "heading", normalize_angle(heading))

    def distance_to(self, other):
        return math.hypot(self.x - other.x, self.y - other.y)

    def heading_error_to(self, other):
        return normalize_angle(other.heading - self.heading)


class TrajectorySample(NamedTuple):
    time: float
    pose: Pose
    speed: float


class Trajectory:
    """Time-indexed path: ordered (time, pose, speed) samples.

    Times are strictly increasing and speeds nonnegative; the horizon is
    [t_start, t_end] of the first and last sample.
    """

    def __init__(self, samples):
        samples = tuple(TrajectorySample(*s) for s in samples)
        if not samples:
            raise ValueError("trajectory needs at least one sample")
        for a, b in zip(samples, samples[1:]):
            if b.time <= a.time:
                raise ValueError(f"sample times must strictly increase ({a.time} -> {b.time})")
        if any(s.speed < 0 for s in samples):
            raise ValueError("speeds must be nonnegative")
        self.samples = samples

    @property
    def t_start(self):
        return self.samples[0].time

    @property
    def t_end(self):
        return self.samples[-1].time

    @property
    def duration(self):
        return self.t_end - self.t_start

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def length(self):
        """Polyline arc length over the sample positions."""
        total = 0.0
        for a, b in zip(self.samples, self.samples[1:]):
            total += a.pose.distance_to(b.pose)
        return total

    def state_at(self, t, extrapolate=True):
        """Interpolated (pose, speed) at time t.

        Before the first sample the initial state is held. Past the last
        sample the vehicle continues at constant speed along its final
        heading when ``extrapolate`` is set, otherwise the final state is held.
        """
        s = self.samples
        if t <= s[0].time:
            return s[0].pose, s[0].speed
        if t >= s[-1].time:
            last = s[-1]
            if not extrapolate or last.speed == 0.0:
                return last.pose, last.speed
            dt = t - last.time
            p = Pose(
                last.pose.x + last.speed * dt * math.cos(last.pose.heading),
                last.pose.y + last.speed * dt * math.sin(last.pose.heading),
                last.pose.heading,
            )
            return p, last.speed
        times = [smp.time for smp in s]
        i = int(np.searchsorted(times, t, side="right")) - 1
        a, b = s[i], s[i + 1]
        w = (t - a.time) / (b.time - a.time)
        heading = normalize_angle(a.pose.heading + w * normalize_angle(b.pose.heading - a.pose.heading))
        pose = Pose(a.pose.x + w * (b.pose.x - a.pose.x), a.pose.y + w * (b.pose.y - a.pose.y), heading)
        return pose, a.speed + w * (b.speed - a.speed)

    def truncated(self, max_duration):
        """Samples within [t_start, t_start + max_duration]."""
        limit = self.t_start + max_duration
        kept = [s for s in self.samples if s.time <= limit + 1e-9]
        return Trajectory(kept if len(kept) >= 1 else self.samples[:1])


class ControlSignal(NamedTuple):
    """Acceleration (m/s^2) and steering angle (rad) pair."""

    accel: float
    steer: float


@dataclass(frozen=True)
class ControlEnvelope:
    """Operation limits of the controller: accel in [delta_min, delta_max],
    steering in [theta_min, theta_max]."""

    delta_min: float = -4.0
    delta_max: float = 3.0
    theta_min: float = -0.6
    theta_max: float = 0.6

    def __post_init__(self):
        if self.delta_min >= self.delta_max or self.theta_min >= self.theta_max:
            raise ValueError("control envelope bounds must be ordered")

    def contains(self, u):
        return (
            self.delta_min <= u.accel <= self.delta_max
            and self.theta_min <= u.steer <= self.theta_max
        )

    def clamp(self, accel, steer):
        return ControlSignal(
            min(max(accel, self.delta_min), self.delta_max),
            min(max(steer, self.theta_min), self.theta_max),
        )

    def sample(self, rng, n):
        """n uniform (accel, steer) draws as arrays."""
        accel = rng.uniform(self.delta_min, self.delta_max, size=n)
        steer = rng.uniform(self.theta_min, self.theta_max, size=n)
        return accel, steer


# ---------------------------------------------------------------------------
# Rectangular footprints. Batched over leading axes so the safety estimator
# can evaluate thousands of candidate ego poses at once.

def rect_corners(x, y, heading, length, width):
    """Corner coordinates of centered, oriented rectangles.

    x, y, heading may be scalars or arrays of a common shape S; returns an
    array of shape S + (4, 2).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    heading = np.asarray(heading, dtype=float)
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    cx = local[:, 0][(None,) * x.ndim] if x.ndim else local[:, 0]
    cy = local[:, 1][(None,) * x.ndim] if x.ndim else local[:, 1]
    gx = x[..., None] + cx * c[..., None] - cy * s[..., None]
    gy = y[..., None] + cx * s[..., None] + cy * c[..., None]
    return np.stack([gx, gy], axis=-1)


def _project_interval(corners, axis):
    # corners: (..., 4, 2); axis: (..., 2) -> (min, max) of the projection
    proj = np.einsum("...ij,...j->...i", corners, axis)
    return proj.min(axis=-1), proj.max(axis=-1)


def _edge_axes(corners):
    # outward-normal directions of the 4 edges; (..., 4, 2), unnormalized is fine for SAT
    edges = np.roll(corners, -1, axis=-2) - corners
    return np.stack([-edges[..., 1], edges[..., 0]], axis=-1)


def rects_overlap(a_corners, b_corners):
    """Separating-axis overlap test. Broadcasts over leading axes."""
    a_corners = np.asarray(a_corners, dtype=float)
    b_corners = np.asarray(b_corners, dtype=float)
    separated = np.zeros(np.broadcast_shapes(a_corners.shape[:-2], b_corners.shape[:-2]), dtype=bool)
    for axes_src in (a_corners, b_corners):
        axes = _edge_axes(axes_src)
        for k in range(4):
            axis = axes[..., k, :]
            a_lo, a_hi = _project_interval(a_corners, axis)
            b_lo, b_hi = _project_interval(b_corners, axis)
            separated |= (a_hi < b_lo) | (b_hi < a_lo)
    return ~separated


def _point_segment_dist2(points, seg_a, seg_b):
    # points: (..., P, 2); seg_a/seg_b: (..., S, 2) -> (..., P, S)
    d = seg_b - seg_a
    denom = np.maximum((d * d).sum(axis=-1), 1e-12)
    rel = points[..., :, None, :] - seg_a[..., None, :, :]
    t = np.clip((rel * d[..., None, :, :]).sum(axis=-1) / denom[..., None, :], 0.0, 1.0)
    closest = seg_a[..., None, :, :] + t[..., None] * d[..., None, :, :]
    diff = points[..., :, None, :] - closest
    return (diff * diff).sum(axis=-1)


def rect_distance(a_corners, b_corners):
    """Euclidean separation between rectangle boundaries (0 when overlapping)."""
    a_corners = np.asarray(a_corners, dtype=float)
    b_corners = np.asarray(b_corners, dtype=float)
    a_next = np.roll(a_corners, -1, axis=-2)
    b_next = np.roll(b_corners, -1, axis=-2)
    d2_ab = _point_segment_dist2(a_corners, b_corners, b_next).min(axis=(-1, -2))
    d2_ba = _point_segment_dist2(b_corners, a_corners, a_next).min(axis=(-1, -2))
    dist = np.sqrt(np.minimum(d2_ab, d2_ba))
    return np.where(rects_overlap(a_corners, b_corners), 0.0, dist)


def footprints_clear(ax, ay, ah, dims_a, bx, by, bh, dims_b, margin):
    """Separating-axis clearance test between oriented rectangles.

    Each box is inflated by margin/2 per side, so a True result means the
    original footprints keep (at least, up to corner rounding) `margin` of
    separation. Inputs broadcast, so one predicted footprint can be tested
    against whole arrays of candidate ego poses cheaply.
    """
    la, wa = dims_a[0] / 2 + margin / 2, dims_a[1] / 2 + margin / 2
    lb, wb = dims_b[0] / 2 + margin / 2, dims_b[1] / 2 + margin / 2
    ca, sa = np.cos(ah), np.sin(ah)
    cb, sb = np.cos(bh), np.sin(bh)
    tx, ty = bx - ax, by - ay
    separated = None
    for nx, ny in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        dist = np.abs(tx * nx + ty * ny)
        ra = la * np.abs(ca * nx + sa * ny) + wa * np.abs(-sa * nx + ca * ny)
        rb = lb * np.abs(cb * nx + sb * ny) + wb * np.abs(-sb * nx + cb * ny)
        hit = dist > ra + rb
        separated = hit if separated is None else (separated | hit)
    return separated
