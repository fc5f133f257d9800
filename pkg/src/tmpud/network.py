"""Lane-graph road network: segments with per-lane centerlines plus directed
connections tagged by the driving action that traverses them.

Lane indices count from the rightmost lane (index 0), so a merge to the left
increments the index. Connections describe legal continuations between
(segment, lane) endpoints for travel along the stored centerline direction.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, normalize_angle

CONNECTION_KINDS = ("forward", "turnleft", "turnright")


class NetworkFormatError(ValueError):
    """Raised when a road-network document fails validation; message carries
    the offending line when it can be located."""


@dataclass(frozen=True)
class Connection:
    from_segment: str
    from_lane: int
    to_segment: str
    to_lane: int
    kind: str


class Segment:
    """One-way road segment with `lanes` parallel centerline polylines."""

    def __init__(self, seg_id, centerlines, length=None):
        self.id = seg_id
        self.centerlines = [np.asarray(c, dtype=float) for c in centerlines]
        if not self.centerlines:
            raise ValueError(f"segment {seg_id!r} has no lanes")
        for c in self.centerlines:
            if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 2:
                raise ValueError(f"segment {seg_id!r}: centerlines need >= 2 points of (x, y)")
        self._arc_lengths = [float(np.hypot(*np.diff(c, axis=0).T).sum()) for c in self.centerlines]
        self.length = float(length) if length is not None else self._arc_lengths[0]

    @property
    def lane_count(self):
        return len(self.centerlines)

    def lane_length(self, lane):
        return self._arc_lengths[lane]

    def lane_points(self, lane, direction=1):
        pts = self.centerlines[lane]
        return pts if direction >= 0 else pts[::-1]

    def lane_poses(self, lane, direction=1, spacing=1.0):
        """Centerline resampled at `spacing`, with tangent headings."""
        pts = self.lane_points(lane, direction)
        deltas = np.diff(pts, axis=0)
        seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = cum[-1]
        if total <= 0:
            return []
        n = max(2, int(math.floor(total / spacing)) + 1)
        stations = np.linspace(0.0, total, n)
        xs = np.interp(stations, cum, pts[:, 0])
        ys = np.interp(stations, cum, pts[:, 1])
        idx = np.clip(np.searchsorted(cum, stations, side="right") - 1, 0, len(deltas) - 1)
        headings = np.arctan2(deltas[idx, 1], deltas[idx, 0])
        return [Pose(x, y, h) for x, y, h in zip(xs, ys, headings)]

    def endpoint_pose(self, lane, direction=1, end="exit"):
        pts = self.lane_points(lane, direction)
        if end == "exit":
            a, b = pts[-2], pts[-1]
            return Pose(b[0], b[1], math.atan2(b[1] - a[1], b[0] - a[0]))
        a, b = pts[0], pts[1]
        return Pose(a[0], a[1], math.atan2(b[1] - a[1], b[0] - a[0]))


class RoadNetwork:
    """Immutable-after-construction collection of segments and connections."""

    def __init__(self, segments, connections):
        self.segments = {s.id: s for s in segments}
        if len(self.segments) != len(segments):
            raise ValueError("duplicate segment ids")
        self.connections = tuple(connections)
        self._out = {}
        for c in self.connections:
            self._check_ref(c)
            self._out.setdefault((c.from_segment, c.from_lane), []).append(c)
        for key in self._out:
            self._out[key].sort(key=lambda c: (c.kind, c.to_segment, c.to_lane))

    def _check_ref(self, c):
        for seg_id, lane in ((c.from_segment, c.from_lane), (c.to_segment, c.to_lane)):
            seg = self.segments.get(seg_id)
            if seg is None:
                raise ValueError(f"connection references unknown segment {seg_id!r}")
            if not 0 <= lane < seg.lane_count:
                raise ValueError(f"connection references lane {lane} of {seg_id!r} ({seg.lane_count} lanes)")
        if c.kind not in CONNECTION_KINDS:
            raise ValueError(f"unknown connection kind {c.kind!r}")

    def segment(self, seg_id):
        seg = self.segments.get(seg_id)
        if seg is None:
            raise KeyError(f"no segment {seg_id!r}")
        return seg

    def outgoing(self, seg_id, lane):
        return self._out.get((seg_id, lane), [])

    def left_lane(self, seg_id, lane):
        """Index of the neighbor lane to the left, or None."""
        seg = self.segment(seg_id)
        nxt = lane + 1
        return nxt if nxt < seg.lane_count else None

    def right_lane(self, seg_id, lane):
        nxt = lane - 1
        self.segment(seg_id)
        return nxt if nxt >= 0 else None

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        return {
            "segments": [
                {
                    "id": s.id,
                    "length": s.length,
                    "lanes": s.lane_count,
                    "centerlines": [c.tolist() for c in s.centerlines],
                }
                for s in self.segments.values()
            ],
            "connections": [
                {
                    "from": [c.from_segment, c.from_lane],
                    "to": [c.to_segment, c.to_lane],
                    "action": c.kind,
                }
                for c in self.connections
            ],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @staticmethod
    def from_dict(doc, locator=None):
        return _build_network(doc, locator or _NullLocator())

    @staticmethod
    def load(path):
        with open(path) as fh:
            text = fh.read()
        return parse_network(text, source=str(path))


# ---------------------------------------------------------------------------
# Parsing with line-precise diagnostics. The stdlib decoder reports positions
# only for syntax errors, so element offsets inside the two top-level arrays
# are recovered with raw_decode for semantic messages.

class _NullLocator:
    def line_of(self, kind, index):
        return None


class _ArrayLocator:
    def __init__(self, text):
        self.text = text
        self.offsets = {"segments": self._element_offsets("segments"),
                        "connections": self._element_offsets("connections")}

    def _element_offsets(self, key):
        text = self.text
        probe = f'"{key}"'
        at = text.find(probe)
        if at < 0:
            return []
        i = text.find("[", at)
        if i < 0:
            return []
        decoder = json.JSONDecoder()
        offsets = []
        i += 1
        while i < len(text):
            while i < len(text) and text[i] in " \t\r\n,":
                i += 1
            if i >= len(text) or text[i] == "]":
                break
            offsets.append(i)
            try:
                _, i = decoder.raw_decode(text, i)
            except json.JSONDecodeError:
                break
        return offsets

    def line_of(self, kind, index):
        offs = self.offsets.get(kind, [])
        if 0 <= index < len(offs):
            return self.text.count("\n", 0, offs[index]) + 1
        return None


def _fail(locator, kind, index, source, msg):
    line = locator.line_of(kind, index)
    where = f"{source or 'document'}"
    if line is not None:
        where += f", line {line}"
    raise NetworkFormatError(f"{where}: {kind}[{index}]: {msg}")


def _build_network(doc, locator, source=None):
    if not isinstance(doc, dict):
        raise NetworkFormatError(f"{source or 'document'}: top level must be an object")
    for key in ("segments", "connections"):
        if key not in doc:
            raise NetworkFormatError(f"{source or 'document'}: missing top-level key {key!r}")
        if not isinstance(doc[key], list):
            raise NetworkFormatError(f"{source or 'document'}: {key!r} must be an array")

    segments = []
    seen = set()
    for i, entry in enumerate(doc["segments"]):
        if not isinstance(entry, dict):
            _fail(locator, "segments", i, source, "must be an object")
        seg_id = entry.get("id")
        if not isinstance(seg_id, str) or not seg_id:
            _fail(locator, "segments", i, source, "needs a nonempty string 'id'")
        if seg_id in seen:
            _fail(locator, "segments", i, source, f"duplicate id {seg_id!r}")
        seen.add(seg_id)
        centerlines = entry.get("centerlines")
        if not isinstance(centerlines, list) or not centerlines:
            _fail(locator, "segments", i, source, "needs a nonempty 'centerlines' array")
        lanes = entry.get("lanes", len(centerlines))
        if lanes != len(centerlines):
            _fail(locator, "segments", i, source,
                  f"'lanes' = {lanes} but {len(centerlines)} centerlines given")
        for lane, line in enumerate(centerlines):
            ok = (isinstance(line, list) and len(line) >= 2
                  and all(isinstance(p, list) and len(p) == 2
                          and all(isinstance(v, (int, float)) for v in p) for p in line))
            if not ok:
                _fail(locator, "segments", i, source,
                      f"centerline {lane} must be >= 2 [x, y] points")
        try:
            segments.append(Segment(seg_id, centerlines, entry.get("length")))
        except ValueError as exc:
            _fail(locator, "segments", i, source, str(exc))

    by_id = {s.id: s for s in segments}
    connections = []
    for i, entry in enumerate(doc["connections"]):
        if not isinstance(entry, dict):
            _fail(locator, "connections", i, source, "must be an object")
        kind = entry.get("action")
        if kind not in CONNECTION_KINDS:
            _fail(locator, "connections", i, source,
                  f"'action' must be one of {CONNECTION_KINDS}, got {kind!r}")
        ends = []
        for key in ("from", "to"):
            ref = entry.get(key)
            if not (isinstance(ref, list) and len(ref) == 2
                    and isinstance(ref[0], str) and isinstance(ref[1], int)):
                _fail(locator, "connections", i, source, f"'{key}' must be [segment_id, lane]")
            seg = by_id.get(ref[0])
            if seg is None:
                _fail(locator, "connections", i, source, f"'{key}' references unknown segment {ref[0]!r}")
            if not 0 <= ref[1] < seg.lane_count:
                _fail(locator, "connections", i, source,
                      f"'{key}' lane {ref[1]} out of range for {ref[0]!r} ({seg.lane_count} lanes)")
            ends.append((ref[0], ref[1]))
        connections.append(Connection(ends[0][0], ends[0][1], ends[1][0], ends[1][1], kind))

    return RoadNetwork(segments, connections)


def parse_network(text, source=None):
    """Parse and validate a road-network JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{source or 'document'}, line {exc.lineno}: invalid JSON: {exc.msg}") from exc
    return _build_network(doc, _ArrayLocator(text), source=source)


# ---------------------------------------------------------------------------
# Construction helpers used by scenario builders and tests.

def straight_segment(seg_id, start, end, lanes=1, lane_width=4.2, points=None):
    """Straight segment from `start` to `end` (lane 0 centerline); extra lanes
    are offset to the left of the travel direction."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    direction = end - start
    length = float(np.hypot(*direction))
    if length <= 0:
        raise ValueError("degenerate segment")
    unit = direction / length
    left = np.array([-unit[1], unit[0]])
    n = points or max(2, int(length) + 1)
    stations = np.linspace(0.0, 1.0, n)
    centerlines = []
    for lane in range(lanes):
        offset = left * (lane * lane_width)
        pts = start + stations[:, None] * direction + offset
        centerlines.append(pts.tolist())
    return Segment(seg_id, centerlines)


def polyline_segment(seg_id, points_lane0, lanes=1, lane_width=4.2):
    """Segment following an arbitrary lane-0 polyline; extra lanes are offset
    to the left using per-vertex normals."""
    pts = np.asarray(points_lane0, dtype=float)
    deltas = np.diff(pts, axis=0)
    tangents = deltas / np.maximum(np.hypot(deltas[:, 0], deltas[:, 1])[:, None], 1e-12)
    vertex_tan = np.vstack([tangents[:1], 0.5 * (tangents[:-1] + tangents[1:]), tangents[-1:]])
    vertex_tan /= np.maximum(np.hypot(vertex_tan[:, 0], vertex_tan[:, 1])[:, None], 1e-12)
    left = np.stack([-vertex_tan[:, 1], vertex_tan[:, 0]], axis=1)
    centerlines = [(pts + left * (lane * lane_width)).tolist() for lane in range(lanes)]
    return Segment(seg_id, centerlines)


def heading_between(a, b):
    return normalize_angle(math.atan2(b[1] - a[1], b[0] - a[0]))
