"""Story/schedule to a continuous time function S(t) -> (x, y, text).

Path planning is 8-connected grid A* with an octile heuristic; idle time
between actions at different places is filled with "walking".
"""
from __future__ import annotations

import bisect
import heapq
import json
import math
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import LLMTransportError, PathNotFoundError, ScheduleParseError, ValidationError

WALKING = "walking"
SQRT2 = math.sqrt(2.0)
LLM_KEY_ENV = "STORYMOTION_LLM_KEY"


@dataclass(frozen=True)
class Grid:
    origin: tuple[float, float]
    cell_size: float
    occupancy: np.ndarray  # (rows, cols), 1 = blocked; rows run along y, cols along x

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValidationError("cell_size must be positive")
        object.__setattr__(self, "occupancy", np.asarray(self.occupancy, dtype=np.int8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    def cell_of(self, p) -> tuple[int, int]:
        col = math.floor((p[0] - self.origin[0]) / self.cell_size)
        row = math.floor((p[1] - self.origin[1]) / self.cell_size)
        return row, col

    def center(self, cell) -> np.ndarray:
        r, c = cell
        return np.array([self.origin[0] + (c + 0.5) * self.cell_size,
                         self.origin[1] + (r + 0.5) * self.cell_size])

    def inside(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.shape[0] and 0 <= c < self.shape[1]

    def free(self, cell) -> bool:
        return self.inside(cell) and self.occupancy[cell] == 0


@dataclass(frozen=True)
class Scene:
    locations: dict[str, tuple[float, float]]
    grid: Grid

    def __post_init__(self):
        for name, p in self.locations.items():
            if not self.grid.free(self.grid.cell_of(p)):
                raise ValidationError(f"location {name!r} at {tuple(p)} is outside the grid or blocked")

    def position(self, name: str) -> np.ndarray:
        try:
            return np.asarray(self.locations[name], dtype=float)
        except KeyError:
            raise ValidationError(f"unknown location {name!r}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        g = d["grid"]
        grid = Grid(tuple(g["origin"]), float(g["cell_size"]), np.array(g["occupancy"]))
        return cls({k: tuple(float(x) for x in v) for k, v in d["locations"].items()}, grid)

    def to_dict(self) -> dict:
        return {
            "locations": {k: list(v) for k, v in self.locations.items()},
            "grid": {"origin": list(self.grid.origin), "cell_size": self.grid.cell_size,
                     "occupancy": self.grid.occupancy.tolist()},
        }


@dataclass(frozen=True)
class ScheduleEntry:
    text: str
    location: str
    duration_s: float


@dataclass(frozen=True)
class Schedule:
    entries: tuple[ScheduleEntry, ...]

    @classmethod
    def from_records(cls, records, scene: Scene | None = None) -> "Schedule":
        if not isinstance(records, list):
            raise ValidationError("schedule must be a list of {text, location, duration_s} records")
        entries = []
        for i, r in enumerate(records):
            if not isinstance(r, dict) or set(r) != {"text", "location", "duration_s"}:
                raise ValidationError(f"schedule entry {i} must have exactly text, location, duration_s")
            text, loc, dur = r["text"], r["location"], r["duration_s"]
            if not isinstance(text, str) or not text.strip():
                raise ValidationError(f"schedule entry {i}: text must be a non-empty string")
            if not isinstance(loc, str):
                raise ValidationError(f"schedule entry {i}: location must be a string")
            if isinstance(dur, bool) or not isinstance(dur, (int, float)) or not dur > 0:
                raise ValidationError(f"schedule entry {i}: duration_s must be a positive number")
            if scene is not None and loc not in scene.locations:
                raise ValidationError(f"schedule entry {i}: unknown location {loc!r}")
            entries.append(ScheduleEntry(text, loc, float(dur)))
        if not entries:
            raise ValidationError("schedule is empty")
        return cls(tuple(entries))

    def to_records(self) -> list[dict]:
        return [{"text": e.text, "location": e.location, "duration_s": e.duration_s} for e in self.entries]


# --- path finding ----------------------------------------------------------

_MOVES = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
          (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2)]


def octile(a, b) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (SQRT2 - 1.0) * min(dr, dc) + max(dr, dc)


def grid_neighbors(occ: np.ndarray, cell):
    """8-connected moves; diagonals may not squeeze between blocked cells."""
    rows, cols = occ.shape
    r, c = cell
    for dr, dc, cost in _MOVES:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < rows and 0 <= nc < cols) or occ[nr, nc]:
            continue
        if dr and dc and (occ[r + dr, c] or occ[r, c + dc]):
            continue
        yield (nr, nc), cost


def astar_cells(occ: np.ndarray, start, goal) -> tuple[list[tuple[int, int]], float]:
    occ = np.asarray(occ)
    cols = occ.shape[1]
    if occ[start] or occ[goal]:
        raise PathNotFoundError("start or goal cell is blocked")
    g = {start: 0.0}
    came = {start: None}
    h0 = octile(start, goal)
    heap = [(h0, h0, start[0] * cols + start[1], start)]
    closed = set()
    while heap:
        _, _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = came[cur]
            return path[::-1], g[goal]
        closed.add(cur)
        for nb, cost in grid_neighbors(occ, cur):
            ng = g[cur] + cost
            if ng < g.get(nb, math.inf):
                g[nb] = ng
                came[nb] = cur
                h = octile(nb, goal)
                heapq.heappush(heap, (ng + h, h, nb[0] * cols + nb[1], nb))
    raise PathNotFoundError(f"goal cell {goal} unreachable from {start}")


def simplify_collinear(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    if len(points) <= 2:
        return points
    keep = [points[0]]
    for i in range(1, len(points) - 1):
        a, b, c = keep[-1], points[i], points[i + 1]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        dot = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1])
        if abs(cross) > tol or dot < 0:
            keep.append(b)
    keep.append(points[-1])
    return np.array(keep)


def find_path(scene: Scene, start, goal) -> np.ndarray:
    """World-coordinate polyline from ``start`` to ``goal`` around blocked cells."""
    grid = scene.grid
    start, goal = np.asarray(start, dtype=float), np.asarray(goal, dtype=float)
    s, t = grid.cell_of(start), grid.cell_of(goal)
    if not grid.free(s) or not grid.free(t):
        raise PathNotFoundError("start or goal is outside the grid or blocked")
    cells, _ = astar_cells(grid.occupancy, s, t)
    if len(cells) == 1:
        return np.array([start]) if np.allclose(start, goal) else np.array([start, goal])
    pts = np.array([grid.center(c) for c in cells])
    pts[0], pts[-1] = start, goal
    return simplify_collinear(pts)


def polyline_length(points: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum()) if len(points) > 1 else 0.0


# --- scheduler -------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    text: str
    points: np.ndarray  # (n, 2)
    times: np.ndarray  # (n,) absolute, strictly increasing

    @property
    def moving(self) -> bool:
        return len(self.points) > 1 and bool(np.any(np.abs(np.diff(self.points, axis=0)) > 1e-12))

    def position(self, t: float) -> np.ndarray:
        if len(self.points) == 1:
            return self.points[0].copy()
        return np.array([np.interp(t, self.times, self.points[:, 0]),
                         np.interp(t, self.times, self.points[:, 1])])

    def tangent(self, t: float) -> np.ndarray | None:
        if not self.moving:
            return None
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        d = self.points[k + 1] - self.points[k]
        n = np.linalg.norm(d)
        while n < 1e-12 and k > 0:
            k -= 1
            d = self.points[k + 1] - self.points[k]
            n = np.linalg.norm(d)
        return d / n if n > 1e-12 else None


@dataclass(frozen=True)
class Scheduler:
    segments: tuple[Segment, ...]
    walk_speed: float

    @property
    def duration(self) -> float:
        return self.segments[-1].t_end

    def _segment_index(self, t: float) -> int:
        if not (0.0 <= t <= self.duration):
            raise ValidationError(f"t={t} outside [0, {self.duration}]")
        starts = [s.t_start for s in self.segments]
        return max(0, bisect.bisect_right(starts, t) - 1)

    def sample(self, t: float) -> tuple[float, float, str]:
        seg = self.segments[self._segment_index(t)]
        p = seg.position(t)
        return float(p[0]), float(p[1]), seg.text

    def position(self, t: float) -> np.ndarray:
        t = min(max(t, 0.0), self.duration)
        return self.segments[self._segment_index(t)].position(t)

    def tangent(self, t: float) -> np.ndarray | None:
        """Direction of travel at ``t``, or the most recent one when standing."""
        t = min(max(t, 0.0), self.duration)
        k = self._segment_index(t)
        for seg in self.segments[k::-1]:
            d = seg.tangent(min(t, seg.t_end))
            if d is not None:
                return d
        return None

    def initial_facing(self) -> np.ndarray:
        for seg in self.segments:
            d = seg.tangent(seg.t_start)
            if d is not None:
                return d
        return np.array([0.0, 1.0])

    def texts(self) -> list[str]:
        return list(dict.fromkeys(s.text for s in self.segments))

    @classmethod
    def from_timed_path(cls, times, points, text: str = WALKING) -> "Scheduler":
        times = np.asarray(times, dtype=float)
        points = np.asarray(points, dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ValidationError("path timestamps must be strictly increasing")
        speed = float(np.max(np.linalg.norm(np.diff(points, axis=0), axis=1) / np.diff(times)))
        seg = Segment(float(times[0]), float(times[-1]), text, points, times)
        return cls((seg,), speed)


def _walk_segment(t0: float, points: np.ndarray, speed: float) -> Segment:
    seglen = np.linalg.norm(np.diff(points, axis=0), axis=1)
    times = t0 + np.concatenate([[0.0], np.cumsum(seglen)]) / speed
    return Segment(t0, float(times[-1]), WALKING, points, times)


def build_scheduler(schedule: Schedule, scene: Scene, walk_speed: float = 1.4, fps: float = 30.0,
                    start=None) -> Scheduler:
    """Action segments at their locations, joined by timed "walking" paths.

    ``start`` defaults to the first entry's location.
    """
    if walk_speed <= 0:
        raise ValidationError("walk_speed must be positive")
    if fps <= 0:
        raise ValidationError("fps must be positive")
    segments: list[Segment] = []
    t = 0.0
    here = scene.position(schedule.entries[0].location) if start is None else np.asarray(start, float)
    for e in schedule.entries:
        there = scene.position(e.location)
        if not np.allclose(here, there, atol=1e-12):
            pts = find_path(scene, here, there)
            seg = _walk_segment(t, pts, walk_speed)
            segments.append(seg)
            t = seg.t_end
        t_end = t + e.duration_s
        segments.append(Segment(t, t_end, e.text, there[None].copy(), np.array([t, t_end])))
        t, here = t_end, there
    return Scheduler(tuple(segments), walk_speed)


# --- LLM front end ---------------------------------------------------------

PROMPT_TEMPLATE = """You turn a story into a character action schedule.
Allowed location names: {locations}
Reply with exactly one JSON array and nothing else. Each element must be an
object with keys "text" (a short action description), "location" (one of the
allowed location names, verbatim) and "duration_s" (positive number of seconds
spent performing the action at that location). Keep the story's order.

Story:
{story}"""

Transport = Callable[[str, dict, dict], dict]


def build_llm_request(story: str, scene: Scene, model: str) -> dict:
    prompt = PROMPT_TEMPLATE.format(locations=", ".join(sorted(scene.locations)), story=story.strip())
    return {"model": model, "messages": [{"role": "user", "content": prompt}]}


def http_transport(url: str, payload: dict, headers: dict, timeout: float = 60.0) -> dict:
    req = urllib.request.Request(url, data=json.dumps(payload).encode(), headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode())
    except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
        raise LLMTransportError(f"LLM request to {url} failed: {exc}") from exc


def response_text(response: dict) -> str:
    try:
        return response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ScheduleParseError("response is not a chat-completion reply", json.dumps(response)) from None


def extract_single_array(text: str):
    """The one top-level JSON array embedded in ``text``."""
    dec = json.JSONDecoder()
    found = []
    i = 0
    while True:
        i = text.find("[", i)
        if i < 0:
            break
        try:
            obj, end = dec.raw_decode(text, i)
        except json.JSONDecodeError:
            i += 1
            continue
        found.append(obj)
        i = end
    if len(found) != 1:
        raise ScheduleParseError(f"expected exactly one JSON array in model output, found {len(found)}", text)
    return found[0]


def parse_schedule_response(text: str, scene: Scene) -> Schedule:
    records = extract_single_array(text)
    return Schedule.from_records(records, scene)


def parse_story_via_llm(story: str, scene: Scene, llm_endpoint: str, model: str = "gpt-3.5-turbo",
                        transport: Transport | None = None) -> Schedule:
    if not scene.locations:
        raise ValidationError("scene has no locations")
    payload = build_llm_request(story, scene, model)
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(LLM_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    response = (transport or http_transport)(llm_endpoint, payload, headers)
    return parse_schedule_response(response_text(response), scene)


class ReplayTransport:
    """Serves a recorded ``{"request": ..., "response": ...}`` transcript."""

    def __init__(self, transcript: dict, check_request: bool = False):
        self.transcript = transcript
        self.check_request = check_request
        self.calls: list[dict] = []

    def __call__(self, url: str, payload: dict, headers: dict) -> dict:
        self.calls.append(payload)
        if self.check_request and "request" in self.transcript and self.transcript["request"] != payload:
            raise LLMTransportError("request does not match the recorded transcript")
        return self.transcript["response"]
