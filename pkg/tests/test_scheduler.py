import json
import math

import networkx as nx
import numpy as np
import pytest

from storymotion.errors import PathNotFoundError, ScheduleParseError, ValidationError
from storymotion.fileio import load_scene, load_schedule
from storymotion.scheduler import (
    LLM_KEY_ENV, WALKING, ReplayTransport, Schedule, Scheduler, astar_cells, build_scheduler,
    extract_single_array, find_path, grid_neighbors, parse_story_via_llm,
)


def _dijkstra(occ, start, goal):
    g = nx.Graph()
    rows, cols = occ.shape
    for r in range(rows):
        for c in range(cols):
            if occ[r, c]:
                continue
            for nb, cost in grid_neighbors(occ, (r, c)):
                g.add_edge((r, c), nb, weight=cost)
    g.add_node(start)
    return nx.dijkstra_path_length(g, start, goal)


def _random_grids(n, rng):
    out = []
    while len(out) < n:
        occ = (rng.random((16, 16)) < rng.uniform(0.1, 0.35)).astype(np.int8)
        free = np.argwhere(occ == 0)
        a, b = free[rng.choice(len(free), 2, replace=False)]
        out.append((occ, tuple(int(x) for x in a), tuple(int(x) for x in b)))
    return out


def test_astar_matches_dijkstra():
    rng = np.random.default_rng(7)
    reachable = 0
    for occ, s, t in _random_grids(50, rng):
        try:
            ref = _dijkstra(occ, s, t)
        except nx.NetworkXNoPath:
            with pytest.raises(PathNotFoundError):
                astar_cells(occ, s, t)
            continue
        cells, cost = astar_cells(occ, s, t)
        reachable += 1
        assert cost == pytest.approx(ref, abs=1e-9)
        assert cells[0] == s and cells[-1] == t
        steps = sum(math.hypot(a[0] - b[0], a[1] - b[1]) for a, b in zip(cells, cells[1:]))
        assert steps == pytest.approx(cost, abs=1e-9)
        assert all(occ[c] == 0 for c in cells)
    assert reachable >= 25


def test_no_corner_cutting():
    occ = np.array([[0, 1], [1, 0]], dtype=np.int8)
    with pytest.raises(PathNotFoundError):
        astar_cells(occ, (0, 0), (1, 1))


def test_path_avoids_wall(fixtures):
    scene = load_scene(fixtures / "scene.json")
    pts = find_path(scene, scene.position("kitchen"), scene.position("sofa"))
    np.testing.assert_allclose(pts[0], scene.position("kitchen"))
    np.testing.assert_allclose(pts[-1], scene.position("sofa"))
    dense = np.concatenate([np.linspace(a, b, 50) for a, b in zip(pts, pts[1:])])
    for p in dense:
        assert scene.grid.free(scene.grid.cell_of(p))


@pytest.fixture
def fixture_scheduler(fixtures):
    scene = load_scene(fixtures / "scene.json")
    schedule = load_schedule(fixtures / "expected_schedule.json", scene)
    return scene, schedule, build_scheduler(schedule, scene, walk_speed=1.4)


def test_scheduler_lipschitz(fixture_scheduler):
    _, _, sched = fixture_scheduler
    t = np.linspace(0, sched.duration, 4001)
    p = np.array([sched.position(x) for x in t])
    speed = np.linalg.norm(np.diff(p, axis=0), axis=1) / np.diff(t)
    assert speed.max() <= sched.walk_speed * (1 + 1e-9)
    assert speed.max() > 0.9 * sched.walk_speed


def test_scheduler_texts_and_locations(fixture_scheduler):
    scene, schedule, sched = fixture_scheduler
    assert sched.sample(0.0) == pytest.approx((*scene.position("door"), "idle"))
    assert sched.sample(1.0)[2] == "idle"
    assert sched.sample(2.5)[2] == WALKING
    assert sched.sample(sched.duration)[:2] == pytest.approx(tuple(scene.position("sofa")))
    stand = sum(e.duration_s for e in schedule.entries)
    assert sched.duration > stand
    wave = [s for s in sched.segments if s.text == "wave"][0]
    assert wave.t_end - wave.t_start == pytest.approx(3.0)
    with pytest.raises(ValidationError):
        sched.sample(sched.duration + 1.0)


def test_timed_path_scheduler():
    s = Scheduler.from_timed_path([0, 1, 2], [[0, 0], [1, 0], [1, 2]])
    assert s.sample(0.5)[:2] == pytest.approx((0.5, 0.0))
    assert s.walk_speed == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        Scheduler.from_timed_path([0, 1, 1], [[0, 0], [1, 0], [2, 0]])


def test_llm_replay_matches_expected(fixtures):
    scene = load_scene(fixtures / "scene.json")
    story = (fixtures / "story.txt").read_text()
    transport = ReplayTransport(json.loads((fixtures / "llm_transcript_ok.json").read_text()))
    got = parse_story_via_llm(story, scene, "http://127.0.0.1:9/v1/chat/completions", transport=transport)
    expected = load_schedule(fixtures / "expected_schedule.json", scene)
    assert got == expected
    prompt = transport.calls[0]["messages"][0]["content"]
    assert "door" in prompt and story.strip() in prompt


@pytest.mark.parametrize("name", [
    "two_arrays", "no_array", "truncated", "unknown_location", "negative_duration", "extra_key", "not_chat"])
def test_malformed_transcripts_fail(fixtures, name):
    scene = load_scene(fixtures / "scene.json")
    transcript = json.loads((fixtures / f"llm_transcript_bad_{name}.json").read_text())
    with pytest.raises((ScheduleParseError, ValidationError)):
        parse_story_via_llm("story", scene, "http://x", transport=ReplayTransport(transcript))


def test_bearer_header_from_env(fixtures, monkeypatch):
    scene = load_scene(fixtures / "scene.json")
    transcript = json.loads((fixtures / "llm_transcript_ok.json").read_text())
    seen = {}

    def transport(url, payload, headers):
        seen.update(headers)
        return transcript["response"]

    monkeypatch.delenv(LLM_KEY_ENV, raising=False)
    parse_story_via_llm("s", scene, "http://x", transport=transport)
    assert "Authorization" not in seen
    monkeypatch.setenv(LLM_KEY_ENV, "abc")
    parse_story_via_llm("s", scene, "http://x", transport=transport)
    assert seen["Authorization"] == "Bearer abc"


def test_extract_single_array():
    assert extract_single_array('ok [1, 2] bye') == [1, 2]
    with pytest.raises(ScheduleParseError):
        extract_single_array("[1] and [2]")


def test_schedule_records_validation():
    with pytest.raises(ValidationError):
        Schedule.from_records([])
    with pytest.raises(ValidationError):
        Schedule.from_records([{"text": "a", "location": "b", "duration_s": True}])
    s = Schedule.from_records([{"text": "a", "location": "b", "duration_s": 1}])
    assert Schedule.from_records(s.to_records()) == s
