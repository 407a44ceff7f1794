import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL_EPISODES, SMALL_WORLD
from navpruner.errors import InvalidConfig, InvalidEpisode, NoFeasiblePair, NonAdjacentStep, UnknownViewpoint
from navpruner.world import (
    NUM_SECTORS,
    Episode,
    EpisodeConfig,
    World,
    WorldConfig,
    WorldObject,
    bearing,
    follow_choice,
    generate_episodes,
    generate_world,
    geodesic,
    load_world,
    next_hop,
    parse_instruction,
    path_length,
    prune,
    relative_heading,
    render_observation,
    save_world,
    sector_index,
    shortest_path,
    validate_episode,
    world_from_dict,
    world_to_dict,
)


def test_bearing_is_clockwise_from_plus_y(toy_world):
    assert bearing(toy_world, "a", "b") == 0.0
    assert bearing(toy_world, "a", "c") == 90.0
    assert bearing(toy_world, "a", "d") == 180.0
    assert bearing(toy_world, "a", "e") == pytest.approx(315.0)


@pytest.mark.parametrize("rel,expected", [
    (0.0, 0), (22.4999, 0), (22.5, 1), (45.0, 1), (67.5, 2), (180.0, 4),
    (202.5, 5), (337.4999, 7), (337.5, 0), (359.9, 0),
])
def test_sector_boundaries_round_half_up(rel, expected):
    assert sector_index(rel) == expected


@given(st.floats(0.0, 359.999, allow_nan=False))
def test_sector_is_nearest_centre(rel):
    k = sector_index(rel)
    gap = abs((rel - 45.0 * k + 180.0) % 360.0 - 180.0)
    assert 0 <= k < NUM_SECTORS
    assert gap <= 22.5 + 1e-9


def test_render_sector_text_is_exact(toy_world):
    obs = render_observation(toy_world, "a", 0.0)
    assert obs.scene_summary == "You are in a kitchen."
    assert obs.sectors[0].rendered == (
        "Direction: Front. Scene: passage toward the hallway. Objects within 3m: sofa. "
        "Navigable: b (heading 0 deg, distance 2.0 m).")
    assert obs.sectors[2].rendered == (
        "Direction: Right. Scene: passage toward the office. Objects within 3m: none. "
        "Navigable: c (heading 90 deg, distance 2.0 m).")
    assert obs.sectors[4].rendered == (
        "Direction: Rear. Scene: passage toward the bedroom. Objects within 3m: none. "
        "Navigable: d (heading 180 deg, distance 4.0 m).")
    assert obs.sectors[7].rendered == (
        "Direction: Front-Left. Scene: passage toward the bathroom. Objects within 3m: none. "
        "Navigable: e (heading 315 deg, distance 2.1 m).")
    assert obs.sectors[1].rendered == (
        "Direction: Front-Right. Scene: no passage. Objects within 3m: none. Navigable: none.")
    assert obs.navigable_ids == {"b", "c", "d", "e"}


def test_heading_rotates_sectors(toy_world):
    obs = render_observation(toy_world, "a", 90.0)
    # facing +x: c is ahead, b to the left, d to the right
    assert [vp for vp, _, _ in obs.sectors[0].navigable] == ["c"]
    assert [vp for vp, _, _ in obs.sectors[6].navigable] == ["b"]
    assert [vp for vp, _, _ in obs.sectors[2].navigable] == ["d"]


def test_prune_keeps_sorted_subset(toy_world):
    obs = render_observation(toy_world, "a", 0.0)
    p = prune(obs, [7, 0, 7, 2])
    assert p.indices == (0, 2, 7)
    assert p.navigable_ids == {"b", "c", "e"}
    assert p.text.splitlines()[0] == obs.scene_summary


def test_geodesic_against_networkx(small_world):
    nx = pytest.importorskip("networkx")
    world, _ = small_world
    g = nx.Graph()
    for a, b in world.edges:
        g.add_edge(a, b, weight=world.distance(a, b))
    ref = dict(nx.all_pairs_dijkstra_path_length(g))
    for a in world.viewpoints:
        for b in world.viewpoints:
            assert geodesic(world, a, b) == pytest.approx(ref[a][b], abs=1e-12)


def test_geodesic_toy_values(toy_world):
    assert geodesic(toy_world, "b", "c") == pytest.approx(math.sqrt(8))
    assert geodesic(toy_world, "d", "e") == pytest.approx(4.0 + math.sqrt(4.5))
    assert shortest_path(toy_world, "d", "b") == ("d", "a", "b")


def test_next_hop_ties_go_to_smaller_id():
    w = World({"s": (0, 0, 0), "x": (1, 1, 0), "y": (-1, 1, 0), "g": (0, 2, 0)},
              (("s", "x"), ("s", "y"), ("x", "g"), ("y", "g")), {v: "room" for v in "sxyg"})
    assert next_hop(w, "s", "g", ["y", "x"]) == "x"
    assert next_hop(w, "s", "g", []) is None


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.data())
def test_geodesic_metric_properties(seed, data):
    world = generate_world(WorldConfig(num_viewpoints=15, width=8, depth=8, radius=3.0, num_rooms=3), seed)
    ids = sorted(world.viewpoints)
    a, b, c = (data.draw(st.sampled_from(ids)) for _ in range(3))
    assert geodesic(world, a, b) == geodesic(world, b, a)
    assert geodesic(world, a, a) == 0.0
    assert geodesic(world, a, c) <= geodesic(world, a, b) + geodesic(world, b, c) + 1e-9
    assert path_length(world, shortest_path(world, a, b)) == pytest.approx(geodesic(world, a, b), abs=1e-9)


def test_errors(toy_world):
    with pytest.raises(UnknownViewpoint):
        geodesic(toy_world, "a", "zz")
    with pytest.raises(KeyError):
        toy_world.neighbors("zz")
    with pytest.raises(NonAdjacentStep):
        path_length(toy_world, ["d", "b"])
    with pytest.raises(InvalidConfig):
        World({"a": (0, 0, 0), "b": (1, 0, 0)}, (), {"a": "x", "b": "y"})
    with pytest.raises(InvalidConfig):
        WorldConfig(num_viewpoints=1).validate()
    with pytest.raises(NoFeasiblePair):
        generate_episodes(toy_world, EpisodeConfig(min_len=50.0, max_len=60.0), 0)


def test_generation_is_deterministic():
    a = generate_world(SMALL_WORLD, 11)
    b = generate_world(SMALL_WORLD, 11)
    assert world_to_dict(a, generate_episodes(a, SMALL_EPISODES, 11)) == \
        world_to_dict(b, generate_episodes(b, SMALL_EPISODES, 11))
    assert world_to_dict(a) != world_to_dict(generate_world(SMALL_WORLD, 12))


def test_generated_world_is_connected_and_ids_padded(default_world):
    world, episodes = default_world
    assert len(world.viewpoints) == 100
    assert min(world.viewpoints) == "vp000" and max(world.viewpoints) == "vp099"
    assert len(episodes) == 50
    assert len({e.id for e in episodes}) == 50


def test_episodes_are_valid_and_retraceable(default_world):
    world, episodes = default_world
    cfg = EpisodeConfig()
    for ep in episodes:
        validate_episode(world, ep)
        assert cfg.min_len <= geodesic(world, ep.start, ep.goal) <= cfg.max_len
        sectors = parse_instruction(ep.instruction)
        assert sectors[-1] is None and len(sectors) == len(ep.reference_path)
        here, heading = ep.start, ep.start_heading
        for k in sectors[:-1]:
            nxt = follow_choice(world, here, heading, k)
            heading = bearing(world, here, nxt)
            here = nxt
        assert here == ep.goal


def test_instruction_grammar(toy_world):
    ep = Episode("e0", "walk front to the hallway, then walk right to the office, then stop near the office.",
                 "a", 0.0, "c", ("a", "b", "c"))
    assert parse_instruction(ep.instruction) == [0, 2, None]
    # geodesic a->c is the direct edge, so the reference path is rejected
    with pytest.raises(InvalidEpisode):
        validate_episode(toy_world, ep)


def test_relative_heading_matches_sector_labels(default_world):
    world, episodes = default_world
    ep = episodes[0]
    first = parse_instruction(ep.instruction)[0]
    rel = relative_heading(world, ep.start, ep.start_heading, ep.reference_path[1])
    assert sector_index(rel) == first


def test_world_file_roundtrip(tmp_path, small_world):
    world, episodes = small_world
    path = tmp_path / "w.json"
    save_world(path, world, episodes)
    w2, eps2 = load_world(path)
    assert world_to_dict(w2, eps2) == world_to_dict(world, episodes)
    save_world(tmp_path / "w2.json", w2, eps2)
    assert (tmp_path / "w2.json").read_bytes() == path.read_bytes()


def test_loading_rejects_bad_episode(small_world):
    world, episodes = small_world
    doc = world_to_dict(world, episodes)
    doc["episodes"][0]["reference_path"] = doc["episodes"][0]["reference_path"][::-1]
    with pytest.raises(InvalidEpisode):
        world_from_dict(json.loads(json.dumps(doc)))


def test_objects_listed_by_distance(toy_world):
    obs = render_observation(toy_world, "a", 0.0)
    assert obs.sectors[0].objects_text == "sofa"
    assert all("lamp" not in s.objects_text for s in obs.sectors)
    assert np.isclose(obs.sectors[7].navigable[0][2], math.sqrt(4.5))


@pytest.mark.parametrize("seed", range(5))
def test_two_viewpoints_get_one_edge(seed):
    w = generate_world(WorldConfig(num_viewpoints=2, width=50, depth=50, radius=0.5), seed)
    assert len(w.edges) == 1


def test_isolated_viewpoint_sees_nothing():
    w = World({"solo": (0.0, 0.0, 0.0)}, (), {"solo": "attic"})
    obs = render_observation(w, "solo", 123.0)
    assert len(obs.sectors) == 8
    assert all(s.rendered.endswith("Navigable: none.") for s in obs.sectors)
    assert render_observation(w, "solo", 123.0) == obs


def test_object_radius_is_strict():
    w = World({"a": (0.0, 0.0, 0.0), "b": (0.0, 5.0, 0.0)}, (("a", "b"),), {"a": "den", "b": "den"},
              (WorldObject("vase", (0.0, 2.9, 0.0), "a"), WorldObject("rug", (0.0, -3.1, 0.0), "a")))
    texts = [s.objects_text for s in render_observation(w, "a", 0.0).sectors]
    assert texts[0] == "vase" and "rug" not in " ".join(texts)


def test_one_step_episode_grammar():
    w = World({"a": (0.0, 0.0, 0.0), "b": (0.0, 9.0, 0.0)}, (("a", "b"),), {"a": "den", "b": "garage"})
    eps = generate_episodes(w, EpisodeConfig(num_episodes=2, min_len=8.0, max_len=20.0), 0)
    for ep in eps:
        clauses = ep.instruction.rstrip(".").split(", then ")
        assert len(clauses) == 2
        assert clauses[0].startswith("walk ") and clauses[1] == "stop near the " + w.rooms[ep.goal]
