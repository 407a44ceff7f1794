import pytest

from navpruner.world import (
    EpisodeConfig,
    World,
    WorldConfig,
    WorldObject,
    generate_episodes,
    generate_world,
)

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def make_toy_world() -> World:
    """Hub `a` with one neighbour in four distinct sectors (heading 0)."""
    return World(
        viewpoints={
            "a": (0.0, 0.0, 0.0),
            "b": (0.0, 2.0, 0.0),     # front
            "c": (2.0, 0.0, 0.0),     # right
            "d": (0.0, -4.0, 0.0),    # rear
            "e": (-1.5, 1.5, 0.0),    # front-left
        },
        edges=(("a", "b"), ("c", "a"), ("a", "d"), ("a", "e"), ("b", "c")),
        rooms={"a": "kitchen", "b": "hallway", "c": "office", "d": "bedroom", "e": "bathroom"},
        objects=(
            WorldObject("sofa", (0.0, 2.9, 0.0), "a"),
            WorldObject("lamp", (3.0, 0.0, 0.0), "a"),  # exactly 3 m: not listed
        ),
    )


@pytest.fixture
def toy_world():
    return make_toy_world()


SMALL_WORLD = WorldConfig(num_viewpoints=30, width=12.0, depth=12.0, radius=3.5, num_rooms=4)
SMALL_EPISODES = EpisodeConfig(num_episodes=20, min_len=4.0, max_len=12.0)


@pytest.fixture(scope="session")
def small_world():
    w = generate_world(SMALL_WORLD, 7)
    return w, generate_episodes(w, SMALL_EPISODES, 7)


@pytest.fixture(scope="session")
def default_world():
    w = generate_world(WorldConfig(), 3)
    return w, generate_episodes(w, EpisodeConfig(), 3)
