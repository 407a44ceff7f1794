"""Discrete viewpoint world: geometry, directional binning, textual observations,
and a seeded synthetic generator for worlds and instruction episodes."""

from __future__ import annotations

import heapq
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegeneratePosition,
    InvalidConfig,
    InvalidEpisode,
    NoFeasiblePair,
    NonAdjacentStep,
    UnknownViewpoint,
)

SECTOR_NAMES = (
    "Front",
    "Front-Right",
    "Right",
    "Rear-Right",
    "Rear",
    "Rear-Left",
    "Left",
    "Front-Left",
)
NUM_SECTORS = len(SECTOR_NAMES)
OBJECT_RADIUS = 3.0
# slack used when comparing sums of edge lengths against geodesics
PATH_TOL = 1e-9

ROOM_VOCAB = (
    "kitchen", "hallway", "bedroom", "bathroom", "living room", "dining room",
    "office", "laundry room", "staircase", "closet", "garage", "balcony",
)
OBJECT_VOCAB = (
    "sofa", "table", "lamp", "bed", "sink", "plant", "chair", "painting",
    "fridge", "mirror", "bookshelf", "piano", "rug", "television", "stove",
    "desk", "toilet", "wardrobe", "oven", "bench",
)

Position = tuple[float, float, float]


@dataclass(frozen=True)
class WorldObject:
    name: str
    position: Position
    near: str


@dataclass(frozen=True)
class World:
    viewpoints: Mapping[str, Position]
    edges: tuple[tuple[str, str], ...]
    rooms: Mapping[str, str]
    objects: tuple[WorldObject, ...] = ()
    _adj: dict = field(init=False, repr=False, compare=False)
    _sssp: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        canon = set()
        for a, b in self.edges:
            if a == b:
                raise InvalidConfig(f"self-edge at {a}")
            for v in (a, b):
                if v not in self.viewpoints:
                    raise UnknownViewpoint(f"edge references unknown viewpoint {v!r}")
            canon.add((a, b) if a < b else (b, a))
        for obj in self.objects:
            if obj.near not in self.viewpoints:
                raise UnknownViewpoint(f"object {obj.name!r} anchored at unknown viewpoint {obj.near!r}")
        adj: dict[str, list[str]] = {v: [] for v in self.viewpoints}
        for a, b in canon:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        object.__setattr__(self, "_adj", {v: tuple(sorted(ns)) for v, ns in adj.items()})
        object.__setattr__(self, "_sssp", {})
        if self.viewpoints and not self._connected():
            raise InvalidConfig("viewpoint graph is not connected")

    def _connected(self) -> bool:
        start = next(iter(self.viewpoints))
        seen = {start}
        stack = [start]
        while stack:
            for n in self._adj[stack.pop()]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return len(seen) == len(self.viewpoints)

    def check(self, v: str) -> None:
        if v not in self.viewpoints:
            raise UnknownViewpoint(f"unknown viewpoint {v!r}")

    def neighbors(self, v: str) -> tuple[str, ...]:
        self.check(v)
        return self._adj[v]

    def has_edge(self, a: str, b: str) -> bool:
        return a in self._adj and b in self._adj[a]

    def distance(self, a: str, b: str) -> float:
        """Straight-line distance between two viewpoints."""
        pa, pb = self.viewpoints[a], self.viewpoints[b]
        return math.dist(pa, pb)

    def distances_from(self, source: str) -> dict[str, float]:
        self.check(source)
        cached = self._sssp.get(source)
        if cached is not None:
            return cached
        dist = {source: 0.0}
        heap = [(0.0, source)]
        done = set()
        while heap:
            d, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            for n in self._adj[v]:
                nd = d + self.distance(v, n)
                if nd < dist.get(n, math.inf):
                    dist[n] = nd
                    heapq.heappush(heap, (nd, n))
        self._sssp[source] = dist
        return dist


@dataclass(frozen=True)
class Episode:
    id: str
    instruction: str
    start: str
    start_heading: float
    goal: str
    reference_path: tuple[str, ...]


@dataclass(frozen=True)
class DirectionalSector:
    index: int
    name: str
    scene_text: str
    objects_text: str
    navigable: tuple[tuple[str, float, float], ...]
    rendered: str


class _ObservationText:
    @property
    def text(self) -> str:
        return "\n".join([self.scene_summary] + [s.rendered for s in self.sectors])

    @property
    def navigable_ids(self) -> frozenset[str]:
        return frozenset(vp for s in self.sectors for vp, _, _ in s.navigable)


@dataclass(frozen=True)
class Observation(_ObservationText):
    viewpoint: str
    heading: float
    scene_summary: str
    sectors: tuple[DirectionalSector, ...]


@dataclass(frozen=True)
class PrunedObservation(_ObservationText):
    viewpoint: str
    heading: float
    scene_summary: str
    sectors: tuple[DirectionalSector, ...]
    indices: tuple[int, ...]


# ---------------------------------------------------------------- geometry

def geodesic(world: World, a: str, b: str) -> float:
    world.check(a)
    world.check(b)
    if a == b:
        return 0.0
    if a > b:
        # canonical direction keeps the value exactly symmetric
        a, b = b, a
    return world.distances_from(a)[b]


def path_length(world: World, path: Sequence[str]) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        if not world.has_edge(a, b):
            raise NonAdjacentStep(f"{a} -> {b} is not an edge")
        total += world.distance(a, b)
    return total


def bearing(world: World, at: str, target: str) -> float:
    """Compass bearing of target seen from at: degrees clockwise from +y."""
    world.check(at)
    world.check(target)
    (x0, y0, _), (x1, y1, _) = world.viewpoints[at], world.viewpoints[target]
    return _bearing_xy(x1 - x0, y1 - y0)


def _bearing_xy(dx: float, dy: float) -> float:
    if dx == 0.0 and dy == 0.0:
        raise DegeneratePosition("zero horizontal displacement")
    return _wrap(math.degrees(math.atan2(dx, dy)))


def _wrap(deg: float) -> float:
    deg = deg % 360.0
    return 0.0 if deg >= 360.0 else deg


def relative_heading(world: World, at: str, agent_heading: float, target: str) -> float:
    if at == target:
        raise DegeneratePosition("target equals current viewpoint")
    return _wrap(bearing(world, at, target) - agent_heading)


def sector_index(rel_heading: float) -> int:
    # round half up: 22.5 -> 1, 337.5 -> 8 -> 0
    return int(math.floor(rel_heading / 45.0 + 0.5)) % NUM_SECTORS


def bin_directions(world: World, at: str, heading: float) -> list[list[tuple[str, float, float]]]:
    bins: list[list[tuple[str, float, float]]] = [[] for _ in range(NUM_SECTORS)]
    for n in world.neighbors(at):
        try:
            rel = relative_heading(world, at, heading, n)
        except DegeneratePosition:
            rel = 0.0
        bins[sector_index(rel)].append((n, rel, world.distance(at, n)))
    for b in bins:
        b.sort(key=lambda item: (item[2], item[0]))
    return bins


def render_sector(index: int, scene_text: str, objects: Sequence[str],
                  navigable: Sequence[tuple[str, float, float]]) -> str:
    objs = ", ".join(objects) if objects else "none"
    nav = "; ".join(f"{vp} (heading {rel:.0f} deg, distance {d:.1f} m)" for vp, rel, d in navigable)
    return (f"Direction: {SECTOR_NAMES[index]}. Scene: {scene_text}. "
            f"Objects within 3m: {objs}. Navigable: {nav or 'none'}.")


def _scene_text(world: World, navigable) -> str:
    rooms: list[str] = []
    for vp, _, _ in navigable:
        room = world.rooms.get(vp, "room")
        if room not in rooms:
            rooms.append(room)
    if not rooms:
        return "no passage"
    return "passage toward the " + " and the ".join(rooms)


def render_observation(world: World, at: str, heading: float) -> Observation:
    world.check(at)
    bins = bin_directions(world, at, heading)
    here = world.viewpoints[at]
    seen_objects: list[list[tuple[float, str]]] = [[] for _ in range(NUM_SECTORS)]
    for obj in world.objects:
        d = math.dist(here, obj.position)
        if d >= OBJECT_RADIUS:
            continue
        dx, dy = obj.position[0] - here[0], obj.position[1] - here[1]
        k = 0 if dx == 0.0 and dy == 0.0 else sector_index(_wrap(_bearing_xy(dx, dy) - heading))
        seen_objects[k].append((d, obj.name))
    sectors = []
    for k in range(NUM_SECTORS):
        names = [name for _, name in sorted(seen_objects[k])]
        scene = _scene_text(world, bins[k])
        sectors.append(DirectionalSector(
            index=k,
            name=SECTOR_NAMES[k],
            scene_text=scene,
            objects_text=", ".join(names) if names else "none",
            navigable=tuple(bins[k]),
            rendered=render_sector(k, scene, names, bins[k]),
        ))
    return Observation(
        viewpoint=at,
        heading=heading,
        scene_summary=scene_summary(world, at),
        sectors=tuple(sectors),
    )


def scene_summary(world: World, at: str) -> str:
    return f"You are in a {world.rooms.get(at, 'room')}."


def prune(observation: Observation, indices: Iterable[int]) -> PrunedObservation:
    keep = tuple(sorted(set(indices)))
    return PrunedObservation(
        viewpoint=observation.viewpoint,
        heading=observation.heading,
        scene_summary=observation.scene_summary,
        sectors=tuple(observation.sectors[k] for k in keep),
        indices=keep,
    )


def next_hop(world: World, current: str, goal: str, candidates: Iterable[str]) -> str | None:
    """Candidate minimising edge length plus remaining geodesic; ties to the smaller id."""
    scored = [(world.distance(current, n) + geodesic(world, n, goal), n) for n in candidates]
    if not scored:
        return None
    best = min(c for c, _ in scored)
    return min(n for c, n in scored if c <= best + PATH_TOL)


def shortest_path(world: World, a: str, b: str) -> tuple[str, ...]:
    geodesic(world, a, b)
    path = [a]
    while path[-1] != b:
        path.append(next_hop(world, path[-1], b, world.neighbors(path[-1])))
    return tuple(path)


# ---------------------------------------------------------------- generation

@dataclass
class WorldConfig:
    num_viewpoints: int = 100
    width: float = 24.0
    depth: float = 24.0
    height: float = 0.5
    radius: float = 4.0
    num_rooms: int = 6
    objects_per_viewpoint: float = 0.5

    def validate(self) -> None:
        if self.num_viewpoints < 2:
            raise InvalidConfig(f"num_viewpoints must be >= 2 (got {self.num_viewpoints})")
        if not self.radius > 0:
            raise InvalidConfig(f"connection radius must be > 0 (got {self.radius})")
        if self.width <= 0 or self.depth <= 0 or self.height < 0:
            raise InvalidConfig("world box dimensions must be positive")
        if not 1 <= self.num_rooms <= len(ROOM_VOCAB):
            raise InvalidConfig(f"num_rooms must be in 1..{len(ROOM_VOCAB)}")
        if self.objects_per_viewpoint < 0:
            raise InvalidConfig("objects_per_viewpoint must be >= 0")


@dataclass
class EpisodeConfig:
    num_episodes: int = 50
    min_len: float = 8.0
    max_len: float = 20.0


def generate_world(config: WorldConfig, seed: int) -> World:
    config.validate()
    rng = np.random.default_rng(seed)
    n = config.num_viewpoints
    ids = [f"vp{i:03d}" for i in range(n)]
    pos = rng.uniform([0.0, 0.0, 0.0], [config.width, config.depth, config.height], size=(n, 3))
    positions = {v: tuple(float(c) for c in p) for v, p in zip(ids, pos)}

    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(pos[i] - pos[j]) <= config.radius:
                edges.add((ids[i], ids[j]))

    # union-find over radius edges, then bridge components in a random order
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    index = {v: i for i, v in enumerate(ids)}
    for a, b in edges:
        parent[find(index[a])] = find(index[b])
    connected: list[int] = []
    linked_roots: set[int] = set()
    for i in rng.permutation(n):
        root = find(int(i))
        if root in linked_roots:
            continue
        members = [j for j in range(n) if find(j) == root]
        if connected:
            d = np.linalg.norm(pos[members][:, None, :] - pos[connected][None, :, :], axis=-1)
            mi, ci = np.unravel_index(int(np.argmin(d)), d.shape)
            a, b = ids[members[mi]], ids[connected[ci]]
            edges.add((min(a, b), max(a, b)))
        connected.extend(members)
        linked_roots.add(root)

    centers = rng.uniform([0.0, 0.0], [config.width, config.depth], size=(config.num_rooms, 2))
    labels = [ROOM_VOCAB[int(k)] for k in rng.choice(len(ROOM_VOCAB), config.num_rooms, replace=False)]
    rooms = {}
    for v, p in zip(ids, pos):
        rooms[v] = labels[int(np.argmin(np.linalg.norm(centers - p[:2], axis=1)))]

    objects = []
    for _ in range(int(round(config.objects_per_viewpoint * n))):
        anchor = int(rng.integers(n))
        r = rng.uniform(0.3, 1.5)
        theta = rng.uniform(0.0, 2 * math.pi)
        name = OBJECT_VOCAB[int(rng.integers(len(OBJECT_VOCAB)))]
        x, y, z = pos[anchor]
        objects.append(WorldObject(name, (float(x + r * math.cos(theta)), float(y + r * math.sin(theta)), float(z)),
                                   ids[anchor]))
    return World(viewpoints=positions, edges=tuple(sorted(edges)), rooms=rooms, objects=tuple(objects))


def stop_target(world: World, goal: str) -> str:
    here = world.viewpoints[goal]
    near = sorted((math.dist(here, o.position), o.name) for o in world.objects)
    if near and near[0][0] < OBJECT_RADIUS:
        return near[0][1]
    return world.rooms[goal]


def follow_choice(world: World, at: str, heading: float, sector: int,
                  presented: frozenset[str] | None = None) -> str | None:
    """Nearest viewpoint in the named sector (ties to the smaller id)."""
    for vp, _, _ in bin_directions(world, at, heading)[sector]:
        if presented is None or vp in presented:
            return vp
    return None


def _instruction_for(world: World, path: Sequence[str], heading: float) -> str | None:
    clauses = []
    for a, b in zip(path, path[1:]):
        k = sector_index(relative_heading(world, a, heading, b))
        if follow_choice(world, a, heading, k) != b:
            return None
        clauses.append(f"walk {SECTOR_NAMES[k].lower()} to the {world.rooms[b]}")
        heading = bearing(world, a, b)
    clauses.append(f"stop near the {stop_target(world, path[-1])}")
    return ", then ".join(clauses) + "."


def generate_episodes(world: World, config: EpisodeConfig, seed: int) -> list[Episode]:
    if config.min_len > config.max_len or config.num_episodes < 0:
        raise InvalidConfig("episode length band or count invalid")
    rng = np.random.default_rng(seed)
    ids = sorted(world.viewpoints)
    pairs = [(a, b) for a in ids for b in ids
             if a != b and config.min_len <= geodesic(world, a, b) <= config.max_len]
    if not pairs:
        raise NoFeasiblePair(f"no viewpoint pair with geodesic in [{config.min_len}, {config.max_len}] m")
    episodes: list[Episode] = []
    for i in rng.permutation(len(pairs)):
        if len(episodes) >= config.num_episodes:
            break
        start, goal = pairs[int(i)]
        heading = round(float(rng.uniform(0.0, 360.0)), 1) % 360.0
        path = shortest_path(world, start, goal)
        try:
            instruction = _instruction_for(world, path, heading)
        except DegeneratePosition:
            continue
        if instruction is None:
            # reference path not recoverable from its own instruction; resample
            continue
        episodes.append(Episode(
            id=f"ep{len(episodes):03d}",
            instruction=instruction,
            start=start,
            start_heading=heading,
            goal=goal,
            reference_path=path,
        ))
    if not episodes:
        raise NoFeasiblePair("no feasible pair admits an unambiguous instruction")
    return episodes


_CLAUSE = re.compile(r"^walk ([a-z-]+) to the (.+)$")
_SECTOR_BY_NAME = {name.lower(): k for k, name in enumerate(SECTOR_NAMES)}


def parse_instruction(instruction: str) -> list[int | None]:
    """Sector index per walk clause; None marks the stop clause."""
    out: list[int | None] = []
    for clause in instruction.strip().rstrip(".").split(", then "):
        clause = clause.strip().lower()
        m = _CLAUSE.match(clause)
        if m and m.group(1) in _SECTOR_BY_NAME:
            out.append(_SECTOR_BY_NAME[m.group(1)])
        elif clause.startswith("stop"):
            out.append(None)
            break
    return out


def instruction_clauses(instruction: str) -> list[str]:
    return [c.strip() for c in instruction.strip().rstrip(".").split(", then ")]


def validate_episode(world: World, ep: Episode) -> None:
    path = ep.reference_path
    if not path or path[0] != ep.start or path[-1] != ep.goal:
        raise InvalidEpisode(f"{ep.id}: reference path must run from start to goal")
    for v in path:
        if v not in world.viewpoints:
            raise InvalidEpisode(f"{ep.id}: unknown viewpoint {v!r}")
    try:
        length = path_length(world, path)
    except NonAdjacentStep as exc:
        raise InvalidEpisode(f"{ep.id}: {exc}") from exc
    if abs(length - geodesic(world, ep.start, ep.goal)) > PATH_TOL:
        raise InvalidEpisode(f"{ep.id}: reference path is not a geodesic")


# ---------------------------------------------------------------- file format

def world_to_dict(world: World, episodes: Sequence[Episode] = ()) -> dict:
    return {
        "viewpoints": [
            {"id": v, "x": p[0], "y": p[1], "z": p[2], "room": world.rooms[v]}
            for v, p in sorted(world.viewpoints.items())
        ],
        "edges": [list(e) for e in world.edges],
        "objects": [
            {"name": o.name, "x": o.position[0], "y": o.position[1], "z": o.position[2], "near": o.near}
            for o in world.objects
        ],
        "episodes": [
            {"id": e.id, "instruction": e.instruction, "start": e.start, "start_heading": e.start_heading,
             "goal": e.goal, "reference_path": list(e.reference_path)}
            for e in episodes
        ],
    }


def world_from_dict(doc: dict) -> tuple[World, list[Episode]]:
    world = World(
        viewpoints={v["id"]: (float(v["x"]), float(v["y"]), float(v["z"])) for v in doc["viewpoints"]},
        edges=tuple((a, b) for a, b in doc["edges"]),
        rooms={v["id"]: v.get("room", "room") for v in doc["viewpoints"]},
        objects=tuple(WorldObject(o["name"], (float(o["x"]), float(o["y"]), float(o["z"])), o["near"])
                      for o in doc.get("objects", [])),
    )
    episodes = [
        Episode(id=e["id"], instruction=e["instruction"], start=e["start"],
                start_heading=float(e["start_heading"]), goal=e["goal"],
                reference_path=tuple(e["reference_path"]))
        for e in doc.get("episodes", [])
    ]
    for ep in episodes:
        validate_episode(world, ep)
    return world, episodes


def save_world(path: str | Path, world: World, episodes: Sequence[Episode] = ()) -> None:
    Path(path).write_text(json.dumps(world_to_dict(world, episodes), indent=1) + "\n")


def load_world(path: str | Path) -> tuple[World, list[Episode]]:
    return world_from_dict(json.loads(Path(path).read_text()))
