"""Agent state, history scratchpad, prompt assembly and the built-in policies."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import InvalidConfig
from .world import (
    Episode,
    Observation,
    PrunedObservation,
    World,
    instruction_clauses,
    next_hop,
    parse_instruction,
)

FINISHED = "finished"
DEFAULT_WINDOW = 5

SYSTEM_RULES = """\
You are a navigation agent moving through an indoor environment on a graph of viewpoints.
1. Follow the instruction step by step; each clause describes one move or the final stop.
2. The observation lists up to eight directions relative to your current heading. Each direction
   names the viewpoints you can move to, with their relative heading and distance.
3. To move, answer with exactly one viewpoint ID listed under Navigable in the observation.
4. When you believe you have reached the destination, answer with finished.
5. Think briefly before acting. Reply with a Thought line followed by an Action line."""


@dataclass(frozen=True)
class TrajectoryStep:
    index: int
    viewpoint_before: str
    action: str
    thought: str | None
    observation_summary: str
    selection: tuple[int, ...] | None = None


@dataclass
class History:
    """Append-only record of executed steps; the prompt shows only the last `window`."""

    steps: list[TrajectoryStep] = field(default_factory=list)
    window: int = DEFAULT_WINDOW

    def append(self, step: TrajectoryStep) -> None:
        if step.index != len(self.steps):
            raise ValueError(f"step index {step.index} breaks contiguity (expected {len(self.steps)})")
        self.steps.append(step)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class AgentState:
    instruction: str
    observation: Observation | PrunedObservation
    history: History
    prompt: str = ""

    @property
    def step(self) -> int:
        return len(self.history)


@dataclass(frozen=True)
class Decision:
    action: str
    thought: str | None = None


class Policy(Protocol):
    def act(self, state: AgentState) -> Decision: ...

    def close(self) -> None: ...


def render_step(step: TrajectoryStep) -> str:
    return (f"Thought: {step.thought or '-'}\n"
            f"Action: {step.action}\n"
            f"Observation: {step.observation_summary}")


def summarize_history(history: History) -> str:
    if history.window <= 0:
        return ""
    return "\n".join(render_step(s) for s in history.steps[-history.window:])


def build_prompt(system_rules: str, examples_block: str, instruction: str,
                 observation: Observation | PrunedObservation, history: History) -> str:
    sections = [("Rules", system_rules)]
    if examples_block:
        sections.append(("Examples", examples_block))
    sections += [
        ("Instruction", instruction),
        ("Observation", observation.text),
        ("History", summarize_history(history)),
    ]
    return "\n\n".join(f"### {title}\n{body}" for title, body in sections)


def clause_thought(instruction: str, step: int) -> str:
    """Progress-and-plan thought for the walk clause executed at `step`."""
    clauses = instruction_clauses(instruction)
    if step >= len(clauses) or not clauses[step].startswith("walk "):
        return "The instruction says to stop here."
    _, sector, _, _, *room = clauses[step].split()
    after = clauses[step + 1].split() if step + 1 < len(clauses) else ["stop"]
    plan = f"then {after[1]}" if after[0] == "walk" and len(after) > 1 else "then stop"
    return f"Going {sector} to the {' '.join(room)}, {plan}."


def episode_rng(global_seed: int, episode_id: str) -> np.random.Generator:
    digest = hashlib.blake2b(episode_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([int(global_seed), int.from_bytes(digest, "little")])


class OraclePolicy:
    """Shortest-path follower over the presented candidates; stops exactly at the goal."""

    def __init__(self, world: World, goal: str):
        self.world = world
        self.goal = goal

    def act(self, state: AgentState) -> Decision:
        here = state.observation.viewpoint
        if here == self.goal:
            return Decision(FINISHED, "I have reached the goal.")
        presented = sorted(state.observation.navigable_ids)
        if not presented:
            return Decision(FINISHED, "Forced stop: no candidate direction was presented.")
        nxt = next_hop(self.world, here, self.goal, presented)
        return Decision(nxt, clause_thought(state.instruction, state.step))

    def close(self) -> None:
        pass


class FollowerPolicy:
    """Grammar-parsing instruction follower with epsilon-random exploration."""

    def __init__(self, epsilon: float, rng: np.random.Generator):
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidConfig(f"epsilon must be in [0, 1] (got {epsilon})")
        self.epsilon = epsilon
        self.rng = rng
        self._parsed: tuple[str, list] | None = None

    def _clauses(self, instruction: str) -> list:
        if self._parsed is None or self._parsed[0] != instruction:
            self._parsed = (instruction, parse_instruction(instruction))
        return self._parsed[1]

    def act(self, state: AgentState) -> Decision:
        clauses = self._clauses(state.instruction)
        t = state.step
        if t >= len(clauses) or clauses[t] is None:
            return Decision(FINISHED, "The instruction says to stop here.")
        thought = clause_thought(state.instruction, t)
        explore = self.rng.random() < self.epsilon
        if not explore:
            for sector in state.observation.sectors:
                if sector.index == clauses[t] and sector.navigable:
                    return Decision(sector.navigable[0][0], thought)
        presented = sorted(state.observation.navigable_ids)
        if not presented:
            return Decision(FINISHED, "Nothing to move to.")
        return Decision(presented[int(self.rng.integers(len(presented)))], thought)

    def close(self) -> None:
        pass


def parse_policy_spec(spec: str) -> tuple[str, str]:
    kind, _, arg = spec.partition(":")
    if kind == "oracle" and not arg:
        return kind, ""
    if kind == "follower":
        try:
            eps = float(arg or "0")
        except ValueError:
            raise InvalidConfig(f"bad follower epsilon in {spec!r}") from None
        if not 0.0 <= eps <= 1.0:
            raise InvalidConfig(f"follower epsilon must be in [0, 1] (got {eps})")
        return kind, arg or "0"
    if kind == "remote" and arg:
        return kind, arg
    raise InvalidConfig(f"unknown policy spec {spec!r} (use oracle, follower:<eps>, remote:<endpoint>)")


def make_policy(spec: str, world: World, episode: Episode, global_seed: int = 0, timeout: float = 60.0):
    kind, arg = parse_policy_spec(spec)
    if kind == "oracle":
        return OraclePolicy(world, episode.goal)
    if kind == "follower":
        return FollowerPolicy(float(arg), episode_rng(global_seed, episode.id))
    from .remote import RemotePolicy

    return RemotePolicy(arg, episode_id=episode.id, timeout=timeout)

