"""Exemplar memory of successful trajectories, retrieved by instruction similarity."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderConfig, TextEncoder, cosine_sim
from .errors import DimensionMismatch, InvalidConfig, NotSuccessful
from .navigator import render_step
from .world import World

DEFAULT_CAP = 20
DEFAULT_K = 3


@dataclass(frozen=True)
class ExemplarRecord:
    instruction: str
    trace: str
    embedding: np.ndarray = field(compare=False)
    source_episode_id: str

    def to_dict(self) -> dict:
        return {"instruction": self.instruction, "trace": self.trace,
                "embedding": [float(x) for x in self.embedding], "source_episode_id": self.source_episode_id}


@dataclass
class ExemplarMemory:
    records: list[ExemplarRecord] = field(default_factory=list)
    encoder_config: EncoderConfig = field(default_factory=EncoderConfig)

    def __len__(self) -> int:
        return len(self.records)


def render_trace(steps) -> str:
    return "\n".join(render_step(s) for s in steps)


def build_memory(trajectories: Sequence, world: World | dict[str, World], cap: int = DEFAULT_CAP,
                 encoder: TextEncoder | None = None, success_radius: float = 3.0) -> ExemplarMemory:
    """Turn the first `cap` successful trajectories into exemplar records.

    `world` may be a single World or a mapping from episode id to its World when
    trajectories come from several worlds.
    """
    from .evaluation import is_success

    if cap < 0:
        raise InvalidConfig("cap must be >= 0")
    encoder = encoder or TextEncoder()
    for tr in trajectories:
        w = world[tr.episode_id] if isinstance(world, dict) else world
        if not is_success(tr, w, success_radius):
            raise NotSuccessful(f"trajectory {tr.episode_id} did not succeed")
    records = []
    for tr in trajectories[:cap]:
        trace = render_trace(tr.steps)
        if not trace:
            raise NotSuccessful(f"trajectory {tr.episode_id} has an empty trace")
        records.append(ExemplarRecord(tr.instruction, trace, encoder(tr.instruction), tr.episode_id))
    return ExemplarMemory(records, encoder.config)


def retrieve_exemplars(memory: ExemplarMemory, instruction: str, k: int = DEFAULT_K,
                       encoder: TextEncoder | None = None) -> list[ExemplarRecord]:
    if k < 0:
        raise InvalidConfig("k must be >= 0")
    encoder = encoder or TextEncoder(memory.encoder_config)
    q = encoder(instruction)
    # bag-of-ngrams can map reordered instructions to one vector; an exact string match wins such ties
    ranked = sorted(enumerate(memory.records),
                    key=lambda ir: (-cosine_sim(q, ir[1].embedding), ir[1].instruction != instruction, ir[0]))
    return [rec for _, rec in ranked[:k]]


def format_examples_block(records: Sequence[ExemplarRecord]) -> str:
    return "\n\n".join(f"Example {i}:\nInstruction: {r.instruction}\n{r.trace}"
                       for i, r in enumerate(records, 1))


def save_memory(memory: ExemplarMemory, path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in memory.records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def load_memory(path: str | Path, encoder_config: EncoderConfig | None = None) -> ExemplarMemory:
    config = encoder_config or EncoderConfig()
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            emb = np.asarray(d["embedding"], dtype=np.float64)
            if emb.shape != (config.dim,):
                raise DimensionMismatch(f"{path}:{lineno}: embedding dim {emb.size} != {config.dim}")
            records.append(ExemplarRecord(d["instruction"], d["trace"], emb, d["source_episode_id"]))
    return ExemplarMemory(records, config)
