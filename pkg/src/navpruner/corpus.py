"""Seeded synthetic corpora used by the experiments and the acceptance suite."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .encoder import TextEncoder
from .evaluation import RunConfig, run_split
from .retriever import Hyper, RetrieverModel, TrainingExample, direction_accuracy, make_training_examples, train_retriever
from .world import Episode, EpisodeConfig, World, WorldConfig, generate_episodes, generate_world

# 20 worlds x 50 episodes; worlds 0..15 train the retriever, 16..19 are held out
REFERENCE_SEEDS = tuple(range(20))
REFERENCE_TRAIN_SEEDS = REFERENCE_SEEDS[:16]
REFERENCE_HELDOUT_SEEDS = REFERENCE_SEEDS[16:]
# disjoint worlds for closed-loop evaluation
EVAL_SEED_BASE = 1000


@dataclass
class Corpus:
    world_config: WorldConfig = field(default_factory=WorldConfig)
    episode_config: EpisodeConfig = field(default_factory=EpisodeConfig)

    def world(self, seed: int) -> tuple[World, list[Episode]]:
        w = generate_world(self.world_config, seed)
        return w, generate_episodes(w, self.episode_config, seed)

    def worlds(self, seeds) -> list[tuple[World, list[Episode]]]:
        return [self.world(s) for s in seeds]

    def examples(self, seeds) -> list[TrainingExample]:
        out = []
        for w, eps in self.worlds(seeds):
            out.extend(make_training_examples(w, eps))
        return out


def reference_retriever(hyper: Hyper | None = None, seed: int = 0,
                        encoder: TextEncoder | None = None) -> tuple[RetrieverModel, list[float]]:
    """Retriever trained with default settings on the reference training worlds."""
    return train_retriever(Corpus().examples(REFERENCE_TRAIN_SEEDS), hyper or Hyper(), seed, encoder or TextEncoder())


def heldout_accuracy(model: RetrieverModel, k: int = 5, encoder: TextEncoder | None = None) -> tuple[float, float]:
    """(top-1, recall@k) of `model` on the held-out reference worlds."""
    return direction_accuracy(model, Corpus().examples(REFERENCE_HELDOUT_SEEDS), k, encoder or TextEncoder())


def two_proportion_z(success_a: int, n_a: int, success_b: int, n_b: int) -> tuple[float, float]:
    """Pooled z statistic for p_a > p_b and its one-sided p-value."""
    pooled = (success_a + success_b) / (n_a + n_b)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n_a + 1 / n_b))
    if se == 0.0:
        return 0.0, 0.5
    z = (success_a / n_a - success_b / n_b) / se
    return z, 0.5 * math.erfc(z / math.sqrt(2))


@dataclass
class PruningComparison:
    n: int
    sr_baseline: float
    sr_pruned: float
    z: float
    p_value: float


def pruning_benefit(model: RetrieverModel, num_worlds: int = 400, epsilon: float = 0.5, prune_k: int = 5,
                    seed: int = 0, jobs: int = 1) -> PruningComparison:
    """Follower SR with and without top-k pruning on fresh evaluation worlds."""
    corpus = Corpus()
    worlds = corpus.worlds(range(EVAL_SEED_BASE, EVAL_SEED_BASE + num_worlds))
    # ids must be unique across worlds
    worlds = [(w, [dataclasses.replace(e, id=f"w{i:04d}/{e.id}") for e in eps]) for i, (w, eps) in enumerate(worlds)]
    spec = f"follower:{epsilon}"
    cfg = RunConfig(prune_k=prune_k, seed=seed)
    base = run_split(None, spec, cfg, parallelism=jobs, worlds=worlds).report
    pruned = run_split(None, spec, cfg, parallelism=jobs, retriever=model, worlds=worlds).report
    n = base.aggregate["n"]
    s_base = sum(e.success for e in base.episodes)
    s_pruned = sum(e.success for e in pruned.episodes)
    z, p = two_proportion_z(s_pruned, n, s_base, n)
    return PruningComparison(n, 100.0 * s_base / n, 100.0 * s_pruned / n, z, p)
