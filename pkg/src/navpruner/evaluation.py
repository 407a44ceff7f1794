"""Closed-loop episode runner, R2R-style metrics and split-level reporting."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .encoder import TextEncoder
from .errors import DegeneratePosition, InvalidAction, InvalidConfig, Misalignment, NavError
from .exemplars import ExemplarMemory, format_examples_block, retrieve_exemplars
from .navigator import (
    FINISHED,
    SYSTEM_RULES,
    AgentState,
    History,
    TrajectoryStep,
    build_prompt,
    make_policy,
    parse_policy_spec,
)
from .retriever import CandidateRetriever, RetrieverModel
from .world import Episode, World, bearing, geodesic, load_world, path_length, prune, render_observation, scene_summary

log = logging.getLogger(__name__)

SUCCESS_RADIUS = 3.0
CSV_COLUMNS = ("episode_id", "steps", "tl_m", "ne", "success", "oracle_success", "spl", "termination_reason")


@dataclass
class RunConfig:
    max_steps: int = 20
    prune_k: int = 5
    exemplar_k: int = 3
    success_radius: float = SUCCESS_RADIUS
    history_window: int = 5
    seed: int = 0
    timeout: float = 60.0

    def validate(self) -> None:
        if self.max_steps < 1:
            raise InvalidConfig("max_steps must be >= 1")
        if not 1 <= self.prune_k <= 8:
            raise InvalidConfig("prune_k must be in 1..8")
        if self.exemplar_k < 0:
            raise InvalidConfig("exemplar_k must be >= 0")


@dataclass
class TrajectoryResult:
    episode_id: str
    instruction: str
    start: str
    goal: str
    path: list[str]
    steps: list[TrajectoryStep]
    terminated_with_finished: bool
    termination_reason: str
    exemplar_ids: tuple[str, ...] = ()

    def action_log(self) -> str:
        """Canonical JSON of what the agent did; excludes retriever bookkeeping."""
        return json.dumps({
            "episode_id": self.episode_id,
            "path": self.path,
            "steps": [[s.index, s.viewpoint_before, s.action, s.thought, s.observation_summary]
                      for s in self.steps],
            "termination_reason": self.termination_reason,
        })

    def trace_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "path": self.path,
            "termination_reason": self.termination_reason,
            "exemplars": list(self.exemplar_ids),
            "steps": [
                {"index": s.index, "viewpoint_before": s.viewpoint_before, "action": s.action,
                 "thought": s.thought, "observation": s.observation_summary,
                 "selection": list(s.selection) if s.selection is not None else None}
                for s in self.steps
            ],
        }


def run_episode(world: World, episode: Episode, policy, retriever: RetrieverModel | CandidateRetriever | None = None,
                memory: ExemplarMemory | None = None, cfg: RunConfig | None = None,
                encoder: TextEncoder | None = None) -> TrajectoryResult:
    cfg = cfg or RunConfig()
    cfg.validate()
    if isinstance(retriever, RetrieverModel):
        retriever = CandidateRetriever(retriever, encoder)

    examples_block, exemplar_ids = "", ()
    if memory is not None:
        records = retrieve_exemplars(memory, episode.instruction, cfg.exemplar_k, encoder)
        examples_block = format_examples_block(records)
        exemplar_ids = tuple(r.source_episode_id for r in records)

    history = History(window=cfg.history_window)
    here, heading = episode.start, episode.start_heading
    path = [here]
    finished = False
    reason = "step_cap"
    for t in range(cfg.max_steps):
        obs = render_observation(world, here, heading)
        if retriever is not None:
            selection = retriever.select(episode.instruction, history, obs, cfg.prune_k).indices
            presented = prune(obs, selection)
        else:
            selection, presented = None, obs
        prompt = build_prompt(SYSTEM_RULES, examples_block, episode.instruction, presented, history)
        state = AgentState(episode.instruction, presented, history, prompt)
        try:
            decision = policy.act(state)
            if decision.action != FINISHED and decision.action not in presented.navigable_ids:
                raise InvalidAction(f"{decision.action!r} is not among the presented viewpoints")
        except NavError as exc:
            reason = f"error({type(exc).__name__}: {exc})"
            break
        if decision.action == FINISHED:
            history.append(TrajectoryStep(t, here, FINISHED, decision.thought, "Stopped.", selection))
            finished, reason = True, "finished"
            break
        nxt = decision.action
        try:
            heading = bearing(world, here, nxt)
        except DegeneratePosition:
            pass
        history.append(TrajectoryStep(t, here, nxt, decision.thought, scene_summary(world, nxt), selection))
        path.append(nxt)
        here = nxt
    return TrajectoryResult(
        episode_id=episode.id,
        instruction=episode.instruction,
        start=episode.start,
        goal=episode.goal,
        path=path,
        steps=list(history.steps),
        terminated_with_finished=finished,
        termination_reason=reason,
        exemplar_ids=exemplar_ids,
    )


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class EpisodeMetrics:
    episode_id: str
    steps: int
    tl_m: float
    ne: float
    success: bool
    oracle_success: bool
    spl: float
    termination_reason: str


@dataclass
class MetricsReport:
    episodes: list[EpisodeMetrics]
    aggregate: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"aggregate": self.aggregate, "episodes": [dataclasses.asdict(e) for e in self.episodes]}
        doc.update(self.extra)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for e in self.episodes:
            w.writerow([e.episode_id, e.steps, repr(e.tl_m), repr(e.ne), int(e.success), int(e.oracle_success),
                        repr(e.spl), e.termination_reason])
        return buf.getvalue()


def is_success(result: TrajectoryResult, world: World, radius: float = SUCCESS_RADIUS) -> bool:
    return result.terminated_with_finished and geodesic(world, result.path[-1], result.goal) < radius


def spl_value(success: bool, shortest: float, taken: float) -> float:
    if not success:
        return 0.0
    if shortest == 0.0:
        return 1.0
    return shortest / max(shortest, taken)


def episode_metrics(result: TrajectoryResult, world: World, episode: Episode,
                    radius: float = SUCCESS_RADIUS) -> EpisodeMetrics:
    if result.episode_id != episode.id:
        raise Misalignment(f"result {result.episode_id!r} does not match episode {episode.id!r}")
    tl = path_length(world, result.path)
    ne = geodesic(world, result.path[-1], episode.goal)
    success = result.terminated_with_finished and ne < radius
    oracle = any(geodesic(world, v, episode.goal) < radius for v in result.path)
    shortest = geodesic(world, episode.start, episode.goal)
    return EpisodeMetrics(result.episode_id, len(result.path) - 1, tl, ne, success, oracle,
                          spl_value(success, shortest, tl), result.termination_reason)


def aggregate(per_episode: Sequence[EpisodeMetrics]) -> dict:
    n = len(per_episode)
    if n == 0:
        return {"n": 0, "TL": None, "steps": None, "NE": None, "SR": None, "OSR": None, "SPL": None}
    return {
        "n": n,
        "TL": math.fsum(e.tl_m for e in per_episode) / n,
        "steps": sum(e.steps for e in per_episode) / n,
        "NE": math.fsum(e.ne for e in per_episode) / n,
        "SR": 100.0 * sum(e.success for e in per_episode) / n,
        "OSR": 100.0 * sum(e.oracle_success for e in per_episode) / n,
        "SPL": math.fsum(e.spl for e in per_episode) / n,
    }


def compute_metrics(results: Sequence[TrajectoryResult], world: World, episodes: Sequence[Episode],
                    cfg: RunConfig | None = None) -> MetricsReport:
    cfg = cfg or RunConfig()
    if len(results) != len(episodes):
        raise Misalignment(f"{len(results)} results for {len(episodes)} episodes")
    per = [episode_metrics(r, world, e, cfg.success_radius) for r, e in zip(results, episodes)]
    per.sort(key=lambda m: m.episode_id)
    return MetricsReport(per, aggregate(per))


# ---------------------------------------------------------------- splits

@dataclass
class SplitResult:
    report: MetricsReport
    results: list[TrajectoryResult]
    warnings: list[str]


_WORKER: dict = {}


def _init_worker(state: dict) -> None:
    _WORKER.clear()
    _WORKER.update(state)


def _run_task(task: tuple[int, int]) -> tuple[TrajectoryResult, EpisodeMetrics]:
    wi, ei = task
    world, episodes = _WORKER["worlds"][wi]
    ep = episodes[ei]
    cfg = _WORKER["cfg"]
    encoder = _WORKER.get("encoder")
    retriever = _WORKER.get("retriever")
    if retriever is not None and not isinstance(retriever, CandidateRetriever):
        retriever = _WORKER["retriever"] = CandidateRetriever(retriever, encoder)
    policy = make_policy(_WORKER["policy_spec"], world, ep, cfg.seed, cfg.timeout)
    try:
        result = run_episode(world, ep, policy, retriever, _WORKER.get("memory"), cfg, encoder)
    finally:
        policy.close()
    return result, episode_metrics(result, world, ep, cfg.success_radius)


def load_split(world_files: Sequence[str | Path]) -> tuple[list[tuple[World, list[Episode]]], list[str]]:
    """Load world files, qualifying episode ids by file stem when several files are given."""
    loaded, warnings = [], []
    for path in world_files:
        try:
            world, episodes = load_world(path)
        except (OSError, ValueError, KeyError, TypeError, NavError) as exc:
            msg = f"skipping {path}: {exc}"
            log.warning(msg)
            warnings.append(msg)
            continue
        if len(world_files) > 1:
            stem = Path(path).stem
            episodes = [dataclasses.replace(e, id=f"{stem}/{e.id}") for e in episodes]
        loaded.append((world, episodes))
    ids = [e.id for _, eps in loaded for e in eps]
    if len(ids) != len(set(ids)):
        raise Misalignment("duplicate episode ids across world files")
    return loaded, warnings


def run_split(world_files: Sequence[str | Path] | None, policy_spec: str, cfg: RunConfig | None = None,
              parallelism: int = 1, retriever: RetrieverModel | None = None,
              memory: ExemplarMemory | None = None, encoder: TextEncoder | None = None,
              worlds: list[tuple[World, list[Episode]]] | None = None) -> SplitResult:
    cfg = cfg or RunConfig()
    cfg.validate()
    parse_policy_spec(policy_spec)
    warnings: list[str] = []
    if worlds is None:
        worlds, warnings = load_split(world_files or [])
    state = {"worlds": worlds, "cfg": cfg, "policy_spec": policy_spec, "retriever": retriever,
             "memory": memory, "encoder": encoder}
    tasks = [(wi, ei) for wi, (_, eps) in enumerate(worlds) for ei in range(len(eps))]
    if parallelism <= 1 or len(tasks) <= 1:
        _init_worker(state)
        outputs = [_run_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (parallelism * 4))
        with ProcessPoolExecutor(parallelism, initializer=_init_worker, initargs=(state,)) as pool:
            outputs = list(pool.map(_run_task, tasks, chunksize=chunk))
    outputs.sort(key=lambda rm: rm[0].episode_id)
    results = [r for r, _ in outputs]
    per = [m for _, m in outputs]
    extra = {}
    if memory is not None:
        usage = Counter(i for r in results for i in r.exemplar_ids)
        extra["exemplar_usage"] = dict(sorted(usage.items()))
    report = MetricsReport(per, aggregate(per), extra)
    return SplitResult(report, results, warnings)


def write_report(split: SplitResult, out_prefix: str | Path) -> list[Path]:
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = [Path(f"{out_prefix}{ext}") for ext in (".json", ".csv", ".trace.jsonl")]
    paths[0].write_text(split.report.to_json())
    paths[1].write_text(split.report.to_csv())
    with open(paths[2], "w") as fh:
        for r in split.results:
            fh.write(json.dumps(r.trace_dict()) + "\n")
    return paths
