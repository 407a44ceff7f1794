"""Imitation-learned direction scorer used to prune the eight directional candidates."""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderConfig, TextEncoder
from .errors import DimensionMismatch, EmptyDataset, FormatVersionMismatch, InvalidConfig, InvalidEpisode
from .navigator import History, TrajectoryStep, clause_thought, summarize_history
from .optim import AdamW
from .world import (
    NUM_SECTORS,
    Episode,
    Observation,
    PrunedObservation,
    World,
    bearing,
    prune,
    render_observation,
    scene_summary,
    sector_index,
    relative_heading,
    validate_episode,
)

FORMAT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class RetrieverModel:
    encoder_config: EncoderConfig
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float = 0.0

    @property
    def dim(self) -> int:
        return self.encoder_config.dim

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    def check(self) -> None:
        d, h = self.dim, self.hidden
        if self.W1.shape != (h, 2 * d) or self.W2.shape != (h,):
            raise DimensionMismatch(f"W1 {self.W1.shape} / W2 {self.W2.shape} inconsistent with dim={d}, hidden={h}")

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": np.array([self.b2])}

    @classmethod
    def from_params(cls, config: EncoderConfig, p: dict[str, np.ndarray]) -> "RetrieverModel":
        return cls(config, p["W1"].copy(), p["b1"].copy(), p["W2"].copy(), float(np.ravel(p["b2"])[0]))

    @classmethod
    def zeros(cls, config: EncoderConfig | None = None, hidden: int = 128) -> "RetrieverModel":
        config = config or EncoderConfig()
        return cls(config, np.zeros((hidden, 2 * config.dim)), np.zeros(hidden), np.zeros(hidden), 0.0)

    @classmethod
    def xavier(cls, config: EncoderConfig, hidden: int, rng: np.random.Generator) -> "RetrieverModel":
        fan_in = 2 * config.dim
        lim1 = math.sqrt(6.0 / (fan_in + hidden))
        lim2 = math.sqrt(6.0 / (hidden + 1))
        W1 = rng.uniform(-lim1, lim1, size=(hidden, fan_in))
        W2 = rng.uniform(-lim2, lim2, size=hidden)
        return cls(config, W1, np.zeros(hidden), W2, 0.0)


@dataclass(frozen=True)
class TrainingExample:
    context: str
    direction_texts: tuple[str, ...]
    mask: tuple[bool, ...]
    label: int

    def to_dict(self) -> dict:
        return {"context": self.context, "direction_texts": list(self.direction_texts),
                "mask": list(self.mask), "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingExample":
        return cls(d["context"], tuple(d["direction_texts"]), tuple(bool(m) for m in d["mask"]), int(d["label"]))


@dataclass(frozen=True)
class DirectionScores:
    logits: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class PruneSelection:
    indices: tuple[int, ...]


@dataclass
class Hyper:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    hidden: int = 128

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise InvalidConfig("epochs, batch_size and hidden must be >= 1")
        if not self.lr > 0 or self.weight_decay < 0:
            raise InvalidConfig("lr must be > 0 and weight_decay >= 0")


# small step size typical when fine-tuning a pretrained sentence encoder
FINETUNE_PRESET = Hyper(lr=2e-5)


def build_context(instruction: str, history: History) -> str:
    return instruction + "\n" + summarize_history(history)


# ---------------------------------------------------------------- forward / backward

@dataclass
class Features:
    U: np.ndarray      # (B, d) context encodings
    Z: np.ndarray      # (B, 8, d) direction encodings
    mask: np.ndarray   # (B, 8) bool
    y: np.ndarray      # (B,) labels

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "Features":
        return Features(self.U[idx], self.Z[idx], self.mask[idx], self.y[idx])


def featurize(examples: Sequence[TrainingExample], encoder: TextEncoder) -> Features:
    d = encoder.config.dim
    U = np.zeros((len(examples), d))
    Z = np.zeros((len(examples), NUM_SECTORS, d))
    for i, ex in enumerate(examples):
        U[i] = encoder(ex.context)
        for k, text in enumerate(ex.direction_texts):
            if ex.mask[k]:
                Z[i, k] = encoder(text)
    mask = np.array([ex.mask for ex in examples], dtype=bool).reshape(len(examples), NUM_SECTORS)
    y = np.array([ex.label for ex in examples], dtype=np.int64)
    return Features(U, Z, mask, y)


def _forward(model: RetrieverModel, U: np.ndarray, Z: np.ndarray):
    d = model.dim
    pre = (U @ model.W1[:, :d].T)[:, None, :] + Z @ model.W1[:, d:].T + model.b1
    H = np.maximum(pre, 0.0)
    logits = H @ model.W2 + model.b2
    return pre, H, logits


def masked_logits(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, logits, -np.inf)


def loss_and_grad_features(model: RetrieverModel, f: Features) -> tuple[float, dict[str, np.ndarray]]:
    B = len(f)
    d = model.dim
    pre, H, logits = _forward(model, f.U, f.Z)
    z = masked_logits(logits, f.mask)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    loss = -float(np.mean(logp[np.arange(B), f.y]))

    dlog = e / s
    dlog[np.arange(B), f.y] -= 1.0
    dlog /= B                                  # masked entries are exactly 0 already
    dW2 = np.einsum("bk,bkh->h", dlog, H)
    db2 = dlog.sum()
    dpre = dlog[:, :, None] * model.W2 * (pre > 0)
    db1 = dpre.sum(axis=(0, 1))
    dW1 = np.empty_like(model.W1)
    dW1[:, :d] = dpre.sum(axis=1).T @ f.U
    dW1[:, d:] = np.einsum("bkh,bkd->hd", dpre, f.Z)
    return loss, {"W1": dW1, "b1": db1, "W2": dW2, "b2": np.array([db2])}


def loss_and_grad(model: RetrieverModel, batch: Sequence[TrainingExample],
                  encoder: TextEncoder | None = None) -> tuple[float, dict[str, np.ndarray]]:
    if not batch:
        raise EmptyDataset("batch must be non-empty")
    encoder = encoder or TextEncoder(model.encoder_config)
    _check_encoder(model, encoder)
    return loss_and_grad_features(model, featurize(batch, encoder))


def _check_encoder(model: RetrieverModel, encoder: TextEncoder) -> None:
    model.check()
    if encoder.config.dim != model.dim:
        raise DimensionMismatch(f"encoder dim {encoder.config.dim} != model dim {model.dim}")


# ---------------------------------------------------------------- inference

def score_directions(model: RetrieverModel, context: str, observation: Observation,
                     encoder: TextEncoder | None = None) -> DirectionScores:
    encoder = encoder or TextEncoder(model.encoder_config)
    _check_encoder(model, encoder)
    mask = np.array([bool(s.navigable) for s in observation.sectors])
    Z = np.zeros((1, NUM_SECTORS, model.dim))
    for s in observation.sectors:
        if s.navigable:
            Z[0, s.index] = encoder(s.rendered)
    _, _, logits = _forward(model, encoder(context)[None, :], Z)
    return DirectionScores(logits=masked_logits(logits[0], mask), mask=mask)


def select_topk(scores: DirectionScores, k: int = 5) -> PruneSelection:
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    live = [i for i in range(len(scores.logits)) if scores.mask[i]]
    live.sort(key=lambda i: (-scores.logits[i], i))
    return PruneSelection(tuple(sorted(live[:k])))


def prune_observation(observation: Observation, sel: PruneSelection) -> PrunedObservation:
    return prune(observation, sel.indices)


class CandidateRetriever:
    """Model plus encoder bound together for use inside the episode loop."""

    def __init__(self, model: RetrieverModel, encoder: TextEncoder | None = None):
        self.model = model
        self.encoder = encoder or TextEncoder(model.encoder_config)
        _check_encoder(model, self.encoder)

    def select(self, instruction: str, history: History, observation: Observation, k: int) -> PruneSelection:
        scores = score_directions(self.model, build_context(instruction, history), observation, self.encoder)
        return select_topk(scores, k)


# ---------------------------------------------------------------- supervision

def make_training_examples(world: World, episodes: Sequence[Episode]) -> list[TrainingExample]:
    out = []
    for ep in episodes:
        try:
            validate_episode(world, ep)
        except Exception as exc:
            raise InvalidEpisode(str(exc)) from exc
        history = History()
        heading = ep.start_heading
        path = ep.reference_path
        for t, (here, nxt) in enumerate(zip(path, path[1:])):
            obs = render_observation(world, here, heading)
            label = sector_index(relative_heading(world, here, heading, nxt))
            out.append(TrainingExample(
                context=build_context(ep.instruction, history),
                direction_texts=tuple(s.rendered if s.navigable else "" for s in obs.sectors),
                mask=tuple(bool(s.navigable) for s in obs.sectors),
                label=label,
            ))
            history.append(TrajectoryStep(
                index=t,
                viewpoint_before=here,
                action=nxt,
                thought=clause_thought(ep.instruction, t),
                observation_summary=scene_summary(world, nxt),
            ))
            heading = bearing(world, here, nxt)
    return out


def train_retriever(dataset: Sequence[TrainingExample] | Features, hyper: Hyper | None = None, seed: int = 0,
                    encoder: TextEncoder | None = None) -> tuple[RetrieverModel, list[float]]:
    hyper = hyper or Hyper()
    hyper.validate()
    encoder = encoder or TextEncoder()
    if len(dataset) == 0:
        raise EmptyDataset("training set is empty")
    feats = dataset if isinstance(dataset, Features) else featurize(dataset, encoder)
    rng = np.random.default_rng(seed)
    model = RetrieverModel.xavier(encoder.config, hyper.hidden, rng)
    params = model.params()
    opt = AdamW(params, lr=hyper.lr, betas=hyper.betas, eps=hyper.eps, weight_decay=hyper.weight_decay)
    n = len(feats)
    curve = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, grads = loss_and_grad_features(_view(encoder.config, params), feats.take(idx))
            opt.step(grads)
            total += loss * len(idx)
        curve.append(total / n)
    return RetrieverModel.from_params(encoder.config, params), curve


def _view(config: EncoderConfig, p: dict[str, np.ndarray]) -> RetrieverModel:
    return RetrieverModel(config, p["W1"], p["b1"], p["W2"], float(p["b2"][0]))


def direction_accuracy(model: RetrieverModel, data: Sequence[TrainingExample] | Features, k: int = 5,
                       encoder: TextEncoder | None = None) -> tuple[float, float]:
    """Top-1 accuracy and recall@k of the labelled direction."""
    encoder = encoder or TextEncoder(model.encoder_config)
    f = data if isinstance(data, Features) else featurize(data, encoder)
    if len(f) == 0:
        return float("nan"), float("nan")
    _, _, logits = _forward(model, f.U, f.Z)
    z = masked_logits(logits, f.mask)
    top1 = hits = 0
    for i in range(len(f)):
        sel = select_topk(DirectionScores(z[i], f.mask[i]), k).indices
        hits += int(f.y[i]) in sel
        top1 += int(f.y[i]) in select_topk(DirectionScores(z[i], f.mask[i]), 1).indices
    return top1 / len(f), hits / len(f)


# ---------------------------------------------------------------- persistence

def save_model(model: RetrieverModel, path: str | Path) -> None:
    model.check()
    header = {"version": FORMAT_VERSION, "dim": model.dim, "hidden": model.hidden,
              "encoder_config": model.encoder_config.to_dict()}
    lines = [json.dumps(header, sort_keys=True)]
    for name, arr in model.params().items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        lines.append(base64.b64encode(raw).decode("ascii"))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path, encoder_config: EncoderConfig | None = None) -> RetrieverModel:
    text = Path(path).read_text()
    lines = text.split("\n")
    try:
        header = json.loads(lines[0])
    except (json.JSONDecodeError, IndexError) as exc:
        raise FormatVersionMismatch(f"{path}: unreadable model header") from exc
    if not isinstance(header, dict) or header.get("version") != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: expected model format version {FORMAT_VERSION}")
    try:
        config = EncoderConfig.from_dict(header["encoder_config"])
        dim, hidden = int(header["dim"]), int(header["hidden"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatVersionMismatch(f"{path}: malformed model header") from exc
    if dim != config.dim:
        raise DimensionMismatch(f"{path}: header dim {dim} != encoder dim {config.dim}")
    if encoder_config is not None and encoder_config.dim != dim:
        raise DimensionMismatch(f"{path}: model dim {dim} != expected encoder dim {encoder_config.dim}")
    shapes = {"W1": (hidden, 2 * dim), "b1": (hidden,), "W2": (hidden,), "b2": (1,)}
    if len(lines) < 1 + len(PARAM_NAMES):
        raise FormatVersionMismatch(f"{path}: truncated model file")
    params = {}
    for name, line in zip(PARAM_NAMES, lines[1:]):
        try:
            raw = base64.b64decode(line.strip(), validate=True)
        except ValueError as exc:
            raise FormatVersionMismatch(f"{path}: corrupt array {name}") from exc
        arr = np.frombuffer(raw, dtype="<f8")
        if arr.size != math.prod(shapes[name]):
            raise FormatVersionMismatch(f"{path}: array {name} has {arr.size} values, expected {shapes[name]}")
        params[name] = arr.astype(np.float64).reshape(shapes[name])
    model = RetrieverModel.from_params(config, params)
    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise FormatVersionMismatch(f"{path}: non-finite parameters")
    return model


def save_examples(examples: Sequence[TrainingExample], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict()) + "\n")


def load_examples(path: str | Path) -> list[TrainingExample]:
    with open(path) as fh:
        return [TrainingExample.from_dict(json.loads(line)) for line in fh if line.strip()]
