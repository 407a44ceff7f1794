"""Deterministic signed feature-hashing text encoder (word unigrams + bigrams)."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch

_TOKEN = re.compile(r"[a-z0-9]+(?:[-'][a-z0-9]+)*")


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 256
    ngrams: tuple[int, ...] = (1, 2)
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ngrams"] = list(self.ngrams)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(dim=int(d["dim"]), ngrams=tuple(int(n) for n in d["ngrams"]), seed=int(d["seed"]))


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def features(text: str, ngrams=(1, 2)) -> list[str]:
    toks = tokenize(text)
    out = []
    for n in ngrams:
        out.extend(" ".join(toks[i:i + n]) for i in range(len(toks) - n + 1))
    return out


@lru_cache(maxsize=1 << 16)
def _slot(feature: str, dim: int, seed: int) -> tuple[int, float]:
    key = seed.to_bytes(8, "little", signed=True)
    raw = feature.encode("utf-8")
    bucket = int.from_bytes(hashlib.blake2b(raw, digest_size=8, key=key, person=b"bucket").digest(), "little")
    sign = hashlib.blake2b(raw, digest_size=1, key=key, person=b"sign").digest()[0] & 1
    return bucket % dim, (1.0 if sign else -1.0)


def hash_encode(text: str, config: EncoderConfig) -> np.ndarray:
    vec = np.zeros(config.dim)
    for feat in features(text, config.ngrams):
        idx, sign = _slot(feat, config.dim, config.seed)
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    # signed collisions can cancel a non-empty text to zero; keep it zero then
    return vec / norm if norm > 0 else vec


@dataclass
class TextEncoder:
    """Hashing encoder with an optional table of precomputed embeddings consulted first."""

    config: EncoderConfig = field(default_factory=EncoderConfig)
    overrides: dict[str, np.ndarray] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, text: str) -> np.ndarray:
        hit = self._cache.get(text)
        if hit is None:
            if text in self.overrides:
                hit = self.overrides[text]
            else:
                hit = hash_encode(text, self.config)
            hit.setflags(write=False)
            if len(self._cache) < 200_000:
                self._cache[text] = hit
        return hit

    def encode_many(self, texts) -> np.ndarray:
        return np.stack([self(t) for t in texts]) if texts else np.zeros((0, self.config.dim))

    @classmethod
    def with_embedding_file(cls, path: str | Path, config: EncoderConfig | None = None) -> "TextEncoder":
        config = config or EncoderConfig()
        table = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                vec = np.asarray(rec["embedding"], dtype=np.float64)
                if vec.shape != (config.dim,):
                    raise DimensionMismatch(
                        f"{path}:{lineno}: embedding has {vec.size} values, encoder dim is {config.dim}")
                table[rec["text"]] = vec
        return cls(config=config, overrides=table)


_default = TextEncoder()


def encode_text(text: str, encoder: TextEncoder | None = None) -> np.ndarray:
    return (encoder or _default)(text)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
