import hashlib
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from navpruner.encoder import EncoderConfig, TextEncoder, cosine_sim, encode_text, features, hash_encode, tokenize
from navpruner.errors import DimensionMismatch

words = st.lists(st.sampled_from(["walk", "left", "to", "the", "kitchen", "stop", "near", "sofa", "rear-right"]),
                 min_size=1, max_size=12)


def test_tokenize_lowercases_and_keeps_hyphens():
    assert tokenize("Walk Front-Left to the kitchen, then STOP.") == \
        ["walk", "front-left", "to", "the", "kitchen", "then", "stop"]
    assert features("a b c") == ["a", "b", "c", "a b", "b c"]


def test_slots_follow_keyed_blake2b():
    # independent recomputation of one feature's bucket and sign
    key = (0).to_bytes(8, "little", signed=True)
    bucket = int.from_bytes(hashlib.blake2b(b"kitchen", digest_size=8, key=key, person=b"bucket").digest(),
                            "little") % 256
    sign = 1.0 if hashlib.blake2b(b"kitchen", digest_size=1, key=key, person=b"sign").digest()[0] & 1 else -1.0
    v = hash_encode("kitchen", EncoderConfig())
    expected = np.zeros(256)
    expected[bucket] = sign
    np.testing.assert_array_equal(v, expected)


def test_empty_text_is_zero_vector():
    v = encode_text("")
    assert v.shape == (256,) and not v.any()
    assert cosine_sim(v, encode_text("kitchen")) == 0.0


@given(words)
def test_unit_norm_and_determinism(ws):
    text = " ".join(ws)
    a = hash_encode(text, EncoderConfig())
    b = TextEncoder()(text)
    np.testing.assert_array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0) or not a.any()


@given(words, st.randoms())
def test_unigram_encoding_ignores_order(ws, rnd):
    shuffled = list(ws)
    rnd.shuffle(shuffled)
    cfg = EncoderConfig(ngrams=(1,))
    np.testing.assert_allclose(hash_encode(" ".join(ws), cfg), hash_encode(" ".join(shuffled), cfg))


@given(words, words)
def test_cosine_bounds_and_self_similarity(a, b):
    va, vb = encode_text(" ".join(a)), encode_text(" ".join(b))
    assert -1.0 <= cosine_sim(va, vb) <= 1.0
    if va.any():
        assert cosine_sim(va, va) == pytest.approx(1.0, abs=1e-12)


def test_seed_changes_hashing():
    a = hash_encode("walk left to the kitchen", EncoderConfig(seed=0))
    b = hash_encode("walk left to the kitchen", EncoderConfig(seed=1))
    assert not np.array_equal(a, b)


def test_embedding_file_override(tmp_path):
    cfg = EncoderConfig(dim=4)
    path = tmp_path / "emb.jsonl"
    path.write_text(json.dumps({"text": "hello", "embedding": [1, 0, 0, 0]}) + "\n")
    enc = TextEncoder.with_embedding_file(path, cfg)
    np.testing.assert_array_equal(enc("hello"), [1, 0, 0, 0])
    assert enc("other").shape == (4,)
    path.write_text(json.dumps({"text": "hello", "embedding": [1, 0]}) + "\n")
    with pytest.raises(DimensionMismatch):
        TextEncoder.with_embedding_file(path, cfg)


def test_config_roundtrip():
    cfg = EncoderConfig(dim=64, ngrams=(1, 2, 3), seed=5)
    assert EncoderConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
