import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from navpruner.corpus import reference_retriever
from navpruner.encoder import EncoderConfig, TextEncoder
from navpruner.errors import DimensionMismatch, EmptyDataset, FormatVersionMismatch, InvalidConfig
from navpruner.evaluation import RunConfig
from navpruner.navigator import History
from navpruner.optim import AdamW
from navpruner.retriever import (
    FINETUNE_PRESET,
    CandidateRetriever,
    DirectionScores,
    Features,
    Hyper,
    RetrieverModel,
    direction_accuracy,
    featurize,
    load_examples,
    load_model,
    loss_and_grad,
    loss_and_grad_features,
    make_training_examples,
    save_examples,
    save_model,
    select_topk,
    train_retriever,
)
from navpruner.world import bearing, parse_instruction, relative_heading, render_observation, sector_index


def test_hand_computed_two_dim_model():
    cfg = EncoderConfig(dim=2)
    model = RetrieverModel(cfg, np.array([[1.0, 0, 1, 0], [0, 1, 0, -1]]), np.array([0.0, 0.5]),
                           np.array([2.0, -1.0]), 0.1)
    Z = np.zeros((1, 8, 2))
    Z[0, 0] = [0, 1]
    Z[0, 1] = [1, 0]
    mask = np.zeros((1, 8), bool)
    mask[0, :2] = True
    f = Features(np.array([[1.0, 0.0]]), Z, mask, np.array([0]))
    loss, grads = loss_and_grad_features(model, f)
    # logits: sector 0 -> relu([1, -0.5]) . [2, -1] + 0.1 = 2.1 ; sector 1 -> relu([2, 0.5]) . [2, -1] + 0.1 = 3.6
    assert loss == pytest.approx(math.log(1 + math.exp(1.5)), abs=1e-12)
    p1 = 1 / (1 + math.exp(-1.5))
    assert grads["b2"][0] == pytest.approx(0.0, abs=1e-12)
    # d loss / d logit = softmax - onehot = (-p1, p1)
    np.testing.assert_allclose(grads["W2"], -p1 * np.array([1, 0]) + p1 * np.array([2, 0.5]), atol=1e-12)


def test_uniform_loss_for_zero_model():
    model = RetrieverModel.zeros()
    f = Features(np.ones((3, 256)), np.ones((3, 8, 256)), np.ones((3, 8), bool), np.array([0, 3, 7]))
    loss, _ = loss_and_grad_features(model, f)
    assert abs(loss - math.log(8)) < 1e-9
    f.mask[:, 4:] = False
    loss, _ = loss_and_grad_features(model, f.take(np.array([0, 1])))
    assert abs(loss - math.log(4)) < 1e-9


def _numeric_loss(W1, b1, W2, b2, U, Z, mask, y):
    # straightforward per-sector loop, deliberately not sharing code with the package
    total = 0.0
    for i in range(len(y)):
        logits = []
        for k in range(Z.shape[1]):
            if not mask[i, k]:
                continue
            h = np.maximum(W1 @ np.concatenate([U[i], Z[i, k]]) + b1, 0)
            logits.append((k, float(h @ W2 + b2)))
        m = max(v for _, v in logits)
        lse = m + math.log(sum(math.exp(v - m) for _, v in logits))
        total += lse - dict(logits)[int(y[i])]
    return total / len(y)


def _random_case(rng, d=6, hidden=5, batch=3):
    model = RetrieverModel.xavier(EncoderConfig(dim=d), hidden, rng)
    model.b1 = rng.normal(0, 0.1, hidden)
    model.b2 = float(rng.normal())
    mask = rng.random((batch, 8)) < 0.6
    y = rng.integers(0, 8, batch)
    mask[np.arange(batch), y] = True
    f = Features(rng.normal(size=(batch, d)), rng.normal(size=(batch, 8, d)) * mask[:, :, None], mask, y)
    return model, f


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(3):
        model, f = _random_case(rng)
        _, grads = loss_and_grad_features(model, f)
        p = model.params()
        h = 1e-5
        for name in ("W1", "b1", "W2", "b2"):
            arr = p[name] if name != "b2" else np.array([model.b2])
            for idx in np.ndindex(arr.shape):
                vals = {k: v.copy() for k, v in p.items()}
                vals["b2"] = np.array([model.b2])
                vals[name][idx] += h
                up = _numeric_loss(vals["W1"], vals["b1"], vals["W2"], vals["b2"][0], f.U, f.Z, f.mask, f.y)
                vals[name][idx] -= 2 * h
                dn = _numeric_loss(vals["W1"], vals["b1"], vals["W2"], vals["b2"][0], f.U, f.Z, f.mask, f.y)
                num = (up - dn) / (2 * h)
                ana = grads[name][idx]
                assert abs(ana - num) <= 1e-4 * max(abs(ana), abs(num), 1e-6), (name, idx, ana, num)


def test_adamw_matches_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(1)
    init = rng.normal(size=(4, 3))
    grads = [rng.normal(size=(4, 3)) for _ in range(6)]
    mine = {"w": init.copy()}
    opt = AdamW(mine, lr=0.01, weight_decay=0.1)
    ref = torch.tensor(init.copy(), dtype=torch.float64, requires_grad=True)
    topt = torch.optim.AdamW([ref], lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1)
    for g in grads:
        opt.step({"w": g})
        ref.grad = torch.tensor(g)
        topt.step()
    np.testing.assert_allclose(mine["w"], ref.detach().numpy(), rtol=1e-12, atol=1e-14)


@settings(max_examples=60)
@given(hnp.arrays(np.float64, 8, elements=st.floats(-5, 5)), hnp.arrays(bool, 8), st.integers(1, 8))
def test_topk_properties(logits, mask, k):
    z = np.where(mask, logits, -np.inf)
    sel = select_topk(DirectionScores(z, mask), k).indices
    live = [i for i in range(8) if mask[i]]
    assert list(sel) == sorted(sel)
    assert set(sel) <= set(live)
    assert len(sel) == min(k, len(live))
    rest = [i for i in live if i not in sel]
    for i in sel:
        for j in rest:
            assert z[i] > z[j] or (z[i] == z[j] and i < j)


def test_topk_ties_prefer_lower_index():
    mask = np.ones(8, bool)
    assert select_topk(DirectionScores(np.zeros(8), mask), 3).indices == (0, 1, 2)
    with pytest.raises(InvalidConfig):
        select_topk(DirectionScores(np.zeros(8), mask), 0)


def test_training_labels_follow_instruction(small_world):
    world, episodes = small_world
    examples = make_training_examples(world, episodes)
    assert len(examples) == sum(len(e.reference_path) - 1 for e in episodes)
    pos = 0
    for ep in episodes:
        sectors = parse_instruction(ep.instruction)
        heading = ep.start_heading
        for t, (a, b) in enumerate(zip(ep.reference_path, ep.reference_path[1:])):
            ex = examples[pos + t]
            assert ex.label == sectors[t] == sector_index(relative_heading(world, a, heading, b))
            assert ex.mask[ex.label]
            assert ex.context.startswith(ep.instruction + "\n")
            heading = bearing(world, a, b)
        pos += len(ep.reference_path) - 1


def test_training_reduces_loss_and_is_seeded(small_world):
    world, episodes = small_world
    examples = make_training_examples(world, episodes)
    hyper = Hyper(epochs=4, hidden=16)
    m1, curve = train_retriever(examples, hyper, seed=3)
    m2, curve2 = train_retriever(examples, hyper, seed=3)
    assert curve == curve2
    np.testing.assert_array_equal(m1.W1, m2.W1)
    assert curve[-1] < curve[0]
    top1, recall = direction_accuracy(m1, examples)
    assert 0.0 <= top1 <= recall <= 1.0


def test_hyper_validation_and_preset():
    assert FINETUNE_PRESET.lr == 2e-5 and Hyper().lr == 1e-3
    h = Hyper()
    assert (h.epochs, h.batch_size, h.weight_decay, h.hidden) == (10, 32, 0.01, 128)
    cfg = RunConfig()
    assert (cfg.prune_k, cfg.exemplar_k, cfg.success_radius) == (5, 3, 3.0)
    with pytest.raises(InvalidConfig):
        Hyper(lr=0).validate()
    with pytest.raises(EmptyDataset):
        train_retriever([], Hyper())
    with pytest.raises(EmptyDataset):
        loss_and_grad(RetrieverModel.zeros(), [])


def test_model_roundtrip_and_errors(tmp_path):
    model = RetrieverModel.xavier(EncoderConfig(dim=16), 4, np.random.default_rng(0))
    model.b2 = -0.25
    path = tmp_path / "m.model"
    save_model(model, path)
    back = load_model(path)
    for k, v in model.params().items():
        np.testing.assert_array_equal(back.params()[k], v)
    assert back.encoder_config == model.encoder_config
    with pytest.raises(DimensionMismatch):
        load_model(path, EncoderConfig(dim=32))
    with pytest.raises(DimensionMismatch):
        CandidateRetriever(back, TextEncoder())
    lines = path.read_text().split("\n")
    path.write_text(lines[0].replace('"version": 1', '"version": 2') + "\n" + "\n".join(lines[1:]))
    with pytest.raises(FormatVersionMismatch):
        load_model(path)
    path.write_text("\n".join(lines[:3]))
    with pytest.raises(FormatVersionMismatch):
        load_model(path)


def test_examples_roundtrip(tmp_path, small_world):
    world, episodes = small_world
    examples = make_training_examples(world, episodes[:3])
    save_examples(examples, tmp_path / "ex.jsonl")
    assert load_examples(tmp_path / "ex.jsonl") == examples


def test_retriever_selects_only_live_sectors(toy_world):
    model = RetrieverModel.xavier(EncoderConfig(), 8, np.random.default_rng(2))
    sel = CandidateRetriever(model).select("walk right to the office", History(), render_observation(toy_world, "a", 0.0), 8)
    assert sel.indices == (0, 2, 4, 7)


def test_featurize_zeroes_masked_sectors(small_world):
    world, episodes = small_world
    f = featurize(make_training_examples(world, episodes[:2]), TextEncoder())
    assert not f.Z[~f.mask].any()


def test_reference_loss_curve_mostly_decreases():
    _, curve = reference_retriever()
    assert len(curve) == 10
    assert sum(b <= a for a, b in zip(curve, curve[1:])) + 1 >= 8
