import numpy as np
import pytest

from mazenav import maze as mz, reachability as rn
from mazenav.errors import InsufficientWalkLength, ShapeMismatch
from mazenav.nn import autograd as ag


@pytest.fixture(scope="module")
def tiny_map():
    return mz.load_map("###\n#S#\n###\n", map_seed=0)


@pytest.fixture(scope="module")
def fixture_map():
    return mz.load_map(open("maps/maze15.txt").read(), map_seed=2)


def test_collect_walk_length_one(tiny_map):
    cfg = rn.PairingConfig(walk_steps=1, walks=1, pairs_per_walk=1)
    walks = rn.collect_walks(tiny_map, cfg, seed=0)
    assert len(walks) == 1 and walks[0].shape == (1, 64, 3)
    assert np.array_equal(walks[0][0], mz.render(tiny_map, tiny_map.start_pose))


def test_collect_walks_deterministic(fixture_map):
    cfg = rn.PairingConfig(walk_steps=50, walks=2, pairs_per_walk=4)
    a = rn.collect_walks(fixture_map, cfg, seed=5)
    b = rn.collect_walks(fixture_map, cfg, seed=5)
    for wa, wb in zip(a, b):
        assert np.array_equal(wa, wb)


def test_collect_walks_degenerate_map(tiny_map):
    cfg = rn.PairingConfig(walk_steps=30, walks=1, pairs_per_walk=1)
    walks = rn.collect_walks(tiny_map, cfg, seed=1)
    # single free cell: only four distinct views (one per heading)
    distinct = {w.tobytes() for w in walks[0]}
    assert len(distinct) <= 4


def test_pair_label():
    assert rn.pair_label(3, 6, k=5) == 1
    assert rn.pair_label(2, 7, k=5) == 1  # boundary
    assert rn.pair_label(0, 10, k=5) == 0
    for i, j in [(0, 3), (8, 1), (4, 4)]:
        assert rn.pair_label(i, j, 5) == rn.pair_label(j, i, 5)


def test_sample_pairs_balanced(fixture_map):
    cfg = rn.PairingConfig(walk_steps=120, walks=2, pairs_per_walk=50)
    walks = rn.collect_walks(fixture_map, cfg, seed=2)
    pairs = rn.sample_pairs(walks, cfg, seed=3)
    assert len(pairs) == 100
    labels = [p.label for p in pairs]
    assert sum(labels) == 50
    for p in pairs:
        expect = 1 if abs(p.i - p.j) <= cfg.positive_radius else 0
        assert p.label == expect
        if p.label == 0:
            assert abs(p.i - p.j) >= cfg.negative_margin


def test_sample_pairs_too_short():
    cfg = rn.PairingConfig(walk_steps=3, walks=1, pairs_per_walk=4, negative_margin=25)
    walks = [np.zeros((3, 64, 3))]
    with pytest.raises(InsufficientWalkLength):
        rn.sample_pairs(walks, cfg, seed=0)


def test_embed_shape_and_determinism():
    model = rn.ReachabilityModel(seed=0)
    obs = np.random.default_rng(0).random((64, 3))
    e1 = model.embed(obs)
    e2 = model.embed(obs)
    assert e1.shape == (rn.EMBED_DIM,)
    assert np.array_equal(e1, e2)
    with pytest.raises(ShapeMismatch):
        model.embed(np.zeros((32, 3)))


def test_compare_range_and_determinism():
    model = rn.ReachabilityModel(seed=0)
    rng = np.random.default_rng(1)
    ea, eb = rng.standard_normal(128), rng.standard_normal(128)
    s1 = model.compare(ea, eb)
    assert 0.0 <= s1 <= 1.0
    assert s1 == model.compare(ea, eb)
    with pytest.raises(ShapeMismatch):
        model.compare(ea[:64], eb)


def test_untrained_model_chance_accuracy(fixture_map):
    cfg = rn.PairingConfig(walk_steps=100, walks=2, pairs_per_walk=100)
    walks = rn.collect_walks(fixture_map, cfg, seed=7)
    pairs = rn.sample_pairs(walks, cfg, seed=8)
    model = rn.ReachabilityModel(seed=3)
    a = np.stack([p.obs_a for p in pairs])
    b = np.stack([p.obs_b for p in pairs])
    y = np.array([p.label for p in pairs], dtype=float)
    acc = rn._accuracy(model, a, b, y)
    assert acc == pytest.approx(0.5, abs=0.15)


def test_bce_with_logits_matches_reference():
    rng = np.random.default_rng(2)
    from mazenav.nn import Tensor

    x = Tensor(rng.standard_normal(20), requires_grad=True)
    y = (rng.random(20) > 0.5).astype(float)
    loss = rn.bce_with_logits(x, y)
    p = 1 / (1 + np.exp(-x.data))
    ref = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
    assert float(loss.data) == pytest.approx(ref)
    loss.backward()
    assert np.allclose(x.grad, (p - y) / 20)


def test_training_quick_loss_decreases(fixture_map):
    cfg = rn.PairingConfig(walk_steps=200, walks=4, pairs_per_walk=150)
    walks = rn.collect_walks(fixture_map, cfg, seed=4)
    pairs = rn.sample_pairs(walks, cfg, seed=5)
    model, hist = rn.train_reachability(
        pairs, epochs=8, batch=64, lr=0.1, seed=0
    )
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_pair_file_roundtrip(tmp_path, fixture_map):
    cfg = rn.PairingConfig(walk_steps=60, walks=1, pairs_per_walk=10)
    walks = rn.collect_walks(fixture_map, cfg, seed=9)
    pairs = rn.sample_pairs(walks, cfg, seed=9)
    path = tmp_path / "pairs.bin"
    rn.save_pairs(path, pairs, cfg.positive_radius)
    loaded, k = rn.load_pairs(path)
    assert k == cfg.positive_radius
    assert len(loaded) == len(pairs)
    for p, q in zip(pairs, loaded):
        assert np.array_equal(p.obs_a, q.obs_a)
        assert np.array_equal(p.obs_b, q.obs_b)
        assert p.label == q.label


def test_model_checkpoint_roundtrip(tmp_path):
    model = rn.ReachabilityModel(seed=1)
    path = tmp_path / "reach.mnav"
    rn.save_model(path, model)
    loaded = rn.load_model(path)
    obs = np.random.default_rng(3).random((64, 3))
    assert np.array_equal(model.embed(obs), loaded.embed(obs))
