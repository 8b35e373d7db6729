import numpy as np
import pytest

from mazenav import policy as pol
from mazenav.errors import NonFiniteLogits
from mazenav.nn import autograd as ag
from mazenav.reachability import EMBED_DIM


@pytest.fixture(scope="module")
def net():
    return pol.PolicyNet(n_rays=64, seed=0)


def obs_like(rng):
    return rng.random((64, 3))


def test_explore_forward_empty_memory_is_feedforward(net):
    rng = np.random.default_rng(0)
    obs = obs_like(rng)
    out = pol.explore_forward(net, obs, np.zeros((0, EMBED_DIM)), np.zeros(0, dtype=np.intp))
    assert out.logits.shape == (3,)
    assert np.isfinite(out.logits).all()
    # reproduce the zero-context reduction by hand
    from mazenav.nn import Tensor, no_grad

    with no_grad():
        c = net.cnn(obs.T[None])
        e = net.explore_block.ln1(c)
        h = net.explore_block.ln2(net.explore_block.mlp(e) + e)
        logits = net.explore_policy(h)
    assert np.allclose(out.logits, logits.data[0])


def test_explore_forward_deterministic(net):
    rng = np.random.default_rng(1)
    obs = obs_like(rng)
    mem = rng.standard_normal((4, EMBED_DIM))
    ages = np.array([0, 1, 5, 9], dtype=np.intp)
    a = pol.explore_forward(net, obs, mem, ages)
    b = pol.explore_forward(net, obs, mem, ages)
    assert np.array_equal(a.logits, b.logits)
    assert a.value == b.value


def test_memory_permutation_invariance(net):
    rng = np.random.default_rng(2)
    obs = obs_like(rng)
    mem = rng.standard_normal((5, EMBED_DIM))
    ages = np.array([3, 1, 4, 1, 5], dtype=np.intp)
    perm = np.array([4, 2, 0, 3, 1])
    a = pol.explore_forward(net, obs, mem, ages)
    b = pol.explore_forward(net, obs, mem[perm], ages[perm])
    assert np.allclose(a.logits, b.logits, atol=1e-12)
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_navigate_forward_order_sensitive(net):
    rng = np.random.default_rng(3)
    obs, goal = obs_like(rng), obs_like(rng)
    mem = rng.standard_normal((2, EMBED_DIM))
    ages = np.zeros(2, dtype=np.intp)
    a = pol.navigate_forward(net, obs, goal, mem, ages)
    b = pol.navigate_forward(net, goal, obs, mem, ages)
    assert not np.allclose(a.logits, b.logits)


def test_navigate_goal_equals_obs_total(net):
    rng = np.random.default_rng(4)
    obs = obs_like(rng)
    out = pol.navigate_forward(net, obs, obs, np.zeros((0, EMBED_DIM)), np.zeros(0, dtype=np.intp))
    assert np.isfinite(out.logits).all()


def test_value_and_policy_share_h(net):
    rng = np.random.default_rng(5)
    obs = obs_like(rng)
    mem = rng.standard_normal((3, EMBED_DIM))
    ages = np.zeros(3, dtype=np.intp)
    out = pol.explore_forward(net, obs, mem, ages)
    logits = out.h @ net.explore_policy.weight.data + net.explore_policy.bias.data
    value = out.h @ net.explore_value.weight.data + net.explore_value.bias.data
    assert np.allclose(out.logits, logits)
    assert out.value == pytest.approx(float(value[0]))


def test_no_nan_propagation(net):
    rng = np.random.default_rng(6)
    for _ in range(1000):
        obs = rng.random((64, 3))
        J = int(rng.integers(0, 4))
        mem = rng.standard_normal((J, EMBED_DIM))
        ages = rng.integers(0, 50, size=J).astype(np.intp)
        out = pol.explore_forward(net, obs, mem, ages)
        assert np.isfinite(out.logits).all() and np.isfinite(out.value)


def test_sample_action_degenerate_logits():
    out = pol.PolicyOutput(np.array([2.0, -np.inf, -np.inf]), 0.0, np.zeros(1))
    rng = np.random.default_rng(0)
    for _ in range(20):
        action, logp, ent = pol.sample_action(out, rng)
        assert action == 0
        assert logp == pytest.approx(0.0)
        assert ent == pytest.approx(0.0)


def test_sample_action_uniform_entropy():
    out = pol.PolicyOutput(np.zeros(3), 0.0, np.zeros(1))
    _, _, ent = pol.sample_action(out, np.random.default_rng(0))
    assert ent == pytest.approx(np.log(3))


def test_sample_action_rejects_nan():
    out = pol.PolicyOutput(np.array([np.nan, 0.0, 0.0]), 0.0, np.zeros(1))
    with pytest.raises(NonFiniteLogits):
        pol.sample_action(out, np.random.default_rng(0))


def test_sample_action_frequencies_match_softmax():
    logits = np.array([0.3, -0.5, 1.1])
    out = pol.PolicyOutput(logits, 0.0, np.zeros(1))
    probs, _ = pol.logits_stats(logits)
    rng = np.random.default_rng(7)
    n = 100_000
    counts = np.zeros(3)
    for _ in range(n):
        a, _, _ = pol.sample_action(out, rng)
        counts[a] += 1
    freq = counts / n
    sigma = np.sqrt(probs * (1 - probs) / n)
    assert (np.abs(freq - probs) < 3 * sigma + 1e-12).all()


@pytest.mark.parametrize("seed", range(10))
def test_policy_gradcheck_both_heads(seed):
    """Finite differences on the log-prob of a chosen action, all params."""
    rng = np.random.default_rng(seed)
    net = pol.PolicyNet(n_rays=16, seed=seed)
    obs = rng.random((1, 16, 3))
    goal = rng.random((1, 16, 3))
    entries = rng.standard_normal((1, 2, EMBED_DIM))
    ages = np.array([[1, 3]], dtype=np.intp)
    mask = np.ones((1, 2), dtype=bool)
    action = int(rng.integers(3))

    def explore_loss():
        logits, value, _ = net.explore_batch(obs, entries, ages, mask)
        return ag.log_softmax(logits) * _one_hot(action)

    def nav_loss():
        logits, value, _ = net.navigate_batch(obs, goal, entries, ages, mask)
        return ag.log_softmax(logits) * _one_hot(action)

    for loss_fn, params in (
        (explore_loss, _explore_params(net)),
        (nav_loss, _nav_params(net)),
    ):
        _fd_check(loss_fn, params, seed)


def _one_hot(action):
    from mazenav.nn import Tensor

    v = np.zeros((1, 3))
    v[0, action] = 1.0
    return Tensor(v)


def _explore_params(net):
    names = ("cnn", "age_emb", "explore_block", "explore_policy", "explore_value")
    return [p for n, p in net.named_parameters() if n.split(".")[0] in names]


def _nav_params(net):
    names = ("cnn", "age_emb", "nav_proj", "nav_block", "nav_policy", "nav_value")
    return [p for n, p in net.named_parameters() if n.split(".")[0] in names]


def _fd_check(loss_fn, params, seed, step=1e-5, rel=1e-4):
    loss = ag.tsum(loss_fn())
    for p in params:
        p.grad = None
    loss.backward()
    pick = np.random.default_rng(seed)
    for p in params:
        if p.grad is None:
            continue
        flat = p.data.ravel()
        gflat = p.grad.ravel()
        for i in pick.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + step
            up = float(ag.tsum(loss_fn()).data)
            flat[i] = orig - step
            down = float(ag.tsum(loss_fn()).data)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            if abs(numeric) < 1e-7 and abs(gflat[i]) < 1e-7:
                # structurally-zero gradient (e.g. key bias under softmax):
                # both sides are below finite-difference noise
                continue
            denom = max(abs(numeric), abs(gflat[i]), 1e-8)
            assert abs(numeric - gflat[i]) / denom < rel, (numeric, gflat[i])


def test_warm_start_cnn_copies_embedding_net():
    from mazenav.reachability import ReachabilityModel

    reach = ReachabilityModel(n_rays=16, seed=5)
    net = pol.PolicyNet(n_rays=16, seed=0)
    pol.warm_start_cnn(net, reach.g)
    rng = np.random.default_rng(1)
    obs = rng.random((3, 16, 3))
    with ag.no_grad():
        a = net.cnn(np.transpose(obs, (0, 2, 1))).data
    b = reach.embed_batch(obs)
    assert np.array_equal(a, b)
    # the copies are independent: training one must not touch the other
    net.cnn.parameters()[0].data += 1.0
    assert not np.array_equal(net.cnn.parameters()[0].data, reach.g.parameters()[0].data)


def test_warm_start_cnn_shape_mismatch():
    from mazenav.errors import ShapeMismatch
    from mazenav.reachability import ReachabilityModel

    reach = ReachabilityModel(n_rays=16, seed=5)
    net = pol.PolicyNet(n_rays=16, seed=0)
    with pytest.raises(ShapeMismatch):
        pol.warm_start_cnn(net, reach.f)  # comparator trunk, wrong shapes
