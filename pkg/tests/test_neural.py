import numpy as np
import pytest

from gridvolt.exceptions import DimensionMismatch
from gridvolt.neural import AdamState, Mlp, adam_step, sgd_step, soft_update


def fd_check(net, x, upstream, rng, per_layer=40, h=1e-6):
    """Relative error between analytic and central-difference parameter gradients."""
    grads, _ = net.backward(x, upstream)
    num, ana = [], []
    for p, g in zip(net.params, grads):
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_layer, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = np.sum(upstream * net.forward(x))
            flat[i] = old - h
            down = np.sum(upstream * net.forward(x))
            flat[i] = old
            num.append((up - down) / (2 * h))
            ana.append(g.reshape(-1)[i])
    num, ana = np.array(num), np.array(ana)
    return np.linalg.norm(num - ana) / max(np.linalg.norm(num), np.linalg.norm(ana), 1e-12)


def test_forward_single_and_batch(rng):
    net = Mlp([3, 5, 2], "tanh", rng)
    x = rng.normal(size=(4, 3))
    batch = net.forward(x)
    assert batch.shape == (4, 2)
    assert np.allclose(net.forward(x[1]), batch[1])
    assert np.all(np.abs(batch) < 1)


def test_zero_actor_outputs_zero(rng):
    net = Mlp([6, 100, 100, 3], "tanh", rng).zero_()
    assert np.array_equal(net.forward(rng.normal(size=6)), np.zeros(3))


def test_dimension_mismatch(rng):
    net = Mlp([3, 4, 1], "identity", rng)
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros(4))
    with pytest.raises(DimensionMismatch):
        net.backward(np.zeros((2, 3)), np.zeros((2, 2)))


def test_unknown_activation():
    with pytest.raises(ValueError):
        Mlp([2, 2], "sigmoid")


@pytest.mark.parametrize("act", ["tanh", "identity", "relu"])
def test_gradient_small(act, rng):
    net = Mlp([4, 7, 6, 3], act, rng)
    x = rng.normal(size=(5, 4))
    assert fd_check(net, x, rng.normal(size=(5, 3)), rng, per_layer=200) < 1e-4


def test_input_gradient(rng):
    net = Mlp([4, 8, 2], "tanh", rng)
    x = rng.normal(size=4)
    up = rng.normal(size=2)
    _, gx = net.backward(x, up)
    h = 1e-6
    num = np.array([(np.sum(up * net.forward(x + h * e)) - np.sum(up * net.forward(x - h * e))) / (2 * h)
                    for e in np.eye(4)])
    assert np.allclose(gx, num, rtol=1e-6, atol=1e-9)


def _deployed_shapes():
    """Actor and critic shapes of both learners on both bundled feeders."""
    from gridvolt.env import AgentLayout
    from gridvolt.netmodel import bundled_network
    from gridvolt.partition import partition_network
    shapes = set()
    for name in ("ieee33", "ieee123"):
        net = bundled_network(name)
        layout = AgentLayout.from_partition(net, partition_network(net))
        for spec in layout:
            shapes.add(((spec.obs_dim, 100, 100, spec.act_dim), "tanh"))
            shapes.add(((spec.obs_dim + spec.act_dim, 100, 100, 1), "identity"))
        shapes.add(((layout.obs_dim + layout.act_dim, 100, 100, 1), "identity"))
    return sorted(shapes)


@pytest.mark.parametrize("sizes,act", _deployed_shapes())
def test_gradient_deployed_shapes(sizes, act):
    rng = np.random.default_rng(sum(sizes))
    net = Mlp(sizes, act, rng)
    x = rng.normal(size=(4, sizes[0]))
    assert fd_check(net, x, rng.normal(size=(4, sizes[-1])), rng) < 1e-4


def test_overfit_one_batch():
    rng = np.random.default_rng(0)
    critic = Mlp([20, 100, 100, 1], "identity", rng)
    x = rng.normal(size=(32, 20))
    y = rng.uniform(-1.0, 0.0, size=32)
    opt = AdamState(critic)
    loss = np.inf
    for step in range(2000):
        err = critic.forward(x)[:, 0] - y
        loss = float(np.mean(err ** 2))
        if loss < 1e-6:
            break
        grads, _ = critic.backward(x, (2.0 / 32) * err[:, None])
        adam_step(critic, grads, opt, 2e-3)
    assert loss < 1e-6, f"loss {loss} after {step} steps"


def test_adam_first_step_hand_value():
    net = Mlp([1, 1], "identity", params=[np.array([[1.0]]), np.array([0.0])])
    opt = AdamState(net)
    adam_step(net, [np.array([[0.5]]), np.array([-2.0])], opt, lr=0.1)
    # Bias-corrected first step moves each parameter by lr * sign(g).
    assert net.params[0][0, 0] == pytest.approx(0.9, abs=1e-7)
    assert net.params[1][0] == pytest.approx(0.1, abs=1e-7)
    adam_step(net, [np.zeros((1, 1)), np.zeros(1)], opt, lr=0.1, maximize=True)
    assert opt.step == 2


def test_adam_maximize_flips_direction(rng):
    a = Mlp([2, 2], "identity", rng)
    b = a.copy()
    g = [np.ones_like(p) for p in a.params]
    adam_step(a, g, AdamState(a), 0.01)
    adam_step(b, g, AdamState(b), 0.01, maximize=True)
    assert np.all(a.params[0] < b.params[0])


def test_sgd(rng):
    net = Mlp([2, 1], "identity", rng)
    before = net.params[0].copy()
    sgd_step(net, [np.ones((1, 2)), np.ones(1)], 0.5)
    assert np.allclose(net.params[0], before - 0.5)


def test_soft_update_identity(rng):
    online = Mlp([3, 4, 2], "tanh", rng)
    target = Mlp([3, 4, 2], "tanh", rng)
    before = [p.copy() for p in target.params]
    soft_update(target, online, 0.001)
    for b, t, o in zip(before, target.params, online.params):
        assert np.max(np.abs(t - (0.001 * o + 0.999 * b))) <= 1e-12
    soft_update(target, online, 1.0)
    assert all(np.array_equal(t, o) for t, o in zip(target.params, online.params))
    with pytest.raises(ValueError):
        soft_update(target, online, 0.0)


def test_state_dict_round_trip(rng):
    net = Mlp([3, 5, 1], "identity", rng)
    other = Mlp([3, 5, 1], "identity", np.random.default_rng(9))
    other.load_state_dict(net.state_dict())
    assert all(np.array_equal(a, b) for a, b in zip(net.params, other.params))
    wrong = Mlp([3, 6, 1], "identity", rng)
    with pytest.raises(DimensionMismatch):
        wrong.load_state_dict(net.state_dict())
    assert wrong.params[0].shape == (6, 3)


def test_adam_state_round_trip(rng):
    net = Mlp([2, 3, 1], "identity", rng)
    opt = AdamState(net)
    adam_step(net, [np.ones_like(p) for p in net.params], opt, 0.01)
    restored = AdamState(net).load_state_dict(opt.state_dict())
    assert restored.step == 1
    assert all(np.array_equal(a, b) for a, b in zip(opt.m, restored.m))
