import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from riftlab.network import Conv2d, Flatten, Linear, NetworkSpec, ReLU, init_params  # noqa: E402
from riftlab.numerics import Rng  # noqa: E402

CRITERIA = []


def record_criterion(number, passed, detail):
    CRITERIA.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def random_net(seed, max_params=500):
    """Small random network mixing conv, linear and relu layers."""
    rng = Rng(seed)
    while True:
        kind = int(rng.integers(0, 3))
        if kind == 0:
            d, h, k = int(rng.integers(2, 6)), int(rng.integers(2, 8)), int(rng.integers(2, 5))
            spec = NetworkSpec([Linear("l1", d, h), ReLU("r1"), Linear("l2", h, k)], (d,), k)
        else:
            c = int(rng.integers(1, 3))
            size = int(rng.integers(4, 7))
            o = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            conv = Conv2d("c1", c, o, 3, stride=stride, padding=1)
            side = (size + 2 - 3) // stride + 1
            k = int(rng.integers(2, 4))
            layers = [conv, ReLU("r1"), Flatten("f")]
            if kind == 2:
                layers += [Linear("l1", o * side * side, 4), ReLU("r2"), Linear("l2", 4, k)]
            else:
                layers += [Linear("l1", o * side * side, k)]
            spec = NetworkSpec(layers, (c, size, size), k)
        params = init_params(spec, rng.child("init"))
        for entry in params.values():
            for key in entry:
                entry[key] = rng.normal(0.0, 0.6, entry[key].shape)
        if sum(v.size for e in params.values() for v in e.values()) <= max_params:
            return spec, params, rng.child("data")


@pytest.fixture
def tiny_mlp():
    spec = NetworkSpec([Linear("fc1", 3, 5), ReLU("relu1"), Linear("fc2", 5, 4)], (3,), 4)
    return spec, init_params(spec, Rng(0))


@pytest.fixture
def tiny_cnn():
    spec = NetworkSpec(
        [Conv2d("conv1", 1, 2, 3, padding=1), ReLU("relu1"), Conv2d("conv2", 2, 3, 3, stride=2, padding=1),
         ReLU("relu2"), Flatten("flatten"), Linear("fc1", 3 * 3 * 3, 4)],
        (1, 6, 6), 4,
    )
    return spec, init_params(spec, Rng(1))


def batch_for(spec, n, seed):
    rng = Rng(seed)
    x = rng.uniform(0.0, 1.0, (n,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, n)
    return x, np.asarray(y)


def tiny_module_problem(seed, eps_x=0.05, n=200):
    """Two-parameter module ``a`` feeding a 1->2 linear head, adversarially trained.

    Returns ``(spec, theta_at, d_adv, loss_of_a)`` where ``loss_of_a(w)`` is the
    mean cross-entropy on ``d_adv`` with module ``a`` set to ``w``, computed
    in closed form without the package's forward pass.
    """
    from riftlab.attack import AttackConfig, TrainSchedule, adversarial_train
    from riftlab.harness.data import gen_synthetic
    from riftlab.mrc import build_adv_set

    spec = NetworkSpec([Linear("a", 2, 1, bias=False), Linear("b", 1, 2)], (2,), 2)
    data = gen_synthetic("blobs2d", n, seed)
    attack = AttackConfig(eps_x=eps_x)
    theta, _ = adversarial_train(spec, data, data, attack, TrainSchedule(5, 0.1, (), batch_size=32, seed=seed))
    d_adv = build_adv_set(spec, theta, data, attack, Rng(seed).child("adv"))
    x, y = np.array(d_adv.inputs), np.array(d_adv.labels)
    wb, bb = theta["b"]["weight"][:, 0], theta["b"]["bias"]

    def loss_of_a(w):
        z = (x @ np.asarray(w, dtype=np.float64))[:, None] * wb + bb
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(y)), y]))

    return spec, theta, d_adv, loss_of_a
