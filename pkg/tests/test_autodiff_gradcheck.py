"""Finite-difference verification of every differentiable op.

Each case perturbs the inputs with central differences (h=1e-5) and
requires the reverse-mode gradients to agree within 1e-4 relative error,
over many random shapes and seeds.
"""

import numpy as np
import pytest

from ovseg import tensor as T

from helpers import check_grads


def randt(rng, *shape):
    return T.from_array(rng.uniform(-2.0, 2.0, size=shape), requires_grad=True)


def scalarize(t):
    # weighted sum so the loss is sensitive to every output entry
    w = np.cos(np.arange(t.size, dtype=np.float64)).reshape(t.shape) + 1.5
    return T.tsum(T.mul(t, T.from_array(w)))


CASES = {
    "add": lambda rng: (lambda a, b: T.add(a, b), [randt(rng, 3, 4), randt(rng, 3, 4)]),
    "sub": lambda rng: (lambda a, b: T.sub(a, b), [randt(rng, 2, 5), randt(rng, 2, 5)]),
    "mul": lambda rng: (lambda a, b: T.mul(a, b), [randt(rng, 4, 3), randt(rng, 4, 3)]),
    "neg": lambda rng: (lambda a: T.neg(a), [randt(rng, 6)]),
    "mul_scalar": lambda rng: (lambda a: T.mul(a, 1.7), [randt(rng, 3, 3)]),
    "gelu": lambda rng: (lambda a: T.gelu(a), [randt(rng, 4, 4)]),
    "sigmoid": lambda rng: (lambda a: T.sigmoid(a), [randt(rng, 5)]),
    "matmul": lambda rng: (lambda a, b: T.matmul(a, b), [randt(rng, 3, 4), randt(rng, 4, 2)]),
    "bmm": lambda rng: (lambda a, b: T.bmm(a, b), [randt(rng, 2, 3, 4), randt(rng, 2, 4, 2)]),
    "softmax": lambda rng: (lambda a: T.softmax(a, axis=-1), [randt(rng, 3, 5)]),
    "layer_norm": lambda rng: (
        lambda x, g, b: T.layer_norm(x, g, b),
        [randt(rng, 3, 6), randt(rng, 6), randt(rng, 6)],
    ),
    "l2_normalize": lambda rng: (lambda a: T.l2_normalize(a, axis=-1), [randt(rng, 4, 3)]),
    "sum_axis": lambda rng: (lambda a: T.tsum(a, axis=1), [randt(rng, 3, 4)]),
    "mean": lambda rng: (lambda a: T.tmean(a, axis=0), [randt(rng, 4, 2)]),
    "reshape": lambda rng: (lambda a: T.reshape(a, (2, 6)), [randt(rng, 3, 4)]),
    "transpose": lambda rng: (lambda a: T.transpose(a, (2, 0, 1)), [randt(rng, 2, 3, 4)]),
    "concat": lambda rng: (
        lambda a, b: T.concat([a, b], axis=1),
        [randt(rng, 3, 2), randt(rng, 3, 4)],
    ),
    "split": lambda rng: (
        lambda a: T.mul(T.split(a, [2, 3], axis=0)[0], 2.0),
        [randt(rng, 5, 3)],
    ),
    "add_bias": lambda rng: (lambda a, b: T.add_bias(a, b), [randt(rng, 4, 3), randt(rng, 3)]),
    "tile_leading": lambda rng: (lambda a: T.tile_leading(a, 3), [randt(rng, 2, 4)]),
    "upsample2x": lambda rng: (lambda a: T.upsample2x(a), [randt(rng, 3, 3, 2)]),
    "conv3x3": lambda rng: (
        lambda x, w, b: T.conv3x3(x, w, b),
        [randt(rng, 4, 4, 2), randt(rng, 3, 3, 2, 3), randt(rng, 3)],
    ),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradients_match_finite_differences(name):
    for seed in range(4):
        rng = np.random.default_rng(1000 * seed + hash(name) % 1000)
        fn, params = CASES[name](rng)
        check_grads(lambda: scalarize(fn(*params)), params)


def test_bce_with_logits_gradient():
    rng = np.random.default_rng(7)
    logits = T.from_array(rng.uniform(-2, 2, size=(3, 4)), requires_grad=True)
    targets = T.from_array(rng.integers(0, 2, size=(3, 4)).astype(float))
    check_grads(lambda: T.bce_with_logits(logits, targets), [logits])


def test_bce_with_logits_weighted_gradient():
    rng = np.random.default_rng(8)
    logits = T.from_array(rng.uniform(-2, 2, size=(4, 3)), requires_grad=True)
    targets = T.from_array(rng.integers(0, 2, size=(4, 3)).astype(float))
    check_grads(lambda: T.bce_with_logits(logits, targets, pos_weight=7.5), [logits])


def test_bce_weighted_matches_manual_formula():
    z = np.array([1.5, -0.5, 0.0, 3.0])
    y = np.array([1.0, 0.0, 1.0, 0.0])
    w = 4.0
    loss = T.bce_with_logits(T.from_array(z), T.from_array(y), pos_weight=w).item()
    manual = np.mean(w * y * np.log1p(np.exp(-z)) + (1 - y) * np.log1p(np.exp(z)))
    assert abs(loss - manual) < 1e-14


def test_many_random_shapes_composite():
    """20+ random shapes through a small composite expression."""
    rng = np.random.default_rng(42)
    for trial in range(22):
        m = int(rng.integers(1, 5))
        k = int(rng.integers(1, 5))
        n = int(rng.integers(1, 5))
        a = randt(rng, m, k)
        b = randt(rng, k, n)
        c = randt(rng, n)

        def loss():
            h = T.add_bias(T.matmul(a, b), c)
            return T.tsum(T.mul(T.gelu(h), T.gelu(h)))

        check_grads(loss, [a, b, c])
