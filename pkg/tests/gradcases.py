"""Finite-difference gradient cases shared by the unit and acceptance suites.

Each case returns (build, inputs): ``build()`` recomputes a scalar from the
current input data, so ``tensorcore.gradient_check`` can perturb in place.
Non-scalar op outputs are reduced with a fixed random weighting so every
output element contributes a distinct coefficient.
"""

from __future__ import annotations

import numpy as np

from livenesskit import models, tensorcore as tc, trainer

F64 = np.float64


def _t(rng, shape, scale=1.0, positive=False):
    a = rng.normal(0, scale, shape)
    if positive:
        a = np.abs(a) + 0.5
    return tc.Tensor(a.astype(F64), requires_grad=True)


def _reduce(out: tc.Tensor, rng) -> tc.Tensor:
    return tc.weighted_sum(out, rng.normal(0, 1, out.shape))


def conv2d(shape, rng):
    n, h, w, cin, cout = shape
    x, k, b = _t(rng, (n, h, w, cin)), _t(rng, (3, 3, cin, cout), 0.5), _t(rng, (cout,))
    wts = rng.normal(0, 1, (n, h, w, cout))
    return (lambda: tc.weighted_sum(tc.conv2d(x, k, b), wts)), [x, k, b]


def maxpool2(shape, rng):
    x = _t(rng, shape)
    wts = rng.normal(0, 1, (shape[0], shape[1] // 2, shape[2] // 2, shape[3]))
    return (lambda: tc.weighted_sum(tc.maxpool2(x), wts)), [x]


def dense(shape, rng):
    n, din, dout = shape
    x, w, b = _t(rng, (n, din)), _t(rng, (din, dout)), _t(rng, (dout,))
    wts = rng.normal(0, 1, (n, dout))
    return (lambda: tc.weighted_sum(tc.dense(x, w, b), wts)), [x, w, b]


def batchnorm_train(shape, rng):
    c = shape[-1]
    x, g, b = _t(rng, shape, 2.0), _t(rng, (c,), positive=True), _t(rng, (c,))
    rm, rv = np.zeros(c), np.ones(c)
    wts = rng.normal(0, 1, shape)
    return (lambda: tc.weighted_sum(tc.batchnorm(x, g, b, rm, rv, True), wts)), [x, g, b]


def batchnorm_infer(shape, rng):
    c = shape[-1]
    x, g, b = _t(rng, shape), _t(rng, (c,), positive=True), _t(rng, (c,))
    rm, rv = rng.normal(0, 1, c), rng.uniform(0.5, 2, c)
    wts = rng.normal(0, 1, shape)
    return (lambda: tc.weighted_sum(tc.batchnorm(x, g, b, rm, rv, False), wts)), [x, g, b]


def _unary(fn):
    def case(shape, rng):
        x = _t(rng, shape)
        wts = rng.normal(0, 1, shape)
        return (lambda: tc.weighted_sum(fn(x), wts)), [x]
    return case


def softmax(shape, rng):
    x = _t(rng, shape, 2.0)
    wts = rng.normal(0, 1, shape)
    return (lambda: tc.weighted_sum(tc.softmax(x), wts)), [x]


def concat_channels(shape, rng):
    a, b = _t(rng, shape), _t(rng, shape[:-1] + (shape[-1] + 1,))
    wts = rng.normal(0, 1, shape[:-1] + (2 * shape[-1] + 1,))
    return (lambda: tc.weighted_sum(tc.concat_channels(a, b), wts)), [a, b]


def add(shape, rng):
    a, b = _t(rng, shape), _t(rng, shape)
    wts = rng.normal(0, 1, shape)
    return (lambda: tc.weighted_sum(tc.add(a, b), wts)), [a, b]


def dropout(shape, rng):
    x = _t(rng, shape)
    wts = rng.normal(0, 1, shape)
    seed = int(rng.integers(1 << 30))
    # a fresh generator per call keeps the mask fixed across perturbations
    return (lambda: tc.weighted_sum(tc.dropout(x, 0.3, True, np.random.default_rng(seed)), wts)), [x]


def flatten(shape, rng):
    x = _t(rng, shape)
    wts = rng.normal(0, 1, (shape[0], int(np.prod(shape[1:]))))
    return (lambda: tc.weighted_sum(tc.flatten(x), wts)), [x]


def sum_all(shape, rng):
    x = _t(rng, shape)
    return (lambda: tc.sum_all(tc.tanh(x))), [x]


def smoothed_loss(shape, rng):
    n, k = shape
    logits = _t(rng, (n, k))
    labels = rng.integers(0, k, n)
    return (lambda: trainer.smoothed_cross_entropy(tc.softmax(logits), labels, 0.1)), [logits]


def _tiny_network(variant, size):
    act, dense_act, mode = models._variant_activations(variant)
    merge = None if mode is None else (0, 2)
    cfg = models.ArchConfig(widths=(2, 3), convs_per_block=2 if mode is None else 3, merge=merge, merge_mode=mode,
                            bn_on_merge_tail=mode != "add", dense_units=4, conv_activation=act,
                            dense_activation=dense_act)
    spec = models.spec_from_config(variant, cfg, (size, size, 3), 0.25, 0.5, 1e-5)
    return models.Network(spec, seed=3, dtype=F64)


def network_loss(variant_and_size, rng):
    """Full composed loss: network forward in training mode plus smoothed cross-entropy."""
    variant, size = variant_and_size
    net = _tiny_network(variant, size)
    x = rng.uniform(0, 1, (3, size, size, 3))
    labels = np.array([0, 1, 1])
    seed = int(rng.integers(1 << 30))

    def build():
        probs = net.forward(x, training=True, rng=np.random.default_rng(seed))
        return trainer.smoothed_cross_entropy(probs, labels, 0.1)

    # a handful of tensors from different layer types keeps the check fast
    names = [n for n in net.params if n.endswith(("kernel", "gamma", "beta"))]
    picks = [net.params[n] for n in names[:2] + names[-2:]]
    return build, picks


CASES = {
    "conv2d": (conv2d, [(1, 4, 4, 1, 1), (2, 5, 3, 2, 3), (1, 6, 6, 3, 2)]),
    "maxpool2": (maxpool2, [(1, 2, 2, 1), (2, 4, 6, 3), (1, 8, 4, 2)]),
    "dense": (dense, [(1, 3, 2), (4, 5, 3), (2, 8, 1)]),
    "batchnorm_train": (batchnorm_train, [(4, 3), (2, 3, 3, 2), (3, 2, 4, 5)]),
    "batchnorm_infer": (batchnorm_infer, [(4, 3), (2, 3, 3, 2), (1, 2, 2, 4)]),
    "relu": (_unary(tc.relu), [(5,), (2, 3), (2, 3, 3, 2)]),
    "leaky_relu": (_unary(lambda x: tc.leaky_relu(x, 0.2)), [(5,), (2, 3), (2, 3, 3, 2)]),
    "tanh": (_unary(tc.tanh), [(5,), (2, 3), (2, 3, 3, 2)]),
    "softmax": (softmax, [(1, 2), (4, 2), (3, 5)]),
    "concat_channels": (concat_channels, [(1, 2, 2, 1), (2, 3, 3, 2), (3, 4)]),
    "add": (add, [(3,), (2, 3), (2, 2, 2, 3)]),
    "dropout": (dropout, [(10,), (3, 4), (2, 3, 3, 2)]),
    "flatten": (flatten, [(2, 3, 3, 2), (1, 4, 1, 1), (3, 2, 2, 5)]),
    "sum_all": (sum_all, [(4,), (2, 3), (2, 2, 2, 2)]),
    "smoothed_loss": (smoothed_loss, [(1, 2), (4, 2), (6, 2)]),
    "network_loss": (network_loss, [(models.LIVENESSNET, 8), (models.ATTACKNET_V2_1, 8), (models.ATTACKNET_V2_2, 8)]),
}


def run_case(name: str, shape, seed: int = 0) -> list[float]:
    fn, _ = CASES[name]
    build, inputs = fn(shape, np.random.default_rng(seed))
    return tc.gradient_check(build, inputs, eps=1e-6)
