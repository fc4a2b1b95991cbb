"""Central-difference gradient checking shared by the neural tests and the acceptance suite."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from knitc.neural.losses import ALL_SHIFTS, mil_cross_entropy
from knitc.neural.tensor import (Tensor, avg_pool, concat, conv2d, dot_const, instance_norm, l1_loss,
                                 log_softmax, mean, mse_to, nn_upsample, relu, softmax, tanh,
                                 weighted_sum)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], rng: np.random.Generator,
                    h: float = 1e-5) -> float:
    """Worst relative error between autodiff and central differences of <fn(inputs), R>."""
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    probe = rng.normal(size=out.shape)
    out.backward(probe)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = (fn(*[Tensor(u.data) for u in tensors]).data * probe).sum()
            flat[i] = old - h
            down = (fn(*[Tensor(u.data) for u in tensors]).data * probe).sum()
            flat[i] = old
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _away_from_zero(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    return np.where(np.abs(x) < margin, margin * np.sign(x + 1e-30), x)


def _nchw(rng, c=None, even=False):
    n = int(rng.integers(1, 3))
    c = c or int(rng.integers(1, 4))
    h, w = (int(v) for v in rng.integers(2, 5, size=2) * 2) if even else rng.integers(3, 9, size=2)
    return n, c, int(h), int(w)


def case_conv(rng):
    n, c, h, w = _nchw(rng)
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    o = int(rng.integers(1, 4))
    args = [rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, k, k)), rng.normal(size=o)]
    return (lambda x, wt, b: conv2d(x, wt, b, stride)), args


def case_instance_norm(rng):
    return instance_norm, [rng.normal(size=_nchw(rng))]


def case_relu(rng):
    return relu, [_away_from_zero(rng.normal(size=_nchw(rng)))]


def case_nn_upsample(rng):
    return (lambda x: nn_upsample(x, 2)), [rng.normal(size=_nchw(rng))]


def case_residual_block(rng):
    n, c, h, w = _nchw(rng)
    x = rng.normal(size=(n, c, h, w))
    wa, wb = rng.normal(size=(2, c, c, 3, 3)) * 0.5

    def block(x, wa, wb):
        return x + instance_norm(conv2d(relu(instance_norm(conv2d(x, wa))), wb))
    return block, [x, wa, wb]


def case_softmax(rng):
    return softmax, [rng.normal(size=_nchw(rng))]


def case_log_softmax(rng):
    return log_softmax, [rng.normal(size=_nchw(rng))]


def case_avg_pool(rng):
    return (lambda x: avg_pool(x, 2)), [rng.normal(size=_nchw(rng, even=True))]


def case_concat(rng):
    n, c, h, w = _nchw(rng)
    return (lambda a, b: concat([a, b])), [rng.normal(size=(n, c, h, w)), rng.normal(size=(n, 2, h, w))]


def case_add(rng):
    shape = _nchw(rng)
    return (lambda a, b: a + b), [rng.normal(size=shape), rng.normal(size=shape)]


def case_tanh(rng):
    return tanh, [rng.normal(size=_nchw(rng))]


def case_losses(rng):
    shape = _nchw(rng)
    target = rng.normal(size=shape)
    x = target + _away_from_zero(rng.normal(size=shape))  # stay off the L1 kink
    weights = rng.normal(size=7)

    def f(x, y, v):
        return weighted_sum([(0.7, l1_loss(x, target)), (1.3, mse_to(y, -1.0)), (0.4, mean(x)),
                             (1.0, dot_const(v, weights))])
    return f, [x, rng.normal(size=shape), rng.normal(size=7)]


def case_mil(rng):
    n = int(rng.integers(1, 4))
    h, w = (int(v) for v in rng.integers(3, 7, size=2))
    gt = rng.integers(0, 17, size=(n, h, w))
    weights = rng.uniform(0.5, 1.5, size=n)
    logits = rng.normal(size=(n, 17, h, w)) * 2

    def f(z):
        return dot_const(mil_cross_entropy(log_softmax(z), gt, ALL_SHIFTS), weights)
    return f, [logits]


PRIMITIVES = {
    "conv2d": case_conv,
    "instance_norm": case_instance_norm,
    "relu": case_relu,
    "nn_upsample": case_nn_upsample,
    "residual_block": case_residual_block,
    "softmax": case_softmax,
    "log_softmax": case_log_softmax,
    "avg_pool": case_avg_pool,
    "concat": case_concat,
    "add": case_add,
    "tanh": case_tanh,
    "losses": case_losses,
    "mil_cross_entropy": case_mil,
}
