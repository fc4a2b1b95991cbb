"""Shift-tolerant cross-entropy and the alpha-mixed objective."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..instructions import NUM_INSTRUCTIONS, InstructionMap
from .tensor import ShapeMismatch, Tensor, _result, weighted_sum

Shift = tuple[int, int]  # (dx, dy)

NO_SHIFT: tuple[Shift, ...] = ((0, 0),)
# (0, 0) first, then lexicographic, so argmin ties resolve in that order
ALL_SHIFTS: tuple[Shift, ...] = ((0, 0),) + tuple(
    (dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0))


def _order_shifts(shifts: Sequence[Shift]) -> list[Shift]:
    shifts = sorted(set(map(tuple, shifts)))
    if any(abs(dx) > 1 or abs(dy) > 1 for dx, dy in shifts):
        raise ValueError("shifts must lie in {-1, 0, 1}^2")
    if (0, 0) in shifts:
        shifts.remove((0, 0))
        shifts.insert(0, (0, 0))
    return shifts


def _shifted_gt_logp(logp: np.ndarray, gt: np.ndarray, shift: Shift) -> np.ndarray:
    """log s_{(i,j)+d}[y_(i,j)] over the interior cells, shape (N, H-2, W-2)."""
    _, _, h, w = logp.shape
    dx, dy = shift
    window = logp[:, :, 1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
    return np.take_along_axis(window, gt[:, None, 1:h - 1, 1:w - 1], axis=1)[:, 0]


def mil_cross_entropy(logp: Tensor, gt: np.ndarray, shifts: Sequence[Shift] = NO_SHIFT,
                      image_shifts: Sequence[Sequence[Shift]] | None = None) -> Tensor:
    """Per-image interior cross-entropy, minimised over global one-cell shifts.

    ``logp`` holds log-probabilities (N, K, H, W); ``gt`` integer codes (N, H, W).
    ``image_shifts`` optionally gives each image its own shift set. Returns a
    length-N tensor; the gradient flows through the minimising shift only.
    """
    gt = np.asarray(gt)
    n, k, h, w = logp.shape
    if gt.shape != (n, h, w):
        raise ShapeMismatch(f"mil_cross_entropy: logp {logp.shape} vs gt {gt.shape}")
    if h < 3 or w < 3:
        raise ShapeMismatch("mil_cross_entropy needs at least 3x3 maps")
    if image_shifts is None:
        image_shifts = [shifts] * n
    elif len(image_shifts) != n:
        raise ShapeMismatch("image_shifts needs one shift set per image")
    sets = [set(map(tuple, s)) for s in image_shifts]
    order = _order_shifts(set().union(*sets))
    allowed = np.array([[d in s for s in sets] for d in order])
    z = (h - 2) * (w - 2)
    per_shift = np.stack([-_shifted_gt_logp(logp.data, gt, d).sum(axis=(1, 2)) / z for d in order])
    per_shift = np.where(allowed, per_shift, np.inf)
    best = per_shift.argmin(axis=0)
    loss = per_shift[best, np.arange(n)]

    def backward(g):
        grad = np.zeros_like(logp.data)
        rows = np.arange(1, h - 1)[:, None]
        cols = np.arange(1, w - 1)[None, :]
        for i in range(n):
            dx, dy = order[best[i]]
            grad[i, gt[i, 1:h - 1, 1:w - 1], rows + dy, cols + dx] -= g[i] / z
        return (grad,)

    return _result(loss, (logp,), backward)


def best_shifts(logp: np.ndarray, gt: np.ndarray, shifts: Sequence[Shift] = ALL_SHIFTS) -> list[Shift]:
    shifts = _order_shifts(shifts)
    per_shift = np.stack([-_shifted_gt_logp(logp, gt, d).sum(axis=(1, 2)) for d in shifts])
    return [shifts[i] for i in per_shift.argmin(axis=0)]


def mil_loss(pred: np.ndarray, gt: InstructionMap, shifts: Sequence[Shift] = NO_SHIFT) -> float:
    """Loss of one SoftmaxMap ``pred`` (H, W, K) against ``gt``."""
    if pred.shape != (*gt.shape, NUM_INSTRUCTIONS):
        raise ShapeMismatch(f"prediction {pred.shape} does not match map {gt.shape}")
    with np.errstate(divide="ignore"):
        logp = np.log(pred.transpose(2, 0, 1)[None])
    loss = mil_cross_entropy(Tensor(logp), gt.codes[None].astype(np.int64), shifts)
    return float(loss.data[0])


def alpha_mixed_loss(synthetic_loss, real_loss, alpha: float):
    """alpha * L_S + (1 - alpha) * L_T for floats or scalar tensors."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if isinstance(synthetic_loss, Tensor) or isinstance(real_loss, Tensor):
        terms = [(w, t) for w, t in ((alpha, synthetic_loss), (1 - alpha, real_loss)) if t is not None and w]
        return weighted_sum(terms) if terms else None
    return alpha * synthetic_loss + (1 - alpha) * real_loss
