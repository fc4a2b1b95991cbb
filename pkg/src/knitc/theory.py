"""Executable form of the alpha-mixed generalization bound on finite hypothesis classes.

All losses are 0-1 losses. The canonical hypothesis class is 1-D thresholds
``h_t(x) = 1[x >= t]`` on a grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .instructions import EmptyInput


class DegenerateMix(ValueError):
    pass


class MissingDomain(ValueError):
    pass


@dataclass(frozen=True)
class EpsilonParams:
    m: int
    alpha: float
    beta: float
    delta: float


def epsilon(m: int | EpsilonParams, alpha: float = 0.5, beta: float = 0.5, delta: float = 0.05) -> float:
    """sqrt( (1/2m) (alpha^2/beta + (1-alpha)^2/(1-beta)) log(2/delta) ), with 0/0 read as 0."""
    if isinstance(m, EpsilonParams):
        m, alpha, beta, delta = m.m, m.alpha, m.beta, m.delta
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not (0 <= alpha <= 1 and 0 <= beta <= 1):
        raise ValueError("alpha and beta must lie in [0, 1]")

    def ratio(num: float, den: float) -> float:
        if den == 0:
            if num != 0:
                raise DegenerateMix(f"alpha={alpha} puts weight on a domain with beta share {beta}")
            return 0.0
        return num / den

    mix = ratio(alpha ** 2, beta) + ratio((1 - alpha) ** 2, 1 - beta)
    return math.sqrt(mix * math.log(2 / delta) / (2 * m))


# ---------------------------------------------------------------------------
# hypothesis classes and samples

class FiniteHypothesisClass:
    """Explicit list of classifiers; ``predict`` returns an (|H|, n) 0/1 matrix."""

    def __init__(self, classifiers: Sequence):
        if not classifiers:
            raise EmptyInput("hypothesis class must be nonempty")
        self.classifiers = list(classifiers)

    def __len__(self) -> int:
        return len(self.classifiers)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return np.stack([np.asarray(h(x), dtype=np.int8) for h in self.classifiers])


class ThresholdClass(FiniteHypothesisClass):
    def __init__(self, thresholds: Sequence[float]):
        if len(thresholds) == 0:
            raise EmptyInput("hypothesis class must be nonempty")
        self.thresholds = np.asarray(thresholds, dtype=np.float64)
        self.classifiers = [lambda x, t=t: x >= t for t in self.thresholds]

    @classmethod
    def grid(cls, n: int = 101, low: float = 0.0, high: float = 1.0) -> "ThresholdClass":
        return cls(np.linspace(low, high, n))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x)[None, :] >= self.thresholds[:, None]).astype(np.int8)


def _disagreement(H: FiniteHypothesisClass, x: np.ndarray) -> np.ndarray:
    """L(h, h') for every ordered pair: fraction of x where the two classifiers differ."""
    x = np.asarray(x)
    if x.size == 0:
        raise EmptyInput("sample is empty")
    if isinstance(H, ThresholdClass):
        # h_t and h_t' disagree exactly on [min(t, t'), max(t, t'))
        xs = np.sort(x)
        below = np.searchsorted(xs, H.thresholds, side="left") / len(xs)
        return np.abs(below[:, None] - below[None, :])
    p = H.predict(x).astype(np.float64)
    return (p @ (1 - p).T + (1 - p) @ p.T) / x.size


def discrepancy(H: FiniteHypothesisClass, a: np.ndarray, b: np.ndarray) -> float:
    """max over (h, h') in H^2 of |L_A(h, h') - L_B(h, h')|."""
    return float(np.abs(_disagreement(H, a) - _disagreement(H, b)).max())


@dataclass
class LabeledSample:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray


def risks(H: FiniteHypothesisClass, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """0-1 loss of every classifier in H on (x, y); NaN for an empty sample."""
    x, y = np.asarray(x), np.asarray(y)
    if x.size == 0:
        return np.full(len(H), np.nan)
    return (H.predict(x) != y[None, :]).mean(axis=1)


def empirical_alpha_minimizer(H: FiniteHypothesisClass, s: LabeledSample, alpha: float) -> tuple[int, float]:
    """Index of the first classifier minimising alpha*L_S + (1-alpha)*L_T, and that loss."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    total = np.zeros(len(H))
    for weight, x, y, name in ((alpha, s.source_x, s.source_y, "source"),
                               (1 - alpha, s.target_x, s.target_y, "target")):
        if weight == 0:
            continue
        if len(x) == 0:
            raise MissingDomain(f"alpha={alpha} needs {name} samples")
        total += weight * risks(H, x, y)
    best = int(np.argmin(total))
    return best, float(total[best])


# ---------------------------------------------------------------------------
# Monte-Carlo bound check

@dataclass(frozen=True)
class ShiftedThresholdTask:
    """D_S = U[low, high], D_T the same interval shifted, y = 1[x >= boundary]."""
    low: float = 0.0
    high: float = 0.8
    shift: float = 0.2
    boundary: float = 0.5

    def draw(self, rng: np.random.Generator, n: int, target: bool) -> tuple[np.ndarray, np.ndarray]:
        off = self.shift if target else 0.0
        x = rng.uniform(self.low + off, self.high + off, size=n)
        return x, (x >= self.boundary).astype(np.int8)


@dataclass
class BoundCheckResult:
    fraction: float
    gaps: np.ndarray
    rhs: float
    epsilon: float
    disc: float
    lam: float
    alpha: float
    reference_size: int

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.gaps))


@dataclass
class _Population:
    disc: float
    lam: float
    target_risk: np.ndarray
    best_target_risk: float
    size: int


_POP_CACHE: dict = {}


def population(H: FiniteHypothesisClass, task, n_ref: int = 100_000, seed: int = 0) -> _Population:
    """disc, lambda = min_h (L_S + L_T) and target risks estimated on large reference draws."""
    key = (id(H), task, n_ref, seed)
    if key not in _POP_CACHE:
        rng = np.random.default_rng([seed, 99])
        xs, ys = task.draw(rng, n_ref, target=False)
        xt, yt = task.draw(rng, n_ref, target=True)
        ls, lt = risks(H, xs, ys), risks(H, xt, yt)
        _POP_CACHE[key] = _Population(discrepancy(H, xs, xt), float((ls + lt).min()), lt,
                                      float(lt.min()), n_ref)
    return _POP_CACHE[key]


def bound_check(trials: int, task, m: int, alpha: float, beta: float, delta: float,
                H: FiniteHypothesisClass | None = None, n_ref: int = 100_000,
                seed: int = 0) -> BoundCheckResult:
    """Fraction of trials where |L_T(h_hat) - L_T(h*_T)| <= 2 (alpha (disc + lambda) + eps)."""
    H = H or ThresholdClass.grid()
    pop = population(H, task, n_ref, seed)
    eps = epsilon(m, alpha, beta, delta)
    rhs = 2 * (alpha * (pop.disc + pop.lam) + eps)
    n_s = int(round(beta * m))
    gaps = np.empty(trials)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        xs, ys = task.draw(rng, n_s, target=False)
        xt, yt = task.draw(rng, m - n_s, target=True)
        h_hat, _ = empirical_alpha_minimizer(H, LabeledSample(xs, ys, xt, yt), alpha)
        gaps[t] = abs(pop.target_risk[h_hat] - pop.best_target_risk)
    return BoundCheckResult(float((gaps <= rhs).mean()) if trials else 1.0, gaps, rhs, eps,
                            pop.disc, pop.lam, alpha, n_ref)


@dataclass
class BoundCurve:
    rows: list[BoundCheckResult] = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = [f"# population terms from {self.rows[0].reference_size} reference draws per domain"
                 if self.rows else "# empty",
                 "alpha\tgap\tboundRHS\tepsilon\tsatisfied"]
        lines += [f"{r.alpha:g}\t{r.mean_gap:.6f}\t{r.rhs:.6f}\t{r.epsilon:.6f}\t{r.fraction:.4f}"
                  for r in self.rows]
        return "\n".join(lines) + "\n"

    def write_tsv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv())


def bound_curve(alphas: Sequence[float], trials: int, task, m: int, beta: float, delta: float,
                H: FiniteHypothesisClass | None = None, n_ref: int = 100_000, seed: int = 0) -> BoundCurve:
    H = H or ThresholdClass.grid()
    return BoundCurve([bound_check(trials, task, m, a, beta, delta, H, n_ref, seed) for a in alphas])
