"""Desk-scale trend experiments: alpha mixing, pseudo-real data size and scale identification."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import PSEUDO_REAL, SYNTHETIC, SplitSpec, generate_valid, make_corpus
from .metrics import AccuracyReport, ScaleSweepResult, scale_sweep, shift_accuracy
from .neural.nets import Model
from .neural.train import TrainingConfig, infer_batch, train
from .render import render

ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
FRACTIONS = (0.125, 0.25, 0.5, 1.0)
SCALES = (4, 6, 8, 12, 16)


def evaluate_model(model: Model, samples) -> AccuracyReport:
    probs = infer_batch(model, [s.image for s in samples])
    return shift_accuracy(list(probs), [s.map for s in samples])


def _mixing_corpus(n_synthetic: int, n_real_train: int, n_real_test: int, seed: int):
    n_real = n_real_train + n_real_test
    corpus = make_corpus(n_synthetic, n_real, seed, SplitSpec(n_real_train / n_real, 0.0, n_real_test / n_real))
    return corpus["train"], corpus["test"]


@dataclass
class Curve:
    """Rows of (x, seed, full, fg); ``x`` is alpha or a data fraction."""
    label: str
    rows: list[tuple[float, int, float, float]] = field(default_factory=list)

    def mean_by_x(self) -> dict[float, float]:
        xs = sorted({r[0] for r in self.rows})
        return {x: float(np.mean([r[2] for r in self.rows if r[0] == x])) for x in xs}

    def best_by_seed(self) -> dict[int, float]:
        best: dict[int, tuple[float, float]] = {}
        for x, seed, full, _ in self.rows:
            if seed not in best or full > best[seed][1]:
                best[seed] = (x, full)
        return {seed: x for seed, (x, _) in best.items()}

    def to_tsv(self) -> str:
        return f"{self.label}\tseed\tfull\tfg\n" + "".join(
            f"{x:g}\t{s}\t{full:.6f}\t{fg:.6f}\n" for x, s, full, fg in self.rows)


def alpha_sweep(seeds: Sequence[int], alphas: Sequence[float] = ALPHAS, n_synthetic: int = 400,
                n_real_train: int = 100, n_real_test: int = 100,
                base: TrainingConfig = TrainingConfig()) -> Curve:
    curve = Curve("alpha")
    for seed in seeds:
        train_set, test_set = _mixing_corpus(n_synthetic, n_real_train, n_real_test, seed)
        for alpha in alphas:
            result = train(replace(base, alpha=alpha, seed=seed), train_set)
            report = evaluate_model(result.model, test_set)
            curve.rows.append((alpha, seed, report.full, report.fg))
    return curve


def data_size_sweep(seeds: Sequence[int], fractions: Sequence[float] = FRACTIONS, n_synthetic: int = 400,
                    n_real_train: int = 100, n_real_test: int = 100,
                    base: TrainingConfig = TrainingConfig()) -> Curve:
    """Keep the first ``fraction`` of the pseudo-real train pool; synthetic data stays fixed."""
    curve = Curve("fraction")
    for seed in seeds:
        train_set, test_set = _mixing_corpus(n_synthetic, n_real_train, n_real_test, seed)
        syn = [s for s in train_set if s.domain == SYNTHETIC]
        real = [s for s in train_set if s.domain == PSEUDO_REAL]
        for frac in fractions:
            subset = syn + real[:max(1, int(round(frac * len(real))))]
            result = train(replace(base, seed=seed), subset)
            report = evaluate_model(result.model, test_set)
            curve.rows.append((frac, seed, report.full, report.fg))
    return curve


@dataclass
class ScaleTrial:
    seed: int
    sweep: ScaleSweepResult


def scale_trials(model: Model, seeds: Sequence[int], scales: Sequence[float] = SCALES,
                 stitches: int = 40) -> list[ScaleTrial]:
    """Render a fresh stitches x stitches map per seed at the atlas scale and sweep candidate scales."""
    trials = []
    for seed in seeds:
        m = generate_valid(1, seed=10_000 + seed, size=stitches)[0]
        trials.append(ScaleTrial(seed, scale_sweep(model, render(m), scales)))
    return trials
