from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from knitc.instructions import EmptyInput
from knitc.theory import (DegenerateMix, EpsilonParams, FiniteHypothesisClass, LabeledSample, MissingDomain,
                          ShiftedThresholdTask, ThresholdClass, bound_check, bound_curve, discrepancy,
                          empirical_alpha_minimizer, epsilon, risks)


def test_epsilon_reference_value():
    assert epsilon(1000, 0.5, 0.5, 0.05) == pytest.approx(math.sqrt(math.log(40) / 2000), abs=1e-12)
    assert epsilon(EpsilonParams(1000, 0.5, 0.5, 0.05)) == pytest.approx(0.04295, abs=1e-5)


def test_epsilon_scales_with_inverse_root_m():
    assert epsilon(4000, 0.3, 0.6, 0.1) == pytest.approx(epsilon(1000, 0.3, 0.6, 0.1) / 2)


def test_epsilon_stationary_at_alpha_equals_beta():
    for beta in (0.2, 0.5, 0.8):
        h = 1e-6
        d = (epsilon(500, beta + h, beta, 0.05) - epsilon(500, beta - h, beta, 0.05)) / (2 * h)
        assert abs(d) < 1e-6


def test_epsilon_argmin_near_beta():
    rng = np.random.default_rng(3)
    grid = np.round(np.linspace(0, 1, 101), 2)
    for _ in range(20):
        m, beta, delta = int(rng.integers(10, 5000)), rng.uniform(0.05, 0.95), rng.uniform(0.01, 0.5)
        values = [epsilon(m, a, beta, delta) for a in grid]
        assert abs(grid[int(np.argmin(values))] - beta) <= 0.01 + 1e-12
        second = np.diff(values, 2)
        assert (second >= -1e-12).all()  # convex in alpha


def test_epsilon_degenerate_cases():
    assert epsilon(100, 1.0, 1.0, 0.05) == pytest.approx(math.sqrt(math.log(40) / 200))
    assert epsilon(100, 0.0, 0.0, 0.05) == pytest.approx(math.sqrt(math.log(40) / 200))
    with pytest.raises(DegenerateMix):
        epsilon(100, 0.5, 1.0, 0.05)
    with pytest.raises(DegenerateMix):
        epsilon(100, 0.5, 0.0, 0.05)
    with pytest.raises(ValueError):
        epsilon(0, 0.5, 0.5, 0.05)
    with pytest.raises(ValueError):
        epsilon(10, 0.5, 0.5, 1.0)


def _brute_disc(H, a, b):
    pa, pb = H.predict(np.asarray(a)), H.predict(np.asarray(b))
    best = 0.0
    for i, j in itertools.product(range(len(H)), repeat=2):
        best = max(best, abs((pa[i] != pa[j]).mean() - (pb[i] != pb[j]).mean()))
    return best


def test_discrepancy_example():
    H = ThresholdClass([0.0, 0.5, 1.0])
    assert discrepancy(H, [0.1, 0.2], [0.8, 0.9]) == 1.0
    assert discrepancy(H, [0.1, 0.2], [0.1, 0.2]) == 0.0


def test_discrepancy_matches_brute_force_and_generic_class():
    rng = np.random.default_rng(0)
    thresholds = np.linspace(0, 1, 11)
    fast = ThresholdClass(thresholds)
    slow = FiniteHypothesisClass([lambda x, t=t: x >= t for t in thresholds])
    for _ in range(20):
        a, b = rng.uniform(size=int(rng.integers(1, 30))), rng.uniform(size=int(rng.integers(1, 30)))
        expected = _brute_disc(slow, a, b)
        assert discrepancy(fast, a, b) == pytest.approx(expected)
        assert discrepancy(slow, a, b) == pytest.approx(expected)


def test_discrepancy_metric_properties():
    rng = np.random.default_rng(1)
    H = ThresholdClass.grid(21)
    for _ in range(100):
        a, b, c = (rng.uniform(size=int(rng.integers(1, 20))) ** rng.uniform(0.3, 3) for _ in range(3))
        ab, bc, ac = discrepancy(H, a, b), discrepancy(H, b, c), discrepancy(H, a, c)
        assert ab == pytest.approx(discrepancy(H, b, a))
        assert 0 <= ab <= 1
        assert ac <= ab + bc + 1e-12
    with pytest.raises(EmptyInput):
        discrepancy(H, [], [0.5])


def test_minimizer_domain_extremes():
    rng = np.random.default_rng(2)
    H = ThresholdClass.grid()
    xs, xt = rng.uniform(size=40), rng.uniform(size=40)
    s = LabeledSample(xs, (xs >= 0.3).astype(int), xt, (xt >= 0.7).astype(int))
    assert empirical_alpha_minimizer(H, s, 0.0)[0] == int(np.argmin(risks(H, xt, s.target_y)))
    assert empirical_alpha_minimizer(H, s, 1.0)[0] == int(np.argmin(risks(H, xs, s.source_y)))


def test_minimizer_conflict_enumeration():
    H = ThresholdClass.grid(11)
    xs = np.array([0.05, 0.25, 0.35, 0.55, 0.95])
    xt = np.array([0.05, 0.45, 0.65, 0.75, 0.95])
    s = LabeledSample(xs, (xs >= 0.3).astype(int), xt, (xt >= 0.7).astype(int))
    idx, loss = empirical_alpha_minimizer(H, s, 0.5)
    mixed = [0.5 * np.mean((xs >= t) != s.source_y) + 0.5 * np.mean((xt >= t) != s.target_y)
             for t in H.thresholds]
    assert idx == int(np.argmin(mixed)) and loss == pytest.approx(min(mixed))
    assert 0.3 <= H.thresholds[idx] <= 0.7


def test_minimizer_separable_zero_loss():
    H = ThresholdClass.grid()
    x = np.linspace(0, 1, 37)
    s = LabeledSample(x, (x >= 0.5).astype(int), x[::-1], (x[::-1] >= 0.5).astype(int))
    for alpha in (0.0, 0.3, 1.0):
        assert empirical_alpha_minimizer(H, s, alpha)[1] == 0.0


def test_minimizer_missing_domain():
    H = ThresholdClass.grid()
    s = LabeledSample(np.array([0.1]), np.array([0]), np.array([]), np.array([]))
    with pytest.raises(MissingDomain):
        empirical_alpha_minimizer(H, s, 0.5)
    assert empirical_alpha_minimizer(H, s, 1.0)[1] == 0.0


def test_bound_check_identical_domains():
    r = bound_check(50, ShiftedThresholdTask(shift=0.0), 100, 0.5, 0.5, 0.05, n_ref=20_000)
    assert r.fraction == 1.0
    assert r.disc < 0.03


def test_bound_check_shifted_task():
    r = bound_check(200, ShiftedThresholdTask(), 200, 0.5, 0.5, 0.05)
    assert r.fraction >= 0.95
    assert r.reference_size >= 100_000


def test_bound_curve_never_exceeded():
    curve = bound_curve([0, 0.25, 0.5, 0.75, 1], 100, ShiftedThresholdTask(), 200, 0.5, 0.05)
    for row in curve.rows:
        assert row.mean_gap <= row.rhs
    tsv = curve.to_tsv().splitlines()
    assert tsv[1] == "alpha\tgap\tboundRHS\tepsilon\tsatisfied"
    assert len(tsv) == 7
