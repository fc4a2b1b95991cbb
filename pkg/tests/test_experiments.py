from __future__ import annotations

from knitc.experiments import Curve, alpha_sweep, data_size_sweep, scale_trials
from knitc.neural.nets import Img2prog, Model
from knitc.neural.train import TrainingConfig

TINY = TrainingConfig(iterations=2, widths=(4, 4, 8), n_res=1)


def test_curve_summaries():
    c = Curve("alpha", [(0.0, 0, 0.5, 0.4), (0.5, 0, 0.7, 0.6), (0.0, 1, 0.9, 0.8), (0.5, 1, 0.8, 0.7)])
    assert c.best_by_seed() == {0: 0.5, 1: 0.0}
    assert c.mean_by_x() == {0.0: 0.7, 0.5: 0.75}
    assert c.to_tsv().splitlines()[0] == "alpha\tseed\tfull\tfg"


def test_alpha_sweep_shape_and_determinism():
    kwargs = dict(alphas=(0.0, 1.0), n_synthetic=3, n_real_train=2, n_real_test=2, base=TINY)
    a = alpha_sweep([0], **kwargs)
    assert [r[0] for r in a.rows] == [0.0, 1.0]
    assert all(0 <= r[2] <= 1 for r in a.rows)
    assert alpha_sweep([0], **kwargs).rows == a.rows


def test_data_size_sweep_rows():
    c = data_size_sweep([1], fractions=(0.5, 1.0), n_synthetic=2, n_real_train=4, n_real_test=2, base=TINY)
    assert [r[0] for r in c.rows] == [0.5, 1.0]


def test_scale_trials_use_distinct_maps():
    model = Model(Img2prog((4, 4, 8), 1), None)
    trials = scale_trials(model, [0, 1], scales=(8,))
    assert [t.sweep.best_scale for t in trials] == [8, 8]
    assert trials[0].sweep.points != trials[1].sweep.points
