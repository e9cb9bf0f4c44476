import datetime as dt
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from slowdef.detect import TimeseriesResult
from slowdef.errors import ConvergenceError, DomainError, IllPosedFitError
from slowdef.evalkit import fit_sigmoid, roc, roc_timeseries, sigmoid, threshold_sweep
from slowdef.synthgen import DatasetConfig, build_dataset

X = np.arange(1, 11) * 0.01


def logistic(x, a, b):
    return 1.0 / (1.0 + np.exp(-a * (x - b)))


def test_sigmoid_form_and_center():
    xs = np.linspace(-0.2, 0.3, 41)
    np.testing.assert_allclose(sigmoid(xs, 37.0, 0.04), logistic(xs, 37.0, 0.04), rtol=1e-14, atol=1e-300)
    assert sigmoid(0.05, 200.0, 0.05) == 0.5
    assert sigmoid(1e6, 200.0, 0.05) == 1.0 and sigmoid(-1e6, 200.0, 0.05) == 0.0


def test_noiseless_recovery():
    curve = fit_sigmoid(X, logistic(X, 200.0, 0.05))
    assert curve.a == pytest.approx(200.0, rel=1e-6)
    assert curve.b == pytest.approx(0.05, rel=1e-6)
    assert curve(curve.b) == 0.5
    assert curve.threshold == curve.b


def test_pairs_input_form():
    pairs = list(zip(X, logistic(X, 120.0, 0.045)))
    curve = fit_sigmoid(pairs)
    assert curve.b == pytest.approx(0.045, rel=1e-6)


def test_noisy_recovery_over_seeded_trials():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        p = logistic(X, 200.0, 0.05) + rng.uniform(-0.02, 0.02, X.size)
        worst = max(worst, abs(fit_sigmoid(X, p).b - 0.05))
    assert worst <= 0.002


@pytest.mark.parametrize("seed", range(10))
def test_matches_scipy_least_squares(seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 0.12, 40))
    p = np.clip(logistic(x, 150.0, 0.06) + rng.normal(0, 0.08, x.size), 0, 1)
    ours = fit_sigmoid(x, p)
    ref = least_squares(lambda q: logistic(x, q[0], q[1]) - p, x0=[100.0, 0.05], xtol=1e-14, ftol=1e-14)
    assert ours.b == pytest.approx(ref.x[1], rel=1e-6)
    assert ours.a == pytest.approx(ref.x[0], rel=1e-5)
    assert ours.residual == pytest.approx(2 * ref.cost, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.1, 10.0), st.integers(0, 1000))
def test_fit_equivariance(shift, scale, seed):
    rng = np.random.default_rng(seed)
    p = np.clip(logistic(X, 200.0, 0.05) + rng.uniform(-0.05, 0.05, X.size), 0, 1)
    base = fit_sigmoid(X, p)
    moved = fit_sigmoid(X + shift, p)
    assert moved.b == pytest.approx(base.b + shift, abs=1e-7)
    scaled = fit_sigmoid(X * scale, p)
    assert scaled.b == pytest.approx(base.b * scale, rel=1e-6)
    assert scaled.a == pytest.approx(base.a / scale, rel=1e-5)


def test_fit_errors():
    with pytest.raises(IllPosedFitError):
        fit_sigmoid(X, np.full(X.size, 0.2))
    with pytest.raises(IllPosedFitError):
        fit_sigmoid(X[:3], [0.1, 0.5, 0.9])
    with pytest.raises(ConvergenceError) as info:
        fit_sigmoid(X, logistic(X, 200.0, 0.05) + 0.01 * np.sin(np.arange(10)), max_iter=1)
    assert len(info.value.params) == 2


def test_roc_examples():
    assert roc([0.9, 0.8, 0.7, 0.6], [True, False, True, False]).auc == 0.75
    assert roc([0.9, 0.8, 0.2, 0.1], [True, True, False, False]).auc == 1.0
    assert roc([0.4] * 6, [True, False] * 3).auc == 0.5
    assert roc([(0.9, True), (0.8, False), (0.7, True), (0.6, False)]).auc == 0.75


def test_roc_curve_shape():
    curve = roc([0.9, 0.8, 0.7, 0.6], [True, False, True, False])
    np.testing.assert_array_equal(curve.fpr, [0, 0, 0.5, 0.5, 1, 1])
    np.testing.assert_array_equal(curve.tpr, [0, 0.5, 0.5, 1, 1, 1])
    assert curve.thresholds[0] == np.inf and curve.thresholds[-1] == -np.inf
    assert curve.points.shape == (6, 2)


def test_roc_single_class():
    with pytest.raises(DomainError):
        roc([0.1, 0.2], [True, True])


def mann_whitney(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t]
    neg = [s for s, t in zip(scores, truth) if not t]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.booleans()), min_size=2, max_size=40))
def test_roc_auc_equals_mann_whitney(data):
    scores = [s / 8 for s, _ in data]
    truth = [t for _, t in data]
    if all(truth) or not any(truth):
        return
    curve = roc(scores, truth)
    assert curve.auc == pytest.approx(mann_whitney(scores, truth), abs=1e-12)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert (curve.fpr[0], curve.tpr[0], curve.fpr[-1], curve.tpr[-1]) == (0, 0, 1, 1)
    # strictly increasing transform leaves AUC unchanged
    assert roc(np.exp(3 * np.asarray(scores)), truth).auc == pytest.approx(curve.auc, abs=1e-12)


def fake_series(pos, neg, gains=(1, 2)):
    dates = [dt.date(2020, 1, 1) + dt.timedelta(days=12 * k) for k in range(len(pos))]
    pp = {"B": {g: list(pos) for g in gains}, "A": {g: list(neg) for g in gains}}
    ens = {"B": list(pos), "A": list(neg)}
    return TimeseriesResult(dates, tuple(gains), {"A": (0, 0), "B": (1, 1)}, pp, ens, {}, {})


def test_roc_timeseries_labels_by_onset():
    res = fake_series([0.1, 0.2, 0.8, 0.9], [0.1, 0.1, 0.2, 0.1])
    curves = roc_timeseries(res, res.dates[2])
    assert set(curves) == {1, 2, "mean"}
    assert curves["mean"].auc == 1.0
    # onset on the first date: every B date is positive
    assert roc_timeseries(res, res.dates[0])["mean"].auc == pytest.approx(
        mann_whitney([0.1, 0.2, 0.8, 0.9, 0.1, 0.1, 0.2, 0.1], [True] * 4 + [False] * 4))


def test_roc_timeseries_errors():
    res = fake_series([0.0] * 3, [0.0] * 3)
    with pytest.raises(DomainError):
        roc_timeseries(res, None)
    with pytest.raises(DomainError):
        roc_timeseries(res, dt.date(2030, 1, 1))
    with pytest.raises(DomainError):
        roc_timeseries(res, res.dates[0], positive_point="C")


class SourceBright:
    """Deterministic stand-in: probability rises with the fringe count of the patch."""

    def predict_batch(self, patches):
        p = np.asarray(patches, dtype=np.float64)
        jumps = (np.abs(np.diff(p, axis=1)) > 127).mean(axis=(1, 2))
        return 1.0 / (1.0 + np.exp(-400.0 * (jumps - 0.01)))


def test_threshold_sweep_structure_and_determinism():
    cfg = DatasetConfig(rows=224, cols=224, depths_m=(3000.0,), incidences_deg=(23.0,),
                        log10_volumes=(5.0, 5.5, 6.0, 6.5, 7.0, 7.5), alphas=(0.0, 1.0), betas=(0.0,))
    items = build_dataset(cfg)
    res = threshold_sweep(items, SourceBright(), gains=(1, 2), taus=(0.0, np.pi))
    assert len(res.table) == 2 * 4
    assert len(res.scatter) == len(items) * 4
    assert {r["param_kind"] for r in res.table} == {"mu", "tau"}
    fitted = [r for r in res.table if r["n_ill_posed"] == 0]
    assert fitted
    again = threshold_sweep(items, SourceBright(), gains=(1, 2), taus=(0.0, np.pi))
    assert [r["b"] for r in res.table] == pytest.approx([r["b"] for r in again.table], nan_ok=True)
    b = res.thresholds("mu", 1)
    assert set(b) == {(0.0, 0.0), (1.0, 0.0)}
    # mu = 1 and tau = 0 are the same wrap setting
    assert b == res.thresholds("tau", 0.0)
