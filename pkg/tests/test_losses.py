import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference
from rulnet.errors import ShapeError, ValidationError
from rulnet.losses import (
    LossConfig,
    accuracy_band,
    asym_loss,
    asym_loss_grad,
    metrics_report,
    nasa_s_score,
    regression_metrics,
    squared_loss,
    training_loss,
)


def single(eps):
    return asym_loss([eps], [0.0])[0][0]


def test_reference_values():
    under, over = single(-20.0), single(20.0)
    assert abs(under - 3.66) <= 0.01
    assert abs(over - 6.39) <= 0.01
    assert abs(over / under - 1.74) <= 0.01 * 1.74
    assert single(0.0) == 0.0


def test_gradient_examples():
    assert asym_loss_grad([-13.0], [0.0])[0] == pytest.approx(-math.e / 13, abs=1e-12)
    assert asym_loss_grad([-13.0], [0.0])[0] == pytest.approx(-0.2091, abs=1e-4)
    assert asym_loss_grad([10.0], [0.0])[0] == pytest.approx(0.2718, abs=1e-4)
    assert asym_loss_grad([5.0], [5.0])[0] == pytest.approx(0.1)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    yhat = rng.uniform(0, 130, size=200)
    y = rng.uniform(0, 130, size=200)
    keep = np.abs(yhat - y) > 1e-3
    yhat, y = yhat[keep], y[keep]
    # elementwise loss, so difference each sample on its own rather than the sum
    numeric = np.empty_like(yhat)
    for k, target in enumerate(y):
        point = yhat[k:k + 1].copy()
        numeric[k] = central_difference(lambda: asym_loss(point, [target])[0][0], point)[0]
    analytic = asym_loss_grad(yhat, y)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-12)
    assert rel.max() < 1e-6


def test_training_loss_variants():
    yhat, y = np.array([1.0, 4.0]), np.array([0.0, 6.0])
    per, mean, grad = training_loss(yhat, y, LossConfig(kind="squared"))
    assert per.tolist() == [1.0, 4.0] and mean == 2.5
    assert grad.tolist() == [1.0, -2.0]
    per, mean, grad = training_loss(yhat, y)
    np.testing.assert_allclose(grad, asym_loss_grad(yhat, y) / 2)
    assert squared_loss(yhat, y)[1] == 2.5


def test_s_score_examples():
    assert nasa_s_score([0, 0], [0, 0]) == 0.0
    assert nasa_s_score([10.0], [0.0]) == pytest.approx(math.e - 1, abs=1e-12)
    assert nasa_s_score([-13.0, 10.0], [0.0, 0.0]) == pytest.approx(2 * (math.e - 1), abs=1e-12)
    assert nasa_s_score([-13.0, 10.0], [0.0, 0.0]) == pytest.approx(3.4366, abs=1e-4)
    with pytest.raises(ShapeError):
        nasa_s_score([1, 2], [1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20),
       st.lists(st.floats(-100, 100), min_size=1, max_size=20))
def test_s_score_additive_and_nonnegative(a, b):
    za, zb = np.zeros(len(a)), np.zeros(len(b))
    whole = nasa_s_score(np.concatenate([a, b]), np.concatenate([za, zb]))
    parts = nasa_s_score(a, za) + nasa_s_score(b, zb)
    assert whole >= 0
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 200))
def test_over_estimation_costs_more(e):
    assert single(e) > single(-e) > 0


def test_metrics_examples():
    y = np.array([10.0, 50.0, 90.0, 130.0])
    m = regression_metrics(y, y)
    assert m["rmse"] == 0 and m["mae"] == 0 and m["r2"] == 1.0
    m = regression_metrics(y + 3, y)
    assert m["rmse"] == pytest.approx(3) and m["mae"] == pytest.approx(3)
    assert m["mean_error"] == pytest.approx(3) and m["std_error"] == pytest.approx(0, abs=1e-12)


def test_metric_sentinels():
    m = regression_metrics([1.0, 2.0], [5.0, 5.0])
    assert m["r2"] is None
    m = regression_metrics([1.0, 2.0, 3.0], [0.0, 4.0, 2.0])
    assert m["mape_excluded"] == 1
    assert m["mape"] == pytest.approx(100 * (2 / 4 + 1 / 2) / 2)
    assert regression_metrics([1.0, 2.0], [0.0, 0.0])["mape"] is None


def test_report_bundle():
    rep = metrics_report([5.0, -25.0], [0.0, 0.0])
    assert rep.band_fraction == 0.5
    assert rep.negative_fraction == 0.5
    assert rep.s_score == pytest.approx(nasa_s_score([5.0, -25.0], [0.0, 0.0]))
    assert set(rep.to_dict()) >= {"rmse", "mae", "mape", "r2", "s_score"}


def test_accuracy_band():
    assert accuracy_band([1, 2], [1, 2]) == 1.0
    assert accuracy_band([5, -25], [0, 0], 10) == 0.5
    assert accuracy_band([0, 1e-9, 3], [0, 0, 0], 0) == pytest.approx(1 / 3)


def test_config_validation():
    with pytest.raises(ValidationError):
        LossConfig(h1=10, h2=13)
    with pytest.raises(ValidationError):
        LossConfig(kind="huber")
