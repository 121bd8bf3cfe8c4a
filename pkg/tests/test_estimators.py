import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import sphere_shell
from implicitpcc.estimators import ColorField, OccupancyField

SMALL = dict(resolution_bits=5, cube_bits=2, steps=200, batch_size=256,
             levels=3, hidden_width=16, block_width=8, residual_blocks=1,
             threshold_steps=15)


def test_params_roundtrip_and_clone():
    est = OccupancyField(**SMALL)
    assert est.get_params()["hidden_width"] == 16
    twin = clone(est).set_params(seed=3)
    assert twin.seed == 3 and est.seed == 0


def test_unfitted():
    with pytest.raises(NotFittedError):
        OccupancyField().predict([[0, 0, 0]])


def test_occupancy_fit_predict():
    cloud = sphere_shell()
    est = OccupancyField(**SMALL).fit(cloud.points)
    proba = est.predict_proba(cloud.points)
    assert proba.shape == (len(cloud), 2)
    np.testing.assert_allclose(proba.sum(1), 1.0)
    labels = est.predict(cloud.points)
    assert set(np.unique(labels)) <= {0, 1}
    rec = est.reconstruct()
    # reconstruct and predict agree on the candidates
    assert est.predict(rec.points).all()


def test_occupancy_rejects_out_of_grid():
    with pytest.raises(ValueError):
        OccupancyField(resolution_bits=3).fit([[8, 0, 0]])


def test_color_field():
    cloud = sphere_shell()
    y = np.tile([40.0, 80.0, 120.0], (len(cloud), 1))
    est = ColorField(resolution_bits=5, steps=100, batch_size=128, levels=2,
                     hidden_width=16, block_width=8, residual_blocks=1,
                     omega0=30.0).fit(cloud.points, y)
    pred = est.predict(cloud.points)
    assert pred.shape == (len(cloud), 3)
    b = est.predict_bytes(cloud.points)
    np.testing.assert_array_equal(b, np.clip(np.floor(pred + 0.5), 0, 255))
    with pytest.raises(ValueError):
        ColorField(resolution_bits=5).fit(cloud.points, y + 300)
