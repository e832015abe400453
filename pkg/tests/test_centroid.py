import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epsfp.centroid import nearest_centroid_fit, nearest_centroid_predict, nearest_centroid_predict_batch
from epsfp.errors import ValidationError


def test_centroids_are_unit_class_means():
    x = np.array([[1.0, 0, 0], [3.0, 0, 0], [0, 2.0, 2.0]])
    m = nearest_centroid_fit(x, [7, 7, 3])
    assert m.class_ids.tolist() == [3, 7]
    np.testing.assert_allclose(m.centroids, [[0, 2 ** -0.5, 2 ** -0.5], [1, 0, 0]])


def test_predict_returns_id_and_cosine():
    m = nearest_centroid_fit(np.eye(3), [10, 20, 30])
    dev, s = nearest_centroid_predict(m, np.array([0.1, 0.9, 0.0]))
    assert dev == 20 and s == pytest.approx(0.9 / np.hypot(0.1, 0.9))


def test_accepts_two_row_tensors():
    rng = np.random.default_rng(0)
    x = rng.random((6, 2, 8))
    m = nearest_centroid_fit(x, [0, 0, 0, 1, 1, 1])
    ids, _ = nearest_centroid_predict_batch(m, x)
    assert m.centroids.shape == (2, 16) and ids.shape == (6,)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_scale_invariant_and_self_consistent(seed, scale):
    rng = np.random.default_rng(seed)
    protos = rng.random((4, 10)) + np.eye(4, 10) * 5
    x = np.repeat(protos, 3, axis=0) + rng.normal(0, 0.01, (12, 10))
    y = np.repeat([2, 5, 9, 11], 3)
    m = nearest_centroid_fit(x, y)
    a = nearest_centroid_predict_batch(m, x)
    b = nearest_centroid_predict_batch(m, x * scale)
    assert np.array_equal(a[0], y) and np.array_equal(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12)
    assert np.all(a[1] <= 1 + 1e-12)


def test_tie_goes_to_lowest_id():
    m = nearest_centroid_fit(np.array([[1.0, 0], [0, 1.0]]), [4, 8])
    assert nearest_centroid_predict(m, np.array([1.0, 1.0]))[0] == 4


def test_errors():
    with pytest.raises(ValidationError):
        nearest_centroid_fit(np.ones((2, 3)), [1])
    with pytest.raises(ValidationError):
        nearest_centroid_fit(np.empty((0, 3)), [])
    with pytest.raises(ValidationError):
        nearest_centroid_fit(np.array([[1.0, 0], [-1.0, 0]]), [1, 1])
    m = nearest_centroid_fit(np.eye(2), [0, 1])
    with pytest.raises(ValidationError):
        nearest_centroid_predict(m, np.zeros(2))
