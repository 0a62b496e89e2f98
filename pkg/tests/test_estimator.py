import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from memtrain.estimator import CrossbarClassifier


@pytest.fixture(scope="module")
def xy(mnist):
    train, _ = mnist
    X = train.images[:800].reshape(800, -1)
    return X, train.labels[:800]


def test_params_roundtrip():
    clf = CrossbarClassifier(max_epochs=2, seed=3)
    params = clf.get_params()
    assert params["max_epochs"] == 2 and params["seed"] == 3
    c2 = clone(clf).set_params(lr=0.01)
    assert c2.lr == 0.01 and clf.lr == 0.004


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CrossbarClassifier().predict(np.zeros((1, 784)))


@pytest.fixture(scope="module")
def fitted(xy):
    X, y = xy
    return CrossbarClassifier(max_epochs=1, batches_per_epoch=10, lr=0.02).fit(X, y)


def test_fit_predict(fitted, xy):
    X, y = xy
    pred = fitted.predict(X[:50])
    assert pred.shape == (50,) and set(pred) <= set(fitted.classes_)
    proba = fitted.predict_proba(X[:50])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert 0.0 <= fitted.score(X[:200], y[:200]) <= 1.0
    assert len(fitted.history_) == 1
    assert fitted.n_features_in_ == 784


def test_image_shaped_input(fitted, xy):
    X, _ = xy
    a = fitted.decision_function(X[:5])
    b = fitted.decision_function(X[:5].reshape(5, 1, 28, 28))
    np.testing.assert_array_equal(a, b)


def test_string_labels(xy):
    X, y = xy
    names = np.array(["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"])
    clf = CrossbarClassifier(mode="software", max_epochs=1, batches_per_epoch=3).fit(X, names[y])
    assert set(clf.predict(X[:20])) <= set(names)


def test_input_validation(fitted, xy):
    X, y = xy
    with pytest.raises(ValueError, match="features"):
        fitted.predict(np.zeros((2, 100)))
    with pytest.raises(ValueError, match="255"):
        fitted.predict(np.full((2, 784), 300.0))
    with pytest.raises(ValueError):
        CrossbarClassifier().fit(X[:10], y[:9])
    with pytest.raises(ValueError, match="at least"):
        CrossbarClassifier().fit(X[:20], y[:20])
