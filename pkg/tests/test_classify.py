import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import confusion_loop, lda_discriminants
from sdfkit.classify import (batch_fit_predict, batch_loo_predict, lda_fit, lda_predict, vote)
from sdfkit.errors import ConfigError, FitError, PredictError

CLASSES = ("PD", "CTL")


def _data(rng, n0=20, n1=20, shift=1.0):
    X = np.vstack([rng.normal(size=(n0, 2)) + shift, rng.normal(size=(n1, 2)) - shift])
    y = np.array(["PD"] * n0 + ["CTL"] * n1)
    return X, y


def test_matches_closed_form_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X, y = _data(rng, int(rng.integers(3, 30)), int(rng.integers(3, 30)), rng.uniform(0, 2))
        X = X @ rng.normal(size=(2, 2))
        model = lda_fit(X, y, CLASSES)
        for x in rng.normal(size=(10, 2)) * 3:
            d0, d1 = lda_discriminants(X, y, CLASSES, x)
            assert float(model.decision(x)) == pytest.approx(d0 - d1, abs=1e-10, rel=1e-10)


def test_separable_clusters_bisector():
    rng = np.random.default_rng(1)
    X, y = _data(rng, 200, 200, shift=4.0)
    model = lda_fit(X, y, CLASSES)
    labels, _ = lda_predict(model, X)
    assert np.all(labels == y)
    # boundary through the origin, perpendicular to (1, 1)
    direction = model.w / np.linalg.norm(model.w)
    assert direction @ np.array([1, 1]) / np.sqrt(2) > 0.95
    assert abs(model.b) / np.linalg.norm(model.w) < 0.3


def test_duplicated_dataset_same_model():
    X, y = _data(np.random.default_rng(2))
    a = lda_fit(X, y, CLASSES)
    b = lda_fit(np.vstack([X, X]), np.concatenate([y, y]), CLASSES)
    np.testing.assert_allclose(a.means, b.means, rtol=1e-14)
    np.testing.assert_allclose(a.cov, b.cov, rtol=1e-13)
    np.testing.assert_allclose(a.w, b.w, rtol=1e-12)
    assert a.b == pytest.approx(b.b, rel=1e-12, abs=1e-14)


def test_class_mean_predicts_its_class():
    X, y = _data(np.random.default_rng(3))
    model = lda_fit(X, y, CLASSES)
    assert lda_predict(model, model.means[0])[0] == "PD"
    assert lda_predict(model, model.means[1])[0] == "CTL"


def test_boundary_point_goes_to_first_class():
    X = np.array([[1.0, 0], [1, 1], [-1, 0], [-1, 1]])
    y = np.array(["PD", "PD", "CTL", "CTL"])
    model = lda_fit(X, y, CLASSES)
    label, score = lda_predict(model, [0.0, 0.37])
    assert label == "PD" and score == 0.0
    model = lda_fit(X, y, ("CTL", "PD"))
    assert lda_predict(model, [0.0, 0.37])[0] == "CTL"


def test_batch_accuracy_matches_confusion_oracle():
    X, y = _data(np.random.default_rng(4), shift=0.5)
    model = lda_fit(X, y, CLASSES)
    labels, _ = lda_predict(model, X)
    tp, fn, fp, tn = confusion_loop(y, labels)
    assert np.mean(labels == y) == (tp + tn) / len(y)


def test_singular_covariance_is_regularized():
    X = np.array([[0.0, 1], [1, 1], [2, 1], [0, 3], [1, 3], [2, 3]])
    y = np.array(["PD"] * 3 + ["CTL"] * 3)
    model = lda_fit(X, y, CLASSES)
    assert model.regularized
    assert np.linalg.eigvalsh(model.cov)[0] > 0
    assert list(lda_predict(model, X)[0]) == list(y)


def test_zero_covariance_becomes_identity():
    X = np.array([[1.0, 1], [1, 1], [0, 0], [0, 0]])
    y = np.array(["PD", "PD", "CTL", "CTL"])
    model = lda_fit(X, y, CLASSES)
    np.testing.assert_array_equal(model.cov, np.eye(2))


def test_errors():
    X = np.zeros((4, 2))
    with pytest.raises(FitError):
        lda_fit(X, np.array(["PD"] * 4))
    with pytest.raises(FitError):
        lda_fit(X, np.array(["PD", "CTL", "CTL", "CTL"]), CLASSES)
    model = lda_fit(*_data(np.random.default_rng(5)), CLASSES)
    with pytest.raises(PredictError):
        lda_predict(model, [np.nan, 0.0])
    with pytest.raises(PredictError):
        lda_predict(model, [np.inf, 0.0])


def test_model_dump():
    model = lda_fit(*_data(np.random.default_rng(6)), CLASSES)
    text = model.dumps()
    assert '"covariance"' in text and '"weights"' in text and '"means"' in text


# -------------------------------------------------------------------- voting

def test_vote_examples():
    assert vote(["PD", "PD", "CTL"]) == "PD"
    assert vote(["CTL", "CTL", "CTL"]) == "CTL"
    assert vote(["PD"]) == "PD"
    assert vote(["CTL", "PD", "PD", "CTL", "PD"]) == "PD"


@pytest.mark.parametrize("labels", [[], ["PD", "CTL"], ["PD"] * 4])
def test_vote_even_count(labels):
    with pytest.raises(ConfigError):
        vote(labels)


# ---------------------------------------------------------------- properties

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    X, y = _data(rng, int(rng.integers(3, 15)), int(rng.integers(3, 15)), rng.uniform(0, 1.5))
    T = rng.normal(size=(10, 2)) * 2
    A = rng.normal(size=(2, 2))
    if abs(np.linalg.det(A)) < 0.2:
        A += np.eye(2)
    c = rng.normal(size=2) * 5
    a = lda_predict(lda_fit(X, y, CLASSES), T)
    b = lda_predict(lda_fit(X @ A.T + c, y, CLASSES), T @ A.T + c)
    # points within roundoff of the boundary may flip
    ok = np.abs(a[1]) > 1e-9 * (1 + np.abs(T).max())
    np.testing.assert_array_equal(a[0][ok], b[0][ok])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_fit_is_order_independent(seed):
    rng = np.random.default_rng(seed)
    X, y = _data(rng, 8, 11, 0.7)
    perm = rng.permutation(len(y))
    a = lda_fit(X, y, CLASSES)
    b = lda_fit(X[perm], y[perm], CLASSES)
    np.testing.assert_allclose(a.w, b.w, rtol=1e-10)
    assert a.b == pytest.approx(b.b, rel=1e-10, abs=1e-12)
    T = rng.normal(size=(20, 2))
    np.testing.assert_array_equal(lda_predict(a, T)[0], lda_predict(b, T)[0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_batched_matches_scalar(seed):
    rng = np.random.default_rng(seed)
    X, y = _data(rng, int(rng.integers(3, 12)), int(rng.integers(3, 12)), rng.uniform(0, 1))
    X = X * rng.uniform(0.01, 100) + rng.normal() * 50
    pos = y == "PD"
    T = X + rng.normal(size=X.shape) * 0.3
    got = batch_fit_predict(X, pos, T)
    model = lda_fit(X, y, CLASSES)
    labels, score = lda_predict(model, T)
    ok = np.abs(score) > 1e-8 * np.abs(X).max()
    np.testing.assert_array_equal(got[ok], (labels == "PD")[ok])

    loo = batch_loo_predict(X, pos)
    for i in range(len(y)):
        keep = np.arange(len(y)) != i
        mdl = lda_fit(X[keep], y[keep], CLASSES)
        lab, sc = lda_predict(mdl, X[i])
        if abs(sc) > 1e-8 * np.abs(X).max():
            assert loo[i] == (lab == "PD")
