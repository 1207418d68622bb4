"""Two-class linear discriminant analysis in the (F1, F2) plane and channel voting."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FitError, PredictError

REG_EPS = 1e-6
REG_TRIGGER = 1e-10


@dataclass(frozen=True)
class LdaModel:
    classes: tuple          # (first, second); ties resolve to the first
    means: np.ndarray       # 2 x d
    cov: np.ndarray         # pooled, regularized
    priors: np.ndarray
    w: np.ndarray
    b: float
    regularized: bool = False

    def decision(self, X) -> np.ndarray:
        """wᵀx + b; nonnegative means ``classes[0]``."""
        return np.asarray(X, dtype=float) @ self.w + self.b

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "means": self.means.tolist(),
                "covariance": self.cov.tolist(), "priors": self.priors.tolist(),
                "weights": self.w.tolist(), "bias": self.b, "regularized": self.regularized}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _regularize(S):
    """Add ε·trace/2·I when the smallest eigenvalue is below 1e-10·trace.

    A zero covariance has no scale; it becomes the identity, which turns the
    rule into nearest-mean.
    """
    tr = float(np.trace(S))
    if tr <= 0:
        return np.eye(S.shape[0]), True
    if np.linalg.eigvalsh(S)[0] < REG_TRIGGER * tr:
        return S + REG_EPS * tr / S.shape[0] * np.eye(S.shape[0]), True
    return S, False


def lda_fit(X, y, classes=None) -> LdaModel:
    """Pooled-covariance LDA with class-frequency priors.

    The pooled covariance is the within-class scatter divided by n, so a
    duplicated sample gives the same model.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise FitError("X must be n x d with one label per row")
    if not np.all(np.isfinite(X)):
        raise FitError("features must be finite")
    if classes is None:
        classes = tuple(sorted(set(y.tolist())))
    classes = tuple(classes)
    if len(classes) != 2:
        raise FitError(f"need exactly two classes, got {classes}")
    if set(y.tolist()) - set(classes):
        raise FitError("labels outside the declared classes")
    masks = [y == c for c in classes]
    counts = [int(mk.sum()) for mk in masks]
    if min(counts) < 2:
        raise FitError(f"each class needs >= 2 samples, got {dict(zip(classes, counts))}")
    n = X.shape[0]
    means = np.stack([X[mk].mean(axis=0) for mk in masks])
    S = sum((X[mk] - mu).T @ (X[mk] - mu) for mk, mu in zip(masks, means)) / n
    S, reg = _regularize(S)
    priors = np.array(counts, dtype=float) / n
    w = np.linalg.solve(S, means[0] - means[1])
    b = float(-0.5 * (means[0] + means[1]) @ w + np.log(priors[0] / priors[1]))
    return LdaModel(classes, means, S, priors, w, b, reg)


def lda_predict(model: LdaModel, x):
    """Label and signed distance to the boundary for one point or a batch.

    A point exactly on the boundary gets ``classes[0]``.  If the class means
    coincide the weight vector is zero and the raw discriminant is returned.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise PredictError("features must be finite")
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d = model.decision(X)
    norm = float(np.linalg.norm(model.w))
    score = d / norm if norm > 0 else d
    labels = np.where(d >= 0, model.classes[0], model.classes[1])
    if single:
        return labels[0].item(), float(score[0])
    return labels, score


def vote(labels):
    """Majority label over an odd number of voters."""
    labels = list(labels)
    if not labels or len(labels) % 2 == 0:
        raise ConfigError(f"voting needs an odd number of voters, got {len(labels)}")
    counts = Counter(labels)
    top = max(counts.values())
    winners = [lab for lab in labels if counts[lab] == top]
    return winners[0]


# ---------------------------------------------------------------- batched 2-D LDA
#
# Evaluation fits thousands of tiny models (grid cell x fold).  These routines
# work on sufficient statistics with 2x2 closed forms and agree with lda_fit /
# lda_predict; a test cross-checks them.

def _decide(n0, n1, s0, s1, q0, q1, x):
    """Decision values from per-class counts, sums (…,2) and second moments (…,2,2)."""
    n = n0 + n1
    m0 = s0 / n0[..., None]
    m1 = s1 / n1[..., None]
    W = (q0 - s0[..., :, None] * m0[..., None, :]) + (q1 - s1[..., :, None] * m1[..., None, :])
    S = W / n[..., None, None]
    a, bb, c = S[..., 0, 0], 0.5 * (S[..., 0, 1] + S[..., 1, 0]), S[..., 1, 1]
    tr = a + c
    lam_min = 0.5 * tr - np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + bb ** 2, 0.0))
    zero = tr <= 0
    need = (~zero) & (lam_min < REG_TRIGGER * tr)
    ridge = np.where(need, REG_EPS * tr / 2, 0.0)
    a = np.where(zero, 1.0, a + ridge)
    c = np.where(zero, 1.0, c + ridge)
    bb = np.where(zero, 0.0, bb)
    det = a * c - bb * bb
    dm = m0 - m1
    w0 = (c * dm[..., 0] - bb * dm[..., 1]) / det
    w1 = (a * dm[..., 1] - bb * dm[..., 0]) / det
    mid = 0.5 * (m0 + m1)
    bias = -(mid[..., 0] * w0 + mid[..., 1] * w1) + np.log(n0 / n1)
    return w0[..., None] * x[..., 0] + w1[..., None] * x[..., 1] + bias[..., None]


def _stats(X, pos):
    """Per-class counts, sums and second moments over the sample axis (-2)."""
    pos = pos.astype(float)
    neg = 1.0 - pos
    n0 = pos.sum(-1)
    n1 = neg.sum(-1)
    s0 = np.einsum("...n,...nd->...d", pos, X)
    s1 = np.einsum("...n,...nd->...d", neg, X)
    q0 = np.einsum("...n,...nd,...ne->...de", pos, X, X)
    q1 = np.einsum("...n,...nd,...ne->...de", neg, X, X)
    return n0, n1, s0, s1, q0, q1


def batch_fit_predict(Xtr, pos_tr, Xte):
    """Fit one LDA per leading index and predict its test points.

    ``Xtr`` (..., n, 2), ``pos_tr`` (n,) or (..., n) booleans marking the first
    class, ``Xte`` (..., k, 2).  Returns booleans (..., k): True = first class.
    """
    Xtr = np.asarray(Xtr, dtype=float)
    # centering keeps the moment differences well conditioned
    center = Xtr.mean(axis=-2, keepdims=True)
    Xtr = Xtr - center
    pos = np.broadcast_to(np.asarray(pos_tr, dtype=bool), Xtr.shape[:-1])
    n0, n1, s0, s1, q0, q1 = _stats(Xtr, pos)
    if np.any(n0 < 2) or np.any(n1 < 2):
        raise FitError("each class needs >= 2 samples")
    return _decide(n0, n1, s0, s1, q0, q1, np.asarray(Xte, dtype=float) - center) >= 0


def batch_loo_predict(X, pos):
    """Leave-one-out predictions for every sample: (..., n) booleans, True = first class."""
    X = np.asarray(X, dtype=float)
    X = X - X.mean(axis=-2, keepdims=True)
    pos = np.broadcast_to(np.asarray(pos, dtype=bool), X.shape[:-1])
    n0, n1, s0, s1, q0, q1 = _stats(X, pos)
    p = pos.astype(float)
    q = 1.0 - p
    outer = X[..., :, None] * X[..., None, :]
    n0l = n0[..., None] - p
    n1l = n1[..., None] - q
    if np.any(n0l < 2) or np.any(n1l < 2):
        raise FitError("each class needs >= 2 samples after leaving one out")
    s0l = s0[..., None, :] - p[..., None] * X
    s1l = s1[..., None, :] - q[..., None] * X
    q0l = q0[..., None, :, :] - p[..., None, None] * outer
    q1l = q1[..., None, :, :] - q[..., None, None] * outer
    d = _decide(n0l, n1l, s0l, s1l, q0l, q1l, X[..., :, None, :])
    return d[..., 0] >= 0
