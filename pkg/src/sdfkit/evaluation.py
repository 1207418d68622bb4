"""Nested cross-validation, hyperparameter selection, permutation testing and metrics.

Features are label-free and computed once per subject, so every routine here
works on a precomputed :class:`FeatureCube`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from sklearn.model_selection import StratifiedKFold

from .classify import batch_fit_predict, batch_loo_predict, vote
from .errors import ConfigError, InvariantError, MetricsError

POSITIVE = "PD"
NEGATIVE = "CTL"
TIE_TOL = 1e-12


# ------------------------------------------------------------------- data

@dataclass(frozen=True)
class FeatureCube:
    """Features indexed by (subject, channel, cell, [f1, f2]); a cell is an (m, level) pair."""

    subjects: tuple
    labels: np.ndarray
    channels: tuple
    m_values: tuple
    levels: tuple           # grid order, e.g. 98, 96, ..., 0
    values: np.ndarray      # N x channels x (len(m_values) * len(levels)) x 2
    degenerate: np.ndarray
    stimulus: str = ""

    @property
    def cells(self) -> list:
        return [(m, lv) for m in self.m_values for lv in self.levels]

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def positive(self) -> np.ndarray:
        return self.labels == POSITIVE

    def with_labels(self, labels) -> "FeatureCube":
        return FeatureCube(self.subjects, np.asarray(labels), self.channels, self.m_values,
                           self.levels, self.values, self.degenerate, self.stimulus)

    def channel_subset(self, channels) -> "FeatureCube":
        missing = [c for c in channels if c not in self.channels]
        if missing:
            raise ConfigError(f"channels {missing} not in features; available: {list(self.channels)}")
        idx = [self.channels.index(c) for c in channels]
        return FeatureCube(self.subjects, self.labels, tuple(channels), self.m_values, self.levels,
                           self.values[:, idx], self.degenerate[:, idx], self.stimulus)

    @classmethod
    def from_vectors(cls, vectors, stimulus: str | None = None) -> "FeatureCube":
        vectors = [v for v in vectors if stimulus is None or v.stimulus == stimulus]
        if not vectors:
            raise ConfigError("no feature vectors for the requested stimulus")
        stims = {v.stimulus for v in vectors}
        if len(stims) != 1:
            raise ConfigError(f"features mix stimuli {sorted(stims)}; select one")
        subjects, groups = [], {}
        for v in vectors:
            if v.subject not in groups:
                subjects.append(v.subject)
                groups[v.subject] = v.group
            elif groups[v.subject] != v.group:
                raise ConfigError(f"subject {v.subject!r} has inconsistent group labels")
        bad = [s for s in subjects if groups[s] not in (POSITIVE, NEGATIVE)]
        if bad:
            raise ConfigError(f"subjects without a PD/CTL label: {bad[:5]}")
        channels = tuple(dict.fromkeys(v.channel for v in vectors))
        m_values = tuple(sorted({v.m for v in vectors}))
        levels = tuple(sorted({v.level for v in vectors}, reverse=True))
        si = {s: i for i, s in enumerate(subjects)}
        ci = {c: i for i, c in enumerate(channels)}
        cell = {(m, lv): i for i, (m, lv) in enumerate((m, lv) for m in m_values for lv in levels)}
        shape = (len(subjects), len(channels), len(cell))
        values = np.full(shape + (2,), np.nan)
        degenerate = np.zeros(shape, dtype=bool)
        for v in vectors:
            idx = (si[v.subject], ci[v.channel], cell[(v.m, v.level)])
            values[idx] = (v.f1, v.f2)
            degenerate[idx] = v.degenerate
        if np.isnan(values).any():
            s, c, k = np.argwhere(np.isnan(values[..., 0]))[0]
            m, lv = list(cell)[k]
            raise ConfigError(f"incomplete features: subject {subjects[s]!r}, channel "
                              f"{channels[c]!r}, m={m}, level={lv}")
        return cls(tuple(subjects), np.array([groups[s] for s in subjects]), channels,
                   m_values, levels, values, degenerate, next(iter(stims)))


# ------------------------------------------------------------------ metrics

@dataclass(frozen=True)
class Metrics:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def sensitivity(self) -> float:
        p = self.tp + self.fn
        return self.tp / p if p else float("nan")

    @property
    def specificity(self) -> float:
        n = self.tn + self.fp
        return self.tn / n if n else float("nan")

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn,
                "accuracy": self.accuracy, "sensitivity": self.sensitivity,
                "specificity": self.specificity}


def compute_metrics(y_true, y_pred, positive: str = POSITIVE) -> Metrics:
    y_true = np.asarray(list(y_true))
    y_pred = np.asarray(list(y_pred))
    if y_true.size == 0:
        raise MetricsError("no predictions")
    if y_true.shape != y_pred.shape:
        raise MetricsError("true and predicted labels differ in length")
    t = y_true == positive
    p = y_pred == positive
    return Metrics(tp=int(np.sum(t & p)), fn=int(np.sum(t & ~p)),
                   fp=int(np.sum(~t & p)), tn=int(np.sum(~t & ~p)))


# ---------------------------------------------------------------- selection

def smooth_curve(acc) -> np.ndarray:
    """Mean of each point and its two neighbours along the last axis; the window shrinks at the edges."""
    acc = np.asarray(acc, dtype=float)
    n = acc.shape[-1]
    pad = np.zeros(acc.shape[:-1] + (n + 2,))
    pad[..., 1:-1] = acc
    cnt = np.full(n, 3.0)
    cnt[0] -= 1
    cnt[-1] -= 1
    if n == 1:
        cnt[:] = 1
    return (pad[..., :-2] + pad[..., 1:-1] + pad[..., 2:]) / cnt


def select_cell(acc, levels) -> tuple[int, int]:
    """Best (m index, level index) of an accuracy table shaped (n_m, n_levels).

    Maximizes the 3-point smoothed accuracy along levels; ties go to higher raw
    accuracy, then the level closest to the grid median, then the lowest m,
    then the earlier grid position.
    """
    acc = np.atleast_2d(np.asarray(acc, dtype=float))
    levels = np.asarray(levels, dtype=float)
    if acc.size == 0:
        raise ConfigError("empty hyperparameter grid")
    sm = smooth_curve(acc)
    cand = sm >= sm.max() - TIE_TOL
    raw = np.where(cand, acc, -np.inf)
    cand &= raw >= raw.max() - TIE_TOL
    dist = np.abs(levels - np.median(levels))
    dist2 = np.where(cand, dist[None, :], np.inf)
    cand &= dist2 <= dist2.min() + TIE_TOL
    mi, li = np.argwhere(cand)[0]
    return int(mi), int(li)


def select_level(curve) -> float:
    """Level picked from a ``{level: accuracy}`` curve (keys in grid order)."""
    if not curve:
        raise ConfigError("empty validation curve")
    levels = list(curve.keys())
    _, li = select_cell([list(curve.values())], levels)
    return levels[li]


# ------------------------------------------------------------------- folds

@dataclass
class FoldRecord:
    index: int
    test_ids: list
    inner_train_ids: list
    true: list
    selected: dict = field(default_factory=dict)     # channel -> {"m", "level"}
    predicted: dict = field(default_factory=dict)    # channel -> labels aligned with test_ids
    validation_accuracy: dict = field(default_factory=dict)
    train_accuracy: dict = field(default_factory=dict)
    voted: list | None = None


def _check_leakage(subjects, learn, test):
    overlap = set(learn.tolist()) & set(test.tolist())
    if overlap:
        raise InvariantError(f"held-out subjects {[subjects[i] for i in overlap]} in inner training set")


def _run_channel(values, pos, learn, test, n_m, levels):
    """Nested selection for one channel over folds sharing a learning-set size.

    ``values`` (N, cells, 2); ``learn`` (F, nl); ``test`` (F, nt).  Returns
    selected cell ids, validation curves (F, cells), training accuracy at the
    selected cell and test predictions (F, nt) as booleans (True = PD).
    """
    F = learn.shape[0]
    Xl = values[learn].transpose(0, 2, 1, 3)          # F, cells, nl, 2
    pl = pos[learn]                                  # F, nl
    loo = batch_loo_predict(Xl, pl[:, None, :])
    val = (loo == pl[:, None, :]).mean(axis=-1)       # F, cells
    n_lv = len(levels)
    sel = np.empty(F, dtype=int)
    for f in range(F):
        mi, li = select_cell(val[f].reshape(n_m, n_lv), levels)
        sel[f] = mi * n_lv + li
    rows = np.arange(F)
    Xs = Xl[rows, sel]                                 # F, nl, 2
    Xt = values[test, sel[:, None]]                    # F, nt, 2
    pred = batch_fit_predict(Xs, pl, Xt)
    train_pred = batch_fit_predict(Xs, pl, Xs)
    train_acc = (train_pred == pl).mean(axis=-1)
    return sel, val, train_acc, pred


def _group_splits(splits):
    by_size: dict = {}
    for f, (learn, test) in enumerate(splits):
        by_size.setdefault((len(learn), len(test)), []).append(f)
    return by_size


def _nested(cube: FeatureCube, splits, records: bool = True):
    """Nested CV over arbitrary outer splits; returns per-channel predictions and fold records."""
    N = cube.n_subjects
    pos = cube.positive
    n_m = len(cube.m_values)
    levels = np.asarray(cube.levels, dtype=float)
    n_ch = len(cube.channels)
    preds = np.zeros((n_ch, N), dtype=bool)
    val_curves = np.zeros((n_ch, len(splits), cube.values.shape[2]))
    sel_all = np.zeros((n_ch, len(splits)), dtype=int)
    train_acc = np.zeros((n_ch, len(splits)))
    val_acc = np.zeros((n_ch, len(splits)))
    covered = np.zeros(N, dtype=int)
    for learn, test in splits:
        _check_leakage(cube.subjects, learn, test)
        covered[test] += 1
    for (nl, nt), fids in _group_splits(splits).items():
        learn = np.stack([splits[f][0] for f in fids])
        test = np.stack([splits[f][1] for f in fids])
        for c in range(n_ch):
            sel, val, tr, pred = _run_channel(cube.values[:, c], pos, learn, test, n_m, levels)
            preds[c, test] = pred
            val_curves[c, fids] = val
            sel_all[c, fids] = sel
            train_acc[c, fids] = tr
            val_acc[c, fids] = val[np.arange(len(fids)), sel]
    if np.any(covered != 1):
        raise InvariantError("outer splits do not cover every subject exactly once")
    folds = []
    if records:
        cells = cube.cells
        lab = np.where(preds, POSITIVE, NEGATIVE)
        for f, (learn, test) in enumerate(splits):
            rec = FoldRecord(index=f, test_ids=[cube.subjects[i] for i in test],
                             inner_train_ids=[cube.subjects[i] for i in learn],
                             true=[str(cube.labels[i]) for i in test])
            for c, ch in enumerate(cube.channels):
                m, lv = cells[sel_all[c, f]]
                rec.selected[ch] = {"m": int(m), "level": float(lv)}
                rec.predicted[ch] = [str(x) for x in lab[c, test]]
                rec.validation_accuracy[ch] = float(val_acc[c, f])
                rec.train_accuracy[ch] = float(train_acc[c, f])
            if set(rec.test_ids) & set(rec.inner_train_ids):
                raise InvariantError(f"fold {f}: held-out subject in inner training ids")
            folds.append(rec)
    return preds, val_curves, train_acc, val_acc, folds


def _voted(preds: np.ndarray) -> np.ndarray:
    """Majority over channels of boolean predictions (N,)."""
    n_ch = preds.shape[0]
    if n_ch % 2 == 0:
        raise ConfigError(f"voting needs an odd number of channels, got {n_ch}")
    return preds.sum(axis=0) * 2 > n_ch


def _loo_splits(N):
    idx = np.arange(N)
    return [(np.delete(idx, s), np.array([s])) for s in range(N)]


# ------------------------------------------------------------------ reports

@dataclass
class PermutationReport:
    n: int
    observed: float
    null: np.ndarray
    p_empirical: float
    p_gaussian: float | None
    statistic: str = "max nested-LOOCV accuracy over channels and vote"

    def to_dict(self) -> dict:
        return {"n": self.n, "observed": self.observed, "p_empirical": self.p_empirical,
                "p_gaussian": self.p_gaussian, "statistic": self.statistic,
                "null": [float(x) for x in self.null]}


@dataclass(frozen=True)
class SetSummary:
    mean: float
    std: float
    p5: float

    @classmethod
    def of(cls, x) -> "SetSummary":
        x = np.asarray(x, dtype=float)
        return cls(float(x.mean()), float(x.std()), float(np.percentile(x, 5)))


@dataclass
class PercentileSummary:
    K: int
    repeats: int
    seed: int
    test: dict            # key (channel or "vote") -> SetSummary
    train: dict
    validation: dict
    accuracies: dict      # key -> per-repetition test accuracy

    def to_dict(self) -> dict:
        return {"K": self.K, "repeats": self.repeats, "seed": self.seed,
                "test": {k: asdict(v) for k, v in self.test.items()},
                "train": {k: asdict(v) for k, v in self.train.items()},
                "validation": {k: asdict(v) for k, v in self.validation.items()},
                "accuracies": {k: [float(a) for a in v] for k, v in self.accuracies.items()}}


@dataclass
class CvReport:
    mode: str
    stimulus: str
    channels: tuple
    cells: list
    folds: list
    metrics: dict                      # channel or "vote" -> Metrics
    validation_curves: dict            # channel -> mean inner accuracy per cell
    permutation: PermutationReport | None = None
    kfold: PercentileSummary | None = None
    level_sweep: dict | None = None    # channel -> plain LOOCV accuracy per cell

    @property
    def accuracy(self) -> dict:
        return {k: m.accuracy for k, m in self.metrics.items()}

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "stimulus": self.stimulus, "channels": list(self.channels),
            "cells": [{"m": int(m), "level": float(lv)} for m, lv in self.cells],
            "metrics": {k: m.to_dict() for k, m in self.metrics.items()},
            "validation_curves": {k: [float(a) for a in v]
                                  for k, v in self.validation_curves.items()},
            "level_sweep": None if self.level_sweep is None else
            {k: [float(a) for a in v] for k, v in self.level_sweep.items()},
            "folds": [asdict(f) for f in self.folds],
            "permutation": None if self.permutation is None else self.permutation.to_dict(),
            "kfold": None if self.kfold is None else self.kfold.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


# --------------------------------------------------------------- procedures

def _want_vote(cube: FeatureCube, voting):
    if voting is None:
        return len(cube.channels) > 1 and len(cube.channels) % 2 == 1
    if voting and len(cube.channels) % 2 == 0:
        raise ConfigError(f"voting needs an odd number of channels, got {len(cube.channels)}")
    return bool(voting)


def _check_class_sizes(cube: FeatureCube, held_out_per_class: int) -> dict:
    """Inner LOOCV fits need >= 2 subjects per class after removing the outer test set and one more."""
    counts = {g: int(np.sum(cube.labels == g)) for g in (POSITIVE, NEGATIVE)}
    if min(counts.values()) - held_out_per_class < 3:
        raise ConfigError(f"class sizes {counts} are too small for nested cross-validation "
                          f"with {held_out_per_class} held out per class")
    return counts


def nested_loocv(cube: FeatureCube, voting: bool | None = None) -> CvReport:
    """Outer leave-one-subject-out, inner LOOCV per grid cell, smoothness-based selection.

    Each channel is selected and refit independently; with an odd channel count
    the per-channel predictions are also combined by majority vote.
    """
    if not cube.values.shape[2]:
        raise ConfigError("empty hyperparameter grid")
    _check_class_sizes(cube, 1)
    do_vote = _want_vote(cube, voting)
    splits = _loo_splits(cube.n_subjects)
    preds, curves, _, _, folds = _nested(cube, splits)
    truth = cube.labels
    metrics = {}
    for c, ch in enumerate(cube.channels):
        metrics[ch] = compute_metrics(truth, np.where(preds[c], POSITIVE, NEGATIVE))
    if do_vote:
        v = _voted(preds)
        metrics["vote"] = compute_metrics(truth, np.where(v, POSITIVE, NEGATIVE))
        for rec in folds:
            rec.voted = [vote([rec.predicted[ch][j] for ch in cube.channels])
                         for j in range(len(rec.test_ids))]
    return CvReport(mode="nested-loocv", stimulus=cube.stimulus, channels=cube.channels,
                    cells=cube.cells, folds=folds, metrics=metrics,
                    validation_curves={ch: curves[c].mean(axis=0)
                                       for c, ch in enumerate(cube.channels)})


def level_sweep(cube: FeatureCube) -> dict:
    """Plain LOOCV accuracy at every fixed grid cell, per channel (no selection)."""
    pos = cube.positive
    out = {}
    for c, ch in enumerate(cube.channels):
        X = cube.values[:, c].transpose(1, 0, 2)     # cells, N, 2
        out[ch] = (batch_loo_predict(X, pos) == pos).mean(axis=-1)
    return out


def _accuracy_statistic(cube: FeatureCube, do_vote: bool) -> float:
    preds, *_ = _nested(cube, _loo_splits(cube.n_subjects), records=False)
    pos = cube.positive
    accs = [(p == pos).mean() for p in preds]
    if do_vote:
        accs.append((_voted(preds) == pos).mean())
    return float(max(accs))


def task_rng(seed: int, index: int) -> np.random.Generator:
    """Independent random stream for one task, fixed by (seed, task index)."""
    return np.random.default_rng([int(seed), int(index)])


def _parallel_map(fn, items, workers: int):
    if workers and workers > 1:
        from joblib import Parallel, delayed
        return Parallel(n_jobs=workers)(delayed(fn)(it) for it in items)
    return [fn(it) for it in items]


def permutation_test(cube: FeatureCube, n: int = 1000, seed: int = 0,
                     voting: bool | None = None, workers: int = 1) -> PermutationReport:
    """Label-permutation null for the best nested-LOOCV accuracy; selection is rerun per draw."""
    if n < 1:
        raise ConfigError("number of permutations must be >= 1")
    do_vote = _want_vote(cube, voting)
    observed = _accuracy_statistic(cube, do_vote)

    def one(i):
        perm = task_rng(seed, i).permutation(cube.n_subjects)
        return _accuracy_statistic(cube.with_labels(cube.labels[perm]), do_vote)

    null = np.array(_parallel_map(one, range(n), workers))
    return permutation_report(observed, null)


def permutation_report(observed: float, null) -> PermutationReport:
    null = np.asarray(null, dtype=float)
    n = null.size
    p_emp = (1 + int(np.sum(null >= observed))) / (n + 1)
    p_gauss = None
    sd = float(null.std(ddof=1)) if n > 1 else 0.0
    if sd > 0:
        p_gauss = float(stats.norm.sf((observed - null.mean()) / sd))
    return PermutationReport(n=n, observed=float(observed), null=null,
                             p_empirical=p_emp, p_gaussian=p_gauss)


def stratified_splits(labels, K: int, rng_state: int):
    skf = StratifiedKFold(n_splits=K, shuffle=True, random_state=rng_state)
    placeholder = np.zeros(len(labels))
    return [(np.sort(a), np.sort(b)) for a, b in skf.split(placeholder, labels)]


def repeated_kfold(cube: FeatureCube, K: int = 5, repeats: int = 1000, seed: int = 0,
                   voting: bool | None = None, workers: int = 1) -> PercentileSummary:
    """Repeated stratified K-fold outer loop with the same inner LOOCV selection."""
    if K < 2:
        raise ConfigError("K must be >= 2")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    counts = {g: int(np.sum(cube.labels == g)) for g in (POSITIVE, NEGATIVE)}
    if K > min(counts.values()):
        raise ConfigError(f"K={K} exceeds the smallest class size {min(counts.values())}")
    _check_class_sizes(cube, -(-min(counts.values()) // K))
    do_vote = _want_vote(cube, voting)
    pos = cube.positive
    keys = list(cube.channels) + (["vote"] if do_vote else [])

    def one(r):
        state = int(task_rng(seed, r).integers(2**31 - 1))
        splits = stratified_splits(cube.labels, K, state)
        preds, _, tr, va, _ = _nested(cube, splits, records=False)
        test = [(p == pos).mean() for p in preds]
        train = list(tr.mean(axis=1))
        val = list(va.mean(axis=1))
        if do_vote:
            test.append((_voted(preds) == pos).mean())
            train.append(float("nan"))
            val.append(float("nan"))
        return test, train, val

    rows = _parallel_map(one, range(repeats), workers)
    test = np.array([r[0] for r in rows])
    train = np.array([r[1] for r in rows])
    val = np.array([r[2] for r in rows])
    summary = PercentileSummary(K=K, repeats=repeats, seed=seed, test={}, train={},
                                validation={}, accuracies={})
    for j, k in enumerate(keys):
        summary.test[k] = SetSummary.of(test[:, j])
        summary.accuracies[k] = test[:, j]
        if k != "vote":
            summary.train[k] = SetSummary.of(train[:, j])
            summary.validation[k] = SetSummary.of(val[:, j])
    return summary
