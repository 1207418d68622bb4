"""Background/forced decomposition of a fitted ERP and the two sparse dynamical features."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, InvariantError
from .model import DEFAULT_SCHEME, RegressorBundle, build_bank, build_phi, standardize
from .solver import DEFAULT_CONVENTION, SparsitySlice, level_grid, solve_slices

FEATURE_COLUMNS = ("subject", "group", "channel", "stimulus", "m", "level_percent",
                   "f1_s", "f2", "degenerate_flag")


@dataclass(frozen=True)
class FeatureIntervals:
    i1: tuple = (0.0, 0.5)
    i2: tuple = (0.18, 0.5)

    def __post_init__(self):
        for name in ("i1", "i2"):
            a, b = getattr(self, name)
            if not (0 <= a < b):
                raise ConfigError(f"{name} must satisfy 0 <= start < end, got ({a}, {b})")
            object.__setattr__(self, name, (float(a), float(b)))

    def validate(self, L: int, fs: float) -> None:
        for name in ("i1", "i2"):
            a, b = getattr(self, name)
            if b > L / fs + 1e-12:
                raise ConfigError(f"{name} = [{a}, {b}) exceeds the window [0, {L / fs})")


@dataclass(frozen=True)
class VmsDecomposition:
    x0: np.ndarray        # 2m initial state, raw coordinates
    U: np.ndarray         # m x (L-1) excitation grid
    yhat_x0: np.ndarray
    yhat_U: np.ndarray
    intercept: float
    fs: float

    @property
    def yhat(self) -> np.ndarray:
        return self.yhat_x0 + self.yhat_U + self.intercept

    @property
    def L(self) -> int:
        return self.yhat_x0.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.U.shape[1]) / self.fs


def decompose(sl: SparsitySlice, bundle: RegressorBundle) -> VmsDecomposition:
    """Split the debiased coefficients into initial-state and excitation parts and their outputs."""
    if sl.beta_debiased is None:
        raise ConfigError("slice must be debiased before decomposition")
    beta = sl.beta_debiased
    n1 = bundle.n_initial
    x0, U = bundle.split_beta(beta)
    # Centering is absorbed by the intercept so both parts are raw products.
    yhat_x0 = bundle.phi1 @ beta[:n1]
    yhat_U = bundle.phi2 @ beta[n1:]
    dec = VmsDecomposition(x0=x0, U=U, yhat_x0=yhat_x0, yhat_U=yhat_U,
                           intercept=float(sl.intercept), fs=bundle.fs)
    direct = bundle.phi @ beta + sl.intercept
    scale = max(1.0, float(np.max(np.abs(direct))))
    if np.max(np.abs(dec.yhat - direct)) > 1e-10 * scale:
        raise InvariantError("decomposition is not additive")
    return dec


def _grid_mask(n: int, fs: float, interval) -> np.ndarray:
    t = np.arange(n) / fs
    return (t >= interval[0] - 1e-12) & (t < interval[1] - 1e-12)


def extract_f1(dec: VmsDecomposition, i1=(0.0, 0.5), absolute: bool = False) -> tuple[float, bool]:
    """Time of the lowest excitation inside ``i1``; returns ``(seconds, degenerate)``.

    Ties go to the earliest time, then the lowest mode.  With no negative
    excitation the signed minimum is a zero and the result is flagged
    degenerate.  ``absolute=True`` takes the smallest nonzero magnitude instead.
    """
    U = dec.U
    mask = _grid_mask(U.shape[1], dec.fs, i1)
    ks = np.flatnonzero(mask)
    if ks.size == 0:
        raise ConfigError(f"interval {i1} contains no excitation grid point")
    sub = U[:, ks]
    if absolute:
        mag = np.abs(sub)
        nz = mag > 0
        if not nz.any():
            return float(ks[0] / dec.fs), True
        vals = np.where(nz, mag, np.inf)
    else:
        vals = sub
    # column-major flat order is time first, then mode
    flat = vals.T.ravel()
    idx = int(np.argmin(flat))
    k = ks[idx // U.shape[0]]
    degenerate = (not absolute) and not (flat[idx] < 0)
    return float(k / dec.fs), bool(degenerate)


def extract_f2(dec: VmsDecomposition, i2=(0.18, 0.5), nonzero_only: bool = False) -> float:
    """Mean excitation over ``i2``: sum of all U entries there over the number of time-grid points.

    The grid covers the L sample instants of the window.  ``nonzero_only``
    divides by the count of nonzero entries instead.
    """
    U = dec.U
    n_grid = int(_grid_mask(dec.L, dec.fs, i2).sum())
    mask = _grid_mask(U.shape[1], dec.fs, i2)
    sub = U[:, mask]
    total = float(sub.sum())
    if nonzero_only:
        nnz = int(np.count_nonzero(sub))
        return total / nnz if nnz else 0.0
    return total / n_grid if n_grid else 0.0


@dataclass(frozen=True)
class SdfVector:
    subject: str
    group: str | None
    channel: str
    stimulus: str
    m: int
    level: float
    f1: float
    f2: float
    degenerate: bool = False

    def row(self) -> list:
        return [self.subject, self.group or "", self.channel, self.stimulus, self.m,
                _fmt_level(self.level), repr(self.f1), repr(self.f2), int(self.degenerate)]


def _fmt_level(level: float) -> str:
    return str(int(level)) if float(level).is_integer() else repr(float(level))


@lru_cache(maxsize=8)
def standardized_bundle(f_low: float, f_high: float, m: int, fs: float, L: int, w: float,
                        scheme: str = DEFAULT_SCHEME) -> RegressorBundle:
    """Shared, read-only regressor bundle for one (band, m, fs, L, w, scheme)."""
    bank = build_bank(f_low, f_high, m, fs, scheme=scheme)
    return standardize(build_phi(bank, L), w)


@dataclass(frozen=True)
class FeatureSettings:
    """The subset of the run configuration that determines features."""

    stimulus: str = "target"
    channels: tuple = ("CP1", "CPz", "CP2")
    m_grid: tuple = (40,)
    band: tuple = (1.0, 30.0)
    w: float = 0.55
    alpha_f: float = 8e-4
    step: float = 2.0
    intervals: FeatureIntervals = FeatureIntervals()
    convention: str = DEFAULT_CONVENTION
    scheme: str = DEFAULT_SCHEME
    snap: bool = False
    f1_absolute: bool = False
    f2_nonzero_only: bool = False

    def feature_levels(self) -> np.ndarray:
        return level_grid(self.step)[1:]


def decompose_signal(y, bundle: RegressorBundle, settings: FeatureSettings,
                     all_levels: bool = False):
    """Solve, slice and debias one ERP; returns ``(level, slice, decomposition)`` per feature level.

    ``all_levels`` adds the empty 100 % level.  A degenerate path (zero or
    constant ERP) yields zero decompositions at every level, each flagged
    through ``slice.degenerate``.
    """
    path, slices = solve_slices(bundle, y, settings.alpha_f, step=settings.step,
                                convention=settings.convention, snap=settings.snap)
    levels = level_grid(settings.step) if all_levels else settings.feature_levels()
    if len(slices) == 1 and slices[0].degenerate:
        sl = slices[0]
        dec = decompose(sl, bundle)
        return path, [(float(s), sl, dec) for s in levels]
    by_level = {sl.level: sl for sl in slices}
    return path, [(float(s), by_level[s], decompose(by_level[s], bundle)) for s in levels]


def features_from(dec: VmsDecomposition, settings: FeatureSettings, degenerate_path: bool):
    f1, deg = extract_f1(dec, settings.intervals.i1, absolute=settings.f1_absolute)
    f2 = extract_f2(dec, settings.intervals.i2, nonzero_only=settings.f2_nonzero_only)
    return f1, f2, deg or degenerate_path


def featurize(erps, settings: FeatureSettings) -> list:
    """One SdfVector per (channel, m, level) for a subject's ERP set."""
    missing = [c for c in settings.channels if c not in erps.channel_names]
    if missing:
        raise ConfigError(f"channels {missing} not in dataset; available: "
                          f"{', '.join(erps.channel_names)}")
    L, fs = erps.L, erps.fs
    settings.intervals.validate(L, fs)
    out = []
    for ch in settings.channels:
        y = erps.erp(settings.stimulus, ch)
        for m in settings.m_grid:
            bundle = standardized_bundle(float(settings.band[0]), float(settings.band[1]), int(m),
                                         float(fs), int(L), float(settings.w), settings.scheme)
            _, records = decompose_signal(y, bundle, settings)
            for level, sl, dec in records:
                f1, f2, deg = features_from(dec, settings, sl.degenerate)
                out.append(SdfVector(erps.subject, erps.group, ch, settings.stimulus, int(m),
                                     level, f1, f2, deg))
    return out


def features_to_csv(vectors, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(FEATURE_COLUMNS)
    for v in vectors:
        wr.writerow(v.row())
    return buf.getvalue()


def read_features_csv(path) -> list:
    from .errors import LoadError

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1) if not ln.startswith("#")]
    if not lines:
        raise LoadError("empty feature file", path)
    reader = csv.reader(ln for _, ln in lines)
    header = next(reader)
    if tuple(h.strip() for h in header) != FEATURE_COLUMNS:
        raise LoadError(f"feature header must be {','.join(FEATURE_COLUMNS)}", path, lines[0][0])
    for (lineno, _), row in zip(lines[1:], reader):
        if len(row) != len(FEATURE_COLUMNS):
            raise LoadError(f"expected {len(FEATURE_COLUMNS)} fields", path, lineno)
        try:
            out.append(SdfVector(row[0], row[1] or None, row[2], row[3], int(row[4]),
                                 float(row[5]), float(row[6]), float(row[7]), row[8] == "1"))
        except ValueError as exc:
            raise LoadError(f"bad value: {exc}", path, lineno) from None
    return out
