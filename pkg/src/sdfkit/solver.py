"""Lasso path by least-angle regression, sparsity slicing and least-squares debiasing.

Penalized problem, with centered columns and intercept ``mean(y)``::

    min_beta  1/2 ||y - mean(y) - X beta||^2 + alpha ||beta||_1

Internally every alpha is kept in these "correlation units".  The
``normalized-by-L`` convention divides the quadratic term by the number of
samples, so a user-facing ``alpha_f`` is multiplied by ``L`` before solving.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, InvariantError
from .model import RegressorBundle, map_back

log = logging.getLogger(__name__)

CONVENTIONS = ("normalized-by-L", "paper-eq7")
DEFAULT_CONVENTION = "normalized-by-L"

PIVOT_TOL = 1e-12
RESIDUAL_TOL = 1e-10
REFRESH_EVERY = 16


def alpha_scale(convention: str, n_samples: int) -> float:
    """Factor converting a user-facing alpha to correlation units."""
    if convention == "paper-eq7":
        return 1.0
    if convention == "normalized-by-L":
        return float(n_samples)
    raise ConfigError(f"unknown alpha convention {convention!r}; expected one of {CONVENTIONS}")


def alpha_max(X, y) -> float:
    """Smallest alpha at which the lasso solution is zero: ``max_j |x_j^T (y - mean(y))|``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    r = y - y.mean()
    if X.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(X.T @ r)))


def lasso_objective(X, y, beta, alpha) -> float:
    """Penalized objective in correlation units."""
    r = y - y.mean() - X @ beta
    return 0.5 * float(r @ r) + alpha * float(np.abs(beta).sum())


@dataclass(frozen=True)
class PathKnot:
    """Lasso solution at one breakpoint; ``alpha`` in correlation units."""

    alpha: float
    active: np.ndarray
    coef: np.ndarray
    intercept: float

    def dense(self, n_features: int) -> np.ndarray:
        beta = np.zeros(n_features)
        beta[self.active] = self.coef
        return beta

    @property
    def l1(self) -> float:
        return float(np.abs(self.coef).sum())


@dataclass
class SolutionPath:
    knots: list
    n_features: int
    n_samples: int
    alpha_max: float
    alpha_final: float
    convention: str = DEFAULT_CONVENTION
    excluded: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def alphas(self) -> np.ndarray:
        return np.array([k.alpha for k in self.knots])

    @property
    def scale(self) -> float:
        return alpha_scale(self.convention, self.n_samples)

    def coef_at(self, alpha: float, snap: bool = False) -> tuple[np.ndarray, tuple[int, int]]:
        """Coefficients at ``alpha`` (correlation units) and the bracketing knot indices.

        Between knots the path is linear in alpha, so interpolation is exact.
        Below the last knot the final solution is returned.
        """
        alphas = self.alphas
        if alpha >= alphas[0]:
            return self.knots[0].dense(self.n_features), (0, 0)
        last = len(alphas) - 1
        if alpha <= alphas[last]:
            return self.knots[last].dense(self.n_features), (last, last)
        # alphas strictly decreasing: find k with alphas[k] > alpha >= alphas[k+1]
        k = int(np.searchsorted(-alphas, -alpha, side="right")) - 1
        k = min(max(k, 0), last - 1)
        a0, a1 = alphas[k], alphas[k + 1]
        if snap:
            j = k if (a0 - alpha) <= (alpha - a1) else k + 1
            return self.knots[j].dense(self.n_features), (j, j)
        b0 = self.knots[k].dense(self.n_features)
        b1 = self.knots[k + 1].dense(self.n_features)
        t = (a0 - alpha) / (a0 - a1)
        return b0 + t * (b1 - b0), (k, k + 1)

    def to_csv(self, X, y) -> str:
        """One row per knot: alpha (both conventions), support size, L1 norm, objective."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["knot", "alpha", "alpha_user", "support_size", "l1_norm", "objective"])
        for i, kn in enumerate(self.knots):
            beta = kn.dense(self.n_features)
            wr.writerow([i, repr(kn.alpha), repr(kn.alpha / self.scale), kn.active.size,
                         repr(kn.l1), repr(lasso_objective(X, y, beta, kn.alpha))])
        return buf.getvalue()


def _chol_append(R, k, G_col, g_jj):
    """Extend the lower Cholesky factor ``R[:k,:k]`` by one column; return the pivot square."""
    if k == 0:
        piv2 = g_jj
        if piv2 > 0:
            R[0, 0] = np.sqrt(piv2)
        return piv2
    w = solve_triangular(R[:k, :k], G_col, lower=True, check_finite=False)
    piv2 = g_jj - float(w @ w)
    if piv2 > 0:
        R[k, :k] = w
        R[k, k] = np.sqrt(piv2)
    return piv2


def lars_path(X, y, alpha_f: float = 0.0, convention: str = DEFAULT_CONVENTION,
              solvable=None, max_iter: int | None = None) -> SolutionPath:
    """Full lasso path from ``alpha_max`` down to ``alpha_f`` by LARS with the lasso modification.

    Parameters
    ----------
    X : ndarray (n, p)
        Regressors with centered columns.
    y : ndarray (n,)
        Response; the intercept is ``mean(y)``.
    alpha_f : float
        Final penalty, in the units of ``convention``.
    solvable : bool ndarray (p,), optional
        Columns allowed to enter; the rest stay at zero.

    Returns
    -------
    SolutionPath with knot alphas in correlation units, strictly decreasing.
    """
    # column-major: fast X.T @ v and contiguous column gathers
    X = np.asfortranarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ConfigError(f"y must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ConfigError("y contains non-finite values")
    if alpha_f < 0:
        raise ConfigError(f"alpha_f must be >= 0, got {alpha_f!r}")
    scale = alpha_scale(convention, n)
    alpha_stop = alpha_f * scale

    allowed = np.ones(p, bool) if solvable is None else np.array(solvable, bool)
    if not allowed.any():
        raise ConfigError("no solvable column")
    y_mean = float(y.mean())
    yc = y - y_mean
    r = yc.copy()
    c = X.T @ yc
    c[~allowed] = 0.0
    amax = float(np.max(np.abs(c)))

    def make_path(knots, reason):
        return SolutionPath(knots=knots, n_features=p, n_samples=n, alpha_max=amax,
                            alpha_final=alpha_stop, convention=convention,
                            excluded=~allowed, diagnostics=diagnostics, stop_reason=reason)

    diagnostics: list = []
    empty = np.zeros(0, int)
    if amax == 0.0 or np.linalg.norm(yc) < RESIDUAL_TOL:
        return make_path([PathKnot(0.0, empty, np.zeros(0), y_mean)], "zero-response")
    knots = [PathKnot(amax, empty, np.zeros(0), y_mean)]
    if amax <= alpha_stop:
        return make_path(knots, "alpha_f>=alpha_max")

    max_active = min(n - 1, int(allowed.sum()))
    if max_iter is None:
        max_iter = 8 * max(max_active, 1) + 100
    beta = np.zeros(p)
    in_active = np.zeros(p, bool)
    active: list[int] = []
    signs: list[float] = []
    R = np.zeros((max_active + 1, max_active + 1))
    alpha = amax

    def try_add(j):
        k = len(active)
        G_col = X[:, active].T @ X[:, j] if k else np.zeros(0)
        g_jj = float(X[:, j] @ X[:, j])
        piv2 = _chol_append(R, k, G_col, g_jj)
        if not piv2 > PIVOT_TOL * max(g_jj, 1e-300):
            allowed[j] = False
            diagnostics.append({"event": "degenerate-column", "column": int(j),
                                "alpha": float(alpha), "pivot2": float(piv2)})
            log.debug("column %d excluded: singular active Gram (pivot^2=%g)", j, piv2)
            return False
        active.append(j)
        signs.append(float(np.sign(c[j])))
        in_active[j] = True
        return True

    def refactor():
        k = len(active)
        if k == 0:
            return
        XA = X[:, active]
        R[:k, :k] = np.linalg.cholesky(XA.T @ XA)

    # first entrant: lowest column id among the maximal correlations
    try_add(int(np.flatnonzero(np.abs(c) == amax)[0]))
    just_dropped, drop_sign = -1, 0.0
    reason = "alpha_f"
    for it in range(max_iter):
        k = len(active)
        s = np.array(signs)
        Rk = R[:k, :k]
        d = solve_triangular(Rk.T, solve_triangular(Rk, s, lower=True, check_finite=False),
                             lower=False, check_finite=False)
        u = X[:, active] @ d
        a = X.T @ u

        # entering candidates
        cand = allowed & ~in_active
        if len(active) >= max_active:
            # the active Gram is full rank; the segment runs on without new entries
            cand[:] = False
        gamma_add, j_add = np.inf, -1
        idx = np.flatnonzero(cand)
        if idx.size:
            cj, aj = c[idx], a[idx]
            with np.errstate(divide="ignore", invalid="ignore"):
                den1, den2 = 1.0 - aj, 1.0 + aj
                g1 = np.where(den1 > 1e-12, (alpha - cj) / den1, np.inf)
                g2 = np.where(den2 > 1e-12, (alpha + cj) / den2, np.inf)
            if just_dropped >= 0:
                # a variable that just left sits on the +-alpha boundary it left from;
                # only a later crossing of the opposite boundary can bring it back
                hit = idx == just_dropped
                if drop_sign > 0:
                    g1[hit] = np.inf
                else:
                    g2[hit] = np.inf
            g = np.maximum(np.minimum(g1, g2), 0.0)
            pos = int(np.argmin(g))
            gamma_add, j_add = float(g[pos]), int(idx[pos])

        # leaving candidates: coefficient hits zero
        gamma_drop, j_drop = np.inf, -1
        bA = beta[active]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where((bA != 0) & (d != 0), -bA / d, np.inf)
        z[z <= 0] = np.inf
        if z.size and np.isfinite(z.min()):
            pos = int(np.argmin(z))
            gamma_drop, j_drop = float(z[pos]), active[pos]

        gamma_end = alpha - alpha_stop
        gamma = min(gamma_add, gamma_drop, gamma_end)
        event = "end" if gamma == gamma_end else ("drop" if gamma == gamma_drop else "add")

        beta[active] += gamma * d
        alpha -= gamma
        if event == "drop":
            beta[j_drop] = 0.0
        elif event == "end":
            alpha = alpha_stop
        if (it + 1) % REFRESH_EVERY == 0:
            r = yc - X[:, active] @ beta[active]
            c = X.T @ r
        else:
            r -= gamma * u
            c -= gamma * a

        if event == "drop":
            pos = active.index(j_drop)
            drop_sign = signs.pop(pos)
            del active[pos]
            in_active[j_drop] = False
            refactor()
            just_dropped = j_drop
        else:
            just_dropped = -1

        nz = np.array(sorted(i for i in active if beta[i] != 0), dtype=int)
        knot = PathKnot(float(alpha), nz, beta[nz].copy(), y_mean)
        if gamma == 0.0 and len(knots) > 1:
            knots[-1] = knot
        elif gamma == 0.0:
            pass
        else:
            knots.append(knot)

        if event == "end":
            reason = "alpha_f"
            break
        if np.linalg.norm(r) < RESIDUAL_TOL:
            reason = "zero-residual"
            break
        if event == "add":
            try_add(j_add)
    else:
        reason = "max-iter"
        diagnostics.append({"event": "max-iter", "iterations": max_iter})
        log.warning("lars_path stopped after %d iterations", max_iter)
    return make_path(knots, reason)


def kkt_violation(X, y, knot: PathKnot, excluded=None) -> float:
    """Largest violation of the lasso optimality conditions at a knot (correlation units)."""
    X = np.asarray(X, dtype=float)
    beta = knot.dense(X.shape[1])
    c = X.T @ (y - y.mean() - X @ beta)
    ok = np.ones(X.shape[1], bool) if excluded is None else ~np.asarray(excluded, bool)
    act = (beta != 0) & ok
    ina = (beta == 0) & ok
    worst = 0.0
    if act.any():
        worst = max(worst, float(np.max(np.abs(c[act] - knot.alpha * np.sign(beta[act])))))
    if ina.any():
        worst = max(worst, float(np.max(np.abs(c[ina]) - knot.alpha)))
    return worst


@dataclass
class SparsitySlice:
    level: float
    alpha: float
    alpha_user: float
    beta_std: np.ndarray
    bracket: tuple
    degenerate: bool = False
    beta_debiased: np.ndarray | None = None
    intercept: float | None = None
    residual_norm: float | None = None
    residual_norm_std: float | None = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta_std)


def level_grid(step: float) -> np.ndarray:
    """Levels 100, 100-step, ..., 0 (percent)."""
    if not step > 0:
        raise ConfigError(f"level step must be positive, got {step!r}")
    n = 100.0 / step
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"level step {step} must divide 100")
    n = int(round(n))
    return np.array([100.0 - i * step for i in range(n + 1)])


def slice_path(path: SolutionPath, alpha_f: float | None = None, step: float = 2,
               snap: bool = False) -> list:
    """Solutions at the linear sparsity grid between ``alpha_max`` (100 %) and ``alpha_f`` (0 %).

    ``alpha_f`` is in the path's user convention; by default the path's own
    final alpha is used.
    """
    levels = level_grid(step)
    a_lo = path.alpha_final if alpha_f is None else alpha_f * path.scale
    a_hi = path.alpha_max
    out = []
    if a_lo >= a_hi:
        zero = np.zeros(path.n_features)
        return [SparsitySlice(level=100.0, alpha=a_hi, alpha_user=a_hi / path.scale,
                              beta_std=zero, bracket=(0, 0), degenerate=True)]
    for s in levels:
        a = a_lo + (a_hi - a_lo) * s / 100.0
        if s == 100:
            beta, br = np.zeros(path.n_features), (0, 0)
        else:
            beta, br = path.coef_at(a, snap=snap)
        out.append(SparsitySlice(level=float(s), alpha=float(a), alpha_user=float(a / path.scale),
                                 beta_std=beta, bracket=br))
    return out


def debias_refit(sl: SparsitySlice, bundle: RegressorBundle, y) -> SparsitySlice:
    """Least-squares refit of ``y`` on the raw support columns plus an intercept.

    Fills ``beta_debiased`` (raw coordinates), ``intercept``, ``residual_norm``
    and, for comparison, ``residual_norm_std`` of the un-refitted slice.
    """
    y = np.asarray(y, dtype=float)
    y_mean = float(y.mean())
    yc = y - y_mean
    support = sl.support
    beta_orig = map_back(sl.beta_std, bundle)
    sl.residual_norm_std = float(np.linalg.norm(yc - (bundle.phi - bundle.means) @ beta_orig)) \
        if support.size else float(np.linalg.norm(yc))
    out = np.zeros(bundle.n_columns)
    if support.size == 0:
        sl.beta_debiased = out
        sl.intercept = y_mean
        sl.residual_norm = float(np.linalg.norm(yc))
        return sl
    PS = bundle.phi[:, support]
    mu = PS.mean(axis=0)
    coef, *_ = np.linalg.lstsq(PS - mu, yc, rcond=None)
    out[support] = coef
    sl.beta_debiased = out
    sl.intercept = y_mean - float(mu @ coef)
    sl.residual_norm = float(np.linalg.norm(y - sl.intercept - PS @ coef))
    if not set(np.flatnonzero(out)) <= set(support):
        raise InvariantError("debiased support escapes the lasso support")
    return sl


def solve_slices(bundle: RegressorBundle, y, alpha_f: float, step: float = 2,
                 convention: str = DEFAULT_CONVENTION, snap: bool = False,
                 debias: bool = True):
    """Path, slices and debiasing for one signal on a standardized bundle."""
    if not bundle.is_standardized:
        raise ConfigError("bundle must be standardized before solving")
    y = np.asarray(y, dtype=float)
    if y.shape != (bundle.L,):
        raise ConfigError(f"signal length {y.shape} does not match L={bundle.L}")
    path = lars_path(bundle.X, y, alpha_f=alpha_f, convention=convention,
                     solvable=bundle.solvable)
    slices = slice_path(path, step=step, snap=snap)
    if debias:
        for sl in slices:
            debias_refit(sl, bundle, y)
    return path, slices

