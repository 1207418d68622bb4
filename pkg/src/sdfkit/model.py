"""Harmonic-oscillator bank and the linear regressor that maps (x0, U) to a signal.

The bank is a block-diagonal discrete state-space system::

    x[k+1] = A x[k] + B u[k]
    y[k]   = C x[k]

with one 2x2 block per mode (position, velocity).  Stacking the explicit
solution for k = 0..L-1 gives ``y = phi1 @ x0 + phi2 @ vec(U)`` where ``vec(U)``
is time-major: entry ``k * m + i`` is the excitation of mode ``i`` at sample
``k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InvariantError

SCHEMES = ("exact", "euler")
DEFAULT_SCHEME = "exact"

KIND_INITIAL = 0
KIND_EXCITATION = 1

DROP_NORM = 1e-12


@dataclass(frozen=True)
class ModeBlocks:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def discretize_mode(omega: float, fs: float, scheme: str = DEFAULT_SCHEME) -> ModeBlocks:
    """Discrete matrices of a single undamped oscillator.

    ``scheme="euler"`` gives the forward-Euler blocks
    ``a = [[1, Ts], [-Ts*omega**2, 1]]``; ``scheme="exact"`` replaces ``a`` with
    the sampled rotation, which keeps the impulse response at unit amplitude.
    ``b = [0, Ts]^T`` and ``c = [fs*omega, 0]`` in both cases.
    """
    if not omega > 0 or not np.isfinite(omega):
        raise ConfigError(f"omega must be positive, got {omega!r}")
    if not fs > 0 or not np.isfinite(fs):
        raise ConfigError(f"fs must be positive, got {fs!r}")
    ts = 1.0 / fs
    if scheme == "euler":
        a = np.array([[1.0, ts], [-ts * omega**2, 1.0]])
    elif scheme == "exact":
        th = omega * ts
        a = np.array([[np.cos(th), np.sin(th) / omega],
                      [-omega * np.sin(th), np.cos(th)]])
    else:
        raise ConfigError(f"unknown discretization scheme {scheme!r}; expected one of {SCHEMES}")
    b = np.array([0.0, ts])
    c = np.array([fs * omega, 0.0])
    return ModeBlocks(a, b, c)


@dataclass(frozen=True)
class OscillatorBank:
    """m decoupled oscillators sampled at ``fs``."""

    m: int
    fs: float
    omegas: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    scheme: str = DEFAULT_SCHEME
    blocks: tuple = field(default=(), repr=False, compare=False)

    @property
    def Ts(self) -> float:
        return 1.0 / self.fs

    @property
    def freqs_hz(self) -> np.ndarray:
        return self.omegas / (2 * np.pi)


def bank_from_omegas(omegas, fs: float, scheme: str = DEFAULT_SCHEME) -> OscillatorBank:
    omegas = np.asarray(omegas, dtype=float).ravel()
    if omegas.size < 1:
        raise ConfigError("at least one mode is required")
    if np.any(np.diff(omegas) <= 0):
        raise ConfigError("angular frequencies must be strictly increasing")
    m = omegas.size
    blocks = tuple(discretize_mode(w, fs, scheme) for w in omegas)
    A = np.zeros((2 * m, 2 * m))
    B = np.zeros((2 * m, m))
    C = np.zeros((1, 2 * m))
    for i, blk in enumerate(blocks):
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = blk.a
        B[2 * i:2 * i + 2, i] = blk.b
        C[0, 2 * i:2 * i + 2] = blk.c
    for arr in (omegas, A, B, C):
        arr.setflags(write=False)
    return OscillatorBank(m=m, fs=float(fs), omegas=omegas, A=A, B=B, C=C,
                          scheme=scheme, blocks=blocks)


def build_bank(f_low: float, f_high: float, m: int, fs: float,
               scheme: str = DEFAULT_SCHEME) -> OscillatorBank:
    """Bank of ``m`` modes evenly spaced over ``[f_low, f_high]`` Hz, endpoints included."""
    if not fs > 0:
        raise ConfigError(f"fs must be positive, got {fs!r}")
    if int(m) != m or m < 2:
        raise ConfigError(f"m must be an integer >= 2, got {m!r}")
    if not (0 < f_low < f_high <= fs / 2):
        raise ConfigError(
            f"band ({f_low}, {f_high}) Hz must satisfy 0 < f_low < f_high <= fs/2 = {fs / 2}")
    omegas = 2 * np.pi * np.linspace(f_low, f_high, int(m))
    return bank_from_omegas(omegas, fs, scheme)


def _excitation_grid(bank: OscillatorBank, x0, U):
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float)
    if x0.shape != (2 * bank.m,):
        raise ConfigError(f"x0 must have shape ({2 * bank.m},), got {x0.shape}")
    if U.ndim != 2 or U.shape[0] != bank.m:
        raise ConfigError(f"U must have shape ({bank.m}, L-1), got {U.shape}")
    return x0, U


def simulate_states(bank: OscillatorBank, x0, U) -> np.ndarray:
    """State trajectory, shape ``(L, 2m)``, by forward recursion."""
    x0, U = _excitation_grid(bank, x0, U)
    L = U.shape[1] + 1
    a = np.stack([blk.a for blk in bank.blocks])  # (m, 2, 2)
    ts = bank.Ts
    states = np.empty((L, bank.m, 2))
    x = x0.reshape(bank.m, 2).copy()
    states[0] = x
    for k in range(L - 1):
        x = np.einsum("mij,mj->mi", a, x)
        x[:, 1] += ts * U[:, k]
        states[k + 1] = x
    return states.reshape(L, 2 * bank.m)


def simulate(bank: OscillatorBank, x0, U) -> np.ndarray:
    """Output ``y`` of length L = U.shape[1] + 1 for initial state x0 and excitations U (m x L-1)."""
    return simulate_states(bank, x0, U) @ bank.C[0]


def impulse_kernels(bank: OscillatorBank, n: int) -> np.ndarray:
    """``g[i, t] = c_i a_i^t b_i`` for t < n; shape (m, n)."""
    g = np.empty((bank.m, n))
    for i, blk in enumerate(bank.blocks):
        x = blk.b.copy()
        for t in range(n):
            g[i, t] = blk.c @ x
            x = blk.a @ x
    return g


def phi2_column(bank: OscillatorBank, L: int, mode: int, k: int) -> np.ndarray:
    """One excitation column generated on demand (streaming alternative to a dense phi2)."""
    if not (0 <= mode < bank.m and 0 <= k < L - 1):
        raise ConfigError(f"column (mode={mode}, k={k}) outside the grid")
    col = np.zeros(L)
    col[k + 1:] = impulse_kernels(bank, L - 1 - k)[mode]
    return col


@dataclass(frozen=True)
class RegressorBundle:
    """Regressor matrix ``phi = [phi1 | phi2]`` plus per-column metadata.

    A raw bundle has ``w is None``; :func:`standardize` returns a copy that also
    carries the centered, normalized and block-weighted matrix ``X``.
    """

    bank: OscillatorBank
    L: int
    phi: np.ndarray
    kind: np.ndarray
    mode: np.ndarray
    time_index: np.ndarray
    component: np.ndarray
    w: float | None = None
    X: np.ndarray | None = field(default=None, repr=False)
    means: np.ndarray | None = field(default=None, repr=False)
    norms: np.ndarray | None = field(default=None, repr=False)
    blockweight: np.ndarray | None = field(default=None, repr=False)
    dropped: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.bank.m

    @property
    def fs(self) -> float:
        return self.bank.fs

    @property
    def n_initial(self) -> int:
        return 2 * self.bank.m

    @property
    def n_columns(self) -> int:
        return self.phi.shape[1]

    @property
    def phi1(self) -> np.ndarray:
        return self.phi[:, :self.n_initial]

    @property
    def phi2(self) -> np.ndarray:
        return self.phi[:, self.n_initial:]

    @property
    def times(self) -> np.ndarray:
        """Excitation timestamp in seconds per column (NaN for initial-state columns)."""
        t = self.time_index / self.fs
        return np.where(self.kind == KIND_EXCITATION, t, np.nan)

    @property
    def is_standardized(self) -> bool:
        return self.X is not None

    @property
    def solvable(self) -> np.ndarray:
        """Columns the solver may activate: not dropped and carrying nonzero weight."""
        self._require_std()
        return ~self.dropped & (self.blockweight > 0)

    def _require_std(self):
        if self.X is None:
            raise ConfigError("bundle is not standardized")

    def column_id(self, mode: int, k: int) -> int:
        return self.n_initial + k * self.m + mode

    def split_beta(self, beta):
        """Split a full coefficient vector into ``(x0, U)`` with U of shape (m, L-1)."""
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n_columns,):
            raise ConfigError(f"beta must have length {self.n_columns}")
        x0 = beta[:self.n_initial]
        U = beta[self.n_initial:].reshape(self.L - 1, self.m).T
        return x0, U

    def join_beta(self, x0, U) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        U = np.asarray(U, dtype=float)
        return np.concatenate([x0, U.T.ravel()])

    def unstandardize_column(self, j: int) -> np.ndarray:
        self._require_std()
        if self.dropped[j] or self.blockweight[j] == 0:
            raise ConfigError(f"column {j} carries no information after standardization")
        return self.X[:, j] * self.norms[j] / self.blockweight[j] + self.means[j]


def build_phi(bank: OscillatorBank, L: int) -> RegressorBundle:
    """Dense regressor matrix for signals of length ``L``."""
    if int(L) != L or L < 2:
        raise ConfigError(f"L must be an integer >= 2, got {L!r}")
    L = int(L)
    m = bank.m
    phi1 = np.empty((L, 2 * m))
    row = bank.C[0].copy()
    for j in range(L):
        phi1[j] = row
        row = row @ bank.A
    g = impulse_kernels(bank, L - 1)
    phi2 = np.zeros((L, m * (L - 1)))
    for k in range(L - 1):
        phi2[k + 1:, k * m:(k + 1) * m] = g[:, :L - 1 - k].T
    phi = np.hstack([phi1, phi2])

    n_init = 2 * m
    kind = np.concatenate([np.full(n_init, KIND_INITIAL), np.full(m * (L - 1), KIND_EXCITATION)])
    mode = np.concatenate([np.repeat(np.arange(m), 2), np.tile(np.arange(m), L - 1)])
    time_index = np.concatenate([np.zeros(n_init, int), np.repeat(np.arange(L - 1), m)])
    component = np.concatenate([np.tile([0, 1], m), np.full(m * (L - 1), -1)])
    for arr in (phi, kind, mode, time_index, component):
        arr.setflags(write=False)
    return RegressorBundle(bank=bank, L=L, phi=phi, kind=kind, mode=mode,
                           time_index=time_index, component=component)


def standardize(bundle: RegressorBundle, w: float) -> RegressorBundle:
    """Center and unit-normalize every column, then weight phi1 by w and phi2 by 1-w.

    Columns whose centered norm is below 1e-12 are flagged in ``dropped`` and
    zeroed; the solver never activates them.
    """
    if not (0.0 <= w <= 1.0):
        raise ConfigError(f"w must lie in [0, 1], got {w!r}")
    phi = bundle.phi
    means = phi.mean(axis=0)
    centered = phi - means
    norms = np.linalg.norm(centered, axis=0)
    dropped = norms < DROP_NORM
    blockweight = np.where(bundle.kind == KIND_INITIAL, w, 1.0 - w)
    scale = np.divide(blockweight, norms, out=np.zeros_like(norms), where=~dropped)
    X = centered * scale
    for arr in (X, means, norms, dropped, blockweight):
        arr.setflags(write=False)
    return replace(bundle, w=float(w), X=X, means=means, norms=norms,
                   blockweight=blockweight, dropped=dropped)


def map_back(beta_std, bundle: RegressorBundle) -> np.ndarray:
    """Coefficients in the standardized space -> coefficients on the raw columns of phi."""
    bundle._require_std()
    beta_std = np.asarray(beta_std, dtype=float)
    if beta_std.shape != (bundle.n_columns,):
        raise ConfigError(f"beta must have length {bundle.n_columns}")
    dead = ~bundle.solvable
    if np.any(beta_std[dead] != 0):
        raise InvariantError("nonzero coefficient on a dropped column")
    scale = np.divide(bundle.blockweight, bundle.norms,
                      out=np.zeros_like(bundle.norms), where=~dead)
    return beta_std * scale
