"""Run configuration: defaults, JSON config files, validation and hashing."""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .features import FeatureIntervals, FeatureSettings
from .model import SCHEMES
from .signals import STIMULI
from .solver import CONVENTIONS, level_grid

OUTPUT_ENV = "SDFKIT_OUTPUT_DIR"
DEFAULT_OUTPUT = "sdf-out"
_CV = re.compile(r"^(nested-loocv|kfold:(\d+)x(\d+)|permtest:(\d+))$")

# Fields that do not influence any computed number.
_UNHASHED = {"output_dir", "workers", "features"}


@dataclass(frozen=True)
class RunConfig:
    manifest: str | None = None
    stimulus: str = "target"
    channels: tuple = ("CP1", "CPz", "CP2")
    m_grid: tuple = (40,)
    band: tuple = (1.0, 30.0)
    w: float = 0.55
    alpha_f: float = 8e-4
    level_step: float = 2.0
    i1: tuple = (0.0, 0.5)
    i2: tuple = (0.18, 0.5)
    cv: str = "nested-loocv"
    seed: int = 0
    output_dir: str = ""
    workers: int = 1
    convention: str = "normalized-by-L"
    scheme: str = "exact"
    snap: bool = False
    f1_absolute: bool = False
    f2_nonzero_only: bool = False
    voting: bool | None = None
    features: str | None = None
    # synthetic data generation
    n_subjects: int = 50
    latency_shift: float = 0.06
    amplitude_factor: float = 0.6
    snr_db: float = 10.0

    def validate(self) -> "RunConfig":
        if self.stimulus not in STIMULI:
            raise ConfigError(f"stimulus must be one of {STIMULI}, got {self.stimulus!r}")
        if not self.channels or len(set(self.channels)) != len(self.channels):
            raise ConfigError("channels must be a non-empty list of distinct names")
        if not self.m_grid or any(int(m) != m or m < 2 for m in self.m_grid):
            raise ConfigError(f"m grid must hold integers >= 2, got {self.m_grid}")
        lo, hi = self.band
        if not 0 < lo < hi:
            raise ConfigError(f"band must satisfy 0 < low < high, got {self.band}")
        if not 0 <= self.w <= 1:
            raise ConfigError(f"w must lie in [0, 1], got {self.w}")
        if not self.alpha_f >= 0:
            raise ConfigError(f"alpha_f must be >= 0, got {self.alpha_f}")
        level_grid(self.level_step)
        FeatureIntervals(tuple(self.i1), tuple(self.i2))
        self.cv_mode()
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"convention must be one of {CONVENTIONS}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.voting and len(self.channels) % 2 == 0:
            raise ConfigError(f"voting needs an odd number of channels, got {len(self.channels)}")
        if self.n_subjects < 4 or self.n_subjects % 2:
            raise ConfigError("n_subjects must be an even number >= 4")
        return self

    def cv_mode(self) -> tuple:
        """``("nested-loocv",)``, ``("kfold", K, repeats)`` or ``("permtest", n)``."""
        mt = _CV.match(self.cv)
        if not mt:
            raise ConfigError(f"cv must be nested-loocv, kfold:KxR or permtest:N, got {self.cv!r}")
        if mt.group(2):
            return ("kfold", int(mt.group(2)), int(mt.group(3)))
        if mt.group(4):
            return ("permtest", int(mt.group(4)))
        return ("nested-loocv",)

    @property
    def out(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)

    def feature_settings(self) -> FeatureSettings:
        return FeatureSettings(stimulus=self.stimulus, channels=tuple(self.channels),
                               m_grid=tuple(int(m) for m in self.m_grid),
                               band=tuple(float(b) for b in self.band), w=float(self.w),
                               alpha_f=float(self.alpha_f), step=float(self.level_step),
                               intervals=FeatureIntervals(tuple(self.i1), tuple(self.i2)),
                               convention=self.convention, scheme=self.scheme, snap=self.snap,
                               f1_absolute=self.f1_absolute,
                               f2_nonzero_only=self.f2_nonzero_only)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return _digest(d)

    def feature_hash(self) -> str:
        """Hash of everything that determines decompositions and features (not the stimulus)."""
        keys = ("manifest", "channels", "m_grid", "band", "w", "alpha_f", "level_step", "i1",
                "i2", "convention", "scheme", "snap", "f1_absolute", "f2_nonzero_only")
        d = self.to_dict()
        if d["manifest"]:
            d["manifest"] = str(Path(d["manifest"]).resolve())
        return _digest({k: d[k] for k in keys})


def _digest(d: dict) -> str:
    text = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


_TUPLES = {"channels", "m_grid", "band", "i1", "i2"}
_FLOATS = {"w", "alpha_f", "level_step", "latency_shift", "amplitude_factor", "snr_db"}
_INTS = {"seed", "workers", "n_subjects"}
_BOOLS = {"snap", "f1_absolute", "f2_nonzero_only", "voting"}


def coerce(key: str, value):
    names = {f.name for f in fields(RunConfig)}
    if key not in names:
        raise ConfigError(f"unknown configuration key {key!r}")
    if key in _TUPLES:
        if isinstance(value, str):
            value = [v for v in value.replace(";", ",").split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        if key == "channels":
            return tuple(str(v).strip() for v in value)
        try:
            conv = int if key == "m_grid" else float
            return tuple(conv(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} holds a non-numeric value: {value!r}") from None
    if key in _BOOLS:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if key in _FLOATS or key in _INTS:
        conv = float if key in _FLOATS else int
        if isinstance(value, bool):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        try:
            out = conv(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
        if conv is int and out != value and not isinstance(value, str):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return out
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def merge(file_values: dict | None, flag_values: dict) -> RunConfig:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    cfg = RunConfig()
    for source in (file_values or {}, flag_values):
        upd = {k: coerce(k, v) for k, v in source.items() if v is not None}
        try:
            cfg = replace(cfg, **upd)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    return cfg.validate()
