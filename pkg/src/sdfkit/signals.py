"""Continuous EEG ingestion: band-pass filtering, stimulus-locked segmentation and ERP averaging."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, LoadError

log = logging.getLogger(__name__)

STIMULI = ("standard", "target", "novel")
GROUPS = ("PD", "CTL")
DEFAULT_WINDOW = (0.0, 0.5)


@dataclass(frozen=True)
class ContinuousRecording:
    data: np.ndarray  # channels x samples, microvolts
    fs: float
    channel_names: tuple
    events: tuple = ()  # (time_s, stimulus)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] != len(self.channel_names):
            raise ConfigError("data must be channels x samples matching channel_names")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ConfigError("channel names must be unique")
        if not self.fs > 0:
            raise ConfigError(f"fs must be positive, got {self.fs!r}")
        duration = data.shape[1] / self.fs
        for t, stim in self.events:
            if not (0 <= t < duration):
                raise ConfigError(f"event at {t} s outside recording of {duration} s")
            if stim not in STIMULI:
                raise ConfigError(f"unknown stimulus type {stim!r}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "events", tuple((float(t), s) for t, s in self.events))

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class EpochSet:
    """Stimulus-locked segments; ``epochs[stimulus]`` has shape (n_epochs, n_channels, L)."""

    epochs: dict
    fs: float
    channel_names: tuple
    window: tuple = DEFAULT_WINDOW
    subject: str = ""
    group: str | None = None
    skipped: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return int(round((self.window[1] - self.window[0]) * self.fs))

    def get(self, stimulus: str, channel: str) -> np.ndarray:
        ch = self.channel_names.index(channel)
        return self.epochs[stimulus][:, ch, :]


@dataclass(frozen=True)
class ErpSet:
    """Per-stimulus ERPs; ``erps[stimulus]`` has shape (n_channels, L)."""

    erps: dict
    fs: float
    channel_names: tuple
    subject: str = ""
    group: str | None = None
    counts: dict = field(default_factory=dict)
    missing: tuple = ()
    window: tuple = DEFAULT_WINDOW

    @property
    def L(self) -> int:
        return int(round((self.window[1] - self.window[0]) * self.fs))

    def erp(self, stimulus: str, channel: str) -> np.ndarray:
        if stimulus not in self.erps:
            raise ConfigError(f"subject {self.subject!r} has no ERP for stimulus {stimulus!r}")
        if channel not in self.channel_names:
            raise ConfigError(f"channel {channel!r} not in dataset; available: "
                              f"{', '.join(self.channel_names)}")
        return self.erps[stimulus][self.channel_names.index(channel)]


def transition_widths(fs: float, low: float, high: float) -> tuple[float, float]:
    """Low/high transition bandwidths: a quarter of the edge frequency, at least 2 Hz, capped by the band edges."""
    lt = min(max(0.25 * low, 2.0), low)
    ht = min(max(0.25 * high, 2.0), fs / 2.0 - high)
    return lt, ht


def design_bandpass(fs: float, low: float, high: float) -> np.ndarray:
    """Linear-phase Hamming-window FIR band-pass taps (odd length)."""
    if not (0 < low < high < fs / 2):
        raise ConfigError(f"band ({low}, {high}) Hz must satisfy 0 < low < high < fs/2 = {fs / 2}")
    lt, ht = transition_widths(fs, low, high)
    numtaps = int(math.ceil(3.3 * fs / min(lt, ht)))
    numtaps += 1 - numtaps % 2
    return sps.firwin(numtaps, [low - lt / 2, high + ht / 2], window="hamming",
                      pass_zero=False, fs=fs)


def filter_array(data, fs: float, low: float, high: float) -> np.ndarray:
    """Zero-delay FIR band-pass along the last axis (the (N-1)/2 group delay is removed)."""
    taps = design_bandpass(fs, low, high)
    data = np.asarray(data, dtype=float)
    shape = [1] * (data.ndim - 1) + [taps.size]
    return sps.oaconvolve(data, taps.reshape(shape), mode="same", axes=-1)


def bandpass_fir(rec: ContinuousRecording, low: float, high: float) -> ContinuousRecording:
    return ContinuousRecording(filter_array(rec.data, rec.fs, low, high), rec.fs,
                               rec.channel_names, rec.events)


def segment(rec: ContinuousRecording, window=DEFAULT_WINDOW, baseline=None,
            subject: str = "", group: str | None = None) -> EpochSet:
    """Cut ``[t0, t1)`` s around every event.

    Events whose window would leave the recording are skipped and counted in
    ``skipped``.  ``baseline=(b0, b1)`` subtracts the per-epoch mean over that
    event-relative interval; off by default.
    """
    t0, t1 = window
    if not t1 > t0:
        raise ConfigError(f"window must satisfy t0 < t1, got {window}")
    fs = rec.fs
    L = int(round((t1 - t0) * fs))
    off = int(round(t0 * fs))
    buckets: dict = {s: [] for s in STIMULI}
    skipped = {s: 0 for s in STIMULI}
    if not rec.events:
        warnings.warn(f"recording {subject!r} has no events; empty epoch set", stacklevel=2)
    for t, stim in rec.events:
        start = int(round(t * fs)) + off
        if start < 0 or start + L > rec.n_samples:
            skipped[stim] += 1
            continue
        ep = rec.data[:, start:start + L]
        if baseline is not None:
            b0 = int(round(t * fs)) + int(round(baseline[0] * fs))
            b1 = int(round(t * fs)) + int(round(baseline[1] * fs))
            if b0 < 0 or b1 > rec.n_samples or b1 <= b0:
                skipped[stim] += 1
                continue
            ep = ep - rec.data[:, b0:b1].mean(axis=1, keepdims=True)
        buckets[stim].append(ep)
    epochs = {s: np.stack(v) for s, v in buckets.items() if v}
    n_skipped = sum(skipped.values())
    if n_skipped:
        log.info("%s: %d events skipped at recording boundaries", subject or "recording", n_skipped)
    return EpochSet(epochs=epochs, fs=fs, channel_names=rec.channel_names,
                    window=(float(t0), float(t1)), subject=subject, group=group,
                    skipped={s: c for s, c in skipped.items() if c})


def average_erp(epochs: EpochSet, stimuli=STIMULI) -> ErpSet:
    """Arithmetic mean over epochs, per stimulus; stimuli without epochs are listed in ``missing``."""
    erps, counts, missing = {}, {}, []
    for s in stimuli:
        ep = epochs.epochs.get(s)
        if ep is None or ep.shape[0] == 0:
            missing.append(s)
            continue
        erps[s] = ep.mean(axis=0)
        counts[s] = int(ep.shape[0])
    return ErpSet(erps=erps, fs=epochs.fs, channel_names=epochs.channel_names,
                  subject=epochs.subject, group=epochs.group, counts=counts,
                  missing=tuple(missing), window=epochs.window)


# --------------------------------------------------------------------------- files

@dataclass(frozen=True)
class SubjectEntry:
    id: str
    group: str
    mode: str
    files: dict


@dataclass(frozen=True)
class Manifest:
    path: Path
    fs: float
    channels: tuple
    window: tuple
    subjects: tuple

    @property
    def L(self) -> int:
        return int(round((self.window[1] - self.window[0]) * self.fs))

    def group_counts(self) -> dict:
        out = {g: 0 for g in GROUPS}
        for s in self.subjects:
            out[s.group] += 1
        return out


def _num(text: str, path, line: int, what: str) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise LoadError(f"cannot parse {what} {text!r} as a number", path, line) from None
    if not math.isfinite(v):
        raise LoadError(f"{what} is not finite", path, line)
    return v


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LoadError("manifest not found", path) from None
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(raw, dict):
        raise LoadError("manifest must be a JSON object", path)
    for key in ("fs", "channels", "subjects"):
        if key not in raw:
            raise LoadError(f"missing field {key!r}", path)
    fs = raw["fs"]
    if not isinstance(fs, (int, float)) or fs <= 0:
        raise LoadError("fs must be a positive number", path)
    channels = raw["channels"]
    if (not isinstance(channels, list) or not channels
            or not all(isinstance(c, str) for c in channels)):
        raise LoadError("channels must be a non-empty list of names", path)
    if len(set(channels)) != len(channels):
        raise LoadError("duplicate channel names", path)
    window = raw.get("window", list(DEFAULT_WINDOW))
    if (not isinstance(window, list) or len(window) != 2
            or not all(isinstance(v, (int, float)) for v in window) or window[1] <= window[0]):
        raise LoadError("window must be [t0, t1] with t0 < t1", path)
    subjects_raw = raw["subjects"]
    if not isinstance(subjects_raw, list) or not subjects_raw:
        raise LoadError("subject list is empty", path)
    seen = set()
    subjects = []
    for i, s in enumerate(subjects_raw):
        where = f"subjects[{i}]"
        if not isinstance(s, dict):
            raise LoadError(f"{where} must be an object", path)
        sid, group, mode, files = s.get("id"), s.get("group"), s.get("mode"), s.get("files")
        if not isinstance(sid, str) or not sid:
            raise LoadError(f"{where}: missing id", path)
        if sid in seen:
            raise LoadError(f"duplicate subject id {sid!r}", path)
        seen.add(sid)
        if group not in GROUPS:
            raise LoadError(f"subject {sid!r}: group {group!r} not in {GROUPS}", path)
        if mode not in ("continuous", "erp"):
            raise LoadError(f"subject {sid!r}: mode must be 'continuous' or 'erp'", path)
        if isinstance(files, list):
            keys = ("data", "events") if mode == "continuous" else ("erp",)
            if len(files) != len(keys):
                raise LoadError(f"subject {sid!r}: expected files {keys}", path)
            files = dict(zip(keys, files))
        if not isinstance(files, dict):
            raise LoadError(f"subject {sid!r}: files must be an object or list", path)
        need = ("data", "events") if mode == "continuous" else ("erp",)
        for k in need:
            if not isinstance(files.get(k), str):
                raise LoadError(f"subject {sid!r}: missing file {k!r}", path)
        resolved = {k: (path.parent / files[k]) for k in need}
        subjects.append(SubjectEntry(sid, group, mode, resolved))
    return Manifest(path=path, fs=float(fs), channels=tuple(channels),
                    window=(float(window[0]), float(window[1])), subjects=tuple(subjects))


def _open_csv(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise LoadError("file not found", path) from None
    rows = csv.reader(line for line in fh if not line.startswith("#"))
    return fh, rows


def read_continuous(data_path, events_path, fs: float, channels) -> ContinuousRecording:
    """Continuous CSV (time_s, one column per channel) plus an events CSV (time_s, stimulus)."""
    fh, rows = _open_csv(data_path)
    with fh:
        header = next(rows, None)
        if not header or header[0].strip() != "time_s":
            raise LoadError("first column must be time_s", data_path, 1)
        cols = [h.strip() for h in header[1:]]
        missing = [c for c in channels if c not in cols]
        if missing:
            raise LoadError(f"channels missing from file: {missing}", data_path, 1)
        pick = [cols.index(c) + 1 for c in channels]
        times, values = [], []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LoadError(f"expected {len(header)} fields, got {len(row)}", data_path, lineno)
            times.append(_num(row[0], data_path, lineno, "time_s"))
            values.append([_num(row[j], data_path, lineno, header[j]) for j in pick])
    if len(times) < 2:
        raise LoadError("recording has fewer than two samples", data_path)
    dt = np.diff(times)
    if abs(float(np.median(dt)) * fs - 1.0) > 1e-6:
        raise LoadError(f"sampling interval {np.median(dt)} s does not match fs={fs} Hz", data_path)
    bad = np.flatnonzero(np.abs(dt * fs - 1.0) > 1e-3)
    if bad.size:
        raise LoadError("irregular sampling interval", data_path, int(bad[0]) + 3)
    data = np.asarray(values).T

    fh, rows = _open_csv(events_path)
    with fh:
        header = [h.strip() for h in (next(rows, None) or [])]
        if header[:2] != ["time_s", "stimulus"]:
            raise LoadError("events header must be time_s,stimulus", events_path, 1)
        events = []
        t_first = times[0]
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise LoadError("expected time_s,stimulus", events_path, lineno)
            t = _num(row[0], events_path, lineno, "time_s") - t_first
            stim = row[1].strip()
            if stim not in STIMULI:
                raise LoadError(f"unknown stimulus {stim!r}", events_path, lineno)
            if not (0 <= t < data.shape[1] / fs):
                raise LoadError(f"event time {row[0]} outside the recording", events_path, lineno)
            events.append((t, stim))
    return ContinuousRecording(data, fs, tuple(channels), tuple(events))


def read_erp_csv(path, fs: float, channels, L: int, window=DEFAULT_WINDOW,
                 subject: str = "", group: str | None = None) -> ErpSet:
    """Precomputed ERPs: columns stimulus, channel, sample_index, value_uV."""
    fh, rows = _open_csv(path)
    acc: dict = {}
    with fh:
        header = [h.strip() for h in (next(rows, None) or [])]
        if header[:4] != ["stimulus", "channel", "sample_index", "value_uV"]:
            raise LoadError("header must be stimulus,channel,sample_index,value_uV", path, 1)
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise LoadError(f"expected 4 fields, got {len(row)}", path, lineno)
            stim, ch = row[0].strip(), row[1].strip()
            if stim not in STIMULI:
                raise LoadError(f"unknown stimulus {stim!r}", path, lineno)
            if ch not in channels:
                continue
            k = _num(row[2], path, lineno, "sample_index")
            if k != int(k) or not (0 <= k < L):
                raise LoadError(f"sample_index {row[2]} outside [0, {L})", path, lineno)
            arr = acc.setdefault(stim, np.full((len(channels), L), np.nan))
            ci = channels.index(ch)
            if not np.isnan(arr[ci, int(k)]):
                raise LoadError(f"duplicate sample {stim}/{ch}/{int(k)}", path, lineno)
            arr[ci, int(k)] = _num(row[3], path, lineno, "value_uV")
    erps, counts = {}, {}
    for stim, arr in acc.items():
        if np.isnan(arr).any():
            ci, k = np.argwhere(np.isnan(arr))[0]
            raise LoadError(f"missing sample {stim}/{channels[ci]}/{k}", path)
        erps[stim] = arr
    missing = tuple(s for s in STIMULI if s not in erps)
    return ErpSet(erps=erps, fs=fs, channel_names=tuple(channels), subject=subject,
                  group=group, counts=counts, missing=missing, window=tuple(window))


def write_erp_csv(path, erp: ErpSet, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["stimulus", "channel", "sample_index", "value_uV"])
        for stim in STIMULI:
            if stim not in erp.erps:
                continue
            for ci, ch in enumerate(erp.channel_names):
                for k, v in enumerate(erp.erps[stim][ci]):
                    wr.writerow([stim, ch, k, repr(float(v))])


def load_subject(entry: SubjectEntry, manifest: Manifest, band=(1.0, 30.0),
                 average: bool = True, baseline=None):
    if entry.mode == "erp":
        return read_erp_csv(entry.files["erp"], manifest.fs, list(manifest.channels), manifest.L,
                            manifest.window, subject=entry.id, group=entry.group)
    rec = read_continuous(entry.files["data"], entry.files["events"], manifest.fs,
                          list(manifest.channels))
    if band is not None:
        rec = bandpass_fir(rec, *band)
    ep = segment(rec, manifest.window, baseline=baseline, subject=entry.id, group=entry.group)
    return average_erp(ep) if average else ep


def load_dataset(manifest_path, band=(1.0, 30.0), average: bool = True, baseline=None) -> list:
    """All subjects of a manifest, as ErpSets (or EpochSets for continuous data with ``average=False``)."""
    manifest = read_manifest(manifest_path)
    return [load_subject(e, manifest, band, average, baseline) for e in manifest.subjects]
