"""Synthetic two-group ERP datasets driven by sparse excitations of the oscillator bank."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import build_bank, simulate
from .signals import STIMULI, ErpSet, filter_array, write_erp_csv


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 50
    seed: int = 0
    latency_shift: float = 0.06      # s, added to PD latencies
    amplitude_factor: float = 0.6    # PD excitation amplitudes are scaled by this
    snr_db: float = 10.0
    fs: float = 500.0
    L: int = 250
    channels: tuple = ("CP1", "CPz", "CP2")
    channel_gain: tuple = (0.8, 1.0, 0.8)
    band: tuple = (1.0, 30.0)
    m: int = 40
    base_latency: float = 0.22       # s, onset of the negative excitation in controls
    neg_amplitude: float = 8.0       # µV
    pos_amplitude: float = 4.0       # µV
    pos_delay: float = 0.10          # s after the negative excitation
    latency_jitter: float = 0.010    # s, between subjects
    amplitude_jitter: float = 0.10   # log-normal sd, between subjects
    background: float = 1.5          # µV, initial-state oscillation amplitude

    def __post_init__(self):
        if self.n_subjects < 4 or self.n_subjects % 2:
            raise ConfigError("n_subjects must be an even number >= 4")
        if len(self.channel_gain) != len(self.channels):
            raise ConfigError("one gain per channel is required")
        if not self.amplitude_factor > 0:
            raise ConfigError("amplitude factor must be positive")


def _mode_near(bank, hz: float) -> int:
    return int(np.argmin(np.abs(bank.freqs_hz - hz)))


def subject_erps(spec: SynthSpec, index: int, group: str) -> ErpSet:
    """ERPs of one synthetic subject; the random stream depends only on (seed, index)."""
    rng = np.random.default_rng([int(spec.seed), int(index)])
    bank = build_bank(spec.band[0], spec.band[1], spec.m, spec.fs)
    L, fs, m = spec.L, spec.fs, spec.m
    pd = group == "PD"
    lat = spec.base_latency + (spec.latency_shift if pd else 0.0) + rng.normal(0, spec.latency_jitter)
    amp = (spec.amplitude_factor if pd else 1.0) * float(np.exp(rng.normal(0, spec.amplitude_jitter)))
    k_neg = int(np.clip(round(lat * fs), 0, L - 3))
    k_pos = int(np.clip(k_neg + round(spec.pos_delay * fs), 0, L - 3))
    i_neg, i_pos = _mode_near(bank, 4.0), _mode_near(bank, 2.5)

    alpha = [_mode_near(bank, f) for f in (9.0, 10.5, 12.0)]
    x0 = np.zeros(2 * m)
    for i in alpha:
        # state amplitude a on mode i gives an output oscillation of amplitude a
        phase = rng.uniform(0, 2 * np.pi)
        a = spec.background * rng.uniform(0.5, 1.0)
        w = bank.omegas[i]
        x0[2 * i] = a * np.sin(phase) / (fs * w)
        x0[2 * i + 1] = a * np.cos(phase) / fs

    taps_pad = 2000
    erps = {}
    for stim in STIMULI:
        U = np.zeros((m, L - 1))
        if stim == "target":
            U[i_neg, k_neg] = -spec.neg_amplitude * amp
            U[i_pos, k_pos] = spec.pos_amplitude * amp
        else:
            U[i_neg, k_neg] = -0.3 * spec.neg_amplitude
        clean = simulate(bank, x0, U)
        out = np.empty((len(spec.channels), L))
        for c, gain in enumerate(spec.channel_gain):
            sig = gain * clean
            noise = filter_array(rng.normal(size=L + 2 * taps_pad), fs, *spec.band)
            noise = noise[taps_pad:taps_pad + L]
            p_sig = float(np.mean((sig - sig.mean()) ** 2))
            p_noise = float(np.mean(noise ** 2))
            noise *= np.sqrt(p_sig / 10 ** (spec.snr_db / 10) / p_noise)
            out[c] = sig + noise
        erps[stim] = out
    return ErpSet(erps=erps, fs=fs, channel_names=tuple(spec.channels),
                  subject=f"sub-{index + 1:03d}", group=group,
                  counts={s: 1 for s in STIMULI}, window=(0.0, L / fs))


def groups_for(n: int) -> list:
    half = n // 2
    return ["PD"] * half + ["CTL"] * (n - half)


def generate(spec: SynthSpec) -> list:
    return [subject_erps(spec, i, g) for i, g in enumerate(groups_for(spec.n_subjects))]


def write_dataset(spec: SynthSpec, out_dir, header_lines=()) -> Path:
    """Write per-subject ERP CSVs and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = []
    for erp in generate(spec):
        name = f"{erp.subject}.csv"
        write_erp_csv(out_dir / name, erp, header_lines)
        subjects.append({"id": erp.subject, "group": erp.group, "mode": "erp",
                         "files": {"erp": name}})
    manifest = {"fs": spec.fs, "channels": list(spec.channels), "window": [0.0, spec.L / spec.fs],
                "subjects": subjects, "synth": asdict(spec)}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path
