"""Synthetic target device and test signals.

The device is a static waveshaper followed by a short tone FIR:

    out[n] = output_gain * FIR(tone, tanh(pre_gain * x + asymmetry_bias))[n]

The bias makes the clipping asymmetric, so the output carries even
harmonics and a DC offset. It is cheap, deterministic and well within
reach of a small LSTM, which makes convergence targets meaningful.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, DEFAULT_SAMPLE_RATE, write_wav
from .filters import fir

KINDS = ("sweep", "noise_bursts", "pluck_synth")
PEAK = 0.5


@dataclass(frozen=True)
class DeviceConfig:
    pre_gain: float = 4.0
    asymmetry_bias: float = 0.1
    tone_coeffs: tuple = (0.85, 0.15)
    output_gain: float = 0.9

    def __post_init__(self):
        tone = tuple(float(c) for c in np.ravel(self.tone_coeffs))
        object.__setattr__(self, "tone_coeffs", tone)
        values = (self.pre_gain, self.asymmetry_bias, self.output_gain) + tone
        if not tone or not np.all(np.isfinite(values)):
            raise ValueError("device settings must be finite and tone_coeffs non-empty")


def process(config: DeviceConfig, signal):
    """Run ``signal`` (AudioBuffer or array) through the device."""
    x = signal.samples if isinstance(signal, AudioBuffer) else np.asarray(signal)
    x = np.asarray(x, dtype=np.float64)
    shaped = np.tanh(config.pre_gain * x + config.asymmetry_bias)
    y = config.output_gain * fir(np.array(config.tone_coeffs), shaped)
    if isinstance(signal, AudioBuffer):
        return AudioBuffer(y, signal.sample_rate_hz)
    return y


def _sweep(n, sr, rng):
    t = np.arange(n) / sr
    f0, f1 = 20.0, 10000.0
    span = max(n / sr, 1.0 / sr)
    k = np.log(f1 / f0)
    phase = 2 * np.pi * f0 * span / k * (np.exp(t / span * k) - 1.0)
    return np.sin(phase)


def _noise_bursts(n, sr, rng):
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = min(int(rng.uniform(0.05, 0.4) * sr) + 1, n - pos)
        gap = int(rng.uniform(0.02, 0.2) * sr)
        env = np.full(seg, rng.uniform(0.1, 1.0))
        ramp = min(int(0.005 * sr), seg // 2)
        if ramp:
            fade = np.sin(0.5 * np.pi * (np.arange(ramp) + 0.5) / ramp)
            env[:ramp] *= fade
            env[seg - ramp :] *= fade[::-1]
        out[pos : pos + seg] = env * rng.standard_normal(seg)
        pos += seg + gap
    return out


def _pluck_synth(n, sr, rng):
    out = np.zeros(n)
    onset = 0
    while onset < n:
        f0 = 55.0 * 2.0 ** rng.uniform(0, 4.5)  # A1 to about E6
        amp = rng.uniform(0.2, 1.0)
        decay = rng.uniform(1.5, 6.0)  # 1/s for the fundamental
        length = min(n - onset, int(2.0 * sr))
        t = np.arange(length) / sr
        note = np.zeros(length)
        n_harm = max(1, min(30, int(0.45 * sr / f0)))
        for k in range(1, n_harm + 1):
            a = rng.uniform(0.3, 1.0) / k
            phase = rng.uniform(0, 2 * np.pi)
            rate = decay * (1 + 0.5 * (k - 1))
            m = min(length, int(np.log(1e4) / rate * sr) + 1)  # stop 80 dB down
            note[:m] += a * np.exp(-rate * t[:m]) * np.sin(2 * np.pi * k * f0 * t[:m] + phase)
        out[onset : onset + length] += amp * note
        onset += int(rng.uniform(0.1, 0.6) * sr)
    return out


def make_test_input(kind: str, duration_s: float, seed: int = 0, sample_rate_hz: int = DEFAULT_SAMPLE_RATE):
    """Deterministic excitation signal peak-normalized to 0.5.

    ``sweep`` is a logarithmic sine sweep from 20 Hz to 10 kHz,
    ``noise_bursts`` is gated noise at random levels with silent gaps, and
    ``pluck_synth`` overlaps decaying harmonic notes at random onsets.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown input kind {kind!r}; expected one of {', '.join(KINDS)}")
    if not duration_s > 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    n = int(round(duration_s * sample_rate_hz))
    rng = np.random.default_rng(seed)
    x = {"sweep": _sweep, "noise_bursts": _noise_bursts, "pluck_synth": _pluck_synth}[kind](n, sample_rate_hz, rng)
    peak = np.max(np.abs(x)) if n else 0.0
    if peak > 0:
        x = x * (PEAK / peak)
    return AudioBuffer(x, sample_rate_hz)


def generate_dataset(out_dir, device: DeviceConfig = DeviceConfig(), kind="pluck_synth", train_s=60.0,
                     test_s=10.0, seed=0, sample_rate_hz=DEFAULT_SAMPLE_RATE, format="float32"):
    """Write ``train/`` and ``test/`` input/target WAV pairs plus ``manifest.json``.

    Train and test excitations use seeds ``seed`` and ``seed + 1``.
    """
    out = Path(out_dir)
    seeds = {"train": seed, "test": seed + 1}
    durations = {"train": train_s, "test": test_s}
    for split in ("train", "test"):
        (out / split).mkdir(parents=True, exist_ok=True)
        x = make_test_input(kind, durations[split], seeds[split], sample_rate_hz)
        if format == "float32":
            # drive the device with exactly the samples the input file will hold
            x = AudioBuffer(x.samples.astype(np.float32), sample_rate_hz)
        y = process(device, x)
        write_wav(x, out / split / "input.wav", format)
        write_wav(y, out / split / "target.wav", format)
    manifest = {
        "device": asdict(device),
        "kind": kind,
        "sample_rate_hz": sample_rate_hz,
        "seeds": seeds,
        "durations_s": durations,
        "format": format,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
