"""Objective evaluation: cross-filter loss matrix, error spectra, anchors, timing."""

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import welch

from .audio_io import AudioBuffer, DEFAULT_SAMPLE_RATE
from .errors import AlignmentError, SignalLengthError
from .filters import LABELS, make_filter, parse_label
from .model import ModelParams, forward_sequence
from .training import esr_loss

MATRIX_HEADER = ("hidden_size", "trained_preemph") + tuple(f"loss_{label}" for label in LABELS)
SPECTRUM_HEADER = ("freq_hz", "error_db")
FLOOR_DB = -200.0
SKIP_SAMPLES = 1000
ANCHOR_DRIVE = 4.0

# Published per-second processing times for hidden sizes 32 and 64, quoted
# next to our own measurements for context only.
PUBLISHED_SECONDS_PER_SECOND = {32: 0.12, 64: 0.24}


def _samples(signal):
    return np.asarray(signal.samples if isinstance(signal, AudioBuffer) else signal, dtype=np.float64).ravel()


@dataclass(frozen=True)
class LossRow:
    hidden_size: int
    trained_preemph: str
    losses: dict  # evaluation label -> ESR (ratio, not percent)


@dataclass(frozen=True)
class LossMatrix:
    rows: list

    def to_csv(self) -> str:
        """CSV with losses in percent, 4 significant digits."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MATRIX_HEADER)
        for row in self.rows:
            writer.writerow([row.hidden_size, row.trained_preemph]
                            + [f"{100.0 * row.losses[label]:.4g}" for label in LABELS])
        return buf.getvalue()


def cross_loss_matrix(models: dict, test_input, test_target, skip: int = SKIP_SAMPLES) -> LossMatrix:
    """ESR of every model under every pre-emphasis filter.

    ``models`` maps the label a model was trained with to its parameters.
    Each model runs once from zero state over the test input; the first
    ``skip`` samples are left out of every loss.
    """
    if not models:
        raise ValueError("no models to evaluate")
    x, y = _samples(test_input), _samples(test_target)
    if x.shape != y.shape:
        raise AlignmentError(f"test input has {x.size} samples, target has {y.size}")
    if x.size <= skip:
        raise SignalLengthError(f"test signal has {x.size} samples; need more than the {skip} skipped")
    rate = test_input.sample_rate_hz if isinstance(test_input, AudioBuffer) else DEFAULT_SAMPLE_RATE
    filters = {label: make_filter(label, rate) for label in LABELS}
    rows = []
    for trained, params in models.items():
        y_hat, _ = forward_sequence(params, x)
        y_hat = y_hat.astype(np.float64)
        losses = {label: esr_loss(y[skip:], y_hat[skip:], filt) for label, filt in filters.items()}
        rows.append(LossRow(params.hidden_size, parse_label(trained), losses))
    return LossMatrix(rows)


@dataclass(frozen=True)
class ErrorSpectrum:
    freqs_hz: np.ndarray
    error_db: np.ndarray
    params: dict = field(default_factory=dict)

    def bin_power(self):
        """Linear power per bin; sums to the mean square of the error."""
        return 10.0 ** (self.error_db / 10.0)

    def to_csv(self) -> str:
        lines = [",".join(SPECTRUM_HEADER)]
        lines += [f"{f:.6g},{e:.4f}" for f, e in zip(self.freqs_hz, self.error_db)]
        return "\n".join(lines) + "\n"


def error_spectrum(y, y_hat, fft_size: int = 4096, hop: int = 2048, sample_rate_hz: int = None) -> ErrorSpectrum:
    """Welch-averaged power spectrum of ``y - y_hat`` in dB.

    Periodic Hann frames of ``fft_size`` samples every ``hop`` samples, no
    detrending, one-sided. Each bin holds the power in that bin's
    bandwidth (0 dB = unit mean square), so the bins sum to the mean square
    of the error. Empty bins are floored at -200 dB. The first bin is DC.
    """
    if fft_size < 1 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if not 0 < hop <= fft_size:
        raise ValueError(f"hop must be in (0, fft_size], got {hop}")
    if sample_rate_hz is None:
        sample_rate_hz = y.sample_rate_hz if isinstance(y, AudioBuffer) else DEFAULT_SAMPLE_RATE
    a, b = _samples(y), _samples(y_hat)
    if a.shape != b.shape:
        raise AlignmentError(f"signals differ in length ({a.size} vs {b.size})")
    if a.size < fft_size:
        raise SignalLengthError(f"signal has {a.size} samples, shorter than one {fft_size}-sample frame")
    freqs, density = welch(a - b, fs=sample_rate_hz, window="hann", nperseg=fft_size,
                           noverlap=fft_size - hop, detrend=False, scaling="density")
    power = density * (sample_rate_hz / fft_size)
    with np.errstate(divide="ignore"):
        db = np.maximum(10.0 * np.log10(power), FLOOR_DB)
    params = {"fft_size": fft_size, "hop": hop, "window": "hann", "sample_rate_hz": sample_rate_hz}
    return ErrorSpectrum(freqs, db, params)


def tanh_anchor(signal, drive: float = ANCHOR_DRIVE, reference=None):
    """Heavily clipped low anchor: ``tanh(drive * x)``.

    With a ``reference``, the result is rescaled to the reference's peak.
    """
    if not drive > 0:
        raise ValueError(f"drive must be positive, got {drive}")
    out = np.tanh(drive * _samples(signal))
    if reference is not None:
        peak, target = np.max(np.abs(out), initial=0.0), np.max(np.abs(_samples(reference)), initial=0.0)
        if peak > 0:
            out = out * (target / peak)
    if isinstance(signal, AudioBuffer):
        return AudioBuffer(out, signal.sample_rate_hz)
    return out


def benchmark_inference(params: ModelParams, seconds: float = 1.0, sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
                        seed: int = 0) -> dict:
    """Time one zero-state run over ``seconds`` of seeded noise."""
    if not seconds > 0:
        raise ValueError(f"seconds must be positive, got {seconds}")
    n = int(round(seconds * sample_rate_hz))
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, n).astype(params.dtype)
    start = time.perf_counter()
    forward_sequence(params, x)
    elapsed = time.perf_counter() - start
    return {"hidden_size": params.hidden_size, "seconds": seconds, "process_time_s": elapsed,
            "real_time_factor": elapsed / seconds}


@dataclass
class EvalReport:
    """Everything one evaluation run produced, ready to be written out."""

    matrix: LossMatrix = None
    spectra: dict = field(default_factory=dict)  # name -> ErrorSpectrum
    timings: list = field(default_factory=list)  # benchmark_inference results
