"""Pre-emphasis filters for the training loss.

Every variant is a short FIR, so filtering is a plain convolution with zero
initial state:

    none   [1]
    hp     [1, -0.85]                first-order highpass
    fd     [1, 0, -0.85]             folded differentiator, mid-band emphasis
    aw     A-weighting FIR * [1, 0.85]   perceptual weighting, then lowpass

The A-weighting FIR is a linear-phase least-squares fit to the analytic IEC
curve; see :func:`make_lowpassed_a_weighting`.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioBuffer, DEFAULT_SAMPLE_RATE
from .errors import DesignError, FilterError

LABELS = ("none", "hp", "fd", "aw")

HP_COEFFS = (1.0, -0.85)
FD_COEFFS = (1.0, 0.0, -0.85)
LOWPASS_COEFFS = (1.0, 0.85)

AW_TAPS = 100
GRID_POINTS = 512
GRID_LOW_HZ = 20.0


def parse_label(label) -> str:
    """Normalize a filter label; accepts any case and Python ``None``."""
    if label is None:
        return "none"
    key = str(label).strip().lower()
    if key not in LABELS:
        raise FilterError(f"unknown pre-emphasis label {label!r}; expected one of {', '.join(LABELS)}")
    return key


@dataclass(frozen=True)
class FirFilter:
    coeffs: np.ndarray
    label: str = "none"

    def __post_init__(self):
        b = np.array(self.coeffs, dtype=np.float64).ravel()
        if b.size == 0 or not np.all(np.isfinite(b)):
            raise FilterError("FIR coefficients must be non-empty and finite")
        b.setflags(write=False)
        object.__setattr__(self, "coeffs", b)
        object.__setattr__(self, "label", parse_label(self.label))

    def __len__(self):
        return self.coeffs.size


@dataclass(frozen=True)
class ResponseGrid:
    freqs_hz: np.ndarray
    gains_db: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=np.float64).ravel()
        g = np.asarray(self.gains_db, dtype=np.float64).ravel()
        if f.shape != g.shape:
            raise FilterError(f"grid has {f.size} frequencies but {g.size} gains")
        if f.size and (f[0] <= 0 or np.any(np.diff(f) <= 0)):
            raise FilterError("grid frequencies must be positive and strictly ascending")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "gains_db", g)


def make_filter(label, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> FirFilter:
    """Fixed filters by label. ``aw`` is designed at ``sample_rate_hz``."""
    label = parse_label(label)
    if label == "none":
        return FirFilter([1.0], "none")
    if label == "hp":
        return FirFilter(HP_COEFFS, "hp")
    if label == "fd":
        return FirFilter(FD_COEFFS, "fd")
    return make_lowpassed_a_weighting(AW_TAPS, sample_rate_hz)


def a_weighting_db(freq_hz):
    """IEC A-weighting gain in dB, normalized to 0 dB at 1 kHz."""
    f = np.asarray(freq_hz, dtype=np.float64)
    if np.any(~(f > 0)):
        raise FilterError("A-weighting is defined for positive frequencies only")
    f2 = f * f
    ra = (12194.0**2 * f2 * f2) / (
        (f2 + 20.6**2) * np.sqrt((f2 + 107.7**2) * (f2 + 737.9**2)) * (f2 + 12194.0**2)
    )
    out = 20.0 * np.log10(ra) + 2.00
    return float(out) if out.ndim == 0 else out


def a_weighting_grid(sample_rate_hz: int = DEFAULT_SAMPLE_RATE, points: int = GRID_POINTS) -> ResponseGrid:
    """A-weighting sampled on ``points`` log-spaced frequencies, 20 Hz to Nyquist."""
    freqs = np.geomspace(GRID_LOW_HZ, sample_rate_hz / 2.0, points)
    return ResponseGrid(freqs, a_weighting_db(freqs))


def _amplitude_basis(omega, num_taps):
    # Linear-phase amplitude A(w) = sum_n h[n] cos((M - n) w) with h symmetric
    # about M = (N-1)/2, written over the free half of the taps.
    centre = (num_taps - 1) / 2.0
    half = num_taps // 2
    cols = [2.0 * np.cos((centre - j) * omega) for j in range(half)]
    if num_taps % 2:
        cols.append(np.ones_like(omega))
    return np.stack(cols, axis=1)


def _grid_weights(freqs):
    # Trapezoid bandwidth of each grid point, so the weighted sum approximates
    # the squared error integrated over linear frequency. On a log grid this
    # stops the crowded low-frequency points from dominating the fit.
    if freqs.size == 1:
        return np.ones(1)
    edges = np.concatenate([freqs[:1], 0.5 * (freqs[1:] + freqs[:-1]), freqs[-1:]])
    return np.diff(edges)


def _expand_half(half_coeffs, num_taps):
    half = num_taps // 2
    left = half_coeffs[:half]
    mid = half_coeffs[half:]  # the centre tap for odd lengths, empty otherwise
    return np.concatenate([left, mid, left[::-1]])


def design_fir_least_squares(target: ResponseGrid, num_taps: int, sample_rate_hz: int) -> FirFilter:
    """Linear-phase FIR whose amplitude best matches ``target`` in least squares.

    Gains are converted from dB to linear amplitude before fitting. Each
    grid point's squared error is weighted by the bandwidth it covers, which
    makes the objective a quadrature of the error integrated over frequency
    and independent of how densely the grid samples any one region. The
    result is symmetric, so its phase is a pure delay of
    ``(num_taps - 1) / 2`` samples.
    """
    if num_taps < 1:
        raise DesignError(f"num_taps must be >= 1, got {num_taps}")
    nyquist = sample_rate_hz / 2.0
    if target.freqs_hz.size == 0 or target.freqs_hz[-1] > nyquist:
        raise DesignError(f"target grid must be non-empty and within Nyquist ({nyquist} Hz)")
    omega = 2.0 * np.pi * target.freqs_hz / sample_rate_hz
    desired = 10.0 ** (target.gains_db / 20.0)
    sw = np.sqrt(_grid_weights(target.freqs_hz))[:, None]
    basis = _amplitude_basis(omega, num_taps)
    solution, _, rank, _ = np.linalg.lstsq(sw * basis, sw[:, 0] * desired, rcond=None)
    if rank < basis.shape[1]:
        raise DesignError(
            f"normal equations are singular: {basis.shape[1]} free taps but rank {rank} "
            f"on a {target.freqs_hz.size}-point grid"
        )
    return FirFilter(_expand_half(solution, num_taps), "none")


def fit_residual(fir: FirFilter, target: ResponseGrid, sample_rate_hz: int) -> float:
    """The objective minimized by :func:`design_fir_least_squares`.

    Bandwidth-weighted sum of squared linear-amplitude errors of a symmetric
    FIR on ``target``.
    """
    omega = 2.0 * np.pi * target.freqs_hz / sample_rate_hz
    n = np.arange(len(fir))
    amp = np.cos(np.outer(omega, (len(fir) - 1) / 2.0 - n)) @ fir.coeffs
    err = amp - 10.0 ** (target.gains_db / 20.0)
    return float(np.sum(_grid_weights(target.freqs_hz) * err**2))


@lru_cache(maxsize=8)
def _lowpassed_a_weighting(num_taps, sample_rate_hz):
    fir = design_fir_least_squares(a_weighting_grid(sample_rate_hz), num_taps, sample_rate_hz)
    return np.convolve(fir.coeffs, LOWPASS_COEFFS)


def make_lowpassed_a_weighting(num_taps: int = AW_TAPS, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> FirFilter:
    """The ``aw`` filter: A-weighting FIR convolved with ``1 + 0.85 z^-1``.

    Returns ``num_taps + 1`` coefficients.
    """
    if num_taps < 2:
        raise DesignError(f"num_taps must be >= 2, got {num_taps}")
    return FirFilter(_lowpassed_a_weighting(int(num_taps), int(sample_rate_hz)), "aw")


def fir(coeffs, x, axis=0):
    """Causal FIR along ``axis`` with zero initial state; keeps length and dtype."""
    if len(coeffs) == 1:
        return x * x.dtype.type(coeffs[0])
    return lfilter(np.asarray(coeffs, dtype=x.dtype), np.ones(1, dtype=x.dtype), x, axis=axis)


def fir_adjoint(coeffs, g, axis=0):
    """Transpose of :func:`fir`: out[n] = sum_k b[k] g[n + k]."""
    g = np.flip(g, axis=axis)
    return np.flip(fir(coeffs, g, axis=axis), axis=axis)


def apply(filt: FirFilter, signal):
    """Filter an :class:`AudioBuffer` (or array) with zero initial conditions."""
    if isinstance(signal, AudioBuffer):
        if len(signal) == 0:
            raise FilterError("cannot filter an empty signal")
        return AudioBuffer(fir(filt.coeffs, signal.samples), signal.sample_rate_hz)
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise FilterError("cannot filter an empty signal")
    return fir(filt.coeffs, x)


def magnitude_response(filt: FirFilter, freqs_hz, sample_rate_hz: int) -> ResponseGrid:
    """Gain in dB of the filter's transfer function at each frequency."""
    f = np.asarray(freqs_hz, dtype=np.float64).ravel()
    if np.any(f <= 0) or np.any(f > sample_rate_hz / 2.0):
        raise FilterError("frequencies must lie in (0, sample_rate/2]")
    k = np.arange(len(filt))
    h = np.exp(-2j * np.pi * np.outer(f / sample_rate_hz, k)) @ filt.coeffs
    with np.errstate(divide="ignore"):
        gains = 20.0 * np.log10(np.abs(h))
    return ResponseGrid(f, gains)
