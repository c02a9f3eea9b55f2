"""Losses, gradients and the truncated-BPTT training schedule.

Loss for a window of target ``y`` and prediction ``y_hat``:

    esr   = sum((y_p - y_hat_p)^2) / sum(y_p^2)     y_p = pre-emphasized y
    dc    = mean(y - y_hat)^2 / mean(y^2)            raw signals
    total = esr + dc

Training splits the data into segments, shuffles them into mini-batches,
runs the first ``warmup_len`` samples of each segment forward only, then
updates the parameters after every ``truncation_len`` samples (and once more
for a shorter final chunk), carrying the recurrent state across chunks
without carrying gradients.
"""

import csv
import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernel
from .audio_io import AudioBuffer, DEFAULT_SAMPLE_RATE, SegmentSet, half_second, read_wav, segment
from .errors import AlignmentError, DegenerateTargetError
from .filters import FirFilter, fir, fir_adjoint, make_filter, parse_label
from .model import PARAM_NAMES, LstmState, ModelParams, forward_sequence, init_params, pad_lanes, run_lanes

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LOG_HEADER = ("epoch", "esr", "dc", "total", "seconds")


@dataclass(frozen=True)
class LossBreakdown:
    esr: float
    dc: float
    total: float

    @classmethod
    def of(cls, esr, dc):
        return cls(float(esr), float(dc), float(esr) + float(dc))


@dataclass(frozen=True)
class GradientSet:
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    fc_w: np.ndarray
    fc_b: float

    def tensors(self):
        return {n: np.asarray(getattr(self, n)) for n in PARAM_NAMES}


@dataclass(frozen=True)
class TrainingConfig:
    """Every knob of the training procedure, defaulting to the published setup.

    ``trainable`` restricts which parameter tensors the optimizer updates;
    the rest stay at their initial values.
    """

    segment_len: int = half_second(DEFAULT_SAMPLE_RATE)
    warmup_len: int = 1000
    truncation_len: int = 2048
    epochs: int = 750
    batch_size: int = 32
    learning_rate: float = 5e-4
    preemph: str = "none"
    seed: int = 0
    copies: int = 5
    hidden_size: int = 32
    residual: bool = False
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    trainable: tuple = PARAM_NAMES
    parallel_copies: int = 1

    def __post_init__(self):
        object.__setattr__(self, "preemph", parse_label(self.preemph))
        object.__setattr__(self, "trainable", tuple(self.trainable))
        if not 0 <= self.warmup_len < self.segment_len:
            raise ValueError(f"warmup_len ({self.warmup_len}) must be in [0, segment_len={self.segment_len})")
        for name in ("segment_len", "truncation_len", "epochs", "batch_size", "copies",
                     "hidden_size", "sample_rate_hz", "parallel_copies"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        unknown = set(self.trainable) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown trainable parameters {sorted(unknown)}")

    def filter(self) -> FirFilter:
        return make_filter(self.preemph, self.sample_rate_hz)

    def chunks_per_segment(self) -> int:
        """Parameter updates per mini-batch of segments."""
        return -(-(self.segment_len - self.warmup_len) // self.truncation_len)


def _as_filter(preemph) -> FirFilter:
    return preemph if isinstance(preemph, FirFilter) else make_filter(preemph)


def _window(a):
    return np.asarray(a.samples if isinstance(a, AudioBuffer) else a, dtype=np.float64).ravel()


def _pair(y, y_hat):
    y, y_hat = _window(y), _window(y_hat)
    if y.shape != y_hat.shape or y.size == 0:
        raise AlignmentError(f"windows must be non-empty and equal length, got {y.size} and {y_hat.size}")
    return y, y_hat


def esr_loss(y, y_hat, preemph="none") -> float:
    """Error-to-signal ratio after pre-emphasizing both windows."""
    y, y_hat = _pair(y, y_hat)
    b = _as_filter(preemph).coeffs
    y_p = fir(b, y)
    err = y_p - fir(b, y_hat)
    energy = np.sum(y_p * y_p)
    if not energy > 0:
        raise DegenerateTargetError("pre-emphasized target has zero energy (silent or DC-only window)")
    return float(np.sum(err * err) / energy)


def dc_loss(y, y_hat) -> float:
    """Squared mean difference over mean target power, on the raw signals."""
    y, y_hat = _pair(y, y_hat)
    power = np.mean(y * y)
    if not power > 0:
        raise DegenerateTargetError("target has zero energy")
    return float(np.mean(y - y_hat) ** 2 / power)


def total_loss(y, y_hat, preemph="none") -> LossBreakdown:
    return LossBreakdown.of(esr_loss(y, y_hat, preemph), dc_loss(y, y_hat))


def _batch_loss_grad(y, y_hat, b):
    """Per-column losses of ``(T, B)`` windows and d(esr + dc)/d(y_hat).

    Columns whose target carries no energy are flagged invalid and get a
    zero gradient.
    """
    T = y.shape[0]
    y_p = fir(b, y)
    err_p = y_p - fir(b, y_hat)
    energy = np.sum(y_p * y_p, axis=0)
    power = np.mean(y * y, axis=0)
    valid = (energy > 0) & (power > 0)
    safe_e = np.where(valid, energy, 1.0)
    safe_p = np.where(valid, power, 1.0)
    mean_diff = np.mean(y - y_hat, axis=0)
    esr = np.sum(err_p * err_p, axis=0) / safe_e
    dc = mean_diff**2 / safe_p
    grad = -2.0 * fir_adjoint(b, err_p) / safe_e - 2.0 * mean_diff / (T * safe_p)
    grad[:, ~valid] = 0.0
    return esr, dc, grad, valid


def _gradient_set(raw, dtype):
    d_wx, d_wh, d_b, d_fcw, d_fcb = raw
    return GradientSet(d_wx.astype(dtype), d_wh.astype(dtype), d_b.astype(dtype), d_fcw.astype(dtype),
                       dtype.type(d_fcb))


def backward(params: ModelParams, x, y, state: LstmState = None, preemph="none"):
    """Loss of one window and its exact gradient with respect to ``params``.

    The window is run from ``state`` (zero when None); no gradient flows
    into the initial state.
    """
    x, y = _pair(x, y)
    filt = _as_filter(preemph)
    dtype = params.dtype
    H = params.hidden_size
    if state is None:
        state = LstmState.zeros(H, dtype)
    xs = pad_lanes(x[:, None], dtype)
    h0 = pad_lanes(np.asarray(state.h, dtype=dtype)[:, None], dtype)
    c0 = pad_lanes(np.asarray(state.c, dtype=dtype)[:, None], dtype)
    ys, _, _, trace = run_lanes(params, xs, h0, c0, keep_trace=True)
    y_hat = ys[:, 0]
    loss = total_loss(y, y_hat, filt)
    _, _, grad, _ = _batch_loss_grad(y[:, None], y_hat[:, None].astype(np.float64), filt.coeffs)
    dy = pad_lanes(grad, dtype)
    return loss, _gradient_set(_kernel.backward(trace, xs, params.w_h, params.fc_w, dy), dtype)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams):
        zeros = {n: np.zeros(np.shape(getattr(params, n))) for n in PARAM_NAMES}
        return cls(0, zeros, {n: z.copy() for n, z in zeros.items()})


def adam_step(params: ModelParams, grads: GradientSet, state: AdamState, learning_rate: float,
              trainable=PARAM_NAMES):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    step = state.step + 1
    m, v, new = dict(state.m), dict(state.v), {}
    corr1 = 1.0 - ADAM_BETA1**step
    corr2 = 1.0 - ADAM_BETA2**step
    for name in PARAM_NAMES:
        theta = np.asarray(getattr(params, name), dtype=np.float64)
        if name not in trainable:
            new[name] = theta
            continue
        g = np.asarray(getattr(grads, name), dtype=np.float64)
        m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        new[name] = theta - learning_rate * (m[name] / corr1) / (np.sqrt(v[name] / corr2) + ADAM_EPS)
    dtype = params.dtype
    updated = params.replace(**{n: np.asarray(a, dtype=dtype) for n, a in new.items()})
    return updated, AdamState(step, m, v)


def train_epoch(params: ModelParams, opt_state: AdamState, inputs: SegmentSet, targets: SegmentSet,
                config: TrainingConfig, epoch: int = 0, workspace=None):
    """One pass over the shuffled segments; returns ``(params, opt_state, mean loss)``.

    The mean is taken over all chunks that produced an update, each chunk
    contributing the batch-mean of its per-segment losses.
    """
    if len(inputs) != len(targets) or inputs.segment_len != targets.segment_len:
        raise AlignmentError(
            f"input has {len(inputs)} segments of {inputs.segment_len}, "
            f"target has {len(targets)} of {targets.segment_len}"
        )
    L = inputs.segment_len
    warm, trunc = config.warmup_len, config.truncation_len
    if warm >= L:
        raise ValueError(f"warmup_len ({warm}) must be shorter than the segments ({L})")
    coeffs = config.filter().coeffs
    dtype = params.dtype
    if workspace is None:
        workspace = _kernel.Workspace()

    order = np.random.default_rng([config.seed, epoch]).permutation(len(inputs))
    esr_sum = dc_sum = 0.0
    updates = 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start : start + config.batch_size]
        B = idx.size
        x = pad_lanes(inputs.segments[idx].T, dtype)
        y = targets.segments[idx].T.astype(np.float64)
        h = c = None
        if warm:
            _, h, c, _ = run_lanes(params, x[:warm], h, c)
        for s in range(warm, L, trunc):
            e = min(s + trunc, L)
            xc = x[s:e]
            y_hat, h_next, c_next, trace = run_lanes(params, xc, h, c, keep_trace=True, workspace=workspace)
            esr, dc, grad, valid = _batch_loss_grad(y[s:e], y_hat[:, :B].astype(np.float64), coeffs)
            h, c = h_next, c_next
            n_valid = int(valid.sum())
            if n_valid < B:
                log.warning("epoch %d: %d of %d segments silent in samples %d-%d; skipped",
                            epoch, B - n_valid, B, s, e)
            if n_valid == 0:
                continue
            dy = np.zeros(xc.shape, dtype=dtype)
            dy[:, :B] = grad / n_valid
            raw = _kernel.backward(trace, xc, params.w_h, params.fc_w, dy)
            params, opt_state = adam_step(params, _gradient_set(raw, dtype), opt_state,
                                          config.learning_rate, config.trainable)
            esr_sum += float(np.mean(esr[valid]))
            dc_sum += float(np.mean(dc[valid]))
            updates += 1
    if updates == 0:
        return params, opt_state, LossBreakdown(float("nan"), float("nan"), float("nan"))
    return params, opt_state, LossBreakdown.of(esr_sum / updates, dc_sum / updates)


@dataclass(frozen=True)
class Dataset:
    """Aligned train/test pairs of device input and recorded output."""

    train_input: AudioBuffer
    train_target: AudioBuffer
    test_input: AudioBuffer
    test_target: AudioBuffer

    def __post_init__(self):
        for kind in ("train", "test"):
            a, b = getattr(self, f"{kind}_input"), getattr(self, f"{kind}_target")
            if len(a) != len(b) or a.sample_rate_hz != b.sample_rate_hz:
                raise AlignmentError(f"{kind} input and target differ in length or sample rate")

    @property
    def sample_rate_hz(self):
        return self.train_input.sample_rate_hz


def load_dataset(root) -> Dataset:
    """Read ``train/`` and ``test/`` ``input.wav``/``target.wav`` pairs under ``root``."""
    root = Path(root)
    return Dataset(*(read_wav(root / kind / f"{name}.wav") for kind in ("train", "test")
                     for name in ("input", "target")))


def evaluate(params: ModelParams, test_input, test_target, preemph="none", skip: int = 1000) -> LossBreakdown:
    """Loss of a zero-state run over the test signal, ignoring the first ``skip`` samples."""
    y_hat, _ = forward_sequence(params, _window(test_input))
    return total_loss(_window(test_target)[skip:], y_hat[skip:], preemph)


def train_model(train_input, train_target, config: TrainingConfig, log_path=None, on_epoch=None):
    """Train one model from ``init_params(config.hidden_size, config.seed)``.

    Writes an ``epoch,esr,dc,total,seconds`` CSV row per epoch to ``log_path``
    when given. Returns ``(params, history)``.
    """
    inputs = segment(train_input, config.segment_len)
    targets = segment(train_target, config.segment_len)
    params = init_params(config.hidden_size, config.seed, config.residual)
    opt = AdamState.for_params(params)
    workspace = _kernel.Workspace()
    history = []
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            params, opt, loss = train_epoch(params, opt, inputs, targets, config, epoch, workspace)
            seconds = time.perf_counter() - t0
            history.append(loss)
            if writer is not None:
                writer.writerow([epoch + 1, f"{loss.esr:.8g}", f"{loss.dc:.8g}", f"{loss.total:.8g}",
                                 f"{seconds:.3f}"])
                fh.flush()
            if on_epoch is not None:
                on_epoch(epoch + 1, loss, seconds)
    finally:
        if fh is not None:
            fh.close()
    return params, history


def _train_copy(dataset, config, log_path):
    params, _ = train_model(dataset.train_input, dataset.train_target, config, log_path)
    score = evaluate(params, dataset.test_input, dataset.test_target, config.filter(), config.warmup_len)
    return params, score.total


def train_multi_seed(dataset: Dataset, config: TrainingConfig, log_dir=None):
    """Train ``config.copies`` models with seeds ``seed + i`` and keep the best on the test set.

    Each copy is scored with the same pre-emphasized loss it was trained on.
    Returns ``(best_params, scores)``.
    """
    jobs = []
    for i in range(config.copies):
        cfg = dataclasses.replace(config, seed=config.seed + i)
        path = None if log_dir is None else Path(log_dir) / f"copy{i}.csv"
        jobs.append((dataset, cfg, path))
    if config.parallel_copies > 1 and config.copies > 1:
        with ProcessPoolExecutor(max_workers=config.parallel_copies) as pool:
            results = list(pool.map(_train_copy, *zip(*jobs)))
    else:
        results = [_train_copy(*job) for job in jobs]
    scores = [score for _, score in results]
    best = int(np.argmin(scores))
    return results[best][0], scores
