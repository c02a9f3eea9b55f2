"""Single-layer LSTM followed by a linear read-out, run one sample at a time.

For each input sample x[n] the cell updates its state and emits one output
sample; gates are packed in the order input, forget, cell candidate, output
(i, f, g, o) in ``w_x``, ``w_h`` and ``b``.

    i, f, o = sigmoid(w_x x + w_h h + b)      (their slices)
    g       = tanh(...)
    c'      = f * c + i * g
    h'      = o * tanh(c')
    y_hat   = fc_w . h' + fc_b  (+ x when residual)

Training and inference run in float32; a float64 path exists for gradient
checking. Both go through the compiled kernel in :mod:`amprnn._kernel`.
"""

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernel
from .audio_io import AudioBuffer
from .errors import CheckpointDimensionError, CheckpointFormatError, CheckpointVersionError

GATES = ("i", "f", "g", "o")
PARAM_NAMES = ("w_x", "w_h", "b", "fc_w", "fc_b")
FORMAT_VERSION = 1


def _frozen(a, dtype, shape=None):
    a = np.array(a, dtype=dtype, order="C")
    if shape is not None and a.shape != shape:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelParams:
    """Learnable parameters. Arrays are read-only; use :meth:`replace` to change them."""

    hidden_size: int
    w_x: np.ndarray  # (4H,)
    w_h: np.ndarray  # (4H, H) row-major
    b: np.ndarray  # (4H,)
    fc_w: np.ndarray  # (H,)
    fc_b: float
    residual: bool = False

    def __post_init__(self):
        H = int(self.hidden_size)
        if H < 1:
            raise ValueError(f"hidden_size must be >= 1, got {self.hidden_size}")
        dtype = np.result_type(np.asarray(self.w_x).dtype, np.float32)
        if dtype not in (np.float32, np.float64):
            dtype = np.dtype(np.float64)
        expected = {"w_x": (4 * H,), "w_h": (4 * H, H), "b": (4 * H,), "fc_w": (H,)}
        for name, shape in expected.items():
            a = np.asarray(getattr(self, name))
            if a.size != math.prod(shape):
                raise ValueError(f"{name} has {a.size} values, expected {shape} for hidden_size {H}")
            object.__setattr__(self, name, _frozen(a, dtype, shape))
        object.__setattr__(self, "fc_b", dtype.type(self.fc_b))
        object.__setattr__(self, "hidden_size", H)
        object.__setattr__(self, "residual", bool(self.residual))
        if not all(np.all(np.isfinite(getattr(self, n))) for n in PARAM_NAMES):
            raise ValueError("parameters must be finite")

    @property
    def dtype(self):
        return self.w_x.dtype

    def astype(self, dtype):
        return ModelParams(self.hidden_size, *(np.asarray(getattr(self, n), dtype=dtype) for n in PARAM_NAMES),
                           residual=self.residual)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def tensors(self):
        """Parameters by name, ``fc_b`` as a 0-d array."""
        return {n: np.asarray(getattr(self, n)) for n in PARAM_NAMES}

    def gate(self, name, array):
        """Slice of a packed ``(4H, ...)`` array belonging to one gate."""
        k = GATES.index(name)
        return array[k * self.hidden_size : (k + 1) * self.hidden_size]


@dataclass(frozen=True)
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size, dtype=np.float32):
        return cls(np.zeros(hidden_size, dtype=dtype), np.zeros(hidden_size, dtype=dtype))


def init_params(hidden_size: int, seed: int, residual: bool = False, dtype=np.float32) -> ModelParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias 1, fc_b 0."""
    if hidden_size < 1:
        raise ValueError(f"hidden_size must be >= 1, got {hidden_size}")
    H = hidden_size
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(H)
    w_x = rng.uniform(-bound, bound, 4 * H)
    w_h = rng.uniform(-bound, bound, (4 * H, H))
    b = rng.uniform(-bound, bound, 4 * H)
    b[H : 2 * H] = 1.0
    fc_w = rng.uniform(-bound, bound, H)
    return ModelParams(H, w_x.astype(dtype), w_h.astype(dtype), b.astype(dtype), fc_w.astype(dtype), 0.0, residual)


def pad_lanes(columns, dtype):
    """Stack ``(T, B)`` data into a zero-padded ``(T, BP)`` lane array."""
    columns = np.asarray(columns)
    T, B = columns.shape
    out = np.zeros((T, _kernel.padded_width(B)), dtype=dtype)
    out[:, :B] = columns
    return out


def run_lanes(params: ModelParams, x, h0=None, c0=None, keep_trace=False, workspace=None):
    """Kernel forward on lane-padded input ``x`` of shape ``(T, BP)``.

    ``h0``/``c0`` are ``(H, BP)`` or None for a zero start.
    """
    H, dtype = params.hidden_size, params.dtype
    bp = x.shape[1]
    if h0 is None:
        h0 = np.zeros((H, bp), dtype=dtype)
    if c0 is None:
        c0 = np.zeros((H, bp), dtype=dtype)
    return _kernel.forward(
        np.ascontiguousarray(x, dtype=dtype), params.w_x, params.w_h, params.b, params.fc_w, params.fc_b,
        params.residual, h0, c0, keep_trace=keep_trace, workspace=workspace,
    )


def forward_sequence(params: ModelParams, signal, state: LstmState = None):
    """Run the model over a whole signal; returns ``(output, final_state)``.

    ``signal`` may be an :class:`AudioBuffer` (returned as one) or an array.
    """
    H, dtype = params.hidden_size, params.dtype
    if state is None:
        state = LstmState.zeros(H, dtype)
    if state.h.shape != (H,) or state.c.shape != (H,):
        raise ValueError(f"state has shape {state.h.shape}, expected ({H},)")
    samples = signal.samples if isinstance(signal, AudioBuffer) else np.asarray(signal)
    x = samples.astype(dtype).ravel()
    if x.size == 0:
        y, final = x.copy(), state
    else:
        h0 = pad_lanes(np.asarray(state.h, dtype=dtype)[:, None], dtype)
        c0 = pad_lanes(np.asarray(state.c, dtype=dtype)[:, None], dtype)
        ys, hT, cT, _ = run_lanes(params, pad_lanes(x[:, None], dtype), h0, c0)
        y, final = ys[:, 0].copy(), LstmState(hT[:, 0].copy(), cT[:, 0].copy())
    if isinstance(signal, AudioBuffer):
        return AudioBuffer(y, signal.sample_rate_hz), final
    return y, final


def forward_sample(params: ModelParams, x: float, state: LstmState):
    """One step of the model: ``(y_hat, new_state)``."""
    y, state = forward_sequence(params, np.array([x], dtype=params.dtype), state)
    return float(y[0]), state


def save_checkpoint(params: ModelParams, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "hidden_size": params.hidden_size,
        "residual": params.residual,
        "w_x": params.w_x.tolist(),
        "w_h": params.w_h.ravel().tolist(),
        "b": params.b.tolist(),
        "fc_w": params.fc_w.tolist(),
        "fc_b": float(params.fc_b),
    }
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _number_list(doc, key):
    value = doc.get(key)
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise CheckpointFormatError(f"checkpoint field {key!r} must be a list of numbers")
    return value


def load_checkpoint(path, dtype=np.float32) -> ModelParams:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise CheckpointFormatError(f"{path}: top level must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        what = "missing" if version is None else f"{version!r} is unsupported"
        raise CheckpointVersionError(f"{path}: format_version {what} (expected {FORMAT_VERSION})")

    H = doc.get("hidden_size")
    if not isinstance(H, int) or isinstance(H, bool) or H < 1:
        raise CheckpointFormatError(f"{path}: hidden_size must be a positive integer")
    if not isinstance(doc.get("residual"), bool):
        raise CheckpointFormatError(f"{path}: residual must be true or false")
    fc_b = doc.get("fc_b")
    if not isinstance(fc_b, (int, float)) or isinstance(fc_b, bool):
        raise CheckpointFormatError(f"{path}: fc_b must be a number")
    arrays = {}
    for key, size in (("w_x", 4 * H), ("w_h", 4 * H * H), ("b", 4 * H), ("fc_w", H)):
        values = _number_list(doc, key)
        if len(values) != size:
            raise CheckpointDimensionError(
                f"{path}: {key} has {len(values)} values, expected {size} for hidden_size {H}"
            )
        arrays[key] = np.array(values, dtype=dtype)
    try:
        return ModelParams(H, fc_b=fc_b, residual=doc["residual"], **arrays)
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from None
