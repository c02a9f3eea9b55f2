"""ctypes binding for the compiled LSTM recurrence (``_lstm.c``).

Inputs here are lane-padded ``(T, BP)`` arrays with ``BP`` a multiple of
:data:`LANES`. :mod:`amprnn.model` and :mod:`amprnn.training` handle padding
and parameter packing; this module only owns buffer layout.
"""

import ctypes
import importlib.util
from dataclasses import dataclass

import numpy as np

_spec = importlib.util.find_spec("amprnn._lstm")
if _spec is None or _spec.origin is None:
    raise ImportError("compiled extension amprnn._lstm is missing; reinstall the package")
_lib = ctypes.CDLL(_spec.origin)

LANES = _lib.lstm_lanes()
TIME_BLOCK = _lib.lstm_time_block()


def _ptr(dtype):
    return np.ctypeslib.ndpointer(dtype=dtype, flags="C_CONTIGUOUS")


def _nullable(dtype):
    base = _ptr(dtype)

    def from_param(cls, obj):
        if obj is None:
            return None
        return base.from_param(obj)

    return type(f"Nullable_{np.dtype(dtype).name}", (base,), {"from_param": classmethod(from_param)})


_FORWARD = {}
_BACKWARD = {}
_i, _l = ctypes.c_int, ctypes.c_long
for _dtype, _sfx, _scalar in ((np.float32, "f32", ctypes.c_float), (np.float64, "f64", ctypes.c_double)):
    _p = _ptr(_dtype)
    _fwd = getattr(_lib, f"lstm_forward_{_sfx}")
    _fwd.argtypes = [_i, _i, _i, _p, _p, _p, _p, _p, _scalar, _i, _nullable(_dtype), _p, _p, _l, _l, _p]
    _fwd.restype = None
    _FORWARD[np.dtype(_dtype)] = _fwd
    _bwd = getattr(_lib, f"lstm_backward_{_sfx}")
    _bwd.argtypes = [_i, _i, _i, _p, _p, _p, _p, _p, _p, _l, _l, _p, _p, _p, _p, _p, _p, _p, _p, _p]
    _bwd.restype = None
    _BACKWARD[np.dtype(_dtype)] = _bwd


def padded_width(batch):
    return -(-batch // LANES) * LANES


class Workspace:
    """Reusable scratch buffers keyed by shape.

    Training allocates the same multi-megabyte trace buffers for every chunk;
    fresh allocations are page-faulted in each time, which costs as much as
    the arithmetic. One workspace per training loop, never shared between
    threads.
    """

    def __init__(self):
        self._buffers = {}

    def get(self, name, shape, dtype):
        key = (name, tuple(shape), np.dtype(dtype))
        buf = self._buffers.get(key)
        if buf is None:
            buf = self._buffers[key] = np.empty(shape, dtype=dtype)
        return buf


def _alloc(workspace, name, shape, dtype):
    if workspace is None:
        return np.empty(shape, dtype=dtype)
    return workspace.get(name, shape, dtype)


@dataclass
class Trace:
    """State and gate activations kept by a forward pass for the backward sweep."""

    hs: np.ndarray  # (T+1, H, BP): state before each step, then the final state
    cs: np.ndarray
    acts: np.ndarray  # (T, 4H, BP)


def forward(x, w_x, w_h, b, fc_w, fc_b, residual, h0, c0, keep_trace=False, workspace=None):
    """Run the recurrence from state ``(h0, c0)``, each shaped ``(H, BP)``.

    Returns ``(y, h_T, c_T, trace)``; ``trace`` is None unless requested.
    A trace built on a workspace is only valid until the next call that
    uses the same workspace.
    """
    T, bp = x.shape
    H = fc_w.shape[0]
    dtype = x.dtype
    y = np.empty_like(x)
    if keep_trace:
        hs = _alloc(workspace, "hs", (T + 1, H, bp), dtype)
        cs = _alloc(workspace, "cs", (T + 1, H, bp), dtype)
        acts = _alloc(workspace, "acts", (T, 4 * H, bp), dtype)
        trace = Trace(hs, cs, acts)
    else:
        hs = np.empty((2, H, bp), dtype=dtype)
        cs = np.empty((2, H, bp), dtype=dtype)
        acts, trace = None, None
    hs[0] = h0
    cs[0] = c0
    _FORWARD[dtype](T, bp, H, x, w_x, w_h, b, fc_w, fc_b, int(residual), acts, hs, cs, bp, H * bp, y)
    last = T if keep_trace else T % 2
    return y, hs[last].copy(), cs[last].copy(), trace


def backward(trace, x, w_h, fc_w, dy):
    """Parameter gradients ``(d_wx, d_wh, d_b, d_fcw, d_fcb)`` summed over lanes.

    ``dy`` is dL/dy_hat for every step and lane; lanes that are padding must
    carry zeros there.
    """
    T, bp = dy.shape
    H = fc_w.shape[0]
    G = 4 * H
    dtype = dy.dtype
    d_wx = np.zeros(G, dtype=dtype)
    d_wh = np.zeros((G, H), dtype=dtype)
    d_b = np.zeros(G, dtype=dtype)
    d_fcw = np.zeros(H, dtype=dtype)
    d_fcb = np.zeros(1, dtype=dtype)
    row = (TIME_BLOCK + 1) * LANES
    g_blk = np.empty((G, row), dtype=dtype)
    h_blk = np.empty((H, row), dtype=dtype)
    x_blk = np.empty(row, dtype=dtype)
    _BACKWARD[dtype](
        T, bp, H, x, w_h, fc_w, trace.acts, trace.hs, trace.cs, bp, H * bp,
        dy, d_wx, d_wh, d_b, d_fcw, d_fcb, g_blk, h_blk, x_blk,
    )
    return d_wx, d_wh, d_b, d_fcw, d_fcb[0]
