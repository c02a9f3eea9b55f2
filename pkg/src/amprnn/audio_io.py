"""Mono WAV input/output and fixed-length segmentation.

Only two encodings are handled: 16-bit integer PCM (format code 1) and
32-bit IEEE float (format code 3). Files are written with the canonical
44-byte header (RIFF, a 16-byte ``fmt `` chunk, then ``data``).
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SegmentError, WavFormatError, WavIOError

DEFAULT_SAMPLE_RATE = 44100

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE
_PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class AudioBuffer:
    """Mono signal at full scale +-1.0 with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.dtype.kind not in "fiu":
            raise TypeError(f"samples must be real numbers, got dtype {samples.dtype}")
        if samples.dtype.kind != "f":
            samples = samples.astype(np.float64)
        samples = np.ravel(samples)
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class SegmentSet:
    """Equal-length, non-overlapping windows stacked as rows of ``segments``."""

    segments: np.ndarray  # (count, segment_len)
    segment_len: int

    def __len__(self):
        return self.segments.shape[0]


def half_second(sample_rate_hz: int) -> int:
    """Segment length used for training: half a second, rounded to samples."""
    return int(round(0.5 * sample_rate_hz))


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioBuffer:
    """Read a mono 16-bit PCM or 32-bit float WAV file."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise WavIOError(f"{path}: file too short for a RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    frames = None
    for cid, size, body in _chunks(data):
        if len(body) < size:
            raise WavIOError(f"{path}: truncated '{cid.decode('latin-1')}' chunk "
                             f"({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk is {size} bytes, expected at least 16")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _EXTENSIBLE and size >= 26:
                # the real format code is the head of the SubFormat GUID
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            frames = body
    if fmt is None or frames is None:
        raise WavIOError(f"{path}: missing {'fmt' if fmt is None else 'data'} chunk")

    code, channels, rate, _, _, bits = fmt
    if channels != 1:
        raise WavFormatError(f"{path}: unsupported channel count {channels} (mono only)")
    if code == _PCM:
        if bits != 16:
            raise WavFormatError(f"{path}: unsupported bit depth {bits} for PCM (16 only)")
        samples = np.frombuffer(frames, dtype="<i2", count=len(frames) // 2) / _PCM16_SCALE
    elif code == _FLOAT:
        if bits != 32:
            raise WavFormatError(f"{path}: unsupported bit depth {bits} for float (32 only)")
        samples = np.frombuffer(frames, dtype="<f4", count=len(frames) // 4).astype(np.float32)
    else:
        raise WavFormatError(f"{path}: unsupported compression (format code {code})")
    if rate == 0:
        raise WavFormatError(f"{path}: sample rate is 0")
    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path, format="pcm16"):
    """Write ``buffer`` as ``pcm16`` (clamped, rounded) or ``float32``."""
    x = np.asarray(buffer.samples, dtype=np.float64)
    if format == "pcm16":
        top = 1.0 - 1.0 / _PCM16_SCALE
        payload = np.rint(np.clip(x, -1.0, top) * _PCM16_SCALE).astype("<i2").tobytes()
        code, bits = _PCM, 16
    elif format == "float32":
        payload = x.astype("<f4").tobytes()
        code, bits = _FLOAT, 32
    else:
        raise ValueError(f"format must be 'pcm16' or 'float32', got {format!r}")
    block = bits // 8
    rate = buffer.sample_rate_hz
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, code, 1, rate, rate * block, block, bits,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def segment(buffer, segment_len: int) -> SegmentSet:
    """Cut into ``len // segment_len`` contiguous windows; the tail is dropped."""
    if segment_len < 1:
        raise ValueError(f"segment_len must be >= 1, got {segment_len}")
    x = buffer.samples if isinstance(buffer, AudioBuffer) else np.asarray(buffer)
    count = x.shape[0] // segment_len
    if count == 0:
        raise SegmentError(
            f"signal has {x.shape[0]} samples; at least {segment_len} are required for one segment"
        )
    return SegmentSet(x[: count * segment_len].reshape(count, segment_len).copy(), segment_len)
