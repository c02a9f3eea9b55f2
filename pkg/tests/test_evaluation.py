import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amprnn.audio_io import AudioBuffer
from amprnn.errors import AlignmentError, SignalLengthError
from amprnn.evaluation import (
    MATRIX_HEADER, PUBLISHED_SECONDS_PER_SECOND, benchmark_inference, cross_loss_matrix, error_spectrum,
    tanh_anchor,
)
from amprnn.filters import LABELS
from amprnn.model import ModelParams, init_params

FS = 44100


def identity_model(H=4):
    z = np.zeros
    return ModelParams(H, z(4 * H), z((4 * H, H)), z(4 * H), z(H), 0.0, residual=True).astype(np.float32)


def silent_model(H=4):
    return identity_model(H).replace(residual=False)


def _signal(n=20000, seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, n).astype(np.float32)


def test_identity_model_scores_zero():
    x = _signal()
    m = cross_loss_matrix({label: identity_model() for label in LABELS}, x, x)
    assert len(m.rows) == 4
    for row in m.rows:
        assert all(row.losses[label] == 0.0 for label in LABELS)


def test_zero_prediction_scores_one():
    x = _signal()
    m = cross_loss_matrix({"aw": silent_model()}, x, np.tanh(x))
    assert m.rows[0].trained_preemph == "aw"
    assert all(v == pytest.approx(1.0, rel=1e-12) for v in m.rows[0].losses.values())


def test_matrix_csv_format():
    x = _signal()
    models = {"none": silent_model(), "HP": identity_model(), "fd": init_params(4, 0), "aw": init_params(4, 1)}
    m = cross_loss_matrix(models, x, np.tanh(3 * x))
    lines = m.to_csv().splitlines()
    assert lines[0] == ",".join(MATRIX_HEADER)
    assert lines[0] == "hidden_size,trained_preemph,loss_none,loss_hp,loss_fd,loss_aw"
    assert lines[1] == "4,none,100,100,100,100"
    assert [line.split(",")[1] for line in lines[1:]] == ["none", "hp", "fd", "aw"]
    for line in lines[1:]:
        values = [float(v) for v in line.split(",")[2:]]
        assert all(np.isfinite(v) and v >= 0 for v in values)


def test_matrix_skips_warmup_samples():
    x = _signal()
    y = np.tanh(x)
    y_bad = y.copy()
    y_bad[:1000] = 5.0
    m1 = cross_loss_matrix({"none": silent_model()}, x, y)
    m2 = cross_loss_matrix({"none": silent_model()}, x, y_bad)
    assert m1.rows[0].losses == m2.rows[0].losses


def test_matrix_errors():
    x = _signal()
    with pytest.raises(ValueError):
        cross_loss_matrix({}, x, x)
    with pytest.raises(AlignmentError):
        cross_loss_matrix({"none": silent_model()}, x, x[:-1])
    with pytest.raises(SignalLengthError):
        cross_loss_matrix({"none": silent_model()}, x[:500], x[:500])


def test_spectrum_of_zero_error_is_floored():
    y = _signal(10000)
    s = error_spectrum(y, y)
    assert np.all(s.error_db == -200.0)
    assert s.freqs_hz.size == s.error_db.size == 2049
    assert s.params == {"fft_size": 4096, "hop": 2048, "window": "hann", "sample_rate_hz": FS}
    assert np.all(np.diff(s.freqs_hz) > 0)


def test_spectrum_sine_peak():
    e = np.sin(2 * np.pi * 1000 * np.arange(FS) / FS)
    s = error_spectrum(e, np.zeros_like(e))
    peak = np.argmax(s.error_db)
    df = FS / 4096
    assert abs(s.freqs_hz[peak] - 1000) <= df / 2
    assert s.error_db[peak] - np.median(s.error_db) >= 40


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["white", "sines", "device"]))
def test_parseval(seed, kind):
    rng = np.random.default_rng(seed)
    n = 3 * FS
    t = np.arange(n) / FS
    if kind == "white":
        e = rng.normal(size=n)
    elif kind == "sines":
        e = sum(rng.uniform(0.1, 1) * np.sin(2 * np.pi * rng.uniform(20, 20000) * t + rng.uniform(0, 6.3))
                for _ in range(6)) + 0.1 * rng.normal(size=n)
    else:
        x = rng.uniform(-0.5, 0.5, n)
        e = np.tanh(4 * x + 0.1) - 3 * x
    s = error_spectrum(e, np.zeros(n))
    assert s.bin_power().sum() == pytest.approx(np.mean(e * e), rel=5e-3)


def test_spectrum_is_sign_symmetric():
    rng = np.random.default_rng(1)
    y, y_hat = rng.normal(size=(2, 20000))
    assert np.array_equal(error_spectrum(y, y_hat).error_db, error_spectrum(y_hat, y).error_db)


def test_spectrum_uses_buffer_rate_and_checks_lengths():
    s = error_spectrum(AudioBuffer(_signal(8192), 8000), AudioBuffer(np.zeros(8192), 8000))
    assert s.freqs_hz[-1] == 4000 and s.params["sample_rate_hz"] == 8000
    with pytest.raises(SignalLengthError):
        error_spectrum(np.zeros(100), np.zeros(100))
    with pytest.raises(AlignmentError):
        error_spectrum(np.zeros(5000), np.zeros(5001))
    with pytest.raises(ValueError):
        error_spectrum(np.zeros(5000), np.zeros(5000), fft_size=3000)


def test_spectrum_csv():
    s = error_spectrum(_signal(8192), np.zeros(8192), fft_size=1024, hop=512)
    lines = s.to_csv().splitlines()
    assert lines[0] == "freq_hz,error_db" and len(lines) == 514


def test_anchor_examples():
    assert tanh_anchor(np.array([0.5]), drive=1.0)[0] == pytest.approx(0.46211715726, rel=1e-10)
    assert tanh_anchor(np.zeros(4)).tolist() == [0.0] * 4
    assert tanh_anchor(np.array([0.5]), drive=100.0)[0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        tanh_anchor(np.zeros(3), drive=0.0)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=50), st.floats(0.1, 10))
def test_anchor_odd_and_monotone(xs, drive):
    x = np.sort(np.array(xs))
    out = tanh_anchor(x, drive)
    assert np.all(np.diff(out) >= 0)
    assert np.array_equal(tanh_anchor(-x, drive), -out)


def test_anchor_peak_matched():
    x = AudioBuffer(_signal(1000), 22050)
    ref = AudioBuffer(0.3 * np.sin(np.arange(1000)), 22050)
    out = tanh_anchor(x, reference=ref)
    assert isinstance(out, AudioBuffer) and out.sample_rate_hz == 22050
    assert np.max(np.abs(out.samples)) == pytest.approx(np.max(np.abs(ref.samples)), rel=1e-12)


def test_benchmark_reports_real_time_factor():
    r = benchmark_inference(init_params(8, 0), seconds=0.1)
    assert r["real_time_factor"] > 0 and r["hidden_size"] == 8
    assert r["real_time_factor"] == pytest.approx(r["process_time_s"] / 0.1)
    assert set(PUBLISHED_SECONDS_PER_SECOND) == {32, 64}
    with pytest.raises(ValueError):
        benchmark_inference(init_params(8, 0), seconds=0.0)


def test_benchmark_linear_in_duration():
    p = init_params(32, 0)
    one = np.median([benchmark_inference(p, 1.0)["process_time_s"] for _ in range(5)])
    two = np.median([benchmark_inference(p, 2.0)["process_time_s"] for _ in range(5)])
    assert 2 * 0.75 <= two / one <= 2 * 1.25
