/*
 * LSTM recurrence kernels for amprnn.
 *
 * Only the model itself lives here: the per-sample cell update and the
 * reverse-time sweep that turns dL/dy_hat into parameter gradients. Loss
 * and pre-emphasis filtering stay on the Python side.
 *
 * Memory layout is lane-major: the batch axis is innermost and padded to a
 * multiple of LANES so each gate row of a lane tile is one contiguous run.
 *
 *   x, y, dy      [T][BP]
 *   acts          [T][4H][BP]    gate activations i, f, g, o
 *   wh            [4H][H]        row-major, gate order i, f, g, o
 *
 *   hs, cs        state before step t at offset t * ts, unit k at k * ks
 *                 (ks = BP, ts = H * BP for a dense [T+1][H][BP] trace)
 */
#define PY_SSIZE_T_CLEAN
#include <Python.h>
#include <math.h>
#include <stddef.h>
#include <string.h>

#define LANES 16
#define TBLK 32

static inline float tanh_f32(float x)
{
    /* Odd rational minimax fit, |err| < 3e-7 on the clamped range. */
    const float lim = 7.90531110763549805f;
    x = x < -lim ? -lim : (x > lim ? lim : x);
    float x2 = x * x;
    float p = x2 * -2.76076847742355e-16f + 2.00018790482477e-13f;
    p = x2 * p + -8.60467152213735e-11f;
    p = x2 * p + 5.12229709037114e-08f;
    p = x2 * p + 1.48572235717979e-05f;
    p = x2 * p + 6.37261928875436e-04f;
    p = x2 * p + 4.89352455891786e-03f;
    p = x * p;
    float q = x2 * 1.19825839466702e-06f + 1.18534705686654e-04f;
    q = x2 * q + 2.26843463243900e-03f;
    q = x2 * q + 4.89352518554385e-03f;
    return p / q;
}

static inline float sigmoid_f32(float x)
{
    return 0.5f + 0.5f * tanh_f32(0.5f * x);
}

static inline double sigmoid_f64(double x) { return 1.0 / (1.0 + exp(-x)); }

#define real float
#define SFX f32
#define TANH tanh_f32
#define SIGMOID sigmoid_f32
#include "_lstm_impl.h"
#undef real
#undef SFX
#undef TANH
#undef SIGMOID

#define real double
#define SFX f64
#define TANH tanh
#define SIGMOID sigmoid_f64
#include "_lstm_impl.h"
#undef real
#undef SFX
#undef TANH
#undef SIGMOID

int lstm_lanes(void) { return LANES; }

int lstm_time_block(void) { return TBLK; }

static struct PyModuleDef kernel_module = {
    PyModuleDef_HEAD_INIT, "_lstm",
    "Compiled LSTM recurrence kernels (loaded through ctypes).", -1, NULL,
};

PyMODINIT_FUNC PyInit__lstm(void) { return PyModule_Create(&kernel_module); }
