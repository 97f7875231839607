# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of latentsr._kernels_py. Same functions, same semantics.

Numerical parity notes: built with -ffp-contract=off so mul/add sequences
round like the numpy versions; the RNG integer path is exactly the published
xoshiro256** recurrence on native uint64, bit-identical to the masked-int
Python implementation.
"""

from libc.math cimport cos, exp, fmax, log, sin, sqrt, tanh

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"

cdef double _U53_SCALE = 2.0 ** -53
cdef double _TWO_PI = 6.283185307179586


cdef inline unsigned long long _rotl(unsigned long long x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline unsigned long long _step(unsigned long long* s) nogil:
    cdef unsigned long long result = _rotl(s[1] * 5ULL, 7) * 9ULL
    cdef unsigned long long t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def rng_next_u64(cnp.ndarray[cnp.uint64_t, ndim=1] state):
    """One xoshiro256** step; mutates ``state`` and returns the 64-bit output."""
    cdef unsigned long long s[4]
    cdef unsigned long long r
    s[0] = state[0]; s[1] = state[1]; s[2] = state[2]; s[3] = state[3]
    r = _step(s)
    state[0] = s[0]; state[1] = s[1]; state[2] = s[2]; state[3] = s[3]
    return r


def rng_fill_uniform(cnp.ndarray[cnp.uint64_t, ndim=1] state, Py_ssize_t n):
    """n doubles in [0, 1), each consuming one u64: (x >> 11) * 2**-53."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef unsigned long long s[4]
    cdef Py_ssize_t i
    s[0] = state[0]; s[1] = state[1]; s[2] = state[2]; s[3] = state[3]
    for i in range(n):
        out[i] = <double>(_step(s) >> 11) * _U53_SCALE
    state[0] = s[0]; state[1] = s[1]; state[2] = s[2]; state[3] = s[3]
    return out


def rng_fill_normal(cnp.ndarray[cnp.uint64_t, ndim=1] state, Py_ssize_t n):
    """n standard normals via Box-Muller pairs; consumes 2*ceil(n/2) u64 draws."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef unsigned long long s[4]
    cdef unsigned long long r1, r2
    cdef double u1, u2, rad, ang
    cdef Py_ssize_t i = 0
    s[0] = state[0]; s[1] = state[1]; s[2] = state[2]; s[3] = state[3]
    while i < n:
        r1 = _step(s)
        r2 = _step(s)
        u1 = <double>((r1 >> 11) + 1ULL) * _U53_SCALE
        u2 = <double>(r2 >> 11) * _U53_SCALE
        rad = sqrt(-2.0 * log(u1))
        ang = _TWO_PI * u2
        out[i] = rad * cos(ang)
        i += 1
        if i < n:
            out[i] = rad * sin(ang)
            i += 1
    state[0] = s[0]; state[1] = s[1]; state[2] = s[2]; state[3] = s[3]
    return out


def linear_forward(cnp.ndarray[cnp.float64_t, ndim=2] x,
                   cnp.ndarray[cnp.float64_t, ndim=2] w,
                   cnp.ndarray[cnp.float64_t, ndim=1] b):
    """y[n, dout] = x[n, din] @ w[dout, din]^T + b[dout]."""
    cdef Py_ssize_t n = x.shape[0], din = x.shape[1], dout = w.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty((n, dout), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        for j in range(dout):
            acc = 0.0
            for k in range(din):
                acc += x[i, k] * w[j, k]
            y[i, j] = acc + b[j]
    return y


def linear_backward(cnp.ndarray[cnp.float64_t, ndim=2] x,
                    cnp.ndarray[cnp.float64_t, ndim=2] w,
                    cnp.ndarray[cnp.float64_t, ndim=2] dy):
    """Gradients of sum(y * dy) for y = x @ w^T + b: (dw, db, dx)."""
    cdef Py_ssize_t n = x.shape[0], din = x.shape[1], dout = w.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dw = np.zeros((dout, din), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] db = np.zeros(dout, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dx = np.empty((n, din), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double g, acc
    for i in range(n):
        for j in range(dout):
            g = dy[i, j]
            db[j] += g
            for k in range(din):
                dw[j, k] += g * x[i, k]
        for k in range(din):
            acc = 0.0
            for j in range(dout):
                acc += dy[i, j] * w[j, k]
            dx[i, k] = acc
    return dw, db, dx


def tanh_forward(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yf = np.empty(xf.shape[0], dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(xf.shape[0]):
        yf[i] = tanh(xf[i])
    return yf.reshape(np.shape(x))


def tanh_backward(y, dy):
    """dx from the post-activation value y = tanh(x): dy * (1 - y^2)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yf = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] df = np.ascontiguousarray(dy, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(yf.shape[0], dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(yf.shape[0]):
        out[i] = df[i] * (1.0 - yf[i] * yf[i])
    return out.reshape(np.shape(y))


def relu_forward(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] yf = np.empty(xf.shape[0], dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(xf.shape[0]):
        yf[i] = fmax(xf[i], 0.0)
    return yf.reshape(np.shape(x))


def relu_backward(x, dy):
    """Works given either the pre- or post-activation value (same sign mask)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] df = np.ascontiguousarray(dy, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(xf.shape[0], dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(xf.shape[0]):
        out[i] = df[i] if xf[i] > 0.0 else 0.0
    return out.reshape(np.shape(x))


def adam_update(cnp.ndarray[cnp.float64_t, ndim=1] p,
                cnp.ndarray[cnp.float64_t, ndim=1] g,
                cnp.ndarray[cnp.float64_t, ndim=1] m1,
                cnp.ndarray[cnp.float64_t, ndim=1] m2,
                double lr, double beta1, double beta2, double eps,
                double c1, double c2):
    """In-place Adam on flat arrays; c1/c2 are precomputed 1 - beta^t."""
    cdef Py_ssize_t i, n = p.shape[0]
    for i in range(n):
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i]
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * (g[i] * g[i])
        p[i] -= lr * (m1[i] / c1) / (sqrt(m2[i] / c2) + eps)


def conv2d_valid(cnp.ndarray[cnp.float64_t, ndim=3] x,
                 cnp.ndarray[cnp.float64_t, ndim=4] k):
    """Valid-padding stride-1 convolution: [cin,h,w] x [cout,cin,kh,kw]."""
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t cout = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    if k.shape[1] != cin:
        raise ValueError(f"channel mismatch: x has {cin}, kernel expects {k.shape[1]}")
    cdef Py_ssize_t oh = h - kh + 1, ow = w - kw + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((cout, oh, ow), dtype=np.float64)
    cdef Py_ssize_t co, ci, di, dj, i, j
    cdef double kv
    for co in range(cout):
        for ci in range(cin):
            for di in range(kh):
                for dj in range(kw):
                    kv = k[co, ci, di, dj]
                    for i in range(oh):
                        for j in range(ow):
                            out[co, i, j] += kv * x[ci, di + i, dj + j]
    return out


def box_filter_valid(cnp.ndarray[cnp.float64_t, ndim=2] x, int win):
    """Mean over every valid win x win window."""
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1]
    cdef Py_ssize_t oh = h - win + 1, ow = w - win + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((oh, ow), dtype=np.float64)
    cdef Py_ssize_t i, j, di, dj
    cdef double acc, inv = 1.0 / (win * win)
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for di in range(win):
                for dj in range(win):
                    acc += x[i + di, j + dj]
            out[i, j] = acc * inv
    return out


def block_mean(cnp.ndarray[cnp.float64_t, ndim=2] x, int factor):
    """Mean over non-overlapping factor x factor blocks."""
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1]
    cdef Py_ssize_t oh = h // factor, ow = w // factor
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((oh, ow), dtype=np.float64)
    cdef Py_ssize_t i, j, di, dj
    cdef double acc, inv = 1.0 / (factor * factor)
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for di in range(factor):
                for dj in range(factor):
                    acc += x[i * factor + di, j * factor + dj]
            out[i, j] = acc * inv
    return out


def bilinear_upsample(cnp.ndarray[cnp.float64_t, ndim=2] x, Py_ssize_t out_h, Py_ssize_t out_w):
    """Bilinear resize with half-pixel centers and edge clamping (base +
    frac * delta form; see the Python twin for why)."""
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((out_h, out_w), dtype=np.float64)
    cdef double sy = h / <double>out_h
    cdef double sx = w / <double>out_w
    cdef Py_ssize_t i, j, y0, x0, y0c, y1c, x0c, x1c
    cdef double yc, xc, fy, fx, v00, v01, v10, v11, top, bot
    for i in range(out_h):
        yc = (<double>i + 0.5) * sy - 0.5
        y0 = <Py_ssize_t>yc if yc >= 0.0 else <Py_ssize_t>yc - 1  # floor
        fy = yc - <double>y0
        y0c = min(max(y0, 0), h - 1)
        y1c = min(max(y0 + 1, 0), h - 1)
        for j in range(out_w):
            xc = (<double>j + 0.5) * sx - 0.5
            x0 = <Py_ssize_t>xc if xc >= 0.0 else <Py_ssize_t>xc - 1
            fx = xc - <double>x0
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x0 + 1, 0), w - 1)
            v00 = x[y0c, x0c]
            v01 = x[y0c, x1c]
            v10 = x[y1c, x0c]
            v11 = x[y1c, x1c]
            top = v00 + fx * (v01 - v00)
            bot = v10 + fx * (v11 - v10)
            out[i, j] = top + fy * (bot - top)
    return out
