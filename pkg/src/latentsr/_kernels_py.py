"""Pure-Python (numpy) implementations of the hot numerical kernels.

The compiled twin ``latentsr._kernels_cy`` exports the same functions with the
same semantics; ``latentsr.backend`` picks whichever is importable. Keep the
two files in lockstep: any behavioural change here must land in the .pyx too,
and tests/test_kernels.py asserts the pair agrees.

The RNG kernels advance a xoshiro256** state passed in as a uint64[4] array.
All integer arithmetic is done in Python ints with explicit 64-bit masking so
the stream is bit-identical to the C version.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

_MASK64 = (1 << 64) - 1
_U53_SCALE = 2.0**-53
_TWO_PI = 6.283185307179586


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def rng_next_u64(state: np.ndarray) -> int:
    """One xoshiro256** step; mutates ``state`` and returns the 64-bit output."""
    s0, s1, s2, s3 = (int(v) for v in state)
    result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
    t = (s1 << 17) & _MASK64
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return result


def rng_fill_uniform(state: np.ndarray, n: int) -> np.ndarray:
    """n doubles in [0, 1), each consuming one u64: (x >> 11) * 2**-53."""
    out = np.empty(n, dtype=np.float64)
    s0, s1, s2, s3 = (int(v) for v in state)
    for i in range(n):
        r = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        out[i] = (r >> 11) * _U53_SCALE
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out


def rng_fill_normal(state: np.ndarray, n: int) -> np.ndarray:
    """n standard normals via Box-Muller pairs.

    Consumes exactly 2*ceil(n/2) u64 draws regardless of n's parity, so the
    stream position depends only on n.
    """
    out = np.empty(n, dtype=np.float64)
    s0, s1, s2, s3 = (int(v) for v in state)
    i = 0
    while i < n:
        r1 = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        r2 = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        u1 = ((r1 >> 11) + 1) * _U53_SCALE  # (0, 1]: log stays finite
        u2 = (r2 >> 11) * _U53_SCALE
        rad = math.sqrt(-2.0 * math.log(u1))
        ang = _TWO_PI * u2
        out[i] = rad * math.cos(ang)
        i += 1
        if i < n:
            out[i] = rad * math.sin(ang)
            i += 1
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y[n, dout] = x[n, din] @ w[dout, din]^T + b[dout]."""
    return x @ w.T + b


def linear_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of sum(y * dy) for y = x @ w^T + b.

    Returns (dw[dout, din], db[dout], dx[n, din]); dw and db are summed over
    the batch.
    """
    dw = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ w
    return dw, db, dx


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """dx from the post-activation value y = tanh(x): dy * (1 - y^2)."""
    return dy * (1.0 - y * y)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Works given either the pre- or post-activation value (same sign mask)."""
    return dy * (x > 0.0)


def adam_update(
    p: np.ndarray,
    g: np.ndarray,
    m1: np.ndarray,
    m2: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    c1: float,
    c2: float,
) -> None:
    """In-place Adam on flat arrays; c1/c2 are the precomputed bias corrections
    1 - beta^t (computed once per step by the caller so both backends share the
    exact same values)."""
    m1 *= beta1
    m1 += (1.0 - beta1) * g
    m2 *= beta2
    m2 += (1.0 - beta2) * (g * g)
    p -= lr * (m1 / c1) / (np.sqrt(m2 / c2) + eps)


def conv2d_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid-padding stride-1 convolution (really cross-correlation).

    x: [cin, h, w], k: [cout, cin, kh, kw] -> [cout, h-kh+1, w-kw+1].
    """
    cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ValueError(f"channel mismatch: x has {cin}, kernel expects {kcin}")
    oh, ow = h - kh + 1, w - kw + 1
    out = np.empty((cout, oh, ow), dtype=np.float64)
    for co in range(cout):
        acc = np.zeros((oh, ow), dtype=np.float64)
        for ci in range(cin):
            for di in range(kh):
                for dj in range(kw):
                    acc += k[co, ci, di, dj] * x[ci, di : di + oh, dj : dj + ow]
        out[co] = acc
    return out


def box_filter_valid(x: np.ndarray, win: int) -> np.ndarray:
    """Mean over every valid win x win window, via an integral image."""
    h, w = x.shape
    s = np.zeros((h + 1, w + 1), dtype=np.float64)
    s[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    sums = s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]
    return sums / float(win * win)


def block_mean(x: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping factor x factor blocks."""
    h, w = x.shape
    oh, ow = h // factor, w // factor
    return x.reshape(oh, factor, ow, factor).mean(axis=(1, 3))


def bilinear_upsample(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping.

    Uses the base + frac * delta form so exactly-constant neighbourhoods map
    to the identical constant (no rounding drift), which the latent codec's
    round-trip contracts rely on.
    """
    h, w = x.shape
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = ys - y0
    fx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    v00 = x[np.ix_(y0c, x0c)]
    v01 = x[np.ix_(y0c, x1c)]
    v10 = x[np.ix_(y1c, x0c)]
    v11 = x[np.ix_(y1c, x1c)]
    top = v00 + fx[None, :] * (v01 - v00)
    bot = v10 + fx[None, :] * (v11 - v10)
    return top + fy[:, None] * (bot - top)
