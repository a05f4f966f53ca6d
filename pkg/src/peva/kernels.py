"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``PEVA_BACKEND``
environment variable:

* ``auto`` (default) - use numba when it is importable, else numpy
* ``numba``          - require numba, fail loudly if it is missing
* ``numpy``          - force the pure-numpy implementations

Both implementations are kept importable (``numpy_impls`` / ``numba_impls``)
so tests and ``benchmarks/bench_kernels.py`` can compare them directly.
All kernels operate on float64 (uint64 for the RNG core); shapes are the
narrow 1-D/2-D cases used by the engine, not general ND.
"""

from __future__ import annotations

import math
import os

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _np_peva_fused(prompts: np.ndarray, views: np.ndarray):
    """Similarity matrix, per-view scores, softmax weights, weighted sum."""
    s = prompts @ views.T
    alpha = s.max(axis=0) - s.mean(axis=0)
    z = np.exp(alpha - alpha.max())
    w = z / z.sum()
    f = w @ views
    return s, alpha, w, f


def _np_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_rows_bwd(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    inner = (g * y).sum(axis=1, keepdims=True)
    return (g - inner) * y


def _np_layer_norm_rows(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                        eps: float):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gamma + beta, xhat, inv_std[:, 0]


def _np_layer_norm_rows_bwd(g: np.ndarray, xhat: np.ndarray,
                            inv_std: np.ndarray, gamma: np.ndarray):
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    dxhat = g * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv_std[:, None]
    return dx, dgamma, dbeta


def _np_gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def _np_gelu_bwd(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g * local


def _np_seg_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                      bounds: np.ndarray, heads: int):
    """Multi-head attention run independently on each row segment.

    q, k, v are (R, P) with R = sum of segment lengths; bounds holds the
    B+1 segment offsets. Returns the (R, P) output and the flat softmax
    cache laid out as [head][segment][row][col] for the backward pass.
    """
    r, p = q.shape
    dh = p // heads
    inv = 1.0 / math.sqrt(dh)
    nseg = bounds.shape[0] - 1
    sq = [int((bounds[b + 1] - bounds[b]) ** 2) for b in range(nseg)]
    seg_off = np.concatenate([[0], np.cumsum(sq)])
    total_sq = int(seg_off[-1])
    w = np.empty(heads * total_sq)
    out = np.empty_like(q)
    for b in range(nseg):
        r0, r1 = int(bounds[b]), int(bounds[b + 1])
        t = r1 - r0
        for h in range(heads):
            c0, c1 = h * dh, (h + 1) * dh
            scores = (q[r0:r1, c0:c1] @ k[r0:r1, c0:c1].T) * inv
            probs = _np_softmax_rows(scores)
            base = h * total_sq + int(seg_off[b])
            w[base:base + t * t] = probs.reshape(-1)
            out[r0:r1, c0:c1] = probs @ v[r0:r1, c0:c1]
    return out, w


def _np_seg_attention_bwd(g: np.ndarray, q: np.ndarray, k: np.ndarray,
                          v: np.ndarray, w: np.ndarray, bounds: np.ndarray,
                          heads: int):
    r, p = q.shape
    dh = p // heads
    inv = 1.0 / math.sqrt(dh)
    nseg = bounds.shape[0] - 1
    sq = [int((bounds[b + 1] - bounds[b]) ** 2) for b in range(nseg)]
    seg_off = np.concatenate([[0], np.cumsum(sq)])
    total_sq = int(seg_off[-1])
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for b in range(nseg):
        r0, r1 = int(bounds[b]), int(bounds[b + 1])
        t = r1 - r0
        for h in range(heads):
            c0, c1 = h * dh, (h + 1) * dh
            base = h * total_sq + int(seg_off[b])
            probs = w[base:base + t * t].reshape(t, t)
            g_out = g[r0:r1, c0:c1]
            dv[r0:r1, c0:c1] = probs.T @ g_out
            dprobs = g_out @ v[r0:r1, c0:c1].T
            dscores = (dprobs - (dprobs * probs).sum(axis=1, keepdims=True)) * probs
            dq[r0:r1, c0:c1] = inv * (dscores @ k[r0:r1, c0:c1])
            dk[r0:r1, c0:c1] = inv * (dscores.T @ q[r0:r1, c0:c1])
    return dq, dk, dv


def _np_adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
                    lr: float, beta1: float, beta2: float, eps: float,
                    wd: float, bc1: float, bc2: float, decay_mult: float) -> None:
    """One bias-corrected Adam step on flat views, in place.

    wd is the coupled L2 term added to the gradient; decay_mult applies
    decoupled decay directly to the weights (1.0 when unused).
    """
    if wd != 0.0:
        g = g + wd * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    if decay_mult != 1.0:
        p *= decay_mult
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _np_xoshiro_fill(state: np.ndarray, out: np.ndarray) -> None:
    """xoshiro256** bulk generation; state is a uint64[4], mutated in place."""
    mask = 0xFFFFFFFFFFFFFFFF
    s0, s1, s2, s3 = (int(state[0]), int(state[1]), int(state[2]), int(state[3]))
    for i in range(out.shape[0]):
        x = (s1 * 5) & mask
        out[i] = (((x << 7) | (x >> 57)) * 9) & mask
        t = (s1 << 17) & mask
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & mask
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


numpy_impls = {
    "peva_fused": _np_peva_fused,
    "softmax_rows": _np_softmax_rows,
    "softmax_rows_bwd": _np_softmax_rows_bwd,
    "layer_norm_rows": _np_layer_norm_rows,
    "layer_norm_rows_bwd": _np_layer_norm_rows_bwd,
    "gelu": _np_gelu,
    "gelu_bwd": _np_gelu_bwd,
    "seg_attention": _np_seg_attention,
    "seg_attention_bwd": _np_seg_attention_bwd,
    "adam_update": _np_adam_update,
    "xoshiro_fill": _np_xoshiro_fill,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impls():
    from numba import njit

    @njit(cache=True)
    def peva_fused(prompts, views):
        n, d = prompts.shape
        m = views.shape[0]
        s = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    acc += prompts[i, k] * views[j, k]
                s[i, j] = acc
        alpha = np.empty(m)
        for j in range(m):
            hi = s[0, j]
            total = 0.0
            for i in range(n):
                v = s[i, j]
                if v > hi:
                    hi = v
                total += v
            alpha[j] = hi - total / n
        amax = alpha[0]
        for j in range(1, m):
            if alpha[j] > amax:
                amax = alpha[j]
        w = np.empty(m)
        zsum = 0.0
        for j in range(m):
            w[j] = math.exp(alpha[j] - amax)
            zsum += w[j]
        for j in range(m):
            w[j] /= zsum
        f = np.zeros(d)
        for j in range(m):
            wj = w[j]
            for k in range(d):
                f[k] += wj * views[j, k]
        return s, alpha, w, f

    @njit(cache=True)
    def softmax_rows(x):
        rows, cols = x.shape
        y = np.empty_like(x)
        for r in range(rows):
            hi = x[r, 0]
            for c in range(1, cols):
                if x[r, c] > hi:
                    hi = x[r, c]
            total = 0.0
            for c in range(cols):
                y[r, c] = math.exp(x[r, c] - hi)
                total += y[r, c]
            for c in range(cols):
                y[r, c] /= total
        return y

    @njit(cache=True)
    def softmax_rows_bwd(y, g):
        rows, cols = y.shape
        dx = np.empty_like(y)
        for r in range(rows):
            inner = 0.0
            for c in range(cols):
                inner += g[r, c] * y[r, c]
            for c in range(cols):
                dx[r, c] = (g[r, c] - inner) * y[r, c]
        return dx

    @njit(cache=True)
    def layer_norm_rows(x, gamma, beta, eps):
        rows, cols = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        inv_std = np.empty(rows)
        for r in range(rows):
            mean = 0.0
            for c in range(cols):
                mean += x[r, c]
            mean /= cols
            var = 0.0
            for c in range(cols):
                d = x[r, c] - mean
                var += d * d
            var /= cols
            istd = 1.0 / math.sqrt(var + eps)
            inv_std[r] = istd
            for c in range(cols):
                h = (x[r, c] - mean) * istd
                xhat[r, c] = h
                y[r, c] = h * gamma[c] + beta[c]
        return y, xhat, inv_std

    @njit(cache=True)
    def layer_norm_rows_bwd(g, xhat, inv_std, gamma):
        rows, cols = g.shape
        dx = np.empty_like(g)
        dgamma = np.zeros(cols)
        dbeta = np.zeros(cols)
        for r in range(rows):
            m1 = 0.0
            m2 = 0.0
            for c in range(cols):
                gr = g[r, c]
                dgamma[c] += gr * xhat[r, c]
                dbeta[c] += gr
                dxh = gr * gamma[c]
                m1 += dxh
                m2 += dxh * xhat[r, c]
            m1 /= cols
            m2 /= cols
            for c in range(cols):
                dxh = g[r, c] * gamma[c]
                dx[r, c] = (dxh - m1 - xhat[r, c] * m2) * inv_std[r]
        return dx, dgamma, dbeta

    @njit(cache=True)
    def gelu(x):
        rows, cols = x.shape
        y = np.empty_like(x)
        for r in range(rows):
            for c in range(cols):
                v = x[r, c]
                y[r, c] = 0.5 * v * (1.0 + math.tanh(_GELU_C * (v + _GELU_A * v * v * v)))
        return y

    @njit(cache=True)
    def gelu_bwd(x, g):
        rows, cols = x.shape
        dx = np.empty_like(x)
        for r in range(rows):
            for c in range(cols):
                v = x[r, c]
                t = math.tanh(_GELU_C * (v + _GELU_A * v * v * v))
                local = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
                dx[r, c] = g[r, c] * local
        return dx

    @njit(cache=True)
    def seg_attention(q, k, v, bounds, heads):
        r, p = q.shape
        dh = p // heads
        inv = 1.0 / math.sqrt(dh)
        nseg = bounds.shape[0] - 1
        total_sq = 0
        for b in range(nseg):
            t = bounds[b + 1] - bounds[b]
            total_sq += t * t
        w = np.empty(heads * total_sq)
        out = np.empty_like(q)
        seg_off = 0
        for b in range(nseg):
            r0 = bounds[b]
            t = bounds[b + 1] - r0
            for h in range(heads):
                c0 = h * dh
                base = h * total_sq + seg_off
                for i in range(t):
                    hi = -1e300
                    for j in range(t):
                        acc = 0.0
                        for c in range(dh):
                            acc += q[r0 + i, c0 + c] * k[r0 + j, c0 + c]
                        acc *= inv
                        w[base + i * t + j] = acc
                        if acc > hi:
                            hi = acc
                    tot = 0.0
                    for j in range(t):
                        e = math.exp(w[base + i * t + j] - hi)
                        w[base + i * t + j] = e
                        tot += e
                    for j in range(t):
                        w[base + i * t + j] /= tot
                    # accumulate rows of v so the inner loop walks stride-1
                    for c in range(dh):
                        out[r0 + i, c0 + c] = 0.0
                    for j in range(t):
                        wij = w[base + i * t + j]
                        for c in range(dh):
                            out[r0 + i, c0 + c] += wij * v[r0 + j, c0 + c]
            seg_off += t * t
        return out, w

    @njit(cache=True)
    def seg_attention_bwd(g, q, k, v, w, bounds, heads):
        r, p = q.shape
        dh = p // heads
        inv = 1.0 / math.sqrt(dh)
        nseg = bounds.shape[0] - 1
        total_sq = 0
        for b in range(nseg):
            t = bounds[b + 1] - bounds[b]
            total_sq += t * t
        dq = np.zeros_like(q)
        dk = np.zeros_like(k)
        dv = np.zeros_like(v)
        seg_off = 0
        for b in range(nseg):
            r0 = bounds[b]
            t = bounds[b + 1] - r0
            dprobs = np.empty(t)
            dscores = np.empty(t)
            for h in range(heads):
                c0 = h * dh
                base = h * total_sq + seg_off
                for i in range(t):
                    inner = 0.0
                    for j in range(t):
                        acc = 0.0
                        for c in range(dh):
                            acc += g[r0 + i, c0 + c] * v[r0 + j, c0 + c]
                        dprobs[j] = acc
                        inner += acc * w[base + i * t + j]
                    for j in range(t):
                        dscores[j] = (dprobs[j] - inner) * w[base + i * t + j]
                    for j in range(t):
                        ds = dscores[j] * inv
                        wij = w[base + i * t + j]
                        for c in range(dh):
                            dq[r0 + i, c0 + c] += ds * k[r0 + j, c0 + c]
                            dk[r0 + j, c0 + c] += ds * q[r0 + i, c0 + c]
                            dv[r0 + j, c0 + c] += wij * g[r0 + i, c0 + c]
            seg_off += t * t
        return dq, dk, dv

    @njit(cache=True)
    def adam_update(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2, decay_mult):
        for i in range(p.shape[0]):
            gi = g[i] + wd * p[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] = p[i] * decay_mult - lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)

    @njit(cache=True)
    def xoshiro_fill(state, out):
        for i in range(out.shape[0]):
            x = state[1] * np.uint64(5)
            out[i] = ((x << np.uint64(7)) | (x >> np.uint64(57))) * np.uint64(9)
            t = state[1] << np.uint64(17)
            state[2] ^= state[0]
            state[3] ^= state[1]
            state[1] ^= state[2]
            state[0] ^= state[3]
            state[2] ^= t
            state[3] = (state[3] << np.uint64(45)) | (state[3] >> np.uint64(19))

    return {
        "peva_fused": peva_fused,
        "softmax_rows": softmax_rows,
        "softmax_rows_bwd": softmax_rows_bwd,
        "layer_norm_rows": layer_norm_rows,
        "layer_norm_rows_bwd": layer_norm_rows_bwd,
        "gelu": gelu,
        "gelu_bwd": gelu_bwd,
        "seg_attention": seg_attention,
        "seg_attention_bwd": seg_attention_bwd,
        "adam_update": adam_update,
        "xoshiro_fill": xoshiro_fill,
    }


def _select_backend() -> tuple[str, dict]:
    mode = os.environ.get("PEVA_BACKEND", "auto").strip().lower()
    if mode not in ("auto", "numba", "numpy"):
        raise ValueError(f"PEVA_BACKEND must be auto, numba or numpy, got {mode!r}")
    if mode == "numpy":
        return "numpy", numpy_impls
    try:
        impls = _build_numba_impls()
    except ImportError:
        if mode == "numba":
            raise
        return "numpy", numpy_impls
    return "numba", impls


numba_impls: dict | None
try:
    numba_impls = _build_numba_impls()
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba_impls = None

BACKEND, _active = _select_backend()

peva_fused = _active["peva_fused"]
softmax_rows = _active["softmax_rows"]
softmax_rows_bwd = _active["softmax_rows_bwd"]
layer_norm_rows = _active["layer_norm_rows"]
layer_norm_rows_bwd = _active["layer_norm_rows_bwd"]
gelu = _active["gelu"]
gelu_bwd = _active["gelu_bwd"]
seg_attention = _active["seg_attention"]
seg_attention_bwd = _active["seg_attention_bwd"]
adam_update = _active["adam_update"]
xoshiro_fill = _active["xoshiro_fill"]


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    p = np.eye(2)
    v = np.eye(2)
    peva_fused(p, v)
    y = softmax_rows(p)
    softmax_rows_bwd(y, p)
    out, xhat, inv_std = layer_norm_rows(p, np.ones(2), np.zeros(2), 1e-5)
    layer_norm_rows_bwd(out, xhat, inv_std, np.ones(2))
    gelu_bwd(p, gelu(p))
    bounds = np.array([0, 2], dtype=np.int64)
    att, cache = seg_attention(p, p, p, bounds, 1)
    seg_attention_bwd(att, p, p, p, cache, bounds, 1)
    adam_update(np.zeros(2), np.ones(2), np.zeros(2), np.zeros(2),
                0.001, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.001, 1.0)
    xoshiro_fill(np.array([1, 2, 3, 4], dtype=np.uint64), np.empty(2, dtype=np.uint64))
