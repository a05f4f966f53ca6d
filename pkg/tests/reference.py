"""Straight-line reference implementations used as test oracles.

Everything here is written independently of the package internals: plain
Python loops and scalars, no shared helpers, so that agreement between the
engine and these functions is meaningful evidence.
"""

import math

MASK = 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# aggregation pipeline, straight off the formulas
# ---------------------------------------------------------------------------

def ref_similarity(prompts, views):
    n, m = len(prompts), len(views)
    d = len(prompts[0])
    s = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for c in range(d):
                acc += prompts[i][c] * views[j][c]
            s[i][j] = acc
    return s


def ref_scores(s):
    n = len(s)
    m = len(s[0])
    alpha = []
    for j in range(m):
        col = [s[i][j] for i in range(n)]
        alpha.append(max(col) - sum(col) / n)
    return alpha


def ref_weights(alpha):
    hi = max(alpha)
    exps = [math.exp(a - hi) for a in alpha]
    z = sum(exps)
    return [e / z for e in exps]


def ref_peva_descriptor(prompts, views):
    w = ref_weights(ref_scores(ref_similarity(prompts, views)))
    d = len(views[0])
    f = [0.0] * d
    for j, row in enumerate(views):
        for c in range(d):
            f[c] += w[j] * row[c]
    return f


def ref_average(views):
    m = len(views)
    d = len(views[0])
    return [sum(views[j][c] for j in range(m)) / m for c in range(d)]


def ref_logits(prompts, f, scale=1.0):
    return [scale * sum(p[c] * f[c] for c in range(len(f))) for p in prompts]


def ref_argmax(values):
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


# ---------------------------------------------------------------------------
# random stream, re-derived from the published algorithms
# ---------------------------------------------------------------------------

def ref_splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return x, (z ^ (z >> 31))


def ref_fnv1a64(text):
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK
    return h


class RefXoshiro:
    """xoshiro256** seeded from four SplitMix64 outputs."""

    def __init__(self, seed):
        s = seed & MASK
        self.state = []
        for _ in range(4):
            s, out = ref_splitmix64(s)
            self.state.append(out)

    @staticmethod
    def _rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & MASK

    def next_u64(self):
        s0, s1, s2, s3 = self.state
        result = (self._rotl((s1 * 5) & MASK, 7) * 9) & MASK
        t = (s1 << 17) & MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self.state = [s0, s1, s2, s3]
        return result


def ref_derive_seed(seed, tag):
    _, out = ref_splitmix64((seed ^ ref_fnv1a64(tag)) & MASK)
    return out


# ---------------------------------------------------------------------------
# optimizer, hand-stepped
# ---------------------------------------------------------------------------

def ref_adam_step(theta, g, m, v, t, lr=0.001, beta1=0.9, beta2=0.999,
                  eps=1e-8, wd=0.0):
    g = g + wd * theta
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta, m, v


# ---------------------------------------------------------------------------
# encoder forward pass, scalar loops
# ---------------------------------------------------------------------------

def _ref_layer_norm_row(row, gamma, beta, eps):
    d = len(row)
    mean = sum(row) / d
    var = sum((x - mean) ** 2 for x in row) / d
    inv = 1.0 / math.sqrt(var + eps)
    return [(row[c] - mean) * inv * gamma[c] + beta[c] for c in range(d)]


def _ref_matvecs(x, w, b):
    rows = len(x)
    din = len(w)
    dout = len(w[0])
    out = [[b[c] + sum(x[r][i] * w[i][c] for i in range(din)) for c in range(dout)]
           for r in range(rows)]
    return out


def _ref_gelu(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + math.tanh(c * (x + 0.044715 * x ** 3)))


def ref_attention(x, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, heads):
    t = len(x)
    p = len(w_q[0])
    dh = p // heads
    q = _ref_matvecs(x, w_q, b_q)
    k = _ref_matvecs(x, w_k, b_k)
    v = _ref_matvecs(x, w_v, b_v)
    merged = [[0.0] * p for _ in range(t)]
    for h in range(heads):
        c0 = h * dh
        for i in range(t):
            scores = []
            for j in range(t):
                acc = 0.0
                for c in range(dh):
                    acc += q[i][c0 + c] * k[j][c0 + c]
                scores.append(acc / math.sqrt(dh))
            hi = max(scores)
            exps = [math.exp(s - hi) for s in scores]
            z = sum(exps)
            probs = [e / z for e in exps]
            for c in range(dh):
                merged[i][c0 + c] = sum(probs[j] * v[j][c0 + c] for j in range(t))
    return _ref_matvecs(merged, w_o, b_o)


def ref_encode(views, params, heads, eps=1e-5):
    """params: dict of nested lists keyed like the engine's parameter names."""
    x = [list(params["cls_token"])] + [list(r) for r in views]
    pre = "block0."
    normed = [_ref_layer_norm_row(r, params[pre + "ln1.gamma"], params[pre + "ln1.beta"], eps)
              for r in x]
    att = ref_attention(normed,
                        params[pre + "attn.w_q"], params[pre + "attn.b_q"],
                        params[pre + "attn.w_k"], params[pre + "attn.b_k"],
                        params[pre + "attn.w_v"], params[pre + "attn.b_v"],
                        params[pre + "attn.w_o"], params[pre + "attn.b_o"], heads)
    x = [[x[r][c] + att[r][c] for c in range(len(x[0]))] for r in range(len(x))]
    normed = [_ref_layer_norm_row(r, params[pre + "ln2.gamma"], params[pre + "ln2.beta"], eps)
              for r in x]
    hidden = _ref_matvecs(normed, params[pre + "mlp.w1"], params[pre + "mlp.b1"])
    hidden = [[_ref_gelu(val) for val in row] for row in hidden]
    mlp = _ref_matvecs(hidden, params[pre + "mlp.w2"], params[pre + "mlp.b2"])
    x = [[x[r][c] + mlp[r][c] for c in range(len(x[0]))] for r in range(len(x))]
    return x[0]
