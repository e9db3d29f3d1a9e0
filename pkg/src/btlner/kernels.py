"""Hot numeric kernels.

Every kernel exists twice: a pure-numpy version (``*_numpy``) and a loop
version compiled with numba (``*_numba``).  The unsuffixed public name is
bound to the numba version unless ``BTLNER_PURE_NUMPY=1`` is set or numba
is missing.  Both versions follow the same arithmetic so results agree to
rounding; the test-suite checks them against each other.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# masked weighted cross-entropy
# ---------------------------------------------------------------------------

def weighted_ce_numpy(logits, targets, mask, weights, use_log=True):
    """Per-token losses, weight denominator, batch loss and d(loss)/d(logits).

    Masked tokens get ``nan`` in the per-token array and an all-zero
    gradient row.  Sums run left to right (``cumsum``) so the reduction
    order is fixed.
    """
    x = np.asarray(logits, dtype=np.float64)
    n, c = x.shape
    per = np.full(n, np.nan)
    grad = np.zeros((n, c))
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return per, 0.0, np.nan, grad
    xs = x[idx]
    y = targets[idx]
    w = weights[y].astype(np.float64)
    m = xs.max(axis=1, keepdims=True)
    e = np.exp(xs - m)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    rows = np.arange(idx.size)
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    if use_log:
        lse = m[:, 0] + np.log(s[:, 0])
        loss = w * (lse - xs[rows, y])
        g = w[:, None] * (p - onehot)
    else:
        py = p[rows, y]
        loss = -w * py
        g = -(w * py)[:, None] * (onehot - p)
    per[idx] = loss
    denom = float(np.cumsum(w)[-1])
    if denom <= 0.0:
        return per, denom, np.nan, grad
    grad[idx] = g / denom
    return per, denom, float(np.cumsum(loss)[-1]) / denom, grad


@njit
def weighted_ce_numba(logits, targets, mask, weights, use_log=True):
    n, c = logits.shape
    per = np.full(n, np.nan)
    grad = np.zeros((n, c))
    p = np.empty(c)
    num = 0.0
    denom = 0.0
    for i in range(n):
        if not mask[i]:
            continue
        y = targets[i]
        w = float(weights[y])
        m = float(logits[i, 0])
        for j in range(1, c):
            if logits[i, j] > m:
                m = float(logits[i, j])
        s = 0.0
        for j in range(c):
            p[j] = math.exp(float(logits[i, j]) - m)
            s += p[j]
        for j in range(c):
            p[j] /= s
        if use_log:
            loss = w * (m + math.log(s) - float(logits[i, y]))
            for j in range(c):
                grad[i, j] = w * p[j]
            grad[i, y] -= w
        else:
            py = p[y]
            loss = -w * py
            for j in range(c):
                grad[i, j] = w * py * p[j]
            grad[i, y] -= w * py
        per[i] = loss
        num += loss
        denom += w
    if denom <= 0.0:
        return per, denom, np.nan, np.zeros((n, c))
    for i in range(n):
        for j in range(c):
            grad[i, j] /= denom
    return per, denom, num / denom, grad


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------

def layernorm_forward_numpy(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_backward_numpy(dy, xhat, rstd, gamma):
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = rstd[:, None] * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


@njit
def layernorm_forward_numba(x, gamma, beta, eps=LN_EPS):
    n, h = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(h):
            mu += x[i, j]
        mu /= h
        var = 0.0
        for j in range(h):
            d = x[i, j] - mu
            var += d * d
        var /= h
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(h):
            xh = (x[i, j] - mu) * r
            xhat[i, j] = xh
            y[i, j] = xh * gamma[j] + beta[j]
    return y, xhat, rstd


@njit
def layernorm_backward_numba(dy, xhat, rstd, gamma):
    n, h = dy.shape
    dx = np.empty_like(dy)
    dgamma = np.zeros(h, dtype=dy.dtype)
    dbeta = np.zeros(h, dtype=dy.dtype)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(h):
            dxh = dy[i, j] * gamma[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
            dgamma[j] += dy[i, j] * xhat[i, j]
            dbeta[j] += dy[i, j]
        m1 /= h
        m2 /= h
        for j in range(h):
            dx[i, j] = rstd[i] * (dy[i, j] * gamma[j] - m1 - xhat[i, j] * m2)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# attention softmax with key padding mask
# ---------------------------------------------------------------------------

def masked_softmax_numpy(scores, key_mask):
    """Softmax over the last axis of (P, heads, T, T) scores.

    ``key_mask`` is (P, T) boolean; False keys receive probability 0.
    """
    s = np.where(key_mask[:, None, None, :], scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward_numpy(probs, dprobs):
    return probs * (dprobs - (probs * dprobs).sum(axis=-1, keepdims=True))


@njit
def masked_softmax_numba(scores, key_mask):
    p, nh, t, _ = scores.shape
    out = np.zeros_like(scores)
    for b in range(p):
        for h in range(nh):
            for i in range(t):
                m = -np.inf
                for j in range(t):
                    if key_mask[b, j] and scores[b, h, i, j] > m:
                        m = scores[b, h, i, j]
                s = 0.0
                for j in range(t):
                    if key_mask[b, j]:
                        e = math.exp(scores[b, h, i, j] - m)
                        out[b, h, i, j] = e
                        s += e
                for j in range(t):
                    out[b, h, i, j] /= s
    return out


@njit
def softmax_backward_numba(probs, dprobs):
    p, nh, t, _ = probs.shape
    out = np.empty_like(probs)
    for b in range(p):
        for h in range(nh):
            for i in range(t):
                dot = 0.0
                for j in range(t):
                    dot += probs[b, h, i, j] * dprobs[b, h, i, j]
                for j in range(t):
                    out[b, h, i, j] = probs[b, h, i, j] * (dprobs[b, h, i, j] - dot)
    return out


# ---------------------------------------------------------------------------
# GELU (tanh approximation)
# ---------------------------------------------------------------------------

def gelu_forward_numpy(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def gelu_backward_numpy(x, t, dy):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


@njit
def gelu_forward_numba(x):
    flat = x.ravel()
    y = np.empty_like(flat)
    tt = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        t = math.tanh(_GELU_C * (v + 0.044715 * v * v * v))
        tt[i] = t
        y[i] = 0.5 * v * (1.0 + t)
    return y.reshape(x.shape), tt.reshape(x.shape)


@njit
def gelu_backward_numba(x, t, dy):
    xf = x.ravel()
    tf = t.ravel()
    df = dy.ravel()
    out = np.empty_like(xf)
    for i in range(xf.size):
        v = xf[i]
        tv = tf[i]
        dt = (1.0 - tv * tv) * _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        out[i] = df[i] * (0.5 * (1.0 + tv) + 0.5 * v * dt)
    return out.reshape(x.shape)


# ---------------------------------------------------------------------------
# embedding gradient scatter
# ---------------------------------------------------------------------------

def scatter_add_rows_numpy(out, index, rows):
    np.add.at(out, index, rows)
    return out


@njit
def scatter_add_rows_numba(out, index, rows):
    n, h = rows.shape
    for i in range(n):
        r = index[i]
        for j in range(h):
            out[r, j] += rows[i, j]
    return out


# ---------------------------------------------------------------------------
# exact k-nearest-neighbour search and vote
# ---------------------------------------------------------------------------

def knn_search_numpy(points, queries, k, chunk=256):
    """Indices of the k nearest points (squared Euclidean) per query.

    Equal distances keep insertion order (stable sort).
    """
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for lo in range(0, queries.shape[0], chunk):
        q = queries[lo:lo + chunk]
        diff = points[None, :, :] - q[:, None, :]
        d = np.zeros(diff.shape[:2])
        for c in range(points.shape[1]):
            d += diff[:, :, c] * diff[:, :, c]
        out[lo:lo + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


@njit
def knn_search_numba(points, queries, k, chunk=256):
    nq = queries.shape[0]
    n, c = points.shape
    out = np.empty((nq, k), dtype=np.int64)
    d = np.empty(n)
    for qi in range(nq):
        for i in range(n):
            acc = 0.0
            for j in range(c):
                diff = points[i, j] - queries[qi, j]
                acc += diff * diff
            d[i] = acc
        order = np.argsort(d, kind="mergesort")
        for j in range(k):
            out[qi, j] = order[j]
    return out


def knn_vote_numpy(neighbor_labels, num_classes):
    """Majority label per row; vote ties go to the tied class seen first."""
    preds = np.empty(neighbor_labels.shape[0], dtype=np.int64)
    for r, row in enumerate(neighbor_labels):
        votes = np.bincount(row, minlength=num_classes)
        best = votes.max()
        for lab in row:
            if votes[lab] == best:
                preds[r] = lab
                break
    return preds


@njit
def knn_vote_numba(neighbor_labels, num_classes):
    nq, k = neighbor_labels.shape
    preds = np.empty(nq, dtype=np.int64)
    votes = np.zeros(num_classes, dtype=np.int64)
    for r in range(nq):
        votes[:] = 0
        best = 0
        for j in range(k):
            lab = neighbor_labels[r, j]
            votes[lab] += 1
            if votes[lab] > best:
                best = votes[lab]
        for j in range(k):
            lab = neighbor_labels[r, j]
            if votes[lab] == best:
                preds[r] = lab
                break
    return preds


NUMPY_KERNELS = {
    "weighted_ce": weighted_ce_numpy,
    "layernorm_forward": layernorm_forward_numpy,
    "layernorm_backward": layernorm_backward_numpy,
    "masked_softmax": masked_softmax_numpy,
    "softmax_backward": softmax_backward_numpy,
    "gelu_forward": gelu_forward_numpy,
    "gelu_backward": gelu_backward_numpy,
    "scatter_add_rows": scatter_add_rows_numpy,
    "knn_search": knn_search_numpy,
    "knn_vote": knn_vote_numpy,
}

NUMBA_KERNELS = {
    "weighted_ce": weighted_ce_numba,
    "layernorm_forward": layernorm_forward_numba,
    "layernorm_backward": layernorm_backward_numba,
    "masked_softmax": masked_softmax_numba,
    "softmax_backward": softmax_backward_numba,
    "gelu_forward": gelu_forward_numba,
    "gelu_backward": gelu_backward_numba,
    "scatter_add_rows": scatter_add_rows_numba,
    "knn_search": knn_search_numba,
    "knn_vote": knn_vote_numba,
}

ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

weighted_ce = ACTIVE["weighted_ce"]
layernorm_forward = ACTIVE["layernorm_forward"]
layernorm_backward = ACTIVE["layernorm_backward"]
masked_softmax = ACTIVE["masked_softmax"]
softmax_backward = ACTIVE["softmax_backward"]
gelu_forward = ACTIVE["gelu_forward"]
gelu_backward = ACTIVE["gelu_backward"]
scatter_add_rows = ACTIVE["scatter_add_rows"]
knn_search = ACTIVE["knn_search"]
knn_vote = ACTIVE["knn_vote"]
