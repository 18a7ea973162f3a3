"""Pure-numpy training kernels; the fallback when the compiled core is absent.

Both backends implement the same three functions with identical semantics:

    forward_logits(flat, dims, X)             -> (n,) raw output logits
    loss_grad(flat, dims, X, y, lam, cache, eps)
                                              -> (objective, flat gradient)
    train_loop(flat0, dims, X, y, lam, cached_logp_t, perms, subsamples,
               batch_size, lr, beta1, beta2, adam_eps, eps)
                                              -> (flat, first/last epoch loss)

Cache layouts are row-contiguous in the batch dimension for locality:
``cache`` in loss_grad is (batch, M_sub) and ``cached_logp_t`` in train_loop
is (N, M_pool), i.e. the transpose of the pool's member-major cache.

The objective is mean binary cross-entropy over the batch (computed from raw
logits in log-sum-exp form) plus, when a cache of bootstrap log-predictions is
supplied and lam > 0, lam times the batch mean of the member-mean absolute
distance between the clamped target log-prediction and the cached values.
The |.| subgradient at a tie is 0, as is the clamp's outside the open
interval (eps, 1 - eps). Divergence raises FloatingPointError.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _unflatten(flat, dims):
    L = len(dims) - 1
    ws, bs, off = [], [], 0
    for l in range(L):
        n_w = dims[l + 1] * dims[l]
        ws.append(flat[off : off + n_w].reshape(dims[l + 1], dims[l]))
        off += n_w
        bs.append(flat[off : off + dims[l + 1]])
        off += dims[l + 1]
    return ws, bs


def _forward_acts(ws, bs, X):
    acts = [X]
    a = X
    for l in range(len(ws) - 1):
        a = np.maximum(a @ ws[l].T + bs[l], 0.0)
        acts.append(a)
    logits = (a @ ws[-1].T).ravel() + bs[-1][0]
    return acts, logits


def forward_logits(flat, dims, X):
    ws, bs = _unflatten(np.asarray(flat), np.asarray(dims))
    _, logits = _forward_acts(ws, bs, np.asarray(X))
    return logits


def _sigmoid(z):
    # overflow-safe: exp argument is always <= 0
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _eval_loss_grad(ws, bs, dims, X, y, lam, cache, eps):
    B = X.shape[0]
    acts, z = _forward_acts(ws, bs, X)
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(e)))
    dz = (p - y) / B

    if cache is not None and lam > 0.0:
        pc = np.clip(p, eps, 1.0 - eps)
        logp = np.log(pc)
        diffs = logp[:, None] - cache
        loss += lam * float(np.mean(np.abs(diffs)))
        inside = (p > eps) & (p < 1.0 - eps)
        dz = dz + (lam / B) * np.sign(diffs).mean(axis=1) * (1.0 - p) * inside

    L = len(ws)
    gws = [None] * L
    gbs = [None] * L
    delta = dz[:, None]
    for l in range(L - 1, -1, -1):
        gws[l] = delta.T @ acts[l]
        gbs[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ ws[l]) * (acts[l] > 0.0)
    grad = np.concatenate([a.ravel() for pair in zip(gws, gbs) for a in pair])
    return loss, grad


def loss_grad(flat, dims, X, y, lam, cache, eps):
    dims = np.asarray(dims)
    ws, bs = _unflatten(np.asarray(flat, dtype=np.float64), dims)
    return _eval_loss_grad(
        ws, bs, dims, np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64),
        float(lam), None if cache is None else np.asarray(cache, dtype=np.float64), float(eps),
    )


def train_loop(
    flat0,
    dims,
    X,
    y,
    lam,
    cached_logp_t,
    perms,
    subsamples,
    batch_size,
    lr,
    beta1,
    beta2,
    adam_eps,
    eps,
):
    dims = np.asarray(dims)
    flat = np.array(flat0, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    epochs = perms.shape[0]
    steps_per_epoch = -(-n // batch_size)
    use_penalty = cached_logp_t is not None and lam > 0.0

    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    t = 0
    first_loss = last_loss = 0.0
    ws, bs = _unflatten(flat, dims)  # views into flat, updated in place below
    for e in range(epochs):
        order = perms[e]
        epoch_loss = 0.0
        for s in range(steps_per_epoch):
            rows = order[s * batch_size : (s + 1) * batch_size]
            cache_b = None
            if use_penalty:
                cache_b = cached_logp_t[np.ix_(rows, subsamples[t])]
            loss, g = _eval_loss_grad(ws, bs, dims, X[rows], y[rows], lam, cache_b, eps)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite objective at step {t}")
            epoch_loss += loss
            t += 1
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * g * g
            m_hat = m * (1.0 / (1.0 - beta1**t))
            v_hat = v * (1.0 / (1.0 - beta2**t))
            flat -= lr * m_hat / (np.sqrt(v_hat) + adam_eps)
        epoch_mean = epoch_loss / steps_per_epoch
        if e == 0:
            first_loss = epoch_mean
        last_loss = epoch_mean
    return flat, first_loss, last_loss
