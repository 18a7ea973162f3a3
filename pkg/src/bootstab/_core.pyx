# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels: batched MLP forward/backward and the Adam loop.

Same contracts as :mod:`bootstab._core_py`; matrix products go through BLAS
dgemm, everything else is straight C loops. See that module for the semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p, pow, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"

cdef enum:
    MAX_LAYERS = 16


cdef inline void _gemm_rm(bint ta, bint tb, int m, int n, int k, double alpha,
                          const double* A, int lda, const double* B, int ldb,
                          double beta, double* C, int ldc) noexcept nogil:
    # row-major C(m,n) = alpha * opA(A)(m,k) @ opB(B)(k,n) + beta * C,
    # computed as the transposed product in column-major BLAS
    cdef char cta = c'T' if ta else c'N'
    cdef char ctb = c'T' if tb else c'N'
    cdef int bm = n, bn = m, bk = k, blda = ldb, bldb = lda, bldc = ldc
    dgemm(&ctb, &cta, &bm, &bn, &bk, &alpha, <double*>B, &blda, <double*>A, &bldb,
          &beta, C, &bldc)


cdef void _forward_core(const double* flat, const cnp.int64_t* w_off,
                        const cnp.int64_t* b_off, const cnp.int64_t* dims, int L,
                        int B, double** acts) noexcept nogil:
    # acts[0] holds the input batch; fills acts[1..L]; acts[L] is (B, 1) logits
    cdef int l, i, j, din, dout
    cdef const double* bias
    cdef const double* W
    cdef const double* inp
    cdef double* out
    cdef double v
    for l in range(L):
        din = <int>dims[l]
        dout = <int>dims[l + 1]
        W = flat + w_off[l]
        bias = flat + b_off[l]
        inp = acts[l]
        out = acts[l + 1]
        if dout == 1:
            # width-1 layers (always the output) bypass BLAS dispatch
            for i in range(B):
                v = bias[0]
                for j in range(din):
                    v += inp[i * din + j] * W[j]
                out[i] = (v if v > 0.0 else 0.0) if l < L - 1 else v
        else:
            _gemm_rm(False, True, B, dout, din, 1.0, inp, din, W, din, 0.0, out, dout)
            if l < L - 1:
                for i in range(B):
                    for j in range(dout):
                        v = out[i * dout + j] + bias[j]
                        out[i * dout + j] = v if v > 0.0 else 0.0
            else:
                for i in range(B):
                    for j in range(dout):
                        out[i * dout + j] += bias[j]


cdef double _loss_grad_core(const double* flat, double* gflat,
                            const cnp.int64_t* w_off, const cnp.int64_t* b_off,
                            const cnp.int64_t* dims, int L, int B,
                            const double* yb, double lam, const double* cache,
                            int M, double eps, double** acts,
                            double** deltas) noexcept nogil:
    # returns the batch objective and fills gflat; acts[0] holds the inputs,
    # cache is (B, M) row-major
    cdef int l, i, j, m_i, din, dout
    cdef double z, p, pc, lp, diff, dzi, sgn_sum, e
    cdef double bce = 0.0, pen = 0.0, obj
    cdef double* dz = deltas[L]
    cdef double* gb
    cdef const double* crow

    _forward_core(flat, w_off, b_off, dims, L, B, acts)

    for i in range(B):
        z = acts[L][i]
        e = exp(-fabs(z))
        p = 1.0 / (1.0 + e) if z >= 0.0 else e / (1.0 + e)
        bce += (z if z > 0.0 else 0.0) - z * yb[i] + log1p(e)
        dzi = (p - yb[i]) / B
        if cache != NULL and lam > 0.0:
            pc = p
            if pc < eps:
                pc = eps
            elif pc > 1.0 - eps:
                pc = 1.0 - eps
            lp = log(pc)
            sgn_sum = 0.0
            crow = cache + <cnp.int64_t>i * M
            for m_i in range(M):
                diff = lp - crow[m_i]
                pen += fabs(diff)
                sgn_sum += (diff > 0.0) - (diff < 0.0)
            if eps < p < 1.0 - eps:
                dzi += (lam / B) * (sgn_sum / M) * (1.0 - p)
        dz[i] = dzi

    obj = bce / B
    if cache != NULL and lam > 0.0:
        obj += lam * pen / (B * M)

    cdef double* gw
    cdef double* dlt
    cdef const double* dnext
    for l in range(L - 1, -1, -1):
        din = <int>dims[l]
        dout = <int>dims[l + 1]
        gw = gflat + w_off[l]
        gb = gflat + b_off[l]
        dnext = deltas[l + 1]
        if dout == 1:
            gb[0] = 0.0
            for j in range(din):
                gw[j] = 0.0
            for i in range(B):
                gb[0] += dnext[i]
                for j in range(din):
                    gw[j] += dnext[i] * acts[l][i * din + j]
        else:
            _gemm_rm(True, False, dout, din, B, 1.0, dnext, dout, acts[l], din,
                     0.0, gw, din)
            for j in range(dout):
                gb[j] = 0.0
            for i in range(B):
                for j in range(dout):
                    gb[j] += dnext[i * dout + j]
        if l > 0:
            dlt = deltas[l]
            if dout == 1:
                for i in range(B):
                    for j in range(din):
                        dlt[i * din + j] = dnext[i] * flat[w_off[l] + j]
            else:
                _gemm_rm(False, False, B, din, dout, 1.0, dnext, dout,
                         flat + w_off[l], din, 0.0, dlt, din)
            for i in range(B * din):
                if acts[l][i] <= 0.0:
                    dlt[i] = 0.0
    return obj


cdef void _adam_core(double* flat, const double* g, double* m, double* v,
                     cnp.int64_t n, double lr, double beta1, double beta2,
                     double adam_eps, double c1, double c2) noexcept nogil:
    # c1 = 1 - beta1^t, c2 = 1 - beta2^t (bias corrections)
    cdef cnp.int64_t i
    cdef double mh, vh
    cdef double inv1 = 1.0 / c1, inv2 = 1.0 / c2
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        mh = m[i] * inv1
        vh = v[i] * inv2
        flat[i] -= lr * mh / (sqrt(vh) + adam_eps)


cdef _offsets(cnp.int64_t[::1] dims):
    cdef int L = dims.shape[0] - 1
    w_off = np.empty(L, dtype=np.int64)
    b_off = np.empty(L, dtype=np.int64)
    off = 0
    for l in range(L):
        w_off[l] = off
        off += int(dims[l + 1] * dims[l])
        b_off[l] = off
        off += int(dims[l + 1])
    return w_off, b_off, off


cdef double* _data(cnp.ndarray a) noexcept:
    return <double*>cnp.PyArray_DATA(a)


def forward_logits(flat, dims, X):
    flat = np.ascontiguousarray(flat, dtype=np.float64)
    dims = np.ascontiguousarray(dims, dtype=np.int64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.int64_t[::1] dims_mv = dims
    cdef int L = dims_mv.shape[0] - 1
    cdef int n = X.shape[0]
    if L > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers supported, got {L}")
    w_off_a, b_off_a, n_params = _offsets(dims_mv)
    if flat.shape[0] != n_params:
        raise ValueError(f"expected {n_params} parameters, got {flat.shape[0]}")

    bufs = [np.empty((n, int(dims[l + 1])), dtype=np.float64) for l in range(L)]
    cdef double* acts[MAX_LAYERS + 1]
    acts[0] = _data(X)
    for l in range(L):
        acts[l + 1] = _data(bufs[l])

    cdef const double[::1] flat_mv = flat
    cdef cnp.int64_t[::1] w_off = w_off_a
    cdef cnp.int64_t[::1] b_off = b_off_a
    with nogil:
        _forward_core(&flat_mv[0], &w_off[0], &b_off[0], &dims_mv[0], L, n, acts)
    return bufs[L - 1].reshape(n)


def loss_grad(flat, dims, X, y, lam, cache, eps):
    flat = np.ascontiguousarray(flat, dtype=np.float64)
    dims = np.ascontiguousarray(dims, dtype=np.int64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.int64_t[::1] dims_mv = dims
    cdef int L = dims_mv.shape[0] - 1
    cdef int B = X.shape[0]
    cdef int M = 0
    if L > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers supported, got {L}")
    w_off_a, b_off_a, n_params = _offsets(dims_mv)

    cache_arr = None
    cdef double* cache_ptr = NULL
    if cache is not None and lam > 0.0:
        cache_arr = np.ascontiguousarray(cache, dtype=np.float64)
        if cache_arr.shape[0] != B:
            raise ValueError(f"cache rows ({cache_arr.shape[0]}) must equal batch ({B})")
        M = cache_arr.shape[1]
        cache_ptr = _data(cache_arr)

    gflat = np.zeros(n_params, dtype=np.float64)
    act_bufs = [np.empty((B, int(dims[l + 1])), dtype=np.float64) for l in range(L)]
    delta_bufs = [np.empty((B, int(dims[l])), dtype=np.float64) for l in range(1, L + 1)]
    cdef double* acts[MAX_LAYERS + 1]
    cdef double* deltas[MAX_LAYERS + 1]
    acts[0] = _data(X)
    for l in range(L):
        acts[l + 1] = _data(act_bufs[l])
        deltas[l + 1] = _data(delta_bufs[l])

    cdef const double[::1] flat_mv = flat
    cdef double[::1] g_mv = gflat
    cdef const double[::1] y_mv = y
    cdef cnp.int64_t[::1] w_off = w_off_a
    cdef cnp.int64_t[::1] b_off = b_off_a
    cdef double obj
    cdef double lam_c = lam, eps_c = eps
    with nogil:
        obj = _loss_grad_core(&flat_mv[0], &g_mv[0], &w_off[0], &b_off[0],
                              &dims_mv[0], L, B, &y_mv[0], lam_c, cache_ptr, M,
                              eps_c, acts, deltas)
    return obj, gflat


def train_loop(flat0, dims, X, y, lam, cached_logp_t, perms, subsamples,
               batch_size, lr, beta1, beta2, adam_eps, eps):
    flat = np.array(flat0, dtype=np.float64)
    dims = np.ascontiguousarray(dims, dtype=np.int64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    perms = np.ascontiguousarray(perms, dtype=np.int64)

    cdef cnp.int64_t[::1] dims_mv = dims
    cdef int L = dims_mv.shape[0] - 1
    cdef int n = X.shape[0]
    cdef int P = X.shape[1]
    cdef int bs = batch_size
    cdef int epochs = perms.shape[0]
    cdef int steps_per_epoch = (n + bs - 1) // bs
    if L > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers supported, got {L}")
    w_off_a, b_off_a, n_params = _offsets(dims_mv)

    cdef bint use_penalty = cached_logp_t is not None and lam > 0.0
    cache_arr = None
    subs_arr = None
    cdef double* cache_ptr = NULL
    cdef cnp.int64_t* subs_ptr = NULL
    cdef int M = 0
    cdef int m_pool = 0
    if use_penalty:
        cache_arr = np.ascontiguousarray(cached_logp_t, dtype=np.float64)
        subs_arr = np.ascontiguousarray(subsamples, dtype=np.int64)
        M = subs_arr.shape[1]
        m_pool = cache_arr.shape[1]
        cache_ptr = _data(cache_arr)
        subs_ptr = <cnp.int64_t*>cnp.PyArray_DATA(subs_arr)

    gflat = np.zeros(n_params, dtype=np.float64)
    m_arr = np.zeros(n_params, dtype=np.float64)
    v_arr = np.zeros(n_params, dtype=np.float64)
    xb_buf = np.empty((bs, P), dtype=np.float64)
    yb_buf = np.empty(bs, dtype=np.float64)
    cacheb_buf = np.empty((bs, max(M, 1)), dtype=np.float64)
    act_bufs = [np.empty((bs, int(dims[l + 1])), dtype=np.float64) for l in range(L)]
    delta_bufs = [np.empty((bs, int(dims[l])), dtype=np.float64) for l in range(1, L + 1)]

    cdef double* acts[MAX_LAYERS + 1]
    cdef double* deltas[MAX_LAYERS + 1]
    acts[0] = _data(xb_buf)
    for l in range(L):
        acts[l + 1] = _data(act_bufs[l])
        deltas[l + 1] = _data(delta_bufs[l])

    cdef double[::1] flat_mv = flat
    cdef double[::1] g_mv = gflat
    cdef double[::1] m_mv = m_arr
    cdef double[::1] v_mv = v_arr
    cdef const double[:, ::1] X_mv = X
    cdef const double[::1] y_mv = y
    cdef const cnp.int64_t[:, ::1] perm_mv = perms
    cdef double[::1] yb_mv = yb_buf
    cdef cnp.int64_t[::1] w_off = w_off_a
    cdef cnp.int64_t[::1] b_off = b_off_a
    cdef double* xb = _data(xb_buf)
    cdef double* cacheb = _data(cacheb_buf)

    cdef double lam_c = lam, eps_c = eps, lr_c = lr
    cdef double b1 = beta1, b2 = beta2, aeps = adam_eps
    cdef cnp.int64_t n_params_c = n_params
    cdef double obj, c1, c2, epoch_loss
    cdef double first_loss = 0.0, last_loss = 0.0
    cdef int e, s, i, j, b_actual, t = 0
    cdef cnp.int64_t row
    cdef int diverged_at = -1
    cdef const cnp.int64_t* order
    cdef const cnp.int64_t* sub_row
    cdef const double* crow

    with nogil:
        for e in range(epochs):
            order = &perm_mv[e, 0]
            epoch_loss = 0.0
            for s in range(steps_per_epoch):
                b_actual = bs if (s + 1) * bs <= n else n - s * bs
                for i in range(b_actual):
                    row = order[s * bs + i]
                    for j in range(P):
                        xb[i * P + j] = X_mv[row, j]
                    yb_mv[i] = y_mv[row]
                if use_penalty:
                    sub_row = subs_ptr + <cnp.int64_t>t * M
                    for i in range(b_actual):
                        crow = cache_ptr + order[s * bs + i] * m_pool
                        for j in range(M):
                            cacheb[i * M + j] = crow[sub_row[j]]
                obj = _loss_grad_core(&flat_mv[0], &g_mv[0], &w_off[0], &b_off[0],
                                      &dims_mv[0], L, b_actual, &yb_mv[0], lam_c,
                                      cacheb if use_penalty else NULL, M, eps_c,
                                      acts, deltas)
                if not (obj == obj and -1e300 < obj < 1e300):
                    diverged_at = t
                    break
                epoch_loss += obj
                t += 1
                c1 = 1.0 - pow(b1, <double>t)
                c2 = 1.0 - pow(b2, <double>t)
                _adam_core(&flat_mv[0], &g_mv[0], &m_mv[0], &v_mv[0], n_params_c,
                           lr_c, b1, b2, aeps, c1, c2)
            if diverged_at >= 0:
                break
            epoch_loss /= steps_per_epoch
            if e == 0:
                first_loss = epoch_loss
            last_loss = epoch_loss

    if diverged_at >= 0:
        raise FloatingPointError(f"non-finite objective at step {diverged_at}")
    return flat, first_loss, last_loss
