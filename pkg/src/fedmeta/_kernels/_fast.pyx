# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Same semantics as the numpy backend in _py.py; the hot loops (small dense
affine layers, the focal-loss inner loop) run as C loops, which removes the
per-call dispatch overhead that dominates at episode-sized batches.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, isfinite, log, pow, sqrt
from scipy.linalg.cython_blas cimport dgemm

from ..errors import NumericsError
from .plan import ForwardCache

cnp.import_array()

NAME = "cython"

cdef double BN_EPS = 1e-5


# BLAS matmul wrappers for C-ordered operands.  dgemm is Fortran-order, so a
# row-major product C = A @ B is computed as column-major C^T = B^T @ A^T:
# the operand slots are swapped and leading dimensions follow the slots.

cdef void _dgemm_raw(const char* ta, const char* tb, int m_, int n_, int k_,
                     const double* a_slot, int lda, const double* b_slot,
                     int ldb, double beta, double* c, int ldc) noexcept nogil:
    cdef double alpha = 1.0
    dgemm(<char*>ta, <char*>tb, &m_, &n_, &k_, &alpha, <double*>a_slot, &lda,
          <double*>b_slot, &ldb, &beta, c, &ldc)


cdef void _gemm_nn(int M, int N, int K, const double* A, const double* B,
                   double* C, double beta) noexcept nogil:
    # row-major C (MxN) = A (MxK) @ B (KxN) + beta * C
    _dgemm_raw("N", "N", N, M, K, B, N, A, K, beta, C, N)


cdef void _gemm_nt(int M, int N, int K, const double* A, const double* B,
                   double* C) noexcept nogil:
    # row-major C (MxN) = A (MxK) @ B^T, B stored row-major (NxK)
    _dgemm_raw("T", "N", N, M, K, B, K, A, K, 0.0, C, N)


cdef void _gemm_tn(int M, int N, int K, const double* A, const double* B,
                   double* C) noexcept nogil:
    # row-major C (MxN) = A^T @ B, A stored (KxM), B stored (KxN)
    _dgemm_raw("N", "T", N, M, K, B, N, A, M, 0.0, C, N)


cdef void _affine(const double[:, ::1] H, const double[::1] vals,
                  Py_ssize_t ow, Py_ssize_t ob, Py_ssize_t fi, Py_ssize_t fo,
                  double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = H.shape[0]
    for i in range(n):
        for j in range(fo):
            out[i, j] = vals[ob + j]
    _gemm_nn(<int>n, <int>fo, <int>fi, &H[0, 0], &vals[ow], &out[0, 0], 1.0)


# activations go through numpy's SIMD tanh; scalar libm tanh is several
# times slower at these layer sizes


cdef void _batchnorm(const double[:, ::1] X, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef double mu, var, dev, s
    for j in range(d):
        mu = 0.0
        for i in range(n):
            mu += X[i, j]
        mu /= n
        var = 0.0
        for i in range(n):
            dev = X[i, j] - mu
            var += dev * dev
        var /= n
        s = sqrt(var + BN_EPS)
        for i in range(n):
            out[i, j] = (X[i, j] - mu) / s


cdef void _acc_grads(const double[:, ::1] Hin, const double[:, ::1] D,
                     double[::1] grad, Py_ssize_t ow, Py_ssize_t ob) noexcept nogil:
    # grad[W] = Hin^T @ D, grad[b] = column sums of D
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = Hin.shape[0], fi = Hin.shape[1], fo = D.shape[1]
    _gemm_tn(<int>fi, <int>fo, <int>n, &Hin[0, 0], &D[0, 0], &grad[ow])
    for j in range(fo):
        grad[ob + j] = 0.0
    for i in range(n):
        for j in range(fo):
            grad[ob + j] += D[i, j]


cdef void _dprev(const double[:, ::1] D, const double[::1] vals, Py_ssize_t ow,
                 Py_ssize_t fi, Py_ssize_t fo, double[:, ::1] out) noexcept nogil:
    # out = D @ W^T, W stored row-major (fi x fo)
    _gemm_nt(<int>D.shape[0], <int>fi, <int>fo, &D[0, 0], &vals[ow], &out[0, 0])


cdef void _tanh_back(double[:, ::1] D, const double[:, ::1] act) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double a
    for i in range(D.shape[0]):
        for j in range(D.shape[1]):
            a = act[i, j]
            D[i, j] *= 1.0 - a * a


cdef double _focal_into(const double[:, ::1] L, const long long[::1] y,
                        double eta, double lam, double[:, ::1] dlog,
                        double* acc_out) noexcept nogil:
    """Mean focal loss; writes d(mean focal)/d logits; reports accuracy."""
    cdef Py_ssize_t i, j, ybest
    cdef Py_ssize_t n = L.shape[0], w = L.shape[1]
    cdef double zmax, z, c, p, u, ul, fi_, li, total, best, sm
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t correct = 0
    total = 0.0
    for i in range(n):
        zmax = L[i, 0]
        ybest = 0
        for j in range(1, w):
            if L[i, j] > zmax:
                zmax = L[i, j]
                ybest = j
        if ybest == y[i]:
            correct += 1
        z = 0.0
        for j in range(w):
            dlog[i, j] = exp(L[i, j] - zmax)
            z += dlog[i, j]
        c = log(z) + zmax - L[i, y[i]]
        if lam == 0.0:
            li = eta * c
            fi_ = eta
        else:
            p = exp(-c)
            u = -expm1(-c)
            if u > 0.0:
                ul = pow(u, lam)
                li = eta * ul * c
                fi_ = eta * (ul + lam * c * pow(u, lam - 1.0) * p)
            else:
                li = 0.0
                fi_ = 0.0
        total += li
        sm = fi_ * inv_n / z
        for j in range(w):
            dlog[i, j] *= sm
        dlog[i, y[i]] -= fi_ * inv_n
    acc_out[0] = <double>correct / <double>n
    return total * inv_n


cdef void _axpy(double[::1] x, const double[::1] g, double a) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        x[i] += a * g[i]


cdef bint _all_finite(const double[::1] x) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        if not isfinite(x[i]):
            return False
    return True


cdef _forward_impl(plan, cnp.ndarray values, cnp.ndarray X):
    cdef const double[::1] vals = values
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_enc = plan.n_enc
    cdef Py_ssize_t bn_dim = plan.bn_dim
    lin = plan.layer_in
    lout = plan.layer_out
    cdef Py_ssize_t n_aff = lin.shape[0]
    cdef Py_ssize_t i, fi, fo, ow, ob, off

    offs = []
    off = 0
    for i in range(n_aff):
        fi = lin[i]
        fo = lout[i]
        offs.append((off, off + fi * fo))
        off += fi * fo + fo

    aff_inputs = []
    aff_acts = []
    h = X
    bn = None
    for i in range(n_aff):
        fi = lin[i]
        fo = lout[i]
        if i == n_enc and bn_dim > 0:
            bn = np.empty((n, bn_dim))
            _batchnorm(X, bn)
            h = np.concatenate([h, bn], axis=1)
        ow, ob = offs[i]
        out = np.empty((n, fo))
        _affine(h, vals, ow, ob, fi, fo, out)
        if i < n_aff - 1:
            np.tanh(out, out=out)
            aff_acts.append(out)
        aff_inputs.append(h)
        h = out

    cache = ForwardCache(NAME, plan, values, aff_inputs, aff_acts, bn, n)
    return h, cache


cdef cnp.ndarray _backward_impl(cache, cnp.ndarray d_logits):
    plan = cache.plan
    cdef cnp.ndarray values = cache.values
    cdef const double[::1] vals = values
    lin = plan.layer_in
    lout = plan.layer_out
    cdef Py_ssize_t n_aff = lin.shape[0]
    cdef Py_ssize_t n_enc = plan.n_enc
    cdef Py_ssize_t bn_dim = plan.bn_dim
    cdef Py_ssize_t m_enc = lout[n_enc - 1] if n_enc > 0 else plan.input_dim
    cdef Py_ssize_t i, fi, fo, ow, ob, off

    grad = np.zeros(plan.total)
    cdef double[::1] gview = grad

    offs = []
    off = 0
    for i in range(n_aff):
        fi = lin[i]
        fo = lout[i]
        offs.append((off, off + fi * fo))
        off += fi * fo + fo

    d = d_logits
    for i in range(n_aff - 1, -1, -1):
        fi = lin[i]
        fo = lout[i]
        ow, ob = offs[i]
        _acc_grads(cache.aff_inputs[i], d, gview, ow, ob)
        if i == 0:
            break
        d_prev = np.empty((d.shape[0], fi))
        _dprev(d, vals, ow, fi, fo, d_prev)
        if i == n_enc and bn_dim > 0:
            d_prev = np.ascontiguousarray(d_prev[:, :m_enc])
        _tanh_back(d_prev, cache.aff_acts[i - 1])
        d = d_prev
    return grad


def forward(plan, values, X):
    """Two-branch forward pass; returns (logits, cache)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _forward_impl(plan, values, X)


def backward(cache, d_logits):
    """Parameter gradient of the scalar loss whose logit gradient is d_logits."""
    d = np.ascontiguousarray(d_logits, dtype=np.float64)
    return _backward_impl(cache, d)


def adapt_eval(plan, values, Xs, ys, Xq, yq, double alpha, Py_ssize_t steps,
               double eta, double lam, bint need_grad=True):
    """Gradient-descend the focal loss on the support set, score the query set.

    Returns (adapted values, query focal loss, query accuracy, query gradient
    or None).  Raises NumericsError if the adaptation diverges.
    """
    theta = np.array(values, dtype=np.float64)
    Xs = np.ascontiguousarray(Xs, dtype=np.float64)
    Xq = np.ascontiguousarray(Xq, dtype=np.float64)
    cdef const long long[::1] ys_v = np.ascontiguousarray(ys, dtype=np.int64)
    cdef const long long[::1] yq_v = np.ascontiguousarray(yq, dtype=np.int64)
    cdef double[::1] th = theta
    cdef double acc = 0.0
    cdef double focal_q
    cdef Py_ssize_t s

    for s in range(steps):
        logits, cache = _forward_impl(plan, theta, Xs)
        dlog = np.empty_like(logits)
        _focal_into(logits, ys_v, eta, lam, dlog, &acc)
        g = _backward_impl(cache, dlog)
        _axpy(th, g, -alpha)

    logits, cache = _forward_impl(plan, theta, Xq)
    dlog = np.empty_like(logits)
    focal_q = _focal_into(logits, yq_v, eta, lam, dlog, &acc)
    if not (_all_finite(th) and isfinite(focal_q)):
        raise NumericsError("non-finite values during support-set adaptation")
    grad_q = None
    if need_grad:
        grad_q = _backward_impl(cache, dlog)
        if not _all_finite(grad_q):
            raise NumericsError("non-finite query gradient after adaptation")
    return theta, focal_q, acc, grad_q
