# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled truncated-Taylor kernels.

Both kernels take C-contiguous float64 arrays whose last axis holds the dense
coefficients of one jet (leading axes are a batch), plus a product table of
(left, right, out) int32 monomial index triples sorted by ``out``.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline bint _ok(cnp.ndarray a, int typenum):
    return cnp.PyArray_IS_C_CONTIGUOUS(a) and cnp.PyArray_TYPE(a) == typenum


cdef inline void _mul_rows(const double* a, const double* b, const int* left,
                           const int* right, const int* out, Py_ssize_t npairs,
                           Py_ssize_t nb, Py_ssize_t m, double* c) noexcept nogil:
    cdef Py_ssize_t i, p
    for i in range(nb):
        for p in range(m):
            c[p] = 0.0
        for p in range(npairs):
            c[out[p]] += a[left[p]] * b[right[p]]
        a += m
        b += m
        c += m


def mul(cnp.ndarray a, cnp.ndarray b, cnp.ndarray left, cnp.ndarray right,
        cnp.ndarray out):
    """Truncated product of two equally shaped batches of jets."""
    cdef Py_ssize_t m = a.shape[a.ndim - 1]
    cdef Py_ssize_t nb = a.size // m if m else 0
    if b.size != a.size:
        raise ValueError("operand shapes differ")
    if not (_ok(a, cnp.NPY_DOUBLE) and _ok(b, cnp.NPY_DOUBLE) and _ok(left, cnp.NPY_INT32)
            and _ok(right, cnp.NPY_INT32) and _ok(out, cnp.NPY_INT32)):
        raise TypeError("expected C-contiguous float64 operands and int32 tables")
    res = np.empty_like(a)
    _mul_rows(<double*> cnp.PyArray_DATA(a), <double*> cnp.PyArray_DATA(b),
              <int*> cnp.PyArray_DATA(left), <int*> cnp.PyArray_DATA(right),
              <int*> cnp.PyArray_DATA(out), left.shape[0], nb, m,
              <double*> cnp.PyArray_DATA(res))
    return res


def horner(cnp.ndarray coef, cnp.ndarray h, cnp.ndarray left, cnp.ndarray right,
           cnp.ndarray out):
    """Evaluate sum_k coef[..., k] * h**k for nilpotent h (zero constant term)."""
    cdef Py_ssize_t m = h.shape[h.ndim - 1]
    cdef Py_ssize_t nb = h.size // m
    cdef Py_ssize_t deg = coef.shape[coef.ndim - 1] - 1
    cdef Py_ssize_t npairs = left.shape[0]
    cdef Py_ssize_t i, p, k
    if coef.size != nb * (deg + 1):
        raise ValueError("coefficient batch does not match the jet batch")
    if not (_ok(coef, cnp.NPY_DOUBLE) and _ok(h, cnp.NPY_DOUBLE) and _ok(left, cnp.NPY_INT32)
            and _ok(right, cnp.NPY_INT32) and _ok(out, cnp.NPY_INT32)):
        raise TypeError("expected C-contiguous float64 operands and int32 tables")
    res = np.zeros_like(h)
    tmp = np.empty_like(h)
    cdef double* r = <double*> cnp.PyArray_DATA(res)
    cdef double* w = <double*> cnp.PyArray_DATA(tmp)
    cdef const double* hh = <double*> cnp.PyArray_DATA(h)
    cdef const double* cf = <double*> cnp.PyArray_DATA(coef)
    cdef const int* lp = <int*> cnp.PyArray_DATA(left)
    cdef const int* rp = <int*> cnp.PyArray_DATA(right)
    cdef const int* op = <int*> cnp.PyArray_DATA(out)
    with nogil:
        for i in range(nb):
            r[i * m] = cf[i * (deg + 1) + deg]
        for k in range(deg - 1, -1, -1):
            _mul_rows(r, hh, lp, rp, op, npairs, nb, m, w)
            for i in range(nb):
                for p in range(m):
                    r[i * m + p] = w[i * m + p]
                r[i * m] += cf[i * (deg + 1) + k]
    return res
