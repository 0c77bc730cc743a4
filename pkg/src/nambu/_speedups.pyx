# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled tape interpreter.

Mirrors ``nambu._fallback`` instruction for instruction; see that module for
the opcode table. Return value of the evaluators is 0 on success, otherwise
``(instr + 1) * 16 + status``.
"""
from libc.math cimport sin, cos, exp, log, sqrt, pow, floor

import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF OP_CONST = 0
DEF OP_VAR = 1
DEF OP_ADD = 2
DEF OP_SUB = 3
DEF OP_MUL = 4
DEF OP_DIV = 5
DEF OP_NEG = 6
DEF OP_POWI = 7
DEF OP_POW = 8
DEF OP_SIN = 9
DEF OP_COS = 10
DEF OP_EXP = 11
DEF OP_LOG = 12
DEF OP_SQRT = 13


cdef inline double _powi(double base, int k) nogil:
    cdef bint neg = k < 0
    cdef double r = 1.0
    if neg:
        k = -k
    while k:
        if k & 1:
            r *= base
        base *= base
        k >>= 1
    if neg:
        return 1.0 / r
    return r


cdef long _run(const int[::1] ops, const int[::1] a, const int[::1] b,
               const double[::1] c, const double* x, double* w) nogil:
    cdef Py_ssize_t i, m = ops.shape[0]
    cdef int op
    cdef double u, v
    for i in range(m):
        op = ops[i]
        if op == OP_CONST:
            w[i] = c[i]
        elif op == OP_VAR:
            w[i] = x[a[i]]
        elif op == OP_ADD:
            w[i] = w[a[i]] + w[b[i]]
        elif op == OP_SUB:
            w[i] = w[a[i]] - w[b[i]]
        elif op == OP_MUL:
            w[i] = w[a[i]] * w[b[i]]
        elif op == OP_DIV:
            v = w[b[i]]
            if v == 0.0:
                return (i + 1) * 16 + 1
            w[i] = w[a[i]] / v
        elif op == OP_NEG:
            w[i] = -w[a[i]]
        elif op == OP_POWI:
            u = w[a[i]]
            if u == 0.0 and b[i] < 0:
                return (i + 1) * 16 + 5
            w[i] = _powi(u, b[i])
        elif op == OP_POW:
            u = w[a[i]]
            v = w[b[i]]
            if u < 0.0 and floor(v) != v:
                return (i + 1) * 16 + 4
            if u == 0.0 and v < 0.0:
                return (i + 1) * 16 + 5
            w[i] = pow(u, v)
        elif op == OP_SIN:
            w[i] = sin(w[a[i]])
        elif op == OP_COS:
            w[i] = cos(w[a[i]])
        elif op == OP_EXP:
            w[i] = exp(w[a[i]])
        elif op == OP_LOG:
            u = w[a[i]]
            if u <= 0.0:
                return (i + 1) * 16 + 2
            w[i] = log(u)
        elif op == OP_SQRT:
            u = w[a[i]]
            if u < 0.0:
                return (i + 1) * 16 + 3
            w[i] = sqrt(u)
    return 0


def eval_point(const int[::1] ops, const int[::1] a, const int[::1] b,
               const double[::1] c, const int[::1] outs,
               const double[::1] x, double[::1] out):
    """Evaluate the tape at one point, writing selected slots into ``out``."""
    cdef Py_ssize_t m = ops.shape[0], k, nout = outs.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] work = np.empty(max(m, 1))
    cdef double* w = <double*> work.data
    cdef long code
    with nogil:
        code = _run(ops, a, b, c, &x[0], w)
        if code == 0:
            for k in range(nout):
                out[k] = w[outs[k]]
    return code


DEF BLOCK = 64


cdef bint _run_block(const int[::1] ops, const int[::1] a, const int[::1] b,
                     const double[::1] c, const double[:, ::1] X, Py_ssize_t p0,
                     Py_ssize_t nb, double* w) nogil:
    """Op-major evaluation of ``nb`` rows starting at ``p0``; slot ``i`` lives at ``w[i*BLOCK]``.

    Returns True when any row hit a domain error; the caller then reruns the
    block row by row to find the first failing row and instruction.
    """
    cdef Py_ssize_t i, q, m = ops.shape[0]
    cdef int op, k
    cdef double u, v
    cdef double* r
    cdef const double* s
    cdef const double* t
    cdef bint bad = False
    for i in range(m):
        op = ops[i]
        r = w + i * BLOCK
        if op == OP_CONST:
            for q in range(nb):
                r[q] = c[i]
            continue
        if op == OP_VAR:
            k = a[i]
            for q in range(nb):
                r[q] = X[p0 + q, k]
            continue
        s = w + a[i] * BLOCK
        if op == OP_ADD:
            t = w + b[i] * BLOCK
            for q in range(nb):
                r[q] = s[q] + t[q]
        elif op == OP_SUB:
            t = w + b[i] * BLOCK
            for q in range(nb):
                r[q] = s[q] - t[q]
        elif op == OP_MUL:
            t = w + b[i] * BLOCK
            for q in range(nb):
                r[q] = s[q] * t[q]
        elif op == OP_DIV:
            t = w + b[i] * BLOCK
            for q in range(nb):
                if t[q] == 0.0:
                    bad = True
                r[q] = s[q] / t[q]
        elif op == OP_NEG:
            for q in range(nb):
                r[q] = -s[q]
        elif op == OP_POWI:
            k = b[i]
            if k == 2:
                for q in range(nb):
                    r[q] = s[q] * s[q]
            else:
                for q in range(nb):
                    if k < 0 and s[q] == 0.0:
                        bad = True
                    r[q] = _powi(s[q], k)
        elif op == OP_POW:
            t = w + b[i] * BLOCK
            for q in range(nb):
                u = s[q]
                v = t[q]
                if (u < 0.0 and floor(v) != v) or (u == 0.0 and v < 0.0):
                    bad = True
                r[q] = pow(u, v)
        elif op == OP_SIN:
            for q in range(nb):
                r[q] = sin(s[q])
        elif op == OP_COS:
            for q in range(nb):
                r[q] = cos(s[q])
        elif op == OP_EXP:
            for q in range(nb):
                r[q] = exp(s[q])
        elif op == OP_LOG:
            for q in range(nb):
                if s[q] <= 0.0:
                    bad = True
                r[q] = log(s[q]) if s[q] > 0.0 else 0.0
        elif op == OP_SQRT:
            for q in range(nb):
                if s[q] < 0.0:
                    bad = True
                r[q] = sqrt(s[q]) if s[q] >= 0.0 else 0.0
    return bad


def eval_batch(const int[::1] ops, const int[::1] a, const int[::1] b,
               const double[::1] c, const int[::1] outs,
               const double[:, ::1] X, double[:, ::1] out):
    """Evaluate the tape at every row of ``X``, ``BLOCK`` rows at a time.

    Returns ``(code, row)``; ``row`` is the first failing point or -1.
    """
    cdef Py_ssize_t m = ops.shape[0], k, p, q, p0, nb
    cdef Py_ssize_t npts = X.shape[0], nout = outs.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] work = np.empty(max(m, 1) * BLOCK)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] single = np.empty(max(m, 1))
    cdef double* w = <double*> work.data
    cdef double* w1 = <double*> single.data
    cdef long code = 0
    cdef Py_ssize_t bad = -1
    with nogil:
        p0 = 0
        while p0 < npts:
            nb = min(<Py_ssize_t> BLOCK, npts - p0)
            if _run_block(ops, a, b, c, X, p0, nb, w):
                for p in range(p0, p0 + nb):
                    code = _run(ops, a, b, c, &X[p, 0], w1)
                    if code != 0:
                        bad = p
                        break
                if code != 0:
                    break
            for k in range(nout):
                for q in range(nb):
                    out[p0 + q, k] = w[outs[k] * BLOCK + q]
            p0 += nb
    return code, bad
