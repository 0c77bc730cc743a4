"""Pure-Python tape interpreter, used when the compiled extension is absent.

Tape layout: one instruction per slot. ``ops[i]`` is the opcode, ``a[i]`` and
``b[i]`` operand slots (``b[i]`` is the literal exponent for POWI, ``a[i]`` the
coordinate index for VAR), ``c[i]`` the literal for CONST.

Status codes: 1 division by zero, 2 log of non-positive, 3 sqrt of negative,
4 negative base with non-integer exponent, 5 zero to a negative power.
"""
import math

import numpy as np

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG = range(7)
OP_POWI, OP_POW, OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT = range(7, 14)


def _powi(base, k):
    neg = k < 0
    if neg:
        k = -k
    r = 1.0
    while k:
        if k & 1:
            r *= base
        base *= base
        k >>= 1
    return 1.0 / r if neg else r


def _run(ops, a, b, c, x, w):
    sin, cos, exp, log, sqrt, pow_, floor = (
        math.sin, math.cos, math.exp, math.log, math.sqrt, math.pow, math.floor)
    for i, op in enumerate(ops):
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
            u, v = w[a[i]], w[b[i]]
            if u < 0.0 and floor(v) != v:
                return (i + 1) * 16 + 4
            if u == 0.0 and v < 0.0:
                return (i + 1) * 16 + 5
            w[i] = pow_(u, v)
        elif op == OP_SIN:
            w[i] = sin(w[a[i]])
        elif op == OP_COS:
            w[i] = cos(w[a[i]])
        elif op == OP_EXP:
            u = w[a[i]]
            w[i] = exp(u) if u < 709.78 else math.inf
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


def eval_point(ops, a, b, c, outs, x, out):
    # plain lists are markedly faster than numpy scalars in this loop
    w = [0.0] * len(ops)
    code = _run(ops.tolist(), a.tolist(), b.tolist(), c.tolist(), x.tolist(), w)
    if code == 0:
        for k, s in enumerate(outs.tolist()):
            out[k] = w[s]
    return code


def eval_batch(ops, a, b, c, outs, X, out):
    """Vectorised over points; slots are released after their last use."""
    ops_l, a_l, b_l = ops.tolist(), a.tolist(), b.tolist()
    m = len(ops_l)
    last = list(range(m))
    for i, op in enumerate(ops_l):
        if op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW):
            last[a_l[i]] = i
            last[b_l[i]] = i
        elif op not in (OP_CONST, OP_VAR):
            last[a_l[i]] = i
    keep = set(outs.tolist())
    npts = X.shape[0]
    w = {}
    with np.errstate(all="ignore"):
        for i, op in enumerate(ops_l):
            if op == OP_CONST:
                v = np.full(npts, c[i])
            elif op == OP_VAR:
                v = X[:, a_l[i]].copy()
            elif op == OP_ADD:
                v = w[a_l[i]] + w[b_l[i]]
            elif op == OP_SUB:
                v = w[a_l[i]] - w[b_l[i]]
            elif op == OP_MUL:
                v = w[a_l[i]] * w[b_l[i]]
            elif op == OP_DIV:
                d = w[b_l[i]]
                bad = d == 0.0
                if bad.any():
                    return (i + 1) * 16 + 1, int(np.argmax(bad))
                v = w[a_l[i]] / d
            elif op == OP_NEG:
                v = -w[a_l[i]]
            elif op == OP_POWI:
                u = w[a_l[i]]
                k = b_l[i]
                if k < 0:
                    bad = u == 0.0
                    if bad.any():
                        return (i + 1) * 16 + 5, int(np.argmax(bad))
                v = _powi(u.copy(), k)
            elif op == OP_POW:
                u, e = w[a_l[i]], w[b_l[i]]
                bad = (u < 0.0) & (np.floor(e) != e)
                if bad.any():
                    return (i + 1) * 16 + 4, int(np.argmax(bad))
                bad = (u == 0.0) & (e < 0.0)
                if bad.any():
                    return (i + 1) * 16 + 5, int(np.argmax(bad))
                v = np.power(u, e)
            elif op == OP_SIN:
                v = np.sin(w[a_l[i]])
            elif op == OP_COS:
                v = np.cos(w[a_l[i]])
            elif op == OP_EXP:
                v = np.exp(w[a_l[i]])
            elif op == OP_LOG:
                u = w[a_l[i]]
                bad = u <= 0.0
                if bad.any():
                    return (i + 1) * 16 + 2, int(np.argmax(bad))
                v = np.log(u)
            elif op == OP_SQRT:
                u = w[a_l[i]]
                bad = u < 0.0
                if bad.any():
                    return (i + 1) * 16 + 3, int(np.argmax(bad))
                v = np.sqrt(u)
            else:
                raise ValueError(f"bad opcode {op}")
            w[i] = v
            if op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW):
                for s in (a_l[i], b_l[i]):
                    if last[s] == i and s not in keep:
                        w.pop(s, None)
            elif op not in (OP_CONST, OP_VAR):
                s = a_l[i]
                if last[s] == i and s not in keep:
                    w.pop(s, None)
    for k, s in enumerate(outs.tolist()):
        out[:, k] = w[s]
    return 0, -1
