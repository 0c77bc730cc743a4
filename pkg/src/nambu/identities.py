"""Residual checkers for closure, Jacobi-type conditions and the fundamental identity.

Every checker returns a :class:`ResidualReport` holding the largest absolute
violation and where it happened, so failures come with a reproducible witness.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from nambu import exprcalc as ec
from nambu.bracket import (
    BivectorField, SymplecticForm3, as_form, as_operator, nambu_bracket,
)
from nambu.exprcalc import ScalarField
from nambu.skewtensor import SkewTensor3, right_inverse

DEFAULT_SAMPLES = 100
DEFAULT_BOX = (-1.0, 1.0)


@dataclass
class ResidualReport:
    max_abs: float
    point: np.ndarray | None = None
    indices: tuple = ()
    samples: int = 0
    name: str = ""
    per_point: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.max_abs = float(self.max_abs)
        if self.max_abs < 0 or np.isnan(self.max_abs):
            raise ValueError("residual must be a non-negative number")

    def passed(self, threshold: float) -> bool:
        return self.max_abs <= threshold

    def to_dict(self) -> dict:
        """JSON-ready dict; indices are shifted to 1-based for display."""
        d = {
            "max_abs": self.max_abs,
            "point": None if self.point is None else [float(v) for v in self.point],
            "indices": [int(i) + 1 for i in self.indices],
            "samples": int(self.samples),
        }
        if self.name:
            d = {"name": self.name, **d}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def sample_points(n: int, count: int = DEFAULT_SAMPLES, box=DEFAULT_BOX, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = box
    return rng.uniform(lo, hi, size=(count, n))


def _points(points, n):
    if points is None:
        return sample_points(n)
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[1] != n:
        raise ValueError(f"sample points have dimension {X.shape[1]}, expected {n}")
    return X


def _report(values: np.ndarray, X: np.ndarray, name: str, index_axes: bool = True) -> ResidualReport:
    """Reduce ``values[p, ...]`` to its max absolute entry and locate it."""
    P = X.shape[0]
    if P == 0 or values.size == 0:
        return ResidualReport(0.0, None, (), P, name, np.zeros(P))
    a = np.abs(values).reshape(P, -1)
    per_point = a.max(axis=1)
    flat = int(np.argmax(a))
    p, rest = divmod(flat, a.shape[1])
    idx = np.unravel_index(rest, values.shape[1:]) if index_axes and values.ndim > 1 else ()
    return ResidualReport(a[p, rest], X[p].copy(), tuple(int(i) for i in idx), P, name, per_point)


# ---------------------------------------------------------------- closure


def four_term_sums(w, X) -> np.ndarray:
    """``S[p, i, j, k, l]`` = the four-term closure sum at each sample point (all index orders)."""
    w = as_form(w)
    D = w.derivatives_at(X)  # D[p, i, j, k, l] = d_l w_ijk
    return (D
            + np.transpose(D, (0, 1, 3, 4, 2))   # d_k w_{i l j}
            + np.transpose(D, (0, 1, 4, 2, 3))   # d_j w_{i k l}
            + np.transpose(D, (0, 4, 1, 3, 2)))  # d_i w_{j l k}


def closure_residual(w, points=None) -> ResidualReport:
    """Max of the four-term closure sum over points and ``i<j<k<l``."""
    w = as_form(w)
    n = w.n
    X = _points(points, n)
    quads = list(itertools.combinations(range(n), 4))
    if not quads or w.is_constant:
        return ResidualReport(0.0, X[0].copy() if len(X) else None, quads[0] if quads else (),
                              len(X), "closure", np.zeros(len(X)))
    S = four_term_sums(w, X)
    q = np.array(quads)
    vals = S[:, q[:, 0], q[:, 1], q[:, 2], q[:, 3]]
    rep = _report(vals, X, "closure", index_axes=False)
    col = np.unravel_index(np.argmax(np.abs(vals)), vals.shape)[1]
    rep.indices = tuple(int(v) for v in quads[col])
    return rep


def exterior_derivative_2form(sigma: dict, n: int) -> SymplecticForm3:
    """``d`` of the 2-form ``sum_{i<j} sigma_ij dx^i ^ dx^j`` as a 3-form field."""
    comp: dict[tuple[int, int], ScalarField] = {}
    for (i, j), f in sigma.items():
        if isinstance(f, str):
            f = ec.parse(f, n)
        if i == j:
            raise ValueError("repeated index in 2-form component")
        if i > j:
            i, j, f = j, i, -f
        comp[(i, j)] = f

    def s(i, j):
        f = comp.get((i, j))
        return ec.ZERO if f is None else f.expr

    out = {}
    for i, j, k in itertools.combinations(range(n), 3):
        e = ec.sum_exprs([
            ec.derivative(s(j, k), i),
            ec.neg(ec.derivative(s(i, k), j)),
            ec.derivative(s(i, j), k),
        ])
        if not (e.is_const and e.value == 0.0):
            out[(i, j, k)] = ScalarField(e, n)
    return SymplecticForm3.from_fields(n, out)


# ---------------------------------------------------- necessary Jacobi condition


def ncj_values(Jv: np.ndarray, Jd: np.ndarray, wv: np.ndarray) -> np.ndarray:
    """Six-term necessary-condition sum for every ``(alpha, beta)``.

    ``Jv[a,b,c]`` operator values, ``Jd[a,b,c,l]`` its derivatives and ``wv``
    the dense 3-form, all at one point.  Only ``i<j<k`` triples of ``w`` enter.
    """
    n = wv.shape[0]
    i, j, k = np.ogrid[:n, :n, :n]
    M = np.where((i < j) & (j < k), wv, 0.0)
    es = np.einsum
    total = (es("ijk,bkl,aijl->ab", M, Jv, Jd)
             + es("ijk,ail,bjkl->ab", M, Jv, Jd)
             + es("ijk,ajl,bkil->ab", M, Jv, Jd)
             + es("ijk,bjl,akil->ab", M, Jv, Jd)
             + es("ijk,akl,bijl->ab", M, Jv, Jd)
             + es("ijk,bil,ajkl->ab", M, Jv, Jd))
    return 4.0 * total


class PairingError(ValueError):
    """The supplied 3-form and operator are not inverse to each other."""


def _check_pairing(wv: np.ndarray, Jv: np.ndarray, tol: float, mode: str, x) -> None:
    n = wv.shape[0]
    A = np.einsum("ijk,jkl->il", wv, Jv)
    if mode == "full":
        err = np.abs(A - 2.0 * np.eye(n)).max()
    elif mode == "leaf":
        # inverse on the image of J only: A/2 must be a projection fixing J
        Pm = A / 2.0
        err = max(np.abs(Pm @ Pm - Pm).max(),
                  np.abs(np.einsum("il,ljk->ijk", Pm.T, Jv) - Jv).max()) if n else 0.0
        if np.abs(Jv).max(initial=0.0) == 0.0:
            err = np.inf
    else:
        raise ValueError(f"unknown pairing mode {mode!r}")
    if err > tol:
        raise PairingError(f"inverse pairing violated by {err:.3e} at point {list(map(float, x))}")


def jacobi_necessary_residual(J, w=None, points=None, pairing_tol: float = 1e-8,
                              pairing_mode: str = "full") -> ResidualReport:
    """Necessary condition for closedness of the inverse 3-form, expressed through ``J``.

    With ``w=None`` the 3-form is recomputed at every sample as the right
    inverse of ``J`` there.  ``pairing_mode="leaf"`` accepts a pair that is
    inverse only on the image of ``J`` (rank-deficient operators).
    """
    J = as_operator(J)
    n = J.n
    X = _points(points, n)
    Jv_all = J.values_at(X)
    Jd_all = J.derivatives_at(X)
    form = None if w is None else as_form(w)
    if form is not None and form.n != n:
        raise ValueError("dimension mismatch between operator and 3-form")
    wv_all = form.values_at(X) if form is not None else None
    vals = np.empty((len(X), n, n))
    for p, x in enumerate(X):
        Jv = Jv_all[p]
        if wv_all is None:
            wv = right_inverse(SkewTensor3.from_dense(Jv)).dense
        else:
            wv = wv_all[p]
        _check_pairing(wv, Jv, pairing_tol, pairing_mode, x)
        vals[p] = ncj_values(Jv, Jd_all[p], wv)
    return _report(vals, X, "jacobi_necessary")


# ------------------------------------------------- classical Jacobi identity


def classical_jacobi_values(P, points=None) -> np.ndarray:
    """``S[p, i, j, k]`` = cyclic sum ``P^im d_m P^jk + P^jm d_m P^ki + P^km d_m P^ij``."""
    if not isinstance(P, BivectorField):
        P = BivectorField.from_matrix(P)
    X = _points(points, P.n)
    V = P.values_at(X)
    D = P.derivatives_at(X)
    T = np.einsum("pim,pjkm->pijk", V, D)
    return T + np.transpose(T, (0, 3, 1, 2)) + np.transpose(T, (0, 2, 3, 1))


def classical_jacobi_residual(P, points=None) -> ResidualReport:
    if not isinstance(P, BivectorField):
        P = BivectorField.from_matrix(P)
    X = _points(points, P.n)
    return _report(classical_jacobi_values(P, X), X, "classical_jacobi")


# ------------------------------------------------- fundamental identity


def fundamental_identity_field(J, F1, F2, F3, F4, F5) -> ScalarField:
    """LHS minus RHS of the fundamental identity, as a symbolic field."""
    J = as_operator(J)
    b = lambda a, c, d: nambu_bracket(J, a, c, d)  # noqa: E731
    lhs = b(b(F1, F2, F3), F4, F5)
    rhs = (b(b(F1, F4, F5), F2, F3)
           + b(F1, b(F2, F4, F5), F3)
           + b(F1, F2, b(F3, F4, F5)))
    return lhs - rhs


def fundamental_identity_residual(J, F1, F2, F3, F4, F5, points=None) -> ResidualReport:
    J = as_operator(J)
    X = _points(points, J.n)
    diffs = fundamental_identity_field(J, F1, F2, F3, F4, F5).eval_many(X)
    return _report(diffs[:, None], X, "fundamental_identity", index_axes=False)


def find_fi_witness(J, seed: int = 0, tries: int = 200, degree: int = 2, terms: int = 3,
                    threshold: float = 1e-6, points=None):
    """First random polynomial quintuple whose fundamental-identity residual exceeds ``threshold``.

    Returns ``(fields, report)`` or ``None`` when the search is exhausted.
    """
    J = as_operator(J)
    rng = np.random.default_rng(seed)
    X = _points(points, J.n)
    for _ in range(tries):
        Fs = [ec.random_polynomial(J.n, degree, rng, terms=terms) for _ in range(5)]
        rep = fundamental_identity_residual(J, *Fs, points=X)
        if rep.max_abs > threshold:
            return Fs, rep
    return None


# ------------------------------------------------- bracket axioms


def axiom_residuals(J, points=None, seed: int = 0, degree: int = 2) -> dict[str, ResidualReport]:
    """Trilinearity, skew-symmetry and Leibniz residuals for random polynomial arguments."""
    J = as_operator(J)
    n = J.n
    X = _points(points, n)
    rng = np.random.default_rng(seed)
    F = [ec.random_polynomial(n, degree, rng, terms=4) for _ in range(4)]
    a, c = (float(v) for v in np.round(rng.uniform(-2, 2, size=2), 3))
    br = lambda *args: nambu_bracket(J, *args).eval_many(X)  # noqa: E731

    base = br(F[0], F[1], F[2])
    tri = br(F[0] * a + F[3] * c, F[1], F[2]) - a * base - c * br(F[3], F[1], F[2])

    swaps = np.stack([base + br(F[1], F[0], F[2]),
                      base + br(F[0], F[2], F[1]),
                      base + br(F[2], F[1], F[0])], axis=1)

    v0, v3 = F[0].eval_many(X), F[3].eval_many(X)
    leib = br(F[0] * F[3], F[1], F[2]) - v0 * br(F[3], F[1], F[2]) - v3 * base

    return {
        "trilinearity": _report(tri[:, None], X, "trilinearity", index_axes=False),
        "skew_symmetry": _report(swaps, X, "skew_symmetry", index_axes=False),
        "leibniz": _report(leib[:, None], X, "leibniz", index_axes=False),
    }

