"""Nambu brackets, Hamiltonian vector fields and induced binary brackets.

Everything here is built symbolically, so results can be differentiated
again (the fundamental identity nests brackets inside brackets).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nambu import exprcalc as ec
from nambu.exprcalc import Expr, ScalarField, compile_fields
from nambu.skewtensor import (
    CONTRAVARIANT, COVARIANT, PERMS, SkewTensor3, _triple_index, canonical, triples,
)


class SkewField3:
    """Antisymmetric order-3 tensor whose components are constants or scalar fields."""

    variance = CONTRAVARIANT

    def __init__(self, n: int, constant: SkewTensor3 | None = None,
                 fields: dict | None = None):
        if (constant is None) == (fields is None):
            raise ValueError("give exactly one of constant= or fields=")
        self.n = n
        self.constant = constant
        self._fields: dict[tuple[int, int, int], ScalarField] = {}
        if constant is not None:
            if constant.n != n:
                raise ValueError("dimension mismatch")
        else:
            for key, f in fields.items():
                i, j, k = key
                if len({i, j, k}) < 3:
                    raise ValueError(f"repeated index in triple {key}")
                ckey, sign = canonical(i, j, k)
                if ckey in self._fields:
                    raise ValueError(f"duplicate entries for canonical triple {ckey}")
                if isinstance(f, str):
                    f = ec.parse(f, n)
                elif not isinstance(f, ScalarField):
                    f = ScalarField.constant(float(f), n)
                if f.dim != n:
                    raise ValueError("component dimension mismatch")
                self._fields[ckey] = f if sign > 0 else -f
        self._tapes = {}

    @classmethod
    def from_constant(cls, T: SkewTensor3):
        return cls(T.n, constant=T)

    @classmethod
    def from_fields(cls, n: int, fields: dict):
        return cls(n, fields=fields)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def support(self) -> list[tuple[tuple[int, int, int], Expr]]:
        """Canonical triples with a nonzero component, paired with that component."""
        if self.constant is not None:
            return [(t, ec.const(v)) for t, v in self.constant.entries().items()]
        return [(t, f.expr) for t, f in sorted(self._fields.items())
                if not (f.expr.is_const and f.expr.value == 0.0)]

    def component_field(self, i: int, j: int, k: int) -> ScalarField:
        if len({i, j, k}) < 3:
            return ScalarField.constant(0.0, self.n)
        key, sign = canonical(i, j, k)
        if self.constant is not None:
            return ScalarField.constant(self.constant.component(i, j, k), self.n)
        f = self._fields.get(key)
        if f is None:
            return ScalarField.constant(0.0, self.n)
        return f if sign > 0 else -f

    def _component_exprs(self) -> list[Expr]:
        if self.constant is not None:
            return [ec.const(v) for v in self.constant.values]
        return [self._fields[t].expr if t in self._fields else ec.ZERO for t in triples(self.n)]

    def _tape(self, order: int):
        tape = self._tapes.get(order)
        if tape is None:
            exprs = self._component_exprs()
            if order == 1:
                exprs = [ec.derivative(e, l) for e in exprs for l in range(self.n)]
            tape = compile_fields(exprs, self.n)
            self._tapes[order] = tape
        return tape

    def _densify(self, vals: np.ndarray, extra: tuple = ()) -> np.ndarray:
        n = self.n
        trip, _ = _triple_index(n)
        P = vals.shape[0]
        out = np.zeros((P, n, n, n) + extra)
        for p0, p1, p2, s in PERMS:
            out[:, trip[:, p0], trip[:, p1], trip[:, p2]] = s * vals
        return out

    def values_at(self, X) -> np.ndarray:
        """Dense components at each row of ``X``: shape ``(P, n, n, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.constant is not None:
            return np.broadcast_to(self.constant.dense, (X.shape[0],) + (self.n,) * 3).copy()
        return self._densify(self._tape(0).eval_batch(X))

    def derivatives_at(self, X) -> np.ndarray:
        """``D[p, i, j, k, l] = d T[i, j, k] / d x_l`` at each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.n
        if self.constant is not None:
            return np.zeros((X.shape[0], n, n, n, n))
        vals = self._tape(1).eval_batch(X).reshape(X.shape[0], -1, n)
        return self._densify(vals, (n,))

    def at(self, x) -> SkewTensor3:
        if self.constant is not None:
            return self.constant
        vals = self._tape(0).eval(np.asarray(x, dtype=float))
        return SkewTensor3(self.n, vals, self.variance)

    def __repr__(self):
        kind = "constant" if self.is_constant else "field"
        return f"{type(self).__name__}(n={self.n}, {kind}, {len(self.support())} nonzero)"


class PoissonOperator3(SkewField3):
    """Generalized Poisson operator (trivector field)."""

    variance = CONTRAVARIANT


class SymplecticForm3(SkewField3):
    """Symplectic 3-form (covariant)."""

    variance = COVARIANT


def as_operator(J) -> PoissonOperator3:
    if isinstance(J, PoissonOperator3):
        return J
    if isinstance(J, SkewTensor3):
        return PoissonOperator3.from_constant(J)
    raise TypeError(f"cannot use {type(J).__name__} as a Poisson operator")


def as_form(w) -> SymplecticForm3:
    if isinstance(w, SymplecticForm3):
        return w
    if isinstance(w, SkewTensor3):
        return SymplecticForm3.from_constant(w)
    raise TypeError(f"cannot use {type(w).__name__} as a 3-form")


# --------------------------------------------------------------------------


class VectorField:
    """Vector field with one symbolic component per coordinate."""

    def __init__(self, components: list[ScalarField]):
        if not components:
            raise ValueError("empty vector field")
        n = components[0].dim
        if len(components) != n or any(c.dim != n for c in components):
            raise ValueError("a vector field on R^n needs n components of dimension n")
        self.n = n
        self.components = list(components)
        self._tape = None
        self._jac_tape = None

    def __getitem__(self, i):
        return self.components[i]

    def __len__(self):
        return self.n

    def eval(self, x) -> np.ndarray:
        if self._tape is None:
            self._tape = compile_fields(self.components, self.n)
        return self._tape.eval(x)

    def eval_many(self, X) -> np.ndarray:
        if self._tape is None:
            self._tape = compile_fields(self.components, self.n)
        return self._tape.eval_batch(X)

    def jacobian_fields(self) -> list[list[ScalarField]]:
        return [[c.diff(j) for j in range(self.n)] for c in self.components]

    def rhs_with_jacobian_tape(self):
        """Tape producing ``X`` followed by the row-major Jacobian ``dX_i/dx_j``."""
        if self._jac_tape is None:
            flat = [f for row in self.jacobian_fields() for f in row]
            self._jac_tape = compile_fields(self.components + flat, self.n)
        return self._jac_tape

    @property
    def is_zero(self) -> bool:
        return all(c.expr.is_const and c.expr.value == 0.0 for c in self.components)


@dataclass(frozen=True)
class NambuSystem:
    n: int
    J: PoissonOperator3
    G: ScalarField
    H: ScalarField
    label: str = ""

    def __post_init__(self):
        J = as_operator(self.J)
        object.__setattr__(self, "J", J)
        if J.n != self.n or self.G.dim != self.n or self.H.dim != self.n:
            raise ValueError("operator and Hamiltonians must share the system dimension")


def _det3_expr(rows, i, j, k) -> Expr:
    (a1, a2, a3), (b1, b2, b3), (c1, c2, c3) = (
        (r[i], r[j], r[k]) for r in rows)
    mul, sub = ec.mul, ec.sub
    return ec.sum_exprs([
        mul(a1, sub(mul(b2, c3), mul(b3, c2))),
        ec.neg(mul(a2, sub(mul(b1, c3), mul(b3, c1)))),
        mul(a3, sub(mul(b1, c2), mul(b2, c1))),
    ])


def _check_dims(n, *fields):
    for f in fields:
        if f.dim != n:
            raise ValueError(f"field of dimension {f.dim} used with operator of dimension {n}")


def nambu_bracket(J, F: ScalarField, G: ScalarField, H: ScalarField) -> ScalarField:
    """``{F, G, H} = J[i,j,k] F_i G_j H_k`` as a symbolic field."""
    J = as_operator(J)
    _check_dims(J.n, F, G, H)
    rows = [[f.diff(i).expr for i in range(J.n)] for f in (F, G, H)]
    terms = [ec.mul(c, _det3_expr(rows, i, j, k)) for (i, j, k), c in J.support()]
    return ScalarField(ec.sum_exprs(terms), J.n)


def hamiltonian_vector_field(sys: NambuSystem) -> VectorField:
    """``X^i = J[i,j,k] G_j H_k``."""
    n = sys.n
    g = [sys.G.diff(i).expr for i in range(n)]
    h = [sys.H.diff(i).expr for i in range(n)]
    terms: list[list[Expr]] = [[] for _ in range(n)]
    for (a, b, c), coef in sys.J.support():
        # even rotations of (a, b, c) carry the same sign
        for i, j, k in ((a, b, c), (b, c, a), (c, a, b)):
            pair = ec.sub(ec.mul(g[j], h[k]), ec.mul(g[k], h[j]))
            terms[i].append(ec.mul(coef, pair))
    return VectorField([ScalarField(ec.sum_exprs(t), n) for t in terms])


class BivectorField:
    """Skew ``n x n`` matrix of scalar fields (a field-valued classical Poisson operator)."""

    def __init__(self, n: int, upper: dict[tuple[int, int], ScalarField]):
        self.n = n
        self._upper = {}
        for (a, c), f in upper.items():
            if a == c:
                raise ValueError("diagonal entries of a skew matrix must vanish")
            if a > c:
                a, c, f = c, a, -f
            self._upper[(a, c)] = f

    @classmethod
    def from_matrix(cls, M) -> "BivectorField":
        M = np.asarray(M, dtype=float)
        n = M.shape[0]
        if np.abs(M + M.T).max(initial=0.0) > 1e-14:
            raise ValueError("matrix is not skew-symmetric")
        return cls(n, {(a, c): ScalarField.constant(M[a, c], n)
                       for a in range(n) for c in range(a + 1, n) if M[a, c] != 0.0})

    def entry(self, a: int, c: int) -> ScalarField:
        if a == c:
            return ScalarField.constant(0.0, self.n)
        if a < c:
            return self._upper.get((a, c), ScalarField.constant(0.0, self.n))
        f = self._upper.get((c, a))
        return ScalarField.constant(0.0, self.n) if f is None else -f

    def _exprs(self) -> list[Expr]:
        return [self.entry(a, c).expr for a in range(self.n) for c in range(self.n)]

    def values_at(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.n
        return compile_fields(self._exprs(), n).eval_batch(X).reshape(-1, n, n)

    def derivatives_at(self, X) -> np.ndarray:
        """``D[p, a, c, m] = d P[a, c] / d x_m``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.n
        exprs = [ec.derivative(e, m) for e in self._exprs() for m in range(n)]
        return compile_fields(exprs, n).eval_batch(X).reshape(-1, n, n, n)

    def apply(self, F: ScalarField) -> VectorField:
        """``P(dF)^a = P[a, c] F_c``."""
        n = self.n
        return VectorField([
            ScalarField(ec.sum_exprs(ec.mul(self.entry(a, c).expr, F.diff(c).expr)
                                     for c in range(n)), n)
            for a in range(n)
        ])


def induced_operator(J, G: ScalarField) -> BivectorField:
    """Binary operator obtained by freezing the middle slot: ``P[a, c] = J[a, b, c] G_b``."""
    J = as_operator(J)
    _check_dims(J.n, G)
    n = J.n
    g = [G.diff(b).expr for b in range(n)]
    acc: dict[tuple[int, int], list[Expr]] = {}
    for (i, j, k), coef in J.support():
        for p0, p1, p2, s in PERMS:
            a, b, c = (i, j, k)[p0], (i, j, k)[p1], (i, j, k)[p2]
            if a < c and not (g[b].is_const and g[b].value == 0.0):
                term = ec.mul(coef, g[b])
                acc.setdefault((a, c), []).append(term if s > 0 else ec.neg(term))
    return BivectorField(n, {key: ScalarField(ec.sum_exprs(t), n) for key, t in acc.items()})


def divergence(X: VectorField) -> ScalarField:
    return ScalarField(ec.sum_exprs(X[i].diff(i).expr for i in range(X.n)), X.n)
