"""Fully antisymmetric order-3 tensors on R^n.

Only the independent components ``T[i, j, k]`` with ``i < j < k`` are stored;
every other component follows from the permutation sign. A tensor is either
covariant (a 3-form ``w``) or contravariant (a trivector ``J``).
"""
from __future__ import annotations

import itertools
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

COVARIANT = "covariant"
CONTRAVARIANT = "contravariant"
_VARIANCES = (COVARIANT, CONTRAVARIANT)

# the six permutations of three slots with their signs
PERMS = ((0, 1, 2, 1), (1, 2, 0, 1), (2, 0, 1, 1), (1, 0, 2, -1), (0, 2, 1, -1), (2, 1, 0, -1))


class InverseError(ValueError):
    """No fully antisymmetric right inverse could be produced."""


class RankDeficientError(InverseError):
    pass


@lru_cache(maxsize=None)
def triples(n: int) -> tuple[tuple[int, int, int], ...]:
    """Strictly increasing index triples of ``range(n)`` in lexicographic order."""
    return tuple(itertools.combinations(range(n), 3))


@lru_cache(maxsize=None)
def _triple_index(n: int) -> tuple[np.ndarray, dict]:
    trip = np.array(triples(n), dtype=np.intp).reshape(-1, 3)
    return trip, {t: k for k, t in enumerate(triples(n))}


def canonical(i: int, j: int, k: int) -> tuple[tuple[int, int, int], int]:
    """Sort a triple of distinct indices, returning it with the permutation sign."""
    sign = 1
    a, b, c = i, j, k
    if a > b:
        a, b, sign = b, a, -sign
    if b > c:
        b, c, sign = c, b, -sign
    if a > b:
        a, b, sign = b, a, -sign
    return (a, b, c), sign


def antisymmetrize(dense: np.ndarray) -> np.ndarray:
    """Average of ``sign(p) * T[p(i, j, k)]`` over the six permutations ``p``."""
    out = np.zeros_like(dense, dtype=float)
    for p0, p1, p2, s in PERMS:
        out += s * np.transpose(dense, (p0, p1, p2))
    return out / 6.0


class SkewTensor3:
    """Immutable antisymmetric order-3 tensor stored by independent components."""

    __slots__ = ("n", "variance", "values", "_dense")

    def __init__(self, n: int, values, variance: str = CONTRAVARIANT):
        if n < 3:
            raise ValueError(f"dimension must be at least 3, got {n}")
        if variance not in _VARIANCES:
            raise ValueError(f"variance must be one of {_VARIANCES}, got {variance!r}")
        values = np.array(values, dtype=float).reshape(-1)
        if values.size != len(triples(n)):
            raise ValueError(f"expected {len(triples(n))} independent components, got {values.size}")
        values.setflags(write=False)
        self.n = n
        self.variance = variance
        self.values = values
        self._dense = None

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, n: int, variance: str = CONTRAVARIANT) -> "SkewTensor3":
        return cls(n, np.zeros(len(triples(n))), variance)

    @classmethod
    def from_entries(cls, n: int, entries: Iterable[Sequence], variance: str = CONTRAVARIANT):
        """Build from ``(i, j, k, value)`` records in any index order (0-based)."""
        _, lookup = _triple_index(n)
        vals = np.zeros(len(lookup))
        seen = {}
        for rec in entries:
            i, j, k, v = rec
            for idx in (i, j, k):
                if not 0 <= idx < n:
                    raise IndexError(f"index {idx} out of range for dimension {n}")
            if len({i, j, k}) < 3:
                raise ValueError(f"repeated index in triple ({i}, {j}, {k})")
            key, sign = canonical(i, j, k)
            if key in seen:
                prev = seen[key]
                kind = "conflicting" if prev != sign * float(v) else "duplicate"
                raise ValueError(f"{kind} entries for canonical triple {key}")
            seen[key] = sign * float(v)
            vals[lookup[key]] = sign * float(v)
        return cls(n, vals, variance)

    @classmethod
    def from_dense(cls, dense, variance: str = CONTRAVARIANT, atol: float = 1e-12):
        dense = np.asarray(dense, dtype=float)
        n = dense.shape[0]
        if dense.shape != (n, n, n):
            raise ValueError(f"expected an n*n*n array, got shape {dense.shape}")
        if np.abs(antisymmetrize(dense) - dense).max(initial=0.0) > atol:
            raise ValueError("array is not fully antisymmetric")
        trip, _ = _triple_index(n)
        return cls(n, dense[trip[:, 0], trip[:, 1], trip[:, 2]], variance)

    def with_variance(self, variance: str) -> "SkewTensor3":
        return SkewTensor3(self.n, self.values, variance)

    # access -------------------------------------------------------------
    def component(self, i: int, j: int, k: int) -> float:
        for idx in (i, j, k):
            if not 0 <= idx < self.n:
                raise IndexError(f"index {idx} out of range for dimension {self.n}")
        if i == j or j == k or i == k:
            return 0.0
        key, sign = canonical(i, j, k)
        return sign * float(self.values[_triple_index(self.n)[1][key]])

    def __getitem__(self, ijk):
        return self.component(*ijk)

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            n = self.n
            d = np.zeros((n, n, n))
            trip, _ = _triple_index(n)
            for p0, p1, p2, s in PERMS:
                d[trip[:, p0], trip[:, p1], trip[:, p2]] = s * self.values
            d.setflags(write=False)
            self._dense = d
        return self._dense

    def entries(self, atol: float = 0.0) -> dict[tuple[int, int, int], float]:
        """Nonzero canonical components."""
        return {t: float(v) for t, v in zip(triples(self.n), self.values) if abs(v) > atol}

    def to_records(self, atol: float = 0.0) -> list[dict]:
        """Tensor literal records with 1-based indices."""
        return [{"i": i + 1, "j": j + 1, "k": k + 1, "value": v}
                for (i, j, k), v in self.entries(atol).items()]

    @classmethod
    def from_records(cls, n: int, records: Iterable[dict], variance: str = CONTRAVARIANT):
        return cls.from_entries(
            n, [(r["i"] - 1, r["j"] - 1, r["k"] - 1, r["value"]) for r in records], variance)

    # arithmetic -----------------------------------------------------------
    def _check_same(self, other):
        if not isinstance(other, SkewTensor3) or other.n != self.n or other.variance != self.variance:
            raise ValueError("tensors must share dimension and variance")

    def __add__(self, other):
        self._check_same(other)
        return SkewTensor3(self.n, self.values + other.values, self.variance)

    def __sub__(self, other):
        self._check_same(other)
        return SkewTensor3(self.n, self.values - other.values, self.variance)

    def __mul__(self, c):
        return SkewTensor3(self.n, float(c) * self.values, self.variance)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def max_abs_diff(self, other) -> float:
        self._check_same(other)
        return float(np.abs(self.values - other.values).max(initial=0.0))

    def __repr__(self):
        nz = self.entries()
        return f"SkewTensor3(n={self.n}, {self.variance}, {len(nz)} nonzero)"


def make_skew3(n: int, triples_: Iterable[Sequence], variance: str = CONTRAVARIANT) -> SkewTensor3:
    return SkewTensor3.from_entries(n, triples_, variance)


def component(T: SkewTensor3, i: int, j: int, k: int) -> float:
    return T.component(i, j, k)


def levi_civita(variance: str = CONTRAVARIANT) -> SkewTensor3:
    return SkewTensor3(3, [1.0], variance)


def generalized_E(m: int, s: int = 0, variance: str = CONTRAVARIANT,
                  layout: str = "interleaved") -> SkewTensor3:
    """Block Levi-Civita symbol with ``m`` unit triplets and ``s`` trailing kernel directions.

    ``layout="interleaved"`` puts the triplets on ``(i, m+i, 2m+i)``;
    ``layout="block"`` puts them on consecutive indices ``(3i, 3i+1, 3i+2)``.
    The two differ by a relabelling of coordinates.
    """
    if m < 0 or s < 0:
        raise ValueError("m and s must be non-negative")
    n = 3 * m + s
    if layout == "interleaved":
        ent = [(i, m + i, 2 * m + i, 1.0) for i in range(m)]
    elif layout == "block":
        ent = [(3 * i, 3 * i + 1, 3 * i + 2, 1.0) for i in range(m)]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return SkewTensor3.from_entries(n, ent, variance)


def flatten(T: SkewTensor3) -> np.ndarray:
    """The ``n x n^2`` matrix with entry ``[i, j*n + k] = T[i, j, k]``."""
    return T.dense.reshape(T.n, T.n * T.n).copy()


def flat_rank(M: np.ndarray, tol: float = 1e-10) -> int:
    """Numerical rank: singular values at least ``tol * sigma_max``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv >= tol * sv[0]))


def pairing(w: SkewTensor3, J: SkewTensor3) -> np.ndarray:
    """Full contraction ``sum_jk w[i,j,k] J[j,k,l]`` (equals ``2*I`` for an inverse pair)."""
    if w.n != J.n:
        raise ValueError("dimension mismatch")
    return np.einsum("ijk,jkl->il", w.dense, J.dense)


def inverse_residual(w: SkewTensor3, J: SkewTensor3) -> float:
    return float(np.abs(pairing(w, J) - 2.0 * np.eye(w.n)).max())


def _skew_system(T: SkewTensor3) -> np.ndarray:
    """Matrix of the linear map (independent components of X) -> pairing(T, X)."""
    n = T.n
    trip, _ = _triple_index(n)
    D = T.dense
    M = np.zeros((n, n, len(trip)))
    cols = np.arange(len(trip))
    a, b, c = trip[:, 0], trip[:, 1], trip[:, 2]
    # X has +1 on (a,b,c) and its even rotations, -1 on odd ones
    M[:, c, cols] += 2.0 * D[:, a, b]
    M[:, a, cols] += 2.0 * D[:, b, c]
    M[:, b, cols] += 2.0 * D[:, c, a]
    return M.reshape(n * n, len(trip))


def right_inverse(T: SkewTensor3, tol: float = 1e-10, verify_tol: float = 1e-9) -> SkewTensor3:
    """Fully antisymmetric ``X`` of opposite variance with ``pairing(T, X) = 2 I``.

    The minimal-norm right inverse of the flattening is projected onto fully
    antisymmetric tensors. When that projection no longer inverts ``T``, the
    antisymmetric unknowns are solved for directly (least squares, minimal
    norm). Either candidate is re-verified against ``verify_tol``.
    """
    n = T.n
    A = flatten(T)
    if flat_rank(A, tol) < n:
        raise RankDeficientError(f"flattened tensor has rank {flat_rank(A, tol)} < {n}; no right inverse")
    other = CONTRAVARIANT if T.variance == COVARIANT else COVARIANT
    B = 2.0 * np.linalg.pinv(A)  # n^2 x n, rows indexed by (j, k)
    X = SkewTensor3.from_dense(antisymmetrize(B.reshape(n, n, n)), other, atol=np.inf)
    if inverse_residual(T, X) <= verify_tol:
        return X
    M = _skew_system(T)
    sol, *_ = np.linalg.lstsq(M, 2.0 * np.eye(n).reshape(-1), rcond=None)
    X = SkewTensor3(n, sol, other)
    if inverse_residual(T, X) <= verify_tol:
        return X
    raise InverseError("no skew-symmetric inverse found by this method")


def contract_last(J: SkewTensor3, u) -> np.ndarray:
    """Bivector ``M[i, j] = sum_k J[i, j, k] u[k]``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (J.n,):
        raise ValueError(f"covector must have {J.n} components")
    return J.dense @ u


def contract_last2(J: SkewTensor3, u, v) -> np.ndarray:
    """Vector ``X[i] = sum_jk J[i, j, k] u[j] v[k]``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (J.n,) or v.shape != (J.n,):
        raise ValueError(f"covectors must have {J.n} components")
    return np.einsum("ijk,j,k->i", J.dense, u, v)


def check_inv2(w: SkewTensor3, J: SkewTensor3, f=1.0, points=None) -> float:
    """Max of ``|w[i,j,k] J[k,l,m] - f (d_il d_jm - d_im d_jl)|`` over points and indices.

    ``f`` is a number or a :class:`~nambu.exprcalc.ScalarField` evaluated at ``points``.
    """
    if w.n != J.n:
        raise ValueError("dimension mismatch")
    n = w.n
    lhs = np.einsum("ijk,klm->ijlm", w.dense, J.dense)
    eye = np.eye(n)
    delta = np.einsum("il,jm->ijlm", eye, eye) - np.einsum("im,jl->ijlm", eye, eye)
    if hasattr(f, "eval_many"):
        if points is None:
            raise ValueError("points are required for a field-valued f")
        fvals = f.eval_many(np.atleast_2d(points))
    else:
        fvals = np.array([float(f)])
    return float(max(np.abs(lhs - fv * delta).max() for fv in fvals))
