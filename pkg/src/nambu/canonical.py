"""Linear changes of basis for order-3 tensors and a checker for block Levi-Civita form.

Convention: a basis change ``T`` acts on covariant components as
``w'[a,b,c] = T[a,i] T[b,j] T[c,k] w[i,j,k]`` and on contravariant ones
through ``S = inv(T).T``.  This keeps the pairing ``w J`` invariant and
makes composition read ``transform(transform(A, T1), T2) = transform(A, T2 @ T1)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nambu.skewtensor import (
    CONTRAVARIANT, COVARIANT, SkewTensor3, _triple_index, generalized_E,
)


class SingularBasisChange(ValueError):
    pass


@dataclass(frozen=True)
class BasisChange:
    matrix: np.ndarray
    tol: float = 1e-12

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("basis change must be a square matrix")
        if not np.all(np.isfinite(M)):
            raise ValueError("basis change has non-finite entries")
        scale = max(1.0, float(np.abs(M).max()))
        if abs(np.linalg.det(M)) <= self.tol * scale ** M.shape[0]:
            raise SingularBasisChange("basis change matrix is singular")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def inverse(self) -> "BasisChange":
        return BasisChange(np.linalg.inv(self.matrix), self.tol)

    def compose(self, after: "BasisChange") -> "BasisChange":
        """Apply ``self`` first, then ``after``."""
        return BasisChange(after.matrix @ self.matrix, self.tol)


def _as_change(T) -> BasisChange:
    return T if isinstance(T, BasisChange) else BasisChange(np.asarray(T, dtype=float))


def transform(tensor: SkewTensor3, T) -> SkewTensor3:
    T = _as_change(T)
    if T.n != tensor.n:
        raise ValueError(f"basis change is {T.n}x{T.n}, tensor dimension is {tensor.n}")
    M = T.matrix if tensor.variance == COVARIANT else np.linalg.inv(T.matrix).T
    trip, _ = _triple_index(tensor.n)
    D = tensor.dense
    # only the independent components are computed, so antisymmetry holds exactly
    Ma, Mb, Mc = M[trip[:, 0]], M[trip[:, 1]], M[trip[:, 2]]
    vals = np.einsum("ijk,ti,tj,tk->t", D, Ma, Mb, Mc)
    return SkewTensor3(tensor.n, vals, tensor.variance)


def verify_canonicalizing_map(A: SkewTensor3, T, m: int, s: int = 0,
                              layout: str = "interleaved") -> float:
    """``max |transform(A, T) - E(m, s)|``."""
    if 3 * m + s != A.n:
        raise ValueError(f"n = {A.n} but 3m + s = {3 * m + s}")
    target = generalized_E(m, s, A.variance, layout=layout)
    return transform(A, T).max_abs_diff(target)


@dataclass(frozen=True)
class BlockForm:
    """Witness that ``A[perm[p], perm[q], perm[r]] = scalings[t] * E[p, q, r]``.

    The target ``E`` uses the interleaved layout; triplet ``t`` of ``A`` sits
    on the original indices ``(perm[t], perm[m+t], perm[2m+t])``.
    """

    m: int
    s: int
    permutation: tuple[int, ...]
    scalings: tuple[float, ...]
    variance: str

    def basis_change(self) -> BasisChange:
        """A map sending ``A`` exactly onto ``E(m, s)``."""
        n = 3 * self.m + self.s
        P = np.zeros((n, n))
        P[np.arange(n), self.permutation] = 1.0
        d = np.ones(n)
        for t, c in enumerate(self.scalings):
            d[t] = 1.0 / c
        if self.variance == CONTRAVARIANT:
            d = 1.0 / d
        return BasisChange(np.diag(d) @ P)

    def to_dict(self) -> dict:
        return {"m": self.m, "s": self.s,
                "permutation": [p + 1 for p in self.permutation],
                "scalings": list(self.scalings)}


def detect_block_form(A: SkewTensor3, tol: float = 1e-12) -> BlockForm | None:
    """Recognise ``A`` as a relabelled, per-triplet rescaled ``E(m, s)``.

    Succeeds exactly when the nonzero canonical triples of ``A`` are pairwise
    disjoint.  Returns None otherwise; that says nothing about the existence
    of a general linear canonicalizing map.
    """
    support = [(t, v) for t, v in A.entries().items() if abs(v) > tol]
    used: set[int] = set()
    for t, _ in support:
        if used.intersection(t):
            return None
        used.update(t)
    m = len(support)
    n = A.n
    perm = [0] * n
    for idx, ((a, b, c), _) in enumerate(support):
        perm[idx], perm[m + idx], perm[2 * m + idx] = a, b, c
    rest = [i for i in range(n) if i not in used]
    perm[3 * m:] = rest
    form = BlockForm(m, n - 3 * m, tuple(perm), tuple(float(v) for _, v in support), A.variance)
    # self-check the witness before returning it
    if verify_canonicalizing_map(A, form.basis_change(), m, n - 3 * m) > 1e-9 * max(
            1.0, max((abs(v) for _, v in support), default=1.0)):
        return None
    return form
