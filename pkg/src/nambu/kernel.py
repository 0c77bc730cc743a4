"""Casimir directions and semi-Casimir pairs of constant operators."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space, subspace_angles

from nambu.skewtensor import SkewTensor3, contract_last, contract_last2


def _as_tensor(J) -> SkewTensor3:
    if isinstance(J, SkewTensor3):
        return J
    const = getattr(J, "constant", None)
    if const is None:
        raise ValueError("kernel analysis requires constant operator")
    return const


@dataclass
class KernelBasis:
    n: int
    basis: np.ndarray  # (s, n), orthonormal rows

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "basis": [[float(v) for v in b] for b in self.basis]}


def _nullspace(M: np.ndarray, tol: float) -> np.ndarray:
    """Rows spanning the right nullspace of ``M`` with singular values below ``tol * s_max``."""
    n = M.shape[1]
    _, s, Vt = np.linalg.svd(M)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.eye(n)
    rank = int(np.sum(s > tol * smax))
    return Vt[rank:].copy()


def casimir_space(J, tol: float = 1e-10) -> KernelBasis:
    T = _as_tensor(J)
    n = T.n
    M = T.dense.reshape(n * n, n)
    basis = _nullspace(M, tol)
    # tidy signs so that the largest entry of each vector is positive
    for b in basis:
        k = int(np.argmax(np.abs(b)))
        if b[k] < 0:
            b *= -1.0
        b[np.abs(b) < 1e-15] = 0.0
    return KernelBasis(n, basis)


@dataclass
class SemiCasimirPair:
    u: np.ndarray
    v: np.ndarray
    norm_Ju: float
    norm_Jv: float
    norm_Juv: float
    accepted: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "u": [float(x) for x in self.u],
            "v": [float(x) for x in self.v],
            "certificates": {"J(u)": self.norm_Ju, "J(v)": self.norm_Jv, "J(u,v)": self.norm_Juv},
            "accepted": self.accepted,
            "reason": self.reason,
        }


def verify_semi_casimir(J, u, v, tol: float = 1e-10) -> SemiCasimirPair:
    """Check ``J(u, v) = 0`` with ``J(u) != 0`` and ``J(v) != 0``.

    Always returns a record; ``accepted`` is False and ``reason`` names the
    first failed condition when the pair is rejected.
    """
    T = _as_tensor(J)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.any(u) or not np.any(v):
        raise ValueError("semi-Casimir test needs nonzero covectors")
    nu = float(np.abs(contract_last(T, u)).max())
    nv = float(np.abs(contract_last(T, v)).max())
    nuv = float(np.abs(contract_last2(T, u, v)).max())
    rec = SemiCasimirPair(u, v, nu, nv, nuv, False)
    if np.linalg.matrix_rank(np.stack([u, v]), tol=tol * max(np.abs(u).max(), np.abs(v).max())) < 2:
        rec.reason = "proportional covectors"
    elif nu <= tol:
        rec.reason = "u is a Casimir direction"
    elif nv <= tol:
        rec.reason = "v is a Casimir direction"
    elif nuv > tol:
        rec.reason = "J(u,v) does not vanish"
    else:
        rec.accepted = True
    return rec


def _plane_seen(planes: list[np.ndarray], P: np.ndarray, tol: float) -> bool:
    return any(np.max(subspace_angles(Q, P)) < tol for Q in planes)


def _middle_matrix(D: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``M[i, k] = J[i, j, k] u[j]``; its right nullspace holds the partners of ``u``."""
    return np.einsum("ijk,j->ik", D, u)


def _partners(D, u, K, tol):
    """Nullspace of ``M(u)`` with ``u`` and the Casimir directions projected out."""
    N = null_space(_middle_matrix(D, u), rcond=tol)
    if N.size == 0:
        return N
    blocks = [u[:, None] / np.linalg.norm(u)] + ([K.T] if K.size else [])
    Q, _ = np.linalg.qr(np.hstack(blocks))
    N = N - Q @ (Q.T @ N)
    U, s, _ = np.linalg.svd(N, full_matrices=False)
    return U[:, s > 1e-8]


def _clean(x: np.ndarray) -> np.ndarray:
    """Scale to unit max-norm and snap entries that are integers to rounding."""
    x = x / np.abs(x).max()
    r = np.round(x)
    return np.where(np.abs(x - r) < 1e-12, r, x) + 0.0


def find_semi_casimir_pairs(J, attempts: int = 200, seed: int = 0, tol: float = 1e-10,
                            grid: bool = True, max_pairs: int = 50,
                            angle_tol: float = 1e-6) -> list[SemiCasimirPair]:
    """Heuristic search for semi-Casimir pairs; no completeness claim.

    Candidates ``u`` come from the integer grid ``{-1, 0, 1}^n`` (when small
    enough) and then from an alternating minimisation that drives the
    smallest singular value of ``M(u)`` outside ``span(u)`` to zero.
    """
    T = _as_tensor(J)
    n = T.n
    D = T.dense
    if not np.any(D):
        return []
    K = casimir_space(T, tol).basis
    found: list[SemiCasimirPair] = []
    planes: list[np.ndarray] = []

    def consider(u, v):
        if len(found) >= max_pairs:
            return
        u, v = _clean(u), _clean(v)
        rec = verify_semi_casimir(T, u, v, tol=tol * 10)
        if not rec.accepted:
            return
        P = np.stack([u, v], axis=1)
        if not _plane_seen(planes, P, angle_tol):
            planes.append(P)
            found.append(rec)

    def complement(x):
        if K.size:
            x = x - K.T @ (K @ x)
        return x

    if grid and 3 ** n <= 3 ** 7:
        grid_pts = sorted(itertools.product((0.0, 1.0, -1.0), repeat=n),
                          key=lambda c: sum(1 for v in c if v))
        for cand in grid_pts:
            u = complement(np.array(cand))
            if np.abs(u).max() < 1e-12 or np.abs(contract_last(T, u)).max() <= tol:
                continue
            V = _partners(D, u, K, tol)
            for c in range(V.shape[1]):
                consider(u, V[:, c])

    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        if len(found) >= max_pairs:
            break
        u = complement(rng.standard_normal(n))
        v = complement(rng.standard_normal(n))
        for _ in range(50):
            v = _smallest_partner(D, u, K)
            u = _smallest_partner(D, v, K)
            if np.abs(contract_last2(T, u, v)).max() < tol:
                break
        consider(u, v)
    return found


def _smallest_partner(D, u, K):
    """Unit vector ``v`` orthogonal to ``u`` and the kernel minimising ``|J(u, v)|``."""
    u = u / np.linalg.norm(u)
    Q, _ = np.linalg.qr(np.hstack([u[:, None]] + ([K.T] if K.size else [])))
    B = null_space(Q.T)  # orthonormal basis of the allowed complement
    if B.size == 0:
        return u
    M = _middle_matrix(D, u) @ B
    _, _, Vt = np.linalg.svd(M)
    v = B @ Vt[-1]
    return v / np.linalg.norm(v)
