"""Dense linear-algebra substrate: SVD, orthonormal bases, projectors, solves, norms.

All functions are pure; arrays are treated as immutable after construction and
are safe to share across concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

# Square solves are refused above this condition-number estimate; small
# Rademacher matrices can be exactly singular and callers must resample.
OPERATOR_COND_LIMIT = 1e12

# Numerical-rank tolerance, relative to the operator norm of the input.
RANK_TOL = 1e-10


class SvdConvergenceError(RuntimeError):
    """The SVD iteration failed to converge."""


class RankDeficiencyError(ValueError):
    """Input columns do not have full numerical rank."""

    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class IllConditionedError(ValueError):
    """Square system rejected by the condition guard."""

    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


def as_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a float64 2-d array, checking shape and finiteness."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {out.shape}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def as_vector(z, dim=None, name="vector") -> np.ndarray:
    out = np.asarray(z, dtype=np.float64)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {out.shape}")
    if dim is not None and out.shape[0] != dim:
        raise ValueError(f"{name} has length {out.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``A = U diag(s) V^T``; ``s_k(A)`` is ``singular_values[k - 1]``."""

    left_factor: np.ndarray       # n x r, orthonormal columns
    singular_values: np.ndarray   # length r, non-increasing, non-negative
    right_factor: np.ndarray      # m x r, orthonormal columns


@dataclass(frozen=True)
class Subspace:
    ambient_dim: int
    dim: int
    basis: np.ndarray             # ambient_dim x dim, orthonormal columns


@dataclass(frozen=True)
class Projector:
    matrix: np.ndarray            # square, symmetric, idempotent
    rank: int


@dataclass(frozen=True)
class MatrixNorms:
    operator: float
    hilbert_schmidt: float
    stable_rank: float


def svd(a) -> SvdResult:
    """Full (thin) singular value decomposition of a dense real matrix."""
    a = as_matrix(a)
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        hs = float(np.sqrt((a * a).sum()))
        raise SvdConvergenceError(
            f"SVD failed to converge for {a.shape[0]}x{a.shape[1]} matrix "
            f"(Hilbert-Schmidt norm {hs:.6g})"
        ) from exc
    return SvdResult(u, s, vh.T)


def singular_values(a) -> np.ndarray:
    """Singular values only, non-increasing; cheaper than svd() when factors are unused."""
    a = as_matrix(a)
    try:
        return np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        hs = float(np.sqrt((a * a).sum()))
        raise SvdConvergenceError(
            f"SVD failed to converge for {a.shape[0]}x{a.shape[1]} matrix "
            f"(Hilbert-Schmidt norm {hs:.6g})"
        ) from exc


def orthonormal_basis(columns) -> Subspace:
    """Orthonormal basis of the column span, via Householder QR.

    Raises RankDeficiencyError when the numerical rank (relative tolerance
    ``RANK_TOL`` times the operator norm) falls below the column count.
    """
    cols = as_matrix(columns, "columns")
    n, d = cols.shape
    if d > n:
        raise ValueError(f"cannot span {d} directions in ambient dimension {n}")
    s = singular_values(cols)
    rank = int(np.count_nonzero(s > RANK_TOL * s[0]))
    if rank < d:
        raise RankDeficiencyError(
            f"columns have numerical rank {rank}, expected {d}", rank
        )
    q, _ = np.linalg.qr(cols)
    return Subspace(ambient_dim=n, dim=d, basis=q)


def projector(s: Subspace, complement: bool = False) -> Projector:
    """Orthogonal projector onto the subspace, or onto its complement."""
    p = s.basis @ s.basis.T
    if complement:
        return Projector(np.eye(s.ambient_dim) - p, s.ambient_dim - s.dim)
    return Projector(p, s.dim)


def dist_to_subspace(z, s: Subspace, shift=None) -> float:
    """Euclidean distance from ``z`` to the affine subspace ``s + shift``."""
    z = as_vector(z, s.ambient_dim, "z")
    w = z if shift is None else z - as_vector(shift, s.ambient_dim, "shift")
    r = w - s.basis @ (s.basis.T @ w)
    return float(np.linalg.norm(r))


def condition_estimate(a) -> float:
    """Ratio of extreme singular values; inf when numerically singular."""
    s = singular_values(a)
    if s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])


def _guarded_lu(a, name):
    n, m = a.shape
    if n != m:
        raise ValueError(f"{name} requires a square matrix, got {n}x{m}")
    cond = condition_estimate(a)
    if not cond <= OPERATOR_COND_LIMIT:
        raise IllConditionedError(
            f"condition estimate {cond:.3e} exceeds limit {OPERATOR_COND_LIMIT:.0e}",
            cond,
        )
    return scipy.linalg.lu_factor(a)


def solve(a, b) -> np.ndarray:
    """Solve ``a x = b`` for a well-conditioned square ``a``.

    One step of iterative refinement keeps the residual near the float64
    floor; systems with condition estimate above ``OPERATOR_COND_LIMIT``
    are rejected with IllConditionedError.
    """
    a = as_matrix(a)
    b = as_vector(b, a.shape[0], "b")
    lu = _guarded_lu(a, "solve")
    x = scipy.linalg.lu_solve(lu, b)
    x += scipy.linalg.lu_solve(lu, b - a @ x)
    return x


def solve_matrix(a, b) -> np.ndarray:
    """Solve ``a X = B`` column-wise with the same guard and refinement as solve()."""
    a = as_matrix(a)
    b = as_matrix(b, "b")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"b has {b.shape[0]} rows, expected {a.shape[0]}")
    lu = _guarded_lu(a, "solve_matrix")
    x = scipy.linalg.lu_solve(lu, b)
    x += scipy.linalg.lu_solve(lu, b - a @ x)
    return x


def matrix_norms(a) -> MatrixNorms:
    """Operator norm, Hilbert-Schmidt norm, and stable rank ``HS^2 / op^2``."""
    a = as_matrix(a)
    hs = float(np.sqrt((a * a).sum()))
    op = float(singular_values(a)[0])
    stable = (hs / op) ** 2 if op > 0.0 else 0.0
    return MatrixNorms(operator=op, hilbert_schmidt=hs, stable_rank=stable)


def restricted_min_sv(a, s: Subspace) -> float:
    """Smallest value of ``|a y|`` over unit vectors ``y`` in the subspace."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if a.shape[1] != s.ambient_dim:
        raise ValueError(
            f"matrix dimension {a.shape[1]} does not match ambient {s.ambient_dim}"
        )
    if s.dim < 1:
        raise ValueError("subspace must have dimension at least 1")
    return float(singular_values(a @ s.basis)[-1])
