"""Dense matrix helpers and a one-sided Jacobi thin SVD.

Matrices are plain 2-D float64 numpy arrays. ``as_matrix`` is the single
gate that checks shape and finiteness; everything downstream assumes it.
"""

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericalError

MAX_SWEEPS = 1000
OFF_DIAGONAL_TOL = 1e-12
# entries below this (relative to a unit column) are treated as zero when
# picking the sign of a singular vector
_SIGN_TOL = 1e-8


class SvdFactors(NamedTuple):
    u: np.ndarray  # m x q
    singular_values: np.ndarray  # q, nonincreasing
    v: np.ndarray  # d x q, columns are right singular vectors


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite, nonempty float64 2-D array (a copy)."""
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(f"{name} is empty (shape {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} has non-finite entries")
    return arr


def mat_mul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def mean_row(a):
    """Column-wise arithmetic mean of the rows of ``a``."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DimensionError("mean_row needs at least one row")
    return arr.mean(axis=0)


def _round_robin(q):
    """Pairings for one Jacobi sweep: q-1 rounds (q even) of disjoint pairs.

    Circle method; a dummy player ``-1`` pads odd ``q``.
    """
    players = list(range(q))
    if q % 2:
        players.append(-1)
    n = len(players)
    rounds = []
    for _ in range(n - 1):
        left = []
        right = []
        for k in range(n // 2):
            i, j = players[k], players[n - 1 - k]
            if i >= 0 and j >= 0:
                left.append(min(i, j))
                right.append(max(i, j))
        rounds.append((np.array(left, dtype=np.intp), np.array(right, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_columns(b):
    """Orthogonalize the columns of ``b`` in place by plane rotations.

    Returns the accumulated rotation ``v`` with ``b_in @ v == b_out``.
    """
    n, q = b.shape
    if q < 2:
        return np.eye(q)
    # row j of ``x`` is column j of ``b`` followed by row j of ``v.T``, so
    # one gather and one scatter per side rotate both
    x = np.hstack([b.T, np.eye(q)])
    rounds = _round_robin(q)
    tol2 = OFF_DIAGONAL_TOL**2
    negligible = (np.finfo(float).eps ** 2) * float(np.sum(b * b)) * n
    for _ in range(MAX_SWEEPS):
        rotated = False
        # squared column norms, refreshed each sweep and updated exactly by
        # each rotation in between
        norms = np.einsum("ij,ij->i", x[:, :n], x[:, :n])
        for left, right in rounds:
            xi = x[left]
            xj = x[right]
            alpha = norms[left]
            beta = norms[right]
            gamma = np.einsum("ij,ij->i", xi[:, :n], xj[:, :n])
            active = (gamma * gamma > tol2 * alpha * beta) & (np.minimum(alpha, beta) > negligible)
            if not active.any():
                continue
            rotated = True
            if not active.all():
                left, right = left[active], right[active]
                xi, xj = xi[active], xj[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.hypot(1.0, t)
            norms[left] = alpha - t * gamma
            norms[right] = beta + t * gamma
            s = (c * t)[:, None]
            c = c[:, None]
            x[left] = c * xi - s * xj
            x[right] = s * xi + c * xj
        if not rotated:
            b[...] = x[:, :n].T
            return x[:, n:].T.copy()
    raise NumericalError(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")


def _complete_basis(u, good):
    """Replace the columns of ``u`` not flagged ``good`` with an orthonormal
    completion of the good ones (Gram-Schmidt over standard basis vectors)."""
    n, q = u.shape
    basis = [u[:, j] for j in range(q) if good[j]]
    fill = []
    candidate = 0
    for j in range(q):
        if good[j]:
            continue
        while True:
            if candidate >= n:
                raise NumericalError("could not complete orthonormal basis")
            w = np.zeros(n)
            w[candidate] = 1.0
            candidate += 1
            # two passes of Gram-Schmidt for stability
            for _ in range(2):
                for x in basis + fill:
                    w -= (x @ w) * x
            norm = np.linalg.norm(w)
            if norm > 1e-6:
                fill.append(w / norm)
                u[:, j] = fill[-1]
                break
    return u


def _fix_signs(u, v):
    for j in range(v.shape[1]):
        col = v[:, j]
        nz = np.flatnonzero(np.abs(col) > _SIGN_TOL)
        if nz.size and col[nz[0]] < 0:
            v[:, j] = -col
            u[:, j] = -u[:, j]


def _svd_tall(b):
    """SVD of ``b`` (n x q, n >= q) as (u, sigma, v), unsorted.

    Two QR preconditioning steps, ``b[:, perm] = Q R`` (column pivoted) and
    ``R^T = Q1 R1``, leave ``X = R1^T`` close to column-orthogonal, so the
    Jacobi sweeps on ``X`` converge quickly. With ``X W = U diag(sigma)``:
    ``b = (Q U) diag(sigma) (P Q1 W)^T``.
    """
    q = b.shape[1]
    qmat, r, perm = scipy.linalg.qr(b, mode="economic", pivoting=True)
    q1, r1 = np.linalg.qr(r.T)
    work = np.ascontiguousarray(r1.T)
    w = _jacobi_columns(work)
    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    scale = sigma.max() if sigma.size else 0.0
    good = sigma > max(scale, 1.0) * np.finfo(float).eps * q * 4
    u = np.zeros_like(work)
    u[:, good] = work[:, good] / sigma[good]
    if not good.all():
        u = _complete_basis(u, good)
    v = np.empty((q, q))
    v[perm] = q1 @ w
    return qmat @ u, sigma, v


def thin_svd(a):
    """Thin SVD ``a = u @ diag(s) @ v.T`` with ``q = min(m, d)`` components.

    One-sided (Hestenes) Jacobi with a parallel round-robin pair ordering.
    Singular values are sorted nonincreasing; each column pair is signed so
    the first non-negligible entry of the ``v`` column is positive.
    """
    a = as_matrix(a)
    m, d = a.shape
    if m >= d:
        u, sigma, v = _svd_tall(a)
    else:
        # a.T = u' S v'.T  =>  a = v' S u'.T
        vt, sigma, ut = _svd_tall(a.T)
        u, v = ut, vt
    order = np.argsort(-sigma, kind="stable")
    u = np.ascontiguousarray(u[:, order])
    v = np.ascontiguousarray(v[:, order])
    sigma = sigma[order]
    _fix_signs(u, v)
    return SvdFactors(u, sigma, v)
