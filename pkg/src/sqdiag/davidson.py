"""Davidson iteration for the lowest eigenpair of a symmetric linear operator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

DEGENERACY_TOL = 1e-9
_DENOMINATOR_GUARD = 1e-8


class _DavidsonSettings(Protocol):
    davidson_tol: float
    max_davidson_iter: int
    max_subspace_vectors: int


@dataclass
class DavidsonResult:
    eigenvalue: float
    vector: np.ndarray
    n_iterations: int
    converged: bool
    residual_norm: float
    degenerate: bool = False


def _orthogonalize(t: np.ndarray, basis: np.ndarray) -> np.ndarray:
    # two passes of classical Gram-Schmidt
    for _ in range(2):
        t = t - basis @ (basis.T @ t)
    return t


def davidson_lowest(
    matvec: Callable[[np.ndarray], np.ndarray],
    dimension: int,
    config: _DavidsonSettings,
    initial_guess: np.ndarray | None = None,
    diagonal: np.ndarray | None = None,
) -> DavidsonResult:
    """Lowest eigenpair of the symmetric operator ``matvec``.

    Args:
        matvec: Applies the operator to a flat vector of length ``dimension``.
        dimension: Size of the vector space.
        config: Provides ``davidson_tol`` (residual norm threshold),
            ``max_davidson_iter`` and ``max_subspace_vectors``.
        initial_guess: Optional warm-start vector. Without it the unit vector on
            the smallest diagonal element is used (the first basis vector if
            ``diagonal`` is not given).
        diagonal: Operator diagonal, used for the initial guess and as the
            preconditioner.

    Returns:
        A :class:`DavidsonResult`. When the iteration limit is hit the best
        iterate is returned with ``converged=False``.
    """
    if dimension < 1:
        raise ValueError("dimension must be at least 1")
    if diagonal is not None:
        diagonal = np.asarray(diagonal, dtype=float)
        if diagonal.shape != (dimension,):
            raise ValueError("diagonal has the wrong length")

    if initial_guess is not None:
        v = np.array(initial_guess, dtype=float).ravel()
        if v.shape != (dimension,) or not np.linalg.norm(v) > 0:
            raise ValueError("initial guess must be a nonzero vector of the right length")
    else:
        v = np.zeros(dimension)
        v[int(np.argmin(diagonal)) if diagonal is not None else 0] = 1.0
    v /= np.linalg.norm(v)

    if dimension == 1:
        av = np.asarray(matvec(v), dtype=float)
        return DavidsonResult(float(av[0] * v[0]), v, 0, True, 0.0)

    max_vecs = min(config.max_subspace_vectors, dimension)
    V = np.zeros((dimension, max_vecs))
    AV = np.zeros((dimension, max_vecs))
    V[:, 0] = v
    AV[:, 0] = matvec(v)
    m = 1
    theta = float(v @ AV[:, 0])
    x, ax = v, AV[:, 0]
    residual = np.inf
    degenerate = False
    for iteration in range(1, config.max_davidson_iter + 1):
        sub = V[:, :m].T @ AV[:, :m]
        evals, evecs = np.linalg.eigh(0.5 * (sub + sub.T))
        theta = float(evals[0])
        degenerate = m > 1 and evals[1] - evals[0] < DEGENERACY_TOL
        y = evecs[:, 0]
        x = V[:, :m] @ y
        ax = AV[:, :m] @ y
        r = ax - theta * x
        residual = float(np.linalg.norm(r))
        if residual <= config.davidson_tol or m == dimension:
            return DavidsonResult(theta, x / np.linalg.norm(x), iteration - 1, True, residual, degenerate)

        if m == max_vecs:
            keep = min(2, m)
            V[:, :keep] = V[:, :m] @ evecs[:, :keep]
            AV[:, :keep] = AV[:, :m] @ evecs[:, :keep]
            # re-orthonormalize the collapsed block against round-off drift
            q, rmat = np.linalg.qr(V[:, :keep])
            AV[:, :keep] = np.linalg.solve(rmat.T, AV[:, :keep].T).T
            V[:, :keep] = q
            m = keep

        if diagonal is not None:
            denom = theta - diagonal
            small = np.abs(denom) < _DENOMINATOR_GUARD
            denom[small] = np.where(denom[small] >= 0, _DENOMINATOR_GUARD, -_DENOMINATOR_GUARD)
            t = r / denom
        else:
            t = r.copy()
        raw = np.linalg.norm(t)
        t = _orthogonalize(t, V[:, :m])
        norm = np.linalg.norm(t)
        if norm < 1e-8 * raw:
            # preconditioned direction already spanned; fall back to the residual
            t = _orthogonalize(r.copy(), V[:, :m])
            norm = np.linalg.norm(t)
            if norm < 1e-14:
                break
        t /= norm
        V[:, m] = t
        AV[:, m] = matvec(t)
        m += 1

    return DavidsonResult(theta, x / np.linalg.norm(x), iteration, False, residual, degenerate)
