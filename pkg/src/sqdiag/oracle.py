"""Exact references: full CI in a sector and dense symmetric diagonalization."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from sqdiag.davidson import davidson_lowest
from sqdiag.exceptions import ConvergenceError, ResourceLimitError
from sqdiag.integrals import MolecularHamiltonian
from sqdiag.subspace import SolverConfig, SubspaceBasis, SubspaceOperator, SubspaceState

MAX_CAS_DIMENSION = 10_000_000
MAX_DENSE_DIMENSION = 2000
# weight of the squared spin penalty used to isolate a requested total spin
ORACLE_PENALTY = 1.0


@dataclass
class OracleResult:
    energy: float
    state: SubspaceState
    s2: float


def cas_dimension(n_orb: int, n_alpha: int, n_beta: int) -> int:
    return comb(n_orb, n_alpha) * comb(n_orb, n_beta)


def fci_ground_state(
    ham: MolecularHamiltonian,
    n_alpha: int | None = None,
    n_beta: int | None = None,
    target_spin: float | None = None,
    tol: float = 1e-9,
    max_dimension: int = MAX_CAS_DIMENSION,
) -> OracleResult:
    """Lowest full-CI eigenpair of the ``(n_alpha, n_beta)`` sector.

    Without ``target_spin`` this is the plain lowest eigenvalue of the sector.
    With it, the squared penalty ``(S^2 - s(s+1))^2`` removes every other spin
    from the bottom of the spectrum, so any allowed spin can be isolated (for
    example a singlet above a triplet in the ``Sz = 0`` sector). The returned
    energy is always the bare Hamiltonian expectation value.
    """
    n_alpha = ham.n_alpha if n_alpha is None else n_alpha
    n_beta = ham.n_beta if n_beta is None else n_beta
    dim = cas_dimension(ham.n_orb, n_alpha, n_beta)
    if dim > max_dimension:
        raise ResourceLimitError(f"CAS dimension {dim} exceeds the guard of {max_dimension}")
    ham = ham.with_sector(n_alpha, n_beta)
    basis = SubspaceBasis.full(ham.n_orb, n_alpha, n_beta)
    op = SubspaceOperator(ham, basis)
    settings = SolverConfig(davidson_tol=tol, max_davidson_iter=2000, max_subspace_vectors=30)
    if target_spin is None:
        matvec, diagonal = op.hamiltonian, op.h_diagonal
    else:
        target = SolverConfig(target_spin_s=target_spin).spin_for(n_alpha, n_beta)
        shift = target * (target + 1)

        def matvec(v):
            w = op.s2(v) - shift * v
            return op.hamiltonian(v) + ORACLE_PENALTY * (op.s2(w) - shift * w)

        # approximate diagonal; only used as the preconditioner
        diagonal = op.h_diagonal + ORACLE_PENALTY * (op.s2_diagonal - shift) ** 2
    result = davidson_lowest(matvec, dim, settings, diagonal=diagonal)
    if not result.converged:
        raise ConvergenceError(
            f"full-CI Davidson stopped at residual {result.residual_norm:.2e} (tol {tol:.0e})"
        )
    state = SubspaceState(basis, result.vector)
    v = state.coefficients
    return OracleResult(float(v @ op.hamiltonian(v)), state, float(v @ op.s2(v)))


def dense_diagonalize(matrix: np.ndarray, max_dimension: int = MAX_DENSE_DIMENSION) -> tuple[np.ndarray, np.ndarray]:
    """Full spectrum (ascending) and orthonormal eigenvectors of a real symmetric matrix."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > max_dimension:
        raise ResourceLimitError(f"dense dimension {a.shape[0]} exceeds {max_dimension}")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-10:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.2e})")
    return np.linalg.eigh(0.5 * (a + a.T))
