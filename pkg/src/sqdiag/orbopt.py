"""Orbital optimization of a fixed determinant subspace with ADAM.

The orbitals are parameterized by an antisymmetric generator ``kappa`` with
``U = expm(kappa)``. Each step rotates the integrals, re-solves the subspace
eigenproblem in the same determinant basis, and moves ``kappa`` along the
exact energy gradient at fixed density matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from sqdiag.exceptions import ConvergenceError
from sqdiag.integrals import MolecularHamiltonian, rotate_integrals
from sqdiag.subspace import (
    SolverConfig,
    SubspaceBasis,
    SubspaceOperator,
    SubspaceState,
    compute_rdm1,
    compute_rdm2,
    solve_subspace,
)

ORTHOGONALITY_TOL = 1e-10


@dataclass(frozen=True)
class OrbitalRotation:
    """Antisymmetric generator ``kappa`` and its orthogonal exponential."""

    kappa: np.ndarray

    def __post_init__(self):
        k = np.array(self.kappa, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ValueError("kappa must be a square matrix")
        if not np.allclose(k, -k.T, rtol=0.0, atol=1e-12):
            raise ValueError("kappa must be antisymmetric")
        k = 0.5 * (k - k.T)
        k.setflags(write=False)
        object.__setattr__(self, "kappa", k)

    @classmethod
    def identity(cls, n_orb: int) -> OrbitalRotation:
        return cls(np.zeros((n_orb, n_orb)))

    @property
    def n_orb(self) -> int:
        return self.kappa.shape[0]

    @cached_property
    def unitary(self) -> np.ndarray:
        u = scipy.linalg.expm(self.kappa)
        if np.abs(u.T @ u - np.eye(self.n_orb)).max() > ORTHOGONALITY_TOL:
            # polar factor: nearest orthogonal matrix
            w, _, vt = np.linalg.svd(u)
            u = w @ vt
        return u

    def to_list(self) -> list[list[float]]:
        return self.kappa.tolist()

    @classmethod
    def from_list(cls, rows) -> OrbitalRotation:
        return cls(np.array(rows, dtype=float))


@dataclass
class OrbOptConfig:
    """ADAM settings.

    Attributes:
        learning_rate: Step size.
        beta1: First-moment decay.
        beta2: Second-moment decay.
        epsilon: Denominator guard.
        max_steps: Maximum number of parameter updates.
        grad_tol: Stop when the largest gradient component falls below this.
        resolve_every: Steps between subspace re-diagonalizations; the
            density matrices are held fixed in between.
    """

    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_steps: int = 200
    grad_tol: float = 1e-6
    resolve_every: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0 or self.max_steps < 0 or self.grad_tol < 0 or self.resolve_every < 1:
            raise ValueError("invalid optimizer settings")


@dataclass(frozen=True)
class OrbOptStep:
    step: int
    energy: float
    grad_norm: float


@dataclass
class OrbOptResult:
    """Point selected by :func:`optimize_orbitals`.

    ``converged`` tells whether the gradient criterion held at this point;
    ``hamiltonian`` holds the integrals rotated by ``rotation``; ``state`` is
    the subspace ground state in those orbitals.
    """

    energy: float
    initial_energy: float
    rotation: OrbitalRotation
    state: SubspaceState
    hamiltonian: MolecularHamiltonian
    trajectory: list[OrbOptStep] = field(default_factory=list)
    converged: bool = False


def _symmetrized(rdm1: np.ndarray, rdm2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # the energy only sees the parts with the symmetry of the integrals
    g1 = 0.5 * (rdm1 + rdm1.T)
    g2 = rdm2 + rdm2.transpose(1, 0, 2, 3)
    g2 = g2 + g2.transpose(0, 1, 3, 2)
    g2 = g2 + g2.transpose(2, 3, 0, 1)
    return g1, g2 / 8.0


def generalized_fock(ham: MolecularHamiltonian, rdm1: np.ndarray, rdm2: np.ndarray) -> np.ndarray:
    """``F[x, y] = sum_q h[x, q] rdm1[y, q] + sum_qrs (xq|rs) rdm2[y, q, r, s]``."""
    g1, g2 = _symmetrized(rdm1, rdm2)
    return ham.h @ g1.T + np.tensordot(ham.eri, g2, axes=([1, 2, 3], [1, 2, 3]))


def orbital_gradient(
    ham: MolecularHamiltonian, rdm1: np.ndarray, rdm2: np.ndarray, kappa: np.ndarray
) -> tuple[float, np.ndarray]:
    """Energy and gradient with respect to ``kappa`` at fixed density matrices.

    Args:
        ham: Hamiltonian in the reference orbitals.
        rdm1: Spin-summed one-body density matrix.
        rdm2: Spin-summed two-body density matrix in chemists' order.
        kappa: Antisymmetric generator; orbitals are rotated by ``expm(kappa)``.

    Returns:
        ``(energy, gradient)`` where ``gradient[p, q]`` (``p < q``) is the
        derivative along ``kappa[p, q] += t, kappa[q, p] -= t`` and the matrix
        is antisymmetric. At ``kappa = 0`` it reduces to ``2 (F - F^T)``.
    """
    kappa = np.asarray(kappa, dtype=float)
    rot = OrbitalRotation(kappa)
    u = rot.unitary
    rotated = rotate_integrals(ham, u)
    g1, g2 = _symmetrized(np.asarray(rdm1, dtype=float), np.asarray(rdm2, dtype=float))
    energy = rotated.core_energy + float(np.sum(rotated.h * g1)) + 0.5 * float(np.sum(rotated.eri * g2))
    # dE/dU, pulled back through the Frechet derivative of expm
    de_du = 2.0 * u @ generalized_fock(rotated, g1, g2)
    de_dk = scipy.linalg.expm_frechet(rot.kappa.T, de_du, compute_expm=False)
    return energy, de_dk - de_dk.T


def _solve(op: SubspaceOperator, ham: MolecularHamiltonian, solver: SolverConfig, guess, step: int):
    op = op.with_hamiltonian(ham)
    sol = solve_subspace(ham, op.basis, solver, initial_guess=guess, operator=op)
    if not sol.converged:
        raise ConvergenceError(
            f"orbital optimization step {step}: Davidson did not converge (residual {sol.residual_norm:.2e})"
        )
    return sol


def optimize_orbitals(
    ham: MolecularHamiltonian,
    basis: SubspaceBasis,
    config: OrbOptConfig | None = None,
    init: OrbitalRotation | None = None,
    solver: SolverConfig | None = None,
) -> OrbOptResult:
    """Minimize the subspace ground-state energy over orbital rotations.

    Args:
        ham: Hamiltonian in the reference orbitals.
        basis: Determinant subspace, held fixed throughout.
        config: ADAM settings.
        init: Starting rotation (warm start); identity by default.
        solver: Subspace solver settings.

    Returns:
        The point where the gradient criterion was met, or the lowest-energy
        point visited if it was not (or if the stationary point lies above
        the start). The energy never exceeds the energy at ``init`` by more
        than 1e-9.

    Raises:
        ConvergenceError: A subspace solve failed; the message names the step.
    """
    config = config or OrbOptConfig()
    solver = solver or SolverConfig()
    n = ham.n_orb
    rot = init or OrbitalRotation.identity(n)
    if rot.n_orb != n:
        raise ValueError(f"initial rotation is {rot.n_orb}x{rot.n_orb}, expected {n}x{n}")
    kappa = rot.kappa.copy()
    m = np.zeros((n, n))
    v = np.zeros((n, n))
    op = SubspaceOperator(ham, basis)
    guess = None
    trajectory: list[OrbOptStep] = []
    best: OrbOptResult | None = None
    initial_energy = None
    converged = False

    for step in range(config.max_steps + 1):
        current = OrbitalRotation(kappa)
        rotated = rotate_integrals(ham, current.unitary)
        if step % config.resolve_every == 0:
            sol = _solve(op, rotated, solver, guess, step)
            guess = sol.state.coefficients
            state = sol.state
            rdm1 = sum(compute_rdm1(state))
            rdm2 = compute_rdm2(state)
        energy, grad = orbital_gradient(ham, rdm1, rdm2, kappa)
        grad_norm = float(np.abs(grad).max()) if n else 0.0
        trajectory.append(OrbOptStep(step, energy, grad_norm))
        if initial_energy is None:
            initial_energy = energy
        converged = grad_norm < config.grad_tol
        # prefer the stationary point over a marginally lower but non-stationary one
        # visited on the way, as long as it does not lose against the start
        if best is None or energy < best.energy or (converged and energy <= initial_energy + 1e-9):
            best = OrbOptResult(energy, initial_energy, current, state, rotated, converged=converged)
        if converged or step == config.max_steps:
            break
        t = step + 1
        m = config.beta1 * m + (1 - config.beta1) * grad
        v = config.beta2 * v + (1 - config.beta2) * grad * grad
        m_hat = m / (1 - config.beta1**t)
        v_hat = v / (1 - config.beta2**t)
        kappa = kappa - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        kappa = 0.5 * (kappa - kappa.T)

    best.trajectory = trajectory
    return best
