"""Small model Hamiltonians for tests, demos and acceptance runs.

:func:`methylene_model` is a six-orbital, six-electron lattice caricature of a
bent AH2 molecule: four valence orbitals on the heavy atom (s, p_z, p_x, p_y)
with on-site Hubbard, inter-orbital Coulomb and Hund exchange terms, two
ligand orbitals with their own Hubbard term, and heavy-atom/ligand hopping
that decays exponentially with the bond length ``r``. The triplet is the
ground state near ``r = 1.1``; the singlet drops below it once as the bonds
stretch, and the gap shrinks again at long range.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from sqdiag.exceptions import ConvergenceError
from sqdiag.integrals import MolecularHamiltonian, rotate_integrals


@dataclass(frozen=True)
class MethyleneModelParameters:
    """Site-basis parameters (Hartree, bond length in Angstrom)."""

    eps_s: float = -1.45
    eps_p: float = -0.48
    eps_py: float = -0.60
    eps_ligand: float = -0.34
    u_heavy: float = 0.9
    u_ligand: float = 0.52
    coulomb: float = 0.42
    exchange: float = 0.14
    hopping: float = 0.25
    decay: float = 1.55
    r_eq: float = 1.1
    half_angle_deg: float = 51.0
    ligand_coulomb: float = 0.3


DEFAULT_MODEL = MethyleneModelParameters()
MODEL_SCAN = (0.75, 1.1, 1.6, 2.2, 3.2)


def methylene_site_integrals(r: float, params: MethyleneModelParameters = DEFAULT_MODEL):
    """One- and two-body integrals of the model in its orthonormal site basis."""
    if r <= 0:
        raise ValueError("bond length must be positive")
    n = 6
    p = params
    h = np.diag([p.eps_s, p.eps_p, p.eps_p, p.eps_py, p.eps_ligand, p.eps_ligand])
    t = p.hopping * np.exp(-p.decay * (r - p.r_eq))
    theta = np.deg2rad(p.half_angle_deg)
    for ligand, sign in ((4, 1.0), (5, -1.0)):
        for orb, amp in ((0, 1.0), (1, np.cos(theta)), (2, sign * np.sin(theta))):
            h[orb, ligand] = h[ligand, orb] = -t * amp

    eri = np.zeros((n,) * 4)
    for q in range(n):
        eri[q, q, q, q] = p.u_heavy if q < 4 else p.u_ligand
    for a, b in combinations(range(4), 2):
        eri[a, a, b, b] = eri[b, b, a, a] = p.coulomb
        for idx in ((a, b, b, a), (b, a, a, b), (a, b, a, b), (b, a, b, a)):
            eri[idx] = p.exchange
    v = p.ligand_coulomb / np.sqrt(1.0 + r * r)
    for a in range(4):
        for ligand in (4, 5):
            eri[a, a, ligand, ligand] = eri[ligand, ligand, a, a] = v
    return h, eri


def restricted_hartree_fock(
    ham: MolecularHamiltonian,
    n_occ: int | None = None,
    max_iter: int = 500,
    tol: float = 1e-10,
    damping: float = 0.3,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Closed-shell SCF in an orthonormal orbital basis.

    Args:
        ham: Hamiltonian; only the integrals are used.
        n_occ: Doubly occupied orbitals (default ``(n_alpha + n_beta) // 2``).
        max_iter: Iteration limit.
        tol: Convergence threshold on the density-matrix change.
        damping: Fraction of the previous density mixed into each update.

    Returns:
        ``(energy, C, orbital_energies)`` with orbitals as columns of ``C``,
        sorted by energy.

    Raises:
        ConvergenceError: The density did not settle within ``max_iter``.
    """
    n_occ = (ham.n_alpha + ham.n_beta) // 2 if n_occ is None else n_occ
    h, eri = ham.h, ham.eri

    def fock(d):
        return h + np.einsum("pqrs,rs->pq", eri, d) - 0.5 * np.einsum("prsq,rs->pq", eri, d)

    eps, c = np.linalg.eigh(h)
    d = 2.0 * c[:, :n_occ] @ c[:, :n_occ].T
    for _ in range(max_iter):
        eps, c = np.linalg.eigh(fock(d))
        new = 2.0 * c[:, :n_occ] @ c[:, :n_occ].T
        change = np.abs(new - d).max()
        d = (1.0 - damping) * new + damping * d
        if change < tol:
            break
    else:
        raise ConvergenceError(f"RHF did not converge in {max_iter} iterations (change {change:.1e})")
    f = fock(d)
    eps, c = np.linalg.eigh(f)
    energy = ham.core_energy + 0.5 * float(np.sum(d * (h + f)))
    return energy, c, eps


def methylene_model(
    r: float,
    n_alpha: int = 3,
    n_beta: int = 3,
    params: MethyleneModelParameters = DEFAULT_MODEL,
    canonical: bool = True,
) -> MolecularHamiltonian:
    """The 6-orbital model at bond length ``r`` in the requested sector.

    With ``canonical=True`` the integrals are expressed in closed-shell
    Hartree-Fock orbitals, so the aufbau determinant is the reference.
    """
    h, eri = methylene_site_integrals(r, params)
    ham = MolecularHamiltonian(h, eri, 0.0, n_alpha, n_beta)
    if not canonical:
        return ham
    _, c, _ = restricted_hartree_fock(ham.with_sector(3, 3))
    return rotate_integrals(ham, c)
