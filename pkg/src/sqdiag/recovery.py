"""Self-consistent configuration recovery and batched subspace diagonalization.

Noisy measurement strings rarely have the right number of electrons in each
half. Recovery flips bits of a wrong-weight half towards the average orbital
occupancy of the previous iteration's ground states:

* surplus: lower an occupied bit ``p`` with probability ``∝ (1 - n_p) + eps``;
* deficit: raise an empty bit ``p`` with probability ``∝ n_p + eps``;

one bit at a time until the weight is correct. Halves are treated
independently.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from sqdiag.determinant import mask_to_bits, split_raw
from sqdiag.exceptions import ConvergenceError, EmptyPoolError
from sqdiag.integrals import MolecularHamiltonian
from sqdiag.sampler import SampleSet
from sqdiag.subspace import SolverConfig, SubspaceBasis, SubspaceState, build_basis, solve_subspace

RECOVERY_EPS = 1e-6


@dataclass(frozen=True)
class OccupancyProfile:
    """Average per-orbital occupations of each spin."""

    n_alpha_occ: np.ndarray
    n_beta_occ: np.ndarray

    def __post_init__(self):
        a = np.array(self.n_alpha_occ, dtype=float)
        b = np.array(self.n_beta_occ, dtype=float)
        if a.ndim != 1 or a.shape != b.shape:
            raise ValueError("occupation vectors must be 1-D and of equal length")
        if np.any(a < -1e-9) or np.any(a > 1 + 1e-9) or np.any(b < -1e-9) or np.any(b > 1 + 1e-9):
            raise ValueError("occupations must lie in [0, 1]")
        for arr in (a, b):
            np.clip(arr, 0.0, 1.0, out=arr)
            arr.setflags(write=False)
        object.__setattr__(self, "n_alpha_occ", a)
        object.__setattr__(self, "n_beta_occ", b)

    @property
    def n_orb(self) -> int:
        return self.n_alpha_occ.size

    @classmethod
    def from_state(cls, state: SubspaceState) -> OccupancyProfile:
        """Diagonal of the per-spin one-body density matrix."""
        basis = state.basis
        w = state.matrix**2
        shifts = np.arange(basis.n_orb, dtype=np.uint64)
        bits_a = (np.asarray(basis.alpha_strings, dtype=np.uint64)[:, None] >> shifts) & np.uint64(1)
        bits_b = (np.asarray(basis.beta_strings, dtype=np.uint64)[:, None] >> shifts) & np.uint64(1)
        return cls(w.sum(axis=1) @ bits_a.astype(float), w.sum(axis=0) @ bits_b.astype(float))

    @classmethod
    def mean(cls, profiles: Sequence[OccupancyProfile]) -> OccupancyProfile:
        if not profiles:
            raise ValueError("no profiles to average")
        return cls(
            np.mean([p.n_alpha_occ for p in profiles], axis=0),
            np.mean([p.n_beta_occ for p in profiles], axis=0),
        )


@dataclass
class RecoveryConfig:
    """Batching and iteration settings.

    Attributes:
        n_batches: Number of independent batches ``K`` per iteration.
        batch_size: Distinct configurations drawn (without replacement,
            count-weighted) into each batch.
        n_iterations: Total iterations, including the post-selection-only
            first one.
        seed: Root seed for batch subsampling and recovery draws.
        solver: Subspace solver settings.
        n_workers: Threads used for the batch solves; results do not depend on it.
    """

    n_batches: int = 10
    batch_size: int = 3000
    n_iterations: int = 10
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    n_workers: int = 1

    def __post_init__(self):
        if self.n_batches < 1 or self.batch_size < 1 or self.n_iterations < 1:
            raise ValueError("n_batches, batch_size and n_iterations must be at least 1")
        if self.n_workers < 1:
            raise ValueError("n_workers must be at least 1")


@dataclass(frozen=True)
class BatchRecord:
    iteration: int
    batch: int
    energy: float
    s2: float
    dimension: int


@dataclass(frozen=True)
class IterationRecord:
    """Summary of one iteration; ``s2`` and ``dimension`` refer to the best batch."""

    iteration: int
    min_energy: float
    mean_energy: float
    s2: float
    dimension: int
    n_solved: int


@dataclass
class RecoveryResult:
    energy: float
    state: SubspaceState
    s2: float
    history: list[IterationRecord]
    batches: list[BatchRecord]
    occupancy: OccupancyProfile

    @property
    def basis(self) -> SubspaceBasis:
        return self.state.basis


def _bits(masks: np.ndarray, n_orb: int) -> np.ndarray:
    shifts = np.arange(n_orb, dtype=np.uint64)
    return ((masks[:, None] >> shifts) & np.uint64(1)).astype(bool)


def _masks(bits: np.ndarray) -> np.ndarray:
    weights = np.uint64(1) << np.arange(bits.shape[1], dtype=np.uint64)
    return (bits.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def _weights(masks: np.ndarray, n_orb: int) -> np.ndarray:
    return _bits(masks, n_orb).sum(axis=1)


def recover_masks(
    masks: np.ndarray, occupancy: np.ndarray, weight: int, rng: np.random.Generator
) -> np.ndarray:
    """Correct every string in ``masks`` to Hamming weight ``weight``.

    Strings of the right weight are returned unchanged and consume no random
    numbers. Each round flips one bit in every still-wrong string.
    """
    occ = np.clip(np.asarray(occupancy, dtype=float), 0.0, 1.0)
    n = occ.size
    if not 0 <= weight <= n:
        raise ValueError(f"weight {weight} impossible on {n} orbitals")
    masks = np.asarray(masks, dtype=np.uint64)
    bits = _bits(masks, n)
    diff = bits.sum(axis=1) - weight
    lower = (1.0 - occ) + RECOVERY_EPS
    raise_ = occ + RECOVERY_EPS
    while True:
        rows = np.flatnonzero(diff)
        if rows.size == 0:
            break
        surplus = diff[rows] > 0
        sub = bits[rows]
        w = np.where(
            surplus[:, None],
            np.where(sub, lower, 0.0),
            np.where(sub, 0.0, raise_),
        )
        cdf = np.cumsum(w, axis=1)
        u = rng.random(rows.size) * cdf[:, -1]
        pick = np.minimum((cdf <= u[:, None]).sum(axis=1), n - 1)
        bits[rows, pick] ^= True
        diff[rows] -= np.where(surplus, 1, -1)
    return _masks(bits)


def recover_string(
    bits, occupancy: OccupancyProfile, n_alpha: int, n_beta: int, rng: np.random.Generator
) -> str:
    """Recover a single raw string; returns the corrected string."""
    n = occupancy.n_orb
    alpha, beta = split_raw(bits)
    if len(bits) != 2 * n:
        raise ValueError(f"expected {2 * n} bits, got {len(bits)}")
    a = recover_masks(np.array([alpha], dtype=np.uint64), occupancy.n_alpha_occ, n_alpha, rng)[0]
    b = recover_masks(np.array([beta], dtype=np.uint64), occupancy.n_beta_occ, n_beta, rng)[0]
    return mask_to_bits(int(a), n) + mask_to_bits(int(b), n)


def postselect_pools(samples: SampleSet, n_alpha: int, n_beta: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Sorted unique halves with the right weight, each half judged on its own."""
    if not len(samples):
        raise EmptyPoolError("sample set is empty")
    alpha, beta, _ = samples.to_masks()
    n = samples.n_orb
    pool_a = tuple(sorted({int(m) for m in alpha[_weights(alpha, n) == n_alpha]}))
    pool_b = tuple(sorted({int(m) for m in beta[_weights(beta, n) == n_beta]}))
    if not pool_a and not pool_b:
        raise EmptyPoolError("no sample has a weight-correct half")
    return pool_a, pool_b


def _merge(alpha: np.ndarray, beta: np.ndarray, counts: np.ndarray):
    keys = np.stack([alpha, beta], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq), dtype=np.int64)
    np.add.at(merged, inverse.ravel(), counts)
    return uniq[:, 0], uniq[:, 1], merged


def _batch_indices(counts: np.ndarray, config: RecoveryConfig) -> list[np.ndarray]:
    # batch seeds do not depend on the iteration, so identical inputs give identical batches
    n = counts.size
    if n <= config.batch_size:
        return [np.arange(n)] * config.n_batches
    p = counts / counts.sum()
    out = []
    for k in range(config.n_batches):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0, k]))
        out.append(np.sort(rng.choice(n, size=config.batch_size, replace=False, p=p)))
    return out


@dataclass
class _Solved:
    energy: float
    s2: float
    state: SubspaceState
    occupancy: OccupancyProfile


def _solve(ham: MolecularHamiltonian, basis: SubspaceBasis, solver: SolverConfig) -> _Solved:
    sol = solve_subspace(ham, basis, solver)
    if not sol.converged:
        raise ConvergenceError(
            f"Davidson did not converge on a {basis.dimension}-dimensional batch "
            f"(residual {sol.residual_norm:.2e})"
        )
    return _Solved(sol.energy, sol.s2, sol.state, OccupancyProfile.from_state(sol.state))


def run_recovery(ham: MolecularHamiltonian, samples: SampleSet, config: RecoveryConfig | None = None) -> RecoveryResult:
    """Iterate post-selection/recovery, batching and diagonalization.

    Iteration 0 uses post-selected halves only. Later iterations recover
    every raw sample from scratch with the occupancy averaged over the
    previous iteration's batch ground states. The returned state is the
    lowest-energy batch of the last iteration.

    Raises:
        EmptyPoolError: No batch of some iteration had usable strings of both spins.
        ConvergenceError: A batch solve did not converge.
    """
    config = config or RecoveryConfig()
    if not len(samples):
        raise EmptyPoolError("sample set is empty")
    n = ham.n_orb
    if samples.n_orb != n:
        raise ValueError(f"samples have {samples.n_orb} orbitals, Hamiltonian has {n}")
    na, nb = ham.n_alpha, ham.n_beta
    config.solver.spin_for(na, nb)
    raw_a, raw_b, raw_counts = samples.to_masks()

    cache: dict[tuple, _Solved] = {}
    history: list[IterationRecord] = []
    records: list[BatchRecord] = []
    occupancy: OccupancyProfile | None = None
    best: _Solved | None = None

    with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
        for it in range(config.n_iterations):
            if occupancy is None:
                ok_a = _weights(raw_a, n) == na
                ok_b = _weights(raw_b, n) == nb
                keep = ok_a | ok_b
                alpha, beta, counts = raw_a[keep], raw_b[keep], raw_counts[keep]
                valid_a, valid_b = ok_a[keep], ok_b[keep]
            else:
                rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, it]))
                alpha = recover_masks(raw_a, occupancy.n_alpha_occ, na, rng)
                beta = recover_masks(raw_b, occupancy.n_beta_occ, nb, rng)
                alpha, beta, counts = _merge(alpha, beta, raw_counts)
                valid_a = valid_b = np.ones(counts.size, dtype=bool)
            if counts.size == 0:
                raise EmptyPoolError(f"iteration {it}: no usable samples")

            bases: list[SubspaceBasis | None] = []
            for idx in _batch_indices(counts, config):
                try:
                    bases.append(build_basis(alpha[idx][valid_a[idx]], beta[idx][valid_b[idx]], na, nb, n))
                except EmptyPoolError:
                    bases.append(None)
            todo = {}
            for basis in bases:
                if basis is not None:
                    key = (basis.alpha_strings, basis.beta_strings)
                    if key not in cache and key not in todo:
                        todo[key] = basis
            keys = list(todo)
            for key, solved in zip(keys, pool.map(lambda k: _solve(ham, todo[k], config.solver), keys)):
                cache[key] = solved

            results = [None if b is None else cache[(b.alpha_strings, b.beta_strings)] for b in bases]
            solved = [(k, r) for k, r in enumerate(results) if r is not None]
            if not solved:
                raise EmptyPoolError(f"iteration {it}: every batch lacked strings of one spin")
            for k, r in solved:
                records.append(BatchRecord(it, k, r.energy, r.s2, r.state.basis.dimension))
            energies = np.array([r.energy for _, r in solved])
            best = solved[int(np.argmin(energies))][1]
            history.append(IterationRecord(
                it, float(energies.min()), float(energies.mean()), best.s2, best.state.basis.dimension, len(solved)
            ))
            occupancy = OccupancyProfile.mean([r.occupancy for _, r in solved])

    return RecoveryResult(best.energy, best.state, best.s2, history, records, occupancy)
