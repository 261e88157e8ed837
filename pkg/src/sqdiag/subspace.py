"""Projected Hamiltonians on Cartesian-product determinant subspaces.

A subspace is fixed by a list of spin-up strings and a list of spin-down
strings; its determinants are all pairs, ordered row-major (alpha outer, beta
inner). A state is therefore an ``(n_alpha_strings, n_beta_strings)``
coefficient matrix ``C``, and the Hamiltonian splits into

* same-spin blocks ``A`` (alpha) and ``B`` (beta) acting as ``A @ C + C @ B``;
* the opposite-spin coupling ``sum (pq|rs) E^a_pq E^b_rs``, which factorizes
  into per-spin single-excitation tables restricted to the pools.

Total spin uses ``S^2 = Sz^2 + Sz + n_beta - sum_pq E^a_qp E^b_pq``, which has
the same opposite-spin structure with a trivial coupling matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from sqdiag.davidson import DavidsonResult, davidson_lowest
from sqdiag.determinant import (
    Determinant,
    check_n_orb,
    excitation_sign,
    mask_to_bits,
    occupied,
    popcount,
    string_diagonal,
    string_double,
    string_excitations,
    string_single,
    strings_with_weight,
)
from sqdiag.exceptions import EmptyPoolError, SectorMismatchError
from sqdiag.integrals import MolecularHamiltonian

# elements of the (rows x n_beta x n_orb^2) intermediate held at once
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class SubspaceBasis:
    """Cartesian product of sorted, unique alpha and beta string lists."""

    alpha_strings: tuple[int, ...]
    beta_strings: tuple[int, ...]
    n_orb: int
    n_alpha: int
    n_beta: int

    def __post_init__(self):
        check_n_orb(self.n_orb)
        for name, strings, weight in (
            ("alpha", self.alpha_strings, self.n_alpha),
            ("beta", self.beta_strings, self.n_beta),
        ):
            strings = tuple(int(s) for s in strings)
            object.__setattr__(self, f"{name}_strings", strings)
            if not strings:
                raise EmptyPoolError(f"{name} string list is empty")
            if any(b <= a for a, b in zip(strings, strings[1:])):
                raise ValueError(f"{name} strings must be sorted and unique")
            for s in strings:
                if popcount(s) != weight or s >> self.n_orb:
                    raise ValueError(
                        f"{name} string {mask_to_bits(s, self.n_orb)} is not a weight-{weight} "
                        f"string on {self.n_orb} orbitals"
                    )

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.alpha_strings), len(self.beta_strings)

    @property
    def dimension(self) -> int:
        return len(self.alpha_strings) * len(self.beta_strings)

    def determinants(self) -> list[Determinant]:
        return [Determinant(a, b) for a in self.alpha_strings for b in self.beta_strings]

    @cached_property
    def _alpha_index(self) -> dict[int, int]:
        return {s: i for i, s in enumerate(self.alpha_strings)}

    @cached_property
    def _beta_index(self) -> dict[int, int]:
        return {s: i for i, s in enumerate(self.beta_strings)}

    def index(self, det: Determinant) -> int | None:
        """Row-major position of ``det``, or ``None`` if it is not in the basis."""
        ia = self._alpha_index.get(det.alpha_mask)
        ib = self._beta_index.get(det.beta_mask)
        if ia is None or ib is None:
            return None
        return ia * len(self.beta_strings) + ib

    @classmethod
    def full(cls, n_orb: int, n_alpha: int, n_beta: int) -> SubspaceBasis:
        """Complete active space of the sector."""
        return cls(
            tuple(strings_with_weight(n_orb, n_alpha)),
            tuple(strings_with_weight(n_orb, n_beta)),
            n_orb,
            n_alpha,
            n_beta,
        )


def build_basis(
    alpha_pool: Iterable[int],
    beta_pool: Iterable[int],
    n_alpha: int,
    n_beta: int,
    n_orb: int,
) -> SubspaceBasis:
    """Deduplicate and weight-filter the pools, then take their Cartesian product."""
    alpha = sorted({int(s) for s in alpha_pool if popcount(int(s)) == n_alpha and not int(s) >> n_orb})
    beta = sorted({int(s) for s in beta_pool if popcount(int(s)) == n_beta and not int(s) >> n_orb})
    if not alpha or not beta:
        raise EmptyPoolError(
            f"no weight-correct strings left (alpha: {len(alpha)}, beta: {len(beta)})"
        )
    return SubspaceBasis(tuple(alpha), tuple(beta), n_orb, n_alpha, n_beta)


@dataclass(frozen=True)
class SubspaceState:
    """Normalized real coefficient vector over a :class:`SubspaceBasis`."""

    basis: SubspaceBasis
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).ravel()
        if c.size != self.basis.dimension:
            raise ValueError(f"expected {self.basis.dimension} coefficients, got {c.size}")
        norm = np.linalg.norm(c)
        if not norm > 0:
            raise ValueError("state vector is zero")
        if abs(norm - 1.0) > 1e-12:
            c = c / norm
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def matrix(self) -> np.ndarray:
        return self.coefficients.reshape(self.basis.shape)

    def amplitude(self, det: Determinant) -> float:
        idx = self.basis.index(det)
        return 0.0 if idx is None else float(self.coefficients[idx])

    def probabilities(self) -> dict[Determinant, float]:
        return {d: float(c * c) for d, c in zip(self.basis.determinants(), self.coefficients)}


@dataclass
class SolverConfig:
    """Penalty and Davidson settings for subspace diagonalization.

    ``target_spin_s`` of ``None`` means the lowest spin compatible with the
    sector, ``|n_alpha - n_beta| / 2``.
    """

    lambda_penalty: float = 0.2
    target_spin_s: float | None = None
    davidson_tol: float = 1e-7
    max_davidson_iter: int = 500
    max_subspace_vectors: int = 20

    def __post_init__(self):
        if self.lambda_penalty < 0:
            raise ValueError("lambda_penalty must be non-negative")
        if self.target_spin_s is not None and (
            self.target_spin_s < 0 or abs(2 * self.target_spin_s - round(2 * self.target_spin_s)) > 1e-12
        ):
            raise ValueError("target_spin_s must be a non-negative half-integer")
        if self.davidson_tol <= 0 or self.max_davidson_iter < 1 or self.max_subspace_vectors < 3:
            raise ValueError("invalid Davidson settings")

    def spin_for(self, n_alpha: int, n_beta: int) -> float:
        s_min = abs(n_alpha - n_beta) / 2
        s = s_min if self.target_spin_s is None else float(self.target_spin_s)
        if s < s_min - 1e-12 or abs((s - s_min) - round(s - s_min)) > 1e-12:
            raise SectorMismatchError(f"spin s={s} is impossible with Sz={s_min}")
        return s


def one_body_table(strings: Sequence[int], n_orb: int, index: dict[int, int], extended: bool = False):
    """Entries ``<I|a†_p a_q|J> = sign`` for ``J`` in ``strings``.

    With ``extended=False`` only targets ``I`` inside ``index`` are kept. With
    ``extended=True`` every target is kept and new strings are appended to
    ``index``. Diagonal entries (``p == q``) are included.
    """
    rows, cols, pq, signs = [], [], [], []
    for j, mask in enumerate(strings):
        occ = occupied(mask)
        for q in occ:
            base = mask ^ (1 << q)
            for p in range(n_orb):
                if p != q and mask >> p & 1:
                    continue
                target = base | (1 << p)
                i = index.get(target)
                if i is None:
                    if not extended:
                        continue
                    i = index[target] = len(index)
                rows.append(i)
                cols.append(j)
                pq.append(p * n_orb + q)
                signs.append(excitation_sign(mask, p, q))
    return (
        np.asarray(rows, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        np.asarray(pq, dtype=np.int64),
        np.asarray(signs, dtype=float),
    )


def _same_spin_matrix(ham: MolecularHamiltonian, strings: Sequence[int], index: dict[int, int]):
    """Same-spin Hamiltonian block (one-body plus same-spin two-body) on a string pool."""
    n = ham.n_orb
    size = len(strings)
    rows, cols, vals = [], [], []
    diag = np.empty(size)
    # pair filtering beats excitation enumeration when the pool is sparse in string space
    n_exc = max(1, len(occupied(strings[0])) * n) ** 2
    by_pairs = size < n_exc
    arr = np.asarray(strings, dtype=np.uint64)
    for j, mask in enumerate(strings):
        occ = occupied(mask)
        diag[j] = string_diagonal(ham, occ)
        if by_pairs:
            diff = arr[:j] ^ np.uint64(mask)
            candidates = [i for i in np.nonzero(_popcount_u64(diff) <= 4)[0]]
            for i in candidates:
                target = strings[i]
                cre = occupied(target & ~mask)
                ann = occupied(mask & ~target)
                if len(cre) == 1:
                    value = excitation_sign(mask, cre[0], ann[0]) * string_single(ham, occ, cre[0], ann[0])
                else:
                    (a, b), (ii, jj) = cre, ann
                    m1 = (mask ^ (1 << ii)) | (1 << a)
                    sign = excitation_sign(mask, a, ii) * excitation_sign(m1, b, jj)
                    value = sign * string_double(ham, a, ii, b, jj)
                if value != 0.0:
                    rows += [i, j]
                    cols += [j, i]
                    vals += [value, value]
        else:
            for target, sign, rank in string_excitations(mask, n):
                i = index.get(target)
                if i is None or i > j:
                    continue
                if rank == 1:
                    (a,) = occupied(target & ~mask)
                    (ii,) = occupied(mask & ~target)
                    value = sign * string_single(ham, occ, a, ii)
                else:
                    (a, b) = occupied(target & ~mask)
                    (ii, jj) = occupied(mask & ~target)
                    m1 = (mask ^ (1 << ii)) | (1 << a)
                    value = excitation_sign(mask, a, ii) * excitation_sign(m1, b, jj)
                    value *= string_double(ham, a, ii, b, jj)
                if value != 0.0:
                    rows += [i, j]
                    cols += [j, i]
                    vals += [value, value]
    off = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    return (off + sp.diags(diag)).tocsr(), diag


_BYTE_POP = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def _popcount_u64(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.uint64)
    return _BYTE_POP[x.view(np.uint8).reshape(-1, 8)].sum(axis=1)


def _occupation_matrix(strings: Sequence[int], n_orb: int) -> np.ndarray:
    arr = np.asarray(strings, dtype=np.uint64)
    return ((arr[:, None] >> np.arange(n_orb, dtype=np.uint64)) & np.uint64(1)).astype(float)


class SubspaceOperator:
    """Matrix-free projected Hamiltonian and ``S^2`` on a fixed basis.

    Excitation tables depend only on the basis and are built once; the integral
    dependent parts are rebuilt by :meth:`with_hamiltonian`, which is what the
    orbital optimizer uses as the integrals rotate.
    """

    def __init__(self, ham: MolecularHamiltonian, basis: SubspaceBasis, _tables=None):
        if (ham.n_orb, ham.n_alpha, ham.n_beta) != (basis.n_orb, basis.n_alpha, basis.n_beta):
            raise SectorMismatchError(
                f"Hamiltonian sector {(ham.n_orb, ham.n_alpha, ham.n_beta)} does not match "
                f"basis {(basis.n_orb, basis.n_alpha, basis.n_beta)}"
            )
        self.ham = ham
        self.basis = basis
        n = basis.n_orb
        na, nb = basis.shape
        if _tables is None:
            _tables = self._build_tables()
        self._tables = _tables
        self._alpha_chunks, self._beta_gather, self.occ_a, self.occ_b = _tables

        self.a_matrix, diag_a = _same_spin_matrix(ham, basis.alpha_strings, basis._alpha_index)
        self.b_matrix, diag_b = _same_spin_matrix(ham, basis.beta_strings, basis._beta_index)
        self.coulomb = np.ascontiguousarray(ham.eri.reshape(n * n, n * n))
        j_ab = np.einsum("pprr->pr", ham.eri)
        self.h_diagonal = (
            ham.core_energy
            + diag_a[:, None]
            + diag_b[None, :]
            + self.occ_a @ j_ab @ self.occ_b.T
        ).ravel()
        sz = 0.5 * (basis.n_alpha - basis.n_beta)
        self.s2_constant = sz * sz + sz + basis.n_beta
        self.s2_diagonal = (self.s2_constant - self.occ_a @ self.occ_b.T).ravel()

    def _build_tables(self):
        b = self.basis
        n = b.n_orb
        na, nb = b.shape
        ia, ja, pq_a, s_a = one_body_table(b.alpha_strings, n, b._alpha_index)
        ib, jb, rs_b, s_b = one_body_table(b.beta_strings, n, b._beta_index)
        # beta sources of each target string, zero-padded to a common width:
        # X[:, I_b, k] = sign[I_b, k] * C[:, source[I_b, k]] carries pair rs[I_b, k]
        order = np.argsort(ib, kind="stable")
        counts = np.bincount(ib, minlength=nb)
        width = max(1, int(counts.max(initial=0)))
        slot = np.arange(len(ib)) - np.repeat(np.cumsum(counts) - counts, counts)
        source = np.zeros((nb, width), dtype=np.int64)
        pair = np.zeros((nb, width), dtype=np.int64)
        sign = np.zeros((nb, width))
        source[ib[order], slot] = jb[order]
        pair[ib[order], slot] = rs_b[order]
        sign[ib[order], slot] = s_b[order]
        block = max(1, min(nb, 4 * _CHUNK_ELEMENTS // (width * n * n)))
        rows = max(1, min(na, _CHUNK_ELEMENTS // (block * n * n)))
        # sigma[I_a, :] += sign * Y[J_a, pq, :]
        p_alpha = sp.csr_matrix((s_a, (ia, ja * n * n + pq_a)), shape=(na, na * n * n))
        chunks = []
        for start in range(0, na, rows):
            stop = min(na, start + rows)
            chunks.append((start, stop, p_alpha[:, start * n * n: stop * n * n].tocsr()))
        return (
            chunks,
            (source, pair, sign, block),
            _occupation_matrix(b.alpha_strings, n),
            _occupation_matrix(b.beta_strings, n),
        )

    def with_hamiltonian(self, ham: MolecularHamiltonian) -> SubspaceOperator:
        return SubspaceOperator(ham, self.basis, _tables=self._tables)

    @property
    def dimension(self) -> int:
        return self.basis.dimension

    def _opposite_spin(self, c: np.ndarray, h_weight: float, s2_weight: float) -> np.ndarray:
        n = self.basis.n_orb
        na, nb = self.basis.shape
        source, pair, sign, block = self._beta_gather
        # h * (pq|rs) - s2 * [pq == sr]: the S^2 exchange term is a pair swap
        kernel = h_weight * self.coulomb
        if s2_weight:
            kernel = kernel.copy()
            swap = np.arange(n * n).reshape(n, n).T.ravel()
            kernel[np.arange(n * n), swap] -= s2_weight
        out = np.zeros((na, nb))
        for b0 in range(0, nb, block):
            b1 = min(nb, b0 + block)
            gathered = kernel[pair[b0:b1]]  # (B, width, n^2)
            for start, stop, p_alpha in self._alpha_chunks:
                x = c[start:stop][:, source[b0:b1]] * sign[b0:b1]  # (rows, B, width)
                y = np.matmul(x.transpose(1, 0, 2), gathered)  # (B, rows, n^2)
                y = y.transpose(1, 2, 0).reshape((stop - start) * n * n, b1 - b0)
                out[:, b0:b1] += p_alpha @ y
        return out

    def apply(self, v: np.ndarray, h_weight: float = 1.0, s2_weight: float = 0.0, shift: float = 0.0) -> np.ndarray:
        """``(h_weight * H + s2_weight * S^2 + shift) v`` for a flat vector ``v``."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dimension,):
            raise ValueError(f"vector length {v.shape} does not match dimension {self.dimension}")
        c = v.reshape(self.basis.shape)
        out = self._opposite_spin(c, h_weight, s2_weight)
        if h_weight:
            out += h_weight * (self.a_matrix @ c + (self.b_matrix @ c.T).T + self.ham.core_energy * c)
        if s2_weight:
            out += s2_weight * self.s2_constant * c
        if shift:
            out += shift * c
        return out.ravel()

    def hamiltonian(self, v: np.ndarray) -> np.ndarray:
        return self.apply(v)

    def s2(self, v: np.ndarray) -> np.ndarray:
        return self.apply(v, h_weight=0.0, s2_weight=1.0)

    def penalized(self, lam: float, s: float):
        """Matvec for ``H + lam * (S^2 - s(s+1))`` and its diagonal."""
        target = s * (s + 1)

        def matvec(v):
            return self.apply(v, 1.0, lam, -lam * target)

        return matvec, self.h_diagonal + lam * (self.s2_diagonal - target)

    def dense(self, which: str = "h") -> np.ndarray:
        eye = np.eye(self.dimension)
        op = self.hamiltonian if which == "h" else self.s2
        m = np.column_stack([op(e) for e in eye])
        return 0.5 * (m + m.T)


def apply_projected_hamiltonian(ham: MolecularHamiltonian, basis: SubspaceBasis, v: np.ndarray) -> np.ndarray:
    """``H_S v`` for the Hamiltonian projected onto ``basis``."""
    return SubspaceOperator(ham, basis).hamiltonian(v)


def apply_s2(basis: SubspaceBasis, v: np.ndarray) -> np.ndarray:
    """Projected ``S^2`` applied to ``v``."""
    n = basis.n_orb
    dummy = MolecularHamiltonian(np.zeros((n, n)), np.zeros((n,) * 4), 0.0, basis.n_alpha, basis.n_beta)
    return SubspaceOperator(dummy, basis).s2(v)


@dataclass
class SubspaceSolution:
    """Lowest eigenpair of the penalized projected Hamiltonian.

    ``energy`` is ``<psi|H_S|psi>`` (core energy included, penalty excluded);
    ``eigenvalue`` is the penalized Ritz value.
    """

    energy: float
    state: SubspaceState
    s2: float
    eigenvalue: float
    n_iterations: int
    converged: bool
    residual_norm: float
    degenerate: bool = False


def solve_subspace(
    ham: MolecularHamiltonian,
    basis: SubspaceBasis,
    config: SolverConfig | None = None,
    initial_guess: np.ndarray | None = None,
    operator: SubspaceOperator | None = None,
) -> SubspaceSolution:
    """Solve ``(H_S + lam [S^2 - s(s+1)]) psi = E psi`` for the lowest root."""
    config = config or SolverConfig()
    op = operator if operator is not None else SubspaceOperator(ham, basis)
    s = config.spin_for(basis.n_alpha, basis.n_beta)
    matvec, diagonal = op.penalized(config.lambda_penalty, s)
    result: DavidsonResult = davidson_lowest(
        matvec, op.dimension, config, initial_guess=initial_guess, diagonal=diagonal
    )
    vec = result.vector
    energy = float(vec @ op.hamiltonian(vec))
    s2 = float(vec @ op.s2(vec))
    return SubspaceSolution(
        energy=energy,
        state=SubspaceState(basis, vec),
        s2=s2,
        eigenvalue=result.eigenvalue,
        n_iterations=result.n_iterations,
        converged=result.converged,
        residual_norm=result.residual_norm,
        degenerate=result.degenerate,
    )


def compute_rdm1(state: SubspaceState) -> tuple[np.ndarray, np.ndarray]:
    """Per-spin one-body density matrices ``<a†_p a_q>``."""
    basis = state.basis
    n = basis.n_orb
    c = state.matrix
    out = []
    for strings, index, dens in (
        (basis.alpha_strings, basis._alpha_index, c @ c.T),
        (basis.beta_strings, basis._beta_index, c.T @ c),
    ):
        rows, cols, pq, signs = one_body_table(strings, n, index)
        gamma = np.zeros(n * n)
        np.add.at(gamma, pq, signs * dens[rows, cols])
        gamma = gamma.reshape(n, n)
        out.append(0.5 * (gamma + gamma.T))
    return out[0], out[1]


def _same_spin_pair_density(strings, index, n, c: np.ndarray) -> np.ndarray:
    """``<E_pq E_rs>`` summed over the intermediate strings of one spin."""
    ext = dict(index)
    rows, cols, pq, signs = one_body_table(strings, n, ext, extended=True)
    m = len(ext)
    # Q[M, b, rs] = (E_rs psi)[M, b]
    q = np.zeros((m, n * n, c.shape[1]))
    np.add.at(q, (rows, pq), signs[:, None] * c[cols])
    q = q.transpose(0, 2, 1).reshape(-1, n * n)
    g = q.T @ q  # [(q,p), (r,s)] = <E_pq E_rs>
    return g.reshape(n, n, n * n).transpose(1, 0, 2).reshape(n * n, n * n)


def compute_rdm2(state: SubspaceState) -> np.ndarray:
    """Spin-summed two-body density matrix in chemists' order.

    ``rdm2[p, q, r, s] = sum_{st} <a†_{p s} a†_{r t} a_{s t} a_{q s}>`` so that
    ``E = core + sum h * rdm1 + 0.5 * sum (pq|rs) * rdm2``.
    """
    basis = state.basis
    n = basis.n_orb
    na, nb = basis.shape
    c = state.matrix
    gamma_a, gamma_b = compute_rdm1(state)
    gamma = gamma_a + gamma_b

    g_aa = _same_spin_pair_density(basis.alpha_strings, basis._alpha_index, n, c)
    g_bb = _same_spin_pair_density(basis.beta_strings, basis._beta_index, n, c.T)

    ib, jb, rs_b, s_b = one_body_table(basis.beta_strings, n, basis._beta_index)
    ia, ja, pq_a, s_a = one_body_table(basis.alpha_strings, n, basis._alpha_index)
    # X[Ja, Ib, rs] = (E^b_rs psi)[Ja, Ib]
    x = np.zeros((na, nb, n * n))
    np.add.at(x, (slice(None), ib, rs_b), (s_b[None, :] * c[:, jb]))
    # W[Ja, pq, Ib] = (E^a_qp psi)[Ja, Ib]
    w = np.zeros((na, n * n, nb))
    np.add.at(w, (ja, pq_a), s_a[:, None] * c[ia])
    g_ab = np.einsum("jpb,jbr->pr", w, x)  # <E^a_pq E^b_rs>

    g = g_aa + g_bb + g_ab + g_ab.T
    rdm2 = g.reshape(n, n, n, n) - np.einsum("qr,ps->pqrs", np.eye(n), gamma)
    return rdm2


def s2_expectation(state: SubspaceState) -> float:
    v = state.coefficients
    return float(v @ apply_s2(state.basis, v))


def energy_from_rdms(ham: MolecularHamiltonian, rdm1: np.ndarray, rdm2: np.ndarray) -> float:
    return float(ham.core_energy + np.sum(ham.h * rdm1) + 0.5 * np.sum(ham.eri * rdm2))
