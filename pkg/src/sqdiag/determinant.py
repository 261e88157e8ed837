"""Slater determinants as pairs of occupation bit masks.

Orbital ``p`` of either spin maps to bit ``p`` of the corresponding mask. All
spin-up operators are ordered before all spin-down operators, and within a spin
block orbitals are ordered by index, so ``a_p`` acting on a string picks up
``(-1)**(number of occupied orbitals below p)``. The Hamiltonian conserves both
spin populations, which lets every phase be computed one spin block at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from sqdiag.exceptions import SectorMismatchError
from sqdiag.integrals import MolecularHamiltonian

MAX_ORBITALS = 64


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def occupied(mask: int) -> list[int]:
    """Indices of the set bits of ``mask`` in ascending order."""
    out = []
    p = 0
    while mask:
        if mask & 1:
            out.append(p)
        mask >>= 1
        p += 1
    return out


def strings_with_weight(n_orb: int, n_elec: int) -> list[int]:
    """All ``n_orb``-bit strings with ``n_elec`` set bits, ascending."""
    return sorted(sum(1 << p for p in occ) for occ in combinations(range(n_orb), n_elec))


def excitation_sign(mask: int, p: int, q: int) -> int:
    """Sign of ``a†_p a_q`` acting on ``mask`` (``q`` occupied, ``p`` empty or ``p == q``)."""
    if p == q:
        return 1
    lo, hi = (p, q) if p < q else (q, p)
    between = mask & (((1 << hi) - 1) ^ ((1 << (lo + 1)) - 1))
    return -1 if popcount(between) & 1 else 1


def mask_to_bits(mask: int, n_orb: int) -> str:
    """Occupation string with orbital 0 leftmost."""
    return "".join("1" if mask >> p & 1 else "0" for p in range(n_orb))


def bits_to_mask(bits: str | Sequence[int]) -> int:
    return sum(1 << p for p, b in enumerate(bits) if int(b))


@dataclass(frozen=True, order=True)
class Determinant:
    """Spin-up and spin-down occupation masks of one Slater determinant."""

    alpha_mask: int
    beta_mask: int

    @property
    def n_alpha(self) -> int:
        return popcount(self.alpha_mask)

    @property
    def n_beta(self) -> int:
        return popcount(self.beta_mask)

    def render(self, n_orb: int) -> str:
        return f"α:{mask_to_bits(self.alpha_mask, n_orb)}|β:{mask_to_bits(self.beta_mask, n_orb)}"

    def to_raw(self, n_orb: int) -> np.ndarray:
        return join_raw(self.alpha_mask, self.beta_mask, n_orb)

    @classmethod
    def hartree_fock(cls, n_alpha: int, n_beta: int) -> Determinant:
        return cls((1 << n_alpha) - 1, (1 << n_beta) - 1)


def check_n_orb(n_orb: int) -> None:
    if not 1 <= n_orb <= MAX_ORBITALS:
        raise ValueError(f"bit masks support 1..{MAX_ORBITALS} orbitals, got {n_orb}")


def split_raw(bits: str | Sequence[int] | np.ndarray) -> tuple[int, int]:
    """Split a raw ``2 * n_orb`` measurement string into (alpha mask, beta mask).

    The first half holds spin-up occupations and the second half spin-down, both
    with orbital 0 first. Hamming weights are not checked.
    """
    if isinstance(bits, str):
        bits = [int(b) for b in bits]
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size == 0 or bits.size % 2:
        raise ValueError(f"raw bit string length must be even and nonzero, got {bits.size}")
    n = bits.size // 2
    check_n_orb(n)
    return bits_to_mask(bits[:n]), bits_to_mask(bits[n:])


def join_raw(alpha_mask: int, beta_mask: int, n_orb: int) -> np.ndarray:
    """Inverse of :func:`split_raw`, as a boolean array of length ``2 * n_orb``."""
    check_n_orb(n_orb)
    out = np.zeros(2 * n_orb, dtype=bool)
    for p in range(n_orb):
        out[p] = alpha_mask >> p & 1
        out[n_orb + p] = beta_mask >> p & 1
    return out


# ---------------------------------------------------------------------------
# single-spin string rules (shared by the determinant and subspace code)


def string_diagonal(ham: MolecularHamiltonian, occ: Sequence[int]) -> float:
    """One-body plus same-spin two-body energy of an occupied list."""
    h, eri = ham.h, ham.eri
    value = sum(h[i, i] for i in occ)
    for x, i in enumerate(occ):
        for j in occ[x + 1:]:
            value += eri[i, i, j, j] - eri[i, j, j, i]
    return value


def string_single(ham: MolecularHamiltonian, occ: Sequence[int], a: int, i: int) -> float:
    """Same-spin part of ``<...a...|H|...i...>`` without the phase.

    ``occ`` is the occupation of the ket string (containing ``i``). Opposite-spin
    Coulomb contributions are handled by the caller.
    """
    h, eri = ham.h, ham.eri
    value = h[a, i]
    for j in occ:
        if j != i:
            value += eri[a, i, j, j] - eri[a, j, j, i]
    return value


def string_double(ham: MolecularHamiltonian, a: int, i: int, b: int, j: int) -> float:
    """Antisymmetrized ``(ai|bj) - (aj|bi)`` for a same-spin double excitation."""
    return ham.eri[a, i, b, j] - ham.eri[a, j, b, i]


def string_excitations(mask: int, n_orb: int) -> Iterable[tuple[int, int, int]]:
    """Yield ``(new_mask, sign, rank)`` for all single and double excitations of ``mask``."""
    occ = occupied(mask)
    virt = [p for p in range(n_orb) if not mask >> p & 1]
    for i in occ:
        for a in virt:
            yield (mask ^ (1 << i)) | (1 << a), excitation_sign(mask, a, i), 1
    for i, j in combinations(occ, 2):
        for a, b in combinations(virt, 2):
            m1 = (mask ^ (1 << i)) | (1 << a)
            sign = excitation_sign(mask, a, i)
            m2 = (m1 ^ (1 << j)) | (1 << b)
            sign *= excitation_sign(m1, b, j)
            yield m2, sign, 2


def _diff(m1: int, m2: int) -> tuple[list[int], list[int]]:
    """Orbitals occupied only in ``m1`` (creations) and only in ``m2`` (annihilations)."""
    return occupied(m1 & ~m2), occupied(m2 & ~m1)


def _check_sector(d1: Determinant, d2: Determinant) -> None:
    if d1.n_alpha != d2.n_alpha or d1.n_beta != d2.n_beta:
        raise SectorMismatchError(
            f"determinants in different sectors: ({d1.n_alpha},{d1.n_beta}) vs ({d2.n_alpha},{d2.n_beta})"
        )


def slater_condon_element(ham: MolecularHamiltonian, d1: Determinant, d2: Determinant) -> float:
    """``<d1|H|d2>`` including the constant core energy on the diagonal."""
    _check_sector(d1, d2)
    cre_a, ann_a = _diff(d1.alpha_mask, d2.alpha_mask)
    cre_b, ann_b = _diff(d1.beta_mask, d2.beta_mask)
    n_diff = len(cre_a) + len(cre_b)
    if n_diff > 2:
        return 0.0
    eri = ham.eri
    occ_a = occupied(d2.alpha_mask)
    occ_b = occupied(d2.beta_mask)

    if n_diff == 0:
        value = ham.core_energy + string_diagonal(ham, occ_a) + string_diagonal(ham, occ_b)
        for i in occ_a:
            for j in occ_b:
                value += eri[i, i, j, j]
        return float(value)

    if n_diff == 1:
        if cre_a:
            (a,), (i,) = cre_a, ann_a
            same, other, mask = occ_a, occ_b, d2.alpha_mask
        else:
            (a,), (i,) = cre_b, ann_b
            same, other, mask = occ_b, occ_a, d2.beta_mask
        value = string_single(ham, same, a, i) + sum(eri[a, i, j, j] for j in other)
        return float(excitation_sign(mask, a, i) * value)

    if len(cre_a) == 1:
        (a,), (i,) = cre_a, ann_a
        (b,), (j,) = cre_b, ann_b
        sign = excitation_sign(d2.alpha_mask, a, i) * excitation_sign(d2.beta_mask, b, j)
        return float(sign * eri[a, i, b, j])

    cre, ann, mask = (cre_a, ann_a, d2.alpha_mask) if cre_a else (cre_b, ann_b, d2.beta_mask)
    (a, b), (i, j) = cre, ann
    m1 = (mask ^ (1 << i)) | (1 << a)
    sign = excitation_sign(mask, a, i) * excitation_sign(m1, b, j)
    return float(sign * string_double(ham, a, i, b, j))


def s2_diagonal(alpha_mask: int, beta_mask: int) -> float:
    n_a, n_b = popcount(alpha_mask), popcount(beta_mask)
    sz = 0.5 * (n_a - n_b)
    return sz * sz + sz + n_b - popcount(alpha_mask & beta_mask)


def s2_element(d1: Determinant, d2: Determinant) -> float:
    """``<d1|S^2|d2>`` with ``S^2 = Sz^2 + Sz + S-S+``."""
    _check_sector(d1, d2)
    if d1 == d2:
        return float(s2_diagonal(d1.alpha_mask, d1.beta_mask))
    cre_a, ann_a = _diff(d1.alpha_mask, d2.alpha_mask)
    cre_b, ann_b = _diff(d1.beta_mask, d2.beta_mask)
    if len(cre_a) != 1 or len(cre_b) != 1:
        return 0.0
    (q,), (p,) = cre_a, ann_a
    (p2,), (q2,) = cre_b, ann_b
    if p != p2 or q != q2:
        return 0.0
    # S-S+ off-diagonal term: -sum_{p != q} E^a_{qp} E^b_{pq}
    sign = excitation_sign(d2.alpha_mask, q, p) * excitation_sign(d2.beta_mask, p, q)
    return float(-sign)


def enumerate_connected(d: Determinant, n_orb: int, include_self: bool = False) -> list[Determinant]:
    """All determinants reachable from ``d`` by spin-preserving singles and doubles."""
    check_n_orb(n_orb)
    out = [d] if include_self else []
    alpha_ex = [(m, r) for m, _, r in string_excitations(d.alpha_mask, n_orb)]
    beta_ex = [(m, r) for m, _, r in string_excitations(d.beta_mask, n_orb)]
    out.extend(Determinant(m, d.beta_mask) for m, _ in alpha_ex)
    out.extend(Determinant(d.alpha_mask, m) for m, _ in beta_ex)
    singles_a = [m for m, r in alpha_ex if r == 1]
    singles_b = [m for m, r in beta_ex if r == 1]
    out.extend(Determinant(ma, mb) for ma in singles_a for mb in singles_b)
    return out
