"""Dense second-quantized operators on the full Fock space (test oracle).

Modes ``0..n-1`` are spin-up orbitals, ``n..2n-1`` spin-down. Operators are
built from Jordan-Wigner matrices, and determinants are built by applying
creation operators to the vacuum, so nothing here shares code with the
bit-string implementation under test.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np
import scipy.sparse as sp


@lru_cache(maxsize=None)
def annihilators(n_modes: int) -> tuple[sp.csr_matrix, ...]:
    lower = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))  # |0><1|
    z = sp.diags([1.0, -1.0])
    eye = sp.identity(2)
    ops = []
    for j in range(n_modes):
        # mode 0 is the most significant tensor factor
        factors = [z] * j + [lower] + [eye] * (n_modes - j - 1)
        op = factors[0]
        for f in factors[1:]:
            op = sp.kron(op, f, format="csr")
        ops.append(sp.csr_matrix(op))
    return tuple(ops)


def vacuum(n_modes: int) -> np.ndarray:
    v = np.zeros(2**n_modes)
    v[0] = 1.0
    return v


def determinant_vector(alpha_mask: int, beta_mask: int, n_orb: int) -> np.ndarray:
    """``prod (a†_{p up})^x (a†_{p down})^x |0>`` in the alpha-first product order."""
    a = annihilators(2 * n_orb)
    modes = [p for p in range(n_orb) if alpha_mask >> p & 1]
    modes += [n_orb + p for p in range(n_orb) if beta_mask >> p & 1]
    v = vacuum(2 * n_orb)
    for m in reversed(modes):
        v = a[m].T @ v
    return v


def hamiltonian(h: np.ndarray, eri: np.ndarray, core: float) -> sp.csr_matrix:
    n = h.shape[0]
    a = annihilators(2 * n)
    ad = [x.T.tocsr() for x in a]
    dim = 2 ** (2 * n)
    H = core * sp.identity(dim, format="csr")
    for s in (0, n):
        for p, q in product(range(n), repeat=2):
            if h[p, q]:
                H = H + h[p, q] * (ad[p + s] @ a[q + s])
    for s, t in product((0, n), repeat=2):
        for p, q, r, u in product(range(n), repeat=4):
            v = eri[p, q, r, u]
            if v:
                H = H + 0.5 * v * (ad[p + s] @ ad[r + t] @ a[u + t] @ a[q + s])
    return H.tocsr()


def number_ops(n_orb: int) -> tuple[list, list]:
    a = annihilators(2 * n_orb)
    na = [a[p].T @ a[p] for p in range(n_orb)]
    nb = [a[n_orb + p].T @ a[n_orb + p] for p in range(n_orb)]
    return na, nb


def s_squared(n_orb: int) -> sp.csr_matrix:
    a = annihilators(2 * n_orb)
    ad = [x.T.tocsr() for x in a]
    sz = 0.5 * sum(ad[p] @ a[p] - ad[n_orb + p] @ a[n_orb + p] for p in range(n_orb))
    s_plus = sum(ad[p] @ a[n_orb + p] for p in range(n_orb))
    s_minus = s_plus.T
    return (sz @ sz + 0.5 * (s_plus @ s_minus + s_minus @ s_plus)).tocsr()


def one_body(n_orb: int, p: int, q: int, spin: int) -> sp.csr_matrix:
    a = annihilators(2 * n_orb)
    off = 0 if spin == 0 else n_orb
    return (a[p + off].T @ a[q + off]).tocsr()


def sector_states(n_orb: int, n_alpha: int, n_beta: int, dets) -> np.ndarray:
    """Columns are Fock vectors of the given determinants."""
    return np.column_stack([determinant_vector(d.alpha_mask, d.beta_mask, n_orb) for d in dets])
