"""LUCJ ansatz construction, exact statevector simulation and noisy sampling.

The ansatz is built from cluster amplitudes by factorizing the doubles into
layers ``exp(K) exp(iJ) exp(-K)``: each layer diagonalizes one eigenmode of the
amplitude matrix, ``K`` is the orbital rotation to the eigenbasis and ``J`` a
density-density coupling between spin-orbitals. Couplings between
spin-orbitals that are not connected on the device are zeroed.

Spin-orbitals are indexed ``0..n-1`` for spin-up and ``n..2n-1`` for spin-down
in every ``2n x 2n`` array.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np
import scipy.linalg

from sqdiag.determinant import mask_to_bits, popcount
from sqdiag.exceptions import AmplitudeFileError, ResourceLimitError
from sqdiag.integrals import MolecularHamiltonian, fock_diagonal
from sqdiag.oracle import MAX_CAS_DIMENSION
from sqdiag.subspace import SubspaceBasis, one_body_table

DENOMINATOR_TOL = 1e-8
# eigenmodes of the amplitude matrix below this weight produce empty layers
_MODE_TOL = 1e-14


@dataclass(frozen=True)
class Amplitudes:
    """Single and double cluster amplitudes in spin blocks.

    Occupied orbitals are the lowest ``n_alpha`` (``n_beta``) of each spin and
    virtual indices count from the first empty orbital. ``t2ab[i, j, a, b]``
    couples an up-spin excitation ``i -> a`` with a down-spin ``j -> b``; the
    same-spin blocks are antisymmetric in ``(i, j)`` and in ``(a, b)``.

    Use :meth:`from_restricted` for closed-shell amplitudes ``t1[i, a]`` and
    ``t2[i, j, a, b]``.
    """

    n_orb: int
    n_alpha: int
    n_beta: int
    t1a: np.ndarray
    t1b: np.ndarray
    t2aa: np.ndarray
    t2ab: np.ndarray
    t2bb: np.ndarray
    restricted: bool = False

    def __post_init__(self):
        na, nb = self.n_alpha, self.n_beta
        va, vb = self.n_orb - na, self.n_orb - nb
        expected = {
            "t1a": (na, va),
            "t1b": (nb, vb),
            "t2aa": (na, na, va, va),
            "t2ab": (na, nb, va, vb),
            "t2bb": (nb, nb, vb, vb),
        }
        for name, shape in expected.items():
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != int(np.prod(shape)):
                raise ValueError(f"{name} has {arr.size} entries, expected shape {shape}")
            arr = arr.reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.restricted and na != nb:
            raise ValueError("restricted amplitudes need n_alpha == n_beta")

    @classmethod
    def from_restricted(cls, t1: np.ndarray, t2: np.ndarray, n_orb: int) -> Amplitudes:
        t1 = np.asarray(t1, dtype=float)
        t2 = np.asarray(t2, dtype=float)
        n_occ = t2.shape[0]
        if t2.ndim != 4 or t1.shape != (n_occ, n_orb - n_occ):
            raise ValueError(f"inconsistent restricted amplitude shapes {t1.shape}, {t2.shape}")
        if not np.allclose(t2, t2.transpose(1, 0, 3, 2), rtol=0, atol=1e-10):
            raise ValueError("restricted t2 must satisfy t2[i,j,a,b] == t2[j,i,b,a]")
        t2aa = t2 - t2.transpose(0, 1, 3, 2)
        return cls(n_orb, n_occ, n_occ, t1, t1, t2aa, t2, t2aa, restricted=True)

    @classmethod
    def zeros(cls, n_orb: int, n_alpha: int, n_beta: int) -> Amplitudes:
        va, vb = n_orb - n_alpha, n_orb - n_beta
        if n_alpha == n_beta:
            return cls.from_restricted(np.zeros((n_alpha, va)), np.zeros((n_alpha,) * 2 + (va,) * 2), n_orb)
        return cls(
            n_orb, n_alpha, n_beta,
            np.zeros((n_alpha, va)), np.zeros((n_beta, vb)),
            np.zeros((n_alpha, n_alpha, va, va)), np.zeros((n_alpha, n_beta, va, vb)),
            np.zeros((n_beta, n_beta, vb, vb)),
        )

    @property
    def t1(self) -> np.ndarray:
        return self.t1a

    @property
    def t2(self) -> np.ndarray:
        """Closed-shell ``t2[i, j, a, b]`` (the opposite-spin block)."""
        return self.t2ab


@dataclass(frozen=True)
class LucjParameters:
    """Layered LUCJ parameters.

    Attributes:
        k: Orbital-rotation generators, shape ``(n_layers, 2, n, n)`` (per
            spin, real antisymmetric).
        j: Density-density couplings, shape ``(n_layers, 2n, 2n)``, symmetric
            and zero outside ``connectivity_mask``.
        connectivity_mask: Allowed couplings between spin-orbitals.
        final_orbital_rotation: Generator applied after all layers, shape
            ``(2, n, n)``.
        mode_weights: Eigenvalue of the amplitude matrix behind each layer.
        restricted: Whether the layers came from spin-restricted amplitudes
            (both spins then share every rotation).
    """

    k: np.ndarray
    j: np.ndarray
    connectivity_mask: np.ndarray
    final_orbital_rotation: np.ndarray
    mode_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    restricted: bool = False

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        j = np.asarray(self.j, dtype=float)
        mask = np.asarray(self.connectivity_mask, dtype=bool)
        n = mask.shape[0] // 2
        if k.ndim != 4 or k.shape[1:] != (2, n, n) or j.shape != (k.shape[0], 2 * n, 2 * n):
            raise ValueError("inconsistent LUCJ parameter shapes")
        if not np.allclose(k, -k.transpose(0, 1, 3, 2), rtol=0, atol=1e-12):
            raise ValueError("orbital-rotation generators must be antisymmetric")
        if not np.allclose(j, j.transpose(0, 2, 1), rtol=0, atol=1e-12):
            raise ValueError("Jastrow couplings must be symmetric")
        if np.any(j[:, ~mask]):
            raise ValueError("Jastrow couplings outside the connectivity mask must be zero")

    @property
    def n_layers(self) -> int:
        return self.k.shape[0]

    @property
    def n_orb(self) -> int:
        return self.connectivity_mask.shape[0] // 2


# ---------------------------------------------------------------------------
# amplitudes


def mp2_amplitudes(ham: MolecularHamiltonian, orbital_energies=None) -> Amplitudes:
    """First-order doubles ``t2 = (ia|jb) / (e_i + e_j - e_a - e_b)``; singles are zero.

    Args:
        ham: Hamiltonian in canonical (or near-canonical) orbitals.
        orbital_energies: Orbital energies, one array for both spins or a pair
            ``(up, down)``. Defaults to the diagonal Fock elements of the aufbau
            determinant, which for an open shell gives a spin-unrestricted
            first-order guess.

    Raises:
        ValueError: If any denominator is smaller than ``1e-8`` in magnitude.
    """
    n, na, nb = ham.n_orb, ham.n_alpha, ham.n_beta
    if orbital_energies is None:
        e_a, e_b = fock_diagonal(ham)
    elif isinstance(orbital_energies, tuple):
        e_a, e_b = (np.asarray(e, dtype=float) for e in orbital_energies)
    else:
        e_a = e_b = np.asarray(orbital_energies, dtype=float)
    if e_a.shape != (n,) or e_b.shape != (n,):
        raise ValueError(f"orbital energies must have length {n}")
    eri = ham.eri

    def block(e1, n1, e2, n2):
        occ1, vir1 = slice(0, n1), slice(n1, n)
        occ2, vir2 = slice(0, n2), slice(n2, n)
        denom = (
            e1[occ1, None, None, None] + e2[None, occ2, None, None]
            - e1[None, None, vir1, None] - e2[None, None, None, vir2]
        )
        if denom.size and np.min(np.abs(denom)) < DENOMINATOR_TOL:
            raise ValueError("near-zero perturbative denominator; supply external amplitudes")
        # (ia|jb) -> [i, j, a, b]
        return eri[occ1, vir1, occ2, vir2].transpose(0, 2, 1, 3) / denom

    t2ab = block(e_a, na, e_b, nb)
    if na == nb and np.array_equal(e_a, e_b):
        return Amplitudes.from_restricted(np.zeros((na, n - na)), t2ab, n)
    t2aa = block(e_a, na, e_a, na)
    t2bb = block(e_b, nb, e_b, nb)
    return Amplitudes(
        n, na, nb,
        np.zeros((na, n - na)), np.zeros((nb, n - nb)),
        t2aa - t2aa.transpose(0, 1, 3, 2), t2ab, t2bb - t2bb.transpose(0, 1, 3, 2),
    )


_ARRAY_KEYS = {
    True: ("t1", "t2"),
    False: ("t1a", "t1b", "t2aa", "t2ab", "t2bb"),
}


def write_amplitudes(amps: Amplitudes, stream: TextIO | None = None) -> str:
    """Serialize amplitudes to the key-value text layout read by :func:`load_amplitudes`.

    The file holds scalar lines ``key value`` followed by array blocks, each a
    line ``name d1 d2 ...`` and then the values in C order, several per line.
    """
    lines = [
        "# sqdiag amplitudes",
        f"kind {'restricted' if amps.restricted else 'unrestricted'}",
        f"n_orb {amps.n_orb}",
        f"n_alpha {amps.n_alpha}",
        f"n_beta {amps.n_beta}",
    ]
    for key in _ARRAY_KEYS[amps.restricted]:
        arr = getattr(amps, key)
        lines.append(f"{key} " + " ".join(str(d) for d in arr.shape))
        flat = arr.ravel()
        for start in range(0, flat.size, 4):
            lines.append(" ".join(f"{v: .17e}" for v in flat[start:start + 4]))
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def save_amplitudes(amps: Amplitudes, path) -> None:
    Path(path).write_text(write_amplitudes(amps))


def parse_amplitudes(text: str) -> Amplitudes:
    scalars: dict[str, str] = {}
    arrays: dict[str, tuple[tuple[int, ...], list[float]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if re.match(r"[A-Za-z_]", tokens[0]):
            key = tokens[0]
            if key in _ARRAY_KEYS[True] + _ARRAY_KEYS[False]:
                try:
                    shape = tuple(int(t) for t in tokens[1:])
                except ValueError:
                    raise AmplitudeFileError(f"line {lineno}: bad shape for {key}") from None
                arrays[key] = (shape, [])
                current = key
            elif len(tokens) == 2:
                scalars[key] = tokens[1]
                current = None
            else:
                raise AmplitudeFileError(f"line {lineno}: cannot parse {raw!r}")
            continue
        if current is None:
            raise AmplitudeFileError(f"line {lineno}: values outside an array block")
        try:
            arrays[current][1].extend(float(t) for t in tokens)
        except ValueError:
            raise AmplitudeFileError(f"line {lineno}: non-numeric value") from None

    for key in ("kind", "n_orb", "n_alpha", "n_beta"):
        if key not in scalars:
            raise AmplitudeFileError(f"missing key {key!r}")
    if scalars["kind"] not in ("restricted", "unrestricted"):
        raise AmplitudeFileError(f"unknown kind {scalars['kind']!r}")
    restricted = scalars["kind"] == "restricted"
    try:
        n, na, nb = (int(scalars[k]) for k in ("n_orb", "n_alpha", "n_beta"))
    except ValueError:
        raise AmplitudeFileError("orbital and electron counts must be integers") from None
    va, vb = n - na, n - nb
    expected = {
        "t1": (na, va), "t2": (na, na, va, va),
        "t1a": (na, va), "t1b": (nb, vb), "t2aa": (na, na, va, va),
        "t2ab": (na, nb, va, vb), "t2bb": (nb, nb, vb, vb),
    }
    values = {}
    for key in _ARRAY_KEYS[restricted]:
        if key not in arrays:
            raise AmplitudeFileError(f"missing array {key!r}")
        shape, data = arrays[key]
        if shape != expected[key]:
            raise AmplitudeFileError(f"{key} declared shape {shape}, expected {expected[key]}")
        if len(data) != int(np.prod(shape)):
            raise AmplitudeFileError(f"{key} has {len(data)} values, shape {shape} needs {int(np.prod(shape))}")
        values[key] = np.array(data).reshape(shape)
    if restricted:
        if na != nb:
            raise AmplitudeFileError("restricted amplitudes need n_alpha == n_beta")
        return Amplitudes.from_restricted(values["t1"], values["t2"], n)
    return Amplitudes(n, na, nb, **values)


def load_amplitudes(source) -> Amplitudes:
    """Read amplitudes from a path or an open text stream."""
    if hasattr(source, "read"):
        return parse_amplitudes(source.read())
    return parse_amplitudes(Path(source).read_text())


# ---------------------------------------------------------------------------
# LUCJ construction


def connectivity_mask(n_orb: int, preset: str = "all-to-all") -> np.ndarray:
    """Boolean ``2n x 2n`` coupling mask for a named preset.

    ``"all-to-all"`` allows every pair. ``"line"`` allows same-spin neighbors
    ``|p - q| <= 1`` (including ``p == q``). ``"line+bridge(k)"`` adds the
    opposite-spin pairs ``(p up, p down)`` for every ``p`` divisible by ``k``.
    """
    n = n_orb
    if preset == "all-to-all":
        return np.ones((2 * n, 2 * n), dtype=bool)
    match = re.fullmatch(r"line(?:\+bridge\((\d+)\))?", preset.replace(" ", ""))
    if not match:
        raise ValueError(f"unknown connectivity preset {preset!r}")
    idx = np.arange(n)
    line = np.abs(idx[:, None] - idx[None, :]) <= 1
    mask = np.zeros((2 * n, 2 * n), dtype=bool)
    mask[:n, :n] = line
    mask[n:, n:] = line
    if match.group(1) is not None:
        k = int(match.group(1))
        if k < 1:
            raise ValueError("bridge spacing must be positive")
        for p in range(0, n, k):
            mask[p, n + p] = mask[n + p, p] = True
    return mask


def _real_log_orthogonal(w: np.ndarray) -> np.ndarray:
    """Real antisymmetric ``K`` with ``expm(K) == w`` for a proper rotation ``w``."""
    t, z = scipy.linalg.schur(w, output="real")
    n = w.shape[0]
    log = np.zeros((n, n))
    minus = []
    k = 0
    while k < n:
        if k + 1 < n and abs(t[k + 1, k]) > 1e-12:
            theta = np.arctan2(t[k + 1, k], t[k, k])
            log[k, k + 1], log[k + 1, k] = -theta, theta
            k += 2
            continue
        if t[k, k] < 0:
            minus.append(k)
        k += 1
    # eigenvalues -1 come in pairs for det = +1; each pair is a rotation by pi
    for a, b in zip(minus[::2], minus[1::2]):
        log[a, b], log[b, a] = -np.pi, np.pi
    k_mat = z @ log @ z.T
    k_mat = 0.5 * (k_mat - k_mat.T)
    if not np.allclose(scipy.linalg.expm(k_mat), w, rtol=0, atol=1e-10):
        raise ArithmeticError("failed to take the logarithm of an orbital rotation")
    return k_mat


def _rotation_for_mode(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-rotation generator and eigenvalues of a symmetric one-body matrix."""
    d, w = np.linalg.eigh(m)
    if np.linalg.det(w) < 0:
        w[:, 0] = -w[:, 0]
    return _real_log_orthogonal(w), d


def _amplitude_matrix(amps: Amplitudes) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Symmetric matrix of doubles over composite excitation indices.

    Returns the matrix and, per spin block, ``(offset, n_occ, n_virt)``. For
    restricted amplitudes a single spatial block is used.
    """
    n = amps.n_orb
    if amps.restricted:
        no, nv = amps.n_alpha, n - amps.n_alpha
        t = amps.t2ab.transpose(0, 2, 1, 3).reshape(no * nv, no * nv)
        return 0.5 * (t + t.T), [(0, no, nv)]
    na, nb = amps.n_alpha, amps.n_beta
    va, vb = n - na, n - nb
    sa, sb = na * va, nb * vb
    t = np.zeros((sa + sb, sa + sb))
    t[:sa, :sa] = 0.5 * amps.t2aa.transpose(0, 2, 1, 3).reshape(sa, sa)
    t[sa:, sa:] = 0.5 * amps.t2bb.transpose(0, 2, 1, 3).reshape(sb, sb)
    t[:sa, sa:] = amps.t2ab.transpose(0, 2, 1, 3).reshape(sa, sb)
    t[sa:, :sa] = t[:sa, sa:].T
    return 0.5 * (t + t.T), [(0, na, va), (sa, nb, vb)]


def _one_body_from_mode(v: np.ndarray, offset: int, n_occ: int, n_virt: int, n: int) -> np.ndarray:
    x = v[offset:offset + n_occ * n_virt].reshape(n_occ, n_virt)
    m = np.zeros((n, n))
    m[:n_occ, n_occ:] = x
    m[n_occ:, :n_occ] = x.T
    return m


def build_lucj(amps: Amplitudes, n_layers: int = 2, mask: np.ndarray | str = "all-to-all") -> LucjParameters:
    """Factorize the doubles into ``n_layers`` LUCJ layers.

    The amplitude matrix ``T[(i,a),(j,b)] = t2[i,j,a,b]`` is diagonalized and
    its ``n_layers`` modes of largest ``|sigma|`` kept. Mode ``v`` defines a
    symmetric one-body matrix ``M`` (``M[i,a] = M[a,i] = v[i,a]``); diagonalizing
    ``M = W diag(d) W^T`` gives ``K = log W`` and ``J[p,q] = sigma d_p d_q``,
    after which couplings outside the mask are zeroed. The singles become the
    final orbital rotation ``K[a,i] = t1[i,a] = -K[i,a]``.

    Raises:
        ValueError: If ``n_layers`` is below 1 or exceeds the number of
            eigenmodes of ``T``.
    """
    n = amps.n_orb
    if isinstance(mask, str):
        mask = connectivity_mask(n, mask)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (2 * n, 2 * n) or not np.array_equal(mask, mask.T):
        raise ValueError(f"connectivity mask must be a symmetric {(2 * n, 2 * n)} boolean array")
    t, blocks = _amplitude_matrix(amps)
    if n_layers < 1 or n_layers > t.shape[0]:
        raise ValueError(f"n_layers must be between 1 and {t.shape[0]}, got {n_layers}")

    sigma, vecs = np.linalg.eigh(t)
    order = np.argsort(-np.abs(sigma), kind="stable")[:n_layers]
    ks = np.zeros((n_layers, 2, n, n))
    js = np.zeros((n_layers, 2 * n, 2 * n))
    scale = max(1.0, float(np.max(np.abs(sigma)))) if sigma.size else 1.0
    for layer, idx in enumerate(order):
        s = sigma[idx]
        if abs(s) <= _MODE_TOL * scale:
            continue
        v = vecs[:, idx]
        d = np.zeros(2 * n)
        if len(blocks) == 1:
            k, dd = _rotation_for_mode(_one_body_from_mode(v, *blocks[0], n))
            ks[layer] = k
            d[:n] = d[n:] = dd
        else:
            for spin, blk in enumerate(blocks):
                k, dd = _rotation_for_mode(_one_body_from_mode(v, *blk, n))
                ks[layer, spin] = k
                d[spin * n:(spin + 1) * n] = dd
        js[layer] = np.where(mask, s * np.outer(d, d), 0.0)
    final = np.zeros((2, n, n))
    for spin, (t1, n_occ) in enumerate(((amps.t1a, amps.n_alpha), (amps.t1b, amps.n_beta))):
        final[spin, n_occ:, :n_occ] = t1.T
        final[spin, :n_occ, n_occ:] = -t1
    return LucjParameters(ks, js, mask, final, sigma[order], amps.restricted)


def reconstruct_t2(params: LucjParameters, n_alpha: int, n_beta: int) -> dict[str, np.ndarray]:
    """Doubles implied by the layer parameters (inverse of :func:`build_lucj`).

    Returns the blocks ``"ab"``, ``"aa"`` and ``"bb"`` as ``[i, j, a, b]``
    arrays, where ``t2[i,j,a,b] = sum_pq W_ip W_ap J_pq W_jq W_bq`` with the
    appropriate spin block of ``J``. For restricted input ``"ab"`` is the
    closed-shell ``t2``.
    """
    n = params.n_orb

    def block(s1, s2, n1, n2):
        total = np.zeros((n1, n2, n - n1, n - n2))
        for layer in range(params.n_layers):
            w1 = scipy.linalg.expm(params.k[layer, s1])
            w2 = scipy.linalg.expm(params.k[layer, s2])
            jb = params.j[layer, s1 * n:(s1 + 1) * n, s2 * n:(s2 + 1) * n]
            total += np.einsum("ip,ap,pq,jq,bq->ijab", w1[:n1], w1[n1:], jb, w2[:n2], w2[n2:], optimize=True)
        return total

    ab = block(0, 1, n_alpha, n_beta)
    if params.restricted:
        aa = ab - ab.transpose(0, 1, 3, 2)
        return {"ab": ab, "aa": aa, "bb": aa}
    # same-spin composite blocks carry half the amplitude
    return {"ab": ab, "aa": 2.0 * block(0, 0, n_alpha, n_alpha), "bb": 2.0 * block(1, 1, n_beta, n_beta)}


def eigen_tail_norm(amps: Amplitudes, n_layers: int) -> float:
    """Frobenius norm of the amplitude-matrix modes dropped at ``n_layers``."""
    sigma = np.linalg.eigvalsh(_amplitude_matrix(amps)[0])
    tail = np.sort(np.abs(sigma))[::-1][n_layers:]
    return float(np.sqrt(np.sum(tail**2)))


def amplitude_matrix_norm_error(amps: Amplitudes, params: LucjParameters) -> float:
    """``||T - T_rebuilt||_F`` over the composite excitation matrix."""
    rebuilt = reconstruct_t2(params, amps.n_alpha, amps.n_beta)
    if amps.restricted:
        return float(np.linalg.norm(rebuilt["ab"] - amps.t2ab))
    # composite blocks carry 1/2 on the same-spin parts and appear twice off-diagonal
    err = 0.25 * np.sum((rebuilt["aa"] - amps.t2aa) ** 2) + 0.25 * np.sum((rebuilt["bb"] - amps.t2bb) ** 2)
    err += 2.0 * np.sum((rebuilt["ab"] - amps.t2ab) ** 2)
    return float(np.sqrt(err))


# ---------------------------------------------------------------------------
# statevector simulation


@dataclass(frozen=True)
class Statevector:
    """Complex amplitudes over the full CAS basis (row-major, alpha outer)."""

    basis: SubspaceBasis
    amplitudes: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()


def _string_generator(strings: tuple[int, ...], n_orb: int, k: np.ndarray) -> np.ndarray:
    """Dense matrix of ``sum_pq K[p, q] a†_p a_q`` on one spin's strings."""
    index = {s: i for i, s in enumerate(strings)}
    rows, cols, pq, signs = one_body_table(strings, n_orb, index)
    g = np.zeros((len(strings), len(strings)))
    np.add.at(g, (rows, cols), signs * k.ravel()[pq])
    return g


def orbital_rotation_operator(strings: tuple[int, ...], n_orb: int, k: np.ndarray) -> np.ndarray:
    """String-space matrix of the orbital rotation ``a†_p -> sum_q expm(K)[q, p] a†_q``."""
    if not np.any(k):
        return np.eye(len(strings))
    return scipy.linalg.expm(_string_generator(strings, n_orb, k))


def _occupations(strings: tuple[int, ...], n_orb: int) -> np.ndarray:
    return np.array([[s >> p & 1 for p in range(n_orb)] for s in strings], dtype=float)


def simulate_lucj_state(
    params: LucjParameters,
    n_orb: int,
    n_alpha: int,
    n_beta: int,
    reference: tuple[int, int] | None = None,
    max_dimension: int = MAX_CAS_DIMENSION,
) -> Statevector:
    """Exact LUCJ state in the ``(n_alpha, n_beta)`` sector.

    Starting from the reference determinant (the lowest orbitals by default),
    each layer applies ``exp(-K)``, the diagonal phase ``exp(i sum J n n)`` and
    ``exp(K)``; the final orbital rotation is applied last.
    """
    if params.n_orb != n_orb:
        raise ValueError(f"parameters are for {params.n_orb} orbitals, not {n_orb}")
    basis = SubspaceBasis.full(n_orb, n_alpha, n_beta)
    if basis.dimension > max_dimension:
        raise ResourceLimitError(f"CAS dimension {basis.dimension} exceeds {max_dimension}")
    ref_a, ref_b = reference or ((1 << n_alpha) - 1, (1 << n_beta) - 1)
    if popcount(ref_a) != n_alpha or popcount(ref_b) != n_beta:
        raise ValueError("reference determinant is not in the requested sector")
    alpha, beta = basis.alpha_strings, basis.beta_strings
    c = np.zeros(basis.shape, dtype=complex)
    c[alpha.index(ref_a), beta.index(ref_b)] = 1.0

    occ = np.concatenate(
        [np.repeat(_occupations(alpha, n_orb), len(beta), axis=0),
         np.tile(_occupations(beta, n_orb), (len(alpha), 1))],
        axis=1,
    )

    def rotate(c, k_pair):
        ua = orbital_rotation_operator(alpha, n_orb, k_pair[0])
        ub = orbital_rotation_operator(beta, n_orb, k_pair[1])
        return ua @ c @ ub.T

    for layer in range(params.n_layers):
        k = params.k[layer]
        c = rotate(c, -k)
        phase = np.einsum("xp,pq,xq->x", occ, params.j[layer], occ)
        c = c * np.exp(1j * phase).reshape(basis.shape)
        c = rotate(c, k)
    c = rotate(c, params.final_orbital_rotation)
    return Statevector(basis, c.ravel())


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class NoiseModel:
    """Independent bit flips applied to every measured bit."""

    bit_flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.bit_flip_prob < 0.5:
            raise ValueError("bit_flip_prob must lie in [0, 0.5)")


@dataclass(frozen=True)
class SampleSet:
    """Multiset of raw measurement strings (up-spin half, then down-spin half)."""

    counts: dict[str, int]

    def __post_init__(self):
        counts = dict(sorted(self.counts.items()))
        lengths = {len(b) for b in counts}
        if len(lengths) > 1:
            raise ValueError("all bit strings must have the same length")
        for bits, count in counts.items():
            if not bits or len(bits) % 2 or set(bits) - {"0", "1"}:
                raise ValueError(f"invalid bit string {bits!r}")
            if int(count) < 1:
                raise ValueError(f"count for {bits} must be positive")
        object.__setattr__(self, "counts", {b: int(c) for b, c in counts.items()})

    @property
    def total_shots(self) -> int:
        return sum(self.counts.values())

    @property
    def n_orb(self) -> int:
        return len(next(iter(self.counts))) // 2 if self.counts else 0

    def __len__(self) -> int:
        return len(self.counts)

    def to_masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(alpha_masks, beta_masks, counts)`` as arrays in sorted-key order."""
        n = self.n_orb
        weights = 1 << np.arange(n, dtype=np.uint64)
        bits = np.array([[c == "1" for c in b] for b in self.counts], dtype=np.uint64).reshape(-1, 2 * n)
        alpha = (bits[:, :n] * weights).sum(axis=1).astype(np.uint64)
        beta = (bits[:, n:] * weights).sum(axis=1).astype(np.uint64)
        return alpha, beta, np.fromiter(self.counts.values(), dtype=np.int64, count=len(self.counts))


def sample(state: Statevector, shots: int, noise: NoiseModel | None = None) -> SampleSet:
    """Measure ``state`` ``shots`` times and pass each outcome through ``noise``.

    Outcomes are drawn by inverse CDF from uniforms of a counter-based
    generator seeded with ``noise.seed``; bit flips use an independent stream.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    noise = noise or NoiseModel()
    basis = state.basis
    n = basis.n_orb
    draw_seq, flip_seq = np.random.SeedSequence(noise.seed).spawn(2)
    draw_rng = np.random.Generator(np.random.Philox(draw_seq))
    cdf = np.cumsum(state.probabilities)
    idx = np.minimum(np.searchsorted(cdf, draw_rng.random(shots), side="right"), cdf.size - 1)

    n_beta_strings = len(basis.beta_strings)
    alpha = np.asarray(basis.alpha_strings, dtype=np.uint64)[idx // n_beta_strings]
    beta = np.asarray(basis.beta_strings, dtype=np.uint64)[idx % n_beta_strings]
    shifts = np.arange(n, dtype=np.uint64)
    bits = np.concatenate(
        [(alpha[:, None] >> shifts) & np.uint64(1), (beta[:, None] >> shifts) & np.uint64(1)], axis=1
    ).astype(bool)
    if noise.bit_flip_prob > 0:
        flip_rng = np.random.Generator(np.random.Philox(flip_seq))
        bits ^= flip_rng.random(bits.shape) < noise.bit_flip_prob
    rows, counts = np.unique(bits, axis=0, return_counts=True)
    return SampleSet({"".join("1" if b else "0" for b in row): int(c) for row, c in zip(rows, counts)})


def exhaustive_samples(basis: SubspaceBasis, shots_each: int = 1) -> SampleSet:
    """One entry per determinant of ``basis`` (useful for noiseless full coverage)."""
    n = basis.n_orb
    return SampleSet({
        mask_to_bits(a, n) + mask_to_bits(b, n): shots_each
        for a in basis.alpha_strings
        for b in basis.beta_strings
    })


def write_samples(samples: SampleSet, stream: TextIO | None = None) -> str:
    text = "".join(f"{bits} {count}\n" for bits, count in samples.counts.items())
    if stream is not None:
        stream.write(text)
    return text


def read_samples(source) -> SampleSet:
    """Parse ``bitstring count`` lines; ``#`` starts a comment and repeats are summed."""
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    counts: Counter[str] = Counter()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or not parts[1].isdigit():
            raise ValueError(f"line {lineno}: expected 'bitstring count', got {raw!r}")
        counts[parts[0]] += int(parts[1])
    return SampleSet(dict(counts))
