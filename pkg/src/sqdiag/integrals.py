"""Molecular Hamiltonians in an orthonormal spatial-orbital basis.

Two-electron integrals are stored densely in chemists' notation, ``eri[p, q, r, s]
= (pq|rs)``, and always carry the full 8-fold permutational symmetry of real
orbitals.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from sqdiag.exceptions import FcidumpError

DUPLICATE_TOL = 1e-12


@dataclass(frozen=True)
class MolecularHamiltonian:
    """Real molecular Hamiltonian for a fixed particle-number sector.

    Attributes:
        h: One-body integrals, shape ``(n_orb, n_orb)``.
        eri: Two-body integrals ``(pq|rs)``, shape ``(n_orb,) * 4``.
        core_energy: Constant energy (nuclear repulsion plus frozen-core part).
        n_alpha: Number of spin-up electrons.
        n_beta: Number of spin-down electrons.
    """

    h: np.ndarray
    eri: np.ndarray
    core_energy: float
    n_alpha: int
    n_beta: int

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        eri = np.array(self.eri, dtype=float)
        n = h.shape[0]
        if h.shape != (n, n):
            raise ValueError(f"one-body table must be square, got {h.shape}")
        if eri.shape != (n, n, n, n):
            raise ValueError(f"two-body table must have shape {(n,) * 4}, got {eri.shape}")
        if not 0 <= self.n_alpha <= n or not 0 <= self.n_beta <= n:
            raise ValueError(
                f"electron counts ({self.n_alpha}, {self.n_beta}) do not fit in {n} orbitals"
            )
        h.setflags(write=False)
        eri.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "eri", eri)
        object.__setattr__(self, "core_energy", float(self.core_energy))
        object.__setattr__(self, "n_alpha", int(self.n_alpha))
        object.__setattr__(self, "n_beta", int(self.n_beta))

    @property
    def n_orb(self) -> int:
        return self.h.shape[0]

    @property
    def n_electrons(self) -> int:
        return self.n_alpha + self.n_beta

    @property
    def ms2(self) -> int:
        return self.n_alpha - self.n_beta

    def with_sector(self, n_alpha: int, n_beta: int) -> MolecularHamiltonian:
        """Same integrals, different electron counts."""
        return MolecularHamiltonian(self.h, self.eri, self.core_energy, n_alpha, n_beta)

    def eri_element(self, p: int, q: int, r: int, s: int) -> float:
        return float(self.eri[p, q, r, s])

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        eri = self.eri
        return bool(
            np.allclose(self.h, self.h.T, atol=atol)
            and np.allclose(eri, eri.transpose(1, 0, 2, 3), atol=atol)
            and np.allclose(eri, eri.transpose(0, 1, 3, 2), atol=atol)
            and np.allclose(eri, eri.transpose(2, 3, 0, 1), atol=atol)
        )


def symmetrize_eri(eri: np.ndarray) -> np.ndarray:
    """Average a four-index table over the 8 real-orbital permutations."""
    eri = np.asarray(eri, dtype=float)
    eri = 0.5 * (eri + eri.transpose(1, 0, 2, 3))
    eri = 0.5 * (eri + eri.transpose(0, 1, 3, 2))
    return 0.5 * (eri + eri.transpose(2, 3, 0, 1))


def canonical_eri_index(i: int, j: int, k: int, l: int) -> tuple[int, int, int, int]:
    """Representative of the 8-fold symmetry class of ``(ij|kl)``."""
    if i < j:
        i, j = j, i
    if k < l:
        k, l = l, k
    if (i, j) < (k, l):
        i, j, k, l = k, l, i, j
    return i, j, k, l


def _eri_slots(i: int, j: int, k: int, l: int) -> set[tuple[int, int, int, int]]:
    return {
        (i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
        (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i),
    }


_HEADER_END = re.compile(r"(&END|/)\s*$", re.IGNORECASE)


def _parse_header(header: str) -> dict[str, str]:
    body = re.sub(r"&FCI", "", header, count=1, flags=re.IGNORECASE)
    body = re.sub(r"(&END|/)\s*$", "", body.strip(), flags=re.IGNORECASE)
    tokens = re.split(r"([A-Za-z_]\w*)\s*=", body)
    fields = {}
    for key, value in zip(tokens[1::2], tokens[2::2]):
        fields[key.upper()] = " ".join(value.split()).strip(", ")
    return fields


def _header_int(fields: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in fields:
        if default is None:
            raise FcidumpError(f"FCIDUMP header is missing {key}")
        return default
    try:
        return int(fields[key].split(",")[0])
    except ValueError as err:
        raise FcidumpError(f"FCIDUMP header field {key}={fields[key]!r} is not an integer") from err


def parse_fcidump(source: str | TextIO) -> MolecularHamiltonian:
    """Read an FCIDUMP file (namelist header, 1-based chemists'-notation body).

    ``source`` may be the file text or an open text stream. ORBSYM and ISYM are
    accepted and ignored.
    """
    text = source if isinstance(source, str) else source.read()
    lines = text.splitlines()
    header_lines = []
    body_start = None
    for idx, line in enumerate(lines):
        header_lines.append(line)
        if _HEADER_END.search(line.strip()):
            body_start = idx + 1
            break
    if body_start is None or not header_lines or "&FCI" not in header_lines[0].upper():
        raise FcidumpError("FCIDUMP header must start with &FCI and end with &END or /")

    fields = _parse_header("\n".join(header_lines))
    norb = _header_int(fields, "NORB")
    nelec = _header_int(fields, "NELEC")
    ms2 = _header_int(fields, "MS2", default=0)
    if norb < 1:
        raise FcidumpError(f"NORB must be positive, got {norb}")
    if (nelec + ms2) % 2 or nelec < abs(ms2):
        raise FcidumpError(f"NELEC={nelec} and MS2={ms2} do not give integral spin counts")
    n_alpha = (nelec + ms2) // 2
    n_beta = (nelec - ms2) // 2
    if n_alpha > norb or n_beta > norb:
        raise FcidumpError(f"{nelec} electrons with MS2={ms2} do not fit in {norb} orbitals")

    one: dict[tuple[int, int], float] = {}
    two: dict[tuple[int, int, int, int], float] = {}
    core: float | None = None

    def _record(table, key, value, lineno):
        if key in table and abs(table[key] - value) > DUPLICATE_TOL:
            raise FcidumpError(
                f"line {lineno}: conflicting duplicate entry for {key}: {table[key]} vs {value}"
            )
        table[key] = value

    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise FcidumpError(f"line {lineno}: expected 'value i j k l', got {line!r}")
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError as err:
            raise FcidumpError(f"line {lineno}: cannot parse {line!r}") from err
        for idx in (i, j, k, l):
            if not 0 <= idx <= norb:
                raise FcidumpError(f"line {lineno}: index {idx} outside [1, {norb}]")
        if i and j and k and l:
            _record(two, canonical_eri_index(i - 1, j - 1, k - 1, l - 1), value, lineno)
        elif i and j and not k and not l:
            key = (max(i, j) - 1, min(i, j) - 1)
            _record(one, key, value, lineno)
        elif not (i or j or k or l):
            if core is not None and abs(core - value) > DUPLICATE_TOL:
                raise FcidumpError(f"line {lineno}: conflicting core energy entries")
            core = value
        else:
            # orbital-energy lines (i 0 0 0) carry no Hamiltonian information
            if i and not (j or k or l):
                continue
            raise FcidumpError(f"line {lineno}: unsupported index pattern {(i, j, k, l)}")

    h = np.zeros((norb, norb))
    for (p, q), value in one.items():
        h[p, q] = h[q, p] = value
    eri = np.zeros((norb,) * 4)
    for slot, value in two.items():
        for perm in _eri_slots(*slot):
            eri[perm] = value
    return MolecularHamiltonian(h, eri, core or 0.0, n_alpha, n_beta)


def read_fcidump(path) -> MolecularHamiltonian:
    with open(path) as f:
        return parse_fcidump(f)


def write_fcidump(ham: MolecularHamiltonian, stream: TextIO | None = None) -> str:
    """Serialize ``ham``; returns the text and also writes it to ``stream`` if given."""
    n = ham.n_orb
    out = io.StringIO()
    out.write(f" &FCI NORB={n},NELEC={ham.n_electrons},MS2={ham.ms2},\n")
    out.write("  ORBSYM=" + ",".join("1" for _ in range(n)) + ",\n")
    out.write("  ISYM=1,\n &END\n")
    eri = ham.eri
    for i in range(n):
        for j in range(i + 1):
            ij = i * (i + 1) // 2 + j
            for k in range(n):
                for l in range(k + 1):
                    if k * (k + 1) // 2 + l > ij:
                        break
                    value = eri[i, j, k, l]
                    if value != 0.0:
                        out.write(f"{value: .17e} {i + 1} {j + 1} {k + 1} {l + 1}\n")
    for i in range(n):
        for j in range(i + 1):
            if ham.h[i, j] != 0.0:
                out.write(f"{ham.h[i, j]: .17e} {i + 1} {j + 1} 0 0\n")
    out.write(f"{ham.core_energy: .17e} 0 0 0 0\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def save_fcidump(ham: MolecularHamiltonian, path) -> None:
    with open(path, "w") as f:
        write_fcidump(ham, f)


def freeze_core(ham: MolecularHamiltonian, n_frozen: int) -> MolecularHamiltonian:
    """Fold the first ``n_frozen`` doubly occupied orbitals into the constant and one-body terms."""
    if n_frozen < 0:
        raise ValueError("n_frozen must be non-negative")
    if n_frozen > min(ham.n_alpha, ham.n_beta):
        raise ValueError(
            f"cannot freeze {n_frozen} orbitals with only "
            f"{min(ham.n_alpha, ham.n_beta)} doubly occupied pairs"
        )
    if n_frozen == 0:
        return ham
    f = slice(0, n_frozen)
    a = slice(n_frozen, ham.n_orb)
    h, eri = ham.h, ham.eri
    coulomb = np.einsum("iijj->ij", eri[f, f, f, f])
    exchange = np.einsum("ijji->ij", eri[f, f, f, f])
    core = ham.core_energy + 2.0 * np.trace(h[f, f]) + np.sum(2.0 * coulomb - exchange)
    h_act = (
        h[a, a]
        + 2.0 * np.einsum("pqii->pq", eri[a, a, f, f])
        - np.einsum("piiq->pq", eri[a, f, f, a])
    )
    return MolecularHamiltonian(
        h_act,
        eri[a, a, a, a],
        core,
        ham.n_alpha - n_frozen,
        ham.n_beta - n_frozen,
    )


def rotate_integrals(ham: MolecularHamiltonian, U: np.ndarray, atol: float = 1e-10) -> MolecularHamiltonian:
    """Express ``ham`` in the orbitals ``phi'_q = sum_p phi_p U[p, q]``."""
    U = np.asarray(U, dtype=float)
    n = ham.n_orb
    if U.shape != (n, n):
        raise ValueError(f"rotation must have shape {(n, n)}, got {U.shape}")
    if not np.allclose(U.T @ U, np.eye(n), rtol=0.0, atol=atol):
        raise ValueError("orbital rotation matrix is not orthogonal")
    h = U.T @ ham.h @ U
    eri = np.tensordot(ham.eri, U, axes=([0], [0]))  # (q r s P)
    eri = np.tensordot(eri, U, axes=([0], [0]))  # (r s P Q)
    eri = np.tensordot(eri, U, axes=([0], [0]))  # (s P Q R)
    eri = np.tensordot(eri, U, axes=([0], [0]))  # (P Q R S)
    return MolecularHamiltonian(0.5 * (h + h.T), symmetrize_eri(eri), ham.core_energy, ham.n_alpha, ham.n_beta)


def fock_diagonal(ham: MolecularHamiltonian) -> tuple[np.ndarray, np.ndarray]:
    """Per-spin diagonal Fock elements of the aufbau determinant.

    For a canonical closed-shell reference these are the orbital energies.
    """
    h, eri = ham.h, ham.eri
    coulomb = np.einsum("ppjj->pj", eri)
    exchange = np.einsum("pjjp->pj", eri)
    occ_a = np.arange(ham.n_orb) < ham.n_alpha
    occ_b = np.arange(ham.n_orb) < ham.n_beta
    j_total = coulomb @ (occ_a.astype(float) + occ_b)
    f_a = np.diag(h) + j_total - exchange @ occ_a.astype(float)
    f_b = np.diag(h) + j_total - exchange @ occ_b.astype(float)
    return f_a, f_b


def random_hamiltonian(
    n_orb: int,
    n_alpha: int,
    n_beta: int,
    rng: np.random.Generator | int | None = None,
    scale: float = 0.5,
) -> MolecularHamiltonian:
    """Random real Hamiltonian with physical permutational symmetry (for testing)."""
    rng = np.random.default_rng(rng)
    h = rng.normal(scale=scale, size=(n_orb, n_orb))
    h = 0.5 * (h + h.T)
    # positive semidefinite (pq|rs) built from a random factorization
    chol = rng.normal(scale=np.sqrt(scale / n_orb), size=(2 * n_orb, n_orb, n_orb))
    chol = 0.5 * (chol + chol.transpose(0, 2, 1))
    eri = np.einsum("xpq,xrs->pqrs", chol, chol)
    return MolecularHamiltonian(h, symmetrize_eri(eri), float(rng.normal()), n_alpha, n_beta)
