"""Write cc-pVDZ FCIDUMP files for the two lowest CH2 states.

Usage: python scripts/make_ch2_fixtures.py [OUTPUT_DIR]

Needs pyscf (``pip install sqdiag[fixtures]``). The singlet uses RHF orbitals
at its equilibrium structure, the triplet ROHF orbitals at its own. All
orbitals are written; the acceptance test freezes the carbon 1s.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from pyscf import gto, scf
from pyscf.tools import fcidump

# (state, bond length in Angstrom, H-C-H angle in degrees, 2S)
STRUCTURES = (("singlet", 1.11, 102.4, 0), ("triplet", 1.09, 135.5, 2))


def molecule(r: float, angle: float, spin: int) -> gto.Mole:
    half = np.radians(angle) / 2
    atoms = [
        ("C", (0.0, 0.0, 0.0)),
        ("H", (0.0, r * np.sin(half), r * np.cos(half))),
        ("H", (0.0, -r * np.sin(half), r * np.cos(half))),
    ]
    return gto.M(atom=atoms, basis="cc-pvdz", spin=spin, symmetry=False, verbose=0)


def main(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, r, angle, spin in STRUCTURES:
        mol = molecule(r, angle, spin)
        mf = (scf.RHF(mol) if spin == 0 else scf.ROHF(mol)).run(conv_tol=1e-11)
        fcidump.from_scf(mf, str(out / f"{name}.fcidump"), tol=1e-14)
        print(f"{name}: E_scf = {mf.e_tot:.10f}, {mol.nao} orbitals")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parents[1] / "tests" / "fixtures" / "ch2")
