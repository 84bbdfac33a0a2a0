"""PDB C-alpha traces and k-nearest-neighbour tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_data import ONE_TO_THREE, THREE_TO_ONE


class PDBParseError(ValueError):
    pass


class CoincidentAtomsError(ValueError):
    pass


@dataclass
class ProteinStructure:
    """Ordered C-alpha trace of one chain.

    ``residue_index`` holds the PDB residue numbers (1-based, strictly
    increasing, gaps allowed); ``ca`` is an ``(L, 3)`` array in Angstrom.
    """

    protein_id: str
    residue_index: np.ndarray
    residues: str
    ca: np.ndarray

    def __post_init__(self):
        self.residue_index = np.asarray(self.residue_index, dtype=np.int64)
        self.ca = np.asarray(self.ca, dtype=np.float64)
        if len(self.residues) != len(self.residue_index) or self.ca.shape != (len(self.residues), 3):
            raise ValueError("inconsistent structure arrays")
        if len(self.residues) < 1:
            raise ValueError("structure has no residues")
        if np.any(np.diff(self.residue_index) <= 0):
            raise ValueError("residue indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.residues)

    @property
    def sequence(self) -> str:
        return self.residues

    def row_of(self, residue_number: int) -> int:
        """Row of the residue with PDB number ``residue_number``."""
        hits = np.flatnonzero(self.residue_index == residue_number)
        if hits.size == 0:
            raise KeyError(f"residue {residue_number} not in structure {self.protein_id}")
        return int(hits[0])


def parse_pdb(text: str, chain: Optional[str] = None, protein_id: str = "") -> ProteinStructure:
    """Extract the C-alpha trace from fixed-column PDB ATOM records.

    Only the first MODEL is read. Without ``chain`` the first chain seen is
    used. Alternate locations other than blank or ``A`` are skipped.
    """
    seen_model = False
    picked_chain = chain
    numbers: list[int] = []
    seen_numbers: set[int] = set()
    names: list[str] = []
    coords: list[tuple[float, float, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        record = line[:6]
        if record.startswith("MODEL"):
            if seen_model:
                break
            seen_model = True
            continue
        if record.startswith("ENDMDL"):
            break
        if record != "ATOM  ":
            continue
        if line[12:16].strip() != "CA":
            continue
        if line[16:17] not in (" ", "A", ""):
            continue
        chain_id = line[21:22]
        if picked_chain is None:
            picked_chain = chain_id
        if chain_id != picked_chain:
            continue
        resname = line[17:20].strip()
        if resname not in THREE_TO_ONE:
            raise PDBParseError(f"unknown residue {resname} at line {lineno}")
        try:
            resnum = int(line[22:26])
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError:
            raise PDBParseError(f"unparseable ATOM record at line {lineno}") from None
        if resnum in seen_numbers:
            raise PDBParseError(f"duplicate residue {resnum} in chain {picked_chain!r} at line {lineno}")
        numbers.append(resnum)
        seen_numbers.add(resnum)
        names.append(THREE_TO_ONE[resname])
        coords.append(xyz)
    if not numbers:
        raise PDBParseError("no CA atoms found")
    if np.any(np.diff(numbers) <= 0):
        raise PDBParseError("residue numbers are not increasing in file order")
    return ProteinStructure(protein_id, np.array(numbers), "".join(names), np.array(coords))


def format_pdb(structure: ProteinStructure, chain: str = "A") -> str:
    """Write a minimal CA-only PDB file."""
    lines = []
    for serial, (num, aa, xyz) in enumerate(
        zip(structure.residue_index, structure.residues, structure.ca), start=1
    ):
        lines.append(
            f"ATOM  {serial:5d}  CA  {ONE_TO_THREE[aa]} {chain}{int(num):4d}    "
            f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}  1.00  0.00           C"
        )
    lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"


@dataclass
class NeighborTable:
    """Per-residue neighbours sorted by distance (ties -> lower row index).

    ``indices``, ``distances`` are ``(L, m)`` and ``directions`` ``(L, m, 3)``
    with ``m = min(k, L - 1)``; ``pad = k - m`` slots are missing.
    """

    indices: np.ndarray
    distances: np.ndarray
    directions: np.ndarray
    k: int

    @property
    def pad(self) -> int:
        return self.k - self.indices.shape[1]


def pairwise_distances(ca: np.ndarray) -> np.ndarray:
    diff = ca[None, :, :] - ca[:, None, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def knn(structure: ProteinStructure, k: int) -> NeighborTable:
    if k < 1:
        raise ValueError("k must be >= 1")
    ca = structure.ca
    n = len(ca)
    if n < 2:
        raise ValueError("knn needs at least 2 residues")
    dist = pairwise_distances(ca)
    off_diag = ~np.eye(n, dtype=bool)
    if np.any(dist[off_diag] == 0.0):
        i, j = np.argwhere((dist == 0.0) & off_diag)[0]
        raise CoincidentAtomsError(f"coincident Calpha at rows {i} and {j}")
    m = min(k, n - 1)
    np.fill_diagonal(dist, np.inf)
    # stable sort keeps lower index first among equal distances
    order = np.argsort(dist, axis=1, kind="stable")[:, :m]
    d = np.take_along_axis(dist, order, axis=1)
    vec = ca[order] - ca[:, None, :]
    directions = vec / d[:, :, None]
    return NeighborTable(order, d, directions, k)
