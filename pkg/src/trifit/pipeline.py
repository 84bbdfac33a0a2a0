"""Batch embedding extraction over many proteins.

Each function returns ``(entries, errors)``: store entries for every variant
that could be embedded and ``(protein_id, message)`` pairs for the rest, so
one bad protein never blocks the others.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .core_data import VariantRecord, parse_variant_csv
from .embedding import (
    MOCK_SEED,
    N_NEIGHBORS,
    SEQ_DIM,
    SequenceContext,
    compose_sequence_embedding,
    dynamics_features,
    dynamics_projection,
    embed_dynamics,
    embed_structure,
    mock_sequence_encoder,
    structure_features,
    structure_projection,
)
from .gnm import DEFAULT_CUTOFF, DEFAULT_N_MODES, gnm_features
from .structure_io import ProteinStructure, knn, parse_pdb


def load_structures(directory) -> dict[str, ProteinStructure]:
    """Every ``*.pdb`` in ``directory``, keyed by file stem."""
    out = {}
    for path in sorted(Path(directory).glob("*.pdb")):
        out[path.stem] = parse_pdb(path.read_text(), protein_id=path.stem)
    return out


def load_variants(paths) -> list[VariantRecord]:
    """Variant CSVs (files or directories of ``*.csv``); protein id = file stem."""
    files = []
    for p in [paths] if isinstance(paths, (str, Path)) else paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    records = []
    for f in files:
        records.extend(parse_variant_csv(f.read_text(), protein_id=f.stem))
    return records


def group_by_protein(variants) -> dict[str, list[VariantRecord]]:
    groups = defaultdict(list)
    for v in variants:
        groups[v.protein_id].append(v)
    return dict(sorted(groups.items()))


def _check_site(structure: ProteinStructure, v: VariantRecord) -> int:
    row = structure.row_of(v.position)
    if structure.residues[row] != v.wt:
        raise ValueError(
            f"{v.mutation}: structure has {structure.residues[row]} at residue {v.position}"
        )
    return row


def _unique(variants):
    seen = set()
    for v in variants:
        if v.key not in seen:
            seen.add(v.key)
            yield v


def structure_embeddings(structures, variants, k: int = N_NEIGHBORS, seed=None):
    proj = structure_projection() if seed is None else structure_projection(seed)
    entries, errors = [], []
    for pid, group in group_by_protein(variants).items():
        try:
            structure = structures[pid]
            table = knn(structure, k)
            for v in _unique(group):
                _check_site(structure, v)
                feats = structure_features(structure, v.position, k, table=table)
                entries.append((v.key, embed_structure(feats, proj)))
        except (KeyError, ValueError) as exc:
            errors.append((pid, str(exc)))
    return entries, errors


def dynamics_embeddings(
    structures,
    variants,
    cutoff: float = DEFAULT_CUTOFF,
    n_modes: int = DEFAULT_N_MODES,
    seed=None,
    cross_correlation: str = "mean",
):
    proj = dynamics_projection() if seed is None else dynamics_projection(seed)
    entries, errors = [], []
    for pid, group in group_by_protein(variants).items():
        try:
            structure = structures[pid]
            gnm = gnm_features(structure, cutoff, n_modes)
            for v in _unique(group):
                _check_site(structure, v)
                feats = dynamics_features(gnm, v.position, cross_correlation)
                entries.append((v.key, embed_dynamics(feats, proj)))
        except (KeyError, ValueError) as exc:
            errors.append((pid, str(exc)))
    return entries, errors


def mock_sequence_embeddings(structures, variants, seed: int = MOCK_SEED, dim: int = SEQ_DIM):
    entries, errors = [], []
    for pid, group in group_by_protein(variants).items():
        try:
            structure = structures[pid]
            for v in _unique(group):
                row = _check_site(structure, v)
                ctx = mock_sequence_encoder(structure.sequence, row + 1, dim, seed)
                entries.append((v.key, compose_sequence_embedding(ctx, v.wt, v.mut)))
        except (KeyError, ValueError) as exc:
            errors.append((pid, str(exc)))
    return entries, errors


def context_sequence_embeddings(contexts: dict, token_table: np.ndarray, variants):
    """Compose from stored context vectors keyed ``(protein, position, wt, wt)``."""
    entries, errors = [], []
    for pid, group in group_by_protein(variants).items():
        for v in _unique(group):
            key = (pid, v.position, v.wt, v.wt)
            if key not in contexts:
                errors.append((pid, f"no context vector for residue {v.wt}{v.position}"))
                continue
            ctx = SequenceContext(h=np.asarray(contexts[key], dtype=np.float64), token_table=token_table)
            entries.append((v.key, compose_sequence_embedding(ctx, v.wt, v.mut)))
    return entries, errors
