"""Desk-scale synthetic proteins whose labels are separable by construction.

Each protein is a compact random C-alpha chain with a random sequence. Its
variants are scored by a fixed linear functional of the concatenated
(mock sequence, structure, dynamics) embeddings plus small noise, with each
modality standardised to contribute equal variance. Scores are binarised per
assay and the surviving variants get folds in exact 4:1:1 train/val/test
proportion; dropped middle-band variants get arbitrary folds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core_data import AMINO_ACIDS, VariantRecord, binarize_labels
from .embedding import MOCK_SEED
from .pipeline import dynamics_embeddings, mock_sequence_embeddings, structure_embeddings
from .structure_io import ProteinStructure

BOND = 3.8
MIN_NONBONDED = 4.0


@dataclass
class SynthConfig:
    n_proteins: int = 20
    variants_per_protein: int = 250
    min_length: int = 50
    max_length: int = 80
    noise: float = 0.05
    seed: int = 0
    mock_seed: int = MOCK_SEED
    quantile: float = 0.30


def random_chain(length: int, rng: np.random.Generator, max_tries: int = 200) -> np.ndarray:
    """Self-avoiding C-alpha walk with 3.8 A steps and a weak pull to the origin."""
    ca = np.zeros((length, 3))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    for i in range(1, length):
        for _ in range(max_tries):
            step = 0.5 * direction + rng.normal(size=3) - 0.02 * ca[i - 1]
            step /= np.linalg.norm(step)
            cand = ca[i - 1] + BOND * step
            if i < 2 or np.min(np.linalg.norm(ca[: i - 1] - cand, axis=1)) >= MIN_NONBONDED:
                break
        ca[i] = cand
        direction = step
    return ca


def make_protein(pid: str, rng: np.random.Generator, config: SynthConfig) -> ProteinStructure:
    length = int(rng.integers(config.min_length, config.max_length + 1))
    seq = "".join(rng.choice(list(AMINO_ACIDS), size=length))
    # PDB precision, so writing and re-parsing the file is lossless
    ca = np.array([[float(f"{c:.3f}") for c in xyz] for xyz in random_chain(length, rng)])
    return ProteinStructure(pid, np.arange(1, length + 1), seq, ca)


def make_variants(structure: ProteinStructure, n: int, rng: np.random.Generator) -> list[VariantRecord]:
    L = len(structure)
    chosen = rng.choice(L * 19, size=min(n, L * 19), replace=False)
    out = []
    for c in sorted(chosen):
        row, j = divmod(int(c), 19)
        wt = structure.residues[row]
        mut = [a for a in AMINO_ACIDS if a != wt][j]
        out.append(VariantRecord(structure.protein_id, row + 1, wt, mut, 0.0))
    return out


def generate(config: SynthConfig | None = None):
    """Return ``(structures, variants, manifest)``.

    Variants carry scores and folds but no labels; labels are recovered by
    per-assay binarisation exactly as for real assays.
    """
    config = config or SynthConfig()
    rng = np.random.default_rng([config.seed, 0x5E])
    structures = {}
    variants = []
    for p in range(config.n_proteins):
        pid = f"SYN{p:03d}"
        structures[pid] = make_protein(pid, rng, config)
        variants.extend(make_variants(structures[pid], config.variants_per_protein, rng))

    blocks = {}
    for name, (entries, errors) in {
        "seq": mock_sequence_embeddings(structures, variants, seed=config.mock_seed),
        "str": structure_embeddings(structures, variants),
        "dyn": dynamics_embeddings(structures, variants),
    }.items():
        if errors:
            raise RuntimeError(f"synthetic {name} embedding failed: {errors[:3]}")
        table = dict(entries)
        blocks[name] = np.stack([table[v.key] for v in variants]).astype(np.float32).astype(np.float64)

    score = np.zeros(len(variants))
    weights = {}
    for name, X in blocks.items():
        w = rng.normal(size=X.shape[1])
        proj = X @ w
        score += (proj - proj.mean()) / proj.std()
        weights[name] = w
    score = score / np.sqrt(len(blocks)) + config.noise * rng.normal(size=len(variants))
    variants = [replace(v, dms_score=float(s)) for v, s in zip(variants, score)]

    by_protein: dict[str, list[VariantRecord]] = {}
    for v in variants:
        by_protein.setdefault(v.protein_id, []).append(v)
    final = []
    for pid, group in by_protein.items():
        kept = {v.key for v in binarize_labels(group, config.quantile)}
        survivors = [v for v in group if v.key in kept]
        folds = rng.permutation(_balanced_folds(len(survivors)))
        fold_of = {v.key: int(f) for v, f in zip(survivors, folds)}
        for v in group:
            fold = fold_of.get(v.key, int(rng.integers(0, 5)))
            final.append(replace(v, fold=fold))
    manifest = {
        "config": config.__dict__,
        "n_variants": len(final),
        "proteins": {pid: len(s) for pid, s in structures.items()},
    }
    return structures, final, manifest


def _balanced_folds(n: int) -> np.ndarray:
    """Folds in 4:1:1 train/val/test proportion (train spread over folds 0-2)."""
    n_val = n // 6
    n_test = n // 6
    n_train = n - n_val - n_test
    return np.concatenate([np.arange(n_train) % 3, np.full(n_val, 3), np.full(n_test, 4)])
