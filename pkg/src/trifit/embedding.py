"""Per-variant embeddings for the three modalities.

Structure and dynamics features are computed at the mutation site and
mapped through fixed, seeded random projections. The sequence embedding adds
the mutant-minus-wild-type token delta to the masked-site context vector.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core_data import AA_INDEX, AMINO_ACIDS
from .gnm import GnmResult, site_cross_correlations
from .structure_io import ProteinStructure, knn

SEQ_DIM = 1280
STR_DIM = 512
DYN_DIM = 256
N_NEIGHBORS = 20
STR_FEATURES = N_NEIGHBORS + 3 * N_NEIGHBORS + 3  # 83
DYN_FEATURES = 1 + 20 + 20 + 1  # 42

STRUCTURE_SEED = 83512
DYNAMICS_SEED = 42256
MOCK_SEED = 1280

# sites closer than this to the centroid get a zero centroid direction
CENTROID_EPS = 1e-6


def seeded_normal(seed: int, size: int) -> np.ndarray:
    """Standard normals via Box-Muller on PCG64 uniforms.

    Only ``Generator.random`` is used, so the stream does not depend on
    numpy's normal-sampling algorithm.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    half = (size + 1) // 2
    u = rng.random((2, half))
    r = np.sqrt(-2.0 * np.log1p(-u[0]))
    theta = 2.0 * np.pi * u[1]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return z[:size]


@dataclass(frozen=True)
class RandomProjection:
    seed: int
    in_dim: int
    out_dim: int

    @property
    def matrix(self) -> np.ndarray:
        return _projection_matrix(self.seed, self.in_dim, self.out_dim)

    def __call__(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected {self.in_dim} features, got {x.shape[-1]}")
        return x @ self.matrix


@lru_cache(maxsize=16)
def _projection_matrix(seed: int, in_dim: int, out_dim: int) -> np.ndarray:
    w = seeded_normal(seed, in_dim * out_dim).reshape(in_dim, out_dim) / np.sqrt(in_dim)
    w.setflags(write=False)
    return w


def structure_projection(seed: int = STRUCTURE_SEED) -> RandomProjection:
    return RandomProjection(seed, STR_FEATURES, STR_DIM)


def dynamics_projection(seed: int = DYNAMICS_SEED) -> RandomProjection:
    return RandomProjection(seed, DYN_FEATURES, DYN_DIM)


def structure_features(
    structure: ProteinStructure, site: int, k: int = N_NEIGHBORS, table=None
) -> np.ndarray:
    """Geometry of the ``k`` nearest C-alpha neighbours of residue ``site``.

    Layout ``[d_1..d_k | u_1..u_k (xyz each) | unit vector site->centroid]``.
    Missing neighbours (short chains) are zero-padded. ``table`` may carry a
    precomputed :func:`knn` result for the same ``k``.
    """
    row = structure.row_of(site)
    if table is None:
        table = knn(structure, k)
    m = table.indices.shape[1]
    dist = np.zeros(k)
    dirs = np.zeros((k, 3))
    dist[:m] = table.distances[row]
    dirs[:m] = table.directions[row]
    to_centroid = structure.ca.mean(axis=0) - structure.ca[row]
    norm = np.linalg.norm(to_centroid)
    centroid_dir = to_centroid / norm if norm > CENTROID_EPS else np.zeros(3)
    return np.concatenate([dist, dirs.ravel(), centroid_dir])


def embed_structure(features: np.ndarray, proj: RandomProjection) -> np.ndarray:
    return proj(features)


def dynamics_features(gnm: GnmResult, site: int, cross_correlation: str = "mean") -> np.ndarray:
    """``[b | U row | C row | s]`` at residue ``site`` (width 42 for K=20).

    ``cross_correlation="site"`` swaps the C block for the per-mode covariance
    of every residue with the site, evaluated at the site itself.
    """
    row = gnm.row_of(site)
    if cross_correlation == "mean":
        c_row = gnm.C[row]
    elif cross_correlation == "site":
        c_row = np.zeros(gnm.C.shape[1])
        c_row[: gnm.n_modes] = site_cross_correlations(gnm.modes, row)[row]
    else:
        raise ValueError(f"unknown cross-correlation mode {cross_correlation!r}")
    return np.concatenate([[gnm.b[row]], gnm.U[row], c_row, [gnm.s[row]]])


def embed_dynamics(features: np.ndarray, proj: RandomProjection) -> np.ndarray:
    return proj(features)


@dataclass
class SequenceContext:
    """Masked-site context vector and the residue token table (20 x dim)."""

    h: np.ndarray
    token_table: np.ndarray

    def token(self, aa: str) -> np.ndarray:
        return self.token_table[AA_INDEX[aa]]


def compose_sequence_embedding(ctx: SequenceContext, wt: str, mut: str) -> np.ndarray:
    """``h_i + (t_mut - t_wt)``."""
    return ctx.h + (ctx.token(mut) - ctx.token(wt))


def _hash_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@lru_cache(maxsize=4)
def mock_token_table(dim: int = SEQ_DIM, seed: int = MOCK_SEED) -> np.ndarray:
    table = seeded_normal(_hash_seed("token-table", dim, seed), len(AMINO_ACIDS) * dim)
    table = table.reshape(len(AMINO_ACIDS), dim)
    table.setflags(write=False)
    return table


def mock_sequence_encoder(
    sequence: str, position: int, dim: int = SEQ_DIM, seed: int = MOCK_SEED
) -> SequenceContext:
    """Deterministic stand-in for a frozen protein language model.

    The context vector is a unit-variance normal draw keyed by a hash of
    ``(sequence, position, seed)``; the token table depends on ``seed`` only.
    """
    if not 1 <= position <= len(sequence):
        raise ValueError(f"position {position} outside sequence of length {len(sequence)}")
    h = seeded_normal(_hash_seed("context", sequence, position, dim, seed), dim)
    return SequenceContext(h=h, token_table=mock_token_table(dim, seed))
