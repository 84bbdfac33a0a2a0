"""Gaussian Network Model over C-alpha contacts.

The Kirchhoff (contact Laplacian) matrix is decomposed once per protein;
per-residue features are B-factors (diagonal of the pseudo-inverse over all
nonzero modes), the slowest ``K`` mode shapes, mode-projected
cross-correlations and the Kirchhoff diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .structure_io import ProteinStructure, pairwise_distances

DEFAULT_CUTOFF = 10.0
DEFAULT_N_MODES = 20
ZERO_EIGENVALUE = 1e-8
# column sums below this count as orthogonal to the uniform vector
ORTHOGONAL_TOL = 1e-9

CROSS_CORRELATION_MODES = ("mean", "site")


class DisconnectedGraphError(ValueError):
    pass


@dataclass
class Kirchhoff:
    matrix: np.ndarray
    cutoff: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass
class GnmModes:
    """Nonzero eigenpairs in ascending eigenvalue order.

    ``eigenvalues``/``eigenvectors`` are the ``n_modes`` slowest modes;
    ``all_eigenvalues``/``all_eigenvectors`` keep every nonzero mode (needed
    for B-factors).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    all_eigenvalues: np.ndarray
    all_eigenvectors: np.ndarray
    requested: int

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def size(self) -> int:
        return self.eigenvectors.shape[0]


@dataclass
class GnmResult:
    b: np.ndarray
    U: np.ndarray
    C: np.ndarray
    s: np.ndarray
    n_modes: int
    pad: int
    modes: GnmModes
    residue_index: np.ndarray

    @property
    def size(self) -> int:
        return len(self.b)

    def row_of(self, residue_number: int) -> int:
        hits = np.flatnonzero(self.residue_index == residue_number)
        if hits.size == 0:
            raise KeyError(f"residue {residue_number} outside structure")
        return int(hits[0])


def build_kirchhoff(structure: ProteinStructure, cutoff: float = DEFAULT_CUTOFF) -> Kirchhoff:
    if len(structure) < 2:
        raise ValueError("GNM needs at least 2 residues")
    dist = pairwise_distances(structure.ca)
    contact = dist <= cutoff
    np.fill_diagonal(contact, False)
    # integer assembly keeps every row sum exactly zero
    gamma = -contact.astype(np.int64)
    np.fill_diagonal(gamma, contact.sum(axis=1))
    return Kirchhoff(gamma.astype(np.float64), cutoff)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Near-equal magnitudes resolve to the lowest row, which keeps the choice
    stable against last-bit noise.
    """
    mag = np.abs(vectors)
    peak = mag.max(axis=0, keepdims=True)
    first = np.argmax(mag >= peak - 1e-12, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def decompose(kirchhoff: Kirchhoff, n_modes: int = DEFAULT_N_MODES) -> GnmModes:
    """Slowest ``n_modes`` nonzero modes of the Kirchhoff matrix.

    Raises :class:`DisconnectedGraphError` when more than one eigenvalue is
    at or below the zero threshold.
    """
    gamma = kirchhoff.matrix
    if gamma.shape[0] < 2:
        raise ValueError("GNM needs at least 2 residues")
    values, vectors = np.linalg.eigh(gamma)
    zero = values <= ZERO_EIGENVALUE
    n_zero = int(zero.sum())
    if n_zero > 1:
        raise DisconnectedGraphError(f"disconnected contact graph ({n_zero} components)")
    values = values[~zero]
    vectors = _fix_signs(vectors[:, ~zero])
    top = min(n_modes, len(values))
    return GnmModes(
        eigenvalues=values[:top],
        eigenvectors=vectors[:, :top],
        all_eigenvalues=values,
        all_eigenvectors=vectors,
        requested=n_modes,
    )


def raw_bfactors(modes: GnmModes) -> np.ndarray:
    """Diagonal of the Kirchhoff pseudo-inverse, summed over every nonzero mode."""
    u = modes.all_eigenvectors
    return (u * u / modes.all_eigenvalues).sum(axis=1)


def znorm(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit population std; constant vectors map to zeros."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean()
    std = x.std()
    if std <= 1e-9 * max(1.0, abs(mean)):
        return np.zeros_like(x)
    return (x - mean) / std


def bfactors(modes: GnmModes) -> np.ndarray:
    return znorm(raw_bfactors(modes))


def cross_correlations(modes: GnmModes) -> np.ndarray:
    """Per-mode mean cross-correlation of each residue with the whole chain.

    ``C[i, k] = u[i, k] * sum_j u[j, k] / (L * lambda_k)``. Every nonzero mode
    of a connected graph is orthogonal to the uniform vector, so that sum
    vanishes; such columns fall back to the self term ``u[i, k]**2 / lambda_k``,
    whose sum over all modes is the raw B-factor.
    """
    u = modes.eigenvectors
    lam = modes.eigenvalues
    L = u.shape[0]
    col_sum = u.sum(axis=0)
    projected = u * col_sum / (L * lam)
    self_term = u * u / lam
    use_self = np.abs(col_sum) < ORTHOGONAL_TOL
    return np.where(use_self[None, :], self_term, projected)


def site_cross_correlations(modes: GnmModes, site_row: int) -> np.ndarray:
    """Alternative reading: per-mode covariance of each residue with one site.

    ``C[i, k] = u[i, k] * u[site, k] / lambda_k``.
    """
    u = modes.eigenvectors
    return u * u[site_row] / modes.eigenvalues


def _pad_columns(x: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((x.shape[0], width))
    out[:, : x.shape[1]] = x
    return out


def gnm_features(
    structure: ProteinStructure,
    cutoff: float = DEFAULT_CUTOFF,
    n_modes: int = DEFAULT_N_MODES,
) -> GnmResult:
    kirchhoff = build_kirchhoff(structure, cutoff)
    modes = decompose(kirchhoff, n_modes)
    return GnmResult(
        b=bfactors(modes),
        U=_pad_columns(modes.eigenvectors, n_modes),
        C=_pad_columns(cross_correlations(modes), n_modes),
        s=znorm(np.diag(kirchhoff.matrix)),
        n_modes=modes.n_modes,
        pad=n_modes - modes.n_modes,
        modes=modes,
        residue_index=structure.residue_index.copy(),
    )

