"""Training losses: symmetric InfoNCE, its trimodal mean, cross-entropy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

TAU = 0.07
LAMBDA = 0.3
PAIRS = (("seq", "str"), ("seq", "dyn"), ("str", "dyn"))
MIN_ROW_NORM = 1e-12


@dataclass
class LossBreakdown:
    ce: float
    nce_seq_str: Optional[float]
    nce_seq_dyn: Optional[float]
    nce_str_dyn: Optional[float]
    ctr: float
    total: float
    lam: float
    tau: float

    def to_dict(self) -> dict:
        return asdict(self)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _normalize(z: np.ndarray):
    norms = np.sqrt((z * z).sum(axis=1, keepdims=True))
    if np.any(norms < MIN_ROW_NORM):
        raise ValueError("InfoNCE input has a zero-norm row")
    return z / norms, norms


def info_nce_with_grad(z: np.ndarray, zp: np.ndarray, tau: float = TAU):
    """Symmetric InfoNCE over in-batch negatives; returns ``(loss, dz, dzp)``.

    Row ``i`` of ``z`` is the positive for row ``i`` of ``zp``. Both the
    ``z -> zp`` and ``zp -> z`` cross-entropies are averaged over the batch and
    then halved.
    """
    z = np.asarray(z, dtype=np.float64)
    zp = np.asarray(zp, dtype=np.float64)
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {zp.shape}")
    n = z.shape[0]
    if n < 2:
        raise ValueError("InfoNCE needs a batch of at least 2")
    zn, norms = _normalize(z)
    zpn, norms_p = _normalize(zp)
    # averaging both products and reducing rows and columns through the same
    # contiguous path makes swapping z and zp an exact symmetry
    s = 0.5 * (zn @ zpn.T + (zpn @ zn.T).T) / tau
    diag = np.diag(s)
    row = _logsumexp(s, axis=1) - diag
    col = _logsumexp(np.ascontiguousarray(s.T), axis=1) - diag
    loss = 0.5 * (row.mean() + col.mean())

    p_row = np.exp(s - s.max(axis=1, keepdims=True))
    p_row /= p_row.sum(axis=1, keepdims=True)
    p_col = np.exp(s - s.max(axis=0, keepdims=True))
    p_col /= p_col.sum(axis=0, keepdims=True)
    ds = (0.5 / n) * (p_row + p_col - 2.0 * np.eye(n))
    dzn = ds @ zpn / tau
    dzpn = ds.T @ zn / tau
    dz = (dzn - zn * (zn * dzn).sum(axis=1, keepdims=True)) / norms
    dzp = (dzpn - zpn * (zpn * dzpn).sum(axis=1, keepdims=True)) / norms_p
    return float(loss), dz, dzp


def info_nce(z: np.ndarray, zp: np.ndarray, tau: float = TAU) -> float:
    return info_nce_with_grad(z, zp, tau)[0]


def contrastive_with_grad(z: dict[str, np.ndarray], modalities=("seq", "str", "dyn"), tau: float = TAU):
    """Mean symmetric InfoNCE over every pair of present modalities.

    Returns ``(ctr, pair_losses, grads)``. With fewer than two modalities the
    loss is 0 and no gradients are produced.
    """
    pairs = [p for p in PAIRS if p[0] in modalities and p[1] in modalities]
    losses: dict[tuple[str, str], float] = {}
    grads = {m: np.zeros_like(z[m]) for m in modalities}
    if not pairs:
        return 0.0, losses, {}
    for a, b in pairs:
        loss, da, db = info_nce_with_grad(z[a], z[b], tau)
        losses[(a, b)] = loss
        grads[a] += da / len(pairs)
        grads[b] += db / len(pairs)
    ctr = sum(losses[p] for p in pairs) / len(pairs)
    return ctr, losses, grads


def trimodal_contrastive(z_seq, z_str, z_dyn, tau: float = TAU):
    """``(ctr, {pair: loss})`` for the three modality pairs."""
    ctr, losses, _ = contrastive_with_grad({"seq": z_seq, "str": z_str, "dyn": z_dyn}, tau=tau)
    return ctr, losses


def cross_entropy_with_grad(logits: np.ndarray, labels: np.ndarray):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    lse = _logsumexp(logits, axis=1)
    loss = float((lse - logits[np.arange(n), labels]).mean())
    probs = np.exp(logits - lse[:, None])
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    return cross_entropy_with_grad(logits, labels)[0]


def total_loss(ce: float, ctr: float, lam: float = LAMBDA, pair_losses=None, tau: float = TAU) -> LossBreakdown:
    pair_losses = pair_losses or {}
    return LossBreakdown(
        ce=ce,
        nce_seq_str=pair_losses.get(("seq", "str")),
        nce_seq_dyn=pair_losses.get(("seq", "dyn")),
        nce_str_dyn=pair_losses.get(("str", "dyn")),
        ctr=ctr,
        total=ce + lam * ctr,
        lam=lam,
        tau=tau,
    )
