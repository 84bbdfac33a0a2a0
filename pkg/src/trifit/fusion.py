"""Mixture-of-experts fusion network with hand-written reverse mode.

Three projection heads (Linear -> LayerNorm -> GELU) map the modality
embeddings to a shared width. Four experts read the pairwise and trimodal
concatenations, a router produces softmax weights over them, and the
weighted sum feeds a two-layer classifier with dropout. All arithmetic is
float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

MODALITIES = ("seq", "str", "dyn")
# expert k reads the concatenation of these projected modalities
EXPERT_INPUTS = (("seq", "str"), ("seq", "dyn"), ("str", "dyn"), ("seq", "str", "dyn"))
LN_EPS = 1e-5

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class FusionConfig:
    seq_dim: int = 1280
    str_dim: int = 512
    dyn_dim: int = 256
    d_model: int = 512
    expert_hidden: int = 352
    router_hidden: int = 64
    classifier_hidden: int = 256
    n_classes: int = 2
    dropout: float = 0.1
    modalities: tuple = MODALITIES
    moe: bool = True

    def __post_init__(self):
        self.modalities = tuple(m for m in MODALITIES if m in self.modalities)
        if not self.modalities:
            raise ValueError("at least one modality required")

    def in_dim(self, modality: str) -> int:
        return {"seq": self.seq_dim, "str": self.str_dim, "dyn": self.dyn_dim}[modality]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        d = dict(d)
        d["modalities"] = tuple(d.get("modalities", MODALITIES))
        return cls(**d)


ABLATIONS = {
    "full": {},
    "seq": {"modalities": ("seq",)},
    "struct": {"modalities": ("str",)},
    "dyn": {"modalities": ("dyn",)},
    "seq+struct": {"modalities": ("seq", "str")},
    "seq+dyn": {"modalities": ("seq", "dyn")},
    "struct+dyn": {"modalities": ("str", "dyn")},
    "no-moe": {"moe": False},
    "no-ctr": {},  # handled by the trainer (contrastive weight 0)
}


def ablation_config(name: str, base: Optional[FusionConfig] = None) -> FusionConfig:
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    d = (base or FusionConfig()).to_dict()
    d.update(ABLATIONS[name])
    return FusionConfig.from_dict(d)


# --- primitives -----------------------------------------------------------


def gaussian_cdf(x: np.ndarray) -> np.ndarray:
    out = erf(x / _SQRT2)
    out += 1.0
    out *= 0.5
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    return x * gaussian_cdf(x)


def gelu_grad(x: np.ndarray, cdf: np.ndarray | None = None) -> np.ndarray:
    """``Phi(x) + x * phi(x)``; pass the forward ``cdf`` to skip recomputing erf."""
    if cdf is None:
        cdf = gaussian_cdf(x)
    pdf = np.exp(-0.5 * x * x)
    pdf *= x
    pdf *= _INV_SQRT_2PI
    pdf += cdf
    return pdf


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(a: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (a - mu) * inv
    return gamma * xhat + beta, (xhat, inv)


def layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    n = xhat.shape[-1]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    da = inv / n * (
        n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return da, dgamma, dbeta


# --- parameters -----------------------------------------------------------


def parameter_shapes(config: FusionConfig) -> dict[str, tuple[int, ...]]:
    d = config.d_model
    shapes: dict[str, tuple[int, ...]] = {}
    for m in MODALITIES:
        shapes[f"proj_{m}.W"] = (config.in_dim(m), d)
        shapes[f"proj_{m}.b"] = (d,)
        shapes[f"proj_{m}.ln_gamma"] = (d,)
        shapes[f"proj_{m}.ln_beta"] = (d,)
    for k, inputs in enumerate(EXPERT_INPUTS, start=1):
        shapes[f"expert{k}.W1"] = (d * len(inputs), config.expert_hidden)
        shapes[f"expert{k}.b1"] = (config.expert_hidden,)
        shapes[f"expert{k}.W2"] = (config.expert_hidden, d)
        shapes[f"expert{k}.b2"] = (d,)
    shapes["router.W1"] = (3 * d, config.router_hidden)
    shapes["router.b1"] = (config.router_hidden,)
    shapes["router.W2"] = (config.router_hidden, len(EXPERT_INPUTS))
    shapes["router.b2"] = (len(EXPERT_INPUTS),)
    shapes["classifier.W1"] = (d, config.classifier_hidden)
    shapes["classifier.b1"] = (config.classifier_hidden,)
    shapes["classifier.W2"] = (config.classifier_hidden, config.n_classes)
    shapes["classifier.b2"] = (config.n_classes,)
    return shapes


def count_parameters(config: FusionConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(config).values()))


def is_decayed(name: str) -> bool:
    """Only affine weight matrices take weight decay."""
    return name.rsplit(".", 1)[1].startswith("W")


def init_parameters(config: FusionConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, unit LayerNorm scale."""
    rng = np.random.default_rng([seed, 0x1417])
    params = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf.startswith("W"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif leaf == "ln_gamma":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


# --- forward / backward ---------------------------------------------------


@dataclass
class FusionOutput:
    z: dict[str, np.ndarray]
    expert_outs: list[np.ndarray]
    weights: np.ndarray
    fused: np.ndarray
    logits: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def project(e: np.ndarray, params: dict, modality: str):
    """``GELU(LayerNorm(e W + b))`` for one projection head; returns ``(z, cache)``."""
    pre = f"proj_{modality}."
    W = params[pre + "W"]
    if e.shape[-1] != W.shape[0]:
        raise ValueError(f"{modality} embedding has width {e.shape[-1]}, head expects {W.shape[0]}")
    a = e @ W + params[pre + "b"]
    y, ln_cache = layer_norm(a, params[pre + "ln_gamma"], params[pre + "ln_beta"])
    cdf = gaussian_cdf(y)
    return y * cdf, (e, y, cdf, ln_cache)


def project_backward(dz, params, modality, cache, grads, input_grad: bool = False):
    """Fill head gradients into ``grads``; return ``dL/de`` only when asked."""
    pre = f"proj_{modality}."
    e, y, cdf, ln_cache = cache
    dy = dz * gelu_grad(y, cdf)
    da, grads[pre + "ln_gamma"], grads[pre + "ln_beta"] = layer_norm_backward(
        dy, params[pre + "ln_gamma"], ln_cache
    )
    grads[pre + "W"] = e.T @ da
    grads[pre + "b"] = da.sum(axis=0)
    return da @ params[pre + "W"].T if input_grad else None


def _mlp(x, params, pre):
    h = x @ params[pre + "W1"] + params[pre + "b1"]
    cdf = gaussian_cdf(h)
    g = h * cdf
    return g @ params[pre + "W2"] + params[pre + "b2"], (x, h, cdf, g)


def _mlp_backward(dout, params, pre, cache, grads):
    x, h, cdf, g = cache
    grads[pre + "W2"] = g.T @ dout
    grads[pre + "b2"] = dout.sum(axis=0)
    dh = (dout @ params[pre + "W2"].T) * gelu_grad(h, cdf)
    grads[pre + "W1"] = x.T @ dh
    grads[pre + "b1"] = dh.sum(axis=0)
    return dh @ params[pre + "W1"].T


def moe_forward(z: dict[str, np.ndarray], params: dict, config: FusionConfig, weights=None):
    """Experts, router and soft-gated sum.

    ``weights`` overrides the router (used by the single-expert ablation).
    Returns ``(expert_outs, weights, fused, cache)``.
    """
    batch = {v.shape[0] for v in z.values()}
    if len(batch) != 1:
        raise ValueError("modality batches differ in size")
    cat_all = np.concatenate([z[m] for m in MODALITIES], axis=1)
    cache = {"z": z}
    if weights is None:
        logits, cache["router"] = _mlp(cat_all, params, "router.")
        weights = softmax(logits)
        active = range(len(EXPERT_INPUTS))
    else:
        weights = np.asarray(weights, dtype=np.float64)
        active = [k for k in range(len(EXPERT_INPUTS)) if np.any(weights[:, k] != 0.0)]
    n = cat_all.shape[0]
    outs = [np.zeros((n, config.d_model)) for _ in EXPERT_INPUTS]
    for k in active:
        x = np.concatenate([z[m] for m in EXPERT_INPUTS[k]], axis=1)
        outs[k], cache[f"expert{k + 1}"] = _mlp(x, params, f"expert{k + 1}.")
    if np.any(weights < 0.0) or np.any(np.abs(weights.sum(axis=1) - 1.0) > 1e-9):
        raise FloatingPointError("router weights left the probability simplex")
    fused = sum(weights[:, k : k + 1] * outs[k] for k in range(len(outs)))
    cache["active"] = list(active)
    return outs, weights, fused, cache


def moe_backward(dfused, params, config, outs, weights, cache, grads):
    """Returns gradients with respect to each projected modality."""
    dz = {m: np.zeros_like(cache["z"][m]) for m in MODALITIES}
    d = config.d_model
    for k in cache["active"]:
        dx = _mlp_backward(weights[:, k : k + 1] * dfused, params, f"expert{k + 1}.", cache[f"expert{k + 1}"], grads)
        for j, m in enumerate(EXPERT_INPUTS[k]):
            dz[m] += dx[:, j * d : (j + 1) * d]
    if "router" in cache:
        dw = np.stack([(dfused * o).sum(axis=1) for o in outs], axis=1)
        dlogits = weights * (dw - (weights * dw).sum(axis=1, keepdims=True))
        dcat = _mlp_backward(dlogits, params, "router.", cache["router"], grads)
        for j, m in enumerate(MODALITIES):
            dz[m] += dcat[:, j * d : (j + 1) * d]
    return dz


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by ``1 / (1 - p)``."""
    keep = 1.0 - p
    return (rng.random(shape) < keep) / keep


def classify(f: np.ndarray, params: dict, config: FusionConfig, training: bool = False, rng=None):
    """Logits from the fused representation; returns ``(logits, cache)``."""
    h = f @ params["classifier.W1"] + params["classifier.b1"]
    cdf = gaussian_cdf(h)
    g = h * cdf
    mask = None
    if training and config.dropout > 0.0:
        if rng is None:
            raise ValueError("training mode needs a dropout generator")
        mask = dropout_mask(g.shape, config.dropout, rng)
        g_drop = g * mask
    else:
        g_drop = g
    logits = g_drop @ params["classifier.W2"] + params["classifier.b2"]
    return logits, (f, h, cdf, g_drop, mask)


def classify_backward(dlogits, params, cache, grads):
    f, h, cdf, g_drop, mask = cache
    grads["classifier.W2"] = g_drop.T @ dlogits
    grads["classifier.b2"] = dlogits.sum(axis=0)
    dg = dlogits @ params["classifier.W2"].T
    if mask is not None:
        dg = dg * mask
    dh = dg * gelu_grad(h, cdf)
    grads["classifier.W1"] = f.T @ dh
    grads["classifier.b1"] = dh.sum(axis=0)
    return dh @ params["classifier.W1"].T


class FusionModel:
    """Parameters plus the forward and backward passes."""

    def __init__(self, config: Optional[FusionConfig] = None, params=None, seed: int = 0):
        self.config = config or FusionConfig()
        self.params = params if params is not None else init_parameters(self.config, seed)
        shapes = parameter_shapes(self.config)
        if set(shapes) != set(self.params):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def n_parameters(self) -> int:
        return count_parameters(self.config)

    def trainable(self) -> list[str]:
        """Parameters that influence the output under the current ablation."""
        names = []
        for name in parameter_shapes(self.config):
            head = name.split(".", 1)[0]
            if head.startswith("proj_") and head[5:] not in self.config.modalities:
                continue
            if not self.config.moe and (head == "router" or head in ("expert1", "expert2", "expert3")):
                continue
            names.append(name)
        return names

    def forward(self, e_seq, e_str, e_dyn, training: bool = False, rng=None) -> FusionOutput:
        inputs = {"seq": e_seq, "str": e_str, "dyn": e_dyn}
        n = next(np.shape(v)[0] for v in inputs.values() if v is not None)
        z, proj_cache = {}, {}
        for m in MODALITIES:
            if m in self.config.modalities:
                z[m], proj_cache[m] = project(np.asarray(inputs[m], dtype=np.float64), self.params, m)
            else:
                z[m] = np.zeros((n, self.config.d_model))
        fixed = None
        if not self.config.moe:
            fixed = np.zeros((n, len(EXPERT_INPUTS)))
            fixed[:, -1] = 1.0
        outs, w, fused, moe_cache = moe_forward(z, self.params, self.config, weights=fixed)
        logits, cls_cache = classify(fused, self.params, self.config, training, rng)
        return FusionOutput(
            z=z,
            expert_outs=outs,
            weights=w,
            fused=fused,
            logits=logits,
            cache={"proj": proj_cache, "moe": moe_cache, "cls": cls_cache},
        )

    def backward(self, out: FusionOutput, dlogits: np.ndarray, dz_extra=None) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given ``dL/dlogits`` and optional ``dL/dz``."""
        grads: dict[str, np.ndarray] = {}
        dfused = classify_backward(dlogits, self.params, out.cache["cls"], grads)
        dz = moe_backward(dfused, self.params, self.config, out.expert_outs, out.weights, out.cache["moe"], grads)
        if dz_extra:
            for m, g in dz_extra.items():
                dz[m] = dz[m] + g
        for m in self.config.modalities:
            project_backward(dz[m], self.params, m, out.cache["proj"][m], grads)
        for name, p in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(p)
        return grads
