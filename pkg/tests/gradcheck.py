"""Finite-difference checks of the full training loss against backprop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from oracles import central_difference, relative_error
from trifit.fusion import FusionConfig, FusionModel, ablation_config
from trifit.objectives import LAMBDA, TAU
from trifit.trainer import Batch, loss_and_grads

H = 1e-5
# central differences at H carry ~1e-11 roundoff, so gradients below this
# floor are compared in absolute terms (|error| < 1e-4 * FLOOR)
FLOOR = 1e-7


@dataclass
class GradReport:
    worst: float = 0.0
    worst_param: str = ""
    checked: int = 0
    frozen_nonzero: list = field(default_factory=list)
    directional: float = 0.0

    def update(self, name, err):
        self.checked += 1
        if err > self.worst:
            self.worst, self.worst_param = err, name


def tiny_config(name: str) -> FusionConfig:
    base = FusionConfig(seq_dim=7, str_dim=5, dyn_dim=4, d_model=6, expert_hidden=5,
                        router_hidden=3, classifier_hidden=4)
    return ablation_config(name, base)


def random_batch(config: FusionConfig, rng, size: int = 4) -> Batch:
    labels = np.arange(size) % 2
    return Batch(
        rng.normal(size=(size, config.seq_dim)),
        rng.normal(size=(size, config.str_dim)),
        rng.normal(size=(size, config.dyn_dim)),
        labels,
    )


def check_model(name: str, config: FusionConfig, seed: int = 0, per_tensor=None, n_directions: int = 2) -> GradReport:
    """Compare analytic and central-difference gradients of the total loss.

    ``per_tensor=None`` checks every entry; otherwise that many entries per
    tensor are drawn, always including the largest-gradient entry. Dropout is
    active with a fixed mask so its backward path is covered too.
    """
    rng = np.random.default_rng([seed, 99])
    model = FusionModel(config, seed=seed)
    # nonzero biases and LayerNorm shifts so no gradient is trivially symmetric
    for k, v in model.params.items():
        if not k.rsplit(".", 1)[1].startswith("W"):
            v += 0.1 * rng.normal(size=v.shape)
    batch = random_batch(config, rng)
    lam = 0.0 if name == "no-ctr" else LAMBDA

    def loss():
        return loss_and_grads(model, batch, lam, TAU, True, np.random.default_rng(7), with_grads=False)[0].total

    _, grads, _ = loss_and_grads(model, batch, lam, TAU, True, np.random.default_rng(7))
    report = GradReport()
    trainable = set(model.trainable())
    for pname, p in model.params.items():
        g = grads[pname]
        if pname not in trainable:
            if np.any(g != 0):
                report.frozen_nonzero.append(pname)
            continue
        flat = p.reshape(-1)
        if per_tensor is None or flat.size <= per_tensor:
            idx = range(flat.size)
        else:
            picks = rng.choice(flat.size, size=per_tensor - 1, replace=False)
            idx = sorted({int(np.argmax(np.abs(g))), *map(int, picks)})
        gflat = g.reshape(-1)
        for i in idx:
            fd = central_difference(loss, flat, i, H)
            report.update(f"{pname}[{i}]", relative_error(gflat[i], fd, FLOOR))
    # directional derivative over every trainable parameter at once
    names = sorted(trainable)
    for _ in range(n_directions):
        direction = {k: rng.normal(size=model.params[k].shape) for k in names}
        analytic = sum(float((grads[k] * direction[k]).sum()) for k in names)

        def shifted(scale):
            for k in names:
                model.params[k] += scale * direction[k]
            value = loss()
            for k in names:
                model.params[k] -= scale * direction[k]
            return value

        # restore by recomputing from a saved copy to avoid drift
        saved = {k: model.params[k].copy() for k in names}
        fd = (shifted(H) - shifted(-H)) / (2 * H)
        for k in names:
            model.params[k][...] = saved[k]
        report.directional = max(report.directional, relative_error(analytic, fd, FLOOR))
    return report
