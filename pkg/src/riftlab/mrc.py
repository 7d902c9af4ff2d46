"""Module robust criticality: worst-case L2 weight perturbation of one module.

The adversarial set is generated once against the trained weights and then
held fixed while the weights of a single module are pushed up the loss by
gradient ascent, inside the ball ``||delta|| <= eps_w * ||theta_module||``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attack import AttackConfig, accuracy, attack_dataset, mean_loss
from .harness.data import Dataset
from .network import (
    NetworkSpec,
    ParamSet,
    backprop,
    forward_cached,
    loss_ce,
    module_vector,
    with_module_vector,
)
from .numerics import Rng, l2_norm, project_l2_ball


@dataclass(frozen=True)
class MRCConfig:
    eps_w: float = 0.1
    norm_p: int = 2
    steps_T: int = 10
    gamma: float = 1.0
    attack: AttackConfig = field(default_factory=AttackConfig)
    batch_size: int = 128
    project_and_continue: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.eps_w < 0:
            raise ValueError("eps_w must be >= 0")
        if self.norm_p != 2:
            raise ValueError("only norm_p = 2 is supported")
        if self.steps_T < 0:
            raise ValueError("steps_T must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")


@dataclass(frozen=True)
class MRCRecord:
    module_name: str
    mrc_value: float
    robust_acc_before: float
    robust_acc_after: float
    robust_acc_drop: float
    forward_backward_count: float

    def to_line(self) -> str:
        return "\t".join(
            [self.module_name]
            + [f"{v:.6g}" for v in (self.mrc_value, self.robust_acc_before, self.robust_acc_after,
                                    self.robust_acc_drop, self.forward_backward_count)]
        )

    @classmethod
    def from_line(cls, line: str) -> "MRCRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 6:
            raise ValueError(f"malformed MRC record: {line!r}")
        return cls(parts[0], *(float(p) for p in parts[1:]))


@dataclass
class MRCReport:
    records: List[MRCRecord]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def value(self, name: str) -> float:
        for r in self.records:
            if r.module_name == name:
                return r.mrc_value
        raise KeyError(name)

    def to_text(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)

    @classmethod
    def from_text(cls, text: str) -> "MRCReport":
        return cls([MRCRecord.from_line(line) for line in text.splitlines() if line.strip()])


def build_adv_set(spec: NetworkSpec, params: ParamSet, data: Dataset, attack_cfg: AttackConfig,
                  rng: Optional[Rng] = None, batch_size: int = 256) -> Dataset:
    """PGD adversarial copy of ``data`` against ``params``, returned read-only."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if rng is None:
        rng = Rng(0)
    return attack_dataset(spec, params, data, attack_cfg, rng, batch_size).frozen()


def _backward_fraction(spec: NetworkSpec, name: str) -> float:
    # share of parameterized layers a backward pass must traverse to reach `name`
    layers = spec.param_layers()
    return (len(layers) - layers.index(name)) / len(layers)


def _ascend(spec, theta_at, name, d_adv, cfg):
    if name not in spec.param_layers():
        raise KeyError(f"{name!r} is not a parameterized layer")
    base_vec = module_vector(theta_at, name)
    radius = cfg.eps_w * l2_norm(base_vec)
    base_loss = mean_loss(spec, theta_at, d_adv)
    frac = _backward_fraction(spec, name)

    best_loss, best = base_loss, theta_at
    params = theta_at
    cost = 0.0
    for _ in range(cfg.steps_T):
        for x, y in d_adv.batches(cfg.batch_size):
            logits, caches = forward_cached(spec, params, x)
            _, dlogits = loss_ce(logits, y)
            grads, _ = backprop(spec, params, caches, dlogits, wrt=(name,), need_input_grad=False)
            g = grads[name]
            step = [g["weight"].ravel()] + ([g["bias"].ravel()] if "bias" in g else [])
            params = with_module_vector(params, name, module_vector(params, name) + cfg.gamma * np.concatenate(step))
            cost += frac * len(y) / len(d_adv)
        delta = module_vector(params, name) - base_vec
        violated = l2_norm(delta) >= radius
        if violated:
            params = with_module_vector(theta_at, name, base_vec + project_l2_ball(delta, radius))
        loss = mean_loss(spec, params, d_adv)
        if loss > best_loss:
            best_loss, best = loss, params
        if violated and not cfg.project_and_continue:
            break
    return best_loss - base_loss, best, cost


def mrc_of_module(spec: NetworkSpec, theta_at: ParamSet, module_name: str, d_adv: Dataset,
                  cfg: MRCConfig) -> Tuple[float, ParamSet]:
    """Estimated loss increase on ``d_adv`` under the worst in-ball perturbation.

    Returns ``(mrc_value, perturbed_params)``. The zero perturbation is a
    candidate, so the value is never negative.
    """
    value, perturbed, _ = _ascend(spec, theta_at, module_name, d_adv, cfg)
    return value, perturbed


def mrc_scan(spec: NetworkSpec, theta_at: ParamSet, data: Dataset, cfg: MRCConfig,
             d_adv: Optional[Dataset] = None) -> MRCReport:
    """One record per parameterized module, in network order.

    ``forward_backward_count`` is in full-network pass equivalents over the
    adversarial set: a batch pass whose backward stops at module ``i`` counts
    as the fraction of parameterized layers it traverses.
    """
    if d_adv is None:
        d_adv = build_adv_set(spec, theta_at, data, cfg.attack, Rng(cfg.seed).child("mrc_adv"))
    before = accuracy(spec, theta_at, d_adv)
    records = []
    for name in spec.param_layers():
        value, perturbed, cost = _ascend(spec, theta_at, name, d_adv, cfg)
        after = accuracy(spec, perturbed, d_adv)
        records.append(MRCRecord(name, value, before, after, before - after, cost))
    return MRCReport(records)


def select_non_robust_critical(report: MRCReport, k: int = 1) -> List[str]:
    """Names of the ``k`` lowest-MRC modules, ascending; ties keep network order."""
    if k <= 0:
        raise ValueError("k must be >= 1")
    if k > len(report):
        raise ValueError(f"k={k} exceeds the number of modules ({len(report)})")
    ranked = sorted(report.records, key=lambda r: r.mrc_value)
    return [r.module_name for r in ranked[:k]]


def select_robust_critical(report: MRCReport) -> str:
    """Module of highest MRC; ties keep network order."""
    best = report.records[0]
    for r in report.records[1:]:
        if r.mrc_value > best.mrc_value:
            best = r
    return best.module_name


def scale_network(spec: NetworkSpec, params: ParamSet, layer_pair: Sequence[str], beta: float) -> ParamSet:
    """Rescale ``first`` by beta and ``second`` by 1/beta; the function is unchanged.

    Only ReLU (and flatten) layers may sit between the two modules, and at
    least one ReLU must.
    """
    if not beta > 0:
        raise ValueError("beta must be > 0")
    first, second = layer_pair
    param_layers = spec.param_layers()
    if first not in param_layers or second not in param_layers:
        raise ValueError("both layers must be parameterized")
    i, j = spec.index(first), spec.index(second)
    between = [layer.kind for layer in spec.layers[i + 1:j]]
    if j <= i or "relu" not in between or any(k not in ("relu", "flatten") for k in between):
        raise ValueError(f"{first!r} and {second!r} must be consecutive modules separated by a ReLU")
    if beta == 1:
        return dict(params)
    out = dict(params)
    out[first] = {k: beta * v for k, v in params[first].items()}
    second_entry = {"weight": params[second]["weight"] / beta}
    if "bias" in params[second]:
        second_entry["bias"] = params[second]["bias"]
    out[second] = second_entry
    return out
