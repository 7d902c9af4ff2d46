"""Fine-tune the least robustness-critical module on clean data, then
interpolate back toward the adversarially trained weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union


from .attack import AttackConfig, accuracy
from .harness.data import Dataset
from .harness.metrics import adv_seeds, eval_adv
from .mrc import MRCConfig, MRCReport, mrc_scan, select_non_robust_critical, select_robust_critical
from .network import (
    NetworkSpec,
    ParamSet,
    backprop,
    forward_cached,
    loss_ce,
    module_vector,
    sgd_step,
    with_module_vector,
)
from .numerics import Rng, l2_norm, project_l2_ball

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FineTuneConfig:
    lr: float = 0.001
    epochs: int = 10
    decay_at_epoch: int = 5
    decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    module_set: Tuple[str, ...] = ()
    seed: int = 0
    # keep each tuned module inside ||delta|| <= constraint_eps * ||theta|| (None: unconstrained)
    constraint_eps: Optional[float] = None
    # False returns the last iterate instead of the best held-out epoch
    select_best: bool = True

    def __post_init__(self):
        object.__setattr__(self, "module_set", tuple(self.module_set))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.epochs > 0 and self.decay_at_epoch >= self.epochs:
            raise ValueError("decay_at_epoch must be < epochs")

    def lr_at(self, epoch: int) -> float:
        return self.lr / self.decay_factor if epoch >= self.decay_at_epoch else self.lr


def resolve_module_set(spec: NetworkSpec, selector: Union[str, Sequence[str]],
                       report: Optional[MRCReport] = None) -> List[str]:
    """Turn a module selector into layer names.

    Accepts explicit names (list or comma-separated) or one of ``all``,
    ``last``, ``non-robust-critical``, ``robust-critical`` and ``topK``
    (the K least critical modules); the last three need an MRC report.
    """
    layers = spec.param_layers()
    if isinstance(selector, str):
        key = selector.strip()
        if key == "all":
            return list(layers)
        if key == "last":
            return [layers[-1]]
        if key in ("non-robust-critical", "robust-critical") or key.startswith("top"):
            if report is None:
                raise ValueError(f"selector {key!r} needs an MRC report")
            if key == "robust-critical":
                return [select_robust_critical(report)]
            k = 1 if key == "non-robust-critical" else int(key[3:])
            return select_non_robust_critical(report, k)
        selector = [s.strip() for s in key.split(",") if s.strip()]
    names = list(selector)
    if not names:
        raise ValueError("module set is empty")
    unknown = [n for n in names if n not in layers]
    if unknown:
        raise ValueError(f"unknown modules {unknown}; parameterized layers are {layers}")
    return names


def finetune(spec: NetworkSpec, theta_at: ParamSet, module_set: Sequence[str], data_std: Dataset,
             heldout: Dataset, cfg: FineTuneConfig):
    """Clean-data SGD on ``module_set`` with every other module frozen.

    The returned weights are the epoch of highest held-out clean accuracy,
    with ``theta_at`` itself as the epoch-0 candidate (ties: earliest), or
    the last iterate when ``cfg.select_best`` is off.
    Returns ``(theta_ft, history)``.
    """
    module_set = list(module_set)
    if not module_set:
        raise ValueError("module set is empty")
    unknown = set(module_set) - set(spec.param_layers())
    if unknown:
        raise ValueError(f"unknown modules {sorted(unknown)}")
    frozen = [n for n in spec.param_layers() if n not in module_set]
    anchors = {n: module_vector(theta_at, n) for n in module_set}

    rng = Rng(cfg.seed).child("finetune")
    params = theta_at
    best, best_acc = theta_at, accuracy(spec, theta_at, heldout)
    history = [{"epoch": 0, "lr": 0.0, "train_loss": float("nan"), "heldout_acc": best_acc}]
    state: dict = {}
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.child("shuffle", epoch).permutation(len(data_std))
        total = 0.0
        for x, y in data_std.batches(cfg.batch_size, order):
            logits, caches = forward_cached(spec, params, x)
            loss, dlogits = loss_ce(logits, y)
            grads, _ = backprop(spec, params, caches, dlogits, wrt=module_set, need_input_grad=False)
            params = sgd_step(params, grads, lr, cfg.momentum, cfg.weight_decay, frozen=frozen, state=state)
            if cfg.constraint_eps is not None:
                for n in module_set:
                    delta = module_vector(params, n) - anchors[n]
                    radius = cfg.constraint_eps * l2_norm(anchors[n])
                    if l2_norm(delta) > radius:
                        params = with_module_vector(params, n, anchors[n] + project_l2_ball(delta, radius))
            total += loss * len(y)
        acc = accuracy(spec, params, heldout)
        history.append({"epoch": epoch + 1, "lr": lr, "train_loss": total / len(data_std), "heldout_acc": acc})
        log.info("finetune epoch %d lr %.4g loss %.4f heldout_acc %.2f", epoch + 1, lr, total / len(data_std), acc)
        if acc > best_acc:
            best, best_acc = params, acc
    if not cfg.select_best:
        return params, history
    return best, history


def interpolate(theta_at: ParamSet, theta_ft: ParamSet, alpha: float) -> ParamSet:
    """``(1 - alpha) * theta_at + alpha * theta_ft``; both endpoints are exact copies."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if list(theta_at) != list(theta_ft):
        raise ValueError("ParamSets are not congruent")
    out = {}
    for name, entry in theta_at.items():
        other = theta_ft[name]
        if set(entry) != set(other):
            raise ValueError(f"{name}: ParamSets are not congruent")
        new = {}
        for k, a in entry.items():
            b = other[k]
            if a.shape != b.shape:
                raise ValueError(f"{name}.{k}: shape {a.shape} vs {b.shape}")
            if alpha == 0.0:
                new[k] = a.copy()
            elif alpha == 1.0:
                new[k] = b.copy()
            else:
                new[k] = (1.0 - alpha) * a + alpha * b
        out[name] = new
    return out


def alpha_grid(step: float = 0.05) -> List[float]:
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"alpha step must divide 1 evenly, got {step}")
    return [i / n for i in range(n + 1)]


@dataclass(frozen=True)
class SweepRecord:
    alpha: float
    std_acc: float
    adv_acc: float


@dataclass
class InterpolationSweep:
    records: List[SweepRecord]
    alpha_star: float
    tolerance: float
    theta_star: ParamSet = field(repr=False, default=None)
    theta_ft: ParamSet = field(repr=False, default=None)
    module_set: Tuple[str, ...] = ()

    @property
    def alphas(self) -> List[float]:
        return [r.alpha for r in self.records]

    @property
    def base(self) -> SweepRecord:
        return self.records[0]

    @property
    def star(self) -> SweepRecord:
        return next(r for r in self.records if r.alpha == self.alpha_star)

    def feasible(self, record: SweepRecord) -> bool:
        return _feasible(record.adv_acc, self.base.adv_acc, self.tolerance)

    def to_text(self) -> str:
        return "".join(f"{r.alpha:.4f}\t{r.std_acc:.4f}\t{r.adv_acc:.4f}\n" for r in self.records)


def _feasible(adv, base_adv, tolerance):
    # 1e-9 absorbs rounding in percentage arithmetic
    return adv >= base_adv - tolerance - 1e-9


def select_alpha(records: Sequence[SweepRecord], tolerance: float = 0.1) -> float:
    """Feasible alpha with the best clean accuracy; ties go to the larger alpha.

    ``records[0]`` must be the alpha = 0 record (the unmodified weights).
    """
    base = records[0]
    if base.alpha != 0.0:
        raise ValueError("first sweep record must be alpha = 0")
    star = base
    for r in records[1:]:
        if _feasible(r.adv_acc, base.adv_acc, tolerance) and r.std_acc >= star.std_acc:
            star = r
    return star.alpha


def sweep_and_select(spec: NetworkSpec, theta_at: ParamSet, theta_ft: ParamSet, data_eval: Dataset,
                     attack_cfg: AttackConfig, tolerance: float = 0.1, alpha_step: float = 0.05,
                     seed: int = 0) -> InterpolationSweep:
    """Evaluate clean and worst-of-3 adversarial accuracy along the interpolation path."""
    seeds = adv_seeds(seed)
    records = []
    for alpha in alpha_grid(alpha_step):
        p = interpolate(theta_at, theta_ft, alpha)
        records.append(SweepRecord(alpha, accuracy(spec, p, data_eval),
                                   eval_adv(spec, p, data_eval, attack_cfg, seeds)))
    alpha_star = select_alpha(records, tolerance)
    return InterpolationSweep(records, alpha_star, tolerance,
                              theta_star=interpolate(theta_at, theta_ft, alpha_star), theta_ft=theta_ft)


def rift_pipeline(spec: NetworkSpec, theta_at: ParamSet, data_std: Dataset, data_eval: Dataset,
                  mrc_cfg: MRCConfig, ft_cfg: FineTuneConfig, attack_cfg: AttackConfig,
                  module_selector: Union[str, Sequence[str]] = "non-robust-critical",
                  tolerance: float = 0.1, alpha_step: float = 0.05, seed: int = 0,
                  report: Optional[MRCReport] = None):
    """MRC scan, module selection, frozen fine-tuning and interpolation.

    Returns ``(theta_star, report, sweep)``; the fine-tuned endpoint and the
    tuned module names ride along on the sweep.
    """
    if report is None:
        report = mrc_scan(spec, theta_at, data_std, mrc_cfg)
    modules = resolve_module_set(spec, module_selector, report)
    log.info("fine-tuning modules %s", modules)
    theta_ft, _ = finetune(spec, theta_at, modules, data_std, data_eval, ft_cfg)
    sweep = sweep_and_select(spec, theta_at, theta_ft, data_eval, attack_cfg, tolerance, alpha_step, seed)
    sweep.module_set = tuple(modules)
    return sweep.theta_star, report, sweep
