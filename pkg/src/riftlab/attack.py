"""L-infinity PGD, robust loss and the adversarial training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .harness.data import Dataset
from .network import (
    NetworkSpec,
    ParamSet,
    backprop,
    cross_entropy_per_sample,
    forward_cached,
    init_params,
    loss_ce,
    predict,
    sgd_step,
)
from .numerics import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackConfig:
    eps_x: float = 8 / 255
    step_size: Optional[float] = None  # None -> eps_x / 4
    steps: int = 10
    rand_init: bool = True
    input_bounds: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.eps_x < 0:
            raise ValueError("eps_x must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.step_size is not None and self.steps > 0 and self.step_size <= 0:
            raise ValueError("step_size must be > 0 when steps > 0")
        lo, hi = self.input_bounds
        if lo > hi:
            raise ValueError("input_bounds inverted")

    @property
    def alpha(self) -> float:
        return self.eps_x / 4 if self.step_size is None else self.step_size


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 30
    initial_lr: float = 0.05
    decay_epochs: Tuple[int, ...] = field(default=(20, 25))
    decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    seed: int = 0
    # attack budget ramps linearly from 0 over the first warmup_epochs
    warmup_epochs: int = 0

    def __post_init__(self):
        decay = tuple(int(e) for e in self.decay_epochs)
        object.__setattr__(self, "decay_epochs", decay)
        if any(b <= a for a, b in zip(decay, decay[1:])):
            raise ValueError("decay_epochs must be strictly increasing")
        if decay and decay[-1] >= self.epochs:
            raise ValueError("decay_epochs must be < epochs")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for the 0-based ``epoch``."""
        n_decays = sum(1 for e in self.decay_epochs if e <= epoch)
        return self.initial_lr / self.decay_factor ** n_decays

    def eps_scale(self, epoch: int) -> float:
        if epoch >= self.warmup_epochs:
            return 1.0
        return epoch / self.warmup_epochs


def pgd_attack(spec: NetworkSpec, params: ParamSet, batch, labels, cfg: AttackConfig, rng: Optional[Rng] = None):
    """PGD on the inputs, returning the per-sample iterate of highest loss.

    The starting point counts as an iterate, so with ``rand_init=False`` the
    returned loss is never below the clean loss.
    """
    clean = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels)
    blo, bhi = cfg.input_bounds
    lo = np.maximum(clean - cfg.eps_x, blo)
    hi = np.minimum(clean + cfg.eps_x, bhi)
    x = clean.copy()
    if cfg.rand_init and cfg.eps_x > 0:
        if rng is None:
            raise ValueError("rand_init requires an rng")
        x = np.clip(clean + rng.uniform(-cfg.eps_x, cfg.eps_x, clean.shape), lo, hi)

    best_x = x.copy()
    best_loss = None
    n = len(labels)
    rows = np.arange(n)
    for t in range(cfg.steps + 1):
        logits, caches = forward_cached(spec, params, x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        z = e.sum(axis=1)
        losses = np.log(z) - shifted[rows, labels]
        if best_loss is None:
            best_loss = losses
        else:
            better = losses > best_loss
            best_loss = np.where(better, losses, best_loss)
            best_x[better] = x[better]
        if t == cfg.steps:
            break
        dlogits = e / z[:, None]
        dlogits[rows, labels] -= 1.0
        _, g = backprop(spec, params, caches, dlogits, wrt=(), need_input_grad=True)
        x = np.clip(x + cfg.alpha * np.sign(g), lo, hi)
    return best_x


def attack_dataset(spec, params, ds: Dataset, cfg: AttackConfig, rng: Optional[Rng] = None,
                   batch_size: int = 256) -> Dataset:
    """Adversarial copy of ``ds``; batches are attacked in stored order."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    out = np.empty_like(ds.inputs)
    for start in range(0, len(ds), batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = pgd_attack(spec, params, ds.inputs[sl], ds.labels[sl], cfg, rng)
    return ds.with_inputs(out)


def mean_loss(spec, params, ds: Dataset, batch_size: int = 1024) -> float:
    """Mean cross-entropy over the dataset, reduced in a fixed order."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for x, y in ds.batches(batch_size):
        logits = forward_cached(spec, params, x)[0]
        total += float(cross_entropy_per_sample(logits, y).sum())
    return total / len(ds)


def accuracy(spec, params, ds: Dataset, batch_size: int = 1024) -> float:
    """Percentage of argmax-correct predictions."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    correct = 0
    for x, y in ds.batches(batch_size):
        correct += int((predict(spec, params, x) == y).sum())
    return 100.0 * correct / len(ds)


def robust_loss(spec, params, ds: Dataset, cfg: AttackConfig, rng: Optional[Rng] = None,
                batch_size: int = 256) -> float:
    """Mean per-sample loss at the PGD-found adversarial inputs."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if rng is None:
        rng = Rng(0)
    adv = attack_dataset(spec, params, ds, cfg, rng, batch_size)
    return mean_loss(spec, params, adv)


def adversarial_train(
    spec: NetworkSpec,
    train: Dataset,
    heldout: Dataset,
    attack_cfg: Optional[AttackConfig],
    schedule: TrainSchedule,
    eval_cfg: Optional[AttackConfig] = None,
    init: Optional[ParamSet] = None,
):
    """Train with PGD examples in every batch; ``attack_cfg=None`` trains on clean data.

    After every epoch the held-out robust accuracy (clean accuracy for
    standard training) is measured and the best epoch is returned, the
    initial weights included; ties go to the earliest epoch.

    Returns ``(params, history)`` where history holds one dict per epoch.
    """
    rng = Rng(schedule.seed)
    params = init_params(spec, rng.child("init")) if init is None else init
    if eval_cfg is None:
        eval_cfg = attack_cfg

    def score(p, epoch):
        if eval_cfg is None:
            return accuracy(spec, p, heldout)
        adv = attack_dataset(spec, p, heldout, eval_cfg, rng.child("select", epoch))
        return accuracy(spec, p, adv)

    best_score = score(params, 0)
    best = params
    history = [{"epoch": 0, "lr": 0.0, "train_loss": float("nan"), "select_acc": best_score}]
    state: dict = {}
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        order = rng.child("shuffle", epoch).permutation(len(train))
        attack_rng = rng.child("attack", epoch)
        epoch_cfg = attack_cfg
        scale = schedule.eps_scale(epoch)
        if attack_cfg is not None and scale == 0.0:
            epoch_cfg = None
        elif attack_cfg is not None and scale < 1.0:
            epoch_cfg = replace(attack_cfg, eps_x=attack_cfg.eps_x * scale, step_size=attack_cfg.alpha * scale)
        total = 0.0
        for x, y in train.batches(schedule.batch_size, order):
            if epoch_cfg is not None:
                x = pgd_attack(spec, params, x, y, epoch_cfg, attack_rng)
            logits, caches = forward_cached(spec, params, x)
            loss, dlogits = loss_ce(logits, y)
            grads, _ = backprop(spec, params, caches, dlogits, need_input_grad=False)
            params = sgd_step(params, grads, lr, schedule.momentum, schedule.weight_decay, state=state)
            total += loss * len(y)
        acc = score(params, epoch + 1)
        history.append({"epoch": epoch + 1, "lr": lr, "train_loss": total / len(train), "select_acc": acc})
        log.info("epoch %d lr %.4g loss %.4f select_acc %.2f", epoch + 1, lr, total / len(train), acc)
        if acc > best_score:
            best_score, best = acc, params
    return best, history
