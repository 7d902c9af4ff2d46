"""Standard, adversarial (worst of three PGD runs) and corruption accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..attack import AttackConfig, accuracy, attack_dataset
from ..numerics import Rng, derive_seed
from .corruptions import CorruptionSpec, all_corruptions, corrupt
from .data import Dataset


def eval_std(spec, params, ds: Dataset) -> float:
    return accuracy(spec, params, ds)


def adv_seeds(seed: int) -> Tuple[int, int, int]:
    return tuple(derive_seed(seed, "eval_adv", i) for i in range(3))


def eval_adv_runs(spec, params, ds: Dataset, attack_cfg: AttackConfig, seeds: Sequence[int]):
    """Adversarial accuracy of each seeded PGD run."""
    return [accuracy(spec, params, attack_dataset(spec, params, ds, attack_cfg, Rng(s))) for s in seeds]


def eval_adv(spec, params, ds: Dataset, attack_cfg: AttackConfig, seeds: Sequence[int]) -> float:
    """Worst adversarial accuracy over three independently seeded PGD runs."""
    if len(seeds) != 3:
        raise ValueError("eval_adv needs exactly 3 seeds")
    return min(eval_adv_runs(spec, params, ds, attack_cfg, seeds))


def eval_ood(spec, params, ds: Dataset, corruptions: Optional[Sequence[CorruptionSpec]] = None,
             seed: int = 0) -> Tuple[Dict[Tuple[str, int], float], Dict[str, float], float]:
    """Accuracy per (kind, severity) cell, per kind, and the uniform mean of all cells."""
    if corruptions is None:
        corruptions = all_corruptions()
    cells = {}
    for c in corruptions:
        cells[(c.kind, c.severity)] = accuracy(spec, params, corrupt(ds, c, seed))
    per_kind = {}
    for (kind, _), acc in cells.items():
        per_kind.setdefault(kind, []).append(acc)
    per_kind = {k: float(np.mean(v)) for k, v in per_kind.items()}
    mean = float(np.mean(list(cells.values())))
    return cells, per_kind, mean


@dataclass
class MetricsReport:
    std_acc: float
    adv_acc: float
    ood_acc: float
    ood_per_kind: Dict[str, float] = field(default_factory=dict)
    ood_cells: Dict[Tuple[str, int], float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"std_acc\t{self.std_acc:.4f}",
            f"adv_acc\t{self.adv_acc:.4f}",
            f"ood_acc\t{self.ood_acc:.4f}",
        ]
        for kind, acc in self.ood_per_kind.items():
            lines.append(f"ood.{kind}\t{acc:.4f}")
        for (kind, sev), acc in self.ood_cells.items():
            lines.append(f"ood.{kind}.{sev}\t{acc:.4f}")
        return "\n".join(lines) + "\n"


def evaluate(spec, params, ds: Dataset, attack_cfg: AttackConfig, seed: int) -> MetricsReport:
    cells, per_kind, mean = eval_ood(spec, params, ds, seed=seed)
    return MetricsReport(
        std_acc=eval_std(spec, params, ds),
        adv_acc=eval_adv(spec, params, ds, attack_cfg, adv_seeds(seed)),
        ood_acc=mean,
        ood_per_kind=per_kind,
        ood_cells=cells,
    )
