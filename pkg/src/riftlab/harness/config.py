"""Run configuration: ``key = value`` lines with dotted namespaces.

Every key has a default; unknown keys are rejected. ``#`` starts a comment.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Any, Callable, Dict, Optional, Tuple

from ..attack import AttackConfig, TrainSchedule
from ..models import mlp, small_cnn
from ..mrc import MRCConfig
from ..rift import FineTuneConfig
from .data import KINDS, Dataset, gen_synthetic


class ConfigError(Exception):
    pass


def _float(s: str) -> float:
    # accepts fractions such as 8/255
    try:
        return float(Fraction(s.strip())) if "/" in s else float(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {s!r}") from exc


def _int(s: str) -> int:
    try:
        return int(s)
    except ValueError as exc:
        raise ConfigError(f"not an integer: {s!r}") from exc


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _ints(s: str) -> Tuple[int, ...]:
    return tuple(_int(p) for p in s.split(",") if p.strip())


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("auto", "none", "") else _float(s)


def _kind(s: str) -> str:
    if s not in KINDS:
        raise ConfigError(f"data.kind must be one of {KINDS}, got {s!r}")
    return s


# key -> (default text, parser, description)
SCHEMA: Dict[str, Tuple[str, Callable[[str], Any], str]] = {
    "seed": ("0", _int, "master seed for data, init, attacks and evaluation"),
    "data.kind": ("shapes8x8", _kind, "blobs2d | rings2d | shapes8x8"),
    "data.n_train": ("2000", _int, "training set size"),
    "data.n_test": ("1000", _int, "held-out set size"),
    "data.noise": ("0.1", _float, "per-pixel jitter std for shapes8x8"),
    "data.contrast": ("0.25", _float, "mean shape-vs-background contrast for shapes8x8"),
    "model.channels": ("8,16", _ints, "conv widths (shapes8x8); second conv has stride 2"),
    "model.hidden": ("32", _ints, "hidden widths: one fc layer for the CNN, the MLP stack for 2D data"),
    "attack.eps_x": ("8/255", _float, "L-inf input budget"),
    "attack.step_size": ("auto", _opt_float, "PGD step; auto = eps_x / 4"),
    "attack.steps": ("10", _int, "PGD iterations"),
    "attack.rand_init": ("true", _bool, "uniform random start inside the budget"),
    "train.epochs": ("30", _int, "training epochs"),
    "train.lr": ("0.05", _float, "initial learning rate"),
    "train.decay_epochs": ("22", _ints, "epochs at which the rate is divided by decay_factor"),
    "train.decay_factor": ("10", _float, "learning-rate divisor at each decay epoch"),
    "train.momentum": ("0.9", _float, "SGD momentum"),
    "train.weight_decay": ("5e-4", _float, "L2 weight decay"),
    "train.batch_size": ("64", _int, "minibatch size"),
    "train.warmup_epochs": ("5", _int, "epochs over which the attack budget ramps up from 0"),
    "mrc.eps_w": ("0.1", _float, "weight-perturbation radius relative to the module norm"),
    "mrc.steps": ("10", _int, "ascent epochs over the fixed adversarial set"),
    "mrc.gamma": ("1.0", _float, "ascent learning rate"),
    "mrc.batch_size": ("128", _int, "ascent minibatch size"),
    "mrc.project_and_continue": ("false", _bool, "keep ascending after the first projection"),
    "finetune.lr": ("0.001", _float, "initial fine-tuning rate"),
    "finetune.epochs": ("10", _int, "fine-tuning epochs"),
    "finetune.decay_at_epoch": ("5", _int, "epoch after which the rate is divided by decay_factor"),
    "finetune.decay_factor": ("10", _float, "fine-tuning rate divisor"),
    "finetune.momentum": ("0.9", _float, "SGD momentum"),
    "finetune.weight_decay": ("5e-4", _float, "L2 weight decay on tuned modules"),
    "finetune.batch_size": ("64", _int, "minibatch size"),
    "finetune.modules": ("non-robust-critical", str,
                         "non-robust-critical | robust-critical | all | last | topK | name[,name...]"),
    "sweep.alpha_step": ("0.05", _float, "interpolation grid step"),
    "sweep.tolerance": ("0.1", _float, "allowed adversarial accuracy loss, percentage points"),
}


class RunConfig:
    def __init__(self, values: Optional[Dict[str, str]] = None):
        self.raw = {k: v[0] for k, v in SCHEMA.items()}
        self.values = {}
        for k, v in (values or {}).items():
            self.set(k, v)
        for k, (default, parse, _) in SCHEMA.items():
            if k not in self.values:
                self.values[k] = parse(default)

    def set(self, key: str, text: str) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = SCHEMA[key][1](str(text).strip())
        self.raw[key] = str(text).strip()

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = value
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.parse(f.read())

    def to_text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in SCHEMA)

    # -- builders -----------------------------------------------------------

    def datasets(self) -> Tuple[Dataset, Dataset]:
        kind, seed = self["data.kind"], self["seed"]
        opts = {"noise": self["data.noise"], "contrast": self["data.contrast"]}
        train = gen_synthetic(kind, self["data.n_train"], seed, "train", **opts)
        test = gen_synthetic(kind, self["data.n_test"], seed, "test", **opts)
        return train, test

    def network(self):
        if self["data.kind"] == "shapes8x8":
            hidden = self["model.hidden"]
            if len(hidden) != 1:
                raise ConfigError("the CNN takes exactly one model.hidden width")
            return small_cnn(self["model.channels"], hidden[0], 4)
        return mlp(2, self["model.hidden"], 2)

    def attack(self) -> AttackConfig:
        return AttackConfig(self["attack.eps_x"], self["attack.step_size"], self["attack.steps"],
                            self["attack.rand_init"])

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(self["train.epochs"], self["train.lr"], self["train.decay_epochs"],
                             self["train.decay_factor"], self["train.momentum"], self["train.weight_decay"],
                             self["train.batch_size"], self["seed"], self["train.warmup_epochs"])

    def mrc(self) -> MRCConfig:
        return MRCConfig(self["mrc.eps_w"], 2, self["mrc.steps"], self["mrc.gamma"], self.attack(),
                         self["mrc.batch_size"], self["mrc.project_and_continue"], self["seed"])

    def finetune(self) -> FineTuneConfig:
        return FineTuneConfig(self["finetune.lr"], self["finetune.epochs"], self["finetune.decay_at_epoch"],
                              self["finetune.decay_factor"], self["finetune.momentum"],
                              self["finetune.weight_decay"], self["finetune.batch_size"], (), self["seed"])
