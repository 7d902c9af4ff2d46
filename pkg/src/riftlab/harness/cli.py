"""Command-line entry point.

Every subcommand reads a RunConfig (``--config``, defaults otherwise),
echoes the resolved configuration, and reads / writes artifacts in ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from ..attack import adversarial_train
from ..mrc import mrc_scan
from ..rift import finetune, resolve_module_set, sweep_and_select
from .checkpoint import CheckpointError, atomic_write, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .metrics import evaluate

log = logging.getLogger("riftlab")

THETA_STD = "theta_std.ckpt"
THETA_AT = "theta_at.ckpt"
THETA_FT = "theta_ft.ckpt"
THETA_STAR = "theta_ft_star.ckpt"
MRC_REPORT = "mrc_report.tsv"
SWEEP = "sweep.tsv"
SUMMARY = "summary.txt"


def _write_text(path, text):
    atomic_write(path, text.encode())


def _history_text(history):
    return "".join(
        f"{h['epoch']}\t{h['lr']:.6g}\t{h['train_loss']:.6f}\t{h.get('select_acc', h.get('heldout_acc')):.4f}\n"
        for h in history
    )


def _path(args, name, override=None):
    return override if override else os.path.join(args.out, name)


def _train(args, rc, adversarial):
    spec = rc.network()
    train, test = rc.datasets()
    attack = rc.attack()
    params, history = adversarial_train(spec, train, test, attack if adversarial else None, rc.schedule(),
                                        eval_cfg=attack if adversarial else None)
    tag = "at" if adversarial else "std"
    save_checkpoint(params, spec, _path(args, THETA_AT if adversarial else THETA_STD))
    _write_text(_path(args, f"train_{tag}.log"), _history_text(history))
    text = evaluate(spec, params, test, attack, rc["seed"]).to_text()
    _write_text(_path(args, f"metrics_{tag}.txt"), text)
    print(text, end="")


def cmd_train_std(args, rc):
    _train(args, rc, adversarial=False)


def cmd_train_at(args, rc):
    _train(args, rc, adversarial=True)


def cmd_eval(args, rc):
    spec = rc.network()
    _, test = rc.datasets()
    params = load_checkpoint(_path(args, THETA_AT, args.ckpt), spec)
    print(evaluate(spec, params, test, rc.attack(), rc["seed"]).to_text(), end="")


def cmd_mrc_scan(args, rc):
    spec = rc.network()
    train, _ = rc.datasets()
    theta_at = load_checkpoint(_path(args, THETA_AT, args.at), spec)
    report = mrc_scan(spec, theta_at, train, rc.mrc())
    _write_text(_path(args, MRC_REPORT), report.to_text())
    print(report.to_text(), end="")


def _summary(sweep):
    base, star = sweep.base, sweep.star
    return (
        f"modules\t{','.join(sweep.module_set)}\n"
        f"alpha_star\t{sweep.alpha_star:.4f}\n"
        f"std_before\t{base.std_acc:.4f}\n"
        f"std_after\t{star.std_acc:.4f}\n"
        f"adv_before\t{base.adv_acc:.4f}\n"
        f"adv_after\t{star.adv_acc:.4f}\n"
        f"delta_std\t{star.std_acc - base.std_acc:+.4f}\n"
        f"delta_adv\t{star.adv_acc - base.adv_acc:+.4f}\n"
    )


def cmd_rift(args, rc):
    spec = rc.network()
    train, test = rc.datasets()
    theta_at = load_checkpoint(_path(args, THETA_AT, args.at), spec)
    report = mrc_scan(spec, theta_at, train, rc.mrc())
    _write_text(_path(args, MRC_REPORT), report.to_text())
    modules = resolve_module_set(spec, rc["finetune.modules"], report)
    theta_ft, history = finetune(spec, theta_at, modules, train, test, rc.finetune())
    sweep = sweep_and_select(spec, theta_at, theta_ft, test, rc.attack(), rc["sweep.tolerance"],
                             rc["sweep.alpha_step"], rc["seed"])
    sweep.module_set = tuple(modules)
    save_checkpoint(theta_ft, spec, _path(args, THETA_FT))
    save_checkpoint(sweep.theta_star, spec, _path(args, THETA_STAR))
    _write_text(_path(args, "finetune.log"), _history_text(history))
    _write_text(_path(args, SWEEP), sweep.to_text())
    summary = _summary(sweep)
    _write_text(_path(args, SUMMARY), summary)
    print(summary, end="")


def cmd_sweep(args, rc):
    spec = rc.network()
    _, test = rc.datasets()
    theta_at = load_checkpoint(_path(args, THETA_AT, args.at), spec)
    theta_ft = load_checkpoint(_path(args, THETA_FT, args.ft), spec)
    sweep = sweep_and_select(spec, theta_at, theta_ft, test, rc.attack(), rc["sweep.tolerance"],
                             rc["sweep.alpha_step"], rc["seed"])
    _write_text(_path(args, SWEEP), sweep.to_text())
    print(sweep.to_text(), end="")
    print(f"alpha_star\t{sweep.alpha_star:.4f}")


def cmd_report(args, rc):
    spec = rc.network()
    _, test = rc.datasets()
    attack, seed = rc.attack(), rc["seed"]
    before = evaluate(spec, load_checkpoint(_path(args, THETA_AT, args.at), spec), test, attack, seed)
    after = evaluate(spec, load_checkpoint(_path(args, THETA_STAR, args.star), spec), test, attack, seed)
    rows = [
        ("AT", before.std_acc, before.ood_acc, before.adv_acc),
        ("AT+RiFT", after.std_acc, after.ood_acc, after.adv_acc),
    ]
    lines = ["model\tStd\tOOD\tAdv"]
    lines += [f"{name}\t{s:.4f}\t{o:.4f}\t{a:.4f}" for name, s, o, a in rows]
    lines.append("Delta\t" + "\t".join(f"{b - a:+.4f}" for a, b in zip(rows[0][1:], rows[1][1:])))
    print("\n".join(lines))


COMMANDS = {
    "train-std": cmd_train_std,
    "train-at": cmd_train_at,
    "mrc-scan": cmd_mrc_scan,
    "rift": cmd_rift,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="riftlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="RunConfig file (key = value lines)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=".", help="artifact directory (default: .)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("mrc-scan", "rift", "sweep", "report"):
            p.add_argument("--at", help=f"adversarially trained checkpoint (default: OUT/{THETA_AT})")
        if name == "eval":
            p.add_argument("--ckpt", help=f"checkpoint to evaluate (default: OUT/{THETA_AT})")
        if name == "sweep":
            p.add_argument("--ft", help=f"fine-tuned checkpoint (default: OUT/{THETA_FT})")
        if name == "report":
            p.add_argument("--star", help=f"selected RiFT checkpoint (default: OUT/{THETA_STAR})")
        if name == "rift":
            p.add_argument("--module", help="modules to fine-tune: NAME[,NAME...] or a selector")
        if name in ("rift", "sweep"):
            p.add_argument("--alpha-step", type=float, help="interpolation grid step")
    return parser


def resolve_config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        rc.set(key.strip(), value)
    if args.seed is not None:
        rc.set("seed", str(args.seed))
    if getattr(args, "module", None):
        rc.set("finetune.modules", args.module)
    if getattr(args, "alpha_step", None) is not None:
        rc.set("sweep.alpha_step", repr(args.alpha_step))
    return rc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        print("".join(f"# {line}\n" for line in rc.to_text().splitlines()), end="")
        COMMANDS[args.command](args, rc)
    except (ConfigError, CheckpointError, OSError, ValueError, KeyError) as exc:
        print(f"riftlab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
