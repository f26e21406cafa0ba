"""Command line entry point: ``slt run | sweep | eval | inspect-checkpoint``."""
import argparse
import json
import sys

from .checkpoint import describe_checkpoint, load_checkpoint
from .config import ExperimentConfig, apply_overrides, load_config
from .errors import SLTError
from .harness import build_dataset, run, sweep
from .tickets import evaluate


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(cfg, args.set)


def _add_config_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def cmd_run(args):
    cfg = _config(args)
    report = run(cfg, args.out)
    print(json.dumps(report.to_json(), sort_keys=True))


def cmd_sweep(args):
    cfg = _config(args)
    values = [v for v in args.values.split(",") if v]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    rows = sweep(cfg, args.axis, values, seeds, args.out, args.workers)
    for row in rows:
        print(f"{row['axis']}={row['value']}: {row['mean_test_acc']:.4f} +/- {row['std_test_acc']:.4f} "
              f"({row['runs'] - row['failed']}/{row['runs']} ok)")


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    ds = build_dataset(ckpt.config)
    split = ds.test if args.split == "test" else ds.train
    ticket = ckpt.ticket["indices"] if ckpt.ticket else None
    res = evaluate(ckpt.model, split, ticket=ticket)
    print(json.dumps(dict(accuracy=res.accuracy, spike_rate=res.spike_rate, synops=res.synops,
                          loss=res.loss), sort_keys=True))


def cmd_inspect(args):
    print(json.dumps(describe_checkpoint(args.checkpoint), sort_keys=True, indent=1))


def build_parser():
    parser = argparse.ArgumentParser(prog="slt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory (default: out_dir from the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one axis over values and seeds")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=["pr_c", "pr_p", "T", "lambda"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--workers", type=int, help="worker processes (default: SLT_THREADS or 1)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its configured dataset")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-checkpoint", help="list checkpoint sections")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SLTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
