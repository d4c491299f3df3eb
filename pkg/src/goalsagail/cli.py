"""Command-line entry points.

Exit codes: 0 ok, 1 configuration or input error, 2 runtime invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config, preset, set_path
from .demogen import PROFILES, analyze_coverage, generate_demos, load_dataset, save_dataset
from .envs import make_env
from .errors import ConfigError, DatasetFormatError, DemoGenerationError, InvariantViolation
from .training import read_metrics_csv, run_eval, run_suite, run_training, summarize_curves

log = logging.getLogger("goalsagail")


def _build_config(args):
    if args.config:
        cfg = load_config(args.config, base=preset(args.preset, args.env, args.algo) if args.preset else None)
    else:
        cfg = preset(args.preset or "desk", args.env, args.algo)
    for flag, path in (("env", "env"), ("algo", "algo"), ("epochs", "epochs"), ("seed", "seed"), ("demos", "demos")):
        value = getattr(args, flag, None)
        if value is not None:
            set_path(cfg, path, value)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_path(cfg, key.strip(), value)
    if getattr(args, "seeds", None):
        try:
            cfg.seeds = [int(s) for s in args.seeds.split(",")]
        except ValueError:
            raise ConfigError(f"--seeds expects integers, got {args.seeds!r}") from None
    elif args.seed is not None:
        cfg.seeds = [cfg.seed]
    return cfg.validate()


def _add_train_args(p):
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--preset", choices=("desk", "paper"), help="base budget (default: desk)")
    p.add_argument("--env")
    p.add_argument("--algo")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--demos", help="demonstration dataset (JSONL)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config path, e.g. agent.gamma=0.95")
    p.add_argument("--out", required=True, help="output directory")


def cmd_train(args):
    cfg = _build_config(args)

    def report(trainer):
        r = trainer.metrics.rows[-1]
        print(f"epoch {r.epoch:3d}  success {r.success_rate:.3f}  return {r.mean_return:8.3f}  "
              f"admit {r.admit_direct}/{r.admit_better}  reject {r.reject}  delta {r.delta_gail:.3f}", flush=True)

    result = run_training(cfg, args.out, resume=not args.no_resume, on_epoch=report)
    print(f"final success {result.final_eval.success_rate:.3f}; checkpoint {result.checkpoint}")
    return 0


def cmd_eval(args):
    res = run_eval(args.checkpoint, args.env, args.episodes, args.seed)
    payload = {"success_rate": res.success_rate, "mean_return": res.mean_return, "episodes": len(res.successes)}
    if args.records:
        payload["records"] = [{"success": bool(s), "return": float(r)} for s, r in zip(res.successes, res.returns)]
    print(json.dumps(payload, indent=None if not args.records else 1))
    return 0


def cmd_demo_gen(args):
    env = make_env(args.env)
    if args.profile not in PROFILES:
        raise ConfigError(f"unknown profile {args.profile!r}; choose from {sorted(PROFILES)}")
    overrides = {k: v for k, v in (("noise_scale", args.noise), ("coverage_skew", args.skew),
                                    ("hold_fraction_target", args.hold), ("max_attempts", args.max_attempts))
                 if v is not None}
    try:
        profile = replace(PROFILES[args.profile], **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dataset = generate_demos(env, profile, args.count, args.seed)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} demonstrations to {args.out}")
    return 0


def cmd_demo_analyze(args):
    dataset = load_dataset(args.dataset)
    report = analyze_coverage(dataset, bins=args.bins)
    print(report.table())
    print(f"mass in lowest third: {report.mass_below(1 / 3):.3f}")
    if args.csv:
        Path(args.csv).write_text(report.csv())
    return 0


def cmd_suite(args):
    cfg = _build_config(args)
    rows, failures = run_suite(cfg, args.out)
    for r in rows:
        print(f"epoch {r['epoch']:3d}  seeds {r['n_seeds']}  success {r['success_mean']:.3f} "
              f"[{r['success_min']:.3f}, {r['success_max']:.3f}]")
    if failures:
        print(f"warning: seeds failed: {sorted(failures)}", file=sys.stderr)
    return 0


def cmd_curves(args):
    header = f"{'file':40s} {'epochs':>6s} {'final':>6s} {'best':>6s} {'to60':>5s} {'to90':>5s}"
    print(header)
    for path in args.csv:
        rows = read_metrics_csv(path)
        s = summarize_curves(rows)
        print(f"{str(path)[-40:]:40s} {s['epochs']:6d} {s['final_success']:6.3f} {s['best_success']:6.3f} "
              f"{s['epochs_to_60']:5d} {s['epochs_to_90']:5d}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="goalsagail", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one seed")
    _add_train_args(p)
    p.add_argument("--no-resume", action="store_true", help="ignore an existing checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("suite", help="train every seed and aggregate the curves")
    _add_train_args(p)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("eval", help="evaluate a checkpoint without exploration")
    p.add_argument("checkpoint")
    p.add_argument("--env")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--records", action="store_true", help="include per-episode records")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-gen", help="generate scripted demonstrations")
    p.add_argument("--env", required=True)
    p.add_argument("--profile", default="optimal")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float)
    p.add_argument("--skew", type=float)
    p.add_argument("--hold", type=float)
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo_gen)

    p = sub.add_parser("demo-analyze", help="goal-distance coverage of a dataset")
    p.add_argument("dataset")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--csv", help="write the histogram bins here")
    p.set_defaults(func=cmd_demo_analyze)

    p = sub.add_parser("curves", help="summarize metrics CSVs")
    p.add_argument("csv", nargs="+")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolation, DemoGenerationError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
