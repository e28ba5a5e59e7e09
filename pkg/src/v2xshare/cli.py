"""Command line entry point: ``v2xshare train | eval | sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config
from .harness import evaluate, sweep
from .policy import CompositeNet
from .train import run_training


def _load(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def cmd_train(args) -> int:
    cfg = _load(args)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(ep, result):
        logging.info("episode %d/%d return %.4g eps %.3f", ep + 1, cfg.train.episodes,
                     result.returns[-1], result.epsilons[-1])

    result = run_training(cfg.env, cfg.train, seed=seed, returns_csv=out / "returns.csv",
                          checkpoint_dir=out / "checkpoints" if args.checkpoint_every else None,
                          checkpoint_every=args.checkpoint_every, progress=progress)
    result.composite.save(Path(args.checkpoint) if args.checkpoint else out / "policy")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    composite = CompositeNet.load(args.checkpoint)
    spec = cfg.evaluation
    if args.seed is not None:
        spec = replace(spec, test_seeds=[args.seed])
    spec = replace(spec, mode=composite.mode, n_feedback=composite.n_feedback,
                   n_bits=composite.n_bits // max(composite.n_feedback, 1))
    report = evaluate(composite if composite.mode != "none" else None, cfg.env, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "eval_episodes.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "test_seed", "policy_return", "optimal_return", "random_return"])
        for i, row in enumerate(zip(report.episode_seeds, report.policy_returns,
                                    report.optimal_returns, report.random_returns)):
            w.writerow([i, int(row[0]), *(repr(float(v)) for v in row[1:])])
    summary = {"arp": report.arp, "random_arp": report.random_arp,
               "episodes": len(report.policy_returns)}
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"ARP {report.arp:.2f}%  random ARP {report.random_arp:.2f}%")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    paths = sweep(cfg.experiments, cfg.env, cfg.train, args.out,
                  checkpoint_root=args.checkpoint)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2xshare", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a policy (returns.csv + checkpoint)")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint directory (default OUT/policy)")
    p.add_argument("--checkpoint-every", type=int, default=None, help="episodes between checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against optimal and random")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the configured experiments, one CSV per figure")
    common(p)
    p.add_argument("--checkpoint", help="directory to store trained policies")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
