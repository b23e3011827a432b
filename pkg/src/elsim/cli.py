"""Command line entry point: ``elsim train|eval|transfer``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .agent import Elsim, ElsimConfig, run_transfer, write_density, write_metrics
from .envs import ENV_FACTORIES, ascii_layout, make_env
from .errors import ElsimError
from .snapshot import load_snapshot, save_snapshot
from .tree import skill_str

log = logging.getLogger("elsim")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value or JSON file of ElsimConfig fields")
    common.add_argument("--env", choices=sorted(ENV_FACTORIES), default="empty")
    common.add_argument("--out", type=Path, default=Path("runs/latest"))
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--snapshot", type=Path, help="tree.json to start from")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="elsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    train = sub.add_parser("train", parents=[common], help="grow a skill tree")
    train.add_argument("--steps", type=int, help="environment steps (default: total_steps)")
    sub.add_parser("eval", parents=[common], help="write per-skill visit densities")
    transfer = sub.add_parser("transfer", parents=[common],
                              help="reuse frozen skills with a fresh tree-policy")
    transfer.add_argument("--episodes", type=int, default=2000)
    return parser


def load_config(args) -> ElsimConfig:
    cfg = ElsimConfig.from_file(args.config) if args.config else ElsimConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ElsimError("seed must be non-negative")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def make_agent(args, cfg: ElsimConfig) -> Elsim:
    spec = make_env(args.env)
    if args.snapshot is None:
        return Elsim(cfg, spec)
    tree, qt = load_snapshot(args.snapshot)
    return Elsim(cfg, spec, tree=tree, qt=qt)


def write_outputs(agent: Elsim, out: Path, densities: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "layout.txt").write_text(ascii_layout(agent.env_spec))
    save_snapshot(out / "tree.json", agent.tree, agent.qt)
    for g, grid in (densities or {}).items():
        write_density(out / f"density_{skill_str(g)}.csv", grid)


def cmd_train(args) -> None:
    cfg = load_config(args)
    agent = make_agent(args, cfg)
    agent.train(args.steps)
    log.info("trained %d steps, %d leaves", agent.steps, len(agent.tree.leaves()))
    write_outputs(agent, args.out, agent.evaluate_skills())
    write_metrics(args.out / "metrics.csv", agent.artifacts.metrics)


def cmd_eval(args) -> None:
    if args.snapshot is None:
        raise ElsimError("eval needs --snapshot")
    agent = make_agent(args, load_config(args))
    write_outputs(agent, args.out, agent.evaluate_skills())


def cmd_transfer(args) -> None:
    if args.snapshot is None:
        raise ElsimError("transfer needs --snapshot")
    agent = make_agent(args, load_config(args))
    res = run_transfer(agent, agent.env_spec, args.episodes)
    write_outputs(agent, args.out)
    write_metrics(args.out / "metrics.csv", res.metrics)
    write_metrics(args.out / "baseline.csv", res.baseline_metrics)


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "transfer": cmd_transfer}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ElsimError, OSError) as exc:
        print(f"elsim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
