"""``momentum-arch`` command line: train, verify, compare, gen-data.

Exit codes: 0 success, 1 verification failure (or a diverged training seed),
2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import tasks
from .compare import QUANTITIES, REDUCERS, CompareError, compare_runs, write_plot_data
from .config import TASKS, ConfigError, ExperimentConfig, load_config, parse_seed_list, with_overrides
from .metrics import METRICS_FILE
from .runner import run_experiment
from .verify import SUITES, verify

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _seeds(text: str | None):
    if text is None:
        return None
    try:
        seeds = parse_seed_list(text)
    except ValueError as exc:
        raise ConfigError(f"seeds: {exc}") from None
    if not seeds:
        raise ConfigError("seeds: empty seed list")
    return seeds


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    changes = {}
    seeds = _seeds(args.seed)
    if seeds is not None:
        changes["seeds"] = seeds
    if args.out:
        changes["out_dir"] = args.out
    return with_overrides(cfg, **changes) if changes else cfg


def cmd_train(args) -> int:
    cfg = _resolve(args)
    result = run_experiment(cfg)
    print(f"wrote {Path(cfg.out_dir) / METRICS_FILE} ({len(result.records)} records)")
    for seed, status in result.status.items():
        print(f"seed {seed}: {status}")
    return EXIT_OK if result.ok else EXIT_FAIL


def cmd_verify(args) -> int:
    ok, report = verify(args.suite)
    sys.stdout.write(report)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_compare(args) -> int:
    try:
        comparison = compare_runs(args.runs, args.quantity, args.reducer)
    except (CompareError, OSError) as exc:
        print(f"compare: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(comparison.table())
    if args.out:
        write_plot_data(comparison, args.out)
        print(f"plot data: {args.out}")
    return EXIT_OK


def generate(cfg: ExperimentConfig, seed: int):
    if cfg.task == "point_cloud":
        return tasks.gen_point_cloud(seed)
    if cfg.task == "adding":
        return tasks.gen_adding_task(cfg.seq_len, seed)
    if cfg.task == "copy_rnn":
        return tasks.gen_copy_task_rnn(cfg.t_blank, cfg.n_symbols, cfg.copy_len, seed, cfg.full_loss)
    return tasks.gen_copy_task_transformer(cfg.max_len, cfg.n_symbols, seed)


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    if args.task:
        cfg = with_overrides(cfg, task=args.task, family=TASKS[args.task],
                             variant=cfg.variant if TASKS[args.task] == cfg.family else _default_variant(args.task))
    seed = cfg.seeds[0]
    try:
        sample = generate(cfg, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = tasks.to_columns(sample)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _default_variant(task: str) -> str:
    return {"ode": "node", "rnn": "rnn", "transformer": "linear"}[TASKS[task]]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="momentum-arch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train every seed of a config; writes manifest, metrics, timings")
    p.add_argument("--config", help="key = value config file (defaults apply when omitted)")
    p.add_argument("--seed", help="seed list overriding the config: 3, 0,2,5 or 0-9")
    p.add_argument("--out", help="output directory overriding out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run property suites and print a TSV report")
    p.add_argument("--suite", default="all", choices=SUITES + ("all",))
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="across-seed summary of two or more runs")
    p.add_argument("runs", nargs="+", help="run directories or metrics.tsv files")
    p.add_argument("--quantity", default="loss", choices=sorted(QUANTITIES))
    p.add_argument("--reducer", default="median", choices=REDUCERS)
    p.add_argument("--out", help="write whitespace-separated plot data here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-data", help="emit one task sample as columnar text")
    p.add_argument("--config", help="config whose task fields are used")
    p.add_argument("--task", choices=sorted(TASKS), help="task overriding the config")
    p.add_argument("--seed", help="sample seed (first of the list is used)")
    p.add_argument("--out", help="output file (stdout when omitted)")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
