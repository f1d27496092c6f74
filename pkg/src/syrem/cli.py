"""Command line entry point: ``syrem {gen-data,run,suite,report}``.

Exit codes: 0 success, 1 config error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import default_experiment, dump_config, load_config
from .estimator import STRATEGIES
from .harness import ConfigError, RunRecord, report, run_experiment, summary_text, with_data_seed
from .stream import DataError, Horizon, export_stream, load_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_IO = 0, 1, 2, 3
SUITE_ORDER = ("vanilla", "vanilla_gp", "syrem_r", "syrem", "jotr")

log = logging.getLogger("syrem")


def _configs(args):
    stream, strategy = load_config(args.config) if args.config else default_experiment()
    seeds = strategy.seeds
    overrides = {k: getattr(args, f"seed_{k}") for k in ("data", "init", "buffer", "selection")
                 if getattr(args, f"seed_{k}", None) is not None}
    if overrides:
        strategy = dataclasses.replace(strategy, seeds=dataclasses.replace(seeds, **overrides))
    return stream, strategy


def _datasets(args, stream):
    if not getattr(args, "data", None):
        return None
    return load_csv(args.data, Horizon(stream.t_obs, stream.t_pred, stream.dt), stream.n_surrounding)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    stream, strategy = _configs(args)
    stream = with_data_seed(stream, strategy.seeds.data)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    export_stream(args.out, stream)
    log.info("wrote %d tasks to %s", len(stream.tasks), args.out)
    return EXIT_OK


def _run_one(stream, strategy, datasets, label):
    return run_experiment(stream, strategy, datasets, label=label)


def cmd_run(args) -> int:
    stream, strategy = _configs(args)
    if args.strategy:
        strategy = dataclasses.replace(strategy, strategy=args.strategy)
    out = _out_dir(args.out)
    rec = run_experiment(stream, strategy, _datasets(args, stream), eval_every=args.eval_every)
    path = rec.save(out / f"{rec.label}_seed{strategy.seeds.data}.json")
    dump_config(out / "config.yaml", stream, strategy)
    print(summary_text([rec]), end="")
    log.info("saved %s", path)
    return EXIT_OK


def cmd_suite(args) -> int:
    stream, base = _configs(args)
    out = _out_dir(args.out)
    datasets = _datasets(args, stream)
    jobs = []
    for k in range(args.n_seeds):
        off = base.seeds
        seeds = dataclasses.replace(off, data=off.data + k, init=off.init + k,
                                    buffer=off.buffer + k, selection=off.selection + k)
        for name in args.strategies:
            strat = dataclasses.replace(base, strategy=name, seeds=seeds)
            jobs.append((strat, f"{name}_seed{seeds.data}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futures = [pool.submit(_run_one, stream, s, datasets, lab) for s, lab in jobs]
            records = [f.result() for f in futures]
    else:
        records = [_run_one(stream, s, datasets, lab) for s, lab in jobs]
    for rec in records:
        rec.save(out / f"{rec.label}.json")
    dump_config(out / "config.yaml", stream, base)
    report(records, out / "report")
    print(summary_text(records), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    paths = []
    for p in args.records:
        p = Path(p)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not paths:
        raise DataError("no run records found")
    try:
        records = [RunRecord.load(p) for p in paths]
    except (ValueError, KeyError) as exc:
        raise DataError(str(exc)) from exc
    report(records, args.out)
    print(summary_text(records), end="")
    return EXIT_OK


def _add_common(p, data=True):
    p.add_argument("--config", help="YAML experiment config (defaults to the built-in suite)")
    for k in ("data", "init", "buffer", "selection"):
        p.add_argument(f"--seed-{k}", type=int, dest=f"seed_{k}")
    if data:
        p.add_argument("--data", help="trajectory CSV to use instead of generated tasks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syrem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic tasks to a CSV file")
    _add_common(p, data=False)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run one strategy")
    _add_common(p)
    p.add_argument("--strategy", choices=sorted(STRATEGIES))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--eval-every", type=int, default=None, help="extra joint-test evaluations (steps)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run every strategy over several seed sets")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-seeds", type=int, default=1, help="seed sets; set k adds k to every seed")
    p.add_argument("--strategies", nargs="+", default=list(SUITE_ORDER), choices=sorted(STRATEGIES))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("report", help="render tables from saved run records")
    p.add_argument("records", nargs="+", help="record files or directories of them")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
