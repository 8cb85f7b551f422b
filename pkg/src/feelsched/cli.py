"""Command-line entry point: ``run``, ``compare`` and ``validate-config``.

Exit codes: 0 ok, 1 usage, 2 config, 3 runtime.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, to_text
from .sim import SchedulerKind, run, summarize

log = logging.getLogger("feelsched")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class ExperimentSpec:
    config_path: Path
    schedulers: list[str]
    seeds: list[int]
    out_dir: Path
    overrides: list[str] = field(default_factory=list)
    sweep: dict[str, list[str]] = field(default_factory=dict)

    def cells(self):
        keys = sorted(self.sweep)
        for values in itertools.product(*(self.sweep[k] for k in keys)):
            point = [f"{k}={v}" for k, v in zip(keys, values)]
            for sched in self.schedulers:
                for seed in self.seeds:
                    name = "__".join([str(SchedulerKind.parse(sched)).replace(":", "-"), f"seed{seed}", *point])
                    yield name, sched, seed, point


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _parse_sweep(items) -> dict[str, list[str]]:
    out = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise UsageError(f"--sweep expects key=v1,v2,...; got {item!r}")
        out[key.strip()] = [v.strip() for v in values.split(",")]
    return out


def _run_cell(config_path, overrides, sched, seed, point, out_dir):
    cfg = load_config(config_path, [*overrides, *point, f"seed={seed}"])
    logs = run(cfg, SchedulerKind.parse(sched), out_dir=out_dir)
    return summarize(logs)


SUMMARY_FIELDS = ("rounds", "mean_energy_per_device", "final_accuracy", "final_loss",
                  "window_mean_accuracy", "max_queue", "final_max_queue", "pruned_total")


def cmd_run(spec: ExperimentSpec, jobs: int = 1) -> int:
    # validate every cell up front so a bad override fails before any work
    cells = list(spec.cells())
    for _, sched, seed, point in cells:
        SchedulerKind.parse(sched)
        load_config(spec.config_path, [*spec.overrides, *point, f"seed={seed}"])
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    args = [(spec.config_path, spec.overrides, sched, seed, point, spec.out_dir / name)
            for name, sched, seed, point in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, *zip(*args)))
    else:
        results = [_run_cell(*a) for a in args]
    with open(spec.out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "scheduler", "seed", "overrides", *SUMMARY_FIELDS])
        for (name, sched, seed, point), res in zip(cells, results):
            w.writerow([name, str(SchedulerKind.parse(sched)), seed, ";".join(point),
                        *(repr(res[k]) if isinstance(res[k], float) else res[k] for k in SUMMARY_FIELDS)])
            log.info("%s: energy/device %.4g J, final accuracy %.4f", name,
                     res["mean_energy_per_device"], res["final_accuracy"])
    return EXIT_OK


def _read_rounds(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) if r[k] else math.nan for r in rows]) for k in rows[0]}


TABLES = {"accuracy": "test_accuracy", "energy": "cum_mean_energy", "loss": "test_loss"}


def cmd_compare(run_dir: Path, out_dir: Path | None = None) -> int:
    """Merge per-round series of every run under ``run_dir`` into aligned tables."""
    runs = sorted(p.parent for p in Path(run_dir).glob("*/manifest.json"))
    if not runs:
        raise ConfigError("dir", f"no runs with manifest.json under {run_dir}")
    reference = None
    series: dict[str, dict[int, dict[str, np.ndarray]]] = {}
    for r in runs:
        manifest = json.loads((r / "manifest.json").read_text())
        cfg = dict(manifest["config"])
        cfg.pop("seed")
        if reference is None:
            reference = (r, cfg)
        elif cfg != reference[1]:
            diff = sorted(k for k in cfg if cfg[k] != reference[1].get(k))
            raise ConfigError("config", f"{r.name} differs from {reference[0].name} in {', '.join(diff)}")
        series.setdefault(manifest["scheduler"], {})[manifest["seed"]] = _read_rounds(r / "rounds.csv")

    out_dir = Path(out_dir or run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rounds = next(iter(next(iter(series.values())).values()))["round"].astype(int)
    for table, column in TABLES.items():
        header, cols = ["round"], [rounds]
        for sched in sorted(series):
            per_seed = [series[sched][s][column] for s in sorted(series[sched])]
            for s, v in zip(sorted(series[sched]), per_seed):
                header.append(f"{sched}_seed{s}")
                cols.append(v)
            stack = np.vstack(per_seed)
            header += [f"{sched}_mean", f"{sched}_std"]
            cols += [stack.mean(axis=0), stack.std(axis=0, ddof=1) if len(stack) > 1 else np.zeros(len(rounds))]
        with open(out_dir / f"{table}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(rounds)):
                w.writerow([int(rounds[i])] + ["" if math.isnan(c[i]) else repr(float(c[i])) for c in cols[1:]])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="feelsched", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run experiment cells and write CSV logs")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2")
    r.add_argument("--scheduler", action="append", metavar="NAME",
                   help="proposed, proposed:amount_only, proposed:distribution_only or random (repeatable)")
    r.add_argument("--seeds", default="0", help="comma list or ranges, e.g. 0,1,5-7")
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("compare", help="merge completed runs into aligned tables")
    c.add_argument("dir", type=Path)
    c.add_argument("--out", type=Path)

    v = sub.add_parser("validate-config", help="check a config file and print the resolved values")
    v.add_argument("--config", required=True, type=Path)
    v.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            spec = ExperimentSpec(args.config, args.scheduler or ["proposed"], _parse_seeds(args.seeds),
                                  args.out, args.overrides, _parse_sweep(args.sweep))
            if not spec.seeds:
                raise UsageError("at least one seed is required")
            try:
                for s in spec.schedulers:
                    SchedulerKind.parse(s)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            return cmd_run(spec, args.jobs)
        if args.command == "compare":
            return cmd_compare(args.dir, args.out)
        sys.stdout.write(to_text(load_config(args.config, args.overrides)))
        return EXIT_OK
    except UsageError as exc:
        print(f"feelsched: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"feelsched: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"feelsched: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
