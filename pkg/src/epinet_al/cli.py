"""Command-line entry point: ``epinet-al <verb> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .active import write_score_dump, write_step_log
from .config import ConfigError, ExperimentConfig, dump_config, parse_config, preset_config
from .data import Dataset, IngestionError, read_dataset, write_dataset
from .plotdata import FIGURES, emit_plot_data
from .suite import load_problem, run_cell, run_suite, write_report


def ingest_features(path) -> Dataset:
    """Load a frozen-feature dataset from the delimited text format."""
    return read_dataset(path)


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else preset_config(args.preset)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "seeds", None) is not None:
        updates["seeds"] = args.seeds
    return cfg.model_copy(update=updates) if updates else cfg


def _out(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or cfg.output)


def _progress(task, failure):
    kind, _, k, agent, prio, _ = task
    what = "baseline" if kind == "baseline" else f"{agent}__{prio}"
    status = "FAILED " + failure["error"] if failure else "ok"
    print(f"{what} seed {k}: {status}", file=sys.stderr, flush=True)


def _emit_figures(root: Path, figures, render: bool) -> None:
    for fig in figures:
        path = emit_plot_data(root, fig)
        print(path)
        if render:
            from .plotting import render as render_png
            print(render_png(path, figure=fig))


def cmd_run(args) -> int:
    cfg = _load_config(args)
    root = _out(args, cfg)
    cells = args.cells.split(",") if args.cells else None
    result = run_suite(cfg, root, cells=cells, baseline=not args.no_baseline, jobs=args.jobs,
                       progress=None if args.quiet else _progress)
    if not args.no_baseline:
        print((root / "report" / "summary.txt").read_text(), end="")
        if args.plots:
            _emit_figures(root, FIGURES, render=True)
    for f in result.failures:
        print(f"failed: {f['kind']} {f['agent']}__{f['priority']} seed {f['seed']}: {f['error']}",
              file=sys.stderr)
    return 0 if result.ok else 1


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    result = run_suite(cfg, _out(args, cfg), cells=[], baseline=True, jobs=args.jobs,
                       progress=None if args.quiet else _progress)
    return 0 if result.ok else 1


def cmd_score(args) -> int:
    cfg = _load_config(args)
    agent, _, priority = args.cell.partition("__")
    if (agent, priority) not in cfg.cells():
        raise ConfigError(f"cell {args.cell!r} is not in the config")
    reports = []
    run_cell(cfg, load_problem(cfg, args.index), agent, priority, on_step=reports.append)
    out = Path(args.out or f"{args.cell}_seed{args.index:02d}")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_score_dump(reports, out.with_suffix(".scores.csv"))
    write_step_log(reports, out.with_suffix(".steps.ndjson"))
    print(out.with_suffix(".scores.csv"))
    print(out.with_suffix(".steps.ndjson"))
    return 0


def cmd_report(args) -> int:
    root = Path(args.suite)
    write_report(root, args.metric)
    print((root / "report" / "summary.txt").read_text(), end="")
    return 0


def cmd_plotdata(args) -> int:
    figures = FIGURES if args.figure == "all" else args.figure.split(",")
    _emit_figures(Path(args.suite), figures, render=args.render)
    return 0


def cmd_export(args) -> int:
    cfg = _load_config(args)
    if cfg.problem.kind != "generator":
        raise ConfigError("problem.kind: export needs a generator problem")
    write_dataset(load_problem(cfg, args.index).data, args.out)
    print(args.out)
    return 0


def cmd_ingest(args) -> int:
    d = ingest_features(args.path)
    print(f"width={d.width} classes={d.num_classes} train={d.num_train} test={d.num_test}")
    return 0


def cmd_config(args) -> int:
    print(dump_config(_load_config(args)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epinet-al", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp, seeds=True):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", help="YAML experiment file")
        g.add_argument("--preset", default="testbed-default", help="named preset (default %(default)s)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        if seeds:
            sp.add_argument("--seeds", type=int, help="override the seed count")

    sp = sub.add_parser("run", help="run the full suite")
    with_config(sp)
    sp.add_argument("--out", help="output directory (default: config 'output')")
    sp.add_argument("--cells", help="comma-separated agent or agent__priority filter")
    sp.add_argument("--no-baseline", action="store_true", help="skip the baseline sweep and report")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--plots", action="store_true", help="also write figure data and PNGs")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("baseline", help="run only the supervised baseline sweep")
    with_config(sp)
    sp.add_argument("--out")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("score", help="dump per-step priority scores for one cell and seed")
    with_config(sp, seeds=False)
    sp.add_argument("--cell", required=True, help="agent__priority")
    sp.add_argument("--index", type=int, default=0, help="seed index")
    sp.add_argument("--out", help="output path stem")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("report", help="efficiency tables for a finished suite")
    sp.add_argument("suite")
    sp.add_argument("--metric", choices=("nll", "accuracy"), default="nll")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("plotdata", help="figure data files (and PNGs with --render)")
    sp.add_argument("suite")
    sp.add_argument("--figure", default="all", help=f"'all' or a comma list of {', '.join(FIGURES)}")
    sp.add_argument("--render", action="store_true")
    sp.set_defaults(func=cmd_plotdata)

    sp = sub.add_parser("export", help="write a generated problem in the frozen-feature format")
    with_config(sp, seeds=False)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("ingest", help="validate a frozen-feature file")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("config", help="print the fully resolved configuration")
    with_config(sp)
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestionError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
