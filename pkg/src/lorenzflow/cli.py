"""Command line: ``lorenzflow run|sweep|plot|verify``.

Exit codes: 0 when every assertion passed, 1 when an assertion failed,
2 when the config or inputs are unusable or an experiment raised.
"""
from __future__ import annotations

import argparse
import logging
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io
from .config import OUTPUT_ENV, load_config
from .errors import LorenzFlowError

log = logging.getLogger("lorenzflow")

OK, FAILED, ERROR = 0, 1, 2


def _report(summary: dict) -> str:
    lines = [f"{summary['name']} ({summary['kind']}): {'PASS' if summary['pass'] else 'FAIL'}"]
    for c in summary["assertions"]:
        rel = "<=" if c["op"] == "le" else ">="
        lines.append(f"  [{'ok' if c['pass'] else 'FAIL'}] {c['name']} = {c['value']:.4g} {rel} {c['threshold']:.4g}")
    return "\n".join(lines)


def _plots(run_dir: Path, fmt: str) -> list[Path]:
    from .plotting import plot_run

    try:
        return plot_run(run_dir, fmt)
    except Exception as err:  # plots are decoration; never affect the verdict
        log.warning("plotting skipped: %s", err)
        return []


def run_config(path, plot: bool = True, fmt: str = "svg") -> dict:
    from .experiments import run_experiment

    cfg = load_config(path)
    summary = run_experiment(cfg, persist=True)
    run_dir = cfg.run_dir()
    io.write_json(summary["metrics"], run_dir / "diagnostics.json")
    io.write_json(summary, run_dir / "summary.json")
    if plot:
        _plots(run_dir, fmt)
    return summary


def cmd_run(args) -> int:
    summary = run_config(args.config, plot=not args.no_plot, fmt=args.format)
    print(_report(summary))
    return OK if summary["pass"] else FAILED


def cmd_verify(args) -> int:
    from .experiments import run_experiment

    cfg = load_config(args.config)
    summary = run_experiment(cfg, persist=False)
    text = io.dumps(summary)
    run_dir = cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "summary.json").write_text(text)
    sys.stdout.write(text)
    return OK if summary["pass"] else FAILED


def _sweep_one(path: str) -> tuple[str, int, str]:
    try:
        summary = run_config(path)
    except LorenzFlowError as err:
        return path, ERROR, str(err)
    return path, OK if summary["pass"] else FAILED, _report(summary)


def cmd_sweep(args) -> int:
    root = Path(args.dir)
    configs = sorted(str(p) for p in root.iterdir() if p.suffix in (".yaml", ".yml")) if root.is_dir() else []
    if not configs:
        log.error("no YAML configs in %s", root)
        return ERROR
    if args.jobs == 1:
        results = [_sweep_one(p) for p in configs]
    else:
        # spawn, not fork: jax runs threads that a forked child would inherit mid-flight
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=args.jobs, mp_context=ctx) as pool:
            results = list(pool.map(_sweep_one, configs))
    worst = OK
    for path, code, text in results:
        print(f"== {path}\n{text}")
        worst = max(worst, code)
    return worst


def cmd_plot(args) -> int:
    from .plotting import plot_run

    for p in plot_run(args.run_dir, args.format):
        print(p)
    return OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lorenzflow", description=__doc__.splitlines()[0],
                                 epilog=f"{OUTPUT_ENV} overrides the output root of every config.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its artifacts")
    p.add_argument("config")
    p.add_argument("--no-plot", action="store_true")
    p.add_argument("--format", default="svg", choices=("svg", "pdf"))
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="run every YAML config in a directory")
    p.add_argument("dir")
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("plot", help="render figures from the CSVs of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--format", default="svg", choices=("svg", "pdf"))
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("verify", help="assertions only; print and store the summary JSON")
    p.add_argument("config")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except LorenzFlowError as err:
        log.error("%s", err)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
