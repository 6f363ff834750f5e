"""Command line entry point: validate, run, sweep, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import SUITES, ConfigError, RunConfig
from .operators import ResourceError
from .reports import read_ndjson, summary_table, to_ndjson

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3

SWEEP_KEYS = {
    "beta": lambda v: [f"betas=[{v}]"] + [f"params.{s}.betas=[{v}]" for s in SUITES],
    "N": lambda v: [f"N={v}", f"params.marginal.N_values=[{v}]", f"params.ds.N_values=[{v}]"],
    "group": lambda v: [f"group={json.dumps(v)}", f"params.marginal.groups=[{json.dumps(v)}]"],
    "geometry": lambda v: [f"params.kernel.rectangle={json.dumps(v)}",
                           f"params.condexp.rectangle={json.dumps(v)}"],
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdlab", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="JSON run configuration (defaults if omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key by dotted path; VALUE is parsed as JSON when possible")

    p = sub.add_parser("validate", help="check a configuration without running anything")
    common(p)

    p = sub.add_parser("run", help="run verification suites")
    common(p)
    p.add_argument("--suite", action="append", choices=SUITES, help="restrict to these suites")
    p.add_argument("--none", action="store_true", help="run an empty suite list")
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--workers", type=int, help="worker count (default: QDLAB_WORKERS or 1)")

    p = sub.add_parser("sweep", help="cross-product runs along one axis")
    common(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_KEYS))
    p.add_argument("--values", required=True, help="JSON list of axis values")
    p.add_argument("--suite", action="append", choices=SUITES)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("report", help="re-render the summary of a stored bundle")
    p.add_argument("bundle", help="NDJSON report file")
    return ap


def _write_bundle(out: Path, reports, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports.ndjson").write_text(to_ndjson(reports))
    (out / "summary.txt").write_text(summary_table(reports))
    (out / "config.json").write_text(cfg.to_json())


def _run(args) -> int:
    from .suites import exit_code, run_suites

    cfg = RunConfig.load(args.config, args.overrides)
    suites = [] if args.none else (args.suite or cfg.suites)
    out = Path(args.out or cfg["output"]["dir"])
    reports, artifacts = run_suites(cfg, suites, out, args.workers)
    _write_bundle(out, reports, cfg)
    sys.stdout.write(summary_table(reports))
    for a in artifacts:
        sys.stdout.write(f"wrote {a}\n")
    return exit_code(reports)


def _sweep(args) -> int:
    from .suites import exit_code, run_suites

    base = RunConfig.load(args.config, args.overrides)
    try:
        values = json.loads(args.values)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--values is not JSON: {exc}") from exc
    if not isinstance(values, list) or not values:
        raise ConfigError("--values must be a nonempty JSON list")
    out = Path(args.out or base["output"]["dir"])
    cells = []
    for v in values:
        cfg = RunConfig.load(args.config, args.overrides + SWEEP_KEYS[args.axis](v))
        cells.append((v, cfg))
    rows, all_reports = [], []
    for i, (v, cfg) in enumerate(cells):
        cell_dir = out / f"{args.axis}_{i}"
        reports, _ = run_suites(cfg, args.suite or cfg.suites, cell_dir, args.workers)
        _write_bundle(cell_dir, reports, cfg)
        all_reports += reports
        for r in reports:
            metric = next((k for k in ("max_error", "max_deviation", "distance", "gap", "min_slack",
                                       "value", "empirical_constant") if k in r.metrics), "")
            rows.append([json.dumps(v), r.suite, r.check, "" if r.beta is None else r.beta, r.status,
                         metric, r.metrics.get(metric, "")])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.axis, "suite", "check", "beta", "status", "metric", "value"])
        w.writerows(rows)
    sys.stdout.write(summary_table(all_reports))
    sys.stdout.write(f"wrote {out / 'sweep.csv'}\n")
    return exit_code(all_reports)


def _report(args) -> int:
    from .suites import exit_code

    try:
        reports = read_ndjson(Path(args.bundle).read_text())
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read bundle {args.bundle}: {exc}") from exc
    sys.stdout.write(summary_table(reports))
    return exit_code(reports)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.verb == "validate":
            cfg = RunConfig.load(args.config, args.overrides)
            sys.stdout.write(f"config ok: suites={cfg.suites}\n")
            return EXIT_OK
        if args.verb == "run":
            return _run(args)
        if args.verb == "sweep":
            return _sweep(args)
        return _report(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except (ResourceError, MemoryError) as exc:
        sys.stderr.write(f"resource error: {exc}\n")
        return EXIT_RESOURCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
