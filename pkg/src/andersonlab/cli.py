"""Command line entry point: ``andersonlab graph | run | replot``.

Exit codes: 0 on success, 1 for compute errors or instance-wise check
violations, 2 for invalid configurations.  Errors are written to stderr as one
JSON object.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .fitting import FitError
from .graphs import (DEFAULT_VERTEX_BUDGET, GraphSizeError, MarginError, ahlfors_fit,
                     build_path_or_lattice, build_sierpinski_gasket, build_sierpinski_simplex,
                     distance_to_open_boundary, write_edgelist)
from .experiments import ReportError, replot, run_experiment, validate
from .experiments.common import default_center
from .experiments.ensemble import ConfigError, EnsembleSpec, config_hash

OUTPUT_ROOT_ENV = "ANDERSONLAB_OUTPUT_ROOT"

EXIT_OK, EXIT_COMPUTE, EXIT_VALIDATION = 0, 1, 2


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind, self.message, self.code = kind, message, code


@dataclass(frozen=True)
class RunConfig:
    """A run config: an ensemble spec plus where and how to run it."""

    spec: EnsembleSpec
    output: str | None = None
    parallel: int = 1

    @classmethod
    def from_dict(cls, cfg: dict) -> "RunConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        cfg = dict(cfg)
        output = cfg.pop("output", None)
        parallel = cfg.pop("parallel", 1)
        if not isinstance(parallel, int) or parallel < 1:
            raise ConfigError("parallel must be a positive integer")
        return cls(EnsembleSpec.from_dict(cfg), output, parallel)


def _stderr_json(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True),
          file=sys.stderr)


# --- graph --------------------------------------------------------------------------

def _build(args):
    budget = args.budget
    if args.family == "lattice":
        if args.d is None or args.extent is None:
            raise CLIError("validation", "lattice needs --d and --extent", EXIT_VALIDATION)
        return build_path_or_lattice(args.d, args.extent, budget)
    if args.level is None:
        raise CLIError("validation", f"{args.family} needs --level", EXIT_VALIDATION)
    if args.family == "gasket":
        return build_sierpinski_gasket(args.level, args.sided, budget)
    if args.d is None:
        raise CLIError("validation", "simplex needs --d", EXIT_VALIDATION)
    return build_sierpinski_simplex(args.d, args.level, budget)


def graph_stats(g) -> dict:
    """|V|, |E|, max degree M, unit-cell counts and an Ahlfors fit around the default center."""
    kind = g.family.kind
    out = {"family": str(g.family), "vertices": g.n, "edges": g.num_edges,
           "M": g.max_degree, "open_boundary": int(g.open_boundary.size)}
    if g.cells is not None:
        out["unit_cells"] = int(len(g.cells))
        if kind == "SierpinskiGasket":
            sided = g.family.get("sided", 2)
            out["unit_triangles_per_side"] = int(len(g.cells)) // sided
    center = default_center(g)
    clear = distance_to_open_boundary(g, center)
    rmax = int(min(64, clear if math.isfinite(clear) else 64))
    try:
        fit = ahlfors_fit(g, [center], list(range(1, rmax + 1)))
        out["ahlfors"] = {"center": center, "alpha_hat": fit.estimate, "stderr": fit.stderr,
                          "r2": fit.r2, "c1": fit.extra["c1"], "c2": fit.extra["c2"],
                          "radii": [1, rmax]}
    except (FitError, MarginError) as exc:
        out["ahlfors"] = {"center": center, "alpha_hat": None, "reason": str(exc)}
    return out


def cmd_graph(args) -> int:
    try:
        g = _build(args)
    except GraphSizeError as exc:
        raise CLIError("budget", str(exc), EXIT_VALIDATION) from exc
    except ValueError as exc:
        raise CLIError("validation", str(exc), EXIT_VALIDATION) from exc
    if args.out:
        with open(args.out, "w") as fh:
            write_edgelist(g, fh)
    if args.stats:
        print(json.dumps(graph_stats(g), indent=2, sort_keys=True))
    elif not args.out:
        write_edgelist(g, sys.stdout)
    return EXIT_OK


# --- run / replot -------------------------------------------------------------------

def _output_dir(cli_out: str | None, rc: RunConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    chosen = cli_out or rc.output
    if chosen is None:
        chosen = f"{rc.spec.experiment}-{config_hash(rc.spec.to_dict())[:12]}"
        base = Path(root) if root else Path("reports")
        return base / chosen
    path = Path(chosen)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def cmd_run(args) -> int:
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError as exc:
        raise CLIError("validation", f"config not found: {args.config}", EXIT_VALIDATION) from exc
    except json.JSONDecodeError as exc:
        raise CLIError("validation", f"config is not valid JSON: {exc}", EXIT_VALIDATION) from exc
    try:
        rc = RunConfig.from_dict(cfg)
        validate(rc.spec)
    except (ConfigError, GraphSizeError, MarginError, FitError, ValueError, TypeError) as exc:
        raise CLIError("validation", str(exc), EXIT_VALIDATION) from exc
    parallel = args.parallel or rc.parallel
    out = _output_dir(args.out, rc)
    try:
        report = run_experiment(rc.spec, parallel=parallel, outdir=out)
    except (ConfigError, MarginError) as exc:
        raise CLIError("validation", str(exc), EXIT_VALIDATION) from exc
    except Exception as exc:  # noqa: BLE001 - any numerical failure is a compute error
        raise CLIError("compute", f"{type(exc).__name__}: {exc}", EXIT_COMPUTE) from exc
    violations = {k: v["violations"] for k, v in report.checks.items() if v["violations"]}
    print(json.dumps({"report": str(out), "checks_pass": not violations,
                      "violations": violations}, sort_keys=True))
    if violations:
        _stderr_json("check_violation", "instance-wise checks failed", violations=violations)
        return EXIT_COMPUTE
    return EXIT_OK


def cmd_replot(args) -> int:
    try:
        summary, identical = replot(args.report_dir)
    except ReportError as exc:
        raise CLIError("report", str(exc), EXIT_COMPUTE) from exc
    print(json.dumps({"report": args.report_dir, "identical": identical}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="andersonlab",
                                description="Anderson model experiments on fractal graphs")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="build a graph and export or describe it")
    g.add_argument("--family", required=True, choices=["lattice", "gasket", "simplex"])
    g.add_argument("--level", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--extent", type=int)
    g.add_argument("--sided", type=int, default=2, choices=[1, 2])
    g.add_argument("--budget", type=int, default=DEFAULT_VERTEX_BUDGET)
    g.add_argument("--stats", action="store_true", help="print |V|, |E|, M and an Ahlfors fit")
    g.add_argument("--out", help="write the edge list here instead of stdout")
    g.set_defaults(func=cmd_graph)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--out", help=f"report directory (relative paths go under ${OUTPUT_ROOT_ENV})")
    r.add_argument("--parallel", type=int, help="worker processes (throughput only)")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replot", help="recompute summary.json from a report's CSVs")
    rp.add_argument("report_dir")
    rp.set_defaults(func=cmd_replot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        _stderr_json(exc.kind, exc.message)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
