"""Experiment registry: validate, simulate, summarize and persist.

Each experiment is a pair ``simulate(spec, parallel) -> tables`` and
``summarize(spec, tables) -> summary``.  The summary is always computed from
the tables as they round-trip through CSV, so :func:`replot` reproduces it
exactly from a report directory without re-simulating.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import bracketing, checks, dynamics, fm, ids, scaling, tails
from .ensemble import ConfigError, EnsembleSpec, GraphSpec, canonical_json
from .report import (ExperimentReport, ReportError, Table, _dump, read_json, read_tables,
                     write_report)

__all__ = ["Experiment", "EXPERIMENTS", "run_experiment", "replot", "ConfigError",
           "EnsembleSpec", "GraphSpec", "ExperimentReport", "ReportError"]


@dataclass(frozen=True)
class Experiment:
    name: str
    simulate: Callable
    summarize: Callable
    validate: Callable
    description: str


EXPERIMENTS = {e.name: e for e in [
    Experiment("volume_growth", scaling.simulate_volume, scaling.summarize_volume,
               scaling.validate_volume, "ball volumes and the fitted Ahlfors exponent"),
    Experiment("neumann_scaling", scaling.simulate_scaling, scaling.summarize_scaling,
               scaling.validate_scaling, "first nonzero free Neumann eigenvalue vs radius"),
    Experiment("dirichlet_scaling", scaling.simulate_scaling, scaling.summarize_scaling,
               scaling.validate_scaling, "free Dirichlet ground state vs radius"),
    Experiment("ground_state_tail", tails.simulate, tails.summarize, tails.validate,
               "P(E0 <= R^-delta) with Wilson intervals"),
    Experiment("ids", ids.simulate, ids.summarize, ids.validate,
               "integrated density of states and its double-log statistic"),
    Experiment("fm_decay", fm.simulate_decay, fm.summarize_decay, fm.validate_decay,
               "fractional moments of the Green function binned by distance"),
    Experiment("apriori_decoupling", fm.simulate_apriori, fm.summarize_apriori,
               fm.validate_apriori, "a-priori fractional-moment bound and decoupling ratio"),
    Experiment("dynamical_localization", dynamics.simulate, dynamics.summarize,
               dynamics.validate, "eigenfunction correlator on a low energy window"),
    Experiment("temple", checks.simulate, checks.summarize, checks.validate,
               "Temple's lower bound on random truncated Neumann balls"),
    Experiment("combes_thomas", checks.simulate, checks.summarize, checks.validate,
               "deterministic off-diagonal resolvent decay"),
    Experiment("theorem_suites", checks.simulate, checks.summarize, checks.validate,
               "all instance-wise identity and inequality suites"),
    Experiment("bracketing_chain", bracketing.simulate, bracketing.summarize,
               bracketing.validate, "each link of the Lifshitz upper-bound chain"),
]}


def get_experiment(name: str) -> Experiment:
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown experiment {name!r}; known: {sorted(EXPERIMENTS)}") from None


def validate(spec: EnsembleSpec) -> Experiment:
    exp = get_experiment(spec.experiment)
    exp.validate(spec)
    return exp


def _roundtrip(tables: dict[str, Table]) -> dict[str, Table]:
    return {k: Table.from_csv(k, t.to_csv()) for k, t in tables.items()}


def run_experiment(spec: EnsembleSpec, parallel: int = 1, outdir=None) -> ExperimentReport:
    """Validate, simulate and summarize; write the report if ``outdir`` is given.

    The ensemble is first canonicalized exactly as its config echo will be, so a
    later :func:`replot` sees the same parameters.
    """
    spec = EnsembleSpec.from_dict(json.loads(canonical_json(spec.to_dict())))
    exp = validate(spec)
    tables = _roundtrip(exp.simulate(spec, parallel))
    report = ExperimentReport(spec, tables, exp.summarize(spec, tables))
    if outdir is not None:
        write_report(report, outdir)
    return report


def replot(outdir) -> tuple[dict, bool]:
    """Recompute the summary from a report's CSVs and rewrite ``summary.json``.

    Returns the new summary and whether it is byte-identical to the old one.
    Raises :class:`ReportError` on missing files or checksum mismatches.
    """
    out = Path(outdir)
    cfg = read_json(out / "config.json")
    manifest, tables = read_tables(out)
    spec = EnsembleSpec.from_dict(cfg)
    summary = dict(get_experiment(spec.experiment).summarize(spec, tables))
    summary["manifest"] = manifest
    text = _dump(summary)
    old = (out / "summary.json").read_text() if (out / "summary.json").exists() else None
    (out / "summary.json").write_text(text)
    return json.loads(text), text == old
