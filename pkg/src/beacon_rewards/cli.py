"""Command-line orchestration of the collection/aggregation/metrics workflow.

Exit codes: 0 success, 1 data error (bad records, conservation or
crosscheck failure), 2 configuration/usage error, 3 I/O error. Logs go to
stderr; data only to files.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import sys

import click

from . import aggregate as agg
from . import client, metrics, simulator
from . import crosscheck as cc
from .config import ConfigError, PipelineConfig, load_pipeline_config, parse_range
from .records import (
    AttestationRewardRecord,
    CSV_COLUMNS,
    GWEI_COLUMNS,
    ProposerRewardRecord,
    gwei_to_ether,
    read_records,
)

logger = logging.getLogger("beacon_rewards")

EXIT_DATA = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (agg.UnsortedInputError, agg.ConservationError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except ValueError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


@click.group()
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Pipeline TOML config; defaults apply when omitted.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Beacon chain reward pipeline: collect, aggregate, analyze, validate."""
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        ctx.obj = load_pipeline_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command()
@click.option("--stream", type=click.Choice(client.STREAMS), required=True)
@click.option("--slots", default=None, help="Inclusive slot range A..B (proposer/sync streams).")
@click.option("--epochs", default=None, help="Inclusive epoch range A..B (attestation stream).")
@click.option("--endpoint", default=None, help="Node base URL; overrides config.")
@click.option(
    "--fixtures",
    "fixtures_dir",
    default=None,
    type=click.Path(file_okay=False),
    help="Replay canned responses from this directory instead of a node.",
)
@click.option("--max-parallel", type=int, default=None)
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@click.pass_obj
@_guarded
def collect(
    config: PipelineConfig,
    stream: str,
    slots: str | None,
    epochs: str | None,
    endpoint: str | None,
    fixtures_dir: str | None,
    max_parallel: int | None,
    out_dir: str | None,
) -> None:
    """Collect one reward stream over a unit range into a raw CSV."""
    if slots and epochs:
        raise ConfigError("pass either --slots or --epochs, not both")
    range_text = slots or epochs
    if range_text is not None:
        unit_range = parse_range(range_text, "--slots/--epochs")
    elif stream in config.ranges:
        unit_range = config.ranges[stream]
    else:
        raise ConfigError(f"no unit range given for stream {stream!r} (flag or config)")

    base = fixtures_dir or endpoint or config.endpoint
    raw_dir = out_dir or config.raw_dir
    os.makedirs(raw_dir, exist_ok=True)
    job = client.CollectionJob(
        stream=stream,
        start=unit_range[0],
        end=unit_range[1],
        endpoint_base=base,
        output_path=os.path.join(raw_dir, f"{stream}_rewards.csv"),
        checkpoint_path=os.path.join(raw_dir, f"checkpoint_{stream}.json"),
        max_parallel=max_parallel or config.max_parallel,
        auth_token=config.auth_token,
        spec=config.spec,
    )
    summary = client.run_collection(job)
    click.echo(
        f"{stream}: ok={summary.units_ok} missed={summary.units_missed} "
        f"error={summary.units_error} records={summary.records_written}",
        err=True,
    )
    if summary.units_error > 0:
        sys.exit(EXIT_DATA)


@main.command("aggregate")
@click.option("--raw", "raw_dir", default=None, type=click.Path(file_okay=False))
@click.option("--tables", "tables_dir", default=None, type=click.Path(file_okay=False))
@click.pass_obj
@_guarded
def aggregate_cmd(config: PipelineConfig, raw_dir: str | None, tables_dir: str | None) -> None:
    """Join raw streams and build the epoch/daily/category/lifetime tables."""
    raw_dir = raw_dir or config.raw_dir
    tables_dir = tables_dir or config.tables_dir
    result = agg.run_aggregation(
        proposer_path=os.path.join(raw_dir, "proposer_rewards.csv"),
        attestation_path=os.path.join(raw_dir, "attestation_rewards.csv"),
        sync_path=os.path.join(raw_dir, "sync_committee_rewards.csv"),
        out_dir=tables_dir,
        spec=config.spec,
    )
    if result.epoch_rows == 0:
        logger.warning("aggregation produced empty tables (no input records)")
    click.echo(
        f"aggregated: epoch_rows={result.epoch_rows} daily_rows={result.daily_rows} "
        f"gwei={result.raw_gwei} conserved={result.conserved}",
        err=True,
    )


@main.command("metrics")
@click.option("--tables", "tables_dir", default=None, type=click.Path(file_okay=False))
@click.option("--indices", "indices_dir", default=None, type=click.Path(file_okay=False))
@click.option("--clamp", type=click.Choice(metrics.CLAMP_MODES), default=None)
@click.pass_obj
@_guarded
def metrics_cmd(
    config: PipelineConfig,
    tables_dir: str | None,
    indices_dir: str | None,
    clamp: str | None,
) -> None:
    """Compute daily decentralization indices and plot-ready CSV exports."""
    tables_dir = tables_dir or config.tables_dir
    indices_dir = indices_dir or config.indices_dir
    clamp = clamp or config.clamp
    os.makedirs(indices_dir, exist_ok=True)

    points = metrics.metric_series(agg.read_daily_table(tables_dir), clamp_mode=clamp)
    n = metrics.write_metric_points(os.path.join(indices_dir, "indices_daily.csv"), points)
    _write_plot_csvs(tables_dir, indices_dir, points)
    click.echo(f"metrics: {n} (date, category) points [clamp={clamp}]", err=True)


def _write_plot_csvs(tables_dir: str, indices_dir: str, points) -> None:
    # Tidy long-format exports mirroring the daily-reward, per-validator,
    # growth, and index time-series views.
    daily_long = os.path.join(indices_dir, "daily_rewards_long.csv")
    with open(daily_long, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("date", "category", "ether"))
        for day in agg.read_category_totals(tables_dir):
            for category, gwei in (
                ("total", day.total),
                ("attestation", day.attestation),
                ("proposer", day.proposer),
                ("sync_committee", day.sync_committee),
            ):
                writer.writerow((day.date.isoformat(), category, format(gwei_to_ether(gwei), "f")))

    lifetime_path = os.path.join(tables_dir, "validator_lifetime.csv")
    lifetime_long = os.path.join(indices_dir, "validator_totals_long.csv")
    with open(lifetime_path, newline="") as src, open(lifetime_long, "w", newline="") as f:
        reader = csv.DictReader(src)
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("validator_index", "category", "ether"))
        for row in reader:
            for category in ("total", "attestation", "proposer", "sync_committee"):
                writer.writerow(
                    (
                        row["validator_index"],
                        category,
                        format(gwei_to_ether(int(row[category])), "f"),
                    )
                )

    growth_src = os.path.join(tables_dir, "validator_growth.csv")
    growth_dst = os.path.join(indices_dir, "validator_growth.csv")
    with open(growth_src, newline="") as src, open(growth_dst, "w", newline="") as dst:
        dst.write(src.read())

    indices_long = os.path.join(indices_dir, "indices_long.csv")
    with open(indices_long, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("date", "category", "metric", "value"))
        for p in points:
            for metric_name, value in (
                ("gini", p.gini),
                ("shannon_entropy", p.shannon_entropy),
                ("hhi", p.hhi),
                ("nakamoto_count", p.nakamoto_count),
                ("nakamoto_fraction", p.nakamoto_fraction),
            ):
                writer.writerow(
                    (
                        p.date.isoformat(),
                        p.category,
                        metric_name,
                        "" if value is None else repr(value),
                    )
                )


@main.command("simulate")
@click.option("--sim-config", "sim_config_path", default=None, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--validators", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--added-per-epoch", type=int, default=None)
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@click.option("--fixtures/--no-fixtures", "write_fixtures", default=True)
@click.pass_obj
@_guarded
def simulate_cmd(
    config: PipelineConfig,
    sim_config_path: str | None,
    seed: int | None,
    validators: int | None,
    epochs: int | None,
    added_per_epoch: int | None,
    out_dir: str | None,
    write_fixtures: bool,
) -> None:
    """Generate synthetic raw streams, fixtures, and a ground-truth ledger."""
    from dataclasses import replace

    path = sim_config_path or config.simulator_config
    try:
        sim = simulator.load_sim_config(path) if path else simulator.SimConfig(spec=config.spec)
        overrides = {}
        if seed is not None:
            overrides["rng_seed"] = seed
        if validators is not None:
            overrides["initial_validators"] = validators
        if epochs is not None:
            overrides["epochs"] = epochs
        if added_per_epoch is not None:
            overrides["validators_added_per_epoch"] = added_per_epoch
        if overrides:
            sim = replace(sim, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulator config: {exc}")
    target = out_dir or config.fixtures_dir
    counts = simulator.write_simulation(sim, target, write_fixtures=write_fixtures)
    click.echo(
        "simulated: "
        + " ".join(f"{stream}={count}" for stream, count in sorted(counts.items())),
        err=True,
    )


@main.command("validate")
@click.option("--ref", "ref_path", default=None, type=click.Path(dir_okay=False))
@click.option("--daily-ref", "daily_ref_path", default=None, type=click.Path(dir_okay=False))
@click.option("--tolerance-gwei", type=int, default=0, show_default=True)
@click.option("--rel-tolerance", type=float, default=0.01, show_default=True)
@click.option("--raw", "raw_dir", default=None, type=click.Path(file_okay=False))
@click.option("--tables", "tables_dir", default=None, type=click.Path(file_okay=False))
@click.option("--reports", "reports_dir", default=None, type=click.Path(file_okay=False))
@click.pass_obj
@_guarded
def validate_cmd(
    config: PipelineConfig,
    ref_path: str | None,
    daily_ref_path: str | None,
    tolerance_gwei: int,
    rel_tolerance: float,
    raw_dir: str | None,
    tables_dir: str | None,
    reports_dir: str | None,
) -> None:
    """Crosscheck pipeline output against external reference records."""
    if not ref_path and not daily_ref_path:
        raise ConfigError("nothing to validate: pass --ref and/or --daily-ref")
    raw_dir = raw_dir or config.raw_dir
    tables_dir = tables_dir or config.tables_dir
    reports_dir = reports_dir or config.reports_dir
    os.makedirs(reports_dir, exist_ok=True)

    all_passed = True
    if ref_path:
        refs = cc.load_reference_income(ref_path)
        reports = []
        for ref in refs:
            report = cc.crosscheck_validator_epoch(
                read_records(
                    os.path.join(raw_dir, "attestation_rewards.csv"), AttestationRewardRecord
                ),
                read_records(os.path.join(raw_dir, "proposer_rewards.csv"), ProposerRewardRecord),
                ref,
                tolerance_gwei=tolerance_gwei,
            )
            reports.append(report)
            click.echo(report.render_text(), err=True)
            all_passed &= report.status == "pass"
        payload = {
            "summary": {
                "total": len(reports),
                "passed": sum(1 for r in reports if r.status == "pass"),
                "uncovered": sum(1 for r in reports if r.status == "uncovered"),
            },
            "failures": [r.to_dict() for r in reports if r.status != "pass"],
            "reports": [r.to_dict() for r in reports],
        }
        _write_report(reports_dir, "validator_crosscheck", payload,
                      "\n".join(r.render_text() for r in reports))

    if daily_ref_path:
        daily_refs = cc.load_reference_daily_totals(daily_ref_path)
        report = cc.crosscheck_daily_totals(
            agg.read_category_totals(tables_dir), daily_refs, rel_tolerance=rel_tolerance
        )
        click.echo(report.render_text(), err=True)
        all_passed &= report.status == "pass"
        payload = {
            "summary": {"status": report.status, "pass_rate": report.pass_rate},
            "failures": [d.date.isoformat() for d in report.days if not d.passed],
            "report": report.to_dict(),
        }
        _write_report(reports_dir, "daily_crosscheck", payload, report.render_text())

    if not all_passed:
        sys.exit(EXIT_DATA)


def _write_report(reports_dir: str, name: str, payload: dict, text: str) -> None:
    with open(os.path.join(reports_dir, f"{name}.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(reports_dir, f"{name}.txt"), "w") as f:
        f.write(text + "\n")


@main.command("export")
@click.option("--input", "in_path", required=True, type=click.Path(dir_okay=False, exists=True))
@click.option("--output", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option(
    "--unit",
    type=click.Choice(("ether", "gwei")),
    default="ether",
    show_default=True,
    help="ether converts every Gwei column to fixed-point Ether.",
)
@_guarded
def export_cmd(in_path: str, out_path: str, unit: str) -> None:
    """Re-emit a reward table with amounts converted to Ether."""
    with open(in_path, newline="") as src, open(out_path, "w", newline="") as dst:
        reader = csv.reader(src)
        writer = csv.writer(dst, lineterminator="\n")
        header = next(reader, None)
        if header is None:
            return
        writer.writerow(header)
        if unit == "gwei":
            writer.writerows(reader)
            return
        schema = next(
            (cols for cols in CSV_COLUMNS.values() if tuple(header) == cols), None
        )
        if schema is None:
            raise ValueError(f"{in_path}: header {header!r} is not a known reward table schema")
        gwei_idx = [schema.index(c) for c in GWEI_COLUMNS[schema]]
        for row in reader:
            for i in gwei_idx:
                row[i] = format(gwei_to_ether(int(row[i])), "f")
            writer.writerow(row)


if __name__ == "__main__":
    main()
