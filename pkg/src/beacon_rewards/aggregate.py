"""Streaming roll-ups from raw reward streams to daily analysis tables.

Stages (each single-pass over sorted input, memory bounded by the
per-key working set):

    raw streams -> per-epoch per-validator totals
                -> per-day per-validator totals
                -> per-day category totals, per-validator lifetime totals,
                   validator growth series

Every stage sums integer Gwei exactly, so total Gwei is conserved from the
raw streams through every derived table; `run_aggregation` enforces that.
Inputs must be sorted by (epoch, validator_index); `sort_csv` provides an
external merge sort for raw files too large to sort in memory.
"""

from __future__ import annotations

import csv
import heapq
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import date as date_type
from decimal import Decimal
from typing import Callable, Iterable, Iterator, Sequence

from .chain_time import ChainSpec, epoch_to_utc_date
from .records import (
    AttestationRewardRecord,
    DailyValidatorReward,
    EpochValidatorReward,
    ProposerRewardRecord,
    SyncCommitteeRewardRecord,
    gwei_to_ether,
    read_records,
)


class UnsortedInputError(ValueError):
    """A stage received input violating its sort-order precondition."""


class ConservationError(ValueError):
    """Total Gwei differs between pipeline stages."""


@dataclass(frozen=True, slots=True)
class DailyCategoryTotals:
    """One day's Gwei totals across all validators, split by duty."""

    date: date_type
    total: int
    attestation: int
    proposer: int
    sync_committee: int
    active_validators: int


@dataclass(frozen=True, slots=True)
class ValidatorLifetimeTotals:
    """One validator's Gwei totals over the whole collected period."""

    validator_index: int
    total: int
    attestation: int
    proposer: int
    sync_committee: int


@dataclass(frozen=True, slots=True)
class GrowthPoint:
    """Active validator count and mean reward per validator for one day.

    mean is Ether as a decimal; None marks a day with no active validators.
    """

    date: date_type
    active_validators: int
    mean_total_per_validator: Decimal | None


CATEGORY_TOTALS_COLUMNS = (
    "date",
    "total",
    "attestation",
    "proposer",
    "sync_committee",
    "active_validators",
)
LIFETIME_COLUMNS = ("validator_index", "total", "attestation", "proposer", "sync_committee")
GROWTH_COLUMNS = ("date", "active_validators", "mean_total_per_validator_ether")


def _keyed_sums(
    records: Iterable, component: Callable, stream_name: str
) -> Iterator[tuple[tuple[int, int], int]]:
    # Collapses a (epoch, validator_index)-sorted stream into one summed
    # value per key, enforcing the sort precondition.
    current_key: tuple[int, int] | None = None
    current_sum = 0
    position = 0
    for record in records:
        position += 1
        key = (record.epoch, record.validator_index)
        if current_key is None:
            current_key, current_sum = key, component(record)
        elif key == current_key:
            current_sum += component(record)
        elif key > current_key:
            yield current_key, current_sum
            current_key, current_sum = key, component(record)
        else:
            raise UnsortedInputError(
                f"{stream_name} stream record {position}: key {key} after {current_key}; "
                "input must be sorted by (epoch, validator_index)"
            )
    if current_key is not None:
        yield current_key, current_sum


def merge_rewards_by_epoch(
    proposer: Iterable[ProposerRewardRecord],
    attestation: Iterable[AttestationRewardRecord],
    sync: Iterable[SyncCommitteeRewardRecord],
) -> Iterator[EpochValidatorReward]:
    """Full outer join of the three raw streams on (epoch, validator_index).

    Absent duties contribute 0. Output is sorted by (epoch,
    validator_index); total Gwei in equals total Gwei out.
    """
    streams = (
        _keyed_sums(attestation, lambda r: r.total_attestation_reward, "attestation"),
        _keyed_sums(sync, lambda r: r.sync_reward, "sync_committee"),
        _keyed_sums(proposer, lambda r: r.total, "proposer"),
    )
    heads = [next(s, None) for s in streams]
    while True:
        live_keys = [h[0] for h in heads if h is not None]
        if not live_keys:
            return
        key = min(live_keys)
        components = [0, 0, 0]
        for i, head in enumerate(heads):
            if head is not None and head[0] == key:
                components[i] = head[1]
                heads[i] = next(streams[i], None)
        att, syn, prop = components
        epoch, validator_index = key
        yield EpochValidatorReward(
            validator_index=validator_index,
            total=att + syn + prop,
            attestation=att,
            sync_committee=syn,
            proposer=prop,
            epoch=epoch,
        )


def rollup_daily(
    epoch_rewards: Iterable[EpochValidatorReward], spec: ChainSpec
) -> Iterator[DailyValidatorReward]:
    """Group per-epoch rewards into per-UTC-day rows, summing each component.

    Input must be sorted by epoch; output is sorted by (date,
    validator_index).
    """
    current_day: date_type | None = None
    last_epoch: int | None = None
    cached_epoch, cached_day = -1, None
    acc: dict[int, list[int]] = {}

    def flush() -> Iterator[DailyValidatorReward]:
        for vi in sorted(acc):
            att, syn, prop = acc[vi]
            yield DailyValidatorReward(
                validator_index=vi,
                total=att + syn + prop,
                attestation=att,
                sync_committee=syn,
                proposer=prop,
                date=current_day,
            )

    position = 0
    for record in epoch_rewards:
        position += 1
        if last_epoch is not None and record.epoch < last_epoch:
            raise UnsortedInputError(
                f"epoch reward stream record {position}: epoch {record.epoch} after "
                f"{last_epoch}; input must be sorted by epoch"
            )
        last_epoch = record.epoch
        if record.epoch != cached_epoch or cached_day is None:
            cached_epoch, cached_day = record.epoch, epoch_to_utc_date(spec, record.epoch)
        if cached_day != current_day:
            yield from flush()
            current_day = cached_day
            acc = {}
        entry = acc.get(record.validator_index)
        if entry is None:
            acc[record.validator_index] = [
                record.attestation,
                record.sync_committee,
                record.proposer,
            ]
        else:
            entry[0] += record.attestation
            entry[1] += record.sync_committee
            entry[2] += record.proposer
    if current_day is not None:
        yield from flush()


def daily_category_totals(
    daily: Iterable[DailyValidatorReward],
) -> Iterator[DailyCategoryTotals]:
    """Per-date componentwise sums and distinct active validator counts."""
    current_day: date_type | None = None
    sums = [0, 0, 0]
    validators: set[int] = set()

    def point() -> DailyCategoryTotals:
        att, syn, prop = sums
        return DailyCategoryTotals(
            date=current_day,
            total=att + syn + prop,
            attestation=att,
            proposer=prop,
            sync_committee=syn,
            active_validators=len(validators),
        )

    for row in daily:
        if current_day is not None and row.date < current_day:
            raise UnsortedInputError(
                f"daily table not sorted by date: {row.date} after {current_day}"
            )
        if row.date != current_day:
            if current_day is not None:
                yield point()
            current_day = row.date
            sums = [0, 0, 0]
            validators = set()
        sums[0] += row.attestation
        sums[1] += row.sync_committee
        sums[2] += row.proposer
        validators.add(row.validator_index)
    if current_day is not None:
        yield point()


def validator_lifetime_totals(
    daily: Iterable[DailyValidatorReward],
) -> Iterator[ValidatorLifetimeTotals]:
    """Componentwise sums per validator over all dates, sorted by index."""
    acc = _LifetimeAccumulator()
    for row in daily:
        acc.add(row)
    yield from acc.rows()


class _LifetimeAccumulator:
    def __init__(self) -> None:
        self._acc: dict[int, list[int]] = {}

    def add(self, row: DailyValidatorReward) -> None:
        entry = self._acc.get(row.validator_index)
        if entry is None:
            self._acc[row.validator_index] = [row.attestation, row.sync_committee, row.proposer]
        else:
            entry[0] += row.attestation
            entry[1] += row.sync_committee
            entry[2] += row.proposer

    def rows(self) -> Iterator[ValidatorLifetimeTotals]:
        for vi in sorted(self._acc):
            att, syn, prop = self._acc[vi]
            yield ValidatorLifetimeTotals(
                validator_index=vi,
                total=att + syn + prop,
                attestation=att,
                proposer=prop,
                sync_committee=syn,
            )


def validator_growth_series(
    category_totals: Iterable[DailyCategoryTotals],
) -> Iterator[GrowthPoint]:
    """Daily active-validator count and mean total reward per validator (Ether)."""
    for day in category_totals:
        if day.active_validators == 0:
            mean = None
        else:
            mean = gwei_to_ether(day.total) / day.active_validators
        yield GrowthPoint(
            date=day.date,
            active_validators=day.active_validators,
            mean_total_per_validator=mean,
        )


# --- external sort for raw CSV files ---------------------------------------


def _key_indexes(header: Sequence[str], key_columns: Sequence[str], path: str) -> list[int]:
    try:
        return [header.index(c) for c in key_columns]
    except ValueError:
        raise ValueError(f"{path}: key columns {list(key_columns)} not all in header {header}")


def _row_key(row: list[str], idxs: list[int], path: str, lineno: int) -> tuple[int, ...]:
    try:
        return tuple(int(row[i]) for i in idxs)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}:{lineno}: bad row {row!r}: {exc}") from exc


def csv_sorted_by(path: str, key_columns: Sequence[str]) -> bool:
    """True when the file's integer key columns are in non-decreasing order."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return True
        idxs = _key_indexes(header, key_columns, path)
        prev = None
        for lineno, row in enumerate(reader, start=2):
            key = _row_key(row, idxs, path, lineno)
            if prev is not None and key < prev:
                return False
            prev = key
    return True


def sort_csv(
    in_path: str,
    out_path: str,
    key_columns: Sequence[str],
    chunk_rows: int = 1_000_000,
) -> None:
    """External merge sort of a CSV file by integer key columns.

    Sorts fixed-size chunks in memory, writes them as runs, then k-way
    merges the runs; peak memory is bounded by chunk_rows regardless of
    file size. The sort is stable.
    """
    with open(in_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            with open(out_path, "w", newline=""):
                pass
            return
        idxs = _key_indexes(header, key_columns, in_path)

        out_dir = os.path.dirname(os.path.abspath(out_path))
        with tempfile.TemporaryDirectory(prefix="sortruns_", dir=out_dir) as run_dir:
            run_paths: list[str] = []
            chunk: list[tuple[tuple[int, ...], list[str]]] = []

            def write_run() -> None:
                chunk.sort(key=lambda item: item[0])
                run_path = os.path.join(run_dir, f"run_{len(run_paths)}.csv")
                with open(run_path, "w", newline="") as rf:
                    writer = csv.writer(rf, lineterminator="\n")
                    for _, row in chunk:
                        writer.writerow(row)
                run_paths.append(run_path)
                chunk.clear()

            for lineno, row in enumerate(reader, start=2):
                chunk.append((_row_key(row, idxs, in_path, lineno), row))
                if len(chunk) >= chunk_rows:
                    write_run()
            if chunk:
                write_run()

            def keyed_rows(run_path: str) -> Iterator[tuple[tuple[int, ...], list[str]]]:
                with open(run_path, newline="") as rf:
                    for row in csv.reader(rf):
                        yield tuple(int(row[i]) for i in idxs), row

            with open(out_path, "w", newline="") as out:
                writer = csv.writer(out, lineterminator="\n")
                writer.writerow(header)
                # key= keeps the merge stable across runs on equal keys
                merged = heapq.merge(*(keyed_rows(p) for p in run_paths), key=lambda kr: kr[0])
                for _, row in merged:
                    writer.writerow(row)


def sort_csv_if_needed(in_path: str, out_path: str, key_columns: Sequence[str]) -> str:
    """Return in_path when already sorted, else sort into out_path and return it."""
    if csv_sorted_by(in_path, key_columns):
        return in_path
    sort_csv(in_path, out_path, key_columns)
    return out_path


# --- partitioned table output and the aggregation driver --------------------


class DatePartitionWriter:
    """Writes date-partitioned CSV files: <table_dir>/date=YYYY-MM-DD.csv.

    Rows must arrive in non-decreasing date order; one partition file is
    open at a time.
    """

    def __init__(self, table_dir: str, columns: Sequence[str], to_row: Callable) -> None:
        self.table_dir = table_dir
        self.columns = tuple(columns)
        self.to_row = to_row
        self.partitions: list[dict] = []
        self._current_day: date_type | None = None
        self._file = None
        self._writer = None
        self._rows = 0
        self._gwei = 0
        os.makedirs(table_dir, exist_ok=True)

    def write(self, day: date_type, record, gwei_total: int) -> None:
        if day != self._current_day:
            self._close_partition()
            self._current_day = day
            path = os.path.join(self.table_dir, f"date={day.isoformat()}.csv")
            self._file = open(path, "w", newline="")
            self._writer = csv.writer(self._file, lineterminator="\n")
            self._writer.writerow(self.columns)
        self._writer.writerow(self.to_row(record))
        self._rows += 1
        self._gwei += gwei_total

    def _close_partition(self) -> None:
        if self._file is None:
            return
        self._file.close()
        self.partitions.append(
            {
                "date": self._current_day.isoformat(),
                "path": os.path.join(
                    os.path.basename(self.table_dir), f"date={self._current_day.isoformat()}.csv"
                ),
                "rows": self._rows,
                "gwei_total": self._gwei,
            }
        )
        self._file = None
        self._rows = 0
        self._gwei = 0

    def close(self) -> dict:
        self._close_partition()
        return {
            "partitions": self.partitions,
            "rows": sum(p["rows"] for p in self.partitions),
            "gwei_total": sum(p["gwei_total"] for p in self.partitions),
        }


@dataclass
class AggregationResult:
    raw_gwei: int
    epoch_gwei: int
    daily_gwei: int
    category_gwei: int
    epoch_rows: int
    daily_rows: int
    manifest_path: str

    @property
    def conserved(self) -> bool:
        return self.raw_gwei == self.epoch_gwei == self.daily_gwei == self.category_gwei


def _tally(records: Iterable, component: Callable, sums: dict, key: str) -> Iterator:
    for record in records:
        sums[key] += component(record)
        yield record


def _observe(records: Iterable, fn: Callable) -> Iterator:
    for record in records:
        fn(record)
        yield record


def run_aggregation(
    proposer_path: str,
    attestation_path: str,
    sync_path: str,
    out_dir: str,
    spec: ChainSpec,
) -> AggregationResult:
    """Full aggregation: sorted raw CSVs -> all derived tables plus manifest.

    Raw inputs are sorted by (epoch, validator_index) first when needed.
    Raises ConservationError if total Gwei differs anywhere along the
    chain (the manifest is still written for diagnosis).
    """
    os.makedirs(out_dir, exist_ok=True)
    sort_dir = os.path.join(out_dir, "sorted")
    os.makedirs(sort_dir, exist_ok=True)
    key = ("epoch", "validator_index")
    paths = {
        "proposer": sort_csv_if_needed(
            proposer_path, os.path.join(sort_dir, "proposer_rewards.csv"), key
        ),
        "attestation": sort_csv_if_needed(
            attestation_path, os.path.join(sort_dir, "attestation_rewards.csv"), key
        ),
        "sync_committee": sort_csv_if_needed(
            sync_path, os.path.join(sort_dir, "sync_committee_rewards.csv"), key
        ),
    }

    sums = {"raw": 0, "epoch": 0, "daily": 0, "category": 0}
    proposer = _tally(
        read_records(paths["proposer"], ProposerRewardRecord), lambda r: r.total, sums, "raw"
    )
    attestation = _tally(
        read_records(paths["attestation"], AttestationRewardRecord),
        lambda r: r.total_attestation_reward,
        sums,
        "raw",
    )
    sync = _tally(
        read_records(paths["sync_committee"], SyncCommitteeRewardRecord),
        lambda r: r.sync_reward,
        sums,
        "raw",
    )

    epoch_writer = DatePartitionWriter(
        os.path.join(out_dir, "rewards_by_epoch"),
        ("validator_index", "total", "attestation", "sync_committee", "proposer", "epoch"),
        lambda r: (r.validator_index, r.total, r.attestation, r.sync_committee, r.proposer, r.epoch),
    )
    daily_writer = DatePartitionWriter(
        os.path.join(out_dir, "rewards_by_date"),
        ("validator_index", "total", "attestation", "sync_committee", "proposer", "date"),
        lambda r: (
            r.validator_index,
            r.total,
            r.attestation,
            r.sync_committee,
            r.proposer,
            r.date.isoformat(),
        ),
    )
    lifetime = _LifetimeAccumulator()

    epoch_date_cache: dict[int, date_type] = {}

    def epoch_day(epoch: int) -> date_type:
        day = epoch_date_cache.get(epoch)
        if day is None:
            day = epoch_to_utc_date(spec, epoch)
            epoch_date_cache[epoch] = day
        return day

    merged = merge_rewards_by_epoch(proposer, attestation, sync)
    merged = _tally(merged, lambda r: r.total, sums, "epoch")
    merged = _observe(merged, lambda r: epoch_writer.write(epoch_day(r.epoch), r, r.total))

    daily = rollup_daily(merged, spec)
    daily = _tally(daily, lambda r: r.total, sums, "daily")
    daily = _observe(daily, lambda r: daily_writer.write(r.date, r, r.total))
    daily = _observe(daily, lifetime.add)

    categories = daily_category_totals(daily)
    categories = _tally(categories, lambda r: r.total, sums, "category")

    category_path = os.path.join(out_dir, "daily_category_totals.csv")
    growth_path = os.path.join(out_dir, "validator_growth.csv")
    category_rows = 0
    growth_rows = 0
    with open(category_path, "w", newline="") as cf, open(growth_path, "w", newline="") as gf:
        cwriter = csv.writer(cf, lineterminator="\n")
        cwriter.writerow(CATEGORY_TOTALS_COLUMNS)
        gwriter = csv.writer(gf, lineterminator="\n")
        gwriter.writerow(GROWTH_COLUMNS)

        def write_category(day: DailyCategoryTotals) -> None:
            nonlocal category_rows
            cwriter.writerow(
                (
                    day.date.isoformat(),
                    day.total,
                    day.attestation,
                    day.proposer,
                    day.sync_committee,
                    day.active_validators,
                )
            )
            category_rows += 1

        for point in validator_growth_series(_observe(categories, write_category)):
            mean = point.mean_total_per_validator
            gwriter.writerow(
                (
                    point.date.isoformat(),
                    point.active_validators,
                    "" if mean is None else str(mean),
                )
            )
            growth_rows += 1

    epoch_manifest = epoch_writer.close()
    daily_manifest = daily_writer.close()

    lifetime_path = os.path.join(out_dir, "validator_lifetime.csv")
    lifetime_rows = 0
    lifetime_gwei = 0
    with open(lifetime_path, "w", newline="") as lf:
        lwriter = csv.writer(lf, lineterminator="\n")
        lwriter.writerow(LIFETIME_COLUMNS)
        for row in lifetime.rows():
            lwriter.writerow(
                (row.validator_index, row.total, row.attestation, row.proposer, row.sync_committee)
            )
            lifetime_rows += 1
            lifetime_gwei += row.total

    manifest = {
        "tables": {
            "rewards_by_epoch": epoch_manifest,
            "rewards_by_date": daily_manifest,
            "daily_category_totals": {
                "path": "daily_category_totals.csv",
                "rows": category_rows,
                "gwei_total": sums["category"],
            },
            "validator_lifetime": {
                "path": "validator_lifetime.csv",
                "rows": lifetime_rows,
                "gwei_total": lifetime_gwei,
            },
            "validator_growth": {"path": "validator_growth.csv", "rows": growth_rows},
        },
        "conservation": {
            "raw_gwei": sums["raw"],
            "epoch_gwei": sums["epoch"],
            "daily_gwei": sums["daily"],
            "category_gwei": sums["category"],
            "exact": sums["raw"] == sums["epoch"] == sums["daily"] == sums["category"],
        },
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as mf:
        json.dump(manifest, mf, indent=2, sort_keys=True)
        mf.write("\n")

    result = AggregationResult(
        raw_gwei=sums["raw"],
        epoch_gwei=sums["epoch"],
        daily_gwei=sums["daily"],
        category_gwei=sums["category"],
        epoch_rows=epoch_manifest["rows"],
        daily_rows=daily_manifest["rows"],
        manifest_path=manifest_path,
    )
    if not result.conserved:
        raise ConservationError(
            f"Gwei not conserved: raw={sums['raw']} epoch={sums['epoch']} "
            f"daily={sums['daily']} category={sums['category']}"
        )
    return result


def read_daily_table(out_dir: str) -> Iterator[DailyValidatorReward]:
    """Stream the date-partitioned daily table back, in date order."""
    table_dir = os.path.join(out_dir, "rewards_by_date")
    if not os.path.isdir(table_dir):
        return
    for name in sorted(os.listdir(table_dir)):
        if not name.startswith("date=") or not name.endswith(".csv"):
            continue
        yield from read_records(os.path.join(table_dir, name), DailyValidatorReward)


def read_category_totals(out_dir: str) -> Iterator[DailyCategoryTotals]:
    path = os.path.join(out_dir, "daily_category_totals.csv")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return
        if tuple(header) != CATEGORY_TOTALS_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for row in reader:
            day, total, att, prop, syn, active = row
            yield DailyCategoryTotals(
                date=date_type.fromisoformat(day),
                total=int(total),
                attestation=int(att),
                proposer=int(prop),
                sync_committee=int(syn),
                active_validators=int(active),
            )
