"""Reward record types, unit conversion, and CSV schemas.

The three raw streams (proposer, attestation, sync committee) and the two
joined tables (per-epoch, per-day) are stored as signed 64-bit integer
Gwei. Conversion to Ether happens only at export boundaries so that
aggregation and conservation checks stay exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from typing import Iterable, Iterator

from .chain_time import DEFAULT_SPEC, ChainSpec, slot_to_epoch

Gwei = int

GWEI_PER_ETHER = 10**9


def gwei_to_ether(v: Gwei) -> Decimal:
    """Convert integer Gwei to Ether, exact in decimal representation."""
    return Decimal(v).scaleb(-9)


@dataclass(frozen=True, slots=True)
class ProposerRewardRecord:
    """One proposed block's reward, decomposed by duty source."""

    validator_index: int
    total: Gwei
    attestations: Gwei
    sync_aggregate: Gwei
    proposer_slashings: Gwei
    attester_slashings: Gwei
    slot: int
    epoch: int


@dataclass(frozen=True, slots=True)
class SyncCommitteeRewardRecord:
    """One committee member's reward (or penalty) for one slot."""

    validator_index: int
    sync_reward: Gwei
    slot: int
    epoch: int


@dataclass(frozen=True, slots=True)
class AttestationRewardRecord:
    """One validator's per-epoch attestation reward, split by vote type.

    Components and the total may be negative when duties were missed.
    """

    validator_index: int
    head: Gwei
    target: Gwei
    source: Gwei
    total_attestation_reward: Gwei
    epoch: int


@dataclass(frozen=True, slots=True)
class EpochValidatorReward:
    """Joined per-epoch totals for one validator."""

    validator_index: int
    total: Gwei
    attestation: Gwei
    sync_committee: Gwei
    proposer: Gwei
    epoch: int


@dataclass(frozen=True, slots=True)
class DailyValidatorReward:
    """Joined per-UTC-day totals for one validator."""

    validator_index: int
    total: Gwei
    attestation: Gwei
    sync_committee: Gwei
    proposer: Gwei
    date: date


RewardRecord = (
    ProposerRewardRecord
    | SyncCommitteeRewardRecord
    | AttestationRewardRecord
    | EpochValidatorReward
    | DailyValidatorReward
)


def validate_record(record: RewardRecord, spec: ChainSpec = DEFAULT_SPEC) -> list[str]:
    """Check a record's schema invariants.

    Returns a list of violation descriptions, one per broken rule; an
    empty list means the record is consistent. Violations are data, not
    failures: callers decide whether to keep, count, or drop.
    """
    violations: list[str] = []
    if isinstance(record, ProposerRewardRecord):
        component_sum = (
            record.attestations
            + record.sync_aggregate
            + record.proposer_slashings
            + record.attester_slashings
        )
        if record.total != component_sum:
            violations.append(
                f"total: {record.total} != attestations + sync_aggregate + "
                f"proposer_slashings + attester_slashings = {component_sum}"
            )
        _check_slot_epoch(record.slot, record.epoch, spec, violations)
    elif isinstance(record, SyncCommitteeRewardRecord):
        _check_slot_epoch(record.slot, record.epoch, spec, violations)
    elif isinstance(record, AttestationRewardRecord):
        component_sum = record.head + record.target + record.source
        if record.total_attestation_reward != component_sum:
            violations.append(
                f"total_attestation_reward: {record.total_attestation_reward} "
                f"!= head + target + source = {component_sum}"
            )
    elif isinstance(record, (EpochValidatorReward, DailyValidatorReward)):
        component_sum = record.attestation + record.sync_committee + record.proposer
        if record.total != component_sum:
            violations.append(
                f"total: {record.total} != attestation + sync_committee + "
                f"proposer = {component_sum}"
            )
    else:
        raise TypeError(f"not a reward record: {type(record).__name__}")
    if record.validator_index < 0:
        violations.append(f"validator_index: must be non-negative, got {record.validator_index}")
    return violations


def _check_slot_epoch(slot: int, epoch: int, spec: ChainSpec, violations: list[str]) -> None:
    if slot < 0:
        violations.append(f"slot: must be non-negative, got {slot}")
        return
    derived = slot_to_epoch(spec, slot)
    if epoch != derived:
        violations.append(f"epoch: {epoch} != slot_to_epoch({slot}) = {derived}")


# CSV schemas. Column order matches dataclass field order; raw files hold
# integer Gwei, the date column is ISO YYYY-MM-DD.

PROPOSER_COLUMNS = (
    "validator_index",
    "total",
    "attestations",
    "sync_aggregate",
    "proposer_slashings",
    "attester_slashings",
    "slot",
    "epoch",
)
SYNC_COLUMNS = ("validator_index", "sync_reward", "slot", "epoch")
ATTESTATION_COLUMNS = (
    "validator_index",
    "head",
    "target",
    "source",
    "total_attestation_reward",
    "epoch",
)
EPOCH_REWARD_COLUMNS = (
    "validator_index",
    "total",
    "attestation",
    "sync_committee",
    "proposer",
    "epoch",
)
DAILY_REWARD_COLUMNS = (
    "validator_index",
    "total",
    "attestation",
    "sync_committee",
    "proposer",
    "date",
)

CSV_COLUMNS: dict[type, tuple[str, ...]] = {
    ProposerRewardRecord: PROPOSER_COLUMNS,
    SyncCommitteeRewardRecord: SYNC_COLUMNS,
    AttestationRewardRecord: ATTESTATION_COLUMNS,
    EpochValidatorReward: EPOCH_REWARD_COLUMNS,
    DailyValidatorReward: DAILY_REWARD_COLUMNS,
}

# Columns that hold Gwei amounts, used by the Ether export path.
GWEI_COLUMNS: dict[tuple[str, ...], tuple[str, ...]] = {
    PROPOSER_COLUMNS: (
        "total",
        "attestations",
        "sync_aggregate",
        "proposer_slashings",
        "attester_slashings",
    ),
    SYNC_COLUMNS: ("sync_reward",),
    ATTESTATION_COLUMNS: ("head", "target", "source", "total_attestation_reward"),
    EPOCH_REWARD_COLUMNS: ("total", "attestation", "sync_committee", "proposer"),
    DAILY_REWARD_COLUMNS: ("total", "attestation", "sync_committee", "proposer"),
}


def record_to_row(record: RewardRecord) -> tuple:
    if isinstance(record, ProposerRewardRecord):
        return (
            record.validator_index,
            record.total,
            record.attestations,
            record.sync_aggregate,
            record.proposer_slashings,
            record.attester_slashings,
            record.slot,
            record.epoch,
        )
    if isinstance(record, SyncCommitteeRewardRecord):
        return (record.validator_index, record.sync_reward, record.slot, record.epoch)
    if isinstance(record, AttestationRewardRecord):
        return (
            record.validator_index,
            record.head,
            record.target,
            record.source,
            record.total_attestation_reward,
            record.epoch,
        )
    if isinstance(record, EpochValidatorReward):
        return (
            record.validator_index,
            record.total,
            record.attestation,
            record.sync_committee,
            record.proposer,
            record.epoch,
        )
    if isinstance(record, DailyValidatorReward):
        return (
            record.validator_index,
            record.total,
            record.attestation,
            record.sync_committee,
            record.proposer,
            record.date.isoformat(),
        )
    raise TypeError(f"not a reward record: {type(record).__name__}")


def row_to_record(row: Iterable[str], record_type: type) -> RewardRecord:
    values = list(row)
    if record_type is DailyValidatorReward:
        *gwei, day = values
        return DailyValidatorReward(*(int(v) for v in gwei), date.fromisoformat(day))
    return record_type(*(int(v) for v in values))


def write_records(path: str, records: Iterable[RewardRecord], record_type: type) -> int:
    """Write records to a CSV file with the type's schema header. Returns row count."""
    columns = CSV_COLUMNS[record_type]
    n = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            writer.writerow(record_to_row(record))
            n += 1
    return n


def read_records(path: str, record_type: type) -> Iterator[RewardRecord]:
    """Yield records from a CSV file, checking the header against the schema."""
    columns = CSV_COLUMNS[record_type]
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return
        if tuple(header) != columns:
            raise ValueError(
                f"{path}: header {header!r} does not match {record_type.__name__} "
                f"schema {list(columns)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                yield row_to_record(row, record_type)
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad row {row!r}: {exc}") from exc
