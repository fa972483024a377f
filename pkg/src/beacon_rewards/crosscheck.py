"""Crosschecks of pipeline output against external reference records.

Two checks: per-validator income details for a single (epoch, validator)
against the raw collected streams, and the daily total-income series
against the aggregated category totals. Reference inputs are operator
supplied files; nothing is fetched from third parties.

Execution-layer income (transaction fees, MEV) present in reference
records is explicitly excluded from comparison.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import date as date_type
from decimal import Decimal
from typing import Iterable

from .aggregate import DailyCategoryTotals
from .records import (
    AttestationRewardRecord,
    ProposerRewardRecord,
    gwei_to_ether,
)


@dataclass(frozen=True)
class ReferenceIncomeRecord:
    """One validator's income detail for one epoch, from an external source."""

    epoch: int
    validator_index: int
    attestation_source: int
    attestation_target: int
    attestation_head: int
    proposer_attestation_inclusion: int
    proposer_sync_inclusion: int
    transaction_fee_wei: int = 0  # execution layer; never compared

    def __post_init__(self) -> None:
        if self.epoch < 0 or self.validator_index < 0:
            raise ValueError("epoch and validator_index must be non-negative")


@dataclass(frozen=True)
class ReferenceDailyTotal:
    date: date_type
    total_income_ether: Decimal


@dataclass(frozen=True)
class FieldComparison:
    field: str
    ours: int
    reference: int
    delta: int  # ours - reference
    passed: bool


@dataclass
class ValidatorCrosscheckReport:
    status: str  # "pass" | "fail" | "uncovered"
    epoch: int
    validator_index: int
    tolerance_gwei: int
    fields: list[FieldComparison]
    excluded_fields: tuple[str, ...] = ("transaction_fee_wei",)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "epoch": self.epoch,
            "validator_index": self.validator_index,
            "tolerance_gwei": self.tolerance_gwei,
            "excluded_fields": list(self.excluded_fields),
            "fields": [
                {
                    "field": f.field,
                    "ours": f.ours,
                    "reference": f.reference,
                    "delta": f.delta,
                    "passed": f.passed,
                }
                for f in self.fields
            ],
        }

    def render_text(self) -> str:
        lines = [
            f"validator {self.validator_index} epoch {self.epoch}: {self.status} "
            f"(tolerance {self.tolerance_gwei} Gwei)"
        ]
        for f in self.fields:
            mark = "ok" if f.passed else "FAIL"
            lines.append(
                f"  {f.field}: ours={f.ours} reference={f.reference} delta={f.delta:+d} [{mark}]"
            )
        lines.append(f"  excluded: {', '.join(self.excluded_fields)}")
        return "\n".join(lines)


def crosscheck_validator_epoch(
    attestation_records: Iterable[AttestationRewardRecord],
    proposer_records: Iterable[ProposerRewardRecord],
    ref: ReferenceIncomeRecord,
    tolerance_gwei: int = 0,
) -> ValidatorCrosscheckReport:
    """Compare our collected rewards for (ref.epoch, ref.validator_index).

    Attestation head/target/source come from the attestation stream;
    the reference's proposer attestation-inclusion and sync-inclusion
    amounts are compared against the proposer record's ``attestations``
    and ``sync_aggregate`` components, summed over the validator's blocks
    in that epoch.
    """
    att = [
        r
        for r in attestation_records
        if r.epoch == ref.epoch and r.validator_index == ref.validator_index
    ]
    props = [
        r
        for r in proposer_records
        if r.epoch == ref.epoch and r.validator_index == ref.validator_index
    ]
    if not att and not props:
        return ValidatorCrosscheckReport(
            status="uncovered",
            epoch=ref.epoch,
            validator_index=ref.validator_index,
            tolerance_gwei=tolerance_gwei,
            fields=[],
        )

    our_head = sum(r.head for r in att)
    our_target = sum(r.target for r in att)
    our_source = sum(r.source for r in att)
    our_prop_att = sum(r.attestations for r in props)
    our_prop_sync = sum(r.sync_aggregate for r in props)

    comparisons = []
    for name, ours, reference in (
        ("attestation_head", our_head, ref.attestation_head),
        ("attestation_target", our_target, ref.attestation_target),
        ("attestation_source", our_source, ref.attestation_source),
        ("proposer_attestation_inclusion", our_prop_att, ref.proposer_attestation_inclusion),
        ("proposer_sync_inclusion", our_prop_sync, ref.proposer_sync_inclusion),
    ):
        delta = ours - reference
        comparisons.append(
            FieldComparison(
                field=name,
                ours=ours,
                reference=reference,
                delta=delta,
                passed=abs(delta) <= tolerance_gwei,
            )
        )
    status = "pass" if all(c.passed for c in comparisons) else "fail"
    return ValidatorCrosscheckReport(
        status=status,
        epoch=ref.epoch,
        validator_index=ref.validator_index,
        tolerance_gwei=tolerance_gwei,
        fields=comparisons,
    )


@dataclass(frozen=True)
class DailyComparison:
    date: date_type
    ours_ether: Decimal
    reference_ether: Decimal
    delta_ether: Decimal  # ours - reference
    rel_diff: float | None  # None when reference is zero and ours is not
    passed: bool


@dataclass
class DailyCrosscheckReport:
    status: str  # "pass" | "fail"
    rel_tolerance: float
    days: list[DailyComparison]

    @property
    def pass_rate(self) -> float:
        return sum(1 for d in self.days if d.passed) / len(self.days)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "rel_tolerance": self.rel_tolerance,
            "pass_rate": self.pass_rate,
            "days": [
                {
                    "date": d.date.isoformat(),
                    "ours_ether": str(d.ours_ether),
                    "reference_ether": str(d.reference_ether),
                    "delta_ether": str(d.delta_ether),
                    "rel_diff": d.rel_diff,
                    "passed": d.passed,
                }
                for d in self.days
            ],
        }

    def render_text(self) -> str:
        lines = [
            f"daily totals: {self.status} "
            f"({self.pass_rate:.1%} of {len(self.days)} days within {self.rel_tolerance:.2%})"
        ]
        for d in self.days:
            mark = "ok" if d.passed else "FAIL"
            rel = "n/a" if d.rel_diff is None else f"{d.rel_diff:+.4%}"
            lines.append(
                f"  {d.date.isoformat()}: ours={d.ours_ether} ref={d.reference_ether} "
                f"rel={rel} [{mark}]"
            )
        return "\n".join(lines)


def crosscheck_daily_totals(
    ours: Iterable[DailyCategoryTotals],
    refs: Iterable[ReferenceDailyTotal],
    rel_tolerance: float = 0.01,
) -> DailyCrosscheckReport:
    """Per-date relative comparison of our daily totals (Ether) vs a reference."""
    ours_by_date = {day.date: day for day in ours}
    ref_by_date = {r.date: r for r in refs}
    overlap = sorted(set(ours_by_date) & set(ref_by_date))
    if not overlap:
        raise ValueError("no overlapping dates between our totals and the reference series")

    days = []
    for day in overlap:
        our_ether = gwei_to_ether(ours_by_date[day].total)
        ref_ether = ref_by_date[day].total_income_ether
        delta = our_ether - ref_ether
        if ref_ether == 0:
            rel = 0.0 if delta == 0 else None
            passed = delta == 0
        else:
            rel = float(delta / ref_ether)
            passed = abs(rel) <= rel_tolerance
        days.append(
            DailyComparison(
                date=day,
                ours_ether=our_ether,
                reference_ether=ref_ether,
                delta_ether=delta,
                rel_diff=rel,
                passed=passed,
            )
        )
    status = "pass" if all(d.passed for d in days) else "fail"
    return DailyCrosscheckReport(status=status, rel_tolerance=rel_tolerance, days=days)


# --- reference file adapters -------------------------------------------------

_INCOME_FIELD_MAP = {
    # income-detail-history API field -> ReferenceIncomeRecord field
    "attestation_source_reward": "attestation_source",
    "attestation_target_reward": "attestation_target",
    "attestation_head_reward": "attestation_head",
    "proposer_attestation_inclusion_reward": "proposer_attestation_inclusion",
    "proposer_sync_inclusion_reward": "proposer_sync_inclusion",
    "tx_fee_reward_wei": "transaction_fee_wei",
}

_REFERENCE_FIELDS = (
    "epoch",
    "validator_index",
    "attestation_source",
    "attestation_target",
    "attestation_head",
    "proposer_attestation_inclusion",
    "proposer_sync_inclusion",
    "transaction_fee_wei",
)


def _record_from_flat(obj: dict) -> ReferenceIncomeRecord:
    kwargs = {name: int(obj.get(name, 0)) for name in _REFERENCE_FIELDS}
    return ReferenceIncomeRecord(**kwargs)


def _record_from_api(entry: dict) -> ReferenceIncomeRecord:
    income = entry.get("income", {})
    kwargs = {"epoch": int(entry["epoch"])}
    vi = entry.get("validatorindex", entry.get("validator_index"))
    if vi is None:
        raise ValueError("income entry lacks a validator index")
    kwargs["validator_index"] = int(vi)
    for api_name, field_name in _INCOME_FIELD_MAP.items():
        kwargs[field_name] = int(income.get(api_name, 0))
    return ReferenceIncomeRecord(**kwargs)


def load_reference_income(path: str) -> list[ReferenceIncomeRecord]:
    """Load reference income records from JSON (income-detail-history shape
    or a flat list) or CSV with our own column names."""
    if path.endswith(".csv"):
        with open(path, newline="") as f:
            return [_record_from_flat(row) for row in csv.DictReader(f)]
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict) and isinstance(data.get("data"), list):
        return [_record_from_api(entry) for entry in data["data"]]
    if isinstance(data, dict):
        data = [data]
    records = []
    for obj in data:
        if "income" in obj:
            records.append(_record_from_api(obj))
        else:
            records.append(_record_from_flat(obj))
    return records


def load_reference_daily_totals(path: str) -> list[ReferenceDailyTotal]:
    """Load a daily total-income series from CSV (date,total_income_ether)
    or a JSON list of {date, total_income_ether}."""
    totals = []
    if path.endswith(".csv"):
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                totals.append(
                    ReferenceDailyTotal(
                        date=date_type.fromisoformat(row["date"]),
                        total_income_ether=Decimal(row["total_income_ether"]),
                    )
                )
        return totals
    with open(path) as f:
        data = json.load(f)
    for obj in data:
        totals.append(
            ReferenceDailyTotal(
                date=date_type.fromisoformat(obj["date"]),
                total_income_ether=Decimal(str(obj["total_income_ether"])),
            )
        )
    return totals
