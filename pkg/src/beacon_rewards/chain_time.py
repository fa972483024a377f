"""Slot/epoch/timestamp arithmetic for the Beacon chain.

All conversions are pure integer arithmetic anchored at the genesis
timestamp; dates are UTC calendar dates of an epoch's first slot.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from datetime import date, datetime, timezone

SlotId = int
EpochId = int

_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class ChainSpec:
    """Protocol constants needed for time arithmetic and duty periodicity."""

    genesis_timestamp: int = 1606824023
    seconds_per_slot: int = 12
    slots_per_epoch: int = 32
    sync_committee_size: int = 512
    sync_committee_period_epochs: int = 256

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"ChainSpec.{f.name} must be a positive integer, got {value!r}")

    @property
    def seconds_per_epoch(self) -> int:
        return self.seconds_per_slot * self.slots_per_epoch

    @property
    def epochs_per_day(self) -> float:
        return 86400 / self.seconds_per_epoch


DEFAULT_SPEC = ChainSpec()


def _check_unit(name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")


def slot_to_timestamp(spec: ChainSpec, slot: SlotId) -> int:
    """Unix timestamp (seconds) of the start of ``slot``."""
    _check_unit("slot", slot)
    ts = spec.genesis_timestamp + slot * spec.seconds_per_slot
    if ts > _INT64_MAX:
        raise OverflowError(f"timestamp for slot {slot} exceeds 64-bit signed seconds")
    return ts


def slot_to_epoch(spec: ChainSpec, slot: SlotId) -> EpochId:
    """Epoch containing ``slot`` (floor division)."""
    _check_unit("slot", slot)
    return slot // spec.slots_per_epoch


def epoch_to_timestamp(spec: ChainSpec, epoch: EpochId) -> int:
    """Unix timestamp of the epoch's first slot."""
    _check_unit("epoch", epoch)
    return slot_to_timestamp(spec, epoch * spec.slots_per_epoch)


def epoch_to_utc_date(spec: ChainSpec, epoch: EpochId) -> date:
    """UTC calendar date of the epoch's first slot.

    An epoch straddling UTC midnight is assigned entirely to the date of
    its first slot.
    """
    ts = epoch_to_timestamp(spec, epoch)
    return datetime.fromtimestamp(ts, tz=timezone.utc).date()
