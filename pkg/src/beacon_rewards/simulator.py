"""Synthetic duty and reward generator for the three raw streams.

The simulator reproduces the protocol's assignment structure (every
active validator attests once per epoch, one proposer per slot, a fixed
sync committee redrawn each committee period) with configurable reward
magnitudes; it does not model real issuance formulas. Reward noise is
uniform within +/-10% of the configured base, and with
``penalty_probability`` a validator's attestation reward for the epoch is
negative, scaled by ``penalty_scale``.

All randomness comes from Python's ``random.Random`` (MT19937, portable
and stable across platforms), re-seeded per (seed, purpose, epoch), so
output is a deterministic function of the config alone and identical
regardless of generation order.

Alongside the streams a ground-truth ledger of per-epoch per-validator
totals is produced; stream sums equal ledger totals exactly, which gives
downstream aggregation an end-to-end oracle.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import random
from dataclasses import dataclass, field, replace
from typing import Iterator

from .chain_time import ChainSpec, DEFAULT_SPEC
from .records import (
    ATTESTATION_COLUMNS,
    EPOCH_REWARD_COLUMNS,
    PROPOSER_COLUMNS,
    SYNC_COLUMNS,
    AttestationRewardRecord,
    EpochValidatorReward,
    ProposerRewardRecord,
    SyncCommitteeRewardRecord,
    record_to_row,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    spec: ChainSpec = DEFAULT_SPEC
    initial_validators: int = 1000
    validators_added_per_epoch: int = 0
    epochs: int = 225
    rng_seed: int = 0
    base_attestation_reward: int = 14_000  # Gwei per validator per epoch
    proposer_reward_scale: float = 2500.0  # block reward ~ scale * base
    sync_reward_per_slot: int = 15_625  # Gwei per member per slot
    penalty_probability: float = 0.0
    penalty_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.initial_validators < 1:
            raise ValueError("initial_validators must be >= 1")
        if self.validators_added_per_epoch < 0:
            raise ValueError("validators_added_per_epoch must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.penalty_probability <= 1.0:
            raise ValueError("penalty_probability must be in [0, 1]")
        if self.base_attestation_reward < 0 or self.sync_reward_per_slot < 0:
            raise ValueError("reward magnitudes must be >= 0")
        if self.proposer_reward_scale < 0 or self.penalty_scale < 0:
            raise ValueError("scales must be >= 0")

    def active_validators(self, epoch: int) -> int:
        return self.initial_validators + self.validators_added_per_epoch * epoch


@dataclass(frozen=True)
class DutyAssignment:
    epoch: int
    attesters: range
    proposers: tuple[int, ...]  # one per slot of the epoch
    sync_committee: tuple[int, ...]
    degenerate_committee: bool  # fewer active validators than committee size


@dataclass
class EpochRewards:
    epoch: int
    proposer: list[ProposerRewardRecord]
    attestation: list[AttestationRewardRecord]
    sync_committee: list[SyncCommitteeRewardRecord]
    ledger: list[EpochValidatorReward]


@dataclass
class SimOutput:
    proposer: list[ProposerRewardRecord] = field(default_factory=list)
    attestation: list[AttestationRewardRecord] = field(default_factory=list)
    sync_committee: list[SyncCommitteeRewardRecord] = field(default_factory=list)
    ledger: list[EpochValidatorReward] = field(default_factory=list)


def _rng(seed: int, purpose: str, index: int) -> random.Random:
    return random.Random(f"{seed}:{purpose}:{index}")


def assign_duties(config: SimConfig, epoch: int) -> DutyAssignment:
    """Duty assignment for one epoch.

    Every active validator attests; each slot's proposer is drawn
    uniformly; the sync committee is drawn at the start of its period and
    held fixed until the next one.
    """
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside simulated range [0, {config.epochs})")
    spec = config.spec
    active = config.active_validators(epoch)

    period = epoch // spec.sync_committee_period_epochs
    period_start = period * spec.sync_committee_period_epochs
    pool = config.active_validators(period_start)
    degenerate = pool < spec.sync_committee_size
    if degenerate:
        committee = tuple(range(pool))
        logger.warning(
            "sync committee period %d: only %d active validators for committee size %d",
            period,
            pool,
            spec.sync_committee_size,
        )
    else:
        committee_rng = _rng(config.rng_seed, "committee", period)
        committee = tuple(sorted(committee_rng.sample(range(pool), spec.sync_committee_size)))

    proposer_rng = _rng(config.rng_seed, "proposer", epoch)
    proposers = tuple(proposer_rng.randrange(active) for _ in range(spec.slots_per_epoch))

    return DutyAssignment(
        epoch=epoch,
        attesters=range(active),
        proposers=proposers,
        sync_committee=committee,
        degenerate_committee=degenerate,
    )


def _portion(total: int, percent: int) -> int:
    return (total * percent) // 100


def simulate_epoch(config: SimConfig, epoch: int) -> EpochRewards:
    """Generate one epoch's records plus its ground-truth ledger rows."""
    spec = config.spec
    duties = assign_duties(config, epoch)
    totals: dict[int, list[int]] = {}  # vi -> [attestation, sync, proposer]

    def bucket(vi: int) -> list[int]:
        entry = totals.get(vi)
        if entry is None:
            entry = totals[vi] = [0, 0, 0]
        return entry

    att_rng = _rng(config.rng_seed, "attest", epoch)
    attestation = []
    base = config.base_attestation_reward
    for vi in duties.attesters:
        penalized = att_rng.random() < config.penalty_probability
        noise = att_rng.uniform(-0.1, 0.1)
        total = round(base * (1 + noise))
        if penalized:
            total = -round(base * config.penalty_scale * (1 + noise))
        target = _portion(total, 45)
        source = _portion(total, 30)
        head = total - target - source
        attestation.append(
            AttestationRewardRecord(
                validator_index=vi,
                head=head,
                target=target,
                source=source,
                total_attestation_reward=total,
                epoch=epoch,
            )
        )
        bucket(vi)[0] += total

    prop_rng = _rng(config.rng_seed, "propose", epoch)
    proposer = []
    block_base = config.base_attestation_reward * config.proposer_reward_scale
    for slot_index, vi in enumerate(duties.proposers):
        slot = epoch * spec.slots_per_epoch + slot_index
        attestations_comp = round(block_base * (1 + prop_rng.uniform(-0.1, 0.1)))
        sync_aggregate = _portion(attestations_comp, 4)
        total = attestations_comp + sync_aggregate
        proposer.append(
            ProposerRewardRecord(
                validator_index=vi,
                total=total,
                attestations=attestations_comp,
                sync_aggregate=sync_aggregate,
                proposer_slashings=0,
                attester_slashings=0,
                slot=slot,
                epoch=epoch,
            )
        )
        bucket(vi)[2] += total

    sync_rng = _rng(config.rng_seed, "sync", epoch)
    sync_committee = []
    sync_base = config.sync_reward_per_slot
    for slot_index in range(spec.slots_per_epoch):
        slot = epoch * spec.slots_per_epoch + slot_index
        for vi in duties.sync_committee:
            reward = round(sync_base * (1 + sync_rng.uniform(-0.1, 0.1)))
            sync_committee.append(
                SyncCommitteeRewardRecord(
                    validator_index=vi, sync_reward=reward, slot=slot, epoch=epoch
                )
            )
            bucket(vi)[1] += reward

    ledger = [
        EpochValidatorReward(
            validator_index=vi,
            total=att + syn + prop,
            attestation=att,
            sync_committee=syn,
            proposer=prop,
            epoch=epoch,
        )
        for vi, (att, syn, prop) in sorted(totals.items())
    ]
    return EpochRewards(
        epoch=epoch,
        proposer=proposer,
        attestation=attestation,
        sync_committee=sync_committee,
        ledger=ledger,
    )


def emit_epochs(config: SimConfig) -> Iterator[EpochRewards]:
    for epoch in range(config.epochs):
        yield simulate_epoch(config, epoch)


def emit_rewards(config: SimConfig) -> SimOutput:
    """Materialize all streams; convenient for small configs and tests."""
    out = SimOutput()
    for bundle in emit_epochs(config):
        out.proposer.extend(bundle.proposer)
        out.attestation.extend(bundle.attestation)
        out.sync_committee.extend(bundle.sync_committee)
        out.ledger.extend(bundle.ledger)
    return out


def _int_str(v: int) -> str:
    return str(v)


def write_simulation(config: SimConfig, out_dir: str, write_fixtures: bool = True) -> dict:
    """Write raw CSVs, the ground-truth ledger, and (optionally) JSON
    fixtures replayable by the collection client.

    Layout under out_dir:
        proposer_rewards.csv, attestation_rewards.csv,
        sync_committee_rewards.csv, ledger.csv,
        fixtures/{proposer,attestation,sync_committee}/<unit>.json
    """
    os.makedirs(out_dir, exist_ok=True)
    fixture_dirs = {}
    if write_fixtures:
        for stream in ("proposer", "attestation", "sync_committee"):
            d = os.path.join(out_dir, "fixtures", stream)
            os.makedirs(d, exist_ok=True)
            fixture_dirs[stream] = d

    counts = {"proposer": 0, "attestation": 0, "sync_committee": 0, "ledger": 0}
    with open(os.path.join(out_dir, "proposer_rewards.csv"), "w", newline="") as pf, open(
        os.path.join(out_dir, "attestation_rewards.csv"), "w", newline=""
    ) as af, open(
        os.path.join(out_dir, "sync_committee_rewards.csv"), "w", newline=""
    ) as sf, open(
        os.path.join(out_dir, "ledger.csv"), "w", newline=""
    ) as lf:
        pw = csv.writer(pf, lineterminator="\n")
        aw = csv.writer(af, lineterminator="\n")
        sw = csv.writer(sf, lineterminator="\n")
        lw = csv.writer(lf, lineterminator="\n")
        pw.writerow(PROPOSER_COLUMNS)
        aw.writerow(ATTESTATION_COLUMNS)
        sw.writerow(SYNC_COLUMNS)
        lw.writerow(EPOCH_REWARD_COLUMNS)

        for bundle in emit_epochs(config):
            for r in bundle.proposer:
                pw.writerow(record_to_row(r))
            for r in bundle.attestation:
                aw.writerow(record_to_row(r))
            for r in bundle.sync_committee:
                sw.writerow(record_to_row(r))
            for r in bundle.ledger:
                lw.writerow(record_to_row(r))
            counts["proposer"] += len(bundle.proposer)
            counts["attestation"] += len(bundle.attestation)
            counts["sync_committee"] += len(bundle.sync_committee)
            counts["ledger"] += len(bundle.ledger)

            if write_fixtures:
                _write_epoch_fixtures(bundle, fixture_dirs)
    return counts


def _write_epoch_fixtures(bundle: EpochRewards, fixture_dirs: dict) -> None:
    # Wire-shaped payloads with string-encoded integers, one file per unit.
    for r in bundle.proposer:
        payload = {
            "data": {
                "proposer_index": _int_str(r.validator_index),
                "total": _int_str(r.total),
                "attestations": _int_str(r.attestations),
                "sync_aggregate": _int_str(r.sync_aggregate),
                "proposer_slashings": _int_str(r.proposer_slashings),
                "attester_slashings": _int_str(r.attester_slashings),
            }
        }
        with open(os.path.join(fixture_dirs["proposer"], f"{r.slot}.json"), "w") as f:
            json.dump(payload, f, separators=(",", ":"))

    att_payload = {
        "data": {
            "total_rewards": [
                {
                    "validator_index": _int_str(r.validator_index),
                    "head": _int_str(r.head),
                    "target": _int_str(r.target),
                    "source": _int_str(r.source),
                }
                for r in bundle.attestation
            ]
        }
    }
    with open(os.path.join(fixture_dirs["attestation"], f"{bundle.epoch}.json"), "w") as f:
        json.dump(att_payload, f, separators=(",", ":"))

    by_slot: dict[int, list] = {}
    for r in bundle.sync_committee:
        by_slot.setdefault(r.slot, []).append(r)
    for slot, rows in by_slot.items():
        payload = {
            "data": [
                {"validator_index": _int_str(r.validator_index), "reward": _int_str(r.sync_reward)}
                for r in rows
            ]
        }
        with open(os.path.join(fixture_dirs["sync_committee"], f"{slot}.json"), "w") as f:
            json.dump(payload, f, separators=(",", ":"))


def load_sim_config(path: str) -> SimConfig:
    """Load a SimConfig from a TOML or JSON file.

    Top-level keys mirror SimConfig fields; chain constants may be
    overridden in a ``chain`` table/object.
    """
    if path.endswith(".json"):
        with open(path) as f:
            data = json.load(f)
    else:
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as f:
            data = tomllib.load(f)

    chain = data.pop("chain", {})
    spec = replace(DEFAULT_SPEC, **chain) if chain else DEFAULT_SPEC
    known = {
        "initial_validators",
        "validators_added_per_epoch",
        "epochs",
        "rng_seed",
        "base_attestation_reward",
        "proposer_reward_scale",
        "sync_reward_per_slot",
        "penalty_probability",
        "penalty_scale",
    }
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown simulator config keys {sorted(unknown)}")
    return SimConfig(spec=spec, **data)


__all__ = [
    "SimConfig",
    "DutyAssignment",
    "EpochRewards",
    "SimOutput",
    "assign_duties",
    "simulate_epoch",
    "emit_epochs",
    "emit_rewards",
    "write_simulation",
    "load_sim_config",
]
