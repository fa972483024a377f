import datetime
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from beacon_rewards.records import (
    AttestationRewardRecord,
    DailyValidatorReward,
    EpochValidatorReward,
    ProposerRewardRecord,
    SyncCommitteeRewardRecord,
    gwei_to_ether,
    read_records,
    validate_record,
    write_records,
)

gwei = st.integers(min_value=-(10**12), max_value=10**12)


def test_gwei_to_ether_definition():
    assert gwei_to_ether(0) == Decimal(0)
    assert gwei_to_ether(1_000_000_000) == Decimal(1)
    assert gwei_to_ether(35_844_119) == Decimal("0.035844119")
    assert gwei_to_ether(-5) == Decimal("-0.000000005")


def test_validate_consistent_proposer_record():
    record = ProposerRewardRecord(
        validator_index=1,
        total=10,
        attestations=7,
        sync_aggregate=3,
        proposer_slashings=0,
        attester_slashings=0,
        slot=64,
        epoch=2,
    )
    assert validate_record(record) == []


def test_validate_flags_epoch_slot_mismatch():
    record = ProposerRewardRecord(
        validator_index=1,
        total=10,
        attestations=7,
        sync_aggregate=3,
        proposer_slashings=0,
        attester_slashings=0,
        slot=64,
        epoch=3,
    )
    violations = validate_record(record)
    assert len(violations) == 1
    assert "epoch" in violations[0]


def test_validate_attestation_record_with_reference_components():
    record = AttestationRewardRecord(
        validator_index=480908,
        head=3132,
        target=5852,
        source=3151,
        total_attestation_reward=12135,
        epoch=209985,
    )
    assert validate_record(record) == []


def test_validate_flags_attestation_total_mismatch_but_keeps_record():
    record = AttestationRewardRecord(
        validator_index=5, head=1, target=2, source=3, total_attestation_reward=7, epoch=0
    )
    violations = validate_record(record)
    assert len(violations) == 1
    assert "total_attestation_reward" in violations[0]
    assert record.total_attestation_reward == 7  # reported value is never recomputed


def test_negative_rewards_are_valid_data():
    record = AttestationRewardRecord(
        validator_index=5, head=-1, target=-2, source=-3, total_attestation_reward=-6, epoch=0
    )
    assert validate_record(record) == []


@given(attestations=gwei, sync_aggregate=gwei, p_slash=gwei, a_slash=gwei, total=gwei)
def test_proposer_sum_invariant_accepts_exactly_matching_totals(
    attestations, sync_aggregate, p_slash, a_slash, total
):
    record = ProposerRewardRecord(
        validator_index=0,
        total=total,
        attestations=attestations,
        sync_aggregate=sync_aggregate,
        proposer_slashings=p_slash,
        attester_slashings=a_slash,
        slot=96,
        epoch=3,
    )
    consistent = total == attestations + sync_aggregate + p_slash + a_slash
    assert (validate_record(record) == []) == consistent


@given(head=gwei, target=gwei, source=gwei, total=gwei)
def test_attestation_sum_invariant(head, target, source, total):
    record = AttestationRewardRecord(
        validator_index=0,
        head=head,
        target=target,
        source=source,
        total_attestation_reward=total,
        epoch=0,
    )
    assert (validate_record(record) == []) == (total == head + target + source)


@given(att=gwei, syn=gwei, prop=gwei)
def test_epoch_and_daily_totals_invariant(att, syn, prop):
    epoch_row = EpochValidatorReward(
        validator_index=0, total=att + syn + prop, attestation=att,
        sync_committee=syn, proposer=prop, epoch=9,
    )
    daily_row = DailyValidatorReward(
        validator_index=0, total=att + syn + prop, attestation=att,
        sync_committee=syn, proposer=prop, date=datetime.date(2022, 9, 16),
    )
    assert validate_record(epoch_row) == []
    assert validate_record(daily_row) == []


SAMPLES = [
    (
        ProposerRewardRecord(480908, 37087487, 35844119, 1243368, 0, 0, 6719520, 209985),
        ProposerRewardRecord,
    ),
    (SyncCommitteeRewardRecord(77, -502, 100, 3), SyncCommitteeRewardRecord),
    (AttestationRewardRecord(480908, 3132, 5852, 3151, 12135, 209985), AttestationRewardRecord),
    (EpochValidatorReward(7, 150, 100, 0, 50, 3), EpochValidatorReward),
    (
        DailyValidatorReward(7, 12, 12, 0, 0, datetime.date(2020, 12, 1)),
        DailyValidatorReward,
    ),
]


@pytest.mark.parametrize("record,record_type", SAMPLES)
def test_csv_round_trip_is_identity(tmp_path, record, record_type):
    path = str(tmp_path / "records.csv")
    assert write_records(path, [record, record], record_type) == 2
    assert list(read_records(path, record_type)) == [record, record]


def test_read_records_rejects_wrong_header(tmp_path):
    path = str(tmp_path / "records.csv")
    write_records(path, [], SyncCommitteeRewardRecord)
    with pytest.raises(ValueError, match="header"):
        list(read_records(path, ProposerRewardRecord))


def test_read_records_reports_file_and_line_for_bad_rows(tmp_path):
    path = tmp_path / "attestation_rewards.csv"
    path.write_text(
        "validator_index,head,target,source,total_attestation_reward,epoch\n1,2,3\n"
    )
    with pytest.raises(ValueError, match=r"attestation_rewards\.csv:2"):
        list(read_records(str(path), AttestationRewardRecord))
