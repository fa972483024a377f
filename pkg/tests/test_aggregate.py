import datetime
import json
import os
import random
from decimal import Decimal

import psutil
import pytest

from beacon_rewards.aggregate import (
    DailyCategoryTotals,
    UnsortedInputError,
    csv_sorted_by,
    daily_category_totals,
    merge_rewards_by_epoch,
    read_category_totals,
    read_daily_table,
    rollup_daily,
    run_aggregation,
    sort_csv,
    sort_csv_if_needed,
    validator_growth_series,
    validator_lifetime_totals,
)
from beacon_rewards.chain_time import DEFAULT_SPEC, epoch_to_utc_date
from beacon_rewards.records import (
    AttestationRewardRecord,
    DailyValidatorReward,
    EpochValidatorReward,
    ProposerRewardRecord,
    SyncCommitteeRewardRecord,
    write_records,
)
from beacon_rewards.simulator import emit_rewards, write_simulation


def att(vi, epoch, total):
    return AttestationRewardRecord(
        validator_index=vi,
        head=total,
        target=0,
        source=0,
        total_attestation_reward=total,
        epoch=epoch,
    )


def prop(vi, epoch, total, slot=None):
    return ProposerRewardRecord(
        validator_index=vi,
        total=total,
        attestations=total,
        sync_aggregate=0,
        proposer_slashings=0,
        attester_slashings=0,
        slot=epoch * 32 if slot is None else slot,
        epoch=epoch,
    )


def sync(vi, epoch, reward, slot=None):
    return SyncCommitteeRewardRecord(
        validator_index=vi,
        sync_reward=reward,
        slot=epoch * 32 if slot is None else slot,
        epoch=epoch,
    )


def test_merge_joins_components_on_epoch_and_validator():
    merged = list(merge_rewards_by_epoch([prop(7, 3, 50)], [att(7, 3, 100)], []))
    assert merged == [
        EpochValidatorReward(
            validator_index=7, total=150, attestation=100, sync_committee=0, proposer=50, epoch=3
        )
    ]


def test_merge_passes_penalties_through():
    merged = list(merge_rewards_by_epoch([], [], [sync(9, 0, -10)]))
    assert merged == [
        EpochValidatorReward(
            validator_index=9, total=-10, attestation=0, sync_committee=-10, proposer=0, epoch=0
        )
    ]


def test_merge_sums_repeated_keys_within_stream():
    # a validator proposing twice in one epoch contributes one joined row
    proposals = [prop(4, 1, 30, slot=33), prop(4, 1, 20, slot=40)]
    merged = list(merge_rewards_by_epoch(proposals, [], []))
    assert merged == [
        EpochValidatorReward(
            validator_index=4, total=50, attestation=0, sync_committee=0, proposer=50, epoch=1
        )
    ]


def test_merge_output_is_sorted_and_conserves_gwei():
    rnd = random.Random(42)
    epochs = 10
    validators = 1000
    proposer_stream, attestation_stream, sync_stream = [], [], []
    for epoch in range(epochs):
        for vi in range(validators):
            if rnd.random() < 0.9:
                attestation_stream.append(att(vi, epoch, rnd.randint(-100, 10_000)))
            if rnd.random() < 0.02:
                attestation_stream.append(att(vi, epoch, rnd.randint(-100, 100)))
            if rnd.random() < 0.03:
                proposer_stream.append(prop(vi, epoch, rnd.randint(0, 50_000)))
            if rnd.random() < 0.05:
                sync_stream.append(sync(vi, epoch, rnd.randint(-500, 500)))
    merged = list(merge_rewards_by_epoch(proposer_stream, attestation_stream, sync_stream))

    keys = [(r.epoch, r.validator_index) for r in merged]
    assert keys == sorted(keys)
    assert len(keys) == len(set(keys))

    # brute-force in-memory join oracle
    expected: dict[tuple[int, int], list[int]] = {}
    for r in attestation_stream:
        expected.setdefault((r.epoch, r.validator_index), [0, 0, 0])[0] += (
            r.total_attestation_reward
        )
    for r in sync_stream:
        expected.setdefault((r.epoch, r.validator_index), [0, 0, 0])[1] += r.sync_reward
    for r in proposer_stream:
        expected.setdefault((r.epoch, r.validator_index), [0, 0, 0])[2] += r.total
    assert len(merged) == len(expected)
    for row in merged:
        a, s, p = expected[(row.epoch, row.validator_index)]
        assert (row.attestation, row.sync_committee, row.proposer) == (a, s, p)
        assert row.total == a + s + p

    inputs_sum = (
        sum(r.total_attestation_reward for r in attestation_stream)
        + sum(r.sync_reward for r in sync_stream)
        + sum(r.total for r in proposer_stream)
    )
    assert sum(r.total for r in merged) == inputs_sum


def test_merge_aborts_on_unsorted_input_with_position():
    bad = [att(5, 1, 10), att(3, 1, 10)]
    with pytest.raises(UnsortedInputError, match="record 2"):
        list(merge_rewards_by_epoch([], bad, []))


def epoch_row(vi, epoch, total):
    return EpochValidatorReward(
        validator_index=vi, total=total, attestation=total, sync_committee=0, proposer=0,
        epoch=epoch,
    )


def test_rollup_groups_same_day_epochs():
    rows = list(rollup_daily([epoch_row(1, 0, 5), epoch_row(1, 1, 7)], DEFAULT_SPEC))
    assert rows == [
        DailyValidatorReward(
            validator_index=1, total=12, attestation=12, sync_committee=0, proposer=0,
            date=datetime.date(2020, 12, 1),
        )
    ]


def test_rollup_splits_at_utc_midnight():
    # genesis is 2020-12-01T12:00:23Z, so the first midnight falls between
    # epochs 112 (starts 23:57:11) and 113 (starts 00:03:35 next day)
    assert epoch_to_utc_date(DEFAULT_SPEC, 112) == datetime.date(2020, 12, 1)
    assert epoch_to_utc_date(DEFAULT_SPEC, 113) == datetime.date(2020, 12, 2)
    rows = list(rollup_daily([epoch_row(1, 112, 5), epoch_row(1, 113, 7)], DEFAULT_SPEC))
    assert [r.date for r in rows] == [datetime.date(2020, 12, 1), datetime.date(2020, 12, 2)]
    assert [r.total for r in rows] == [5, 7]


def test_rollup_keeps_epochs_224_and_225_on_the_same_utc_day():
    # both are within 2020-12-02 (the day boundary is not at epoch 225;
    # only whole-day spans are 225 epochs long)
    rows = list(rollup_daily([epoch_row(1, 224, 5), epoch_row(1, 225, 7)], DEFAULT_SPEC))
    assert [(r.date, r.total) for r in rows] == [(datetime.date(2020, 12, 2), 12)]


def test_rollup_requires_epoch_sorted_input():
    with pytest.raises(UnsortedInputError, match="record 2"):
        list(rollup_daily([epoch_row(1, 225, 5), epoch_row(1, 0, 7)], DEFAULT_SPEC))


def test_rollup_matches_brute_force_on_simulator_output(small_sim_config):
    out = emit_rewards(small_sim_config)
    daily = list(rollup_daily(out.ledger, small_sim_config.spec))

    expected: dict[tuple, list[int]] = {}
    from beacon_rewards.chain_time import epoch_to_utc_date

    for row in out.ledger:
        key = (epoch_to_utc_date(small_sim_config.spec, row.epoch), row.validator_index)
        acc = expected.setdefault(key, [0, 0, 0])
        acc[0] += row.attestation
        acc[1] += row.sync_committee
        acc[2] += row.proposer
    assert len(daily) == len(expected)
    for row in daily:
        a, s, p = expected[(row.date, row.validator_index)]
        assert (row.attestation, row.sync_committee, row.proposer, row.total) == (a, s, p, a + s + p)


def daily_row(vi, day, total):
    return DailyValidatorReward(
        validator_index=vi, total=total, attestation=total, sync_committee=0, proposer=0, date=day
    )


def test_daily_category_totals_sums_and_counts():
    day = datetime.date(2022, 9, 16)
    one_ether = 10**9
    rows = [daily_row(1, day, one_ether), daily_row(2, day, 2 * one_ether)]
    totals = list(daily_category_totals(rows))
    assert totals == [
        DailyCategoryTotals(
            date=day,
            total=3 * one_ether,
            attestation=3 * one_ether,
            proposer=0,
            sync_committee=0,
            active_validators=2,
        )
    ]


def test_lifetime_totals_accumulate_across_days():
    d0 = datetime.date(2022, 9, 16)
    rows = [
        daily_row(5, d0, 1),
        daily_row(5, d0 + datetime.timedelta(days=1), 2),
        daily_row(5, d0 + datetime.timedelta(days=2), 3),
    ]
    totals = list(validator_lifetime_totals(rows))
    assert len(totals) == 1
    assert totals[0].validator_index == 5
    assert totals[0].total == 6


def test_lifetime_totals_keep_zero_sync_category(small_sim_config):
    out = emit_rewards(small_sim_config)
    daily = rollup_daily(out.ledger, small_sim_config.spec)
    totals = {t.validator_index: t for t in validator_lifetime_totals(daily)}
    committee = set()
    for r in out.sync_committee:
        committee.add(r.validator_index)
    never_selected = set(totals) - committee
    assert never_selected  # toy config leaves most validators out of the committee
    for vi in never_selected:
        assert totals[vi].sync_committee == 0
        assert totals[vi].total > 0


def test_growth_series_mean_and_undefined_marker():
    day = datetime.date(2022, 9, 16)
    points = list(
        validator_growth_series(
            [
                DailyCategoryTotals(
                    date=day, total=300, attestation=300, proposer=0, sync_committee=0,
                    active_validators=3,
                ),
                DailyCategoryTotals(
                    date=day + datetime.timedelta(days=1), total=0, attestation=0, proposer=0,
                    sync_committee=0, active_validators=0,
                ),
            ]
        )
    )
    assert points[0].mean_total_per_validator == Decimal("1E-7")
    assert points[1].mean_total_per_validator is None


# --- external sort -----------------------------------------------------------


def test_sort_csv_orders_by_key_and_is_stable(tmp_path):
    src = tmp_path / "unsorted.csv"
    rows = [
        "validator_index,sync_reward,slot,epoch",
        "9,100,64,2",
        "1,200,32,1",
        "1,300,33,1",
        "2,-5,0,0",
        "1,111,34,1",
    ]
    src.write_text("\n".join(rows) + "\n")
    dst = tmp_path / "sorted.csv"
    sort_csv(str(src), str(dst), ("epoch", "validator_index"), chunk_rows=2)
    out = dst.read_text().splitlines()
    assert out[0] == rows[0]
    assert out[1:] == ["2,-5,0,0", "1,200,32,1", "1,300,33,1", "1,111,34,1", "9,100,64,2"]
    assert csv_sorted_by(str(dst), ("epoch", "validator_index"))
    assert not csv_sorted_by(str(src), ("epoch", "validator_index"))


def test_sort_csv_if_needed_passes_through_sorted_files(tmp_path):
    src = tmp_path / "sorted.csv"
    src.write_text("validator_index,sync_reward,slot,epoch\n1,5,0,0\n2,5,1,0\n")
    result = sort_csv_if_needed(str(src), str(tmp_path / "out.csv"), ("epoch", "validator_index"))
    assert result == str(src)
    assert not (tmp_path / "out.csv").exists()


# --- the full aggregation driver ---------------------------------------------


def _write_sim_raw(tmp_path, config):
    sim_dir = tmp_path / "sim"
    write_simulation(config, str(sim_dir), write_fixtures=False)
    return sim_dir


def test_run_aggregation_conserves_and_matches_ledger(tmp_path, small_sim_config):
    sim_dir = _write_sim_raw(tmp_path, small_sim_config)
    out_dir = tmp_path / "tables"
    result = run_aggregation(
        str(sim_dir / "proposer_rewards.csv"),
        str(sim_dir / "attestation_rewards.csv"),
        str(sim_dir / "sync_committee_rewards.csv"),
        str(out_dir),
        small_sim_config.spec,
    )
    assert result.conserved
    out = emit_rewards(small_sim_config)
    assert result.raw_gwei == sum(r.total for r in out.ledger)

    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["conservation"]["exact"]
    assert manifest["conservation"]["raw_gwei"] == result.raw_gwei

    daily = list(read_daily_table(str(out_dir)))
    assert daily == list(rollup_daily(out.ledger, small_sim_config.spec))

    categories = list(read_category_totals(str(out_dir)))
    assert sum(c.total for c in categories) == result.raw_gwei


def test_run_aggregation_is_idempotent(tmp_path, small_sim_config):
    sim_dir = _write_sim_raw(tmp_path, small_sim_config)

    def run(target):
        run_aggregation(
            str(sim_dir / "proposer_rewards.csv"),
            str(sim_dir / "attestation_rewards.csv"),
            str(sim_dir / "sync_committee_rewards.csv"),
            str(target),
            small_sim_config.spec,
        )

    run(tmp_path / "a")
    run(tmp_path / "b")
    files_a = sorted(
        os.path.join(root, name)
        for root, _, names in os.walk(tmp_path / "a")
        for name in names
    )
    assert files_a
    for path_a in files_a:
        path_b = path_a.replace(str(tmp_path / "a"), str(tmp_path / "b"))
        with open(path_a, "rb") as fa, open(path_b, "rb") as fb:
            assert fa.read() == fb.read(), path_a


def test_run_aggregation_sorts_slot_ordered_raw_inputs(tmp_path, small_sim_config):
    # simulator CSVs are slot-ordered for proposer/sync; the driver must
    # re-sort them to (epoch, validator_index) before joining
    sim_dir = _write_sim_raw(tmp_path, small_sim_config)
    assert not csv_sorted_by(
        str(sim_dir / "sync_committee_rewards.csv"), ("epoch", "validator_index")
    )
    result = run_aggregation(
        str(sim_dir / "proposer_rewards.csv"),
        str(sim_dir / "attestation_rewards.csv"),
        str(sim_dir / "sync_committee_rewards.csv"),
        str(tmp_path / "tables"),
        small_sim_config.spec,
    )
    assert result.conserved


def test_run_aggregation_empty_inputs_produce_empty_tables(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    write_records(str(raw / "proposer_rewards.csv"), [], ProposerRewardRecord)
    write_records(str(raw / "attestation_rewards.csv"), [], AttestationRewardRecord)
    write_records(str(raw / "sync_committee_rewards.csv"), [], SyncCommitteeRewardRecord)
    result = run_aggregation(
        str(raw / "proposer_rewards.csv"),
        str(raw / "attestation_rewards.csv"),
        str(raw / "sync_committee_rewards.csv"),
        str(tmp_path / "tables"),
        DEFAULT_SPEC,
    )
    assert result.conserved
    assert result.epoch_rows == 0
    assert list(read_daily_table(str(tmp_path / "tables"))) == []


def test_run_aggregation_rejects_truncated_raw_file(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "proposer_rewards.csv").write_text(
        "validator_index,total,attestations,sync_aggregate,proposer_slashings,"
        "attester_slashings,slot,epoch\n1,2,3\n"
    )
    write_records(str(raw / "attestation_rewards.csv"), [], AttestationRewardRecord)
    write_records(str(raw / "sync_committee_rewards.csv"), [], SyncCommitteeRewardRecord)
    with pytest.raises(ValueError, match=r"proposer_rewards\.csv"):
        run_aggregation(
            str(raw / "proposer_rewards.csv"),
            str(raw / "attestation_rewards.csv"),
            str(raw / "sync_committee_rewards.csv"),
            str(tmp_path / "tables"),
            DEFAULT_SPEC,
        )


def test_streaming_rollup_memory_stays_bounded_on_ten_million_records():
    # 10M epoch rows streamed through rollup + category totals; buffering
    # them would need ~1.5 GB, streaming must stay well under that.
    epochs = 2000
    validators = 5000
    process = psutil.Process()
    baseline = process.memory_info().rss

    def generate():
        for epoch in range(epochs):
            for vi in range(validators):
                yield EpochValidatorReward(
                    validator_index=vi,
                    total=100,
                    attestation=100,
                    sync_committee=0,
                    proposer=0,
                    epoch=epoch,
                )

    peak = baseline
    rows = 0
    totals = 0
    for day in daily_category_totals(rollup_daily(generate(), DEFAULT_SPEC)):
        rows += 1
        totals += day.total
        rss = process.memory_info().rss
        if rss > peak:
            peak = rss
    assert totals == epochs * validators * 100
    assert rows >= 8  # 2000 epochs spans at least 8 UTC days
    assert peak - baseline < 300 * 1024 * 1024
