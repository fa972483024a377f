"""Collection of the three reward streams from a consensus-node REST API.

The same fetch functions speak either transport: an ``http(s)://`` base
URL hits the node's reward endpoints (block rewards by slot, attestation
rewards by epoch, sync-committee rewards by slot, all JSON with
string-encoded integers), anything else is treated as a fixture directory
of canned responses at ``<base>/<stream>/<unit_id>.json``, which lets the
whole pipeline run offline.

Missed slots are first-class outcomes, not errors: the chain genuinely
contains empty slots, and they are tracked in a sidecar CSV. Transient
transport failures are retried with exponential backoff before a unit is
declared errored.

``run_collection`` drives a [start, end] range with bounded concurrency,
writes records in unit order (so output bytes are independent of
parallelism), and checkpoints the last contiguous completed unit so an
interrupted job resumes without rewriting or corrupting finished ranges.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import requests

from .chain_time import ChainSpec, DEFAULT_SPEC, slot_to_epoch
from .records import (
    CSV_COLUMNS,
    AttestationRewardRecord,
    ProposerRewardRecord,
    SyncCommitteeRewardRecord,
    record_to_row,
)

logger = logging.getLogger(__name__)

STREAMS = ("proposer", "attestation", "sync_committee")

RECORD_TYPES = {
    "proposer": ProposerRewardRecord,
    "attestation": AttestationRewardRecord,
    "sync_committee": SyncCommitteeRewardRecord,
}

_HTTP_TIMEOUT = 30.0
_CHECKPOINT_EVERY = 256

_thread_local = threading.local()


def _session() -> requests.Session:
    s = getattr(_thread_local, "session", None)
    if s is None:
        s = _thread_local.session = requests.Session()
    return s


@dataclass(frozen=True)
class CollectionJob:
    stream: str
    start: int
    end: int  # inclusive
    endpoint_base: str
    output_path: str
    checkpoint_path: str
    missed_path: str | None = None
    max_parallel: int = 1
    auth_token: str | None = None
    spec: ChainSpec = DEFAULT_SPEC
    retry_base_delay: float = 1.0
    retry_max_attempts: int = 5

    def __post_init__(self) -> None:
        if self.stream not in STREAMS:
            raise ValueError(f"stream must be one of {STREAMS}, got {self.stream!r}")
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad unit range [{self.start}, {self.end}]")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")

    @property
    def missed_sidecar(self) -> str:
        if self.missed_path is not None:
            return self.missed_path
        return os.path.join(
            os.path.dirname(os.path.abspath(self.output_path)), f"missed_{self.stream}.csv"
        )


@dataclass
class FetchOutcome:
    unit_id: int
    status: str  # "ok" | "missed" | "error"
    records: list = field(default_factory=list)
    error_detail: str | None = None


@dataclass
class CollectionSummary:
    units_ok: int = 0
    units_missed: int = 0
    units_error: int = 0
    records_written: int = 0


def _parse_int(obj: dict, key: str) -> int:
    if key not in obj:
        raise ValueError(f"missing field {key!r}")
    value = obj[key]
    try:
        return int(str(value))
    except (TypeError, ValueError):
        raise ValueError(f"field {key!r} is not an integer: {value!r}")


def _is_http(base: str) -> bool:
    return base.startswith("http://") or base.startswith("https://")


def _fixture_payload(base: str, stream: str, unit: int) -> tuple[str, object]:
    path = os.path.join(base, stream, f"{unit}.json")
    if not os.path.exists(path):
        return "missed", None
    try:
        with open(path) as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        return "error", f"{path}: parse error: {exc}"
    return _classify_payload(payload, path)


def _classify_payload(payload: object, origin: str) -> tuple[str, object]:
    # Node error bodies carry a "code" field; 404 means no block at the slot.
    if isinstance(payload, dict) and "code" in payload:
        code = payload.get("code")
        if code == 404:
            return "missed", None
        return "error", f"{origin}: upstream error code {code}: {payload.get('message', '')}"
    return "ok", payload


_ENDPOINT_PATHS = {
    "proposer": "eth/v1/beacon/rewards/blocks/{unit}",
    "attestation": "eth/v1/beacon/rewards/attestations/{unit}",
    "sync_committee": "eth/v1/beacon/rewards/sync_committee/{unit}",
}


def _http_payload(
    base: str,
    stream: str,
    unit: int,
    auth_token: str | None,
    retry_base_delay: float,
    retry_max_attempts: int,
    sleep: Callable[[float], None],
) -> tuple[str, object]:
    url = f"{base.rstrip('/')}/{_ENDPOINT_PATHS[stream].format(unit=unit)}"
    headers = {"Accept": "application/json"}
    if auth_token:
        headers["Authorization"] = f"Bearer {auth_token}"
    detail = "no attempt made"
    for attempt in range(retry_max_attempts):
        if attempt:
            sleep(retry_base_delay * 2 ** (attempt - 1))
        try:
            resp = _session().get(url, headers=headers, timeout=_HTTP_TIMEOUT)
        except requests.RequestException as exc:
            detail = f"{url}: {exc}"
            continue
        if resp.status_code == 404:
            return "missed", None
        if resp.status_code >= 500:
            detail = f"{url}: HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            return "error", f"{url}: HTTP {resp.status_code}"
        try:
            return _classify_payload(resp.json(), url)
        except ValueError as exc:
            return "error", f"{url}: parse error: {exc}"
    return "error", f"{detail} (after {retry_max_attempts} attempts)"


def _get_payload(
    base: str,
    stream: str,
    unit: int,
    auth_token: str | None,
    retry_base_delay: float,
    retry_max_attempts: int,
    sleep: Callable[[float], None],
) -> tuple[str, object]:
    if _is_http(base):
        return _http_payload(
            base, stream, unit, auth_token, retry_base_delay, retry_max_attempts, sleep
        )
    return _fixture_payload(base, stream, unit)


def _parse_proposer(payload: object, slot: int, spec: ChainSpec) -> list[ProposerRewardRecord]:
    if not isinstance(payload, dict) or not isinstance(payload.get("data"), dict):
        raise ValueError("expected object with 'data' object")
    data = payload["data"]
    return [
        ProposerRewardRecord(
            validator_index=_parse_int(data, "proposer_index"),
            total=_parse_int(data, "total"),
            attestations=_parse_int(data, "attestations"),
            sync_aggregate=_parse_int(data, "sync_aggregate"),
            proposer_slashings=_parse_int(data, "proposer_slashings"),
            attester_slashings=_parse_int(data, "attester_slashings"),
            slot=slot,
            epoch=slot_to_epoch(spec, slot),
        )
    ]


def _parse_attestation(payload: object, epoch: int) -> list[AttestationRewardRecord]:
    if not isinstance(payload, dict) or not isinstance(payload.get("data"), dict):
        raise ValueError("expected object with 'data' object")
    rows = payload["data"].get("total_rewards")
    if not isinstance(rows, list):
        raise ValueError("expected 'data.total_rewards' list")
    records = []
    for row in rows:
        head = _parse_int(row, "head")
        target = _parse_int(row, "target")
        source = _parse_int(row, "source")
        if "total_attestation_reward" in row:
            # Keep the upstream total even if inconsistent; validate_record
            # surfaces mismatches, nothing is silently recomputed.
            total = _parse_int(row, "total_attestation_reward")
        else:
            total = head + target + source
        records.append(
            AttestationRewardRecord(
                validator_index=_parse_int(row, "validator_index"),
                head=head,
                target=target,
                source=source,
                total_attestation_reward=total,
                epoch=epoch,
            )
        )
    return records


def _parse_sync(payload: object, slot: int, spec: ChainSpec) -> list[SyncCommitteeRewardRecord]:
    if not isinstance(payload, dict) or not isinstance(payload.get("data"), list):
        raise ValueError("expected object with 'data' list")
    epoch = slot_to_epoch(spec, slot)
    records = []
    for row in payload["data"]:
        key = "reward" if "reward" in row else "sync_reward"
        records.append(
            SyncCommitteeRewardRecord(
                validator_index=_parse_int(row, "validator_index"),
                sync_reward=_parse_int(row, key),
                slot=slot,
                epoch=epoch,
            )
        )
    return records


def _fetch(
    stream: str,
    base: str,
    unit: int,
    spec: ChainSpec,
    auth_token: str | None,
    retry_base_delay: float,
    retry_max_attempts: int,
    sleep: Callable[[float], None],
) -> FetchOutcome:
    status, payload = _get_payload(
        base, stream, unit, auth_token, retry_base_delay, retry_max_attempts, sleep
    )
    if status == "missed":
        return FetchOutcome(unit_id=unit, status="missed")
    if status == "error":
        return FetchOutcome(unit_id=unit, status="error", error_detail=str(payload))
    try:
        if stream == "proposer":
            records = _parse_proposer(payload, unit, spec)
        elif stream == "attestation":
            records = _parse_attestation(payload, unit)
        else:
            records = _parse_sync(payload, unit, spec)
    except ValueError as exc:
        return FetchOutcome(unit_id=unit, status="error", error_detail=f"unit {unit}: {exc}")
    if not records and stream == "attestation":
        logger.warning("attestation epoch %d returned an empty validator list", unit)
    return FetchOutcome(unit_id=unit, status="ok", records=records)


def fetch_proposer_reward(base: str, slot: int, **kwargs) -> FetchOutcome:
    """Fetch one slot's block reward; at most one record."""
    return _fetch_stream("proposer", base, slot, **kwargs)


def fetch_attestation_rewards(base: str, epoch: int, **kwargs) -> FetchOutcome:
    """Fetch one epoch's attestation rewards, one record per validator."""
    return _fetch_stream("attestation", base, epoch, **kwargs)


def fetch_sync_committee_rewards(base: str, slot: int, **kwargs) -> FetchOutcome:
    """Fetch one slot's sync-committee member rewards."""
    return _fetch_stream("sync_committee", base, slot, **kwargs)


def _fetch_stream(
    stream: str,
    base: str,
    unit: int,
    spec: ChainSpec = DEFAULT_SPEC,
    auth_token: str | None = None,
    retry_base_delay: float = 1.0,
    retry_max_attempts: int = 5,
    sleep: Callable[[float], None] = time.sleep,
) -> FetchOutcome:
    return _fetch(stream, base, unit, spec, auth_token, retry_base_delay, retry_max_attempts, sleep)


# --- checkpointed range collection ------------------------------------------


def _load_checkpoint(job: CollectionJob) -> dict | None:
    if not os.path.exists(job.checkpoint_path):
        return None
    with open(job.checkpoint_path) as f:
        ckpt = json.load(f)
    for key in ("stream", "start", "end"):
        if ckpt.get(key) != getattr(job, key):
            raise ValueError(
                f"checkpoint {job.checkpoint_path} was written for "
                f"{ckpt.get('stream')}[{ckpt.get('start')}, {ckpt.get('end')}], "
                f"not {job.stream}[{job.start}, {job.end}]"
            )
    return ckpt


def _write_checkpoint(job: CollectionJob, state: dict) -> None:
    tmp = job.checkpoint_path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(state, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, job.checkpoint_path)


def run_collection(
    job: CollectionJob,
    fetch_fn: Callable[[CollectionJob, int], FetchOutcome] | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> CollectionSummary:
    """Collect every unit in [job.start, job.end] into the output CSV.

    Records are written in unit order regardless of max_parallel, so the
    final artifacts are a pure function of (responses, job). A checkpoint
    sidecar tracks the last contiguous completed unit together with byte
    offsets; re-running a finished or interrupted job resumes after that
    unit and reproduces the same bytes. Missed and errored units go to the
    missed-units sidecar as (unit_id, status) rows.
    """
    if fetch_fn is None:
        def fetch_fn(j: CollectionJob, unit: int) -> FetchOutcome:
            return _fetch(
                j.stream,
                j.endpoint_base,
                unit,
                j.spec,
                j.auth_token,
                j.retry_base_delay,
                j.retry_max_attempts,
                sleep,
            )

    columns = CSV_COLUMNS[RECORD_TYPES[job.stream]]
    ckpt = _load_checkpoint(job)
    if ckpt is None:
        out_f = open(job.output_path, "w", newline="")
        missed_f = open(job.missed_sidecar, "w", newline="")
        csv.writer(out_f, lineterminator="\n").writerow(columns)
        csv.writer(missed_f, lineterminator="\n").writerow(("unit_id", "status"))
        out_f.flush()
        missed_f.flush()
        state = {
            "stream": job.stream,
            "start": job.start,
            "end": job.end,
            "last_contiguous_unit": job.start - 1,
            "units_ok": 0,
            "units_missed": 0,
            "units_error": 0,
            "records_written": 0,
            "output_bytes": out_f.tell(),
            "missed_bytes": missed_f.tell(),
        }
    else:
        if ckpt["last_contiguous_unit"] >= job.end:
            return CollectionSummary(
                units_ok=ckpt["units_ok"],
                units_missed=ckpt["units_missed"],
                units_error=ckpt["units_error"],
                records_written=ckpt["records_written"],
            )
        # Truncate away any rows written past the checkpointed prefix, then
        # append; completed ranges are never rewritten.
        out_f = open(job.output_path, "r+", newline="")
        out_f.truncate(ckpt["output_bytes"])
        out_f.seek(ckpt["output_bytes"])
        missed_f = open(job.missed_sidecar, "r+", newline="")
        missed_f.truncate(ckpt["missed_bytes"])
        missed_f.seek(ckpt["missed_bytes"])
        state = ckpt

    out_writer = csv.writer(out_f, lineterminator="\n")
    missed_writer = csv.writer(missed_f, lineterminator="\n")

    def checkpoint() -> None:
        out_f.flush()
        missed_f.flush()
        state["output_bytes"] = out_f.tell()
        state["missed_bytes"] = missed_f.tell()
        _write_checkpoint(job, state)

    def write_outcome(outcome: FetchOutcome) -> None:
        if outcome.status == "ok":
            state["units_ok"] += 1
            for record in outcome.records:
                out_writer.writerow(record_to_row(record))
            state["records_written"] += len(outcome.records)
        else:
            if outcome.status == "missed":
                state["units_missed"] += 1
            else:
                state["units_error"] += 1
                logger.warning(
                    "%s unit %d errored: %s", job.stream, outcome.unit_id, outcome.error_detail
                )
            missed_writer.writerow((outcome.unit_id, outcome.status))
        state["last_contiguous_unit"] = outcome.unit_id

    first_unit = state["last_contiguous_unit"] + 1
    try:
        with ThreadPoolExecutor(max_workers=job.max_parallel) as executor:
            units = iter(range(first_unit, job.end + 1))
            pending = {}
            window = max(job.max_parallel * 2, 4)
            for unit in range(first_unit, min(first_unit + window, job.end + 1)):
                pending[unit] = executor.submit(fetch_fn, job, unit)
                next(units)
            next_to_write = first_unit
            since_checkpoint = 0
            while pending:
                outcome = pending.pop(next_to_write).result()
                write_outcome(outcome)
                next_to_write += 1
                since_checkpoint += 1
                nxt = next(units, None)
                if nxt is not None:
                    pending[nxt] = executor.submit(fetch_fn, job, nxt)
                if since_checkpoint >= _CHECKPOINT_EVERY:
                    checkpoint()
                    since_checkpoint = 0
    finally:
        # On abort the checkpoint still describes a consistent prefix.
        checkpoint()
        out_f.close()
        missed_f.close()

    return CollectionSummary(
        units_ok=state["units_ok"],
        units_missed=state["units_missed"],
        units_error=state["units_error"],
        records_written=state["records_written"],
    )
