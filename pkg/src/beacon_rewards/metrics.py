"""Daily decentralization indices over validator reward vectors.

Four indices are computed per (date, reward category): Gini coefficient,
Shannon entropy of reward shares (bits), Herfindahl-Hirschman index on
fractional shares, and the Nakamoto count (smallest set of validators
holding strictly more than half the rewards).

Negative rewards (penalties) are clamped to zero before computing an
index. The clamp is mandatory for Gini; for the other three it is policy:
``uniform`` (default) clamps everywhere so shares stay meaningful,
``gini-only`` feeds raw values to entropy/HHI/Nakamoto.

A vector whose clamped sum is zero has no meaningful shares; every index
returns None for it (encoded as an explicit null in outputs, never 0).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date as date_type
from typing import Iterable, Iterator, Sequence

import numpy as np

from .records import DailyValidatorReward, gwei_to_ether

CATEGORIES = ("total", "attestation", "proposer", "sync_committee")
CLAMP_MODES = ("uniform", "gini-only")

INDICES_COLUMNS = (
    "date",
    "category",
    "gini",
    "shannon_entropy",
    "hhi",
    "nakamoto_count",
    "nakamoto_fraction",
    "participants",
)


@dataclass(frozen=True)
class RewardVector:
    """Per-validator rewards for one (date, category).

    Holds only validators that participated in the category that day;
    values are Ether as exact decimals (integer Gwei works identically,
    every index is scale invariant).
    """

    values: tuple
    category: str
    date: date_type


@dataclass(frozen=True)
class MetricPoint:
    date: date_type
    category: str
    gini: float | None
    shannon_entropy: float | None
    hhi: float | None
    nakamoto_count: int | None
    nakamoto_fraction: float | None
    participants: int


def _values(v: "RewardVector | Sequence") -> Sequence:
    return v.values if isinstance(v, RewardVector) else v


def _as_float_array(values: Sequence, clamp: bool) -> np.ndarray:
    x = np.fromiter((float(v) for v in values), dtype=float, count=len(values))
    if clamp:
        np.clip(x, 0.0, None, out=x)
    return x


def gini(v: "RewardVector | Sequence") -> float | None:
    """Gini coefficient of the clamped reward vector.

    Uses the sorted O(n log n) formulation
    sum_i (2i - n - 1) x_(i) / (n * sum(x)), which equals the
    mean-absolute-difference double sum divided by 2 n^2 mu.
    """
    values = _values(v)
    if len(values) == 0:
        raise ValueError("gini requires at least one participant")
    x = np.sort(_as_float_array(values, clamp=True))
    n = x.size
    total = float(x.sum())
    if total == 0.0:
        return None
    ranks = np.arange(1, n + 1, dtype=float)
    value = float(((2.0 * ranks - n - 1.0) * x).sum() / (n * total))
    # the double sum is non-negative; near-equal vectors can round below 0
    return max(0.0, value)


def shannon_entropy(v: "RewardVector | Sequence", clamp: bool = True) -> float | None:
    """Shannon entropy of reward shares in bits, in [0, log2 n].

    Shares are x_i / sum(x); zero (or, unclamped, non-positive) shares
    contribute nothing.
    """
    values = _values(v)
    if len(values) == 0:
        raise ValueError("shannon_entropy requires at least one participant")
    x = _as_float_array(values, clamp)
    total = float(x.sum())
    if total <= 0.0:
        return None
    shares = x[x > 0.0] / total
    return float(-(shares * np.log2(shares)).sum())


def hhi(v: "RewardVector | Sequence", clamp: bool = True) -> float | None:
    """Herfindahl-Hirschman index: sum of squared share fractions, (0, 1]."""
    values = _values(v)
    if len(values) == 0:
        raise ValueError("hhi requires at least one participant")
    x = _as_float_array(values, clamp)
    total = float(x.sum())
    if total <= 0.0:
        return None
    shares = x / total
    return float((shares * shares).sum())


def nakamoto(v: "RewardVector | Sequence", clamp: bool = True) -> int | None:
    """Smallest k whose k largest rewards sum to strictly more than half the total.

    Arithmetic stays in the input's own type (int and Decimal sums are
    exact, so Gwei and Ether inputs agree); comparisons use 2*acc > total
    to avoid halving. With values listed in ascending validator-index
    order, the stable sort breaks reward ties by ascending index.
    """
    values = _values(v)
    if len(values) == 0:
        raise ValueError("nakamoto requires at least one participant")
    vals = list(values)
    if clamp:
        zero = type(vals[0])(0)
        vals = [val if val > zero else zero for val in vals]
    total = sum(vals)
    if total <= 0:
        return None
    acc = total - total  # zero of the matching type
    for k, val in enumerate(sorted(vals, reverse=True), start=1):
        acc = acc + val
        if acc + acc > total:
            return k
    return len(vals)


def compute_point(vector: RewardVector, clamp_mode: str = "uniform") -> MetricPoint:
    """All four indices for one participant vector."""
    if clamp_mode not in CLAMP_MODES:
        raise ValueError(f"clamp_mode must be one of {CLAMP_MODES}, got {clamp_mode!r}")
    clamp_others = clamp_mode == "uniform"
    n = len(vector.values)
    count = nakamoto(vector, clamp=clamp_others)
    return MetricPoint(
        date=vector.date,
        category=vector.category,
        gini=gini(vector),
        shannon_entropy=shannon_entropy(vector, clamp=clamp_others),
        hhi=hhi(vector, clamp=clamp_others),
        nakamoto_count=count,
        nakamoto_fraction=None if count is None else count / n,
        participants=n,
    )


def _component(row: DailyValidatorReward, category: str) -> int:
    if category == "total":
        return row.total
    if category == "attestation":
        return row.attestation
    if category == "proposer":
        return row.proposer
    if category == "sync_committee":
        return row.sync_committee
    raise ValueError(f"unknown category {category!r}")


def participant_vector(
    rows: Sequence[DailyValidatorReward], category: str, day: date_type
) -> RewardVector:
    """Build the day's vector from validators that participated in the category.

    The joined daily table carries no presence flags, so participation in a
    component category is inferred from a nonzero component; for ``total``
    every validator with a row that day counts.
    """
    if category == "total":
        values = tuple(gwei_to_ether(row.total) for row in rows)
    else:
        values = tuple(
            gwei_to_ether(c) for row in rows if (c := _component(row, category)) != 0
        )
    return RewardVector(values=values, category=category, date=day)


def metric_series(
    daily_rows: Iterable[DailyValidatorReward],
    categories: Sequence[str] = CATEGORIES,
    clamp_mode: str = "uniform",
) -> list[MetricPoint]:
    """One MetricPoint per (date, category) over a date-sorted daily table.

    Days where a category has no participants produce no point for that
    category; all-zero clamped vectors propagate None-valued indices.
    """
    points: list[MetricPoint] = []
    day_rows: list[DailyValidatorReward] = []
    current_day: date_type | None = None

    def flush() -> None:
        if current_day is None:
            return
        for category in categories:
            vector = participant_vector(day_rows, category, current_day)
            if vector.values:
                points.append(compute_point(vector, clamp_mode))

    for row in daily_rows:
        if current_day is not None and row.date < current_day:
            raise ValueError(f"daily table not sorted by date: {row.date} after {current_day}")
        if row.date != current_day:
            flush()
            current_day = row.date
            day_rows = []
        day_rows.append(row)
    flush()
    return points


def _fmt(value: float | int | None) -> str:
    return "" if value is None else repr(value)


def write_metric_points(path: str, points: Iterable[MetricPoint]) -> int:
    """Write the daily indices CSV; undefined indices become empty fields."""
    n = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(INDICES_COLUMNS)
        for p in points:
            writer.writerow(
                (
                    p.date.isoformat(),
                    p.category,
                    _fmt(p.gini),
                    _fmt(p.shannon_entropy),
                    _fmt(p.hhi),
                    "" if p.nakamoto_count is None else p.nakamoto_count,
                    _fmt(p.nakamoto_fraction),
                    p.participants,
                )
            )
            n += 1
    return n


def read_metric_points(path: str) -> Iterator[MetricPoint]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return
        if tuple(header) != INDICES_COLUMNS:
            raise ValueError(f"{path}: unexpected indices header {header!r}")
        for row in reader:
            day, category, g, h, hh, nc, nf, n = row
            yield MetricPoint(
                date=date_type.fromisoformat(day),
                category=category,
                gini=float(g) if g else None,
                shannon_entropy=float(h) if h else None,
                hhi=float(hh) if hh else None,
                nakamoto_count=int(nc) if nc else None,
                nakamoto_fraction=float(nf) if nf else None,
                participants=int(n),
            )
