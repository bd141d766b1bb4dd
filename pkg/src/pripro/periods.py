"""Valence-period calendar arithmetic.

A valence period kind buckets the timeline into half-open instances
[start, end).  Instances of one kind partition the timeline; kinds do not
nest (weeks straddle month boundaries).  Conventions are fixed so replays
are deterministic: days are civil days in the sphere's timezone, weeks
start on Monday, semesters run Jan 1 - Jul 1 and Jul 1 - Jan 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta, tzinfo as TZInfo
from enum import Enum
from fractions import Fraction
from typing import Iterator


class PeriodKind(Enum):
    DAY = "Day"
    WEEK = "Week"
    MONTH = "Month"
    SEMESTER = "Semester"

    @property
    def rank(self) -> int:
        """Granularity order: finer kinds rank lower."""
        return _RANK[self]

    @property
    def min_hours(self) -> int:
        """Length of the shortest possible instance, in hours."""
        return _MIN_HOURS[self]

    @classmethod
    def from_name(cls, name: str) -> "PeriodKind":
        try:
            return _BY_NAME[name.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown valence period kind: {name!r}") from None


_RANK = {PeriodKind.DAY: 0, PeriodKind.WEEK: 1, PeriodKind.MONTH: 2, PeriodKind.SEMESTER: 3}
_MIN_HOURS = {
    PeriodKind.DAY: 24,
    PeriodKind.WEEK: 7 * 24,
    PeriodKind.MONTH: 28 * 24,
    PeriodKind.SEMESTER: 181 * 24,
}
_BY_NAME = {k.value.lower(): k for k in PeriodKind}


@dataclass(frozen=True, order=False)
class PeriodInstance:
    """One half-open bucket [start, end) of a given kind."""

    kind: PeriodKind
    start: datetime
    end: datetime

    def contains(self, t: datetime) -> bool:
        return self.start <= t < self.end

    @property
    def duration(self) -> timedelta:
        return self.end - self.start

    @property
    def duration_hours(self) -> Fraction:
        return Fraction(int(self.duration.total_seconds()), 3600)


def _local_midnight(d: date, tz: TZInfo) -> datetime:
    return datetime(d.year, d.month, d.day, tzinfo=tz)


def period_instance(kind: PeriodKind, t: datetime, tz: TZInfo | None = None) -> PeriodInstance:
    """Return the unique instance of `kind` containing `t`.

    Boundaries are civil midnights in `tz` (defaults to the timezone of
    `t`, which must be aware).
    """
    if t.tzinfo is None:
        raise ValueError("period_instance requires an aware timestamp")
    tz = tz or t.tzinfo
    local = t.astimezone(tz)
    d = local.date()
    if kind is PeriodKind.DAY:
        start_d, end_d = d, d + timedelta(days=1)
    elif kind is PeriodKind.WEEK:
        start_d = d - timedelta(days=d.weekday())
        end_d = start_d + timedelta(days=7)
    elif kind is PeriodKind.MONTH:
        start_d = d.replace(day=1)
        end_d = date(d.year + (d.month == 12), d.month % 12 + 1, 1)
    elif kind is PeriodKind.SEMESTER:
        if d.month < 7:
            start_d, end_d = date(d.year, 1, 1), date(d.year, 7, 1)
        else:
            start_d, end_d = date(d.year, 7, 1), date(d.year + 1, 1, 1)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unhandled kind {kind}")
    return PeriodInstance(kind, _local_midnight(start_d, tz), _local_midnight(end_d, tz))


def next_instance(instance: PeriodInstance, tz: TZInfo | None = None) -> PeriodInstance:
    """The instance immediately following `instance` (they share a boundary)."""
    return period_instance(instance.kind, instance.end, tz or instance.start.tzinfo)


def child_instances(
    superior: PeriodInstance, inferior_kind: PeriodKind, tz: TZInfo | None = None
) -> Iterator[PeriodInstance]:
    """Instances of `inferior_kind` whose start lies inside `superior`."""
    if inferior_kind.rank >= superior.kind.rank:
        raise ValueError(
            f"{inferior_kind.value} is not strictly finer than {superior.kind.value}"
        )
    tz = tz or superior.start.tzinfo
    inst = period_instance(inferior_kind, superior.start, tz)
    if inst.start < superior.start:
        inst = next_instance(inst, tz)
    while inst.start < superior.end:
        yield inst
        inst = next_instance(inst, tz)


def contained_count(superior: PeriodInstance, inferior_kind: PeriodKind) -> int:
    """Number of `inferior_kind` instances starting inside `superior`."""
    return sum(1 for _ in child_instances(superior, inferior_kind))
