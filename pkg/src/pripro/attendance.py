"""Entry/exit pairing and attendance-frequency computation.

The innermost-period frequency is the summed time inside the environment
divided by the hours the environment expects (it may exceed 1).  Coarser
periods average the frequencies of the immediately finer configured
period, zero-filling instances with no record.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from fractions import Fraction
from typing import Iterable, Protocol, Sequence

from .errors import InvalidRulesError
from .periods import PeriodInstance
from .wire import as_fraction


class Action(Enum):
    ENTER = "enter"
    EXIT = "exit"

    @classmethod
    def from_name(cls, name: str) -> "Action":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown action: {name!r}") from None


class TimedAction(Protocol):
    timestamp: datetime
    action: Action


@dataclass(frozen=True)
class TimeInterval:
    """A closed stay [entry, exit] at second precision; exit >= entry."""

    entry: datetime
    exit: datetime

    def __post_init__(self) -> None:
        if self.exit < self.entry:
            raise ValueError(f"exit {self.exit} precedes entry {self.entry}")

    @property
    def duration_hours(self) -> Fraction:
        return Fraction(int((self.exit - self.entry).total_seconds()), 3600)


@dataclass(frozen=True)
class PairingWarning:
    """A repaired irregularity in an event sequence."""

    kind: str  # unmatched_enter_clipped | orphan_exit_discarded | duplicate_enter_ignored
    timestamp: datetime

    def __str__(self) -> str:
        return f"{self.kind} at {self.timestamp.isoformat()}"


def pair_events(
    events: Sequence[TimedAction], period: PeriodInstance
) -> tuple[list[TimeInterval], list[PairingWarning]]:
    """Pair enters with exits into maximal intervals clipped to `period`.

    Events must be time-ordered.  Events before `period.start` may only
    describe a stay carried in from the previous period: an enter that is
    still open at the boundary is clipped to the period start.  Repairs:
    an enter with no exit closes at the period end (warned), an exit with
    no open enter is dropped (warned), repeated enters keep the first
    (warned).
    """
    intervals: list[TimeInterval] = []
    warnings: list[PairingWarning] = []
    open_entry: datetime | None = None
    last_ts: datetime | None = None
    for event in events:
        ts = event.timestamp
        if last_ts is not None and ts < last_ts:
            raise ValueError("events must be sorted by timestamp")
        last_ts = ts
        if ts >= period.end:
            break
        if event.action is Action.ENTER:
            if open_entry is not None:
                warnings.append(PairingWarning("duplicate_enter_ignored", ts))
            else:
                open_entry = ts
        else:
            if open_entry is None:
                warnings.append(PairingWarning("orphan_exit_discarded", ts))
            elif ts >= period.start:
                intervals.append(TimeInterval(max(open_entry, period.start), ts))
                open_entry = None
            else:
                # Both endpoints fell before the window: nothing to credit.
                open_entry = None
    if open_entry is not None:
        warnings.append(PairingWarning("unmatched_enter_clipped", open_entry))
        intervals.append(TimeInterval(max(open_entry, period.start), period.end))
    return intervals, warnings


def inferior_frequency(
    intervals: Iterable[TimeInterval], expected_hours: Fraction | float | int
) -> Fraction:
    """Attended hours divided by expected hours; exact, may exceed 1."""
    expected = as_fraction(expected_hours)
    if expected <= 0:
        raise InvalidRulesError(f"expected_hours must be positive, got {expected}")
    total = sum((iv.duration_hours for iv in intervals), Fraction(0))
    return total / expected


def superior_frequency(
    inferior_frequencies: Iterable[Fraction | float | int], n: int
) -> Fraction:
    """Mean of the inferior-period frequencies over `n` contained instances.

    Missing instances are zero-filled by the caller simply omitting them:
    the divisor stays `n`.
    """
    if n < 1:
        raise ValueError("n must be a positive instance count")
    values = [as_fraction(f) for f in inferior_frequencies]
    if len(values) > n:
        raise ValueError(f"got {len(values)} frequencies for {n} instances")
    return sum(values, Fraction(0)) / n
