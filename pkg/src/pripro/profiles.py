"""Profile levels, per-environment rules and the evolution state machine."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, tzinfo as TZInfo
from enum import Enum, IntEnum
from fractions import Fraction

from .errors import InvalidRulesError
from .periods import PeriodKind, period_instance
from .wire import as_fraction


class ProfileLevel(IntEnum):
    """Five-level ordinal privilege class, Blocked at the bottom."""

    BLOCKED = 0
    GUEST = 1
    BASIC = 2
    ADVANCED = 3
    ADMINISTRATOR = 4

    @property
    def label(self) -> str:
        return _LEVEL_LABELS[self]

    @classmethod
    def from_name(cls, name: str) -> "ProfileLevel":
        try:
            return _LEVELS_BY_NAME[name.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown profile level: {name!r}") from None

    def raised(self) -> "ProfileLevel":
        """One step up, saturating at Administrator."""
        return ProfileLevel(min(self + 1, ProfileLevel.ADMINISTRATOR))

    def lowered(self) -> "ProfileLevel":
        """One step down, saturating at Blocked."""
        return ProfileLevel(max(self - 1, ProfileLevel.BLOCKED))


_LEVEL_LABELS = {
    ProfileLevel.BLOCKED: "Blocked",
    ProfileLevel.GUEST: "Guest",
    ProfileLevel.BASIC: "Basic",
    ProfileLevel.ADVANCED: "Advanced",
    ProfileLevel.ADMINISTRATOR: "Administrator",
}
_LEVELS_BY_NAME = {label.lower(): level for level, label in _LEVEL_LABELS.items()}


class Reason(Enum):
    """Outcome of one profile evaluation."""

    BLOCKED = "Blocked"
    REDUCED = "Reduced"
    MAINTAINED = "Maintained"
    EVOLVED = "Evolved"
    TOO_SOON = "TooSoon"
    BOOTSTRAPPED = "Bootstrapped"

    @classmethod
    def from_name(cls, name: str) -> "Reason":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown decision reason: {name!r}")


@dataclass(frozen=True)
class EnvironmentRules:
    """Per-environment configuration driving frequency and evolution.

    `valence_periods` is ordered innermost first; the innermost period
    gates how often a profile may change.  Band edges: f < block_below is
    Blocked, then Reduced up to reduce_below, then Maintained; Evolved
    starts at evolve_above when `evolve_inclusive` (the default) and
    strictly above it otherwise.
    """

    environment_id: str
    sphere_id: str
    expected_hours: Fraction
    valence_periods: tuple[PeriodKind, ...]
    block_below: Fraction
    reduce_below: Fraction
    evolve_above: Fraction
    base_profile: ProfileLevel
    evolve_inclusive: bool = True
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "expected_hours", as_fraction(self.expected_hours))
        object.__setattr__(self, "block_below", as_fraction(self.block_below))
        object.__setattr__(self, "reduce_below", as_fraction(self.reduce_below))
        object.__setattr__(self, "evolve_above", as_fraction(self.evolve_above))
        object.__setattr__(self, "valence_periods", tuple(self.valence_periods))
        if not self.name:
            object.__setattr__(self, "name", self.environment_id)
        if not 0 < self.block_below <= self.reduce_below <= self.evolve_above <= 1:
            raise InvalidRulesError(
                "thresholds must satisfy 0 < block_below <= reduce_below <= evolve_above <= 1"
            )
        if not self.valence_periods:
            raise InvalidRulesError("at least one valence period is required")
        ranks = [kind.rank for kind in self.valence_periods]
        if ranks != sorted(set(ranks)):
            raise InvalidRulesError(
                "valence periods must be strictly increasing in granularity"
            )
        if self.expected_hours <= 0:
            raise InvalidRulesError("expected_hours must be positive")
        if self.expected_hours > self.innermost.min_hours:
            raise InvalidRulesError(
                f"expected_hours {self.expected_hours} exceeds the innermost "
                f"period ({self.innermost.value})"
            )

    @property
    def innermost(self) -> PeriodKind:
        return self.valence_periods[0]


@dataclass(frozen=True)
class EvolutionDecision:
    """What one evaluation did to a profile, and why."""

    previous: ProfileLevel
    next: ProfileLevel
    reason: Reason
    frequency_used: Fraction | None = None

    def __post_init__(self) -> None:
        expected = {
            Reason.EVOLVED: self.previous.raised(),
            Reason.REDUCED: self.previous.lowered(),
            Reason.BLOCKED: ProfileLevel.BLOCKED,
            Reason.MAINTAINED: self.previous,
            Reason.TOO_SOON: self.previous,
            Reason.BOOTSTRAPPED: self.next,
        }[self.reason]
        if self.next is not expected:
            raise ValueError(
                f"{self.reason.value} from {self.previous.label} must yield "
                f"{expected.label}, not {self.next.label}"
            )


def classify(frequency: Fraction | float | int, rules: EnvironmentRules) -> Reason:
    """Map a frequency to its threshold band (Blocked/Reduced/Maintained/Evolved)."""
    f = as_fraction(frequency)
    if f < 0:
        raise ValueError(f"frequency must be non-negative, got {f}")
    if f < rules.block_below:
        return Reason.BLOCKED
    if f < rules.reduce_below:
        return Reason.REDUCED
    if (f >= rules.evolve_above) if rules.evolve_inclusive else (f > rules.evolve_above):
        return Reason.EVOLVED
    return Reason.MAINTAINED


def evolve(
    current: ProfileLevel,
    last_update: datetime | None,
    now: datetime,
    latest_frequency: Fraction | float | None,
    rules: EnvironmentRules,
    tz: TZInfo | None = None,
) -> EvolutionDecision:
    """Evaluate one authentication against the environment rules.

    A profile changes at most once per innermost period: if less time than
    the innermost instance containing `last_update` has elapsed, the
    evaluation is TooSoon.  With no materialized frequency yet the profile
    is maintained.  Otherwise the band decides: Blocked drops straight to
    Blocked, Reduced steps down, Evolved steps up (both saturating).
    """
    if last_update is not None:
        if now < last_update:
            raise ValueError("now precedes last_update")
        gate = period_instance(rules.innermost, last_update, tz)
        if now - last_update < gate.duration:
            return EvolutionDecision(current, current, Reason.TOO_SOON)
    if latest_frequency is None:
        return EvolutionDecision(current, current, Reason.MAINTAINED)
    f = as_fraction(latest_frequency)
    band = classify(f, rules)
    if band is Reason.BLOCKED:
        nxt = ProfileLevel.BLOCKED
    elif band is Reason.REDUCED:
        nxt = current.lowered()
    elif band is Reason.EVOLVED:
        nxt = current.raised()
    else:
        nxt = current
    return EvolutionDecision(current, nxt, band, f)
