"""Sphere-scoped state: event log, rules catalog, frequencies and profiles.

One `SphereStore` holds everything for one sphere; isolation between
spheres is structural (separate stores, no shared state).  Events are
append-only; attendance frequencies are materialized per period once the
period has ended and never recomputed, so authentications read cached
records.  All mutation happens under the store lock and is driven by an
explicit clock passed in by the caller.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, tzinfo as TZInfo
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterable
from zoneinfo import ZoneInfo

from .attendance import Action, inferior_frequency, pair_events, superior_frequency
from .errors import (
    ConflictError,
    InvalidRulesError,
    LateEventError,
    NotFoundError,
    TooEarlyError,
    UnknownDeviceError,
)
from .periods import PeriodInstance, PeriodKind, child_instances, next_instance, period_instance
from .profiles import EnvironmentRules, EvolutionDecision, ProfileLevel, Reason
from .wire import as_fraction, content_digest, format_timestamp, parse_timestamp

logger = logging.getLogger(__name__)

CATALOG_SCHEMA_VERSION = 1
SNAPSHOT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class AuthEvent:
    """One immutable enter/exit record from an authenticator device."""

    event_id: int
    sphere_id: str
    environment_id: str
    user_device_id: str
    authenticator_device_id: str
    action: Action
    timestamp: datetime

    def to_json_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "sphere_id": self.sphere_id,
            "environment_id": self.environment_id,
            "user_device_id": self.user_device_id,
            "authenticator_device_id": self.authenticator_device_id,
            "action": self.action.value,
            "timestamp": format_timestamp(self.timestamp),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "AuthEvent":
        return cls(
            event_id=int(payload["event_id"]),
            sphere_id=payload["sphere_id"],
            environment_id=payload["environment_id"],
            user_device_id=payload["user_device_id"],
            authenticator_device_id=payload["authenticator_device_id"],
            action=Action.from_name(payload["action"]),
            timestamp=parse_timestamp(payload["timestamp"]),
        )


@dataclass(frozen=True)
class FrequencyRecord:
    """Materialized attendance frequency for one (user, period instance)."""

    sphere_id: str
    environment_id: str
    user_id: str
    period_kind: PeriodKind
    period_start: datetime
    frequency: Fraction
    computed_at: datetime

    def to_json_dict(self, exact: bool = False) -> dict:
        return {
            "sphere_id": self.sphere_id,
            "environment_id": self.environment_id,
            "user_id": self.user_id,
            "period_kind": self.period_kind.value,
            "period_start": format_timestamp(self.period_start),
            "frequency": str(self.frequency) if exact else float(self.frequency),
            "computed_at": format_timestamp(self.computed_at),
        }


def _decision_to_json(decision: EvolutionDecision, exact: bool = False) -> dict:
    f = decision.frequency_used
    if f is not None:
        f = str(f) if exact else float(f)
    return {
        "previous": decision.previous.label,
        "next": decision.next.label,
        "reason": decision.reason.value,
        "frequency_used": f,
    }


def _decision_from_json(payload: dict) -> EvolutionDecision:
    f = payload.get("frequency_used")
    return EvolutionDecision(
        previous=ProfileLevel.from_name(payload["previous"]),
        next=ProfileLevel.from_name(payload["next"]),
        reason=Reason.from_name(payload["reason"]),
        frequency_used=None if f is None else as_fraction(f),
    )


@dataclass(frozen=True)
class ProfileState:
    """Current profile plus its full decision history for one user."""

    sphere_id: str
    environment_id: str
    user_id: str
    level: ProfileLevel
    last_update: datetime
    history: tuple[tuple[datetime, EvolutionDecision], ...]

    def __post_init__(self) -> None:
        if not self.history:
            raise ValueError("profile history cannot be empty")
        stamps = [at for at, _ in self.history]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError("history timestamps must strictly increase")
        if self.level is not self.history[-1][1].next:
            raise ValueError("level must equal the last history entry's next")

    def to_json_dict(self, exact: bool = False) -> dict:
        return {
            "sphere_id": self.sphere_id,
            "environment_id": self.environment_id,
            "user_id": self.user_id,
            "level": self.level.label,
            "last_update": format_timestamp(self.last_update),
            "history": [
                {"at": format_timestamp(at), **_decision_to_json(d, exact)}
                for at, d in self.history
            ],
        }


@dataclass(frozen=True)
class DirectoryEntry:
    """Sphere-directory registration of one user device."""

    user_device_id: str
    user_id: str
    base_profile: ProfileLevel | None = None


@dataclass(frozen=True)
class Grant:
    """Resources and services an environment exposes to one profile level."""

    resources: tuple[str, ...] = ()
    services: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Catalog


@dataclass
class SphereCatalog:
    """Static per-sphere configuration: environments, directory, grants."""

    sphere_id: str
    timezone: str = "UTC"
    environments: dict[str, EnvironmentRules] = field(default_factory=dict)
    directory: dict[str, DirectoryEntry] = field(default_factory=dict)
    grants: dict[tuple[str, ProfileLevel], Grant] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.tz  # validate the zone name eagerly
        for rules in self.environments.values():
            if rules.sphere_id != self.sphere_id:
                raise InvalidRulesError(
                    f"environment {rules.environment_id} belongs to sphere "
                    f"{rules.sphere_id}, not {self.sphere_id}"
                )

    @property
    def tz(self) -> TZInfo:
        return ZoneInfo(self.timezone)

    def rules_for(self, environment_id: str) -> EnvironmentRules:
        try:
            return self.environments[environment_id]
        except KeyError:
            raise NotFoundError(
                f"unknown environment {environment_id!r} in sphere {self.sphere_id!r}"
            ) from None

    def grant_for(self, environment_id: str, level: ProfileLevel) -> Grant:
        return self.grants.get((environment_id, level), Grant())

    def to_json_dict(self) -> dict:
        return {
            "schema_version": CATALOG_SCHEMA_VERSION,
            "sphere_id": self.sphere_id,
            "timezone": self.timezone,
            "environments": [
                {
                    "environment_id": rules.environment_id,
                    "name": rules.name,
                    "expected_hours": float(rules.expected_hours),
                    "valence_periods": [k.value for k in rules.valence_periods],
                    "block_below": float(rules.block_below),
                    "reduce_below": float(rules.reduce_below),
                    "evolve_above": float(rules.evolve_above),
                    "evolve_inclusive": rules.evolve_inclusive,
                    "base_profile": rules.base_profile.label,
                }
                for rules in self.environments.values()
            ],
            "directory": [
                {
                    "user_device_id": entry.user_device_id,
                    "user_id": entry.user_id,
                    **(
                        {"base_profile": entry.base_profile.label}
                        if entry.base_profile is not None
                        else {}
                    ),
                }
                for entry in self.directory.values()
            ],
            "resources": [
                {
                    "environment_id": env_id,
                    "profile": level.label,
                    "resources": list(grant.resources),
                    "services": list(grant.services),
                }
                for (env_id, level), grant in self.grants.items()
            ],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SphereCatalog":
        version = payload.get("schema_version")
        if version != CATALOG_SCHEMA_VERSION:
            raise InvalidRulesError(f"unsupported catalog schema_version: {version!r}")
        sphere_id = payload["sphere_id"]
        environments: dict[str, EnvironmentRules] = {}
        for env in payload.get("environments", []):
            rules = EnvironmentRules(
                environment_id=env["environment_id"],
                sphere_id=sphere_id,
                expected_hours=as_fraction(env["expected_hours"]),
                valence_periods=tuple(
                    PeriodKind.from_name(name) for name in env["valence_periods"]
                ),
                block_below=as_fraction(env["block_below"]),
                reduce_below=as_fraction(env["reduce_below"]),
                evolve_above=as_fraction(env["evolve_above"]),
                evolve_inclusive=bool(env.get("evolve_inclusive", True)),
                base_profile=ProfileLevel.from_name(env["base_profile"]),
                name=env.get("name", ""),
            )
            environments[rules.environment_id] = rules
        directory = {
            item["user_device_id"]: DirectoryEntry(
                user_device_id=item["user_device_id"],
                user_id=item["user_id"],
                base_profile=(
                    ProfileLevel.from_name(item["base_profile"])
                    if item.get("base_profile")
                    else None
                ),
            )
            for item in payload.get("directory", [])
        }
        grants = {
            (item["environment_id"], ProfileLevel.from_name(item["profile"])): Grant(
                resources=tuple(item.get("resources", [])),
                services=tuple(item.get("services", [])),
            )
            for item in payload.get("resources", [])
        }
        return cls(
            sphere_id=sphere_id,
            timezone=payload.get("timezone", "UTC"),
            environments=environments,
            directory=directory,
            grants=grants,
        )


def load_catalog(path: str | Path) -> SphereCatalog:
    with open(path, encoding="utf-8") as fh:
        return SphereCatalog.from_json_dict(json.load(fh))


def save_catalog(catalog: SphereCatalog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(catalog.to_json_dict(), fh, indent=2, ensure_ascii=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Store


class SphereStore:
    """All mutable state for one sphere, guarded by a single reentrant lock.

    Writes for a (environment, user) profile go through compare-and-commit:
    `commit_decision` rejects a state object that is no longer current.
    Event appends are serialized by the same lock, which also makes the
    assigned event ids the append order.
    """

    def __init__(
        self, catalog: SphereCatalog, event_log_path: str | Path | None = None
    ) -> None:
        self.catalog = catalog
        self.lock = threading.RLock()
        self.directory_lookups = 0
        self._event_log_path = Path(event_log_path) if event_log_path else None
        self._event_log_fh: IO[str] | None = None
        self._events: list[AuthEvent] = []
        self._events_by_env: dict[str, list[AuthEvent]] = {}
        self._earliest_event: dict[str, datetime] = {}
        self._next_event_id = 1
        self._profiles: dict[tuple[str, str], ProfileState] = {}
        self._device_users: dict[tuple[str, str], str] = {}
        # (environment_id, kind, period_start) -> {user_id: record}
        self._frequencies: dict[tuple[str, PeriodKind, datetime], dict[str, FrequencyRecord]] = {}
        self._latest_inner: dict[tuple[str, str], FrequencyRecord] = {}
        self._watermarks: dict[tuple[str, PeriodKind], PeriodInstance] = {}
        self._first_materialized: dict[str, datetime] = {}

    @property
    def sphere_id(self) -> str:
        return self.catalog.sphere_id

    @property
    def tz(self) -> TZInfo:
        return self.catalog.tz

    def close(self) -> None:
        if self._event_log_fh is not None:
            self._event_log_fh.close()
            self._event_log_fh = None

    # -- events ------------------------------------------------------------

    def innermost_watermark(self, environment_id: str) -> PeriodInstance | None:
        """Latest materialized innermost instance for the environment, if any."""
        rules = self.catalog.rules_for(environment_id)
        return self._watermarks.get((environment_id, rules.innermost))

    def append_event(
        self,
        environment_id: str,
        user_device_id: str,
        authenticator_device_id: str,
        action: Action,
        timestamp: datetime,
    ) -> AuthEvent:
        """Durably append one event; returns it with its assigned id.

        Events timestamped inside an already-materialized innermost period
        are rejected: materialized frequencies are never recomputed.
        """
        with self.lock:
            self.check_event_admissible(environment_id, timestamp)
            event = AuthEvent(
                event_id=self._next_event_id,
                sphere_id=self.sphere_id,
                environment_id=environment_id,
                user_device_id=user_device_id,
                authenticator_device_id=authenticator_device_id,
                action=action,
                timestamp=timestamp.astimezone(self.tz).replace(microsecond=0),
            )
            self._next_event_id += 1
            self._events.append(event)
            self._events_by_env.setdefault(environment_id, []).append(event)
            if environment_id not in self._earliest_event:
                self._earliest_event[environment_id] = event.timestamp
            self._write_log_line(event)
            return event

    def check_event_admissible(self, environment_id: str, timestamp: datetime) -> None:
        """Raise if an event for (environment, timestamp) would be rejected."""
        rules = self.catalog.rules_for(environment_id)
        watermark = self._watermarks.get((environment_id, rules.innermost))
        if watermark is not None and timestamp < watermark.end:
            raise LateEventError(
                f"event at {format_timestamp(timestamp)} falls before the "
                f"materialization watermark {format_timestamp(watermark.end)}"
            )

    def first_event_timestamp(self, environment_id: str) -> datetime | None:
        with self.lock:
            return self._earliest_event.get(environment_id)

    def events(self, environment_id: str | None = None) -> list[AuthEvent]:
        with self.lock:
            if environment_id is None:
                return list(self._events)
            return list(self._events_by_env.get(environment_id, []))

    def _write_log_line(self, event: AuthEvent) -> None:
        if self._event_log_path is None:
            return
        if self._event_log_fh is None:
            self._event_log_path.parent.mkdir(parents=True, exist_ok=True)
            self._event_log_fh = open(self._event_log_path, "a", encoding="utf-8")
        self._event_log_fh.write(json.dumps(event.to_json_dict(), ensure_ascii=False))
        self._event_log_fh.write("\n")
        self._event_log_fh.flush()

    # -- profiles ----------------------------------------------------------

    def get_profile(self, environment_id: str, user_id: str) -> ProfileState | None:
        with self.lock:
            return self._profiles.get((environment_id, user_id))

    def profiles(self) -> list[ProfileState]:
        with self.lock:
            return [self._profiles[key] for key in sorted(self._profiles)]

    def resolve_device(self, environment_id: str, user_device_id: str) -> str | None:
        """User already known in the environment, without touching the directory."""
        with self.lock:
            return self._device_users.get((environment_id, user_device_id))

    def lookup_or_bootstrap(
        self, environment_id: str, user_device_id: str, now: datetime
    ) -> tuple[ProfileState, bool]:
        """Return the user's profile state, creating it on first contact.

        Steady-state lookups resolve the device through the store's own
        index; the sphere directory is consulted only once per user
        lifetime, when the base profile is assigned.
        """
        with self.lock:
            rules = self.catalog.rules_for(environment_id)
            user_id = self._device_users.get((environment_id, user_device_id))
            if user_id is not None:
                return self._profiles[(environment_id, user_id)], False
            self.directory_lookups += 1
            entry = self.catalog.directory.get(user_device_id)
            if entry is None:
                raise UnknownDeviceError(
                    f"device {user_device_id!r} is not registered in sphere "
                    f"{self.sphere_id!r}"
                )
            base = entry.base_profile or rules.base_profile
            decision = EvolutionDecision(base, base, Reason.BOOTSTRAPPED)
            state = ProfileState(
                sphere_id=self.sphere_id,
                environment_id=environment_id,
                user_id=entry.user_id,
                level=base,
                last_update=now,
                history=((now, decision),),
            )
            self._profiles[(environment_id, entry.user_id)] = state
            self._device_users[(environment_id, user_device_id)] = entry.user_id
            return state, True

    def commit_decision(
        self, state: ProfileState, decision: EvolutionDecision, at: datetime
    ) -> ProfileState:
        """Append one decision to the user's history (compare-and-commit).

        TooSoon decisions are recorded but leave `level` and `last_update`
        untouched.  A caller holding a stale `state` gets ConflictError and
        should re-read and retry.
        """
        with self.lock:
            key = (state.environment_id, state.user_id)
            stored = self._profiles.get(key)
            if stored is None:
                raise NotFoundError(f"no profile state for {key}")
            if len(stored.history) != len(state.history):
                raise ConflictError(
                    f"profile state for {key} changed concurrently; retry"
                )
            last_at = stored.history[-1][0]
            if at <= last_at:
                raise ValueError(
                    f"commit timestamp {format_timestamp(at)} must be after the "
                    f"last history entry {format_timestamp(last_at)}"
                )
            applied = decision.reason is not Reason.TOO_SOON
            updated = replace(
                stored,
                level=decision.next if applied else stored.level,
                last_update=at if applied else stored.last_update,
                history=stored.history + ((at, decision),),
            )
            self._profiles[key] = updated
            return updated

    # -- frequencies ---------------------------------------------------------

    def latest_frequency(self, environment_id: str, user_id: str) -> FrequencyRecord | None:
        """Innermost-period record with the greatest period_start, if any."""
        with self.lock:
            return self._latest_inner.get((environment_id, user_id))

    def frequency_records(
        self,
        environment_id: str,
        user_id: str | None = None,
        kind: PeriodKind | None = None,
    ) -> list[FrequencyRecord]:
        with self.lock:
            out = []
            for (env, k, start), per_user in sorted(
                self._frequencies.items(), key=lambda kv: (kv[0][0], kv[0][1].rank, kv[0][2])
            ):
                if env != environment_id or (kind is not None and k is not kind):
                    continue
                for uid in sorted(per_user):
                    if user_id is None or uid == user_id:
                        out.append(per_user[uid])
            return out

    def materialize_period(
        self,
        environment_id: str,
        instance: PeriodInstance,
        now: datetime | None = None,
    ) -> int:
        """Write frequency records for an ended innermost instance.

        Every user with events or an existing profile state gets one record
        (absence means frequency 0).  Ended superior periods then cascade:
        a superior instance is written once all the inferior instances
        starting inside it have ended, averaging their records and
        zero-filling users that have none.  Re-running is idempotent.
        """
        with self.lock:
            rules = self.catalog.rules_for(environment_id)
            if instance.kind is not rules.innermost:
                raise ValueError(
                    f"materialize_period expects the innermost kind "
                    f"({rules.innermost.value}), got {instance.kind.value}"
                )
            horizon = now if now is not None else instance.end
            if instance.end > horizon:
                raise TooEarlyError(
                    f"period ending {format_timestamp(instance.end)} has not ended yet"
                )
            written = self._materialize_innermost(environment_id, rules, instance, horizon)
            watermark = self._watermarks.get((environment_id, instance.kind))
            if watermark is None or instance.start > watermark.start:
                self._watermarks[(environment_id, instance.kind)] = instance
            first = self._first_materialized.get(environment_id)
            if first is None or instance.start < first:
                self._first_materialized[environment_id] = instance.start
            written += self._cascade_superiors(environment_id, rules, instance.end, horizon)
            return written

    def _users_in_environment(self, environment_id: str) -> set[str]:
        users = {uid for (env, uid) in self._profiles if env == environment_id}
        for event in self._events_by_env.get(environment_id, []):
            uid = self._device_users.get((environment_id, event.user_device_id))
            if uid is None:
                entry = self.catalog.directory.get(event.user_device_id)
                uid = entry.user_id if entry else None
            if uid is None:
                logger.debug(
                    "event %s from unregistered device %s ignored for materialization",
                    event.event_id, event.user_device_id,
                )
                continue
            users.add(uid)
        return users

    def _materialize_innermost(
        self,
        environment_id: str,
        rules: EnvironmentRules,
        instance: PeriodInstance,
        computed_at: datetime,
    ) -> int:
        events_by_user: dict[str, list[AuthEvent]] = {}
        for event in self._events_by_env.get(environment_id, []):
            if event.timestamp >= instance.end:
                continue
            uid = self._device_users.get((environment_id, event.user_device_id))
            if uid is None:
                entry = self.catalog.directory.get(event.user_device_id)
                uid = entry.user_id if entry else None
            if uid is not None:
                events_by_user.setdefault(uid, []).append(event)
        records = self._frequencies.setdefault(
            (environment_id, instance.kind, instance.start), {}
        )
        count = 0
        for user_id in sorted(self._users_in_environment(environment_id)):
            events = sorted(
                events_by_user.get(user_id, []), key=lambda e: (e.timestamp, e.event_id)
            )
            intervals, warnings = pair_events(events, instance)
            for warning in warnings:
                logger.debug("pairing repair for %s/%s: %s", environment_id, user_id, warning)
            record = FrequencyRecord(
                sphere_id=self.sphere_id,
                environment_id=environment_id,
                user_id=user_id,
                period_kind=instance.kind,
                period_start=instance.start,
                frequency=inferior_frequency(intervals, rules.expected_hours),
                computed_at=computed_at,
            )
            records[user_id] = record
            latest = self._latest_inner.get((environment_id, user_id))
            if latest is None or instance.start >= latest.period_start:
                self._latest_inner[(environment_id, user_id)] = record
            count += 1
        return count

    def _cascade_superiors(
        self,
        environment_id: str,
        rules: EnvironmentRules,
        boundary: datetime,
        computed_at: datetime,
    ) -> int:
        """Materialize every superior instance whose children are all complete.

        Because weeks straddle month and semester boundaries, a superior
        instance may only be finalized a few days after it ends, when its
        last straddling child closes.
        """
        written = 0
        first = self._first_materialized.get(environment_id)
        if first is None:
            return 0
        for inferior_kind, kind in zip(rules.valence_periods, rules.valence_periods[1:]):
            watermark = self._watermarks.get((environment_id, kind))
            if watermark is not None:
                candidate = next_instance(watermark, self.tz)
            else:
                candidate = period_instance(kind, first, self.tz)
            while candidate.end <= boundary:
                children = list(child_instances(candidate, inferior_kind, self.tz))
                if children[-1].end > boundary:
                    break
                written += self._materialize_superior(
                    environment_id, candidate, children, computed_at
                )
                self._watermarks[(environment_id, kind)] = candidate
                candidate = next_instance(candidate, self.tz)
        return written

    def _materialize_superior(
        self,
        environment_id: str,
        instance: PeriodInstance,
        children: list[PeriodInstance],
        computed_at: datetime,
    ) -> int:
        child_records = [
            self._frequencies.get((environment_id, child.kind, child.start), {})
            for child in children
        ]
        records = self._frequencies.setdefault(
            (environment_id, instance.kind, instance.start), {}
        )
        count = 0
        for user_id in sorted(self._users_in_environment(environment_id)):
            values = [
                per_child[user_id].frequency
                for per_child in child_records
                if user_id in per_child
            ]
            records[user_id] = FrequencyRecord(
                sphere_id=self.sphere_id,
                environment_id=environment_id,
                user_id=user_id,
                period_kind=instance.kind,
                period_start=instance.start,
                frequency=superior_frequency(values, len(children)),
                computed_at=computed_at,
            )
            count += 1
        return count

    # -- replay / snapshot ---------------------------------------------------

    def _sorted_frequency_dicts(self) -> list[dict]:
        return [
            per_user[uid].to_json_dict(exact=True)
            for (env, kind, start), per_user in sorted(
                self._frequencies.items(), key=lambda kv: (kv[0][0], kv[0][1].rank, kv[0][2])
            )
            for uid in sorted(per_user)
        ]

    def digest(self) -> str:
        """Content digest of all profiles and frequency records."""
        with self.lock:
            payload = {
                "sphere_id": self.sphere_id,
                "profiles": [state.to_json_dict(exact=True) for state in self.profiles()],
                "frequencies": self._sorted_frequency_dicts(),
            }
            return content_digest(payload)

    def snapshot(self) -> dict:
        """JSON-ready snapshot of catalog-derived state (exact rationals)."""
        with self.lock:
            return {
                "schema_version": SNAPSHOT_SCHEMA_VERSION,
                "sphere_id": self.sphere_id,
                "next_event_id": self._next_event_id,
                "profiles": [state.to_json_dict(exact=True) for state in self.profiles()],
                "device_users": [
                    {"environment_id": env, "user_device_id": dev, "user_id": uid}
                    for (env, dev), uid in sorted(self._device_users.items())
                ],
                "frequencies": self._sorted_frequency_dicts(),
                "watermarks": [
                    {
                        "environment_id": env,
                        "period_kind": kind.value,
                        "start": format_timestamp(inst.start),
                        "end": format_timestamp(inst.end),
                    }
                    for (env, kind), inst in sorted(
                        self._watermarks.items(), key=lambda kv: (kv[0][0], kv[0][1].rank)
                    )
                ],
                "first_materialized": [
                    {"environment_id": env, "start": format_timestamp(ts)}
                    for env, ts in sorted(self._first_materialized.items())
                ],
            }

    def save_snapshot(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.snapshot(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def from_snapshot(
        cls,
        catalog: SphereCatalog,
        payload: dict,
        event_log_path: str | Path | None = None,
    ) -> "SphereStore":
        version = payload.get("schema_version")
        if version != SNAPSHOT_SCHEMA_VERSION:
            raise InvalidRulesError(f"unsupported snapshot schema_version: {version!r}")
        if payload["sphere_id"] != catalog.sphere_id:
            raise InvalidRulesError("snapshot belongs to a different sphere")
        store = cls(catalog, event_log_path)
        store._next_event_id = int(payload["next_event_id"])
        for item in payload.get("device_users", []):
            store._device_users[(item["environment_id"], item["user_device_id"])] = item[
                "user_id"
            ]
        for item in payload.get("profiles", []):
            history = tuple(
                (parse_timestamp(h["at"]), _decision_from_json(h))
                for h in item["history"]
            )
            state = ProfileState(
                sphere_id=item["sphere_id"],
                environment_id=item["environment_id"],
                user_id=item["user_id"],
                level=ProfileLevel.from_name(item["level"]),
                last_update=parse_timestamp(item["last_update"]),
                history=history,
            )
            store._profiles[(state.environment_id, state.user_id)] = state
        for item in payload.get("frequencies", []):
            record = FrequencyRecord(
                sphere_id=item["sphere_id"],
                environment_id=item["environment_id"],
                user_id=item["user_id"],
                period_kind=PeriodKind.from_name(item["period_kind"]),
                period_start=parse_timestamp(item["period_start"]),
                frequency=as_fraction(item["frequency"]),
                computed_at=parse_timestamp(item["computed_at"]),
            )
            key = (record.environment_id, record.period_kind, record.period_start)
            store._frequencies.setdefault(key, {})[record.user_id] = record
            if record.period_kind is catalog.rules_for(record.environment_id).innermost:
                latest = store._latest_inner.get((record.environment_id, record.user_id))
                if latest is None or record.period_start >= latest.period_start:
                    store._latest_inner[(record.environment_id, record.user_id)] = record
        for item in payload.get("watermarks", []):
            kind = PeriodKind.from_name(item["period_kind"])
            store._watermarks[(item["environment_id"], kind)] = PeriodInstance(
                kind, parse_timestamp(item["start"]), parse_timestamp(item["end"])
            )
        for item in payload.get("first_materialized", []):
            store._first_materialized[item["environment_id"]] = parse_timestamp(
                item["start"]
            )
        return store

    @classmethod
    def load_snapshot(
        cls,
        catalog: SphereCatalog,
        path: str | Path,
        event_log_path: str | Path | None = None,
    ) -> "SphereStore":
        with open(path, encoding="utf-8") as fh:
            return cls.from_snapshot(catalog, json.load(fh), event_log_path)


def read_event_log(path: str | Path) -> list[AuthEvent]:
    """Parse a JSON-lines event log; errors carry the line number."""
    events: list[AuthEvent] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(AuthEvent.from_json_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return events


def write_event_log(events: Iterable[AuthEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event.to_json_dict(), ensure_ascii=False))
            fh.write("\n")
