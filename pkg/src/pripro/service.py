"""Device-facing authentication service.

A device sends three fields (its user's device id, enter or exit, and the
authenticator's id); the service resolves the sphere and environment from
the authenticator, evaluates the user's profile against the cached
attendance frequency, records the event and answers with the profile and
the resources and services that profile unlocks.

Time is injected: the same pipeline runs under the system clock in
production and under a virtual clock in tests, replays and simulations.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Protocol

from fastapi import FastAPI, Request, Response

from .attendance import Action
from .errors import (
    BadRequestError,
    ConflictError,
    NotFoundError,
    PriproError,
    UnknownAuthenticatorError,
)
from .periods import next_instance, period_instance
from .profiles import EvolutionDecision, Reason, evolve
from .store import SphereCatalog, SphereStore, load_catalog
from .wire import UTC, canonical_dumps, format_timestamp, parse_timestamp

logger = logging.getLogger(__name__)

SERVICE_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Clocks


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    """Wall clock, UTC, second precision."""

    def now(self) -> datetime:
        return datetime.now(UTC).replace(microsecond=0)


class VirtualClock:
    """Injectable monotone clock driven by tests, replays and simulations."""

    def __init__(self, start: datetime) -> None:
        if start.tzinfo is None:
            raise ValueError("virtual clock start must be timezone-aware")
        self._now = start.replace(microsecond=0)

    def now(self) -> datetime:
        return self._now

    def advance_to(self, t: datetime) -> datetime:
        t = t.replace(microsecond=0)
        if t < self._now:
            raise BadRequestError(
                f"virtual clock cannot move backwards "
                f"({format_timestamp(t)} < {format_timestamp(self._now)})"
            )
        self._now = t
        return t


# ---------------------------------------------------------------------------
# Wire types


_REQUEST_FIELDS = ("user_device_id", "action", "authenticator_device_id")


@dataclass(frozen=True)
class AuthRequest:
    """The three-parameter authentication request."""

    user_device_id: str
    action: Action
    authenticator_device_id: str

    @classmethod
    def from_json_dict(cls, payload: object) -> "AuthRequest":
        if not isinstance(payload, dict):
            raise BadRequestError("request body must be a JSON object")
        extra = set(payload) - set(_REQUEST_FIELDS)
        if extra:
            raise BadRequestError(f"unexpected fields: {sorted(extra)}")
        missing = [name for name in _REQUEST_FIELDS if not payload.get(name)]
        if missing:
            raise BadRequestError(f"missing required fields: {missing}")
        for name in _REQUEST_FIELDS:
            if not isinstance(payload[name], str):
                raise BadRequestError(f"field {name!r} must be a string")
        try:
            action = Action.from_name(payload["action"])
        except ValueError as exc:
            raise BadRequestError(str(exc)) from exc
        return cls(
            user_device_id=payload["user_device_id"],
            action=action,
            authenticator_device_id=payload["authenticator_device_id"],
        )

    def to_json_dict(self) -> dict:
        return {
            "user_device_id": self.user_device_id,
            "action": self.action.value,
            "authenticator_device_id": self.authenticator_device_id,
        }


@dataclass(frozen=True)
class AuthResponse:
    """What the authenticating device gets back (field order is frozen)."""

    user_id: str
    profile: str
    sphere_id: str
    environment_id: str
    environment_name: str
    resources: tuple[str, ...]
    services: tuple[str, ...]
    reason: str
    frequency_used: float | None
    timestamp: str

    def to_json_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "profile": self.profile,
            "environment": {
                "sphere_id": self.sphere_id,
                "environment_id": self.environment_id,
                "name": self.environment_name,
            },
            "resources": list(self.resources),
            "services": list(self.services),
            "decision": {
                "reason": self.reason,
                "frequency_used": self.frequency_used,
            },
            "timestamp": self.timestamp,
        }


# ---------------------------------------------------------------------------
# Service core


class AuthService:
    """Authentication pipeline over a set of sphere stores."""

    def __init__(
        self,
        stores: dict[str, SphereStore],
        authenticators: dict[str, tuple[str, str]],
        clock: Clock,
    ) -> None:
        self.stores = dict(stores)
        self.authenticators = dict(authenticators)
        self.clock = clock

    def store(self, sphere_id: str) -> SphereStore:
        try:
            return self.stores[sphere_id]
        except KeyError:
            raise NotFoundError(f"unknown sphere {sphere_id!r}") from None

    def resolve_authenticator(self, authenticator_device_id: str) -> tuple[str, str]:
        try:
            return self.authenticators[authenticator_device_id]
        except KeyError:
            raise UnknownAuthenticatorError(
                f"authenticator {authenticator_device_id!r} is not configured"
            ) from None

    def authenticate(self, request: AuthRequest, now: datetime | None = None) -> AuthResponse:
        """Handle one device authentication end to end."""
        sphere_id, environment_id = self.resolve_authenticator(
            request.authenticator_device_id
        )
        return self.authenticate_in(sphere_id, environment_id, request, now)

    def authenticate_in(
        self,
        sphere_id: str,
        environment_id: str,
        request: AuthRequest,
        now: datetime | None = None,
    ) -> AuthResponse:
        """The pipeline proper: lookup, evolve, commit, append, respond.

        Also the replay entry point, where sphere and environment come from
        the logged event rather than from the authenticator mapping.
        """
        store = self.store(sphere_id)
        if now is None:
            now = self.clock.now()
        now = now.replace(microsecond=0)
        with store.lock:
            rules = store.catalog.rules_for(environment_id)
            store.check_event_admissible(environment_id, now)
            state, created = store.lookup_or_bootstrap(
                environment_id, request.user_device_id, now
            )
            last_at = state.history[-1][0]
            if created:
                decision = state.history[-1][1]
            elif now < last_at:
                raise BadRequestError(
                    f"authentication at {format_timestamp(now)} precedes the "
                    f"user's history"
                )
            elif now == last_at:
                # Same-second duplicate: observe the committed result.
                decision = EvolutionDecision(state.level, state.level, Reason.TOO_SOON)
            else:
                while True:
                    record = store.latest_frequency(environment_id, state.user_id)
                    frequency = record.frequency if record is not None else None
                    decision = evolve(
                        state.level, state.last_update, now, frequency, rules, store.tz
                    )
                    try:
                        state = store.commit_decision(state, decision, now)
                        break
                    except ConflictError:
                        state, _ = store.lookup_or_bootstrap(
                            environment_id, request.user_device_id, now
                        )
            store.append_event(
                environment_id,
                request.user_device_id,
                request.authenticator_device_id,
                request.action,
                now,
            )
            grant = store.catalog.grant_for(environment_id, state.level)
        return AuthResponse(
            user_id=state.user_id,
            profile=state.level.label,
            sphere_id=sphere_id,
            environment_id=environment_id,
            environment_name=rules.name,
            resources=grant.resources,
            services=grant.services,
            reason=decision.reason.value,
            frequency_used=(
                float(decision.frequency_used)
                if decision.frequency_used is not None
                else None
            ),
            timestamp=format_timestamp(now),
        )

    def tick(self, now: datetime | None = None) -> dict:
        """Materialize every innermost period that ended before `now`.

        Catch-up is in order, one instance at a time, so an idle stretch
        of days yields one record set per day.  A failing environment is
        reported in the summary without stopping the others.
        """
        if now is None:
            now = self.clock.now()
        summary: dict = {
            "now": format_timestamp(now),
            "environments": [],
            "errors": [],
        }
        for sphere_id in sorted(self.stores):
            store = self.stores[sphere_id]
            for environment_id in sorted(store.catalog.environments):
                try:
                    periods, records = self._catch_up(store, environment_id, now)
                except Exception as exc:
                    logger.warning(
                        "materialization failed for %s/%s: %s",
                        sphere_id, environment_id, exc,
                    )
                    summary["errors"].append(
                        {
                            "sphere_id": sphere_id,
                            "environment_id": environment_id,
                            "error": str(exc),
                        }
                    )
                    continue
                summary["environments"].append(
                    {
                        "sphere_id": sphere_id,
                        "environment_id": environment_id,
                        "periods": periods,
                        "records": records,
                    }
                )
        return summary

    @staticmethod
    def _catch_up(store: SphereStore, environment_id: str, now: datetime) -> tuple[int, int]:
        rules = store.catalog.rules_for(environment_id)
        with store.lock:
            watermark = store.innermost_watermark(environment_id)
            if watermark is not None:
                instance = next_instance(watermark, store.tz)
            else:
                earliest = store.first_event_timestamp(environment_id)
                if earliest is None:
                    return 0, 0
                instance = period_instance(rules.innermost, earliest, store.tz)
            periods = records = 0
            while instance.end <= now:
                records += store.materialize_period(environment_id, instance, now)
                periods += 1
                instance = next_instance(instance, store.tz)
            return periods, records


# ---------------------------------------------------------------------------
# Configuration and app


@dataclass
class ServiceConfig:
    """Parsed service configuration file."""

    spheres: list[tuple[SphereCatalog, Path | None]]
    authenticators: dict[str, tuple[str, str]]
    listen: str = "127.0.0.1:8000"
    virtual_clock_start: datetime | None = None
    tick_interval_seconds: float = 60.0

    @property
    def virtual(self) -> bool:
        return self.virtual_clock_start is not None


def load_service_config(path: str | Path) -> ServiceConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("schema_version")
    if version != SERVICE_SCHEMA_VERSION:
        raise BadRequestError(f"unsupported service schema_version: {version!r}")
    base = path.parent
    spheres: list[tuple[SphereCatalog, Path | None]] = []
    for item in payload.get("spheres", []):
        catalog = load_catalog(base / item["catalog"])
        log_path = base / item["event_log"] if item.get("event_log") else None
        spheres.append((catalog, log_path))
    if not spheres:
        raise BadRequestError("service config must declare at least one sphere")
    sphere_ids = {catalog.sphere_id for catalog, _ in spheres}
    authenticators: dict[str, tuple[str, str]] = {}
    for item in payload.get("authenticators", []):
        device = item["authenticator_device_id"]
        if device in authenticators:
            raise BadRequestError(f"authenticator {device!r} mapped twice")
        if item["sphere_id"] not in sphere_ids:
            raise BadRequestError(
                f"authenticator {device!r} references unknown sphere {item['sphere_id']!r}"
            )
        authenticators[device] = (item["sphere_id"], item["environment_id"])
    clock_cfg = payload.get("virtual_clock") or {}
    start = (
        parse_timestamp(clock_cfg["start"])
        if clock_cfg.get("enabled")
        else None
    )
    return ServiceConfig(
        spheres=spheres,
        authenticators=authenticators,
        listen=payload.get("listen", "127.0.0.1:8000"),
        virtual_clock_start=start,
        tick_interval_seconds=float(payload.get("tick_interval_seconds", 60.0)),
    )


def build_service(config: ServiceConfig) -> AuthService:
    stores = {
        catalog.sphere_id: SphereStore(catalog, event_log_path=log_path)
        for catalog, log_path in config.spheres
    }
    clock: Clock
    if config.virtual:
        clock = VirtualClock(config.virtual_clock_start)  # type: ignore[arg-type]
    else:
        clock = SystemClock()
    return AuthService(stores, config.authenticators, clock)


_ERROR_STATUS = {
    "unknown_authenticator": 404,
    "not_found": 404,
    "unknown_device": 403,
    "bad_request": 400,
    "invalid_rules": 400,
    "late_event": 409,
    "conflict": 409,
    "too_early": 409,
}


def _json_response(payload: dict, status_code: int = 200) -> Response:
    return Response(
        content=canonical_dumps(payload).encode("utf-8"),
        status_code=status_code,
        media_type="application/json",
    )


def _error_response(exc: PriproError) -> Response:
    status = _ERROR_STATUS.get(exc.code, 400)
    return _json_response({"error": {"code": exc.code, "message": str(exc)}}, status)


def create_app(service: AuthService, enable_tick: bool = False) -> FastAPI:
    """HTTP surface: POST /v1/authenticate, GET /v1/health, POST /v1/tick."""
    app = FastAPI(title="pripro", docs_url=None, redoc_url=None, openapi_url=None)

    @app.post("/v1/authenticate")
    async def authenticate(request: Request) -> Response:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error_response(BadRequestError("request body is not valid JSON"))
        try:
            auth_request = AuthRequest.from_json_dict(body)
            response = service.authenticate(auth_request)
        except PriproError as exc:
            return _error_response(exc)
        return _json_response(response.to_json_dict())

    @app.get("/v1/health")
    async def health() -> Response:
        return _json_response({"status": "ok"})

    @app.post("/v1/tick")
    async def tick(request: Request) -> Response:
        if not enable_tick or not isinstance(service.clock, VirtualClock):
            return _json_response(
                {"error": {"code": "tick_disabled", "message": "virtual clock is off"}},
                status_code=403,
            )
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return _error_response(BadRequestError("request body is not valid JSON"))
        try:
            now = service.clock.advance_to(parse_timestamp(body["now"]))
        except (KeyError, TypeError, ValueError) as exc:
            return _error_response(BadRequestError(f"invalid tick body: {exc}"))
        except PriproError as exc:
            return _error_response(exc)
        return _json_response(service.tick(now))

    return app


def _run_ticker(service: AuthService, interval: float, stop: threading.Event) -> None:
    while not stop.wait(interval):
        try:
            service.tick()
        except Exception:
            logger.exception("background tick failed")


def serve(config: ServiceConfig, listen: str | None = None) -> None:
    """Run the HTTP service (blocking); real-clock mode starts a ticker."""
    import uvicorn

    service = build_service(config)
    app = create_app(service, enable_tick=config.virtual)
    stop = threading.Event()
    ticker = None
    if not config.virtual:
        ticker = threading.Thread(
            target=_run_ticker,
            args=(service, config.tick_interval_seconds, stop),
            daemon=True,
            name="pripro-ticker",
        )
        ticker.start()
    host, _, port = (listen or config.listen).rpartition(":")
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    finally:
        stop.set()
        for store in service.stores.values():
            store.close()
