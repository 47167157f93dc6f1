"""Reference target application: an in-memory admin API for the connector.

Besides the admin API it exposes a loopback-only control surface used by
tests and the demo::

    POST /control/faults   {unavailable?, added_latency_ms?, login_rate_cap?, role_write_budget?}
    POST /control/reset
    GET  /control/snapshot
"""

from __future__ import annotations

import asyncio
import hmac
import itertools
import json
import secrets
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable

from starlette.applications import Starlette
from starlette.requests import Request
from starlette.responses import JSONResponse, Response
from starlette.routing import Route

from .timeutil import format_instant, utcnow

WRITE_METHODS = frozenset({"POST", "PUT", "DELETE"})
LOOPBACK_HOSTS = frozenset({"127.0.0.1", "::1", "localhost", "testclient"})


def _new_session_token() -> str:
    return secrets.token_urlsafe(32)


@dataclass
class Faults:
    unavailable: bool = False
    added_latency: float = 0.0  # seconds
    login_rate_cap: int | None = None  # session creations per second
    role_write_budget: int | None = None  # role writes allowed before they start failing


@dataclass
class AppUser:
    user_id: str
    email: str
    display_name: str | None
    active: bool = True
    roles: set[str] = field(default_factory=set)

    def as_json(self) -> dict:
        return {"id": self.user_id, "email": self.email, "display_name": self.display_name, "active": self.active}


@dataclass(frozen=True)
class AppSession:
    email: str
    created_at: datetime
    expires_at: datetime


@dataclass(frozen=True)
class LedgerEntry:
    timestamp: datetime
    method: str
    path: str
    outcome: str  # HTTP status as text, or a fault marker

    @property
    def write(self) -> bool:
        return self.method in WRITE_METHODS


@dataclass(frozen=True)
class UserView:
    user_id: str
    email: str
    display_name: str | None
    active: bool
    roles: frozenset[str]


@dataclass(frozen=True)
class AppSnapshot:
    users: dict[str, UserView]
    sessions: dict[str, AppSession]
    ledger: tuple[LedgerEntry, ...]

    def user_by_email(self, email: str) -> UserView | None:
        for user in self.users.values():
            if user.email == email:
                return user
        return None

    @property
    def writes(self) -> tuple[LedgerEntry, ...]:
        return tuple(entry for entry in self.ledger if entry.write)


class AppState:
    """All mutable state of the mock application, guarded by one lock."""

    def __init__(
        self,
        admin_token: str,
        session_ttl: timedelta = timedelta(hours=8),
        clock: Callable[[], datetime] = utcnow,
        ledger_path: str | Path | None = None,
    ):
        self.admin_token = admin_token
        self.session_ttl = session_ttl
        self.clock = clock
        self.ledger_path = Path(ledger_path) if ledger_path else None
        self.lock = threading.RLock()
        self.faults = Faults()
        self.reset()

    def __repr__(self):
        return "AppState(users=%d, sessions=%d)" % (len(self.users), len(self.sessions))

    def reset(self) -> None:
        with self.lock:
            self.users: dict[str, AppUser] = {}
            self.sessions: dict[str, AppSession] = {}
            self.ledger: list[LedgerEntry] = []
            self.faults = Faults()
            self._ids = itertools.count(1)
            self._session_times: deque[float] = deque()

    def snapshot(self) -> AppSnapshot:
        with self.lock:
            users = {
                uid: UserView(u.user_id, u.email, u.display_name, u.active, frozenset(u.roles))
                for uid, u in self.users.items()
            }
            return AppSnapshot(users=users, sessions=dict(self.sessions), ledger=tuple(self.ledger))

    def set_faults(self, **changes) -> Faults:
        with self.lock:
            self.faults = replace(self.faults, **changes)
            return self.faults

    def record(self, method: str, path: str, outcome) -> None:
        entry = LedgerEntry(self.clock(), method, path, str(outcome))
        with self.lock:
            self.ledger.append(entry)
            if self.ledger_path is not None:
                with self.ledger_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({
                        "timestamp": format_instant(entry.timestamp),
                        "method": method, "path": path, "outcome": entry.outcome,
                    }) + "\n")

    def find_email(self, email: str) -> AppUser | None:
        for user in self.users.values():
            if user.email == email:
                return user
        return None

    # used by tests and the demo to seed state without going through HTTP
    def add_user(self, email: str, display_name: str | None = None, active: bool = True, roles=()) -> AppUser:
        with self.lock:
            if self.find_email(email) is not None:
                raise ValueError("duplicate email")
            user = AppUser(str(next(self._ids)), email, display_name, active, set(roles))
            self.users[user.user_id] = user
            return user

    def session_valid(self, token: str) -> bool:
        with self.lock:
            session = self.sessions.get(token)
            if session is None or self.clock() >= session.expires_at:
                return False
            user = self.find_email(session.email)
            return user is not None and user.active

    def _rate_limited(self) -> bool:
        cap = self.faults.login_rate_cap
        if cap is None:
            return False
        now = time.monotonic()
        while self._session_times and now - self._session_times[0] >= 1.0:
            self._session_times.popleft()
        if len(self._session_times) >= cap:
            return True
        self._session_times.append(now)
        return False


def _error(status: int, code: str, headers=None) -> JSONResponse:
    return JSONResponse({"error": code}, status_code=status, headers=headers)


class MockApplication:
    def __init__(self, state: AppState):
        self.state = state
        api = [
            Route("/api/users", self.list_or_create_users, methods=["GET", "POST"]),
            Route("/api/users/{user_id}/active", self.set_active, methods=["PUT"]),
            Route("/api/users/{user_id}/roles", self.user_roles, methods=["GET", "POST"]),
            Route("/api/users/{user_id}/roles/{role:path}", self.remove_role, methods=["DELETE"]),
            Route("/api/session", self.create_session, methods=["POST"]),
            Route("/api/session/validate", self.validate_session, methods=["GET"]),
        ]
        routes = [Route(r.path, self._guarded(r.endpoint), methods=list(r.methods)) for r in api]
        routes += [
            Route("/api/health", self.health, methods=["GET"]),
            Route("/control/faults", self.control_faults, methods=["POST"]),
            Route("/control/reset", self.control_reset, methods=["POST"]),
            Route("/control/snapshot", self.control_snapshot, methods=["GET"]),
        ]
        self.app = Starlette(routes=routes)

    def _guarded(self, handler):
        state = self.state

        async def endpoint(request: Request):
            method, path = request.method, request.url.path
            if state.faults.unavailable:
                state.record(method, path, "unavailable")
                return _error(503, "unavailable")
            header = request.headers.get("authorization", "")
            presented = header[7:] if header.startswith("Bearer ") else ""
            if not hmac.compare_digest(presented.encode(), state.admin_token.encode()):
                state.record(method, path, 401)
                return _error(401, "unauthorized")
            if state.faults.added_latency > 0:
                await asyncio.sleep(state.faults.added_latency)
            body = None
            if method in ("POST", "PUT"):
                try:
                    body = await request.json()
                except ValueError:
                    body = None
                if not isinstance(body, dict):
                    state.record(method, path, 400)
                    return _error(400, "bad_request")
            with state.lock:
                response = handler(request, body)
                state.record(method, path, response.status_code)
            return response

        return endpoint

    def list_or_create_users(self, request: Request, body):
        state = self.state
        if request.method == "GET":
            email = request.query_params.get("email")
            users = [u for u in state.users.values() if email is None or u.email == email]
            return JSONResponse({"users": [u.as_json() for u in users]})
        email = body.get("email")
        if not isinstance(email, str) or not email:
            return _error(400, "bad_request")
        if state.find_email(email) is not None:
            return _error(409, "conflict")
        user = AppUser(str(next(state._ids)), email, body.get("display_name"))
        state.users[user.user_id] = user
        return JSONResponse(user.as_json(), status_code=201)

    def set_active(self, request: Request, body):
        user = self.state.users.get(request.path_params["user_id"])
        if user is None:
            return _error(404, "user_not_found")
        if not isinstance(body.get("active"), bool):
            return _error(400, "bad_request")
        user.active = body["active"]
        return JSONResponse(user.as_json())

    def _role_write_allowed(self) -> bool:
        budget = self.state.faults.role_write_budget
        if budget is None:
            return True
        if budget <= 0:
            return False
        self.state.faults.role_write_budget = budget - 1
        return True

    def user_roles(self, request: Request, body):
        user = self.state.users.get(request.path_params["user_id"])
        if user is None:
            return _error(404, "user_not_found")
        if request.method == "GET":
            return JSONResponse({"roles": sorted(user.roles)})
        role = body.get("role")
        if not isinstance(role, str) or not role:
            return _error(400, "bad_request")
        if not self._role_write_allowed():
            return _error(503, "injected_fault")
        created = role not in user.roles
        user.roles.add(role)
        return JSONResponse({"roles": sorted(user.roles)}, status_code=201 if created else 200)

    def remove_role(self, request: Request, body):
        user = self.state.users.get(request.path_params["user_id"])
        if user is None:
            return _error(404, "user_not_found")
        if not self._role_write_allowed():
            return _error(503, "injected_fault")
        user.roles.discard(request.path_params["role"])
        return Response(status_code=204)

    def create_session(self, request: Request, body):
        state = self.state
        if state._rate_limited():
            return _error(429, "rate_limited", headers={"Retry-After": "1"})
        email = body.get("email")
        user = state.find_email(email) if isinstance(email, str) else None
        if user is None or not user.active:
            return _error(404, "user_not_found")
        now = state.clock()
        token = _new_session_token()
        session = AppSession(email=email, created_at=now, expires_at=now + state.session_ttl)
        state.sessions[token] = session
        return JSONResponse({"token": token, "expires_at": format_instant(session.expires_at)}, status_code=201)

    def validate_session(self, request: Request, body):
        if self.state.session_valid(request.headers.get("x-app-session", "")):
            return JSONResponse({"valid": True})
        return _error(401, "invalid_session")

    async def health(self, request: Request):
        if self.state.faults.unavailable:
            return JSONResponse({"status": "unavailable"}, status_code=503)
        return JSONResponse({"status": "ok"})

    @staticmethod
    def _loopback(request: Request) -> bool:
        return request.client is not None and request.client.host in LOOPBACK_HOSTS

    async def control_faults(self, request: Request):
        if not self._loopback(request):
            return _error(403, "forbidden")
        try:
            body = await request.json()
        except ValueError:
            return _error(400, "bad_request")
        changes = {}
        if "unavailable" in body:
            changes["unavailable"] = bool(body["unavailable"])
        if "added_latency_ms" in body:
            changes["added_latency"] = float(body["added_latency_ms"]) / 1000.0
        if "login_rate_cap" in body:
            changes["login_rate_cap"] = None if body["login_rate_cap"] is None else int(body["login_rate_cap"])
        if "role_write_budget" in body:
            budget = body["role_write_budget"]
            changes["role_write_budget"] = None if budget is None else int(budget)
        faults = self.state.set_faults(**changes)
        return JSONResponse({
            "unavailable": faults.unavailable,
            "added_latency_ms": faults.added_latency * 1000.0,
            "login_rate_cap": faults.login_rate_cap,
            "role_write_budget": faults.role_write_budget,
        })

    async def control_reset(self, request: Request):
        if not self._loopback(request):
            return _error(403, "forbidden")
        self.state.reset()
        return JSONResponse({"status": "reset"})

    async def control_snapshot(self, request: Request):
        if not self._loopback(request):
            return _error(403, "forbidden")
        snap = self.state.snapshot()
        return JSONResponse({
            "users": [
                {"id": u.user_id, "email": u.email, "active": u.active, "roles": sorted(u.roles)}
                for u in snap.users.values()
            ],
            "session_count": len(snap.sessions),
            "ledger": [{"method": e.method, "path": e.path, "outcome": e.outcome} for e in snap.ledger],
        })


def create_mock_app(state: AppState) -> Starlette:
    return MockApplication(state).app
