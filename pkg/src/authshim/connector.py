"""Target-application connector: the admin-API client behind the shim.

Wire format (bearer-token JSON API)::

    GET    /api/users?email=            -> 200 {"users": [user, ...]}
    POST   /api/users                   {email, display_name} -> 201 user
    PUT    /api/users/{id}/active       {active} -> 200 user
    GET    /api/users/{id}/roles        -> 200 {"roles": [...]}
    POST   /api/users/{id}/roles        {role} -> 201
    DELETE /api/users/{id}/roles/{role} -> 204
    POST   /api/session                 {email} -> 201 {token, expires_at}
    GET    /api/session/validate        (X-App-Session header) -> 200 / 401
    GET    /api/health                  -> 200 / 503

where ``user`` is ``{"id", "email", "display_name", "active"}``.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, replace
from datetime import datetime
from email.utils import parsedate_to_datetime
from typing import Callable, Protocol, Sequence
from urllib.parse import quote

import httpx

from .timeutil import parse_instant, utcnow

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = httpx.Timeout(10.0, connect=5.0)
DEFAULT_RETRY_DELAYS = (0.1, 0.4)


class ErrorKind(enum.Enum):
    UNAVAILABLE = "Unavailable"
    TIMEOUT = "Timeout"
    UNAUTHORIZED = "Unauthorized"
    RATE_LIMITED = "RateLimited"
    CONFLICT = "Conflict"
    NOT_FOUND = "NotFound"
    PROTOCOL_ERROR = "ProtocolError"


class ConnectorError(Exception):
    def __init__(
        self,
        kind: ErrorKind,
        operation: str,
        http_status: int | None = None,
        retry_after: float | None = None,
        detail: str = "",
    ):
        self.kind = kind
        self.operation = operation
        self.http_status = http_status
        self.retry_after = retry_after
        self.detail = detail
        message = "%s during %s" % (kind.value, operation)
        if http_status is not None:
            message += " (HTTP %d)" % http_status
        if retry_after is not None:
            message += " retry after %gs" % retry_after
        if detail:
            message += ": " + detail
        super().__init__(message)

    @property
    def retryable(self) -> bool:
        return self.kind in (ErrorKind.UNAVAILABLE, ErrorKind.TIMEOUT)


@dataclass(frozen=True)
class UserRef:
    user_id: str
    email: str
    active: bool
    newly_created: bool = False


@dataclass(frozen=True)
class SessionGrant:
    token: str
    expires_at: datetime | None = None

    def __repr__(self):
        return "SessionGrant(token=%s..., expires_at=%r)" % (self.token[:8], self.expires_at)


class ApplicationConnector(Protocol):
    def find_user_by_email(self, email: str) -> UserRef | None: ...
    def create_user(self, email: str, display_name: str | None) -> UserRef: ...
    def set_user_active(self, user_id: str, active: bool) -> None: ...
    def list_user_roles(self, user_id: str) -> set[str]: ...
    def add_role(self, user_id: str, role: str) -> None: ...
    def remove_role(self, user_id: str, role: str) -> None: ...
    def create_session(self, email: str) -> SessionGrant: ...
    def check_session(self, token: str) -> bool: ...
    def health(self) -> bool: ...


def _retry_after(value: str | None) -> float | None:
    if not value:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        pass
    try:
        when = parsedate_to_datetime(value)
    except (TypeError, ValueError):
        return None
    return max(0.0, (when - utcnow()).total_seconds())


def classify_response(response: httpx.Response, operation: str) -> ConnectorError | None:
    status = response.status_code
    if 200 <= status < 300:
        return None
    if status in (401, 403):
        kind = ErrorKind.UNAUTHORIZED
    elif status == 429:
        return ConnectorError(
            ErrorKind.RATE_LIMITED, operation, status, retry_after=_retry_after(response.headers.get("Retry-After"))
        )
    elif status == 404:
        kind = ErrorKind.NOT_FOUND
    elif status == 409:
        kind = ErrorKind.CONFLICT
    elif status in (502, 503, 504):
        kind = ErrorKind.UNAVAILABLE
    else:
        kind = ErrorKind.PROTOCOL_ERROR
    return ConnectorError(kind, operation, status, detail=_error_code(response))


def _error_code(response: httpx.Response) -> str:
    # only short machine-readable codes; never copy free text from the body
    try:
        code = response.json().get("error")
    except (ValueError, AttributeError):
        return ""
    if isinstance(code, str) and len(code) <= 32 and code.replace("_", "").isalnum():
        return code
    return ""


class HttpAdminConnector:
    """Generic admin-API client.

    ``client`` may be any ``httpx.Client`` (tests pass a Starlette
    ``TestClient``) and then carries its own timeouts; otherwise a pooled
    client is built with ``timeout``.
    Unavailable and Timeout failures are retried with ``retry_delays``
    backoff; session creation is never retried.
    """

    def __init__(
        self,
        base_url: str,
        admin_token: str,
        client: httpx.Client | None = None,
        timeout: httpx.Timeout = DEFAULT_TIMEOUT,
        retry_delays: Sequence[float] = DEFAULT_RETRY_DELAYS,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self._token = admin_token
        self._client = client or httpx.Client(timeout=timeout, limits=httpx.Limits(max_keepalive_connections=32))
        self._owns_client = client is None
        self.retry_delays = tuple(retry_delays)
        self._sleep = sleep

    def __repr__(self):
        return "HttpAdminConnector(%r)" % self.base_url

    def close(self):
        if self._owns_client:
            self._client.close()

    def http_admin_call(self, method: str, path: str, operation: str, body=None, params=None,
                        headers=None, retry: bool = True) -> httpx.Response:
        request_headers = {"Authorization": "Bearer " + self._token, "Accept": "application/json"}
        if headers:
            request_headers.update(headers)
        delays = self.retry_delays if retry else ()
        attempt = 0
        while True:
            try:
                response = self._client.request(
                    method, self.base_url + path, json=body, params=params,
                    headers=request_headers,
                )
            except httpx.TimeoutException as exc:
                error = ConnectorError(ErrorKind.TIMEOUT, operation, detail=type(exc).__name__)
            except httpx.TransportError as exc:
                error = ConnectorError(ErrorKind.UNAVAILABLE, operation, detail=type(exc).__name__)
            else:
                error = classify_response(response, operation)
                if error is None:
                    logger.debug("admin call %s %s -> %d", method, path.split("?")[0], response.status_code)
                    return response
            if error.retryable and attempt < len(delays):
                logger.debug("admin call %s failed (%s), retrying", operation, error.kind.value)
                self._sleep(delays[attempt])
                attempt += 1
                continue
            raise error

    def _json(self, response: httpx.Response, operation: str) -> dict:
        try:
            data = response.json()
        except ValueError:
            raise ConnectorError(ErrorKind.PROTOCOL_ERROR, operation, response.status_code, detail="body is not JSON") from None
        if not isinstance(data, dict):
            raise ConnectorError(ErrorKind.PROTOCOL_ERROR, operation, response.status_code, detail="unexpected body")
        return data

    @staticmethod
    def _user(data: dict, operation: str, newly_created: bool = False) -> UserRef:
        try:
            return UserRef(str(data["id"]), data["email"], bool(data["active"]), newly_created)
        except (KeyError, TypeError):
            raise ConnectorError(ErrorKind.PROTOCOL_ERROR, operation, detail="malformed user record") from None

    def find_user_by_email(self, email: str) -> UserRef | None:
        op = "find_user_by_email"
        data = self._json(self.http_admin_call("GET", "/api/users", op, params={"email": email}), op)
        users = data.get("users")
        if not isinstance(users, list):
            raise ConnectorError(ErrorKind.PROTOCOL_ERROR, op, detail="users list missing")
        for entry in users:
            user = self._user(entry, op)
            if user.email == email:
                return user
        return None

    def create_user(self, email: str, display_name: str | None = None) -> UserRef:
        op = "create_user"
        response = self.http_admin_call("POST", "/api/users", op, body={"email": email, "display_name": display_name})
        return self._user(self._json(response, op), op, newly_created=True)

    def set_user_active(self, user_id: str, active: bool) -> None:
        self.http_admin_call("PUT", "/api/users/%s/active" % quote(user_id, safe=""), "set_user_active", body={"active": active})

    def list_user_roles(self, user_id: str) -> set[str]:
        op = "list_user_roles"
        data = self._json(self.http_admin_call("GET", "/api/users/%s/roles" % quote(user_id, safe=""), op), op)
        roles = data.get("roles")
        if not isinstance(roles, list) or not all(isinstance(r, str) for r in roles):
            raise ConnectorError(ErrorKind.PROTOCOL_ERROR, op, detail="roles list missing")
        return set(roles)

    def add_role(self, user_id: str, role: str) -> None:
        self.http_admin_call("POST", "/api/users/%s/roles" % quote(user_id, safe=""), "add_role", body={"role": role})

    def remove_role(self, user_id: str, role: str) -> None:
        self.http_admin_call(
            "DELETE", "/api/users/%s/roles/%s" % (quote(user_id, safe=""), quote(role, safe="")), "remove_role"
        )

    def create_session(self, email: str) -> SessionGrant:
        op = "create_session"
        # not retried: a timed-out create may still have produced a session
        data = self._json(self.http_admin_call("POST", "/api/session", op, body={"email": email}, retry=False), op)
        token = data.get("token")
        if not isinstance(token, str) or not token:
            raise ConnectorError(ErrorKind.PROTOCOL_ERROR, op, detail="no session token returned")
        expires_at = None
        if data.get("expires_at"):
            try:
                expires_at = parse_instant(data["expires_at"])
            except (TypeError, ValueError):
                raise ConnectorError(ErrorKind.PROTOCOL_ERROR, op, detail="bad expires_at") from None
        return SessionGrant(token=token, expires_at=expires_at)

    def check_session(self, token: str) -> bool:
        op = "check_session"
        try:
            self.http_admin_call("GET", "/api/session/validate", op, headers={"X-App-Session": token})
        except ConnectorError as exc:
            if exc.kind is ErrorKind.UNAUTHORIZED and exc.detail == "invalid_session":
                return False
            raise
        return True

    def health(self) -> bool:
        try:
            response = self._client.get(self.base_url + "/api/health")
        except httpx.HTTPError:
            return False
        return response.status_code == 200


def find_or_create_user(user_info, connector: ApplicationConnector) -> UserRef:
    """Find the user by email, reactivating or creating as needed."""
    user = connector.find_user_by_email(user_info.email)
    if user is None:
        try:
            return connector.create_user(user_info.email, user_info.display_name)
        except ConnectorError as exc:
            if exc.kind is not ErrorKind.CONFLICT:
                raise
            # lost a creation race; the winner's record is the one to use
            user = connector.find_user_by_email(user_info.email)
            if user is None:
                raise
    if not user.active:
        connector.set_user_active(user.user_id, True)
        user = replace(user, active=True)
    return replace(user, newly_created=False)


def create_app_session(email: str, connector: ApplicationConnector) -> SessionGrant:
    return connector.create_session(email)
