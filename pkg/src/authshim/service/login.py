from __future__ import annotations

import base64
import binascii
import enum
import logging
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable

from ..connector import ConnectorError, create_app_session, find_or_create_user
from ..rbac import PartialSyncFailure, RoleMappingConfig, SyncReport, sync_user_roles
from ..saml import (
    ParserPolicy,
    ReplayCache,
    RequestTracker,
    SamlError,
    XmlMalformed,
    extract_user_info,
    parse_response,
    validate_conditions,
    verify_signature,
)
from ..timeutil import utcnow
from .cookies import CookieDirective, mint_shim_cookie, seconds_until

logger = logging.getLogger("authshim.login")


class LoginStatus(enum.Enum):
    SUCCESS = "success"
    AUTH_FAILURE = "auth_failure"
    SYSTEM_OUTAGE = "system_outage"


@dataclass
class LoginOutcome:
    status: LoginStatus
    reason: str = ""
    redirect_to: str | None = None
    set_cookies: list[CookieDirective] = field(default_factory=list)
    clear_cookies: list[str] = field(default_factory=list)
    email: str | None = None
    sync_report: SyncReport | None = None

    @property
    def http_status(self) -> int:
        return {LoginStatus.SUCCESS: 302, LoginStatus.AUTH_FAILURE: 401, LoginStatus.SYSTEM_OUTAGE: 503}[self.status]


class KeyedLocks:
    """In-process locks keyed by string, dropped once nobody holds them."""

    def __init__(self):
        self._guard = threading.Lock()
        self._locks: dict[str, list] = {}

    @contextmanager
    def hold(self, key: str):
        with self._guard:
            entry = self._locks.setdefault(key, [threading.Lock(), 0])
            entry[1] += 1
        entry[0].acquire()
        try:
            yield
        finally:
            entry[0].release()
            with self._guard:
                entry[1] -= 1
                if entry[1] == 0:
                    del self._locks[key]

    def __len__(self):
        return len(self._locks)


def safe_relay_path(value: str | None) -> str:
    """Only same-origin absolute paths are honoured as post-login targets."""
    if not value or not value.startswith("/") or value.startswith("//") or value.startswith("/\\"):
        return "/"
    if any(ord(ch) < 0x20 for ch in value):
        return "/"
    return value


class LoginService:
    def __init__(
        self,
        config,
        role_mapping: RoleMappingConfig,
        connector,
        clock: Callable[[], datetime] = utcnow,
        parser_policy: ParserPolicy = ParserPolicy(),
        replay_cache: ReplayCache | None = None,
        metrics=None,
    ):
        self.config = config
        self.role_mapping = role_mapping
        self.connector = connector
        self.clock = clock
        self.parser_policy = parser_policy
        self.replay_cache = replay_cache
        self.metrics = metrics
        self.user_locks = KeyedLocks()

    def _decode(self, saml_response: str | None) -> bytes:
        if not saml_response:
            raise XmlMalformed("no SAMLResponse in request")
        try:
            return base64.b64decode(saml_response, validate=False)
        except (binascii.Error, ValueError):
            raise XmlMalformed("SAMLResponse is not base64") from None

    def handle_acs(self, saml_response: str | None, relay_state: str | None, cookies: dict[str, str]) -> LoginOutcome:
        """Run one login end to end and say what the browser should get.

        ``relay_state`` from the form is ignored in favour of the MAC-protected
        copy in the tracker cookie.
        """
        config = self.config
        started = time.perf_counter()
        tracker = RequestTracker.deserialize(cookies.get(config.tracker_cookie_name), config.cookie_signing_key)
        clear = [config.tracker_cookie_name]
        email = None
        report = None
        try:
            now = self.clock()
            doc = parse_response(self._decode(saml_response), self.parser_policy)
            verified = verify_signature(doc, config.idp_certificate)
            identity = validate_conditions(verified, config, tracker, now, self.replay_cache)
            user_info = extract_user_info(identity)
            email = user_info.email
            with self.user_locks.hold(email):
                user = find_or_create_user(user_info, self.connector)
                report = sync_user_roles(user.user_id, user_info.groups, self.connector, self.role_mapping)
                grant = create_app_session(user_info.email, self.connector)
            now = self.clock()
            shim_cookie = mint_shim_cookie(email, grant.token, now, config)
            outcome = LoginOutcome(
                LoginStatus.SUCCESS,
                redirect_to=safe_relay_path(tracker.relay_state),
                set_cookies=[
                    CookieDirective(
                        config.session_cookie_name, grant.token,
                        seconds_until(grant.expires_at, now, config.session_lifetime),
                    ),
                    CookieDirective(config.shim_cookie_name, shim_cookie, config.session_lifetime),
                ],
                clear_cookies=clear,
                email=email,
                sync_report=report,
            )
            if user.newly_created:
                logger.info("user provisioned email=%s user_id=%s", email, user.user_id)
        except SamlError as exc:
            outcome = LoginOutcome(LoginStatus.AUTH_FAILURE, reason=exc.category, clear_cookies=clear, email=email)
        except ConnectorError as exc:
            reason = "%s:%s" % (exc.kind.value, exc.operation)
            outcome = LoginOutcome(LoginStatus.SYSTEM_OUTAGE, reason=reason, clear_cookies=clear, email=email)
        except PartialSyncFailure as exc:
            report = exc.report
            outcome = LoginOutcome(
                LoginStatus.SYSTEM_OUTAGE, reason="PartialSyncFailure", clear_cookies=clear,
                email=email, sync_report=report,
            )
        except Exception:
            logger.exception("unexpected error during login")
            outcome = LoginOutcome(LoginStatus.SYSTEM_OUTAGE, reason="internal_error", clear_cookies=clear, email=email)

        elapsed_ms = (time.perf_counter() - started) * 1000.0
        logger.info(
            "login outcome=%s reason=%s request_id=%s email=%s sync=%s latency_ms=%.1f",
            outcome.status.value,
            outcome.reason or "-",
            tracker.request_id if tracker else "-",
            email or "-",
            report.summary() if report else "-",
            elapsed_ms,
        )
        if self.metrics is not None:
            self.metrics.observe_login(outcome.status.value, elapsed_ms)
        return outcome
