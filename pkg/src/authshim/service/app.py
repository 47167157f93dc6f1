"""HTTP surface of the shim.

``GET /``                 start a login (302 to the IdP, tracker cookie set)
``GET /saml/login``       same, under the prefix the reverse proxy forwards
``POST /saml/acs``        consume the IdP's response
``GET /validate-session`` auth_request target, reads ``X-Original-Cookie``
``GET /health``           liveness
``GET /ready``            readiness (probes the target application)
``GET /metrics``          Prometheus text format
"""

from __future__ import annotations

import logging
import threading
from datetime import datetime
from typing import Callable

from starlette.applications import Starlette
from starlette.concurrency import run_in_threadpool
from starlette.requests import Request
from starlette.responses import HTMLResponse, JSONResponse, PlainTextResponse, RedirectResponse, Response
from starlette.routing import Route

from ..connector import HttpAdminConnector
from ..saml import RelayStateTooLong, ReplayCache, build_authn_request
from ..saml.request import TRACKER_TTL
from ..timeutil import utcnow
from .cookies import parse_cookie_header, verify_shim_cookie
from .login import LoginService, LoginStatus, safe_relay_path
from .metrics import ShimMetrics

logger = logging.getLogger("authshim.service")

AUTH_FAILURE_PAGE = (
    "<!doctype html><title>Sign-in failed</title>"
    "<h1>Sign-in failed</h1><p>We could not verify your sign-in. "
    "Please try again, or contact your administrator if this keeps happening.</p>"
)
OUTAGE_PAGE = (
    "<!doctype html><title>Service unavailable</title>"
    "<h1>Service temporarily unavailable</h1><p>Your identity was not the problem: "
    "the application is not reachable right now. Please try again in a few minutes.</p>"
)
ERROR_PAGE = "<!doctype html><title>Error</title><h1>Something went wrong</h1>"


class _SampledLog:
    """Log the first event of each category and then every ``every``-th."""

    def __init__(self, every: int = 100):
        self.every = every
        self._counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def __call__(self, category: str) -> None:
        with self._lock:
            count = self._counts.get(category, 0) + 1
            self._counts[category] = count
        if count == 1 or count % self.every == 0:
            logger.info("session validation failed category=%s count=%d", category, count)


class ShimApp:
    def __init__(
        self,
        config,
        role_mapping,
        connector,
        clock: Callable[[], datetime] = utcnow,
        replay_cache: ReplayCache | None = None,
    ):
        if replay_cache is None and config.replay_cache:
            replay_cache = ReplayCache()
        self.config = config
        self.connector = connector
        self.clock = clock
        self.metrics = ShimMetrics()
        self.login = LoginService(
            config, role_mapping, connector, clock=clock, replay_cache=replay_cache, metrics=self.metrics
        )
        self._validation_failures = _SampledLog()
        self.app = Starlette(
            routes=[
                Route("/", self.login_initiation, methods=["GET"]),
                Route("/saml/login", self.login_initiation, methods=["GET"]),
                Route("/saml/acs", self.acs, methods=["POST"]),
                Route("/validate-session", self.validate_session, methods=["GET"]),
                Route("/health", self.health, methods=["GET"]),
                Route("/ready", self.ready, methods=["GET"]),
                Route("/metrics", self.metrics_endpoint, methods=["GET"]),
            ]
        )
        self.app.state.shim = self

    def _set_cookie(self, response: Response, name: str, value: str, max_age: int) -> None:
        response.set_cookie(
            name, value, max_age=max_age, path="/", httponly=True,
            secure=self.config.cookie_secure, samesite="lax",
        )

    async def login_initiation(self, request: Request) -> Response:
        original = request.headers.get("x-original-uri") or request.query_params.get("next")
        relay_state = safe_relay_path(original)
        try:
            try:
                message, tracker = build_authn_request(self.config, relay_state, self.clock())
            except RelayStateTooLong:
                message, tracker = build_authn_request(self.config, "/", self.clock())
        except Exception:
            logger.exception("could not start login")
            return HTMLResponse(ERROR_PAGE, status_code=500)
        response = RedirectResponse(message.redirect_url, status_code=302)
        self._set_cookie(response, self.config.tracker_cookie_name, tracker.serialize(),
                         int(TRACKER_TTL.total_seconds()))
        logger.debug("login started request_id=%s", message.request_id)
        return response

    async def acs(self, request: Request) -> Response:
        form = await request.form()
        saml_response = form.get("SAMLResponse")
        relay_state = form.get("RelayState")
        cookies = parse_cookie_header(request.headers.get("cookie"))
        outcome = await run_in_threadpool(
            self.login.handle_acs,
            saml_response if isinstance(saml_response, str) else None,
            relay_state if isinstance(relay_state, str) else None,
            cookies,
        )
        if outcome.status is LoginStatus.SUCCESS:
            response: Response = RedirectResponse(outcome.redirect_to or "/", status_code=302)
        elif outcome.status is LoginStatus.AUTH_FAILURE:
            response = HTMLResponse(AUTH_FAILURE_PAGE, status_code=401)
        else:
            response = HTMLResponse(OUTAGE_PAGE, status_code=503)
        for directive in outcome.set_cookies:
            self._set_cookie(response, directive.name, directive.value, directive.max_age)
        for name in outcome.clear_cookies:
            response.delete_cookie(name, path="/", secure=self.config.cookie_secure, httponly=True, samesite="lax")
        response.headers["Cache-Control"] = "no-store"
        return response

    async def validate_session(self, request: Request) -> Response:
        try:
            cookies = parse_cookie_header(request.headers.get("x-original-cookie"))
            value = cookies.get(self.config.shim_cookie_name)
            if value is None:
                verdict = "missing"
            elif verify_shim_cookie(value, self.clock(), self.config) is None:
                verdict = "invalid"
            else:
                verdict = "valid"
        except Exception:
            verdict = "invalid"
        self.metrics.observe_validation(verdict)
        if verdict == "valid":
            return Response(status_code=200)
        self._validation_failures(verdict)
        return Response(status_code=401)

    async def health(self, request: Request) -> Response:
        if self.config is not None and len(self.config.cookie_signing_key) == 32:
            return JSONResponse({"status": "ok"})
        return JSONResponse({"status": "misconfigured"}, status_code=503)

    async def ready(self, request: Request) -> Response:
        healthy = await run_in_threadpool(self.connector.health)
        if healthy:
            return JSONResponse({"status": "ready"})
        return JSONResponse({"status": "target application unavailable"}, status_code=503)

    async def metrics_endpoint(self, request: Request) -> Response:
        return PlainTextResponse(self.metrics.render(), media_type=self.metrics.content_type)


def create_shim_app(config, role_mapping, connector, clock: Callable[[], datetime] = utcnow,
                    replay_cache: ReplayCache | None = None) -> Starlette:
    return ShimApp(config, role_mapping, connector, clock=clock, replay_cache=replay_cache).app


def app_from_runtime(runtime) -> Starlette:
    connector = HttpAdminConnector(runtime.config.connector_base_url, runtime.admin_token)
    return create_shim_app(runtime.config, runtime.role_mapping, connector)
