"""A desk-scale federation: mock IdP, mock application and shim wired together,
plus a scripted browser that walks the SP-initiated login flow.

Two wirings are available. ``Federation.in_process()`` routes every hop through
Starlette test clients (no sockets), ``Federation.loopback_federation()`` runs each party
under uvicorn on 127.0.0.1.
"""

from __future__ import annotations

import base64
import secrets
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from html.parser import HTMLParser
from http.cookies import CookieError, SimpleCookie
from typing import Callable
from urllib.parse import parse_qsl, urlencode, urlsplit, urlunsplit

import httpx

from .config import ShimConfig
from .connector import HttpAdminConnector
from .mock_app import AppState, create_mock_app
from .mock_idp import IdpDirectoryEntry, MockIdentityProvider, generate_identity, load_directory
from .rbac import RoleMappingConfig, load_role_mapping
from .serving import ServerThread
from .service.app import ShimApp
from .timeutil import utcnow

SP_ENTITY_ID = "urn:authshim"
IDP_ENTITY_ID = "urn:mock-idp"

DEFAULT_ROLE_MAPPING = """\
role_mappings:
  roles: [admin, user, guest, it_support]
  direct:
    - {group: "Okta: BI-Admins", role: admin}
    - {group: "Okta: BI-Users", role: user}
  patterns:
    - {pattern: "AD: IT-Staff-.*", role: it_support}
  default_role: guest
  role_hierarchy:
    admin: [user, guest]
    user: [guest]
"""

DEFAULT_DIRECTORY = """\
users:
  - email: admin@example.com
    display_name: Ada Admin
    groups: ["Okta: BI-Admins"]
  - email: analyst@example.com
    display_name: Andy Analyst
    groups: ["Okta: BI-Users"]
  - email: support@example.com
    display_name: Sam Support
    groups: ["AD: IT-Staff-NYC", "Okta: BI-Users"]
  - email: contractor@example.com
    display_name: Casey Contractor
    groups: ["Vendors"]
"""


class _FormParser(HTMLParser):
    def __init__(self):
        super().__init__()
        self.action = None
        self.fields: dict[str, str] = {}

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if tag == "form" and self.action is None:
            self.action = attrs.get("action")
        elif tag == "input" and attrs.get("name"):
            self.fields[attrs["name"]] = attrs.get("value") or ""


def parse_auto_post_form(page: str) -> tuple[str, dict[str, str]]:
    parser = _FormParser()
    parser.feed(page)
    if not parser.action:
        raise ValueError("no form in page")
    return parser.action, parser.fields


@dataclass
class LoginResult:
    status_code: int
    location: str | None
    set_cookies: dict[str, dict]  # name -> {"value", "httponly", "secure", "samesite", "max_age"}
    cleared: set[str]
    idp_status: int
    saml_response: str | None = None
    relay_state: str | None = None

    @property
    def session_cookies(self) -> dict[str, str]:
        return {name: info["value"] for name, info in self.set_cookies.items()}


@dataclass
class Browser:
    """Cookie-aware scripted user agent.

    Cookies are kept by name only; ``Secure`` is recorded but not enforced,
    since the desk federation runs over plain HTTP on loopback.
    """

    clients: Callable[[str], httpx.Client]
    jar: dict[str, str] = field(default_factory=dict)

    def cookie_header(self) -> str:
        return "; ".join("%s=%s" % item for item in self.jar.items())

    def _absorb(self, response: httpx.Response) -> tuple[dict, set]:
        set_cookies, cleared = {}, set()
        for header in response.headers.get_list("set-cookie"):
            jar = SimpleCookie()
            try:
                jar.load(header)
            except CookieError:
                continue
            for name, morsel in jar.items():
                max_age = morsel["max-age"]
                if max_age != "" and int(max_age) <= 0:
                    self.jar.pop(name, None)
                    cleared.add(name)
                    continue
                self.jar[name] = morsel.value
                set_cookies[name] = {
                    "value": morsel.value,
                    "httponly": bool(morsel["httponly"]),
                    "secure": bool(morsel["secure"]),
                    "samesite": morsel["samesite"],
                    "max_age": int(max_age) if max_age != "" else None,
                }
        return set_cookies, cleared

    def request(self, method: str, url: str, **kwargs) -> httpx.Response:
        headers = dict(kwargs.pop("headers", None) or {})
        if self.jar:
            headers["Cookie"] = self.cookie_header()
        return self.clients(url).request(method, url, headers=headers, **kwargs)

    def start_login(self, shim_url: str, original_path: str | None = None) -> httpx.Response:
        headers = {"X-Original-URI": original_path} if original_path else {}
        response = self.request("GET", shim_url.rstrip("/") + "/", headers=headers)
        self._absorb(response)
        return response

    def fetch_idp_form(self, location: str, user: str | None = None, fault: str | None = None):
        parts = urlsplit(location)
        query = parse_qsl(parts.query, keep_blank_values=True)
        if user:
            query.append(("user", user))
        if fault:
            query.append(("fault", fault))
        url = urlunsplit((parts.scheme, parts.netloc, parts.path, urlencode(query), ""))
        response = self.clients(url).get(url)
        if response.status_code != 200:
            return response, None, {}
        action, fields = parse_auto_post_form(response.text)
        return response, action, fields

    def post_acs(self, action: str, fields: dict[str, str]) -> LoginResult:
        response = self.request("POST", action, data=fields)
        set_cookies, cleared = self._absorb(response)
        return LoginResult(
            status_code=response.status_code,
            location=response.headers.get("location"),
            set_cookies=set_cookies,
            cleared=cleared,
            idp_status=200,
            saml_response=fields.get("SAMLResponse"),
            relay_state=fields.get("RelayState"),
        )

    def login(self, shim_url: str, user: str | None = None, fault: str | None = None,
              original_path: str | None = None) -> LoginResult:
        start = self.start_login(shim_url, original_path)
        if start.status_code != 302:
            raise RuntimeError("login initiation returned %d" % start.status_code)
        idp_response, action, fields = self.fetch_idp_form(start.headers["location"], user, fault)
        if action is None:
            return LoginResult(idp_response.status_code, None, {}, set(), idp_response.status_code)
        return self.post_acs(action, fields)


def _test_client(app, base_url: str):
    with warnings.catch_warnings():
        # starlette nags about httpx being superseded; the client works as is
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient
    return TestClient(app, base_url=base_url, follow_redirects=False)


def _router(mapping: dict[str, httpx.Client], default: httpx.Client | None = None):
    def route(url: str) -> httpx.Client:
        client = mapping.get(urlsplit(url).netloc, default)
        if client is None:
            raise KeyError("no client for %s" % url)
        return client

    return route


class Federation:
    """Mock IdP, mock application and shim configured to trust each other."""

    def __init__(
        self,
        *,
        idp_key=None,
        idp_certificate=None,
        directory: list[IdpDirectoryEntry] | None = None,
        role_mapping: RoleMappingConfig | None = None,
        admin_token: str | None = None,
        signing_key: bytes | None = None,
        clock: Callable[[], datetime] = utcnow,
        loopback: bool = False,
        retry_delays=(0.1, 0.4),
        connector_sleep=None,
        replay_cache: bool = False,
        session_lifetime: int = 8 * 3600,
    ):
        if idp_key is None:
            idp_key, idp_certificate = generate_identity("mock-idp")
        self.idp_key = idp_key
        self.idp_certificate = idp_certificate
        self.directory = directory or load_directory(DEFAULT_DIRECTORY)
        self.role_mapping = role_mapping or load_role_mapping(DEFAULT_ROLE_MAPPING)
        self.admin_token = admin_token or secrets.token_urlsafe(24)
        self.signing_key = signing_key or secrets.token_bytes(32)
        self.clock = clock
        self.loopback = loopback
        self.app_state = AppState(self.admin_token, clock=clock)
        self.idp = MockIdentityProvider(IDP_ENTITY_ID, idp_key, idp_certificate, self.directory, clock=clock)
        self.mock_app = create_mock_app(self.app_state)
        self._servers: list[ServerThread] = []
        self._clients: list[httpx.Client] = []

        if loopback:
            self.idp_server = ServerThread(self.idp.app)
            self.app_server = ServerThread(self.mock_app)
            idp_base, app_base = self.idp_server.url, self.app_server.url
            self.shim_server = None
        else:
            idp_base, app_base = "http://idp.test", "http://app.test"
        self.idp_base, self.app_base = idp_base, app_base

        self._shim_base = "http://shim.test"
        if loopback:
            # reserve the shim port now so its ACS URL is known
            self.shim_server = ServerThread(None)
            self._shim_base = self.shim_server.url
        self.config = ShimConfig(
            sp_entity_id=SP_ENTITY_ID,
            acs_url=self._shim_base + "/saml/acs",
            idp_sso_url=idp_base + "/sso",
            idp_entity_id=IDP_ENTITY_ID,
            idp_certificate=idp_certificate,
            cookie_signing_key=self.signing_key,
            connector_base_url=app_base,
            session_lifetime=session_lifetime,
            replay_cache=replay_cache,
        )

        if loopback:
            connector_client = None
        else:
            connector_client = self._track(_test_client(self.mock_app, app_base))
        kwargs = {"sleep": connector_sleep} if connector_sleep else {}
        self.connector = HttpAdminConnector(
            app_base, self.admin_token, client=connector_client, retry_delays=retry_delays, **kwargs
        )
        self.shim = ShimApp(self.config, self.role_mapping, self.connector, clock=clock)
        if loopback:
            self.shim_server.app = self.shim.app
            self._servers = [self.idp_server, self.app_server, self.shim_server]

    @classmethod
    def in_process(cls, **kwargs) -> "Federation":
        return cls(loopback=False, **kwargs)

    @classmethod
    def loopback_federation(cls, **kwargs) -> "Federation":
        return cls(loopback=True, **kwargs).start()

    def _track(self, client):
        self._clients.append(client)
        return client

    @property
    def shim_url(self) -> str:
        return self._shim_base

    def start(self) -> "Federation":
        for server in self._servers:
            server.start()
        return self

    def close(self) -> None:
        for server in self._servers:
            server.stop()
        self.connector.close()
        for client in self._clients:
            client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def browser(self) -> Browser:
        if self.loopback:
            client = self._track(httpx.Client(follow_redirects=False, timeout=30))
            return Browser(_router({}, default=client))
        mapping = {
            "shim.test": self._track(_test_client(self.shim.app, "http://shim.test")),
            "idp.test": self._track(_test_client(self.idp.app, "http://idp.test")),
        }
        return Browser(_router(mapping))

    def login(self, user: str | None = None, fault: str | None = None, original_path: str | None = None,
              browser: Browser | None = None) -> LoginResult:
        return (browser or self.browser()).login(self.shim_url, user=user, fault=fault, original_path=original_path)

    def validate(self, cookie_header: str | None, browser: Browser | None = None) -> int:
        headers = {"X-Original-Cookie": cookie_header} if cookie_header is not None else {}
        client = (browser or self.browser()).clients(self.shim_url)
        return client.get(self.shim_url + "/validate-session", headers=headers).status_code

    def encode_response(self, xml: bytes) -> str:
        return base64.b64encode(xml).decode("ascii")
