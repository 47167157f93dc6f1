"""Shim configuration: the YAML file, environment indirections, and validation.

``check-config`` and ``serve`` both go through :func:`load_runtime`, so a
config that checks clean is one the service will start with.
"""

from __future__ import annotations

import base64
import binascii
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping
from urllib.parse import urlsplit

import yaml
from cryptography import x509

from .saml.signature import load_certificate

if TYPE_CHECKING:
    from .rbac import RoleMappingConfig

SIGNING_KEY_BYTES = 32
MAX_CLOCK_SKEW = 300


class ConfigError(Exception):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _absolute_url(value) -> bool:
    if not isinstance(value, str):
        return False
    parts = urlsplit(value)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


@dataclass(frozen=True)
class ShimConfig:
    sp_entity_id: str
    acs_url: str
    idp_sso_url: str
    idp_entity_id: str
    idp_certificate: x509.Certificate
    cookie_signing_key: bytes = field(repr=False)
    connector_base_url: str
    clock_skew: int = 90
    assertion_ttl_max: int = 3600
    session_cookie_name: str = "app_session"
    shim_cookie_name: str = "shim_session"
    tracker_cookie_name: str = "shim_tracker"
    admin_token_env_name: str = "APP_ADMIN_TOKEN"
    session_lifetime: int = 8 * 3600
    groups_attribute: str = "groups"
    public_base_url: str | None = None
    role_mapping_file: str | None = None
    replay_cache: bool = False
    cookie_secure: bool = True

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        found = []
        for name in ("acs_url", "idp_sso_url", "connector_base_url"):
            if not _absolute_url(getattr(self, name)):
                found.append("%s must be an absolute http(s) URL" % name)
        for name in ("sp_entity_id", "idp_entity_id"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                found.append("%s must be a non-empty URI" % name)
        if self.public_base_url is not None:
            if not _absolute_url(self.public_base_url):
                found.append("public_base_url must be an absolute http(s) URL")
            elif _absolute_url(self.acs_url) and urlsplit(self.acs_url).netloc != urlsplit(self.public_base_url).netloc:
                found.append("acs_url host must match public_base_url host")
        if not isinstance(self.cookie_signing_key, bytes) or len(self.cookie_signing_key) != SIGNING_KEY_BYTES:
            found.append("cookie signing key must be exactly %d bytes" % SIGNING_KEY_BYTES)
        if not isinstance(self.clock_skew, int) or not 0 <= self.clock_skew <= MAX_CLOCK_SKEW:
            found.append("clock_skew must be between 0 and %d seconds" % MAX_CLOCK_SKEW)
        if not isinstance(self.assertion_ttl_max, int) or self.assertion_ttl_max <= 0:
            found.append("assertion_ttl_max must be a positive number of seconds")
        if not isinstance(self.session_lifetime, int) or self.session_lifetime <= 0:
            found.append("session_lifetime must be a positive number of seconds")
        names = (self.session_cookie_name, self.shim_cookie_name, self.tracker_cookie_name)
        if len(set(names)) != 3 or not all(isinstance(n, str) and n.isidentifier() for n in names):
            found.append("cookie names must be distinct identifiers")
        if not isinstance(self.idp_certificate, x509.Certificate):
            found.append("idp_certificate must be an X.509 certificate")
        return found

    @property
    def public_host(self) -> str:
        return urlsplit(self.public_base_url or self.acs_url).netloc


@dataclass(frozen=True)
class ShimRuntime:
    """Everything ``serve`` needs, validated together."""

    config: ShimConfig
    role_mapping: "RoleMappingConfig"
    admin_token: str = field(repr=False)


_FIELDS = {
    "sp_entity_id", "acs_url", "idp_sso_url", "idp_entity_id", "idp_certificate",
    "connector_base_url", "clock_skew", "assertion_ttl_max", "session_cookie_name",
    "shim_cookie_name", "tracker_cookie_name", "admin_token_env_name", "session_lifetime",
    "groups_attribute", "public_base_url", "role_mapping_file", "replay_cache",
    "cookie_secure", "signing_key_env_name",
}


def _read_yaml(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("cannot read %s: %s" % (path, exc.strerror)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(
            "%s: line %d, column %d: %s" % (path, mark.line + 1, mark.column + 1, exc.problem)
        ) from None
    if not isinstance(data, dict):
        raise ConfigError("%s: top level must be a mapping" % path)
    return data


def decode_signing_key(value: str) -> bytes:
    try:
        return base64.b64decode(value.strip(), validate=True)
    except (binascii.Error, ValueError):
        raise ConfigError("signing key is not valid base64") from None


def load_shim_config(path, environ: Mapping[str, str] | None = None, require_signing_key: bool = True) -> ShimConfig:
    """Read the YAML config and resolve its environment indirections.

    ``APP_URL`` overrides ``connector_base_url``; the cookie signing key comes
    from ``SHIM_SIGNING_KEY`` (base64) unless ``signing_key_env_name`` says
    otherwise. Artifact generators pass ``require_signing_key=False`` and get a
    throwaway key, since they never mint cookies.
    """
    environ = os.environ if environ is None else environ
    path = Path(path)
    data = _read_yaml(path)
    problems = ["unknown field: %s" % key for key in sorted(set(data) - _FIELDS)]

    values = {key: data[key] for key in data if key in _FIELDS and key != "signing_key_env_name"}
    if environ.get("APP_URL"):
        values["connector_base_url"] = environ["APP_URL"]
    for required in ("sp_entity_id", "acs_url", "idp_sso_url", "idp_entity_id", "idp_certificate", "connector_base_url"):
        if required not in values:
            problems.append("missing field: %s" % required)

    cert_source = values.get("idp_certificate")
    if isinstance(cert_source, str):
        try:
            if "-----BEGIN" in cert_source:
                values["idp_certificate"] = load_certificate(cert_source)
            else:
                cert_path = Path(cert_source)
                if not cert_path.is_absolute():
                    cert_path = path.parent / cert_path
                values["idp_certificate"] = load_certificate(cert_path.read_bytes())
        except (OSError, ValueError) as exc:
            problems.append("idp_certificate cannot be loaded: %s" % exc)

    key_env = data.get("signing_key_env_name", "SHIM_SIGNING_KEY")
    raw_key = environ.get(key_env)
    if not raw_key and not require_signing_key:
        signing_key = os.urandom(SIGNING_KEY_BYTES)
    elif not raw_key:
        problems.append("environment variable %s is not set" % key_env)
        signing_key = b""
    else:
        try:
            signing_key = decode_signing_key(raw_key)
        except ConfigError as exc:
            problems.extend("%s: %s" % (key_env, p) for p in exc.problems)
            signing_key = b""
    values["cookie_signing_key"] = signing_key

    if values.get("role_mapping_file"):
        mapping_path = Path(values["role_mapping_file"])
        if not mapping_path.is_absolute():
            values["role_mapping_file"] = str(path.parent / mapping_path)

    if problems:
        # still surface field-level validation problems in the same report
        try:
            ShimConfig(**_fill_placeholders(values))
        except ConfigError as exc:
            problems.extend(p for p in exc.problems if p not in problems and not _placeholder_problem(p, values))
        except TypeError:
            pass
        raise ConfigError(problems)
    try:
        return ShimConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _fill_placeholders(values: dict) -> dict:
    filled = dict(values)
    for name in ("sp_entity_id", "acs_url", "idp_sso_url", "idp_entity_id", "connector_base_url"):
        filled.setdefault(name, None)
    filled.setdefault("idp_certificate", None)
    return filled


def _placeholder_problem(problem: str, values: dict) -> bool:
    # problems for fields already reported as missing or unloadable
    if problem.startswith("cookie signing key") and not values.get("cookie_signing_key"):
        return True
    if problem.startswith("idp_certificate") and not isinstance(values.get("idp_certificate"), x509.Certificate):
        return True
    return any(problem.startswith(name) and name not in values for name in _FIELDS)


def load_runtime(path, environ: Mapping[str, str] | None = None) -> ShimRuntime:
    from .rbac import RoleMappingError, load_role_mapping

    environ = os.environ if environ is None else environ
    problems: list[str] = []
    config = None
    try:
        config = load_shim_config(path, environ)
    except ConfigError as exc:
        problems.extend(exc.problems)

    token_env = "APP_ADMIN_TOKEN"
    if config is not None:
        token_env = config.admin_token_env_name
    else:
        try:
            token_env = _read_yaml(Path(path)).get("admin_token_env_name", token_env)
        except ConfigError:
            pass
    admin_token = environ.get(token_env, "")
    if not admin_token:
        problems.append("environment variable %s is not set" % token_env)

    mapping = None
    mapping_file = config.role_mapping_file if config is not None else None
    if config is not None and not mapping_file:
        problems.append("missing field: role_mapping_file")
    if mapping_file:
        try:
            text = Path(mapping_file).read_text(encoding="utf-8")
        except OSError as exc:
            problems.append("cannot read role mapping %s: %s" % (mapping_file, exc.strerror))
        else:
            try:
                mapping = load_role_mapping(text)
            except RoleMappingError as exc:
                problems.append("%s: %s" % (mapping_file, exc))

    if problems:
        raise ConfigError(problems)
    return ShimRuntime(config=config, role_mapping=mapping, admin_token=admin_token)
