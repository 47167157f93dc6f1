"""Shim session cookie and cookie-header helpers.

The shim cookie is what ``/validate-session`` checks on every proxied
request. It carries no roles or groups; authorization stays inside the
target application.

Serialized form: ``v1.<b64url(json payload)>.<b64url(hmac)>`` where the
payload is ``[email, issued_at, expires_at, sha256(app_token) hex]``.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

VERSION = "v1"
_CONTEXT = b"authshim-session\x00"


@dataclass(frozen=True)
class ShimSessionCookie:
    subject_email: str
    issued_at: datetime
    expires_at: datetime
    app_token_hash: str
    mac: bytes


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64url(text: str) -> bytes:
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


def _mac(key: bytes, payload: bytes) -> bytes:
    return hmac.new(key, _CONTEXT + payload, hashlib.sha256).digest()


def hash_app_token(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


def mint_shim_cookie(email: str, app_token: str, now: datetime, config) -> str:
    if not email:
        raise ValueError("email is required")
    issued = int(now.timestamp())
    expires = issued + int(config.session_lifetime)
    payload = json.dumps([email, issued, expires, hash_app_token(app_token)], separators=(",", ":")).encode("utf-8")
    return "%s.%s.%s" % (VERSION, _b64url(payload), _b64url(_mac(config.cookie_signing_key, payload)))


def verify_shim_cookie(value, now: datetime, config) -> ShimSessionCookie | None:
    """Return the decoded cookie when valid and unexpired, else ``None``. Never raises."""
    try:
        if not isinstance(value, str) or len(value) > 4096:
            return None
        version, payload_text, mac_text = value.split(".")
        if version != VERSION:
            return None
        payload = _unb64url(payload_text)
        mac = _unb64url(mac_text)
        if not hmac.compare_digest(mac, _mac(config.cookie_signing_key, payload)):
            return None
        email, issued, expires, token_hash = json.loads(payload)
        if not isinstance(email, str) or not email or not isinstance(token_hash, str):
            return None
        issued_at = datetime.fromtimestamp(int(issued), timezone.utc)
        expires_at = datetime.fromtimestamp(int(expires), timezone.utc)
    except (ValueError, TypeError, binascii.Error, OverflowError, OSError):
        return None
    if not now < expires_at:
        return None
    return ShimSessionCookie(email, issued_at, expires_at, token_hash, mac)


def parse_cookie_header(header: str | None) -> dict[str, str]:
    """Split a ``Cookie`` header into name/value pairs; the first occurrence wins."""
    cookies: dict[str, str] = {}
    if not header:
        return cookies
    for part in header.split(";"):
        name, sep, value = part.strip().partition("=")
        if not sep or not name:
            continue
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] == '"':
            value = value[1:-1]
        cookies.setdefault(name.strip(), value)
    return cookies


@dataclass(frozen=True)
class CookieDirective:
    name: str
    value: str
    max_age: int

    def __repr__(self):
        return "CookieDirective(%r, %s..., max_age=%d)" % (self.name, self.value[:8], self.max_age)


def seconds_until(moment: datetime | None, now: datetime, fallback: int) -> int:
    if moment is None:
        return fallback
    return max(0, min(fallback, int((moment - now) / timedelta(seconds=1))))
