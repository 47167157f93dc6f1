"""SP-initiated AuthnRequest (HTTP-Redirect binding) and its request tracker.

The tracker travels in a cookie and lets a stateless shim check
``InResponseTo`` on the way back from the IdP.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import secrets
import zlib
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable
from urllib.parse import urlencode
from xml.sax.saxutils import escape, quoteattr

from ..timeutil import format_instant
from .errors import DocumentTooLarge, RelayStateTooLong, XmlMalformed

MAX_RELAY_STATE_BYTES = 2048
TRACKER_TTL = timedelta(seconds=300)
REQUEST_ID_BYTES = 20  # 160 bits
MAX_INFLATED_REQUEST = 64 * 1024

POST_BINDING = "urn:oasis:names:tc:SAML:2.0:bindings:HTTP-POST"
EMAIL_NAMEID = "urn:oasis:names:tc:SAML:1.1:nameid-format:emailAddress"


@dataclass(frozen=True)
class AuthnRequestMessage:
    request_id: str
    issue_instant: datetime
    destination: str
    redirect_url: str
    relay_state: str
    xml: bytes


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64url(text: str) -> bytes:
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


@dataclass(frozen=True)
class RequestTracker:
    request_id: str
    issued_at: datetime
    relay_state: str
    mac: bytes

    @staticmethod
    def _payload(request_id: str, issued_at: int, relay_state: str) -> bytes:
        return json.dumps([request_id, issued_at, relay_state], separators=(",", ":")).encode("utf-8")

    @staticmethod
    def _sign(key: bytes, payload: bytes) -> bytes:
        return hmac.new(key, b"authshim-tracker\x00" + payload, hashlib.sha256).digest()

    @classmethod
    def issue(cls, key: bytes, request_id: str, issued_at: datetime, relay_state: str) -> "RequestTracker":
        seconds = int(issued_at.timestamp())
        mac = cls._sign(key, cls._payload(request_id, seconds, relay_state))
        return cls(request_id, datetime.fromtimestamp(seconds, timezone.utc), relay_state, mac)

    def serialize(self) -> str:
        payload = self._payload(self.request_id, int(self.issued_at.timestamp()), self.relay_state)
        return "%s.%s" % (_b64url(payload), _b64url(self.mac))

    @classmethod
    def deserialize(cls, value: str | None, key: bytes) -> "RequestTracker | None":
        """Parse a tracker cookie; anything that fails the MAC is treated as absent."""
        if not value or value.count(".") != 1:
            return None
        try:
            payload_text, mac_text = value.split(".")
            payload = _unb64url(payload_text)
            mac = _unb64url(mac_text)
        except (binascii.Error, ValueError):
            return None
        if not hmac.compare_digest(mac, cls._sign(key, payload)):
            return None
        try:
            request_id, issued_at, relay_state = json.loads(payload)
            issued = datetime.fromtimestamp(int(issued_at), timezone.utc)
        except (ValueError, TypeError, OverflowError, OSError):
            return None
        if not isinstance(request_id, str) or not isinstance(relay_state, str):
            return None
        return cls(request_id, issued, relay_state, mac)

    def expired(self, now: datetime) -> bool:
        return now > self.issued_at + TRACKER_TTL


def new_request_id(rng: Callable[[int], bytes] = secrets.token_bytes) -> str:
    return "_" + rng(REQUEST_ID_BYTES).hex()


def build_authn_request(config, relay_state: str, now: datetime, rng: Callable[[int], bytes] = secrets.token_bytes):
    """Build the redirect to the IdP and the tracker that remembers it.

    Returns ``(AuthnRequestMessage, RequestTracker)``.
    """
    if len(relay_state.encode("utf-8")) > MAX_RELAY_STATE_BYTES:
        raise RelayStateTooLong("relay state exceeds %d bytes" % MAX_RELAY_STATE_BYTES)
    request_id = new_request_id(rng)
    instant = format_instant(now)
    xml = (
        '<samlp:AuthnRequest xmlns:samlp="urn:oasis:names:tc:SAML:2.0:protocol" '
        'xmlns:saml="urn:oasis:names:tc:SAML:2.0:assertion" '
        "ID=%s Version=\"2.0\" IssueInstant=%s Destination=%s "
        "AssertionConsumerServiceURL=%s ProtocolBinding=%s>"
        "<saml:Issuer>%s</saml:Issuer>"
        '<samlp:NameIDPolicy Format="%s" AllowCreate="true"></samlp:NameIDPolicy>'
        "</samlp:AuthnRequest>"
    ) % (
        quoteattr(request_id),
        quoteattr(instant),
        quoteattr(config.idp_sso_url),
        quoteattr(config.acs_url),
        quoteattr(POST_BINDING),
        escape(config.sp_entity_id),
        EMAIL_NAMEID,
    )
    xml_bytes = xml.encode("utf-8")
    deflater = zlib.compressobj(9, zlib.DEFLATED, -15)
    encoded = base64.b64encode(deflater.compress(xml_bytes) + deflater.flush()).decode("ascii")
    separator = "&" if "?" in config.idp_sso_url else "?"
    redirect_url = config.idp_sso_url + separator + urlencode({"SAMLRequest": encoded, "RelayState": relay_state})
    message = AuthnRequestMessage(
        request_id=request_id,
        issue_instant=now,
        destination=config.idp_sso_url,
        redirect_url=redirect_url,
        relay_state=relay_state,
        xml=xml_bytes,
    )
    tracker = RequestTracker.issue(config.cookie_signing_key, request_id, now, relay_state)
    return message, tracker


def decode_redirect_request(saml_request: str) -> bytes:
    """Undo the HTTP-Redirect encoding (base64 then raw DEFLATE)."""
    try:
        compressed = base64.b64decode(saml_request, validate=True)
    except (binascii.Error, ValueError):
        raise XmlMalformed("SAMLRequest is not base64") from None
    inflater = zlib.decompressobj(-15)
    try:
        xml = inflater.decompress(compressed, MAX_INFLATED_REQUEST)
    except zlib.error:
        raise XmlMalformed("SAMLRequest is not deflated") from None
    if inflater.unconsumed_tail:
        raise DocumentTooLarge("inflated SAMLRequest exceeds %d bytes" % MAX_INFLATED_REQUEST)
    return xml
