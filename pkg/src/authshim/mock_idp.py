"""Mock identity provider for desk-scale federation tests.

It skips credential checks entirely: every ``/sso`` request is answered as the
directory user named by the ``user`` query parameter (or the default user),
with an optional ``fault`` that breaks exactly one property of the response.
"""

from __future__ import annotations

import base64
import enum
import html
import secrets
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable
from xml.sax.saxutils import escape, quoteattr

import yaml
from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa
from cryptography.x509.oid import NameOID
from starlette.applications import Starlette
from starlette.requests import Request
from starlette.responses import HTMLResponse, JSONResponse
from starlette.routing import Route

from .saml.errors import SamlError
from .saml.request import EMAIL_NAMEID, decode_redirect_request
from .saml.signature import RSA_SHA256, certificate_der, certificate_pem
from .saml.xml import C14N_ALGORITHM, DSIG_NS, SAML_NS, SAMLP_NS, canonicalize, first_child, parse_xml, serialize, text_of
from .timeutil import format_instant, utcnow

SUCCESS_STATUS = "urn:oasis:names:tc:SAML:2.0:status:Success"
BEARER = "urn:oasis:names:tc:SAML:2.0:cm:bearer"
PASSWORD_CONTEXT = "urn:oasis:names:tc:SAML:2.0:ac:classes:PasswordProtectedTransport"


class FaultDirective(enum.Enum):
    NONE = "None"
    OMIT_GROUPS = "OmitGroups"
    EMPTY_GROUPS = "EmptyGroups"
    EXPIRED = "Expired"
    NOT_YET_VALID = "NotYetValid"
    BAD_SIGNATURE = "BadSignature"
    WRONG_AUDIENCE = "WrongAudience"
    WRONG_ISSUER = "WrongIssuer"
    UNSOLICITED_RESPONSE = "UnsolicitedResponse"
    FOREIGN_CERTIFICATE = "ForeignCertificate"

    @classmethod
    def parse(cls, value: str | None) -> "FaultDirective":
        if not value:
            return cls.NONE
        for member in cls:
            if member.value.lower() == value.lower() or member.name.lower() == value.lower():
                return member
        raise ValueError("unknown fault %r" % value)


@dataclass(frozen=True)
class IdpDirectoryEntry:
    email: str
    display_name: str
    groups: tuple[str, ...]


def load_directory(source) -> list[IdpDirectoryEntry]:
    """Read a directory fixture: a YAML list (or ``users:`` list) of email/display_name/groups."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        source = Path(source).read_text(encoding="utf-8")
    data = yaml.safe_load(source)
    if isinstance(data, dict):
        data = data.get("users")
    if not isinstance(data, list):
        raise ValueError("directory must be a list of users")
    entries = []
    seen = set()
    for item in data:
        email = item["email"]
        if email in seen:
            raise ValueError("duplicate directory email %s" % email)
        seen.add(email)
        entries.append(IdpDirectoryEntry(email, item.get("display_name", email), tuple(item.get("groups") or ())))
    return entries


def generate_identity(common_name: str, key_size: int = 2048, days: int = 3650):
    """Create an RSA key and a matching self-signed certificate."""
    key = rsa.generate_private_key(public_exponent=65537, key_size=key_size)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    now = datetime.now(timezone.utc)
    certificate = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - timedelta(days=1))
        .not_valid_after(now + timedelta(days=days))
        .sign(key, hashes.SHA256())
    )
    return key, certificate


def load_identity(key_path, cert_path):
    key = serialization.load_pem_private_key(Path(key_path).read_bytes(), password=None)
    certificate = x509.load_pem_x509_certificate(Path(cert_path).read_bytes())
    return key, certificate


def private_key_pem(key) -> bytes:
    return key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()
    )


def sign_assertion(assertion, signing_key, certificate):
    """Embed an RSA-SHA256 signature over the canonical assertion.

    The signature element goes right after ``saml:Issuer``, as the SAML schema
    expects. Returns the owning document.
    """
    document = assertion.ownerDocument
    assertion_id = assertion.getAttribute("ID")
    signature_value = signing_key.sign(canonicalize(assertion), padding.PKCS1v15(), hashes.SHA256())

    def element(parent, local, text=None, **attrs):
        node = document.createElementNS(DSIG_NS, "ds:" + local)
        for name, value in attrs.items():
            node.setAttribute(name, value)
        if text is not None:
            node.appendChild(document.createTextNode(text))
        if parent is not None:
            parent.appendChild(node)
        return node

    signature = element(None, "Signature")
    signature.setAttributeNS("http://www.w3.org/2000/xmlns/", "xmlns:ds", DSIG_NS)
    signed_info = element(signature, "SignedInfo")
    element(signed_info, "CanonicalizationMethod", Algorithm=C14N_ALGORITHM)
    element(signed_info, "SignatureMethod", Algorithm=RSA_SHA256)
    element(signed_info, "Reference", URI="#" + assertion_id)
    element(signature, "SignatureValue", base64.b64encode(signature_value).decode("ascii"))
    key_info = element(signature, "KeyInfo")
    x509_data = element(key_info, "X509Data")
    element(x509_data, "X509Certificate", base64.b64encode(certificate_der(certificate)).decode("ascii"))

    issuer = first_child(assertion, SAML_NS, "Issuer")
    anchor = issuer.nextSibling if issuer is not None else assertion.firstChild
    assertion.insertBefore(signature, anchor)
    return document


def _corrupt_signature(assertion) -> None:
    signature = first_child(assertion, DSIG_NS, "Signature")
    value_el = first_child(signature, DSIG_NS, "SignatureValue")
    raw = bytearray(base64.b64decode(text_of(value_el)))
    raw[len(raw) // 2] ^= 0x01
    value_el.firstChild.data = base64.b64encode(bytes(raw)).decode("ascii")


def _new_id() -> str:
    return "_" + secrets.token_hex(20)


class MockIdentityProvider:
    def __init__(
        self,
        entity_id: str,
        signing_key,
        certificate: x509.Certificate,
        directory: Iterable[IdpDirectoryEntry],
        default_user: str | None = None,
        clock: Callable[[], datetime] = utcnow,
        sso_url: str | None = None,
    ):
        self.entity_id = entity_id
        self.signing_key = signing_key
        self.certificate = certificate
        self.directory = {entry.email: entry for entry in directory}
        if not self.directory:
            raise ValueError("directory is empty")
        self.default_user = default_user or next(iter(self.directory))
        self.clock = clock
        self.sso_url = sso_url
        self._foreign = None
        self.app = Starlette(
            routes=[
                Route("/sso", self.handle_sso, methods=["GET"]),
                Route("/metadata", self.metadata, methods=["GET"]),
                Route("/directory", self.directory_listing, methods=["GET"]),
            ]
        )

    @property
    def foreign_identity(self):
        if self._foreign is None:
            self._foreign = generate_identity("foreign-idp")
        return self._foreign

    def build_response(
        self,
        user: IdpDirectoryEntry,
        acs_url: str,
        audience: str,
        in_response_to: str | None,
        fault: FaultDirective = FaultDirective.NONE,
        now: datetime | None = None,
        validity: tuple[datetime, datetime] | None = None,
    ) -> bytes:
        """Serialized, signed ``samlp:Response`` for ``user``.

        ``validity`` overrides the assertion window (tests use it to probe
        time bounds); otherwise the window is ``[now - 30s, now + 300s]``
        unless a time fault applies.
        """
        now = now or self.clock()
        if validity is not None:
            not_before, not_on_or_after = validity
        elif fault is FaultDirective.EXPIRED:
            not_before, not_on_or_after = now - timedelta(minutes=20), now - timedelta(minutes=10)
        elif fault is FaultDirective.NOT_YET_VALID:
            not_before, not_on_or_after = now + timedelta(minutes=10), now + timedelta(minutes=15)
        else:
            not_before, not_on_or_after = now - timedelta(seconds=30), now + timedelta(seconds=300)
        issuer = "urn:mock-idp:rogue" if fault is FaultDirective.WRONG_ISSUER else self.entity_id
        if fault is FaultDirective.WRONG_AUDIENCE:
            audience = "urn:authshim:other-sp"
        if fault is FaultDirective.UNSOLICITED_RESPONSE:
            in_response_to = None
        irt = " InResponseTo=%s" % quoteattr(in_response_to) if in_response_to else ""

        if fault is FaultDirective.OMIT_GROUPS:
            groups_xml = ""
        else:
            values = "" if fault is FaultDirective.EMPTY_GROUPS else "".join(
                "<saml:AttributeValue>%s</saml:AttributeValue>" % escape(group) for group in user.groups
            )
            groups_xml = '<saml:Attribute Name="groups">%s</saml:Attribute>' % values
        attributes = (
            '<saml:AttributeStatement><saml:Attribute Name="displayName">'
            "<saml:AttributeValue>%s</saml:AttributeValue></saml:Attribute>%s</saml:AttributeStatement>"
        ) % (escape(user.display_name), groups_xml)

        assertion_id = _new_id()
        xml = (
            '<samlp:Response xmlns:samlp="%(samlp)s" xmlns:saml="%(saml)s" ID=%(rid)s Version="2.0" '
            "IssueInstant=%(now)s Destination=%(acs)s%(irt)s>"
            "<saml:Issuer>%(issuer)s</saml:Issuer>"
            '<samlp:Status><samlp:StatusCode Value="%(status)s"></samlp:StatusCode></samlp:Status>'
            '<saml:Assertion ID=%(aid)s Version="2.0" IssueInstant=%(now)s>'
            "<saml:Issuer>%(issuer)s</saml:Issuer>"
            '<saml:Subject><saml:NameID Format="%(nameid)s">%(email)s</saml:NameID>'
            '<saml:SubjectConfirmation Method="%(bearer)s">'
            "<saml:SubjectConfirmationData%(irt)s NotOnOrAfter=%(noa)s Recipient=%(acs)s>"
            "</saml:SubjectConfirmationData></saml:SubjectConfirmation></saml:Subject>"
            "<saml:Conditions NotBefore=%(nb)s NotOnOrAfter=%(noa)s>"
            "<saml:AudienceRestriction><saml:Audience>%(audience)s</saml:Audience></saml:AudienceRestriction>"
            "</saml:Conditions>"
            "<saml:AuthnStatement AuthnInstant=%(now)s SessionIndex=%(aid)s>"
            "<saml:AuthnContext><saml:AuthnContextClassRef>%(ctx)s</saml:AuthnContextClassRef></saml:AuthnContext>"
            "</saml:AuthnStatement>%(attributes)s"
            "</saml:Assertion></samlp:Response>"
        ) % {
            "samlp": SAMLP_NS,
            "saml": SAML_NS,
            "rid": quoteattr(_new_id()),
            "aid": quoteattr(assertion_id),
            "now": quoteattr(format_instant(now)),
            "acs": quoteattr(acs_url),
            "irt": irt,
            "issuer": escape(issuer),
            "status": SUCCESS_STATUS,
            "nameid": EMAIL_NAMEID,
            "email": escape(user.email),
            "bearer": BEARER,
            "nb": quoteattr(format_instant(not_before)),
            "noa": quoteattr(format_instant(not_on_or_after)),
            "audience": escape(audience),
            "ctx": PASSWORD_CONTEXT,
            "attributes": attributes,
        }
        document = parse_xml(xml.encode("utf-8"))
        assertion = first_child(document.documentElement, SAML_NS, "Assertion")
        if fault is FaultDirective.FOREIGN_CERTIFICATE:
            key, certificate = self.foreign_identity
        else:
            key, certificate = self.signing_key, self.certificate
        sign_assertion(assertion, key, certificate)
        if fault is FaultDirective.BAD_SIGNATURE:
            _corrupt_signature(assertion)
        return serialize(document)

    def _read_request(self, saml_request: str):
        document = parse_xml(decode_redirect_request(saml_request))
        root = document.documentElement
        if root.namespaceURI != SAMLP_NS or root.localName != "AuthnRequest":
            raise ValueError("not an AuthnRequest")
        issuer = first_child(root, SAML_NS, "Issuer")
        return root.getAttribute("ID"), root.getAttribute("AssertionConsumerServiceURL"), text_of(issuer) if issuer else ""

    async def handle_sso(self, request: Request):
        params = request.query_params
        try:
            request_id, acs_url, sp_entity = self._read_request(params.get("SAMLRequest", ""))
        except (SamlError, ValueError):
            return HTMLResponse("<h1>Bad SAMLRequest</h1>", status_code=400)
        if not acs_url or not request_id:
            return HTMLResponse("<h1>Bad SAMLRequest</h1>", status_code=400)
        user = self.directory.get(params.get("user") or self.default_user)
        if user is None:
            return HTMLResponse("<h1>Unknown user</h1>", status_code=404)
        try:
            fault = FaultDirective.parse(params.get("fault"))
        except ValueError:
            return HTMLResponse("<h1>Unknown fault</h1>", status_code=400)
        body = self.build_response(user, acs_url, sp_entity, request_id, fault)
        return HTMLResponse(auto_post_form(acs_url, body, params.get("RelayState")))

    async def metadata(self, request: Request):
        sso_url = self.sso_url or str(request.url.replace(path="/sso", query=""))
        return JSONResponse({
            "entity_id": self.entity_id,
            "sso_url": sso_url,
            "certificate_pem": certificate_pem(self.certificate),
        })

    async def directory_listing(self, request: Request):
        return JSONResponse([
            {"email": e.email, "display_name": e.display_name, "groups": list(e.groups)}
            for e in self.directory.values()
        ])


def auto_post_form(action: str, saml_response: bytes, relay_state: str | None) -> str:
    fields = '<input type="hidden" name="SAMLResponse" value="%s">' % base64.b64encode(saml_response).decode("ascii")
    if relay_state is not None:
        fields += '<input type="hidden" name="RelayState" value="%s">' % html.escape(relay_state, quote=True)
    return (
        "<!doctype html><html><body onload=\"document.forms[0].submit()\">"
        '<form method="post" action="%s">%s<noscript><button type="submit">Continue</button></noscript>'
        "</form></body></html>"
    ) % (html.escape(action, quote=True), fields)
