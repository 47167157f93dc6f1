"""Constrained enveloped-signature profile for SAML assertions.

The assertion carries one ``ds:Signature`` child whose ``SignatureValue`` is
an RSA PKCS#1 v1.5 / SHA-256 signature over :func:`canonicalize` of the
assertion (which excludes the signature element itself). ``SignedInfo`` names
the algorithms and references the assertion ID; ``KeyInfo`` embeds the
signing certificate, which must byte-equal the configured IdP certificate.
"""

from __future__ import annotations

import base64
import binascii
from pathlib import Path

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .errors import (
    SignatureInvalid,
    SignatureMissing,
    StructureInvalid,
    UnsupportedAlgorithm,
    UntrustedCertificate,
)
from .xml import C14N_ALGORITHM, DSIG_NS, ResponseDocument, canonicalize, child_elements, first_child, text_of

RSA_SHA256 = "http://www.w3.org/2001/04/xmldsig-more#rsa-sha256"


def load_certificate(data: bytes | str) -> x509.Certificate:
    """Load a certificate from PEM text, DER bytes, or a path to either."""
    if isinstance(data, Path):
        data = data.read_bytes()
    if isinstance(data, str):
        if "-----BEGIN" not in data:
            data = Path(data).read_bytes()
        else:
            data = data.encode("ascii")
    if b"-----BEGIN" in data:
        return x509.load_pem_x509_certificate(data)
    return x509.load_der_x509_certificate(data)


def certificate_der(certificate: x509.Certificate) -> bytes:
    return certificate.public_bytes(serialization.Encoding.DER)


def certificate_pem(certificate: x509.Certificate) -> str:
    return certificate.public_bytes(serialization.Encoding.PEM).decode("ascii")


def fingerprint_sha256(certificate: x509.Certificate) -> str:
    return certificate.fingerprint(hashes.SHA256()).hex(":").upper()


_VERIFIED = object()


class VerifiedAssertion:
    """An assertion whose signature and certificate have been checked.

    Only :func:`verify_signature` can construct one.
    """

    __slots__ = ("response", "assertion")

    def __init__(self, token, response, assertion):
        if token is not _VERIFIED:
            raise TypeError("VerifiedAssertion is produced by verify_signature only")
        self.response = response
        self.assertion = assertion


def _b64(text: str) -> bytes:
    try:
        return base64.b64decode("".join(text.split()), validate=True)
    except (binascii.Error, ValueError):
        raise SignatureInvalid("signature encoding is not base64") from None


def verify_signature(doc: ResponseDocument, idp_certificate: x509.Certificate) -> VerifiedAssertion:
    assertion = doc.assertion
    signatures = child_elements(assertion, DSIG_NS, "Signature")
    if not signatures:
        raise SignatureMissing("assertion is not signed")
    if len(signatures) > 1:
        raise StructureInvalid("assertion carries more than one signature")
    signature = signatures[0]

    signed_info = first_child(signature, DSIG_NS, "SignedInfo")
    value_el = first_child(signature, DSIG_NS, "SignatureValue")
    if signed_info is None or value_el is None:
        raise SignatureInvalid("signature element is incomplete")
    method = first_child(signed_info, DSIG_NS, "SignatureMethod")
    if method is None or method.getAttribute("Algorithm") != RSA_SHA256:
        raise UnsupportedAlgorithm("only RSA-SHA256 is accepted")
    c14n = first_child(signed_info, DSIG_NS, "CanonicalizationMethod")
    if c14n is None or c14n.getAttribute("Algorithm") != C14N_ALGORITHM:
        raise UnsupportedAlgorithm("unsupported canonicalization method")

    embedded = None
    key_info = first_child(signature, DSIG_NS, "KeyInfo")
    if key_info is not None:
        x509_data = first_child(key_info, DSIG_NS, "X509Data")
        if x509_data is not None:
            cert_el = first_child(x509_data, DSIG_NS, "X509Certificate")
            if cert_el is not None:
                try:
                    embedded = base64.b64decode("".join(text_of(cert_el).split()), validate=True)
                except (binascii.Error, ValueError):
                    embedded = None
    if embedded is None or embedded != certificate_der(idp_certificate):
        raise UntrustedCertificate("signing certificate does not match the configured IdP certificate")

    reference = first_child(signed_info, DSIG_NS, "Reference")
    assertion_id = assertion.getAttribute("ID")
    if reference is None or not assertion_id or reference.getAttribute("URI") != "#" + assertion_id:
        raise SignatureInvalid("signature reference does not point at the assertion")

    public_key = idp_certificate.public_key()
    if not isinstance(public_key, rsa.RSAPublicKey):
        raise UnsupportedAlgorithm("IdP certificate does not carry an RSA key")
    try:
        public_key.verify(_b64(text_of(value_el)), canonicalize(assertion), padding.PKCS1v15(), hashes.SHA256())
    except InvalidSignature:
        raise SignatureInvalid("signature value does not match the assertion") from None
    return VerifiedAssertion(_VERIFIED, doc.response, assertion)
