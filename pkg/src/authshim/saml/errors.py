"""Error taxonomy for the SAML pipeline.

Every error carries a stable ``category`` string. The shim logs the category
and never echoes error details back to the browser.
"""


class SamlError(Exception):
    category = "SamlError"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.category)
        self.detail = detail


# request side
class RelayStateTooLong(SamlError):
    category = "RelayStateTooLong"


# parsing
class XmlMalformed(SamlError):
    category = "XmlMalformed"


class DtdForbidden(SamlError):
    category = "DtdForbidden"


class DocumentTooLarge(SamlError):
    category = "DocumentTooLarge"


class StructureInvalid(SamlError):
    category = "StructureInvalid"


# signature
class SignatureMissing(SamlError):
    category = "SignatureMissing"


class SignatureInvalid(SamlError):
    category = "SignatureInvalid"


class UntrustedCertificate(SamlError):
    category = "UntrustedCertificate"


class UnsupportedAlgorithm(SamlError):
    category = "UnsupportedAlgorithm"


# conditions
class AssertionExpired(SamlError):
    category = "AssertionExpired"


class AssertionNotYetValid(SamlError):
    category = "AssertionNotYetValid"


class AssertionLifetimeExceeded(SamlError):
    category = "AssertionLifetimeExceeded"


class AudienceMismatch(SamlError):
    category = "AudienceMismatch"


class DestinationMismatch(SamlError):
    category = "DestinationMismatch"


class IssuerMismatch(SamlError):
    category = "IssuerMismatch"


class InResponseToMismatch(SamlError):
    category = "InResponseToMismatch"


class TrackerMissing(SamlError):
    category = "TrackerMissing"


class TrackerExpired(SamlError):
    category = "TrackerExpired"


class AssertionReplayed(SamlError):
    category = "AssertionReplayed"


# attribute extraction
class MissingSubject(SamlError):
    category = "MissingSubject"


class MissingGroupsClaim(SamlError):
    category = "MissingGroupsClaim"


class EmptyGroupsClaim(MissingGroupsClaim):
    """The groups attribute is present but carries no values.

    A subclass so callers can treat both cases as a missing claim while logs
    still tell them apart.
    """

    category = "EmptyGroupsClaim"
