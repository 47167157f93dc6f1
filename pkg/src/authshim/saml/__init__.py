"""SAML 2.0 service-provider side: request building, response parsing,
signature verification, condition checks and attribute extraction."""

from .assertion import (
    IdentityAssertion,
    ReplayCache,
    UserInfo,
    check_validity_window,
    extract_user_info,
    validate_conditions,
)
from .errors import *  # noqa: F401,F403
from .request import (
    AuthnRequestMessage,
    RequestTracker,
    build_authn_request,
    decode_redirect_request,
)
from .signature import VerifiedAssertion, load_certificate, verify_signature
from .xml import ParserPolicy, ResponseDocument, canonicalize, parse_response, parse_xml, serialize
