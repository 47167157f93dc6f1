from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from ..timeutil import parse_instant
from .errors import (
    AssertionExpired,
    AssertionLifetimeExceeded,
    AssertionNotYetValid,
    AssertionReplayed,
    AudienceMismatch,
    DestinationMismatch,
    EmptyGroupsClaim,
    InResponseToMismatch,
    IssuerMismatch,
    MissingGroupsClaim,
    MissingSubject,
    StructureInvalid,
    TrackerExpired,
    TrackerMissing,
)
from .request import RequestTracker
from .signature import VerifiedAssertion
from .xml import SAML_NS, child_elements, first_child, text_of

DISPLAY_NAME_ATTRIBUTES = ("displayName", "urn:oid:2.16.840.1.113730.3.1.241")

_VALIDATED = object()


@dataclass(frozen=True)
class IdentityAssertion:
    """Facts from an assertion that passed every check in validate_conditions.

    Only that function can build one; direct construction raises TypeError.
    """

    subject_email: str
    groups: tuple[str, ...] | None  # None when the attribute is absent
    display_name: str | None
    audience: str
    in_response_to: str
    not_before: datetime
    not_on_or_after: datetime
    assertion_id: str
    issuer: str
    _seal: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._seal is not _VALIDATED:
            raise TypeError("IdentityAssertion is only produced by validate_conditions")


@dataclass(frozen=True)
class UserInfo:
    email: str
    groups: tuple[str, ...]
    display_name: str | None = None


def check_validity_window(not_before: datetime, not_on_or_after: datetime, now: datetime, skew: timedelta) -> None:
    """Accept iff ``not_before - skew <= now < not_on_or_after + skew``."""
    if now < not_before - skew:
        raise AssertionNotYetValid("assertion is not valid before %s" % not_before.isoformat())
    if now >= not_on_or_after + skew:
        raise AssertionExpired("assertion expired at %s" % not_on_or_after.isoformat())


def _instant(element, name: str, required: bool = True) -> datetime | None:
    if element is None or not element.hasAttribute(name):
        if required:
            raise StructureInvalid("missing %s" % name)
        return None
    try:
        return parse_instant(element.getAttribute(name))
    except ValueError:
        raise StructureInvalid("unparseable %s" % name) from None


class ReplayCache:
    """Bounded, per-instance record of consumed assertion IDs.

    Entries live until their assertion's validity ends; the oldest entry is
    evicted when the cache is full.
    """

    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._entries: OrderedDict[str, datetime] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._entries)

    def consume(self, assertion_id: str, expires_at: datetime, now: datetime) -> None:
        with self._lock:
            for key in [k for k, exp in self._entries.items() if exp <= now]:
                del self._entries[key]
            if assertion_id in self._entries:
                raise AssertionReplayed("assertion %s was already consumed" % assertion_id)
            while len(self._entries) >= self.capacity:
                self._entries.popitem(last=False)
            self._entries[assertion_id] = expires_at


def validate_conditions(
    assertion: VerifiedAssertion,
    config,
    tracker: RequestTracker | None,
    now: datetime,
    replay_cache: ReplayCache | None = None,
) -> IdentityAssertion:
    if not isinstance(assertion, VerifiedAssertion):
        raise TypeError("validate_conditions requires a VerifiedAssertion")
    response, node = assertion.response, assertion.assertion
    skew = timedelta(seconds=config.clock_skew)

    issuer_el = first_child(node, SAML_NS, "Issuer")
    issuer = text_of(issuer_el).strip() if issuer_el is not None else ""
    if issuer != config.idp_entity_id:
        raise IssuerMismatch("assertion issuer is not the configured IdP")
    outer_issuer = first_child(response, SAML_NS, "Issuer")
    if outer_issuer is not None and text_of(outer_issuer).strip() != config.idp_entity_id:
        raise IssuerMismatch("response issuer is not the configured IdP")

    conditions = first_child(node, SAML_NS, "Conditions")
    if conditions is None:
        raise StructureInvalid("assertion has no Conditions")
    not_before = _instant(conditions, "NotBefore")
    not_on_or_after = _instant(conditions, "NotOnOrAfter")
    if not not_before < not_on_or_after:
        raise StructureInvalid("NotBefore is not earlier than NotOnOrAfter")
    if (not_on_or_after - not_before).total_seconds() > config.assertion_ttl_max:
        raise AssertionLifetimeExceeded("validity window longer than %ds" % config.assertion_ttl_max)
    check_validity_window(not_before, not_on_or_after, now, skew)

    subject = first_child(node, SAML_NS, "Subject")
    confirmation_data = None
    if subject is not None:
        confirmation = first_child(subject, SAML_NS, "SubjectConfirmation")
        if confirmation is not None:
            confirmation_data = first_child(confirmation, SAML_NS, "SubjectConfirmationData")
    if confirmation_data is not None:
        bearer_expiry = _instant(confirmation_data, "NotOnOrAfter", required=False)
        if bearer_expiry is not None and now >= bearer_expiry + skew:
            raise AssertionExpired("subject confirmation expired")

    audiences = [
        text_of(aud).strip()
        for restriction in child_elements(conditions, SAML_NS, "AudienceRestriction")
        for aud in child_elements(restriction, SAML_NS, "Audience")
    ]
    if config.sp_entity_id not in audiences:
        raise AudienceMismatch("assertion is not addressed to this SP")

    if response.hasAttribute("Destination") and response.getAttribute("Destination") != config.acs_url:
        raise DestinationMismatch("response destination is not this ACS")
    if confirmation_data is not None and confirmation_data.hasAttribute("Recipient"):
        if confirmation_data.getAttribute("Recipient") != config.acs_url:
            raise DestinationMismatch("subject confirmation recipient is not this ACS")

    in_response_to = confirmation_data.getAttribute("InResponseTo") if confirmation_data is not None else ""
    if tracker is None:
        raise TrackerMissing("no outstanding request for this browser")
    if tracker.expired(now):
        raise TrackerExpired("login request is older than the tracker lifetime")
    if not in_response_to or in_response_to != tracker.request_id:
        raise InResponseToMismatch("response does not answer the outstanding request")
    if response.hasAttribute("InResponseTo") and response.getAttribute("InResponseTo") != in_response_to:
        raise InResponseToMismatch("response and assertion disagree on InResponseTo")

    name_id = first_child(subject, SAML_NS, "NameID") if subject is not None else None
    email = text_of(name_id).strip() if name_id is not None else ""
    if not email:
        raise MissingSubject("assertion has no subject NameID")

    groups = None
    display_name = None
    for statement in child_elements(node, SAML_NS, "AttributeStatement"):
        for attribute in child_elements(statement, SAML_NS, "Attribute"):
            name = attribute.getAttribute("Name")
            values = [text_of(v) for v in child_elements(attribute, SAML_NS, "AttributeValue")]
            if name == config.groups_attribute:
                groups = tuple(values) if groups is None else groups + tuple(values)
            elif name in DISPLAY_NAME_ATTRIBUTES and values and display_name is None:
                display_name = values[0].strip() or None

    assertion_id = node.getAttribute("ID")
    if replay_cache is not None:
        replay_cache.consume(assertion_id, not_on_or_after + skew, now)

    return IdentityAssertion(
        subject_email=email,
        groups=groups,
        display_name=display_name,
        audience=config.sp_entity_id,
        in_response_to=in_response_to,
        not_before=not_before,
        not_on_or_after=not_on_or_after,
        assertion_id=assertion_id,
        issuer=issuer,
        _seal=_VALIDATED,
    )


def extract_user_info(assertion: IdentityAssertion) -> UserInfo:
    if not assertion.subject_email:
        raise MissingSubject("assertion has no subject")
    if assertion.groups is None:
        raise MissingGroupsClaim("groups attribute is absent")
    groups = tuple(dict.fromkeys(g for g in assertion.groups))
    if not groups:
        raise EmptyGroupsClaim("groups attribute carries no values")
    return UserInfo(email=assertion.subject_email, groups=groups, display_name=assertion.display_name)
