"""Builders shared by the unit tests: a shim config, a mock IdP and a way to
produce signed responses bound to a fresh tracker."""

import secrets
from datetime import datetime, timedelta, timezone

from authshim.config import ShimConfig
from authshim.mock_idp import FaultDirective, IdpDirectoryEntry, MockIdentityProvider
from authshim.saml import build_authn_request

SP = "urn:authshim"
IDP = "urn:mock-idp"
ACS = "http://shim.test/saml/acs"
T0 = datetime(2026, 3, 1, 12, 0, 0, tzinfo=timezone.utc)

ALICE = IdpDirectoryEntry("alice@example.com", "Alice", ["Okta: BI-Admins", "Okta: BI-Users"])


def make_config(certificate, **overrides) -> ShimConfig:
    values = dict(
        sp_entity_id=SP,
        acs_url=ACS,
        idp_sso_url="http://idp.test/sso",
        idp_entity_id=IDP,
        idp_certificate=certificate,
        cookie_signing_key=b"k" * 32,
        connector_base_url="http://app.test",
    )
    values.update(overrides)
    return ShimConfig(**values)


def make_idp(identity, users=(ALICE,)) -> MockIdentityProvider:
    key, cert = identity
    return MockIdentityProvider(IDP, key, cert, list(users))


def issue(config, idp, user=ALICE, fault=FaultDirective.NONE, now=T0, validity=None, relay="/", audience=SP):
    """Start a login at ``now`` and have the IdP answer it; returns (xml, tracker)."""
    _, tracker = build_authn_request(config, relay, now, rng=secrets.token_bytes)
    xml = idp.build_response(user, config.acs_url, audience, tracker.request_id, fault, now=now, validity=validity)
    return xml, tracker


def seconds(n) -> timedelta:
    return timedelta(seconds=n)


def assertion_span(xml: bytes) -> tuple[int, int]:
    start = xml.index(b"<saml:Assertion")
    end = xml.index(b"</saml:Assertion>") + len(b"</saml:Assertion>")
    return start, end


def signature_span(xml: bytes) -> tuple[int, int]:
    start = xml.index(b"<ds:Signature")
    end = xml.index(b"</ds:Signature>") + len(b"</ds:Signature>")
    return start, end


def content_positions(xml: bytes) -> list[int]:
    """Offsets of alphanumeric bytes that sit in text or attribute values of
    the signed assertion.

    The signature, entity references and namespace declarations are skipped:
    changing a namespace URI turns the element into something other than an
    assertion, which is a structural rejection rather than a content edit.
    """
    start, end = assertion_span(xml)
    sig_start, sig_end = signature_span(xml)
    positions = []
    in_tag = in_value = in_entity = False
    quote = None
    skip_value = False
    for i in range(start, end):
        c = xml[i:i + 1]
        if in_entity:
            in_entity = c != b";"
            continue
        if not in_tag:
            if c == b"<":
                in_tag = True
                continue
            if c == b"&":
                in_entity = True
                continue
        elif in_value:
            if c == quote:
                in_value = False
                continue
            if skip_value:
                continue
            if c == b"&":
                in_entity = True
                continue
        else:
            if c in (b'"', b"'"):
                in_value, quote = True, c
                name = xml[start:i].rstrip(b"= ").split()[-1]
                skip_value = name == b"xmlns" or name.startswith(b"xmlns:")
            elif c == b">":
                in_tag = False
            continue
        if c.isalnum() and not sig_start <= i < sig_end:
            positions.append(i)
    return positions


def mutate(xml: bytes, position: int, rng) -> bytes:
    alphabet = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    original = xml[position]
    replacement = rng.choice([b for b in alphabet if b != original])
    return xml[:position] + bytes([replacement]) + xml[position + 1:]


# --- random role mappings with an independent oracle -----------------------
# Patterns come from two families whose meaning is known without a regex
# engine: "<prefix>.*" (starts-with) and "(a|b|c)" (membership).

ROLE_POOL = ["r0", "r1", "r2", "r3", "r4", "r5"]
GROUP_POOL = ["G0", "G1", "G2", "G3", "G4", "G5", "AD: T-x", "AD: T-y", "AD: Ops", "Vendor"]


def random_mapping(rng):
    from authshim.rbac import RoleMappingConfig

    direct = [(rng.choice(GROUP_POOL), rng.choice(ROLE_POOL)) for _ in range(rng.randint(0, 6))]
    patterns, meaning = [], []
    for _ in range(rng.randint(0, 3)):
        role = rng.choice(ROLE_POOL)
        if rng.random() < 0.5:
            prefix = rng.choice(["AD: ", "AD: T-", "G", "V"])
            patterns.append((prefix + ".*", role))
            meaning.append((lambda g, p=prefix: g.startswith(p), role))
        else:
            members = rng.sample(GROUP_POOL[:6], rng.randint(1, 3))
            patterns.append(("(" + "|".join(members) + ")", role))
            meaning.append((lambda g, m=tuple(members): g in m, role))
    default = rng.choice([None] + ROLE_POOL)
    hierarchy = {}
    for i, parent in enumerate(ROLE_POOL):
        children = [c for c in ROLE_POOL[i + 1:] if rng.random() < 0.3]
        if children:
            hierarchy[parent] = tuple(children)
    config = RoleMappingConfig(tuple(direct), tuple(patterns), default, hierarchy)
    return config, (direct, meaning, default, hierarchy)


def oracle_desired(groups, described) -> set:
    direct, meaning, default, hierarchy = described
    mapped = set()
    for group in groups:
        exact = {role for g, role in direct if g == group}
        if exact:
            mapped |= exact
            continue
        for matches, role in meaning:
            if matches(group):
                mapped.add(role)
                break
    if not mapped and default is not None:
        mapped = {default}
    # closure by sweeping every edge until nothing changes
    closed = set(mapped)
    changed = True
    while changed:
        changed = False
        for parent, children in hierarchy.items():
            if parent in closed and not closed.issuperset(children):
                closed.update(children)
                changed = True
    return closed


def random_groups(rng) -> list:
    return rng.sample(GROUP_POOL, rng.randint(1, 4))
