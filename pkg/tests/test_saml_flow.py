import base64
import itertools
import zlib
from datetime import timedelta
from urllib.parse import parse_qs, urlsplit
from xml.etree import ElementTree

import pytest

from authshim.mock_idp import FaultDirective, IdpDirectoryEntry
from authshim.saml import (
    AssertionExpired,
    AssertionNotYetValid,
    AssertionReplayed,
    AudienceMismatch,
    DestinationMismatch,
    EmptyGroupsClaim,
    InResponseToMismatch,
    IssuerMismatch,
    MissingGroupsClaim,
    RelayStateTooLong,
    ReplayCache,
    RequestTracker,
    TrackerExpired,
    TrackerMissing,
    build_authn_request,
    extract_user_info,
    parse_response,
    validate_conditions,
    verify_signature,
)
from authshim.saml.assertion import IdentityAssertion, check_validity_window
from authshim.saml.errors import AssertionLifetimeExceeded
from authshim.saml.request import decode_redirect_request

from support import ALICE, SP, T0, issue, make_config, make_idp, seconds

SAMLP = "{urn:oasis:names:tc:SAML:2.0:protocol}"
SAML = "{urn:oasis:names:tc:SAML:2.0:assertion}"


@pytest.fixture(scope="module")
def config(idp_identity):
    return make_config(idp_identity[1])


@pytest.fixture(scope="module")
def idp(idp_identity):
    return make_idp(idp_identity, users=[
        ALICE,
        IdpDirectoryEntry("dup@example.com", "Dup", ["A", "A", "B"]),
    ])


def run(config, xml, tracker, now=T0, cache=None):
    verified = verify_signature(parse_response(xml), config.idp_certificate)
    return validate_conditions(verified, config, tracker, now, cache)


# --- AuthnRequest ----------------------------------------------------------

def _decode_independently(redirect_url):
    query = parse_qs(urlsplit(redirect_url).query)
    raw = zlib.decompress(base64.b64decode(query["SAMLRequest"][0]), -15)
    return ElementTree.fromstring(raw), query


def test_redirect_decodes_to_matching_request(config):
    message, tracker = build_authn_request(config, "/dashboards/7", T0)
    root, query = _decode_independently(message.redirect_url)
    assert root.tag == SAMLP + "AuthnRequest"
    assert root.get("ID") == message.request_id == tracker.request_id
    assert root.get("AssertionConsumerServiceURL") == config.acs_url
    assert root.get("Destination") == config.idp_sso_url
    assert root.find(SAML + "Issuer").text == config.sp_entity_id
    assert query["RelayState"] == ["/dashboards/7"]
    assert urlsplit(message.redirect_url).netloc == urlsplit(config.idp_sso_url).netloc
    assert tracker.relay_state == "/dashboards/7"
    assert decode_redirect_request(query["SAMLRequest"][0]) == message.xml


def test_request_ids_are_random(config):
    ids = {build_authn_request(config, "/", T0)[0].request_id for _ in range(50)}
    assert len(ids) == 50
    fixed = build_authn_request(config, "/", T0, rng=lambda n: b"\x01" * n)[0].request_id
    assert fixed == "_" + "01" * 20


def test_relay_state_limit(config):
    build_authn_request(config, "/" + "a" * 2047, T0)
    with pytest.raises(RelayStateTooLong):
        build_authn_request(config, "/" + "a" * 2048, T0)


def test_tracker_round_trip_and_tamper(config):
    _, tracker = build_authn_request(config, "/r?x=1", T0)
    key = config.cookie_signing_key
    restored = RequestTracker.deserialize(tracker.serialize(), key)
    assert restored == tracker
    assert RequestTracker.deserialize(tracker.serialize(), b"z" * 32) is None
    value = tracker.serialize()
    flipped = value[:-2] + ("A" if value[-2] != "A" else "B") + value[-1]
    assert RequestTracker.deserialize(flipped, key) is None
    for junk in (None, "", ".", "a.b.c", "!!!.???"):
        assert RequestTracker.deserialize(junk, key) is None


def test_tracker_expiry_boundary(config):
    _, tracker = build_authn_request(config, "/", T0)
    assert not tracker.expired(T0 + seconds(300))
    assert tracker.expired(T0 + seconds(301))


# --- conditions ------------------------------------------------------------

def test_happy_path_extracts_user(config, idp):
    xml, tracker = issue(config, idp)
    identity = run(config, xml, tracker)
    info = extract_user_info(identity)
    assert info.email == "alice@example.com"
    assert info.groups == ("Okta: BI-Admins", "Okta: BI-Users")
    assert info.display_name == "Alice"
    assert identity.audience == SP and identity.in_response_to == tracker.request_id


def test_duplicate_groups_removed_in_order(config, idp):
    xml, tracker = issue(config, idp, user=idp.directory["dup@example.com"])
    assert extract_user_info(run(config, xml, tracker)).groups == ("A", "B")


@pytest.mark.parametrize("fault,error", [
    (FaultDirective.EXPIRED, AssertionExpired),
    (FaultDirective.NOT_YET_VALID, AssertionNotYetValid),
    (FaultDirective.WRONG_AUDIENCE, AudienceMismatch),
    (FaultDirective.WRONG_ISSUER, IssuerMismatch),
    (FaultDirective.UNSOLICITED_RESPONSE, InResponseToMismatch),
])
def test_faults_rejected_by_conditions(config, idp, fault, error):
    xml, tracker = issue(config, idp, fault=fault)
    with pytest.raises(error):
        run(config, xml, tracker)


@pytest.mark.parametrize("fault,error", [
    (FaultDirective.OMIT_GROUPS, MissingGroupsClaim),
    (FaultDirective.EMPTY_GROUPS, EmptyGroupsClaim),
])
def test_group_claim_faults_fail_closed(config, idp, fault, error):
    xml, tracker = issue(config, idp, fault=fault)
    with pytest.raises(error) as caught:
        extract_user_info(run(config, xml, tracker))
    assert isinstance(caught.value, MissingGroupsClaim)


def test_expired_by_ten_minutes(config, idp):
    xml, tracker = issue(config, idp, validity=(T0 - timedelta(minutes=20), T0 - timedelta(minutes=10)))
    with pytest.raises(AssertionExpired):
        run(config, xml, tracker)


def test_missing_tracker(config, idp):
    xml, _ = issue(config, idp)
    with pytest.raises(TrackerMissing):
        run(config, xml, None)


def test_expired_tracker(config, idp):
    xml, tracker = issue(config, idp, validity=(T0, T0 + timedelta(minutes=30)))
    with pytest.raises(TrackerExpired):
        run(config, xml, tracker, now=T0 + seconds(301))


def test_tracker_for_another_request(config, idp):
    xml, _ = issue(config, idp)
    _, other = build_authn_request(config, "/", T0)
    with pytest.raises(InResponseToMismatch):
        run(config, xml, other)


def test_destination_must_be_this_acs(config, idp):
    _, tracker = build_authn_request(config, "/", T0)
    xml = idp.build_response(ALICE, "http://elsewhere.test/acs", SP, tracker.request_id, now=T0)
    with pytest.raises(DestinationMismatch):
        run(config, xml, tracker)


def test_overlong_validity_window(config, idp):
    xml, tracker = issue(config, idp, validity=(T0 - seconds(10), T0 + seconds(3600)))
    with pytest.raises(AssertionLifetimeExceeded):
        run(config, xml, tracker)


def test_replay_cache_rejects_second_use(config, idp):
    xml, tracker = issue(config, idp)
    cache = ReplayCache(capacity=2)
    run(config, xml, tracker, cache=cache)
    with pytest.raises(AssertionReplayed):
        run(config, xml, tracker, cache=cache)


def test_replay_cache_is_bounded_and_expires():
    cache = ReplayCache(capacity=3)
    for i in range(5):
        cache.consume("id%d" % i, T0 + seconds(10), T0)
    assert len(cache) == 3
    cache.consume("id0", T0 + seconds(10), T0)  # evicted earlier, accepted again
    cache.consume("late", T0 + seconds(100), T0 + seconds(20))
    assert len(cache) == 1


def test_identity_assertion_cannot_be_built_directly():
    with pytest.raises(TypeError):
        IdentityAssertion("a@b", ("g",), None, SP, "_x", T0, T0 + seconds(1), "_a", "urn:mock-idp")


def test_window_rule_exhaustive_small_grid():
    for nb, noa, now, skew in itertools.product(range(0, 6), range(0, 7), range(-4, 11), range(0, 4)):
        if nb >= noa:
            continue
        expected = nb - skew <= now < noa + skew
        try:
            check_validity_window(T0 + seconds(nb), T0 + seconds(noa), T0 + seconds(now), seconds(skew))
            accepted = True
        except (AssertionExpired, AssertionNotYetValid):
            accepted = False
        assert accepted == expected, (nb, noa, now, skew)
